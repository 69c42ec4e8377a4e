"""Forward-only alternating attention over superpoint tokens and a pose-regression head.

Layers alternate between intra-scan self-attention (each scan attends only
to its own tokens) and cross-scan attention over the concatenation of every
scan's tokens. No reference tokens or scan-order embeddings are used, so the
stack is equivariant to scan permutations. Weights are seeded random; there
is no training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .geometry import sinusoidal_encode, voxel_downsample_hierarchy
from .lie import PoseSet, project_to_so3

LN_EPS = 1e-5


@dataclass(frozen=True)
class AAConfig:
    n_layers: int = 4
    n_heads: int = 4
    dim: int = 96
    n_refine: int = 2
    in_features: int = 6
    seed: int = 0

    @property
    def head_dim(self):
        return self.dim // self.n_heads

    def validate(self):
        if self.n_layers < 0 or self.n_layers % 2:
            raise InvalidArgumentError(f"layer count must be even, got {self.n_layers}")
        if self.dim % self.n_heads:
            raise InvalidArgumentError(f"dim {self.dim} not divisible by {self.n_heads} heads")


@dataclass(frozen=True, eq=False)
class BlockWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    g1: np.ndarray
    g2: np.ndarray


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    embed: np.ndarray  # in_features x d
    layers: tuple  # alternating intra, cross
    refine: tuple
    trans_head: tuple  # (d x d, d x 3)
    rot_head: tuple  # (d x d, d x 9)


def _block(rng, d, scale):
    def mat(*shape):
        return rng.normal(0.0, scale, shape)

    return BlockWeights(mat(d, d), mat(d, d), mat(d, d), mat(d, d), mat(d, 4 * d), mat(4 * d, d),
                        np.ones(d), np.ones(d))


def init_weights(cfg=AAConfig()):
    """Deterministic weights: normal entries with stdev 1/sqrt(d)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dim
    scale = 1.0 / np.sqrt(d)
    embed = rng.normal(0.0, 1.0 / np.sqrt(cfg.in_features), (cfg.in_features, d))
    layers = tuple(_block(rng, d, scale) for _ in range(cfg.n_layers))
    refine = tuple(_block(rng, d, scale) for _ in range(cfg.n_refine))
    trans_head = (rng.normal(0.0, scale, (d, d)), rng.normal(0.0, scale, (d, 3)))
    rot_head = (rng.normal(0.0, scale, (d, d)), rng.normal(0.0, scale, (d, 9)))
    return AttentionWeights(embed, layers, refine, trans_head, rot_head)


@dataclass(frozen=True, eq=False)
class TokenSet:
    """Flat token features with scan boundaries ``offsets`` (length N + 1)."""

    features: np.ndarray
    offsets: np.ndarray
    coords: np.ndarray = None

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=int)
        if offsets[0] != 0 or offsets[-1] != len(self.features) or np.any(np.diff(offsets) < 0):
            raise InvalidArgumentError("scan boundaries do not partition the token array")
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_scans(cls, per_scan, coords=None):
        offsets = np.concatenate([[0], np.cumsum([len(f) for f in per_scan])])
        c = None if coords is None else np.concatenate(coords)
        return cls(np.concatenate(per_scan), offsets, c)

    @property
    def n_scans(self):
        return len(self.offsets) - 1

    @property
    def dim(self):
        return self.features.shape[1]

    def scan(self, i):
        return self.features[self.offsets[i]:self.offsets[i + 1]]

    def scans(self):
        return [self.scan(i) for i in range(self.n_scans)]

    def with_features(self, features):
        return TokenSet(features, self.offsets, self.coords)

    def permute(self, perm):
        coords = None
        if self.coords is not None:
            coords = [self.coords[self.offsets[i]:self.offsets[i + 1]] for i in perm]
        return TokenSet.from_scans([self.scan(i) for i in perm], coords)


def layer_norm(x, gain):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def attention_probs(x, w, n_heads):
    """Per-head softmax attention matrices, shape (heads, M, M)."""
    M, d = x.shape
    hd = d // n_heads
    q = (x @ w.wq).reshape(M, n_heads, hd).transpose(1, 0, 2)
    k = (x @ w.wk).reshape(M, n_heads, hd).transpose(1, 0, 2)
    return softmax(q @ k.transpose(0, 2, 1) / np.sqrt(hd))


def multi_head_attention(x, w, n_heads):
    M, d = x.shape
    hd = d // n_heads
    probs = attention_probs(x, w, n_heads)
    v = (x @ w.wv).reshape(M, n_heads, hd).transpose(1, 0, 2)
    out = (probs @ v).transpose(1, 0, 2).reshape(M, d)
    return out @ w.wo


def transformer_block(x, w, n_heads):
    """Pre-norm block: attention and feed-forward, each with a residual add."""
    if x.shape[1] != w.wq.shape[0]:
        raise InvalidArgumentError(f"token dim {x.shape[1]} does not match weights {w.wq.shape[0]}")
    x = x + multi_head_attention(layer_norm(x, w.g1), w, n_heads)
    return x + gelu(layer_norm(x, w.g2) @ w.w1) @ w.w2


def intra_scan_block(tokens, w, n_heads):
    out = [transformer_block(f, w, n_heads) if len(f) else f for f in tokens.scans()]
    return tokens.with_features(np.concatenate(out))


def cross_scan_block(tokens, w, n_heads):
    return tokens.with_features(transformer_block(tokens.features, w, n_heads))


def alternating_attention(tokens, w, cfg=AAConfig()):
    """Apply ``cfg.n_layers`` blocks alternating intra-scan and cross-scan attention."""
    cfg.validate()
    if tokens.dim != cfg.dim:
        raise InvalidArgumentError(f"tokens have dim {tokens.dim}, config expects {cfg.dim}")
    if len(w.layers) < cfg.n_layers:
        raise InvalidArgumentError(f"weights hold {len(w.layers)} layers, config asks for {cfg.n_layers}")
    for layer in range(cfg.n_layers):
        block = intra_scan_block if layer % 2 == 0 else cross_scan_block
        try:
            tokens = block(tokens, w.layers[layer], cfg.n_heads)
        except InvalidArgumentError as exc:
            raise InvalidArgumentError(f"layer {layer}: {exc}") from exc
    return tokens


def _mlp(x, head):
    return np.maximum(x @ head[0], 0.0) @ head[1]


def regress_poses(tokens, w, cfg=AAConfig()):
    """Per scan: refinement self-attention, mean pooling, translation and 9D rotation heads."""
    R = np.empty((tokens.n_scans, 3, 3))
    t = np.empty((tokens.n_scans, 3))
    for i, f in enumerate(tokens.scans()):
        if len(f) == 0:
            raise InvalidArgumentError(f"scan {i} has no tokens")
        for blk in w.refine:
            f = transformer_block(f, blk, cfg.n_heads)
        desc = f.mean(axis=0)
        t[i] = _mlp(desc, w.trans_head)
        try:
            R[i] = project_to_so3(_mlp(desc, w.rot_head).reshape(3, 3))
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"scan {i}: {exc}") from exc
    return PoseSet(R, t)


def build_tokens(clouds, w, cfg=AAConfig(), base_voxel=0.2, levels=5):
    """Coarsest-level superpoints of each cloud, embedded and summed with coordinate encodings."""
    per_scan, coords = [], []
    for cloud in clouds:
        sp = voxel_downsample_hierarchy(cloud, base_voxel, levels)
        c = sp.centroids[-1]
        per_scan.append(sp.features(-1) @ w.embed + sinusoidal_encode(c, cfg.dim))
        coords.append(c)
    return TokenSet.from_scans(per_scan, coords)


def predict_poses(clouds, w=None, cfg=AAConfig(), base_voxel=0.2, levels=5):
    """Full forward pass: tokens -> alternating attention -> per-scan poses."""
    w = init_weights(cfg) if w is None else w
    tokens = build_tokens(clouds, w, cfg, base_voxel, levels)
    return regress_poses(alternating_attention(tokens, w, cfg), w, cfg)
