"""Multiview surrogate registration: maps transformed scans to per-scan residual transforms.

A surrogate is any object with an ``estimate(scans_t, current, scene, t=None,
rng=None)`` method returning a :class:`SurrogateOutput`. Residuals act in the
world frame, i.e. ``residual[i] @ current[i]`` is the surrogate's estimate of
scan i's optimal pose.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .lie import PoseSet, RigidTransform

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SurrogateOutput:
    residuals: PoseSet
    failures: tuple = ()  # (scan index, message) for scans replaced by identity


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Per scan: local point indices, matched world ids and non-negative weights."""

    local_index: list
    world_id: list
    weights: list = field(default=None)

    @classmethod
    def from_ids(cls, scans):
        """Identity-based correspondences from persistent point ids."""
        local = [np.arange(len(s)) for s in scans]
        ids = [s.ids.copy() for s in scans]
        return cls(local, ids, [np.ones(len(s)) for s in scans])


def kabsch_align(P, Q, w=None):
    """Weighted least-squares rigid transform taking points ``P`` onto ``Q``."""
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    Q = np.asarray(Q, dtype=float).reshape(-1, 3)
    if P.shape != Q.shape:
        raise InvalidArgumentError(f"point sets differ in shape: {P.shape} vs {Q.shape}")
    if len(P) < 3:
        raise DegenerateInputError(f"need at least 3 pairs, got {len(P)}")
    w = np.ones(len(P)) if w is None else np.asarray(w, dtype=float).reshape(-1)
    if len(w) != len(P) or np.any(w < 0) or w.sum() <= 0:
        raise InvalidArgumentError("weights must be non-negative with positive sum")
    w = w / w.sum()
    p_bar = w @ P
    q_bar = w @ Q
    H = (w[:, None] * (P - p_bar)).T @ (Q - q_bar)
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= 1e-10:
        raise DegenerateInputError(f"collinear or coincident points (singular values {S})")
    V = Vt.T
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(V @ U.T))])
    R = V @ D @ U.T
    return RigidTransform(R, q_bar - R @ p_bar)


def oracle_estimate(gt, current, noise_scale=0.0, rng=None):
    """Exact residuals ``gt[i] current[i]^-1``, optionally perturbed by a Gaussian twist."""
    if len(gt) != len(current):
        raise InvalidArgumentError("gt and current pose sets differ in length")
    residuals = gt.compose(current.inverse())
    if noise_scale > 0:
        noise = PoseSet.exp(noise_scale * rng.standard_normal((len(gt), 6)))
        residuals = noise.compose(residuals)
    return SurrogateOutput(residuals)


def kabsch_surrogate_estimate(scans_t, corr, world, on_degenerate="identity"):
    """Register every transformed scan to the world table by weighted Procrustes.

    ``world`` is a :class:`~posediff.geometry.Scene` (anything with
    ``world_lookup``). Degenerate scans get an identity residual and a
    failure record, or raise when ``on_degenerate="raise"``.
    """
    R = np.empty((len(scans_t), 3, 3))
    t = np.empty((len(scans_t), 3))
    failures = []
    for i, scan in enumerate(scans_t):
        idx = np.asarray(corr.local_index[i])
        w = None if corr.weights is None else corr.weights[i]
        try:
            if np.any(idx < 0) or np.any(idx >= len(scan)):
                raise InvalidArgumentError("correspondence index out of range")
            T = kabsch_align(scan.points[idx], world.world_lookup(corr.world_id[i]), w)
        except (DegenerateInputError, InvalidArgumentError) as exc:
            if on_degenerate == "raise":
                exc.scan = i
                raise
            log.warning("scan %d: %s; using identity residual", i, exc)
            failures.append((i, str(exc)))
            T = RigidTransform.identity()
        R[i], t[i] = T.R, T.t
    return SurrogateOutput(PoseSet(R, t), tuple(failures))


class OracleSurrogate:
    """Ground-truth residuals with optional twist noise; reads ``scene.gt``."""

    def __init__(self, noise_scale=0.0):
        self.noise_scale = noise_scale

    def estimate(self, scans_t, current, scene, t=None, rng=None):
        return oracle_estimate(scene.gt, current, self.noise_scale, rng)


class KabschSurrogate:
    """Closed-form per-scan Procrustes against the world point table."""

    def __init__(self, on_degenerate="identity"):
        self.on_degenerate = on_degenerate

    def estimate(self, scans_t, current, scene, t=None, rng=None):
        corr = Correspondences.from_ids(scans_t)
        return kabsch_surrogate_estimate(scans_t, corr, scene, self.on_degenerate)


def make_surrogate(kind, noise_scale=0.0):
    if kind == "oracle":
        return OracleSurrogate(noise_scale)
    if kind == "kabsch":
        return KabschSurrogate()
    raise InvalidArgumentError(f"unknown surrogate kind {kind!r}")
