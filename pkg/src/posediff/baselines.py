"""Pairwise registration followed by pose synchronization.

Two classical baselines over a pose graph whose edges hold relative poses
``T_{i<-j} = T_i^-1 T_j``:

* :func:`synchronize` -- spectral rotation synchronization, then linear
  least squares for translations;
* :func:`chain_init` -- composition along a breadth-first spanning tree.

Both fix the gauge so that pose 0 is the identity.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, GraphError, InvalidArgumentError, NumericalError
from .lie import PoseSet, RigidTransform, project_to_so3, random_rotations
from .surrogate import kabsch_align


@dataclass(frozen=True, eq=False)
class Edge:
    i: int
    j: int
    T: RigidTransform  # T_{i<-j}: maps scan j's frame into scan i's
    weight: float = 1.0


@dataclass(eq=False)
class PoseGraph:
    n: int
    edges: list = field(default_factory=list)

    def adjacency(self):
        adj = [[] for _ in range(self.n)]
        for e in self.edges:
            adj[e.i].append(e.j)
            adj[e.j].append(e.i)
        return adj

    def is_connected(self):
        return len(_bfs_order(self)[0]) == self.n

    @classmethod
    def from_poses(cls, poses, pairs=None, weight=1.0):
        """Exact graph with ``T_{i<-j}`` taken from known poses (all i < j by default)."""
        n = len(poses)
        if pairs is None:
            pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        edges = [Edge(i, j, poses[i].inverse() @ poses[j], weight) for i, j in pairs]
        return cls(n, edges)


def _bfs_order(g):
    """Visit order from scan 0 and, per reached scan, the edge used to reach it."""
    nbrs = [[] for _ in range(g.n)]
    for e in g.edges:
        nbrs[e.i].append((e.j, e, False))
        nbrs[e.j].append((e.i, e, True))
    for lst in nbrs:
        lst.sort(key=lambda x: x[0])
    parent = {0: None}
    order = [0]
    queue = deque([0])
    while queue:
        a = queue.popleft()
        for b, e, reverse in nbrs[a]:
            if b not in parent:
                parent[b] = (a, e, reverse)
                order.append(b)
                queue.append(b)
    return order, parent


def build_pairwise_graph(scene, mode="full", noise_scale=0.0, outlier_rate=0.0, rng=None,
                         weighting="overlap", min_shared=3):
    """Estimate ``T_{i<-j}`` for selected pairs by Procrustes on shared point ids.

    ``mode="full"`` tries every pair; ``mode="overlap"`` keeps pairs whose
    overlap ratio reaches the scene threshold. Pairs with fewer than
    ``min_shared`` shared points or degenerate geometry are skipped.
    Estimates are perturbed by ``Exp(noise_scale * eps)`` and, with
    probability ``outlier_rate``, replaced by a random pose in the room.
    """
    if mode not in ("full", "overlap"):
        raise InvalidArgumentError(f"unknown graph mode {mode!r}")
    if (noise_scale > 0 or outlier_rate > 0) and rng is None:
        raise InvalidArgumentError("an rng is required for noisy graphs")
    n = scene.n_scans
    threshold = scene.config.overlap_threshold
    room = np.asarray(scene.config.room, dtype=float)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            ov = scene.overlap[i, j]
            if mode == "overlap" and max(ov, scene.overlap[j, i]) < threshold:
                continue
            _, ia, ja = np.intersect1d(scene.scans[i].ids, scene.scans[j].ids, return_indices=True)
            if len(ia) < min_shared:
                continue
            try:
                T = kabsch_align(scene.scans[j].points[ja], scene.scans[i].points[ia])
            except DegenerateInputError:
                continue
            if noise_scale > 0:
                T = RigidTransform.exp(noise_scale * rng.standard_normal(6)) @ T
            if outlier_rate > 0 and rng.random() < outlier_rate:
                T = RigidTransform(random_rotations(rng), rng.uniform(-room / 2, room / 2))
            w = 1.0 if weighting == "uniform" else float(ov)
            edges.append(Edge(i, j, T, w))
    g = PoseGraph(n, edges)
    if not g.is_connected():
        raise GraphError(f"pose graph over {n} scans is disconnected ({len(edges)} edges)")
    return g


def _top_subspace(M, dim, max_iter, tol, seed=0):
    X = np.linalg.qr(np.random.default_rng(seed).standard_normal((M.shape[0], dim)))[0]
    for _ in range(max_iter):
        Y, _ = np.linalg.qr(M @ X)
        # distance between subspaces via projector difference
        if np.linalg.norm(Y - X @ (X.T @ Y)) < tol:
            return Y
        X = Y
    residual = np.linalg.norm(M @ X - X @ (X.T @ M @ X))
    raise NumericalError(f"subspace iteration did not converge in {max_iter} iterations", residual)


def synchronize(g, max_iter=10_000, tol=1e-13):
    """Spectral rotation synchronization plus anchored least-squares translations."""
    n = g.n
    if not g.is_connected():
        raise GraphError("cannot synchronize a disconnected graph")
    M = np.zeros((3 * n, 3 * n))
    degree = np.zeros(n)
    for e in sorted(g.edges, key=lambda e: (e.i, e.j)):
        M[3 * e.i:3 * e.i + 3, 3 * e.j:3 * e.j + 3] += e.weight * e.T.R
        M[3 * e.j:3 * e.j + 3, 3 * e.i:3 * e.i + 3] += e.weight * e.T.R.T
        degree[e.i] += e.weight
        degree[e.j] += e.weight
    # degree on the diagonal keeps M positive semidefinite
    M += np.kron(np.diag(degree), np.eye(3))

    X = _top_subspace(M, 3, max_iter, tol)
    blocks = X.reshape(n, 3, 3)
    if np.sum(np.linalg.det(blocks)) < 0:
        blocks = blocks * np.array([1.0, 1.0, -1.0])
    Rt = project_to_so3(blocks)  # R_i^T up to a common right factor
    R = np.swapaxes(Rt, -1, -2)
    R = R[0].T @ R
    R[0] = np.eye(3)

    rows, rhs, wts = [], [], []
    for e in sorted(g.edges, key=lambda e: (e.i, e.j)):
        # t_j - t_i = R_i t_{i<-j}
        rows.append((e.i, e.j))
        rhs.append(R[e.i] @ e.T.t)
        wts.append(np.sqrt(e.weight))
    A = np.zeros((3 * len(rows), 3 * (n - 1)))
    b = np.zeros(3 * len(rows))
    for k, ((i, j), r, w) in enumerate(zip(rows, rhs, wts)):
        if j > 0:
            A[3 * k:3 * k + 3, 3 * (j - 1):3 * j] += w * np.eye(3)
        if i > 0:
            A[3 * k:3 * k + 3, 3 * (i - 1):3 * i] -= w * np.eye(3)
        b[3 * k:3 * k + 3] = w * r
    sol = np.linalg.lstsq(A, b, rcond=None)[0] if n > 1 else np.zeros(0)
    t = np.vstack([np.zeros(3), sol.reshape(n - 1, 3)])
    return PoseSet(R, t)


def chain_init(g):
    """Compose edge transforms along a BFS spanning tree rooted at scan 0."""
    order, parent = _bfs_order(g)
    if len(order) != g.n:
        raise GraphError(f"graph reaches only {len(order)} of {g.n} scans")
    poses = [None] * g.n
    poses[0] = RigidTransform.identity()
    for b in order[1:]:
        a, e, reverse = parent[b]
        # forward edge stores T_{a<-b}; a reversed edge stores T_{b<-a}
        rel = e.T.inverse() if reverse else e.T
        poses[b] = poses[a] @ rel
    return PoseSet.from_transforms(poses)
