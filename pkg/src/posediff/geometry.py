"""Synthetic multiview scenes, voxel superpoints and coordinate encodings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError, InvalidArgumentError
from .lie import PoseSet, random_rotations


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if len(pts) != len(ids):
            raise InvalidArgumentError(f"{len(pts)} points but {len(ids)} ids")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class SceneConfig:
    n_scans: int = 10
    n_world_points: int = 6000
    room: tuple = (8.0, 6.0, 3.0)
    n_boxes: int = 3
    view_radius: float = 3.0
    point_noise: float = 0.01
    overlap_threshold: float = 0.1
    min_points: int = 10
    max_retries: int = 100
    seed: int = 0

    def validate(self):
        if not 2 <= self.n_scans <= 50:
            raise InvalidArgumentError(f"n_scans must lie in 2..50, got {self.n_scans}")
        if self.n_world_points < 1 or self.view_radius <= 0 or min(self.room) <= 0:
            raise InvalidArgumentError("scene sizes must be positive")
        if self.point_noise < 0 or not 0 <= self.overlap_threshold <= 1:
            raise InvalidArgumentError("invalid noise or overlap threshold")


@dataclass(eq=False)
class Scene:
    """N scans in their local frames, ground-truth world poses and the world cloud."""

    scans: list
    gt: PoseSet
    world: PointCloud
    config: SceneConfig = field(default_factory=SceneConfig)
    overlap: np.ndarray = None

    def __post_init__(self):
        if len(self.scans) != len(self.gt):
            raise InvalidArgumentError("scan count does not match pose count")
        if self.overlap is None:
            self.overlap = overlap_matrix(self.scans)

    @property
    def n_scans(self):
        return len(self.scans)

    def world_lookup(self, ids):
        """World coordinates of the given point ids."""
        order = np.argsort(self.world.ids, kind="stable")
        pos = np.searchsorted(self.world.ids, ids, sorter=order)
        pos = np.clip(pos, 0, len(order) - 1)
        rows = order[pos]
        if np.any(self.world.ids[rows] != ids):
            raise InvalidArgumentError("point id missing from the world table")
        return self.world.points[rows]


def overlap_matrix(scans):
    """``O[i, j]`` is the fraction of scan i's ids also seen by scan j."""
    all_ids = np.unique(np.concatenate([s.ids for s in scans]))
    member = np.zeros((len(scans), len(all_ids)))
    for i, s in enumerate(scans):
        member[i, np.searchsorted(all_ids, s.ids)] = 1.0
    shared = member @ member.T
    sizes = np.maximum(member.sum(axis=1), 1.0)
    return shared / sizes[:, None]


def overlap_ratio(scene, i, j):
    ids_i = scene.scans[i].ids
    if len(ids_i) == 0:
        return 0.0
    return float(np.isin(ids_i, scene.scans[j].ids).sum()) / len(ids_i)


def overlap_graph_connected(overlap, threshold):
    adj = np.maximum(overlap, overlap.T) >= threshold
    n = len(adj)
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            for j in np.flatnonzero(adj[i] & ~seen):
                seen[j] = True
                nxt.append(j)
        frontier = nxt
    return bool(seen.all())


def _box_surface_points(rng, lo, hi, n):
    ext = hi - lo
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]])
    face = rng.choice(6, size=n, p=np.repeat(areas, 2) / (2 * areas.sum()))
    pts = lo + rng.random((n, 3)) * ext
    axis = face // 2
    side = face % 2
    rows = np.arange(n)
    pts[rows, axis] = np.where(side == 0, lo[axis], hi[axis])
    return pts


def _world_points(cfg, rng):
    room = np.asarray(cfg.room, dtype=float)
    lo, hi = -room / 2, room / 2
    boxes = [(lo, hi)]
    for _ in range(cfg.n_boxes):
        size = rng.uniform(0.4, 1.2, 3) * np.minimum(room / 3, 1.5)
        corner = rng.uniform(lo, hi - size)
        corner[2] = lo[2]  # furniture rests on the floor
        boxes.append((corner, corner + size))
    areas = np.array([
        2 * ((h - l)[0] * (h - l)[1] + (h - l)[0] * (h - l)[2] + (h - l)[1] * (h - l)[2]) for l, h in boxes
    ])
    counts = np.floor(cfg.n_world_points * areas / areas.sum()).astype(int)
    counts[0] += cfg.n_world_points - counts.sum()
    return np.concatenate([_box_surface_points(rng, l, h, c) for (l, h), c in zip(boxes, counts)])


def generate_scene(cfg: SceneConfig, rng=None) -> Scene:
    """Sample a room, N cameras and the radius-limited scans they observe.

    Cameras are resampled until every scan sees at least ``cfg.min_points``
    points and the overlap graph is connected.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    world_pts = _world_points(cfg, rng)
    world = PointCloud(world_pts, np.arange(len(world_pts)))
    room = np.asarray(cfg.room, dtype=float)
    margin = np.minimum(0.5, room / 4)

    for _ in range(cfg.max_retries):
        R = random_rotations(rng, cfg.n_scans)
        centers = rng.uniform(-room / 2 + margin, room / 2 - margin, (cfg.n_scans, 3))
        gt = PoseSet(R, centers)
        scans = []
        ok = True
        for i in range(cfg.n_scans):
            visible = np.flatnonzero(np.linalg.norm(world_pts - centers[i], axis=1) <= cfg.view_radius)
            if len(visible) < cfg.min_points:
                ok = False
                break
            local = (world_pts[visible] - centers[i]) @ R[i]
            local += cfg.point_noise * rng.standard_normal(local.shape)
            scans.append(PointCloud(local, visible))
        if not ok:
            continue
        overlap = overlap_matrix(scans)
        if overlap_graph_connected(overlap, cfg.overlap_threshold):
            return Scene(scans, gt, world, cfg, overlap)
    raise GenerationError(
        f"no connected overlap graph after {cfg.max_retries} attempts; increase view_radius"
    )


def transform_scene(scene, poses):
    """Apply pose i to every point of scan i (ids preserved)."""
    if len(poses) != scene.n_scans:
        raise InvalidArgumentError(f"{len(poses)} poses for {scene.n_scans} scans")
    return [
        PointCloud(s.points @ poses.R[i].T + poses.t[i], s.ids) for i, s in enumerate(scene.scans)
    ]


@dataclass(frozen=True, eq=False)
class SuperpointSet:
    """Voxel-pooled superpoints at each level of a stride-2 hierarchy.

    ``assign[l][k]`` is the level-``l`` superpoint owning input point ``k``.
    """

    points: np.ndarray
    base_voxel: float
    centroids: list
    assign: list

    @property
    def levels(self):
        return len(self.centroids)

    def counts(self):
        return [len(c) for c in self.centroids]

    def members(self, level, k):
        return np.flatnonzero(self.assign[level] == k)

    def covariance_eigenvalues(self, level=-1):
        """Ascending covariance eigenvalues of the member points of each superpoint."""
        labels = self.assign[level]
        n = len(self.centroids[level])
        counts = np.bincount(labels, minlength=n).astype(float)
        mean = np.zeros((n, 3))
        np.add.at(mean, labels, self.points)
        mean /= counts[:, None]
        diff = self.points - mean[labels]
        cov = np.zeros((n, 3, 3))
        np.add.at(cov, labels, diff[:, :, None] * diff[:, None, :])
        cov /= counts[:, None, None]
        return np.linalg.eigvalsh(cov)

    def features(self, level=-1):
        """Centroid coordinates augmented with covariance eigenvalues (6 channels)."""
        return np.hstack([self.centroids[level], self.covariance_eigenvalues(level)])


def _pool(coords, cell):
    keys = np.floor(coords / cell).astype(np.int64)
    _, labels = np.unique(keys, axis=0, return_inverse=True)
    labels = labels.reshape(-1)
    n = labels.max() + 1
    sums = np.zeros((n, 3))
    np.add.at(sums, labels, coords)
    return sums / np.bincount(labels, minlength=n)[:, None], labels


def voxel_downsample_hierarchy(cloud, base_voxel=0.2, levels=5):
    """Centroid pooling over cells of side ``base_voxel * 2**l`` for l = 0..levels-1.

    Level 0 pools the input points; each later level pools the previous
    level's centroids, so provenance composes through the hierarchy.
    """
    if base_voxel <= 0:
        raise InvalidArgumentError(f"voxel size must be positive, got {base_voxel}")
    if levels < 1:
        raise InvalidArgumentError(f"need at least one level, got {levels}")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise InvalidArgumentError("cannot pool an empty cloud")
    cents, labels = _pool(pts, base_voxel)
    centroids, assign = [cents], [labels]
    for level in range(1, levels):
        cents, parent = _pool(centroids[-1], base_voxel * 2**level)
        centroids.append(cents)
        assign.append(parent[assign[-1]])
    return SuperpointSet(pts, base_voxel, centroids, assign)


OMEGA_MIN = 2 * np.pi / 20.0
OMEGA_MAX = 2 * np.pi / 0.05


def sinusoidal_encode(coords, d, omega_min=OMEGA_MIN, omega_max=OMEGA_MAX):
    """Per-axis sine/cosine features at geometrically spaced frequencies.

    Output layout is ``[sin_x, cos_x, sin_y, cos_y, sin_z, cos_z]`` with
    ``d // 6`` channels in each group.
    """
    if d <= 0 or d % 6:
        raise InvalidArgumentError(f"feature dimension must be a positive multiple of 6, got {d}")
    coords = np.asarray(coords, dtype=float).reshape(-1, 3)
    n = d // 6
    k = np.arange(n) / max(n - 1, 1)
    freqs = omega_min * (omega_max / omega_min) ** k
    phase = coords[:, :, None] * freqs  # (M, 3, n)
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=2).reshape(len(coords), d)
