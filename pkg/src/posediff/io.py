"""Text formats: pose rows, scene directories, CSV tables and HOCON config/manifests.

Pose rows hold 12 whitespace-separated numbers: the row-major rotation then
the translation. Floats are written with ``repr`` (shortest round-trip form),
so every save/load cycle is lossless.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

import numpy as np
from pyhocon import ConfigFactory, HOCONConverter

from .baselines import Edge, PoseGraph
from .diffusion import coeffs_at
from .errors import InvalidArgumentError
from .geometry import PointCloud, Scene, SceneConfig
from .lie import PoseSet, RigidTransform


def fmt(x):
    return repr(float(x))


def pose_row(R, t):
    return " ".join(fmt(v) for v in np.concatenate([np.ravel(R), np.ravel(t)]))


def parse_pose_row(line):
    vals = np.array(line.split(), dtype=float)
    if vals.shape != (12,):
        raise InvalidArgumentError(f"pose row needs 12 numbers, got {vals.size}")
    return vals[:9].reshape(3, 3), vals[9:]


def format_poses(poses):
    return "".join(pose_row(R, t) + "\n" for R, t in zip(poses.R, poses.t))


def parse_poses(text):
    rows = [parse_pose_row(line) for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not rows:
        raise InvalidArgumentError("no poses found")
    return PoseSet(np.stack([r for r, _ in rows]), np.stack([t for _, t in rows]))


def write_poses(path, poses):
    Path(path).write_text(format_poses(poses))


def read_poses(path):
    return parse_poses(Path(path).read_text())


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _write_cloud(path, cloud):
    write_csv(path, ["id", "x", "y", "z"], ([int(i), *p] for i, p in zip(cloud.ids, cloud.points)))


def _read_cloud(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return PointCloud(rows[:, 1:4], rows[:, 0].astype(np.int64))


def to_plain(obj):
    """Dataclass/tuple/ndarray tree -> JSON-like dicts and lists."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dump_hocon(tree):
    return HOCONConverter.to_hocon(ConfigFactory.from_dict(to_plain(tree))) + "\n"


def parse_hocon(text):
    return _to_builtin(ConfigFactory.parse_string(text))


def _to_builtin(node):
    if hasattr(node, "items"):
        return {k: _to_builtin(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_to_builtin(v) for v in node]
    return node


def from_plain(cls, data):
    """Build a (possibly nested) frozen dataclass from a dict, rejecting unknown keys."""
    data = dict(data or {})
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise InvalidArgumentError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = names[name]
        default = None
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:
            default = f.default_factory()
        if dataclasses.is_dataclass(default):
            kwargs[name] = from_plain(type(default), value)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def save_scene(scene, directory):
    """Write ``manifest``, ``world.csv`` and one ``scan_<i>.csv`` per scan.

    ``gt.txt`` repeats the manifest poses as a plain pose file for ``eval``;
    loading reads the manifest only.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n_scans": scene.n_scans,
        "config": to_plain(scene.config),
        "gt": [pose_row(R, t) for R, t in zip(scene.gt.R, scene.gt.t)],
    }
    (d / "manifest").write_text(dump_hocon(manifest))
    write_poses(d / "gt.txt", scene.gt)
    _write_cloud(d / "world.csv", scene.world)
    for i, scan in enumerate(scene.scans):
        _write_cloud(d / f"scan_{i}.csv", scan)


def load_scene(directory):
    d = Path(directory)
    manifest = parse_hocon((d / "manifest").read_text())
    n = int(manifest["n_scans"])
    rows = [parse_pose_row(r) for r in manifest["gt"]]
    if len(rows) != n:
        raise InvalidArgumentError(f"manifest lists {len(rows)} poses for {n} scans")
    gt = PoseSet(np.stack([r for r, _ in rows]), np.stack([t for _, t in rows]))
    cfg = from_plain(SceneConfig, manifest.get("config", {}))
    scans = [_read_cloud(d / f"scan_{i}.csv") for i in range(n)]
    return Scene(scans, gt, _read_cloud(d / "world.csv"), cfg)


def write_schedule_csv(path, schedule):
    rows = []
    for t in range(1, schedule.T + 1):
        c = coeffs_at(schedule, t)
        rows.append([t, schedule.beta[t - 1], schedule.alpha_bar[t], schedule.beta_tilde[t - 1],
                     c.lambda0, c.lambda1, c.lambda2])
    write_csv(path, ["t", "beta", "alpha_bar", "beta_tilde", "lambda0", "lambda1", "lambda2"], rows)


def write_graph_csv(path, graph):
    header = ["i", "j", "weight"] + [f"r{a}{b}" for a in range(3) for b in range(3)] + ["tx", "ty", "tz"]
    rows = ([e.i, e.j, float(e.weight), *map(float, e.T.R.ravel()), *map(float, e.T.t)] for e in graph.edges)
    write_csv(path, header, rows)


def read_graph_csv(path, n):
    edges = []
    for row in read_csv(path):
        vals = [float(row[k]) for k in list(row)[3:]]
        T = RigidTransform(np.array(vals[:9]).reshape(3, 3), vals[9:])
        edges.append(Edge(int(row["i"]), int(row["j"]), T, float(row["weight"])))
    return PoseGraph(n, edges)
