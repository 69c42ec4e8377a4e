"""Relative-pose losses and evaluation metrics.

Everything here is computed on pairwise relative poses ``T_{i<-j} = T_i^-1 T_j``,
which cancels the common gauge of a pose set. Angles are radians internally
and degrees in reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .lie import RigidTransform, vee

ROTATION_GRID = (3.0, 5.0, 10.0, 30.0, 45.0)
TRANSLATION_GRID = (0.05, 0.1, 0.25, 0.5, 0.75)


@dataclass(frozen=True)
class LossConfig:
    gamma_t: float = 0.1
    gamma_p: float = 0.1
    huber_beta: float = 0.06

    def validate(self):
        if self.gamma_t < 0 or self.gamma_p < 0 or self.huber_beta <= 0:
            raise InvalidArgumentError("loss weights must be >= 0 and huber_beta > 0")


@dataclass(frozen=True)
class MetricThresholds:
    rotation: tuple = ROTATION_GRID  # degrees
    translation: tuple = TRANSLATION_GRID  # meters
    rr_rot: float = 15.0
    rr_trans: float = 0.3

    def validate(self):
        for grid in (self.rotation, self.translation):
            if np.any(np.diff(grid) <= 0):
                raise InvalidArgumentError(f"threshold grid {grid} is not strictly increasing")


def _pair_index(n):
    if n < 2:
        raise InvalidArgumentError(f"need at least two poses, got {n}")
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    return i, j


def relative_arrays(poses):
    """Relative rotations/translations for all ordered pairs i != j (row-major order)."""
    i, j = _pair_index(len(poses))
    Ri_t = np.swapaxes(poses.R[i], -1, -2)
    R = Ri_t @ poses.R[j]
    t = np.einsum("nab,nb->na", Ri_t, poses.t[j] - poses.t[i])
    return i, j, R, t


def pairwise_relative(poses):
    """List of ``(i, j, T_{i<-j})`` over all ordered pairs."""
    i, j, R, t = relative_arrays(poses)
    return [(int(a), int(b), RigidTransform(Rk, tk)) for a, b, Rk, tk in zip(i, j, R, t)]


def rotation_angle(R_pred, R_gt):
    """Geodesic angle between rotations (radians), batched.

    Evaluated as ``atan2(|vee(E - E^T)| / 2, (tr E - 1) / 2)`` with
    ``E = R_gt^T R_pred``; equal to the clamped arccos form but accurate near 0.
    """
    E = np.swapaxes(np.asarray(R_gt, float), -1, -2) @ np.asarray(R_pred, float)
    s = 0.5 * np.linalg.norm(vee(E - np.swapaxes(E, -1, -2)), axis=-1)
    c = np.clip(0.5 * (np.trace(E, axis1=-2, axis2=-1) - 1.0), -1.0, 1.0)
    return np.arctan2(s, c)


def rot_geodesic_loss(r_pred, r_gt):
    return float(rotation_angle(r_pred, r_gt))


def huber(e, beta):
    e = np.asarray(e, dtype=float)
    return np.where(e <= beta, 0.5 * e * e, beta * (e - 0.5 * beta))


def trans_huber_loss(t_pred, t_gt, beta):
    """Huber penalty on the Euclidean norm of the translation error."""
    if beta <= 0:
        raise InvalidArgumentError("huber beta must be positive")
    e = np.linalg.norm(np.asarray(t_pred, float) - np.asarray(t_gt, float), axis=-1)
    return huber(e, beta) if np.ndim(e) else float(huber(e, beta))


def pointwise_loss(rel_pred, rel_gt, pts):
    """Mean L1 distance between points moved by the predicted and true relative poses."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise InvalidArgumentError("pointwise loss needs at least one point")
    diff = pts @ (rel_pred.R - rel_gt.R).T + (rel_pred.t - rel_gt.t)
    return float(np.mean(np.sum(np.abs(diff), axis=1)))


def total_loss(pred, gt, scene, cfg=LossConfig()):
    """Average over ordered pairs of rotation + gamma_t * translation + gamma_p * point losses.

    ``scene`` supplies scan j's points for the point term (a Scene or a list
    of point arrays). Returns ``(value, breakdown)``.
    """
    cfg.validate()
    if len(pred) != len(gt):
        raise InvalidArgumentError("pred and gt differ in length")
    i, j, Rp, tp = relative_arrays(pred)
    _, _, Rg, tg = relative_arrays(gt)
    rot = rotation_angle(Rp, Rg)
    trans = huber(np.linalg.norm(tp - tg, axis=1), cfg.huber_beta)
    scans = [s.points for s in scene.scans] if hasattr(scene, "scans") else [np.asarray(p, float) for p in scene]
    point = np.empty(len(i))
    for k, jj in enumerate(j):
        P = scans[jj]
        diff = P @ (Rp[k] - Rg[k]).T + (tp[k] - tg[k])
        point[k] = np.mean(np.sum(np.abs(diff), axis=1))
    n_pairs = len(i)
    terms = {
        "rotation": math.fsum(rot) / n_pairs,
        "translation": math.fsum(trans) / n_pairs,
        "point": math.fsum(point) / n_pairs,
    }
    value = terms["rotation"] + cfg.gamma_t * terms["translation"] + cfg.gamma_p * terms["point"]
    return value, terms


@dataclass(frozen=True, eq=False)
class EvalReport:
    pairs: np.ndarray = field(repr=False)  # columns i, j, RE_deg, TE_m
    thresholds: MetricThresholds
    ecdf_rot: tuple
    ecdf_trans: tuple
    re_mean: float
    re_median: float
    te_mean: float
    te_median: float
    rr: float

    def summary_row(self):
        row = {
            "RE_mean": self.re_mean,
            "RE_med": self.re_median,
            "TE_mean": self.te_mean,
            "TE_med": self.te_median,
            "RR": self.rr,
        }
        for th, v in zip(self.thresholds.rotation, self.ecdf_rot):
            row[f"ecdf_rot_{th:g}"] = v
        for th, v in zip(self.thresholds.translation, self.ecdf_trans):
            row[f"ecdf_trans_{th:g}"] = v
        return row


def ecdf(errors, grid):
    """Fraction of errors at or below each threshold."""
    errors = np.asarray(errors, dtype=float)
    return tuple(float(np.count_nonzero(errors <= g)) / len(errors) for g in grid)


def summarize(re_deg, te, th=MetricThresholds(), pairs=None):
    """Build an :class:`EvalReport` from per-pair errors."""
    re_deg = np.asarray(re_deg, dtype=float)
    te = np.asarray(te, dtype=float)
    rr = float(np.count_nonzero((re_deg <= th.rr_rot) & (te <= th.rr_trans))) / len(re_deg)
    if pairs is None:
        pairs = np.column_stack([np.zeros(len(re_deg)), np.zeros(len(re_deg)), re_deg, te])
    return EvalReport(
        pairs=pairs,
        thresholds=th,
        ecdf_rot=ecdf(re_deg, th.rotation),
        ecdf_trans=ecdf(te, th.translation),
        re_mean=math.fsum(re_deg) / len(re_deg),
        re_median=float(np.median(re_deg)),
        te_mean=math.fsum(te) / len(te),
        te_median=float(np.median(te)),
        rr=rr,
    )


def evaluate(pred, gt, th=MetricThresholds()):
    """Relative rotation/translation errors over all ordered pairs plus ECDF and recall."""
    th.validate()
    if len(pred) != len(gt):
        raise InvalidArgumentError("pred and gt differ in length")
    i, j, Rp, tp = relative_arrays(pred)
    _, _, Rg, tg = relative_arrays(gt)
    re_deg = np.degrees(rotation_angle(Rp, Rg))
    te = np.linalg.norm(tp - tg, axis=1)
    return summarize(re_deg, te, th, np.column_stack([i, j, re_deg, te]))
