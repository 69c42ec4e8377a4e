"""Batch experiments: scene generation, priors, diffusion refinement, baselines, reports."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .attention import AAConfig, init_weights, predict_poses
from .baselines import build_pairwise_graph, chain_init, synchronize
from .diffusion import DiffusionConfig, cosine_schedule, run_denoising
from .errors import InvalidArgumentError, PoseDiffError
from .geometry import SceneConfig, generate_scene
from .io import dump_hocon, fmt, from_plain, parse_hocon, write_csv
from .lie import sample_random_pose
from .metrics import LossConfig, MetricThresholds, evaluate, total_loss
from .surrogate import make_surrogate

log = logging.getLogger(__name__)

PRIOR_KINDS = ("perturbed", "attention", "baseline")


@dataclass(frozen=True)
class SurrogateConfig:
    kind: str = "kabsch"  # oracle | kabsch
    noise: float = 0.0  # twist noise for the oracle surrogate


@dataclass(frozen=True)
class PriorConfig:
    kind: str = "perturbed"  # perturbed | attention | baseline
    rot_deg: float = 20.0
    trans_m: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    attention: AAConfig = field(default_factory=AAConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    thresholds: MetricThresholds = field(default_factory=MetricThresholds)
    # scan count per trial is drawn uniformly from this inclusive range
    n_scans: tuple = (2, 50)
    baselines: bool = True
    trials: int = 1
    seed: int = 0
    out: str = "run_out"

    def validate(self):
        self.diffusion.validate()
        self.loss.validate()
        self.thresholds.validate()
        lo, hi = self.n_scans
        if not 2 <= lo <= hi <= 50:
            raise InvalidArgumentError(f"scan range {self.n_scans} outside 2..50")
        if self.trials < 1:
            raise InvalidArgumentError("need at least one trial")
        if self.prior.kind not in PRIOR_KINDS:
            raise InvalidArgumentError(f"unknown prior kind {self.prior.kind!r}")
        make_surrogate(self.surrogate.kind)


def load_config(path=None, text=None):
    """Parse a HOCON config file; missing keys keep their defaults."""
    if path is not None:
        text = Path(path).read_text()
    data = parse_hocon(text) if text else {}
    return from_plain(ExperimentConfig, data)


def trial_rng(seed, trial):
    """Independent per-trial stream keyed by (master seed, trial index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def build_prior(kind, scene, rng, cfg):
    if kind == "perturbed":
        noise = sample_random_pose(rng, np.deg2rad(cfg.prior.rot_deg), cfg.prior.trans_m, n=scene.n_scans)
        return noise.compose(scene.gt)
    if kind == "attention":
        return predict_poses(scene.scans, init_weights(cfg.attention), cfg.attention)
    if kind == "baseline":
        return synchronize(build_pairwise_graph(scene, mode="overlap"))
    raise InvalidArgumentError(f"unknown prior kind {kind!r}")


@dataclass(eq=False)
class TrialResult:
    trial: int
    n_scans: int = 0
    reports: dict = field(default_factory=dict)  # method -> EvalReport
    losses: dict = field(default_factory=dict)  # method -> total loss
    errors: list = field(default_factory=list)  # (stage, message)

    @property
    def failed(self):
        return not self.reports


def run_trial(cfg, trial):
    rng = trial_rng(cfg.seed, trial)
    res = TrialResult(trial)
    try:
        lo, hi = cfg.n_scans
        n = int(rng.integers(lo, hi + 1))
        res.n_scans = n
        scene = generate_scene(replace(cfg.scene, n_scans=n), rng)
        prior = build_prior(cfg.prior.kind, scene, rng, cfg)
    except PoseDiffError as exc:
        res.errors.append(("setup", str(exc)))
        return res

    poses = {"prior": prior}
    try:
        schedule = cosine_schedule(cfg.diffusion.train_steps)
        surrogate = make_surrogate(cfg.surrogate.kind, cfg.surrogate.noise)
        poses["refined"] = run_denoising(scene, prior, surrogate, schedule, cfg.diffusion, rng)[-1]
    except PoseDiffError as exc:
        res.errors.append(("refined", str(exc)))

    if cfg.baselines:
        try:
            graph = build_pairwise_graph(scene, mode="overlap")
            poses["sync"] = synchronize(graph)
            poses["chain"] = chain_init(graph)
        except PoseDiffError as exc:
            res.errors.append(("baseline", str(exc)))

    for method, p in poses.items():
        res.reports[method] = evaluate(p, scene.gt, cfg.thresholds)
        res.losses[method] = total_loss(p, scene.gt, scene, cfg.loss)[0]
    return res


@dataclass(eq=False)
class ExperimentReport:
    out_dir: Path
    results: list
    exit_code: int


def _summary_header(th):
    return (["method", "trial", "RE_mean", "RE_med", "TE_mean", "TE_med", "RR"]
            + [f"ecdf_rot_{x:g}" for x in th.rotation]
            + [f"ecdf_trans_{x:g}" for x in th.translation])


def emit_report(results, out_dir, cfg):
    """Write summary.csv, ecdf.csv, per-trial pair CSVs and run_manifest."""
    if not any(r.reports for r in results):
        raise InvalidArgumentError("no evaluated methods to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        th = cfg.thresholds
        summary, ecdf_rows = [], []
        for r in sorted(results, key=lambda r: r.trial):
            pair_rows = []
            for method, rep in r.reports.items():
                row = rep.summary_row()
                summary.append([method, r.trial] + [row[k] for k in _summary_header(th)[2:]])
                for x, v in zip(th.rotation, rep.ecdf_rot):
                    ecdf_rows.append([method, r.trial, "rotation_deg", float(x), v])
                for x, v in zip(th.translation, rep.ecdf_trans):
                    ecdf_rows.append([method, r.trial, "translation_m", float(x), v])
                for i, j, re, te in rep.pairs:
                    pair_rows.append([method, int(i), int(j), float(re), float(te)])
            if pair_rows:
                write_csv(out / f"pairs_{r.trial}.csv", ["method", "i", "j", "RE_deg", "TE_m"], pair_rows)
        write_csv(out / "summary.csv", _summary_header(th), summary)
        write_csv(out / "ecdf.csv", ["method", "trial", "kind", "threshold", "fraction"], ecdf_rows)
        manifest = {
            "tool": "posediff",
            "version": __version__,
            "config": cfg,
            "trials": [
                {
                    "trial": r.trial,
                    "n_scans": r.n_scans,
                    "losses": {k: fmt(v) for k, v in r.losses.items()},
                    "errors": [f"{stage}: {msg}" for stage, msg in r.errors],
                }
                for r in sorted(results, key=lambda r: r.trial)
            ],
        }
        (out / "run_manifest").write_text(dump_hocon(manifest))
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return out


def run_experiment(cfg, jobs=1):
    """Run every trial (in parallel when ``jobs > 1``) and emit the report.

    Output bytes depend only on ``cfg``; trials are merged in index order.
    """
    cfg.validate()
    trials = range(cfg.trials)
    if jobs > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_trial, [cfg] * cfg.trials, trials))
    else:
        results = [run_trial(cfg, k) for k in trials]
    for r in results:
        for stage, msg in r.errors:
            log.warning("trial %d %s: %s", r.trial, stage, msg)
    all_failed = all(r.failed for r in results)
    out = emit_report(results, cfg.out, cfg) if not all_failed else Path(cfg.out)
    return ExperimentReport(out, results, 1 if all_failed else 0)
