"""Command-line entry point: ``posediff {gen,denoise,baseline,eval,vlb,run,schedule}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .baselines import build_pairwise_graph, chain_init, synchronize
from .diffusion import cosine_schedule, run_denoising, vlb_terms
from .errors import PoseDiffError
from .harness import (
    PRIOR_KINDS,
    ExperimentConfig,
    TrialResult,
    build_prior,
    emit_report,
    load_config,
    run_experiment,
    trial_rng,
)
from .io import (
    load_scene,
    read_poses,
    save_scene,
    write_csv,
    write_graph_csv,
    write_poses,
    write_schedule_csv,
)
from .geometry import generate_scene
from .metrics import evaluate, total_loss
from .surrogate import make_surrogate


def _resolve(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, scene=replace(cfg.scene, seed=args.seed))
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if args.surrogate is not None:
        cfg = replace(cfg, surrogate=replace(cfg.surrogate, kind=args.surrogate))
    if args.prior is not None:
        cfg = replace(cfg, prior=replace(cfg.prior, kind=args.prior))
    if args.noise_off:
        cfg = replace(cfg, diffusion=replace(cfg.diffusion, noise_on=False))
    cfg.validate()
    return cfg


def _prior_for(args, cfg, scene, rng):
    if getattr(args, "prior_file", None):
        return read_poses(args.prior_file)
    return build_prior(cfg.prior.kind, scene, rng, cfg)


def _report(cfg, scene, poses, out):
    res = TrialResult(0, scene.n_scans)
    for name, p in poses.items():
        res.reports[name] = evaluate(p, scene.gt, cfg.thresholds)
        res.losses[name] = total_loss(p, scene.gt, scene, cfg.loss)[0]
    emit_report([res], out, cfg)


def cmd_gen(args, cfg):
    scene_cfg = cfg.scene if args.scans is None else replace(cfg.scene, n_scans=args.scans)
    scene = generate_scene(scene_cfg)
    save_scene(scene, cfg.out)
    print(f"wrote {scene.n_scans} scans to {cfg.out}")


def cmd_denoise(args, cfg):
    scene = load_scene(args.scene)
    rng = trial_rng(cfg.seed, 0)
    prior = _prior_for(args, cfg, scene, rng)
    schedule = cosine_schedule(cfg.diffusion.train_steps)
    surrogate = make_surrogate(cfg.surrogate.kind, cfg.surrogate.noise)
    traj = run_denoising(scene, prior, surrogate, schedule, cfg.diffusion, rng)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_poses(out / "prior.txt", prior)
    write_poses(out / "refined.txt", traj[-1])
    _report(cfg, scene, {"prior": prior, "refined": traj[-1]}, out)
    print(f"refined {scene.n_scans} poses in {len(traj) - 1} steps -> {out}")


def cmd_baseline(args, cfg):
    scene = load_scene(args.scene)
    rng = trial_rng(cfg.seed, 0)
    graph = build_pairwise_graph(scene, args.mode, args.edge_noise, args.outliers, rng)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sync, chain = synchronize(graph), chain_init(graph)
    write_graph_csv(out / "graph.csv", graph)
    write_poses(out / "sync.txt", sync)
    write_poses(out / "chain.txt", chain)
    _report(cfg, scene, {"sync": sync, "chain": chain}, out)
    print(f"{len(graph.edges)} edges -> {out}")


def cmd_eval(args, cfg):
    pred, gt = read_poses(args.pred), read_poses(args.gt)
    rep = evaluate(pred, gt, cfg.thresholds)
    row = rep.summary_row()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "summary.csv", list(row), [list(row.values())])
        write_csv(out / "pairs.csv", ["i", "j", "RE_deg", "TE_m"],
                  ([int(i), int(j), float(a), float(b)] for i, j, a, b in rep.pairs))
    for k, v in row.items():
        print(f"{k}\t{v:.6g}")


def cmd_vlb(args, cfg):
    scene = load_scene(args.scene)
    rng = trial_rng(cfg.seed, 0)
    prior = _prior_for(args, cfg, scene, rng)
    schedule = cosine_schedule(cfg.diffusion.train_steps)
    surrogate = make_surrogate(cfg.surrogate.kind, cfg.surrogate.noise)
    terms = vlb_terms(scene, scene.gt, prior, surrogate, schedule, rng, cfg.diffusion.gamma)
    rows = [["residual", 1, terms.residual_term], ["prior_matching", schedule.T, terms.prior_matching_term]]
    rows += [["denoising", t, float(v)] for t, v in enumerate(terms.denoising_terms, start=2)]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "vlb.csv", ["term", "t", "value"], rows)
    print(f"vlb total {terms.total:.6g} -> {out / 'vlb.csv'}")


def cmd_run(args, cfg):
    report = run_experiment(cfg, jobs=args.jobs)
    failed = sum(r.failed for r in report.results)
    print(f"{len(report.results)} trials ({failed} failed) -> {report.out_dir}")
    return report.exit_code


def cmd_schedule(args, cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_schedule_csv(out / "schedule.csv", cosine_schedule(cfg.diffusion.train_steps))
    print(f"wrote {out / 'schedule.csv'}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="HOCON experiment config")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--trials", type=int)
    common.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--surrogate", choices=("oracle", "kabsch"))
    common.add_argument("--prior", choices=PRIOR_KINDS)
    common.add_argument("--noise-off", action="store_true", help="deterministic reverse steps")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="posediff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic scene directory")
    p.add_argument("--scans", type=int, help="number of scans (overrides config)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("denoise", parents=[common], help="refine a prior on a scene directory")
    p.add_argument("scene")
    p.add_argument("--prior-file", metavar="PATH", help="pose file to use as the prior")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("baseline", parents=[common], help="pairwise graph + synchronization")
    p.add_argument("scene")
    p.add_argument("--mode", choices=("full", "overlap"), default="overlap")
    p.add_argument("--edge-noise", type=float, default=0.0)
    p.add_argument("--outliers", type=float, default=0.0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", parents=[common], help="compare two pose files")
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("vlb", parents=[common], help="variational bound terms for a scene")
    p.add_argument("scene")
    p.add_argument("--prior-file", metavar="PATH")
    p.set_defaults(func=cmd_vlb)

    p = sub.add_parser("run", parents=[common], help="full experiment from a config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("schedule", parents=[common], help="dump the noise schedule CSV")
    p.set_defaults(func=cmd_schedule)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "gen" and args.out is None:
            cfg = replace(cfg, out="scene")
        return args.func(args, cfg) or 0
    except (PoseDiffError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
