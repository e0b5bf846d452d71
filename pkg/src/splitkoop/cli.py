"""Command-line entry point: generate / fit / evaluate / sweep / report.

Every subcommand is driven by an INI config file (one section per concern,
see :class:`splitkoop.harness.ExperimentConfig.from_ini`) plus a handful of
flags. Datasets and models are cached in the output directory so the single
steps compose into the same pipeline the ``sweep`` subcommand runs end to
end.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from splitkoop import harness
from splitkoop.koopman import load_model, save_model
from splitkoop.systems import PhaseDataset, TrajectoryDataset


def _load_config(args) -> harness.ExperimentConfig:
    if args.config:
        cfg = harness.ExperimentConfig.from_ini(args.config)
    else:
        cfg = harness.ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = (args.seed,)
    if getattr(args, "method", None):
        overrides["methods"] = (args.method,)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _dataset_paths(out_dir: str, seed: int) -> tuple[str, str]:
    return (os.path.join(out_dir, f"d1.seed{seed}.npz"),
            os.path.join(out_dir, f"d2.seed{seed}.npz"))


def _benchmark(cfg, seed: int, out_dir: str,
               save: bool = False) -> harness.Benchmark:
    """Benchmark for one seed, reusing cached master datasets when present."""
    p1, p2 = _dataset_paths(out_dir, seed)
    if os.path.exists(p1) and os.path.exists(p2):
        bench = harness.prepare_benchmark(
            dataclasses.replace(cfg, d1_n_traj=1, d1_steps=1, d2_n=1,
                                d1_grid=(1,), d2_grid=(1,)), seed)
        bench.d1 = TrajectoryDataset.from_npz(p1)
        bench.d2 = PhaseDataset.from_npz(p2)
        return bench
    bench = harness.prepare_benchmark(cfg, seed)
    if save:
        os.makedirs(out_dir, exist_ok=True)
        bench.d1.to_npz(p1)
        bench.d2.to_npz(p2)
    return bench


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    for seed in cfg.seeds:
        p1, p2 = _dataset_paths(args.out_dir, seed)
        bench = _benchmark(cfg, seed, args.out_dir, save=True)
        print(f"seed {seed}: {len(bench.d1)} trajectory records -> {p1}")
        print(f"seed {seed}: {len(bench.d2)} phase samples -> {p2}")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    bench = _benchmark(cfg, seed, args.out_dir, save=True)
    for method in cfg.methods:
        model = harness.fit_cell_model(bench, cfg, method,
                                       len(bench.d1), len(bench.d2))
        path = os.path.join(args.out_dir, f"model.{method}.bin")
        os.makedirs(args.out_dir, exist_ok=True)
        save_model(model, path)
        note = ""
        if model.spectral is not None:
            note = (f" (spectral radius {model.spectral.spectral_radius:.4f}"
                    f"{', unstable' if model.spectral.unstable else ''})")
        print(f"wrote {path}{note}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    bench = _benchmark(cfg, seed, args.out_dir)
    status = 0
    for method in cfg.methods:
        path = os.path.join(args.out_dir, f"model.{method}.bin")
        if not os.path.exists(path):
            print(f"missing {path}; run `splitkoop fit` first",
                  file=sys.stderr)
            status = 1
            continue
        model = load_model(path)
        cell = harness.CellResult(seed=seed, method=method,
                                  d1_size=len(bench.d1),
                                  d2_size=len(bench.d2))
        harness.evaluate_model(model, bench, cfg, cell)
        line = (f"{method}: median shape error "
                f"{np.median(cell.shape_err):.4e}")
        if cell.vel_err is not None:
            line += f", median distal velocity error {np.median(cell.vel_err):.4e}"
        if cell.n_diverged:
            line += f", {cell.n_diverged} diverged rollouts"
        print(line)
    return status


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    harness.run_sweep(cfg, out_dir=args.out_dir, jobs=args.jobs,
                      log=print if args.verbose else None)
    print(f"wrote {os.path.join(args.out_dir, 'report.csv')}")
    print(f"wrote {os.path.join(args.out_dir, 'report.json')}")
    return 0


def cmd_report(args) -> int:
    rows, _doc = harness.load_report(args.out_dir)
    print(harness.summarize_report(rows))
    for path in harness.plot_report(rows, args.out_dir):
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitkoop",
        description="Koopman identification benchmarks: dataset generation, "
                    "model fitting, evaluation and data-size sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, method=True, seed=True):
        p.add_argument("--config", default=None,
                       help="INI config file (defaults reproduce the forced "
                            "Duffing study)")
        p.add_argument("--out-dir", default="out",
                       help="directory for datasets, models and reports")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="override the config seed list with one seed")
        if method:
            p.add_argument("--method", choices=("l", "b", "pi"), default=None,
                           help="override the config method list")

    p = sub.add_parser("generate", help="generate and cache master datasets")
    common(p, method=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit models on the full master datasets")
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate",
                       help="evaluate saved models on held-out trajectories")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run the full data-size study")
    common(p)
    p.add_argument("--jobs", type=int, default=1,
                   help="worker pool size for grid cells")
    p.add_argument("--verbose", action="store_true",
                   help="print per-cell progress")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report",
                       help="summarize a sweep report and write SVG plots")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
