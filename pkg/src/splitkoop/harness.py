"""Config-driven benchmark studies: dataset generation, method fitting,
error metrics, data-size sweeps and report emission.

A study is described by an :class:`ExperimentConfig` (loadable from an INI
file with one section per concern). ``run_sweep`` generates master datasets
once per seed, fits every requested method on nested prefixes of the
trajectory data over a grid of dataset sizes, evaluates rollouts on held-out
test trajectories, and writes a long-format ``report.csv`` plus a
``report.json`` with aggregates, stability flags and a config echo. All
randomness is derived from the configured seeds, so a repeated run emits a
byte-identical CSV.
"""

from __future__ import annotations

import concurrent.futures
import configparser
import csv
import json
import os
import subprocess
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

import splitkoop
from splitkoop import rod as rodmod
from splitkoop.dictionaries import DictionarySpec
from splitkoop.koopman import FitOptions, edmd_fit, rollout, split_fit
from splitkoop.systems import (
    PhaseDataset,
    SplitSystem,
    TrajectoryDataset,
    duffing,
    make_d1,
    pendulum,
    piecewise_constant_policy,
    sample_phase_lhs,
    simulate,
)

__all__ = [
    "ExperimentConfig",
    "Benchmark",
    "CellResult",
    "ErrorReport",
    "shape_error",
    "distal_velocity_error",
    "prepare_benchmark",
    "run_sweep",
    "write_report",
    "load_report",
    "plot_report",
    "summarize_report",
]

# Sub-seed offsets: every dataset family gets its own stream derived from the
# per-study base seed, so e.g. enlarging the test set never shifts D1.
SEED_COV = 500
SEED_D2 = 1000
SEED_TEST = 2000

CSV_COLUMNS = ("seed", "method", "d1_size", "d2_size",
               "traj", "step", "shape_err", "vel_err")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one benchmark study.

    The defaults reproduce the forced-Duffing data-efficiency study: linear
    and split fits over nested trajectory prefixes, evaluated by rollout on
    held-out trajectories. ``system_params`` feeds the system constructor
    (ODE coefficients, or rod material/geometry fields).
    """

    system: str = "duffing"                 # duffing | pendulum | rod
    dt: float = 0.03
    system_params: dict = field(default_factory=dict)
    # dictionary
    form: str = "linear"
    delays: int = 4
    degree: int = 3
    delay_rows: str = "shift"
    # trajectory data (D1 master)
    d1_n_traj: int = 256
    d1_steps: int = 16
    d1_policy: str = "piecewise"
    d1_hold_steps: int = 10
    # phase-space data (D2 master)
    d2_n: int = 8192
    # rod-specific
    rod_k: int = 6
    tension_lo: float = 0.0
    tension_hi: float = 0.02
    cov_n_traj: int = 2
    cov_steps: int = 20
    # fit options
    alpha: float | None = None
    rank_tol: float = 0.0
    kh_row_mask: tuple[int, ...] = (0, 2, 3, 4, 5, 6, 7, 8)
    kf_source: str = "generator"
    # evaluation
    n_test_traj: int = 10
    test_steps: int = 100
    # sweep
    d1_grid: tuple[int, ...] = (32, 64, 128, 256, 1024, 4096)
    d2_grid: tuple[int, ...] = (8192,)
    methods: tuple[str, ...] = ("l", "pi")
    seeds: tuple[int, ...] = tuple(range(10))

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.system not in ("duffing", "pendulum", "rod"):
            raise ValueError(f"unknown system {self.system!r}")
        if not self.methods:
            raise ValueError("methods must be nonempty")
        bad = set(self.methods) - {"l", "b", "pi"}
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        n_records = self.d1_n_traj * self.d1_steps
        if any(not 0 < g <= n_records for g in self.d1_grid):
            raise ValueError("d1_grid values must lie in 1..n_traj*steps")
        if any(not 0 < g <= self.d2_n for g in self.d2_grid):
            raise ValueError("d2_grid values must lie in 1..d2_n")
        if not self.d1_grid or not self.d2_grid or not self.seeds:
            raise ValueError("d1_grid, d2_grid and seeds must be nonempty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kh_row_mask"] = list(self.kh_row_mask)
        for key in ("d1_grid", "d2_grid", "seeds"):
            d[key] = list(d[key])
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_ini(cls, path) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        with open(path) as fh:
            cp.read_file(fh)
        kw: dict = {}
        if cp.has_section("system"):
            sec = cp["system"]
            kw["system"] = sec.get("name", cls.system)
            kw["dt"] = sec.getfloat("dt", cls.dt)
            extras = {}
            for key in sec:
                if key in ("name", "dt"):
                    continue
                extras[key] = (sec.getint(key) if key in ("n_nodes",)
                               else sec.getfloat(key))
            kw["system_params"] = extras
        if cp.has_section("dictionary"):
            sec = cp["dictionary"]
            kw["form"] = sec.get("form", cls.form)
            kw["delays"] = sec.getint("delays", cls.delays)
            kw["degree"] = sec.getint("degree", cls.degree)
            kw["delay_rows"] = sec.get("delay_rows", cls.delay_rows)
        if cp.has_section("d1"):
            sec = cp["d1"]
            kw["d1_n_traj"] = sec.getint("n_traj", cls.d1_n_traj)
            kw["d1_steps"] = sec.getint("steps", cls.d1_steps)
            kw["d1_policy"] = sec.get("policy", cls.d1_policy)
            kw["d1_hold_steps"] = sec.getint("hold_steps", cls.d1_hold_steps)
        if cp.has_section("d2"):
            kw["d2_n"] = cp["d2"].getint("n", cls.d2_n)
        if cp.has_section("rod"):
            sec = cp["rod"]
            kw["rod_k"] = sec.getint("k", cls.rod_k)
            kw["tension_lo"] = sec.getfloat("tension_lo", cls.tension_lo)
            kw["tension_hi"] = sec.getfloat("tension_hi", cls.tension_hi)
            kw["cov_n_traj"] = sec.getint("cov_n_traj", cls.cov_n_traj)
            kw["cov_steps"] = sec.getint("cov_steps", cls.cov_steps)
        if cp.has_section("fit"):
            sec = cp["fit"]
            raw = sec.get("alpha", "auto").strip()
            kw["alpha"] = None if raw == "auto" else float(raw)
            kw["rank_tol"] = sec.getfloat("rank_tol", cls.rank_tol)
            kw["kh_row_mask"] = _int_tuple(sec.get("kh_row_mask", None),
                                           cls.kh_row_mask)
            kw["kf_source"] = sec.get("kf_source", cls.kf_source)
        if cp.has_section("evaluation"):
            sec = cp["evaluation"]
            kw["n_test_traj"] = sec.getint("n_test_traj", cls.n_test_traj)
            kw["test_steps"] = sec.getint("steps", cls.test_steps)
        if cp.has_section("sweep"):
            sec = cp["sweep"]
            kw["d1_grid"] = _int_tuple(sec.get("d1_grid", None), cls.d1_grid)
            kw["d2_grid"] = _int_tuple(sec.get("d2_grid", None), cls.d2_grid)
            if sec.get("methods", None):
                kw["methods"] = tuple(
                    m.strip() for m in sec["methods"].split(",") if m.strip())
            kw["seeds"] = _int_tuple(sec.get("seeds", None), cls.seeds)
        return cls(**kw)


def _int_tuple(raw: str | None, default: tuple[int, ...]) -> tuple[int, ...]:
    if raw is None or not raw.strip():
        return default
    return tuple(int(v) for v in raw.replace(",", " ").split())


# ---------------------------------------------------------------------------
# error metrics


def shape_error(true_state, pred_state, indices=None) -> float:
    """Squared error over the position components of two states.

    ``indices`` selects the position entries; when omitted the full state
    vector is compared (the ODE benchmarks, where every component is a
    configuration coordinate in the reported sense).
    """
    a = np.asarray(true_state, dtype=float)
    b = np.asarray(pred_state, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"state shapes differ: {a.shape} vs {b.shape}")
    if indices is not None:
        a, b = a[indices], b[indices]
    d = a - b
    return float(d @ d)


def distal_velocity_error(true_state, pred_state, tip_indices) -> float:
    """Squared error of the tip-node linear velocity (shared kernel with
    :func:`shape_error` applied to a velocity projection)."""
    return shape_error(true_state, pred_state, indices=tip_indices)


# ---------------------------------------------------------------------------
# benchmark wiring


@dataclass
class Benchmark:
    """Master data and metric wiring for one (config, seed) pair.

    ``d1``/``d2`` are the largest datasets of the study; sweep cells take
    nested prefixes. ``tests`` holds held-out trajectories as
    ``(states, controls)`` pairs with states of shape (steps+1, n).
    ``position_idx``/``tip_vel_idx`` are None for systems where the metric
    uses the full state / does not apply.
    """

    spec: DictionarySpec
    f_known: Callable | None
    d1: TrajectoryDataset
    d2: PhaseDataset
    tests: list[tuple[np.ndarray, np.ndarray]]
    position_idx: np.ndarray | None = None
    tip_vel_idx: np.ndarray | None = None


def _make_ode_system(cfg: ExperimentConfig) -> SplitSystem:
    ctor = duffing if cfg.system == "duffing" else pendulum
    return ctor(**cfg.system_params)


def _ode_tests(sys: SplitSystem, cfg: ExperimentConfig, seed: int):
    x0s = sample_phase_lhs(sys.state_bounds, cfg.n_test_traj, seed)
    roots = np.random.SeedSequence(seed).spawn(cfg.n_test_traj)
    tests = []
    for t in range(cfg.n_test_traj):
        rng = np.random.default_rng(roots[t])
        u = piecewise_constant_policy(sys, rng, cfg.test_steps,
                                      cfg.d1_hold_steps)
        states = simulate(sys, x0s[:, t], u, cfg.test_steps, cfg.dt)
        tests.append((states, u))
    return tests


def _rod_tests(params: rodmod.RodParams, cfg: ExperimentConfig, seed: int):
    """Held-out rod trajectories from rest under random held tensions,
    recorded in the reduced learning state."""
    lo, hi = cfg.tension_lo, cfg.tension_hi
    roots = np.random.SeedSequence(seed).spawn(cfg.n_test_traj)
    tests = []
    for t in range(cfg.n_test_traj):
        rng = np.random.default_rng(roots[t])
        n_holds = -(-cfg.test_steps // cfg.d1_hold_steps)
        levels = lo + rng.random((2, n_holds)) * (hi - lo)
        u = np.repeat(levels, cfg.d1_hold_steps, axis=1)[:, :cfg.test_steps]
        st = rodmod.reference_state(params)
        states = [rodmod.downsample(st, cfg.rod_k)]
        for k in range(cfg.test_steps):
            st = rodmod.rod_step(params, st, u[:, k], cfg.dt)
            states.append(rodmod.downsample(st, cfg.rod_k))
        tests.append((np.array(states), u))
    return tests


def prepare_benchmark(cfg: ExperimentConfig, seed: int) -> Benchmark:
    """Generate the master datasets and held-out tests for one base seed."""
    if cfg.system == "rod":
        params = rodmod.RodParams.from_dict(cfg.system_params) \
            if cfg.system_params else rodmod.RodParams()
        bounds = np.array([[cfg.tension_lo, cfg.tension_hi]] * 2)
        cov = rodmod.estimate_velocity_cov(
            params, bounds, cfg.dt, seed + SEED_COV,
            n_traj=cfg.cov_n_traj, steps=cfg.cov_steps)
        d2_full = rodmod.make_rod_d2(params, bounds, cov, cfg.d2_n,
                                     seed + SEED_D2)
        d1_full = rodmod.make_rod_d1(params, cfg.d1_n_traj, cfg.d1_steps,
                                     cfg.dt, seed, bounds,
                                     hold_steps=cfg.d1_hold_steps)
        d1 = rodmod.reduce_dataset(params, d1_full, cfg.rod_k)
        d2 = rodmod.reduce_dataset(params, d2_full, cfg.rod_k)
        spec = DictionarySpec(
            state_dim=d1.x.shape[0], control_dim=2, form=cfg.form,
            delays=cfg.delays, degree=cfg.degree, delay_rows=cfg.delay_rows)
        return Benchmark(
            spec=spec, f_known=None, d1=d1, d2=d2,
            tests=_rod_tests(params, cfg, seed + SEED_TEST),
            position_idx=rodmod.position_indices(cfg.rod_k),
            tip_vel_idx=rodmod.tip_velocity_indices(cfg.rod_k),
        )
    sys = _make_ode_system(cfg)
    d1 = make_d1(sys, cfg.d1_n_traj, cfg.d1_steps, cfg.dt, seed,
                 policy=cfg.d1_policy, hold_steps=cfg.d1_hold_steps)
    box = np.vstack([sys.state_bounds, sys.control_bounds])
    samples = sample_phase_lhs(box, cfg.d2_n, seed + SEED_D2)
    d2 = PhaseDataset(x=samples[:sys.n], u=samples[sys.n:])
    spec = DictionarySpec(
        state_dim=sys.n, control_dim=sys.m, form=cfg.form,
        delays=cfg.delays, degree=cfg.degree, delay_rows=cfg.delay_rows)
    return Benchmark(spec=spec, f_known=sys.f, d1=d1, d2=d2,
                     tests=_ode_tests(sys, cfg, seed + SEED_TEST))


# ---------------------------------------------------------------------------
# sweep cells


@dataclass
class CellResult:
    """Raw and aggregated errors of one (seed, method, |D1|, |D2|) cell."""

    seed: int
    method: str
    d1_size: int
    d2_size: int
    fit_error: str | None = None
    unstable: bool = False
    spectral_radius: float | None = None
    n_diverged: int = 0
    # per-record arrays, parallel: traj index, step index, errors
    traj: np.ndarray | None = None
    step: np.ndarray | None = None
    shape_err: np.ndarray | None = None
    vel_err: np.ndarray | None = None

    def aggregates(self) -> dict:
        out: dict = {
            "seed": self.seed, "method": self.method,
            "d1_size": self.d1_size, "d2_size": self.d2_size,
            "fit_error": self.fit_error, "unstable": self.unstable,
            "spectral_radius": self.spectral_radius,
            "n_diverged": self.n_diverged,
        }
        if self.shape_err is not None:
            out["shape"] = _agg(self.shape_err)
            if self.vel_err is not None:
                out["vel"] = _agg(self.vel_err)
        return out


def _agg(vals: np.ndarray) -> dict:
    vals = np.asarray(vals, dtype=float)
    # capped divergence errors are huge by design; the mean may overflow
    with np.errstate(over="ignore"):
        return {
            "median": float(np.median(vals)),
            "q25": float(np.percentile(vals, 25)),
            "q75": float(np.percentile(vals, 75)),
            "mean": float(np.mean(vals)),
        }


def _cap_nonfinite(errs: np.ndarray) -> np.ndarray:
    """Replace non-finite entries by 10x the worst finite entry of the cell.

    A cell with no finite record at all falls back to a fixed large value so
    the row still sorts as catastrophic.
    """
    errs = np.asarray(errs, dtype=float).copy()
    bad = ~np.isfinite(errs)
    if bad.any():
        finite = errs[~bad]
        cap = 10.0 * float(np.max(finite)) if finite.size else 1e30
        errs[bad] = cap
    return errs


def _fit_options(cfg: ExperimentConfig) -> FitOptions:
    return FitOptions(alpha=cfg.alpha, rank_tol=cfg.rank_tol,
                      kh_row_mask=cfg.kh_row_mask, kf_source=cfg.kf_source)


def fit_cell_model(bench: Benchmark, cfg: ExperimentConfig, method: str,
                   d1_size: int, d2_size: int):
    """Fit one method on the nested prefixes of the master datasets."""
    spec = bench.spec if method != "b" else DictionarySpec(
        state_dim=bench.spec.state_dim, control_dim=bench.spec.control_dim,
        form="bilinear", delays=bench.spec.delays, degree=bench.spec.degree,
        delay_rows=bench.spec.delay_rows)
    opts = _fit_options(cfg)
    d1 = bench.d1.prefix(d1_size)
    if method == "pi":
        return split_fit(spec, d1, bench.d2.prefix(d2_size),
                         bench.f_known, cfg.dt, opts)
    return edmd_fit(spec, d1, opts)


def evaluate_model(model, bench: Benchmark, cfg: ExperimentConfig,
                   result: CellResult) -> CellResult:
    """Roll the model out on every held-out test trajectory and record
    per-step errors; diverged or truncated steps enter as non-finite and are
    capped per cell afterwards."""
    traj_col, step_col, shapes, vels = [], [], [], []
    n_div = 0
    # near-divergent rollouts legitimately overflow the squared error
    with np.errstate(over="ignore"):
        for t, (states, u) in enumerate(bench.tests):
            res = rollout(model, states[0], u)
            if res.diverged_at is not None:
                n_div += 1
            have = res.states.shape[0]
            for k in range(1, cfg.test_steps + 1):
                traj_col.append(t)
                step_col.append(k)
                if k < have:
                    shapes.append(shape_error(states[k], res.states[k],
                                              bench.position_idx))
                    if bench.tip_vel_idx is not None:
                        vels.append(distal_velocity_error(
                            states[k], res.states[k], bench.tip_vel_idx))
                else:
                    shapes.append(np.nan)
                    if bench.tip_vel_idx is not None:
                        vels.append(np.nan)
    result.traj = np.array(traj_col, dtype=int)
    result.step = np.array(step_col, dtype=int)
    result.shape_err = _cap_nonfinite(np.array(shapes))
    result.vel_err = _cap_nonfinite(np.array(vels)) if vels else None
    result.n_diverged = n_div
    return result


def _run_cell(bench: Benchmark, cfg: ExperimentConfig, seed: int,
              method: str, d1_size: int, d2_size: int) -> CellResult:
    result = CellResult(seed=seed, method=method,
                        d1_size=d1_size, d2_size=d2_size)
    try:
        model = fit_cell_model(bench, cfg, method, d1_size, d2_size)
    except Exception as exc:  # recorded, sweep continues
        result.fit_error = f"{type(exc).__name__}: {exc}"
        return result
    if model.spectral is not None:
        result.unstable = bool(model.spectral.unstable)
        result.spectral_radius = float(model.spectral.spectral_radius)
    return evaluate_model(model, bench, cfg, result)


# ---------------------------------------------------------------------------
# sweep driver and reports


@dataclass
class ErrorReport:
    """All cell results of a sweep plus pooled aggregates."""

    config: ExperimentConfig
    cells: list[CellResult]

    def pooled_aggregates(self) -> list[dict]:
        """Median/quartile/mean pooled across seeds per (method, |D1|, |D2|)."""
        keys: dict[tuple, dict] = {}
        for c in self.cells:
            key = (c.method, c.d1_size, c.d2_size)
            slot = keys.setdefault(key, {"shape": [], "vel": [],
                                         "n_diverged": 0, "n_fit_failures": 0})
            if c.fit_error is not None:
                slot["n_fit_failures"] += 1
                continue
            slot["shape"].append(c.shape_err)
            if c.vel_err is not None:
                slot["vel"].append(c.vel_err)
            slot["n_diverged"] += c.n_diverged
        out = []
        for (method, d1s, d2s) in sorted(keys):
            slot = keys[(method, d1s, d2s)]
            entry = {"method": method, "d1_size": d1s, "d2_size": d2s,
                     "n_diverged": slot["n_diverged"],
                     "n_fit_failures": slot["n_fit_failures"]}
            if slot["shape"]:
                entry["shape"] = _agg(np.concatenate(slot["shape"]))
            if slot["vel"]:
                entry["vel"] = _agg(np.concatenate(slot["vel"]))
            out.append(entry)
        return out


def _cell_grid(cfg: ExperimentConfig):
    """Deterministic cell order. Methods that never read D2 get a single
    pseudo-cell per |D1| with d2_size recorded as 0."""
    for seed in cfg.seeds:
        for method in cfg.methods:
            d2_values = cfg.d2_grid if method == "pi" else (0,)
            for d1_size in cfg.d1_grid:
                for d2_size in d2_values:
                    yield seed, method, d1_size, d2_size


def run_sweep(cfg: ExperimentConfig, out_dir=None, jobs: int = 1,
              log: Callable[[str], None] | None = None) -> ErrorReport:
    """Run the full study described by ``cfg``.

    Master datasets are generated once per seed up front; grid cells are
    independent jobs on a bounded worker pool and merged in a fixed order,
    so the emitted files do not depend on scheduling. When ``out_dir`` is
    given, ``report.csv`` and ``report.json`` are written there.
    """
    cfg.validate()
    say = log or (lambda msg: None)
    cells: list[CellResult] = []
    for seed in cfg.seeds:
        say(f"seed {seed}: generating master datasets")
        bench = prepare_benchmark(cfg, seed)
        work = [(method, d1s, d2s)
                for s, method, d1s, d2s in _cell_grid(cfg) if s == seed]
        if jobs > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as ex:
                futs = [ex.submit(_run_cell, bench, cfg, seed, m, a, b)
                        for (m, a, b) in work]
                results = [f.result() for f in futs]
        else:
            results = [_run_cell(bench, cfg, seed, m, a, b)
                       for (m, a, b) in work]
        for r in results:
            tag = f"fit failed: {r.fit_error}" if r.fit_error else \
                f"median shape {np.median(r.shape_err):.3e}"
            say(f"seed {seed} {r.method} |D1|={r.d1_size} "
                f"|D2|={r.d2_size}: {tag}")
        cells.extend(results)
    report = ErrorReport(config=cfg, cells=cells)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _build_stamp() -> dict:
    stamp = {"package": "splitkoop", "version": splitkoop.__version__}
    try:
        proc = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True,
            cwd=os.path.dirname(os.path.abspath(__file__)), timeout=10)
        if proc.returncode == 0:
            stamp["revision"] = proc.stdout.strip()
    except OSError:
        pass
    return stamp


def write_report(report: ErrorReport, out_dir) -> None:
    """Emit ``report.csv`` (long format, repr-exact floats) and
    ``report.json`` (aggregates, flags, config echo, build stamp)."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for c in report.cells:
            if c.fit_error is not None:
                continue
            for i in range(len(c.shape_err)):
                vel = "" if c.vel_err is None else repr(float(c.vel_err[i]))
                w.writerow([c.seed, c.method, c.d1_size, c.d2_size,
                            int(c.traj[i]), int(c.step[i]),
                            repr(float(c.shape_err[i])), vel])
    doc = {
        "build": _build_stamp(),
        "config": report.config.to_dict(),
        "cells": [c.aggregates() for c in report.cells],
        "aggregates": report.pooled_aggregates(),
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_report(out_dir):
    """Read back (rows, json_doc) from a report directory. Rows are dicts
    with numeric fields converted; ``vel_err`` is None when absent."""
    rows = []
    with open(os.path.join(out_dir, "report.csv"), newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append({
                "seed": int(rec["seed"]), "method": rec["method"],
                "d1_size": int(rec["d1_size"]), "d2_size": int(rec["d2_size"]),
                "traj": int(rec["traj"]), "step": int(rec["step"]),
                "shape_err": float(rec["shape_err"]),
                "vel_err": float(rec["vel_err"]) if rec["vel_err"] else None,
            })
    with open(os.path.join(out_dir, "report.json")) as fh:
        doc = json.load(fh)
    return rows, doc


def _series(rows, metric):
    """Group rows into {(method, d2_size): (d1_sizes, med, q25, q75)}."""
    groups: dict[tuple, dict[int, list[float]]] = {}
    for r in rows:
        if r[metric] is None:
            continue
        slot = groups.setdefault((r["method"], r["d2_size"]), {})
        slot.setdefault(r["d1_size"], []).append(r[metric])
    series = {}
    for key, per_d1 in groups.items():
        d1s = sorted(per_d1)
        med = [float(np.median(per_d1[v])) for v in d1s]
        q25 = [float(np.percentile(per_d1[v], 25)) for v in d1s]
        q75 = [float(np.percentile(per_d1[v], 75)) for v in d1s]
        series[key] = (d1s, med, q25, q75)
    return series


def plot_report(rows, out_dir) -> list[str]:
    """SVG line plots of median error vs |D1| with IQR bands, per metric."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    labels = {"shape_err": "median squared shape error",
              "vel_err": "median squared distal velocity error"}
    for metric, ylabel in labels.items():
        series = _series(rows, metric)
        if not series:
            continue
        fig, ax = plt.subplots(figsize=(5.5, 4.0))
        for (method, d2_size) in sorted(series):
            d1s, med, q25, q75 = series[(method, d2_size)]
            label = method.upper()
            if d2_size:
                label += f" (|D2|={d2_size})"
            ax.plot(d1s, med, marker="o", label=label)
            ax.fill_between(d1s, q25, q75, alpha=0.2)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("|D1| (trajectory records)")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"report_{metric.replace('_err', '')}.svg")
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def summarize_report(rows) -> str:
    """Plain-text summary table: pooled median errors per cell."""
    lines = [f"{'method':>8} {'|D1|':>8} {'|D2|':>8} "
             f"{'shape med':>12} {'vel med':>12}"]
    for metric_series in [_series(rows, "shape_err")]:
        for (method, d2_size) in sorted(metric_series):
            d1s, med, _, _ = metric_series[(method, d2_size)]
            vel = _series(rows, "vel_err").get((method, d2_size))
            for i, d1 in enumerate(d1s):
                vel_str = f"{vel[1][i]:12.4e}" if vel else f"{'-':>12}"
                lines.append(f"{method:>8} {d1:>8} {d2_size:>8} "
                             f"{med[i]:12.4e} {vel_str}")
    return "\n".join(lines)
