"""Split-dynamics benchmark systems, integration, and dataset generation.

Every benchmark exposes a known right-hand side ``f`` and an unknown one
``h`` with full dynamics ``xdot = f(x, u) + h(x, u)``. Trajectory datasets
(state, next-state, control triples) and phase-space datasets (state,
control pairs) feed the operator fits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "SplitSystem",
    "TrajectoryDataset",
    "PhaseDataset",
    "rk4_step",
    "simulate",
    "sample_phase_lhs",
    "sample_velocity_gaussian",
    "make_d1",
    "duffing",
    "pendulum",
]

RHS = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SplitSystem:
    """Continuous-time system split into known and unknown terms."""

    name: str
    n: int
    m: int
    f: RHS
    h: RHS
    state_bounds: np.ndarray    # (n, 2) low/high
    control_bounds: np.ndarray  # (m, 2)

    def rhs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.f(x, u) + self.h(x, u)


@dataclass
class TrajectoryDataset:
    """Consecutive (x, x', u) records with per-trajectory bookkeeping.

    Records of one trajectory are contiguous and step-ordered, which the
    delay lifting relies on. Arrays are column-per-sample.
    """

    x: np.ndarray        # (n, N)
    xp: np.ndarray       # (n, N)
    u: np.ndarray        # (m, N)
    traj_id: np.ndarray  # (N,)
    step: np.ndarray     # (N,)
    dt: float

    def __post_init__(self):
        n_samples = self.x.shape[1]
        for name in ("xp", "u", "traj_id", "step"):
            if getattr(self, name).shape[-1] != n_samples:
                raise ValueError(f"{name} length does not match x")
        ids = self.traj_id
        if n_samples:
            changes = np.flatnonzero(np.diff(ids) != 0)
            seen = ids[np.concatenate([[0], changes + 1])]
            if len(set(seen.tolist())) != len(seen):
                raise ValueError("trajectory records must be contiguous")

    def __len__(self) -> int:
        return self.x.shape[1]

    def prefix(self, n_records: int) -> "TrajectoryDataset":
        """First ``n_records`` records (nested subsets for sweep grids)."""
        s = slice(0, n_records)
        return TrajectoryDataset(self.x[:, s], self.xp[:, s], self.u[:, s],
                                 self.traj_id[s], self.step[s], self.dt)

    def to_csv(self, path) -> None:
        n, m = self.x.shape[0], self.u.shape[0]
        header = (["traj_id", "step"]
                  + [f"x{i+1}" for i in range(n)]
                  + [f"xp{i+1}" for i in range(n)]
                  + [f"u{i+1}" for i in range(m)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dt", repr(self.dt)])
            w.writerow(header)
            for i in range(len(self)):
                row = [int(self.traj_id[i]), int(self.step[i])]
                row += [repr(float(v)) for v in self.x[:, i]]
                row += [repr(float(v)) for v in self.xp[:, i]]
                row += [repr(float(v)) for v in self.u[:, i]]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "TrajectoryDataset":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            dt = float(next(r)[1])
            header = next(r)
            n = sum(1 for c in header if c.startswith("x") and not c.startswith("xp"))
            m = sum(1 for c in header if c.startswith("u"))
            rows = list(r)
        count = len(rows)
        x = np.empty((n, count)); xp = np.empty((n, count)); u = np.empty((m, count))
        tid = np.empty(count, dtype=int); step = np.empty(count, dtype=int)
        for i, row in enumerate(rows):
            tid[i], step[i] = int(row[0]), int(row[1])
            vals = [float(v) for v in row[2:]]
            x[:, i] = vals[:n]; xp[:, i] = vals[n:2 * n]; u[:, i] = vals[2 * n:]
        return cls(x, xp, u, tid, step, dt)

    def to_npz(self, path) -> None:
        np.savez(path, x=self.x, xp=self.xp, u=self.u,
                 traj_id=self.traj_id, step=self.step, dt=np.float64(self.dt))

    @classmethod
    def from_npz(cls, path) -> "TrajectoryDataset":
        z = np.load(path)
        return cls(z["x"], z["xp"], z["u"], z["traj_id"], z["step"], float(z["dt"]))


@dataclass
class PhaseDataset:
    """Phase-space samples (x_i, u_i), column-per-sample.

    ``fvals`` optionally carries precomputed values of the known term at each
    sample, for systems whose known dynamics cannot be re-evaluated from the
    learning state alone (the reduced rod state).
    """

    x: np.ndarray  # (n, N)
    u: np.ndarray  # (m, N)
    fvals: np.ndarray | None = None  # (n, N)

    def __len__(self) -> int:
        return self.x.shape[1]

    def prefix(self, n_records: int) -> "PhaseDataset":
        f = None if self.fvals is None else self.fvals[:, :n_records]
        return PhaseDataset(self.x[:, :n_records], self.u[:, :n_records], f)

    def to_npz(self, path) -> None:
        data = {"x": self.x, "u": self.u}
        if self.fvals is not None:
            data["fvals"] = self.fvals
        np.savez(path, **data)

    @classmethod
    def from_npz(cls, path) -> "PhaseDataset":
        z = np.load(path)
        return cls(z["x"], z["u"], z["fvals"] if "fvals" in z else None)

    def to_csv(self, path) -> None:
        n, m = self.x.shape[0], self.u.shape[0]
        header = [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self)):
                w.writerow([repr(float(v)) for v in self.x[:, i]]
                           + [repr(float(v)) for v in self.u[:, i]])

    @classmethod
    def from_csv(cls, path) -> "PhaseDataset":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            n = sum(1 for c in header if c.startswith("x"))
            rows = list(r)
        x = np.array([[float(v) for v in row[:n]] for row in rows]).T
        u = np.array([[float(v) for v in row[n:]] for row in rows]).T
        return cls(x.reshape(n, -1), u.reshape(len(header) - n, -1))


def rk4_step(rhs: RHS, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Classical 4th-order Runge-Kutta step with the control held constant."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    k1 = rhs(x, u)
    k2 = rhs(x + 0.5 * dt * k1, u)
    k3 = rhs(x + 0.5 * dt * k2, u)
    k4 = rhs(x + dt * k3, u)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite state after RK4 step from x={x}")
    return out


def simulate(sys: SplitSystem, x0, u_schedule, steps: int, dt: float,
             substeps: int = 1) -> np.ndarray:
    """Integrate ``steps`` output intervals; returns states (steps+1, n).

    ``u_schedule`` is either an array (m, steps) or a callable step -> u.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((steps + 1, sys.n))
    out[0] = x
    h = dt / substeps
    for k in range(steps):
        u = u_schedule(k) if callable(u_schedule) else np.asarray(u_schedule)[:, k]
        for _ in range(substeps):
            x = rk4_step(sys.rhs, x, u, h)
        out[k + 1] = x
    return out


def sample_phase_lhs(bounds, n_samples: int, seed: int) -> np.ndarray:
    """Latin hypercube design over a box; returns (dim, N).

    Each dimension is split into N equal strata with exactly one sample per
    stratum, placed uniformly within it; stratum order is a seeded
    permutation per dimension.
    """
    bounds = np.asarray(bounds, dtype=float)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not np.all(np.isfinite(bounds)):
        raise ValueError("bounds must be finite")
    rng = np.random.default_rng(seed)
    dim = bounds.shape[0]
    out = np.empty((dim, n_samples))
    for d in range(dim):
        strata = rng.permutation(n_samples)
        jitter = rng.random(n_samples)
        unit = (strata + jitter) / n_samples
        lo, hi = bounds[d]
        out[d] = lo + unit * (hi - lo)
    return out


def sample_velocity_gaussian(cov, n_samples: int, seed: int) -> np.ndarray:
    """Zero-mean Gaussian draws with the given covariance; returns (dim, N).

    A diagonal jitter of 1e-12 covers semi-definite covariances.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("cov must be square")
    if not np.allclose(cov, cov.T):
        raise ValueError("cov must be symmetric")
    dim = cov.shape[0]
    try:
        chol = np.linalg.cholesky(cov + 1e-12 * np.eye(dim))
    except np.linalg.LinAlgError as exc:
        raise ValueError("cov is not positive semi-definite") from exc
    rng = np.random.default_rng(seed)
    return chol @ rng.standard_normal((dim, n_samples))


def piecewise_constant_policy(sys: SplitSystem, rng: np.random.Generator,
                              steps: int, hold_steps: int = 10) -> np.ndarray:
    lo, hi = sys.control_bounds[:, 0], sys.control_bounds[:, 1]
    n_holds = -(-steps // hold_steps)
    levels = lo[:, None] + rng.random((sys.m, n_holds)) * (hi - lo)[:, None]
    return np.repeat(levels, hold_steps, axis=1)[:, :steps]


def sinusoidal_policy(sys: SplitSystem, rng: np.random.Generator,
                      steps: int, dt: float) -> np.ndarray:
    lo, hi = sys.control_bounds[:, 0], sys.control_bounds[:, 1]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    amp = half * rng.random(sys.m)
    freq = 0.2 + 1.8 * rng.random(sys.m)
    phase = 2 * np.pi * rng.random(sys.m)
    t = dt * np.arange(steps)
    return mid[:, None] + amp[:, None] * np.sin(2 * np.pi * freq[:, None] * t + phase[:, None])


def make_d1(sys: SplitSystem, n_traj: int, steps: int, dt: float, seed: int,
            policy: str = "piecewise", hold_steps: int = 10,
            substeps: int = 1) -> TrajectoryDataset:
    """Simulate trajectories from LHS initial states and emit (x, x', u) records.

    Per-trajectory seeds are derived from ``seed`` so generation is
    deterministic regardless of execution order.
    """
    x0s = sample_phase_lhs(sys.state_bounds, n_traj, seed)
    child_seeds = np.random.SeedSequence(seed).spawn(n_traj)
    xs, xps, us, tids, stps = [], [], [], [], []
    for t in range(n_traj):
        rng = np.random.default_rng(child_seeds[t])
        if policy == "piecewise":
            u_traj = piecewise_constant_policy(sys, rng, steps, hold_steps)
        elif policy == "sinusoidal":
            u_traj = sinusoidal_policy(sys, rng, steps, dt)
        else:
            raise ValueError(f"unknown control policy {policy!r}")
        states = simulate(sys, x0s[:, t], u_traj, steps, dt, substeps)
        xs.append(states[:-1].T)
        xps.append(states[1:].T)
        us.append(u_traj)
        tids.append(np.full(steps, t, dtype=int))
        stps.append(np.arange(steps, dtype=int))
    return TrajectoryDataset(
        x=np.concatenate(xs, axis=1), xp=np.concatenate(xps, axis=1),
        u=np.concatenate(us, axis=1), traj_id=np.concatenate(tids),
        step=np.concatenate(stps), dt=dt,
    )


def duffing(delta: float = 0.2, alpha: float = -1.0, beta: float = 1.0,
            coupling: float = 0.5) -> SplitSystem:
    """Forced Duffing oscillator; the unknown term mixes the drive with an
    unmodeled state coupling."""

    def f(x, u):
        return np.array([x[1], -delta * x[1] - alpha * x[0] - beta * x[0] ** 3])

    def h(x, u):
        return np.array([0.0, u[0] + coupling * np.sin(x[0])])

    return SplitSystem(
        name="duffing", n=2, m=1, f=f, h=h,
        state_bounds=np.array([[-2.0, 2.0], [-2.0, 2.0]]),
        control_bounds=np.array([[-1.0, 1.0]]),
    )


def pendulum(grav: float = 9.81, length: float = 1.0, mass: float = 1.0,
             gamma: float = 0.3) -> SplitSystem:
    """Damped pendulum with torque input as the unknown term."""

    def f(x, u):
        return np.array([x[1], -(grav / length) * np.sin(x[0]) - gamma * x[1]])

    def h(x, u):
        return np.array([0.0, u[0] / (mass * length ** 2)])

    return SplitSystem(
        name="pendulum", n=2, m=1, f=f, h=h,
        state_bounds=np.array([[-np.pi, np.pi], [-4.0, 4.0]]),
        control_bounds=np.array([[-2.0, 2.0]]),
    )
