"""Planar Cosserat rod with two antagonistic tendons.

Semi-discretized rod dynamics (method of lines, central differences in
arclength, explicit RK4 in time), a static-equilibrium shooting solver for
phase-space sampling, and uniform node downsampling to a reduced learning
state.

State layout: per node ``[px, py, phi, vx, vy, w, qx, qy, omega]`` where
``p`` is position (m), ``phi`` the cross-section angle (rad), ``v`` the
stretch/shear strain, ``w`` the curvature (1/m), ``q`` the body-frame linear
velocity (m/s) and ``omega`` the angular velocity (rad/s). Node 0 is clamped
at the origin. The flat vector concatenates nodes in order, 9 entries each.

The dynamics split into a passive backbone term (known) and an
actuation/external term (unknown): tendon tensions apply a distributed
moment ``(u1 - u2) * offset`` and a compressive tangential force
``-(u1 + u2)``; gravity is grouped with the unknown term as an external
load.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from splitkoop.systems import PhaseDataset, TrajectoryDataset, sample_phase_lhs, \
    sample_velocity_gaussian

__all__ = [
    "RodParams",
    "RodState",
    "VARS_PER_NODE",
    "rod_rhs",
    "rod_step",
    "rod_energy",
    "stability_estimate",
    "static_shoot",
    "make_rod_d2",
    "reduce_phase",
    "downsample",
    "downsample_indices",
    "position_indices",
    "tip_velocity_indices",
    "velocity_indices",
]

VARS_PER_NODE = 9


@dataclass(frozen=True)
class RodParams:
    """Material, geometric and actuation parameters of the planar rod."""

    length: float = 0.25          # m
    n_nodes: int = 41
    rho: float = 1000.0           # kg/m^3
    radius: float = 5e-3          # m (solid circular cross-section)
    youngs: float = 1.0e6         # Pa
    poisson: float = 0.5
    damp_se: float = 0.0          # Kelvin-Voigt viscosity on strain rate
    damp_bt: float = 0.0          # Kelvin-Voigt viscosity on curvature rate
    tendon_offset: float = 5e-3   # m
    gravity: float = 0.0          # m/s^2, world -y
    v_star: tuple[float, float] = (1.0, 0.0)
    w_star: float = 0.0

    def __post_init__(self):
        if self.n_nodes < 3:
            raise ValueError("n_nodes must be >= 3")
        for name in ("length", "rho", "radius", "youngs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def area(self) -> float:
        return np.pi * self.radius ** 2

    @property
    def inertia(self) -> float:
        return np.pi * self.radius ** 4 / 4.0

    @property
    def shear_mod(self) -> float:
        return self.youngs / (2.0 * (1.0 + self.poisson))

    @property
    def k_se(self) -> np.ndarray:
        return np.array([self.youngs * self.area, self.shear_mod * self.area])

    @property
    def k_bt(self) -> float:
        return self.youngs * self.inertia

    @property
    def ds(self) -> float:
        return self.length / (self.n_nodes - 1)

    def to_dict(self) -> dict:
        return {
            "length": self.length, "n_nodes": self.n_nodes, "rho": self.rho,
            "radius": self.radius, "youngs": self.youngs, "poisson": self.poisson,
            "damp_se": self.damp_se, "damp_bt": self.damp_bt,
            "tendon_offset": self.tendon_offset, "gravity": self.gravity,
            "v_star": tuple(self.v_star), "w_star": self.w_star,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RodParams":
        d = dict(d)
        if "v_star" in d:
            d["v_star"] = tuple(d["v_star"])
        return cls(**d)


@dataclass
class RodState:
    """Per-node fields of the rod; node 0 is clamped."""

    p: np.ndarray      # (N, 2)
    phi: np.ndarray    # (N,)
    v: np.ndarray      # (N, 2)
    w: np.ndarray      # (N,)
    q: np.ndarray      # (N, 2)
    omega: np.ndarray  # (N,)

    @property
    def n_nodes(self) -> int:
        return self.p.shape[0]

    def to_vector(self) -> np.ndarray:
        out = np.empty((self.n_nodes, VARS_PER_NODE))
        out[:, 0:2] = self.p
        out[:, 2] = self.phi
        out[:, 3:5] = self.v
        out[:, 5] = self.w
        out[:, 6:8] = self.q
        out[:, 8] = self.omega
        return out.ravel()

    @classmethod
    def from_vector(cls, y: np.ndarray) -> "RodState":
        y = np.asarray(y, dtype=float).reshape(-1, VARS_PER_NODE)
        return cls(p=y[:, 0:2].copy(), phi=y[:, 2].copy(), v=y[:, 3:5].copy(),
                   w=y[:, 5].copy(), q=y[:, 6:8].copy(), omega=y[:, 8].copy())

    def copy(self) -> "RodState":
        return RodState(self.p.copy(), self.phi.copy(), self.v.copy(),
                        self.w.copy(), self.q.copy(), self.omega.copy())


def reference_state(params: RodParams) -> RodState:
    """Straight rod at rest along +x with reference strain."""
    n = params.n_nodes
    s = np.linspace(0.0, params.length, n)
    p = np.column_stack([s, np.zeros(n)])
    return RodState(p=p, phi=np.zeros(n), v=np.tile(params.v_star, (n, 1)),
                    w=np.zeros(n), q=np.zeros((n, 2)), omega=np.zeros(n))


def _dds(arr: np.ndarray, ds: float) -> np.ndarray:
    """Second-order arclength derivative: central interior, one-sided ends."""
    out = np.empty_like(arr)
    out[1:-1] = (arr[2:] - arr[:-2]) / (2.0 * ds)
    out[0] = (-3.0 * arr[0] + 4.0 * arr[1] - arr[2]) / (2.0 * ds)
    out[-1] = (3.0 * arr[-1] - 4.0 * arr[-2] + arr[-3]) / (2.0 * ds)
    return out


def _perp(a: np.ndarray) -> np.ndarray:
    """90-degree rotation (z cross in-plane vector): (x, y) -> (-y, x)."""
    return np.column_stack([-a[..., 1], a[..., 0]])


def _rot(phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.cos(phi), np.sin(phi)


def _rhs_split_arrays(params: RodParams, st: RodState, u: np.ndarray):
    """Known/unknown derivative fields. Clamped-base rows are zeroed."""
    ds = params.ds
    k_se, k_bt = params.k_se, params.k_bt
    rho_a = params.rho * params.area
    rho_i = params.rho * params.inertia
    c, s = _rot(st.phi)

    # kinematics and compatibility (known part)
    dp = np.column_stack([c * st.q[:, 0] - s * st.q[:, 1],
                          s * st.q[:, 0] + c * st.q[:, 1]])
    dphi = st.omega.copy()
    q_s = _dds(st.q, ds)
    omega_s = _dds(st.omega, ds)
    dv = q_s + st.w[:, None] * _perp(st.q) - st.omega[:, None] * _perp(st.v)
    dw = omega_s

    # internal loads (Kelvin-Voigt), free-tip condition
    v_err = st.v - np.asarray(params.v_star)
    n_int = v_err * k_se + params.damp_se * dv
    m_int = k_bt * (st.w - params.w_star) + params.damp_bt * dw
    n_int[-1] = 0.0
    m_int[-1] = 0.0

    n_s = _dds(n_int, ds)
    m_s = _dds(m_int, ds)
    dq = (n_s + st.w[:, None] * _perp(n_int)) / rho_a - st.omega[:, None] * _perp(st.q)
    domega = (m_s + st.v[:, 0] * n_int[:, 1] - st.v[:, 1] * n_int[:, 0]) / rho_i

    # unknown part: tendon wrench + gravity on the velocity equations
    u = np.asarray(u, dtype=float)
    tension_sum = u[0] + u[1]
    tension_diff = u[0] - u[1]
    v_norm = np.linalg.norm(st.v, axis=1)
    v_norm = np.where(v_norm > 1e-12, v_norm, 1.0)
    tangent = st.v / v_norm[:, None]
    dq_h = -tension_sum * tangent / rho_a
    if params.gravity != 0.0:
        g_world = np.array([0.0, -params.gravity])
        dq_h = dq_h + np.column_stack([c * g_world[0] + s * g_world[1],
                                       -s * g_world[0] + c * g_world[1]])
    domega_h = np.full(params.n_nodes,
                       tension_diff * params.tendon_offset / rho_i)

    zero2 = np.zeros((params.n_nodes, 2))
    zero1 = np.zeros(params.n_nodes)
    df = RodState(p=dp, phi=dphi, v=dv, w=dw, q=dq, omega=domega)
    dh = RodState(p=zero2, phi=zero1.copy(), v=zero2.copy(), w=zero1.copy(),
                  q=dq_h, omega=domega_h)
    # clamped base: position/orientation/velocity rows do not evolve
    for part in (df, dh):
        part.p[0] = 0.0
        part.phi[0] = 0.0
        part.q[0] = 0.0
        part.omega[0] = 0.0
    return df, dh


def rod_rhs(params: RodParams, state: RodState, u) -> tuple[RodState, RodState]:
    """Time derivative of the rod state split into (known, unknown) parts."""
    u = np.asarray(u, dtype=float)
    if u.shape != (2,):
        raise ValueError("rod takes two tendon tensions")
    if np.any(u < -1e-12):
        raise ValueError("tendon tensions must be non-negative")
    df, dh = _rhs_split_arrays(params, state, u)
    for part, tag in ((df, "known"), (dh, "unknown")):
        vec = part.to_vector()
        if not np.all(np.isfinite(vec)):
            bad = int(np.flatnonzero(~np.isfinite(vec))[0] // VARS_PER_NODE)
            raise FloatingPointError(f"non-finite {tag} derivative at node {bad}")
    return df, dh


def _rhs_flat(params: RodParams, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    df, dh = _rhs_split_arrays(params, RodState.from_vector(y), u)
    return df.to_vector() + dh.to_vector()


def rod_energy(params: RodParams, state: RodState) -> float:
    """Total energy: elastic + kinetic + gravitational (trapezoid in s)."""
    wts = np.full(params.n_nodes, params.ds)
    wts[0] *= 0.5
    wts[-1] *= 0.5
    v_err = state.v - np.asarray(params.v_star)
    elastic = 0.5 * np.sum(wts * (np.sum(v_err ** 2 * params.k_se, axis=1)
                                  + params.k_bt * (state.w - params.w_star) ** 2))
    kinetic = 0.5 * np.sum(wts * (params.rho * params.area * np.sum(state.q ** 2, axis=1)
                                  + params.rho * params.inertia * state.omega ** 2))
    grav = params.rho * params.area * params.gravity * np.sum(wts * state.p[:, 1])
    return float(elastic + kinetic + grav)


def stability_estimate(params: RodParams, safety: float = 0.5) -> float:
    """Largest safe explicit substep.

    Minimum of the CFL bound from the elastic wave speeds and the diffusive
    bound from the Kelvin-Voigt terms (whose semi-discrete eigenvalues scale
    as -4 D / ds^2, within the RK4 real-axis stability interval of ~2.78).
    """
    c_long = np.sqrt(params.youngs / params.rho)
    c_shear = np.sqrt(params.shear_mod / params.rho)
    c_bend = np.sqrt(params.k_bt / (params.rho * params.inertia))
    h = safety * params.ds / max(c_long, c_shear, c_bend)
    d_max = max(params.damp_se / (params.rho * params.area),
                params.damp_bt / (params.rho * params.inertia))
    if d_max > 0.0:
        h = min(h, safety * 0.696 * params.ds ** 2 / d_max)
    return h


def rod_step(params: RodParams, state: RodState, u, dt: float,
             substeps: int | None = None) -> RodState:
    """Advance the rod by ``dt`` with RK4 substeps below the stability bound."""
    if substeps is None:
        substeps = max(1, int(np.ceil(dt / stability_estimate(params))))
    h = dt / substeps
    if h > stability_estimate(params) * 1.0001:
        raise ValueError(
            f"substep {h:g} exceeds stability bound {stability_estimate(params):g}")
    u = np.asarray(u, dtype=float)
    e0 = rod_energy(params, state)
    y = state.to_vector()
    for _ in range(substeps):
        k1 = _rhs_flat(params, y, u)
        k2 = _rhs_flat(params, y + 0.5 * h * k1, u)
        k3 = _rhs_flat(params, y + 0.5 * h * k2, u)
        k4 = _rhs_flat(params, y + h * k3, u)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("rod state became non-finite; reduce substep")
    out = RodState.from_vector(y)
    e1 = rod_energy(params, out)
    scale = abs(e0) + params.k_bt / params.length
    if e1 - e0 > 10.0 * scale:
        raise FloatingPointError(
            f"energy grew from {e0:g} to {e1:g} over one step; reduce substep")
    return out


def _static_rhs(params: RodParams, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Arclength ODE of the static rod: y = (px, py, phi, Nx, Ny, M).

    N is the internal force in world coordinates, M the internal moment.
    """
    phi = y[2]
    big_n = y[3:5]
    c, s = np.cos(phi), np.sin(phi)
    n_body = np.array([c * big_n[0] + s * big_n[1], -s * big_n[0] + c * big_n[1]])
    v = np.asarray(params.v_star) + n_body / params.k_se
    w = y[5] / params.k_bt
    p_s = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])
    # distributed loads: tendon (body-frame tangential + moment) and gravity
    v_norm = np.linalg.norm(v)
    tangent = v / v_norm if v_norm > 1e-12 else np.array([1.0, 0.0])
    f_body = -(u[0] + u[1]) * tangent
    f_world = np.array([c * f_body[0] - s * f_body[1],
                        s * f_body[0] + c * f_body[1]])
    f_world = f_world + params.rho * params.area * np.array([0.0, -params.gravity])
    l_dist = (u[0] - u[1]) * params.tendon_offset
    return np.array([
        p_s[0], p_s[1], w,
        -f_world[0], -f_world[1],
        -(p_s[0] * big_n[1] - p_s[1] * big_n[0]) - l_dist,
    ])


def _integrate_static(params: RodParams, base_load: np.ndarray, u: np.ndarray):
    """RK4 in arclength over the node grid; returns (trajectory, tip load)."""
    h = params.ds
    y = np.array([0.0, 0.0, 0.0, base_load[0], base_load[1], base_load[2]])
    traj = np.empty((params.n_nodes, 6))
    traj[0] = y
    for i in range(params.n_nodes - 1):
        k1 = _static_rhs(params, y, u)
        k2 = _static_rhs(params, y + 0.5 * h * k1, u)
        k3 = _static_rhs(params, y + 0.5 * h * k2, u)
        k4 = _static_rhs(params, y + h * k3, u)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        traj[i + 1] = y
    return traj, y[3:6]


class ShootingError(RuntimeError):
    """Newton iteration on the tip residual failed to converge."""

    def __init__(self, residual_norm: float, iterations: int):
        self.residual_norm = residual_norm
        self.iterations = iterations
        super().__init__(
            f"shooting failed: residual {residual_norm:g} after {iterations} iterations")


def _refine_discrete(params: RodParams, state: RodState, u: np.ndarray,
                     tol: float = 1e-8, max_iter: int = 20) -> RodState:
    """Polish an equilibrium against the semi-discrete operator.

    Shooting solves the continuous statics; evaluated through the
    finite-difference stencils it leaves an O(ds^2) acceleration residual
    that the tiny rotary inertia amplifies. Newton on the strain fields
    (nodes 0..N-2; tip strains never enter because the free-tip loads are
    imposed) drives the discrete velocity equations to zero.
    """
    u = np.asarray(u, dtype=float)
    n = params.n_nodes
    st = state.copy()
    st.q[:] = 0.0
    st.omega[:] = 0.0

    def unpack(z):
        st.v[:-1] = z[: 2 * (n - 1)].reshape(n - 1, 2)
        st.w[:-1] = z[2 * (n - 1):]
        st.v[-1] = params.v_star
        st.w[-1] = params.w_star
        # orientation follows the curvature field (matters under gravity)
        st.phi[:] = np.concatenate(
            [[0.0], np.cumsum(0.5 * (st.w[1:] + st.w[:-1]) * params.ds)])

    def residual(z):
        unpack(z)
        df, dh = _rhs_split_arrays(params, st, u)
        acc = df.to_vector() + dh.to_vector()
        acc = acc.reshape(n, VARS_PER_NODE)[1:, 6:9]
        return acc.ravel()

    z = np.concatenate([state.v[:-1].ravel(), state.w[:-1]])
    r = residual(z)
    dim = z.size
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            break
        jac = np.empty((dim, dim))
        for j in range(dim):
            zp = z.copy()
            eps = 1e-7 * max(1.0, abs(z[j]))
            zp[j] += eps
            jac[:, j] = (residual(zp) - r) / eps
        try:
            delta = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as exc:
            raise ShootingError(float(np.linalg.norm(r)), 0) from exc
        step = 1.0
        for _ in range(30):
            r_trial = residual(z - step * delta)
            if np.linalg.norm(r_trial) < np.linalg.norm(r):
                z = z - step * delta
                r = r_trial
                break
            step *= 0.5
        else:
            raise ShootingError(float(np.linalg.norm(r)), 0)
    if np.max(np.abs(r)) >= tol:
        raise ShootingError(float(np.linalg.norm(r)), max_iter)
    unpack(z)
    # rebuild positions from the refined strain/orientation fields
    c, s = _rot(st.phi)
    dp = np.column_stack([c * st.v[:, 0] - s * st.v[:, 1],
                          s * st.v[:, 0] + c * st.v[:, 1]])
    st.p[:, 0] = np.concatenate(
        [[0.0], np.cumsum(0.5 * (dp[1:, 0] + dp[:-1, 0]) * params.ds)])
    st.p[:, 1] = np.concatenate(
        [[0.0], np.cumsum(0.5 * (dp[1:, 1] + dp[:-1, 1]) * params.ds)])
    return st


def _shoot_base_load(params: RodParams, u: np.ndarray, target: np.ndarray,
                     tol: float, max_iter: int, guess: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(u))), float(np.max(np.abs(target))))

    def residual(g):
        _, tip = _integrate_static(params, g, u)
        return tip - target

    guess = np.asarray(guess, dtype=float).copy()
    r = residual(guess)
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(r) < tol * scale:
            break
        jac = np.empty((3, 3))
        eps = 1e-7 * scale
        for j in range(3):
            g = guess.copy()
            g[j] += eps
            jac[:, j] = (residual(g) - r) / eps
        try:
            delta = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as exc:
            raise ShootingError(float(np.linalg.norm(r)), it) from exc
        step = 1.0
        for _ in range(20):
            trial = guess - step * delta
            r_trial = residual(trial)
            if np.linalg.norm(r_trial) < np.linalg.norm(r):
                guess, r = trial, r_trial
                break
            step *= 0.5
        else:
            raise ShootingError(float(np.linalg.norm(r)), it)
    if np.linalg.norm(r) >= tol * scale:
        raise ShootingError(float(np.linalg.norm(r)), it)
    return guess


def static_shoot(params: RodParams, u, tol: float = 1e-10, max_iter: int = 50,
                 tip_force=(0.0, 0.0), tip_moment: float = 0.0,
                 refine: bool = False) -> RodState:
    """Static equilibrium by shooting on the base internal force and moment.

    Integrates the static ODE along arclength and Newton-iterates (forward
    finite-difference Jacobian) on the free-tip residual: internal loads at
    the tip must match the applied tip load (zero by default). Returns the
    equilibrium with zero velocities. With ``refine`` the solution is
    polished into a fixed point of the semi-discrete dynamics.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    u = np.asarray(u, dtype=float)
    target = np.array([tip_force[0], tip_force[1], tip_moment])
    try:
        guess = _shoot_base_load(params, u, target, tol, max_iter, np.zeros(3))
    except ShootingError:
        if params.gravity == 0.0:
            raise
        # heavy droop: continuation in gravity from the weightless solution
        guess = np.zeros(3)
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            pg = replace(params, gravity=frac * params.gravity)
            guess = _shoot_base_load(pg, u, target, tol, max_iter, guess)

    traj, _ = _integrate_static(params, guess, u)
    phi = traj[:, 2]
    c, s = np.cos(phi), np.sin(phi)
    big_n = traj[:, 3:5]
    n_body = np.column_stack([c * big_n[:, 0] + s * big_n[:, 1],
                              -s * big_n[:, 0] + c * big_n[:, 1]])
    v = np.asarray(params.v_star) + n_body / params.k_se
    w = traj[:, 5] / params.k_bt
    n = params.n_nodes
    st = RodState(p=traj[:, 0:2].copy(), phi=phi.copy(), v=v, w=w,
                  q=np.zeros((n, 2)), omega=np.zeros(n))
    if refine:
        st = _refine_discrete(params, st, u)
    return st


def downsample_indices(n_nodes: int, k: int) -> np.ndarray:
    if not 1 <= k <= n_nodes:
        raise ValueError("k must be in 1..n_nodes")
    return np.round(np.linspace(0, n_nodes - 1, k)).astype(int)


def downsample(state: RodState, k: int) -> np.ndarray:
    """Reduced learning state: k nodes uniform in arclength, 9 values each."""
    idx = downsample_indices(state.n_nodes, k)
    return state.to_vector().reshape(-1, VARS_PER_NODE)[idx].ravel()


def _block_indices(k: int, offsets) -> np.ndarray:
    return np.concatenate([VARS_PER_NODE * j + np.asarray(offsets, dtype=int)
                           for j in range(k)])


def position_indices(k: int) -> np.ndarray:
    """Indices of the node positions inside a reduced state of k nodes."""
    return _block_indices(k, [0, 1])


def velocity_indices(k: int) -> np.ndarray:
    """Indices of all linear/angular velocities in a reduced state."""
    return _block_indices(k, [6, 7, 8])


def tip_velocity_indices(k: int) -> np.ndarray:
    """Indices of the distal-node linear velocity in a reduced state."""
    return VARS_PER_NODE * (k - 1) + np.array([6, 7])


def _static_rhs_batch(params: RodParams, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized static ODE: y is (6, B), u is (2, B)."""
    phi = y[2]
    c, s = np.cos(phi), np.sin(phi)
    nx, ny = y[3], y[4]
    nb = np.array([c * nx + s * ny, -s * nx + c * ny])
    k_se = params.k_se
    v = np.asarray(params.v_star)[:, None] + nb / k_se[:, None]
    w = y[5] / params.k_bt
    p_s = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])
    v_norm = np.sqrt(v[0] ** 2 + v[1] ** 2)
    v_norm = np.where(v_norm > 1e-12, v_norm, 1.0)
    f_body = -(u[0] + u[1]) * v / v_norm
    f_wx = c * f_body[0] - s * f_body[1]
    f_wy = s * f_body[0] + c * f_body[1]
    f_wy = f_wy - params.rho * params.area * params.gravity
    l_dist = (u[0] - u[1]) * params.tendon_offset
    return np.array([p_s[0], p_s[1], w, -f_wx, -f_wy,
                     -(p_s[0] * ny - p_s[1] * nx) - l_dist])


def _integrate_static_batch(params: RodParams, base_loads: np.ndarray,
                            u: np.ndarray):
    """Batched RK4 in arclength; base_loads is (3, B). Returns (traj, tip)."""
    h = params.ds
    b = base_loads.shape[1]
    y = np.zeros((6, b))
    y[3:6] = base_loads
    traj = np.empty((params.n_nodes, 6, b))
    traj[0] = y
    for i in range(params.n_nodes - 1):
        k1 = _static_rhs_batch(params, y, u)
        k2 = _static_rhs_batch(params, y + 0.5 * h * k1, u)
        k3 = _static_rhs_batch(params, y + 0.5 * h * k2, u)
        k4 = _static_rhs_batch(params, y + h * k3, u)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        traj[i + 1] = y
    return traj, y[3:6]


def _shoot_batch(params: RodParams, us: np.ndarray, tol: float,
                 max_iter: int = 30):
    """Plain-Newton shooting over a batch of tension samples.

    Returns (base_loads (3, B), converged mask). Faster than the scalar path
    but without line-search globalization; callers treat non-converged
    samples as failures.
    """
    b = us.shape[1]
    guess = np.zeros((3, b))
    scale = np.maximum(1.0, np.max(np.abs(us), axis=0))
    eps = 1e-7 * scale
    for _ in range(max_iter):
        _, tip = _integrate_static_batch(params, guess, us)
        r = tip
        res = np.linalg.norm(r, axis=0)
        active = res >= tol * scale
        if not np.any(active):
            break
        jac = np.empty((3, 3, b))
        for j in range(3):
            g = guess.copy()
            g[j] += eps
            _, tip_j = _integrate_static_batch(params, g, us)
            jac[:, j, :] = (tip_j - r) / eps
        for i in np.flatnonzero(active):
            try:
                guess[:, i] -= np.linalg.solve(jac[:, :, i], r[:, i])
            except np.linalg.LinAlgError:
                pass
    _, tip = _integrate_static_batch(params, guess, us)
    converged = np.linalg.norm(tip, axis=0) < tol * scale
    return guess, converged


def make_rod_d2(params: RodParams, tension_bounds, velocity_cov,
                n_samples: int, seed: int, tol: float = 1e-8) -> PhaseDataset:
    """Phase samples: equilibria over an LHS tension grid with Gaussian
    velocities injected over the full velocity field.

    Returns a full-state PhaseDataset with the passive time-derivative of
    each sample precomputed (the passive dynamics of the reduced state are
    not a function of the reduced state alone, so generator fitting consumes
    these values instead of re-evaluating a vector field). Shooting failures
    are skipped; more than 10% failures is an error.
    """
    tensions = sample_phase_lhs(np.asarray(tension_bounds, dtype=float),
                                n_samples, seed)
    vel_dim = 3 * params.n_nodes
    cov = np.asarray(velocity_cov, dtype=float)
    if cov.shape != (vel_dim, vel_dim):
        raise ValueError(f"velocity_cov must be {vel_dim}x{vel_dim}")
    vels = sample_velocity_gaussian(cov, n_samples, seed + 1)
    base_loads, converged = _shoot_batch(params, tensions, tol)
    failures = int(n_samples - np.count_nonzero(converged))
    if failures > 0.1 * n_samples:
        raise RuntimeError(f"{failures}/{n_samples} shooting solves failed")
    traj, _ = _integrate_static_batch(params, base_loads, tensions)
    xs, us, fs = [], [], []
    for i in np.flatnonzero(converged):
        phi = traj[:, 2, i]
        c, s = _rot(phi)
        nx, ny = traj[:, 3, i], traj[:, 4, i]
        n_body = np.column_stack([c * nx + s * ny, -s * nx + c * ny])
        st = RodState(p=traj[:, 0:2, i].copy(), phi=phi.copy(),
                      v=np.asarray(params.v_star) + n_body / params.k_se,
                      w=traj[:, 5, i] / params.k_bt,
                      q=vels[:, i].reshape(params.n_nodes, 3)[:, 0:2].copy(),
                      omega=vels[:, i].reshape(params.n_nodes, 3)[:, 2].copy())
        st.q[0] = 0.0
        st.omega[0] = 0.0
        df, _ = _rhs_split_arrays(params, st, tensions[:, i])
        xs.append(st.to_vector())
        us.append(tensions[:, i].copy())
        fs.append(df.to_vector())
    return PhaseDataset(x=np.array(xs).T, u=np.array(us).T, fvals=np.array(fs).T)


def reduce_dataset(params: RodParams, data, k: int):
    """Slice a full-state dataset down to k nodes uniform in arclength."""
    idx = downsample_indices(params.n_nodes, k)
    keep = np.concatenate([VARS_PER_NODE * i + np.arange(VARS_PER_NODE)
                           for i in idx])
    if isinstance(data, PhaseDataset):
        fv = data.fvals[keep] if data.fvals is not None else None
        return PhaseDataset(x=data.x[keep], u=data.u, fvals=fv)
    return TrajectoryDataset(x=data.x[keep], xp=data.xp[keep], u=data.u,
                             traj_id=data.traj_id, step=data.step, dt=data.dt)


def make_rod_d1(params: RodParams, n_traj: int, steps: int, dt: float,
                seed: int, tension_bounds, hold_steps: int = 10) -> TrajectoryDataset:
    """Trajectory data: full-state transition pairs from the reference rest
    configuration under piecewise-constant random tendon tensions."""
    bounds = np.asarray(tension_bounds, dtype=float)
    root = np.random.SeedSequence(seed)
    xs, xps, us, ids, stp = [], [], [], [], []
    for t, child in enumerate(root.spawn(n_traj)):
        rng = np.random.default_rng(child)
        cur = reference_state(params)
        u_cur = np.zeros(2)
        for i in range(steps):
            if i % hold_steps == 0:
                u_cur = bounds[:, 0] + rng.random(2) * (bounds[:, 1] - bounds[:, 0])
            nxt = rod_step(params, cur, u_cur, dt)
            xs.append(cur.to_vector())
            xps.append(nxt.to_vector())
            us.append(u_cur.copy())
            ids.append(t)
            stp.append(i)
            cur = nxt
    return TrajectoryDataset(x=np.array(xs).T, xp=np.array(xps).T,
                             u=np.array(us).T, traj_id=np.array(ids),
                             step=np.array(stp), dt=dt)


def estimate_velocity_cov(params: RodParams, tension_bounds, dt: float,
                          seed: int, n_traj: int = 3, steps: int = 40) -> np.ndarray:
    """Empirical covariance of the full velocity field from pilot simulations."""
    pilot = make_rod_d1(params, n_traj, steps, dt, seed, tension_bounds)
    vel_rows = np.concatenate([VARS_PER_NODE * i + np.array([6, 7, 8])
                               for i in range(params.n_nodes)])
    vels = pilot.x[vel_rows]
    return np.cov(vels)
