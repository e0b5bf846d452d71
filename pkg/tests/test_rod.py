"""Unit tests for the planar rod: statics, dynamics, datasets."""

import numpy as np
import pytest

from splitkoop.rod import (
    RodParams,
    ShootingError,
    downsample,
    downsample_indices,
    estimate_velocity_cov,
    make_rod_d1,
    make_rod_d2,
    position_indices,
    reduce_dataset,
    reference_state,
    rod_energy,
    rod_rhs,
    rod_step,
    stability_estimate,
    static_shoot,
    tip_velocity_indices,
    velocity_indices,
)

SOFT = RodParams(youngs=1e4, damp_se=8e-4, damp_bt=5e-9)
BOUNDS = np.array([[0.0, 0.02], [0.0, 0.02]])


def test_reference_state_geometry():
    params = RodParams()
    st = reference_state(params)
    assert st.p.shape == (params.n_nodes, 2)
    assert np.allclose(st.p[-1], [params.length, 0.0])
    assert np.allclose(st.phi, 0.0)
    assert np.allclose(st.v[:, 0], 1.0)  # reference stretch


def test_reference_state_is_equilibrium():
    params = RodParams()
    st = reference_state(params)
    df, dh = rod_rhs(params, st, np.zeros(2))
    assert np.max(np.abs(df.to_vector() + dh.to_vector())) < 1e-9


def test_state_vector_roundtrip():
    st = reference_state(RodParams())
    back = type(st).from_vector(st.to_vector())
    assert np.allclose(back.p, st.p)
    assert np.allclose(back.q, st.q)


def test_stability_estimate_scales():
    slow = stability_estimate(RodParams(youngs=1e4))
    fast = stability_estimate(RodParams(youngs=1e6))
    assert 0 < fast < slow
    damped = stability_estimate(RodParams(youngs=1e4, damp_se=0.01))
    assert damped < slow  # diffusive bound engages


def test_static_shoot_zero_tension_is_straight():
    st = static_shoot(RodParams(), np.zeros(2))
    assert np.allclose(st.phi, 0.0, atol=1e-10)
    assert np.allclose(st.p[-1], [0.25, 0.0], atol=1e-10)


def test_static_shoot_tendon_bends_rod():
    st = static_shoot(RodParams(), np.array([0.01, 0.0]))
    assert st.phi[-1] > 1e-3  # tendon 1 bends upward
    assert st.p[-1, 1] > 0.0


def test_tendon_swap_mirror_symmetry():
    params = RodParams()
    a = static_shoot(params, np.array([0.013, 0.004]))
    b = static_shoot(params, np.array([0.004, 0.013]))
    assert np.allclose(a.p[:, 0], b.p[:, 0], atol=1e-10)
    assert np.allclose(a.p[:, 1], -b.p[:, 1], atol=1e-10)
    assert np.allclose(a.phi, -b.phi, atol=1e-10)


def test_refined_equilibrium_is_simulator_fixed_point():
    params = SOFT
    u = np.array([0.012, 0.002])
    st = static_shoot(params, u, refine=True)
    df, dh = rod_rhs(params, st, u)
    resid = df.to_vector() + dh.to_vector()
    vel_rows = np.abs(resid).max()
    assert vel_rows < 1e-6


def test_gravity_continuation():
    params = RodParams(youngs=1e5, gravity=9.81)
    st = static_shoot(params, np.zeros(2))
    assert st.p[-1, 1] < -1e-4  # droops under gravity


def test_rod_step_preserves_clamp():
    params = SOFT
    st = reference_state(params)
    for _ in range(3):
        st = rod_step(params, st, np.array([0.01, 0.0]), 0.03)
    assert np.allclose(st.p[0], 0.0)
    assert st.phi[0] == 0.0
    assert np.allclose(st.q[0], 0.0)  # clamped-base velocity stays zero


def test_energy_increases_when_actuated_and_decays_when_damped():
    params = SOFT
    st = reference_state(params)
    e0 = rod_energy(params, st)
    for _ in range(5):
        st = rod_step(params, st, np.array([0.015, 0.0]), 0.03)
    e1 = rod_energy(params, st)
    assert e1 > e0
    for _ in range(40):
        st = rod_step(params, st, np.zeros(2), 0.03)
    assert rod_energy(params, st) < e1


def test_downsample_indices_endpoints():
    idx = downsample_indices(41, 6)
    assert idx[0] == 0 and idx[-1] == 40
    assert len(idx) == 6
    with pytest.raises(ValueError):
        downsample_indices(41, 0)


def test_metric_index_helpers():
    k = 6
    pos = position_indices(k)
    vel = velocity_indices(k)
    tip = tip_velocity_indices(k)
    assert len(pos) == 2 * k and len(vel) == 3 * k
    assert not set(pos.tolist()) & set(vel.tolist())
    assert set(tip.tolist()) <= set(vel.tolist())
    assert np.array_equal(tip, [51, 52])


def test_downsample_layout():
    params = RodParams()
    st = reference_state(params)
    red = downsample(st, 6)
    assert red.shape == (54,)
    assert np.allclose(red[position_indices(6)][-2:], st.p[-1])


def test_make_rod_d2_contents():
    d2 = make_rod_d2(SOFT, BOUNDS, np.eye(3 * 41) * 1e-4, 12, seed=0)
    assert d2.x.shape[0] == 9 * 41
    assert d2.fvals is not None and d2.fvals.shape == d2.x.shape
    assert len(d2) >= 10  # near-total convergence in bounds
    assert np.all(d2.u >= 0.0) and np.all(d2.u <= 0.02)


def test_make_rod_d2_deterministic():
    cov = np.eye(3 * 41) * 1e-4
    a = make_rod_d2(SOFT, BOUNDS, cov, 8, seed=3)
    b = make_rod_d2(SOFT, BOUNDS, cov, 8, seed=3)
    assert np.array_equal(a.x, b.x)


def test_reduce_dataset_slices_consistently():
    d2 = make_rod_d2(SOFT, BOUNDS, np.eye(3 * 41) * 1e-4, 6, seed=1)
    red = reduce_dataset(SOFT, d2, 6)
    assert red.x.shape[0] == 54
    idx = downsample_indices(41, 6)
    keep = np.concatenate([9 * i + np.arange(9) for i in idx])
    assert np.array_equal(red.x, d2.x[keep])
    assert np.array_equal(red.fvals, d2.fvals[keep])


def test_make_rod_d1_structure():
    d1 = make_rod_d1(SOFT, 2, 6, 0.03, seed=0, tension_bounds=BOUNDS,
                     hold_steps=3)
    assert len(d1) == 12
    assert d1.x.shape[0] == 9 * 41
    assert len(np.unique(d1.traj_id)) == 2
    # within-trajectory chaining
    assert np.allclose(d1.xp[:, 0], d1.x[:, 1])


def test_estimate_velocity_cov_shape():
    cov = estimate_velocity_cov(SOFT, BOUNDS, 0.03, seed=0, n_traj=1, steps=6)
    assert cov.shape == (3 * 41, 3 * 41)
    assert np.allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) > -1e-12)


def test_shooting_failure_raises():
    # a strongly one-sided load far beyond the buckling tension defeats the
    # Newton iteration within the iteration budget
    with pytest.raises(ShootingError):
        static_shoot(RodParams(), np.array([10.0, 0.0]), max_iter=8)


def test_params_dict_roundtrip():
    p = RodParams(youngs=2e5, damp_se=1e-3)
    q = RodParams.from_dict(p.to_dict())
    assert q == p
