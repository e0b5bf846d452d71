"""Unit tests for benchmark systems, integrators, sampling and datasets."""

import numpy as np
import pytest

from splitkoop.systems import (
    PhaseDataset,
    TrajectoryDataset,
    duffing,
    make_d1,
    pendulum,
    piecewise_constant_policy,
    rk4_step,
    sample_phase_lhs,
    sample_velocity_gaussian,
    simulate,
    sinusoidal_policy,
)


def test_rk4_on_scalar_decay():
    # x' = -x, exact solution e^{-t}; RK4 local error O(dt^5)
    rhs = lambda x, u: -x
    x = np.array([1.0])
    for _ in range(100):
        x = rk4_step(rhs, x, np.zeros(1), 0.01)
    assert abs(x[0] - np.exp(-1.0)) < 1e-10


def test_rk4_order():
    rhs = lambda x, u: np.array([x[1], -x[0]])  # harmonic oscillator
    exact = np.array([np.cos(1.0), -np.sin(1.0)])

    def err(dt):
        x = np.array([1.0, 0.0])
        for _ in range(int(round(1.0 / dt))):
            x = rk4_step(rhs, x, np.zeros(1), dt)
        return np.linalg.norm(x - exact)

    slope = np.polyfit(np.log([0.1, 0.05, 0.025]),
                       np.log([err(t) for t in (0.1, 0.05, 0.025)]), 1)[0]
    assert 3.8 < slope < 4.3


def test_simulate_shapes_and_callable_schedule():
    sys = duffing()
    states = simulate(sys, [0.1, 0.0], lambda k: np.array([0.0]), 5, 0.05)
    assert states.shape == (6, 2)
    assert np.allclose(states[0], [0.1, 0.0])


def test_lhs_stratification():
    bounds = np.array([[0.0, 1.0], [-2.0, 2.0]])
    s = sample_phase_lhs(bounds, 16, seed=3)
    assert s.shape == (2, 16)
    for dim in range(2):
        lo, hi = bounds[dim]
        strata = np.floor((s[dim] - lo) / (hi - lo) * 16).astype(int)
        assert sorted(strata.tolist()) == list(range(16))


def test_lhs_deterministic():
    bounds = np.array([[0.0, 1.0]])
    assert np.array_equal(sample_phase_lhs(bounds, 8, 5),
                          sample_phase_lhs(bounds, 8, 5))


def test_velocity_gaussian_covariance():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    draws = sample_velocity_gaussian(cov, 200000, seed=0)
    emp = np.cov(draws)
    assert np.allclose(emp, cov, atol=0.05)


def test_policies_respect_bounds():
    sys = duffing()
    rng = np.random.default_rng(0)
    for policy in (piecewise_constant_policy(sys, rng, 50),
                   sinusoidal_policy(sys, rng, 50, 0.03)):
        assert policy.shape == (1, 50)
        assert np.all(policy >= sys.control_bounds[:, :1])
        assert np.all(policy <= sys.control_bounds[:, 1:])


def test_make_d1_contiguous_and_consistent():
    sys = duffing()
    d1 = make_d1(sys, 3, 10, 0.03, seed=1)
    assert len(d1) == 30
    # records within a trajectory chain: xp of step k equals x of step k+1
    for i in range(len(d1) - 1):
        if d1.traj_id[i] == d1.traj_id[i + 1]:
            assert np.allclose(d1.xp[:, i], d1.x[:, i + 1])
    # deterministic
    d1b = make_d1(sys, 3, 10, 0.03, seed=1)
    assert np.array_equal(d1.x, d1b.x) and np.array_equal(d1.u, d1b.u)


def test_prefix_is_nested():
    sys = duffing()
    d1 = make_d1(sys, 2, 8, 0.03, seed=0)
    small, big = d1.prefix(5), d1.prefix(12)
    assert np.array_equal(small.x, big.x[:, :5])


def test_trajectory_dataset_roundtrips(tmp_path):
    sys = pendulum()
    d1 = make_d1(sys, 2, 5, 0.02, seed=4)
    for ext, save, load in [("csv", d1.to_csv, TrajectoryDataset.from_csv),
                            ("npz", d1.to_npz, TrajectoryDataset.from_npz)]:
        path = tmp_path / f"d1.{ext}"
        save(path)
        back = load(path)
        assert np.array_equal(back.x, d1.x)
        assert np.array_equal(back.u, d1.u)
        assert back.dt == d1.dt


def test_phase_dataset_roundtrips(tmp_path):
    rng = np.random.default_rng(0)
    d2 = PhaseDataset(x=rng.standard_normal((3, 7)),
                      u=rng.standard_normal((2, 7)),
                      fvals=rng.standard_normal((3, 7)))
    d2.to_npz(tmp_path / "d2.npz")
    back = PhaseDataset.from_npz(tmp_path / "d2.npz")
    assert np.array_equal(back.x, d2.x)
    assert np.array_equal(back.fvals, d2.fvals)
    pre = d2.prefix(4)
    assert pre.fvals.shape == (3, 4)


def test_noncontiguous_trajectories_rejected():
    with pytest.raises(ValueError):
        TrajectoryDataset(x=np.zeros((1, 3)), xp=np.zeros((1, 3)),
                          u=np.zeros((1, 3)),
                          traj_id=np.array([0, 1, 0]),
                          step=np.zeros(3, dtype=int), dt=0.1)


def test_duffing_split_values():
    sys = duffing(delta=0.2, alpha=-1.0, beta=1.0, coupling=0.5)
    x, u = np.array([0.3, -0.4]), np.array([0.7])
    f = sys.f(x, u)
    h = sys.h(x, u)
    assert np.allclose(f, [-0.4, -0.2 * -0.4 + 0.3 - 0.3 ** 3])
    assert h[0] == 0.0
    assert np.isclose(h[1], 0.7 + 0.5 * np.sin(0.3))


def test_pendulum_split_values():
    sys = pendulum(grav=9.81, length=2.0, mass=0.5, gamma=0.1)
    x, u = np.array([0.2, 1.0]), np.array([0.3])
    assert np.allclose(sys.f(x, u),
                       [1.0, -(9.81 / 2.0) * np.sin(0.2) - 0.1])
    assert np.allclose(sys.h(x, u), [0.0, 0.3 / (0.5 * 4.0)])
