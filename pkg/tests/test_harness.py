"""Unit tests for the experiment harness, config handling and reports."""

import json

import numpy as np
import pytest

from splitkoop import harness
from splitkoop.harness import (
    ExperimentConfig,
    distal_velocity_error,
    load_report,
    plot_report,
    prepare_benchmark,
    run_sweep,
    shape_error,
    summarize_report,
)

TINY = ExperimentConfig(
    d1_n_traj=4, d1_steps=16, d2_n=128, degree=2, delays=2,
    kh_row_mask=(), n_test_traj=2, test_steps=10,
    d1_grid=(16, 64), d2_grid=(128,), methods=("l", "pi"), seeds=(0,))


class TestMetrics:
    def test_identical_states_zero(self):
        x = np.arange(6.0)
        assert shape_error(x, x) == 0.0
        assert distal_velocity_error(x, x, [4, 5]) == 0.0

    def test_pythagorean(self):
        a = np.zeros(2)
        b = np.array([3.0, 4.0])
        assert shape_error(a, b) == 25.0

    def test_tip_velocity_unit_offset(self):
        a = np.zeros(6)
        b = np.zeros(6)
        b[5] = 1.0
        assert distal_velocity_error(a, b, [4, 5]) == 1.0

    def test_against_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(20), rng.standard_normal(20)
        idx = np.array([0, 3, 7, 11])
        brute = sum((a[i] - b[i]) ** 2 for i in idx)
        assert abs(shape_error(a, b, idx) - brute) < 1e-12

    def test_velocity_error_shares_kernel(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal(10), rng.standard_normal(10)
        tip = np.array([8, 9])
        assert distal_velocity_error(a, b, tip) == shape_error(a, b, tip)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            shape_error(np.zeros(3), np.zeros(4))


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig().validate()

    def test_rejects_bad_method(self):
        with pytest.raises(ValueError):
            ExperimentConfig(methods=("l", "x"))

    def test_rejects_oversized_grid(self):
        with pytest.raises(ValueError):
            ExperimentConfig(d1_n_traj=2, d1_steps=4, d1_grid=(9,))

    def test_rejects_empty_methods(self):
        with pytest.raises(ValueError):
            ExperimentConfig(methods=())

    def test_ini_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text(
            "[system]\nname = pendulum\ndt = 0.02\ngamma = 0.1\n"
            "[dictionary]\ndegree = 2\ndelays = 3\n"
            "[d1]\nn_traj = 5\nsteps = 8\n"
            "[d2]\nn = 64\n"
            "[fit]\nalpha = 0.5\nkh_row_mask = 1\n"
            "[evaluation]\nn_test_traj = 2\nsteps = 6\n"
            "[sweep]\nd1_grid = 8, 40\nd2_grid = 64\nmethods = l,pi\n"
            "seeds = 0,1\n")
        cfg = ExperimentConfig.from_ini(path)
        assert cfg.system == "pendulum"
        assert cfg.dt == 0.02
        assert cfg.system_params == {"gamma": 0.1}
        assert cfg.degree == 2 and cfg.delays == 3
        assert cfg.alpha == 0.5
        assert cfg.kh_row_mask == (1,)
        assert cfg.d1_grid == (8, 40)
        assert cfg.methods == ("l", "pi")
        assert cfg.seeds == (0, 1)

    def test_ini_alpha_auto(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[fit]\nalpha = auto\n")
        assert ExperimentConfig.from_ini(path).alpha is None

    def test_to_dict_json_serializable(self):
        json.dumps(ExperimentConfig().to_dict())


class TestBenchmark:
    def test_ode_benchmark_shapes(self):
        bench = prepare_benchmark(TINY, seed=0)
        assert len(bench.d1) == 64
        assert len(bench.d2) == 128
        assert len(bench.tests) == 2
        states, u = bench.tests[0]
        assert states.shape == (11, 2) and u.shape == (1, 10)
        assert bench.position_idx is None and bench.tip_vel_idx is None
        assert bench.f_known is not None

    def test_benchmark_deterministic(self):
        a = prepare_benchmark(TINY, seed=3)
        b = prepare_benchmark(TINY, seed=3)
        assert np.array_equal(a.d1.x, b.d1.x)
        assert np.array_equal(a.d2.x, b.d2.x)
        assert np.array_equal(a.tests[1][0], b.tests[1][0])

    def test_seed_changes_data(self):
        a = prepare_benchmark(TINY, seed=0)
        b = prepare_benchmark(TINY, seed=1)
        assert not np.array_equal(a.d1.x, b.d1.x)


@pytest.fixture(scope="module")
def report_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    run_sweep(TINY, out_dir=out)
    return out


class TestSweep:
    def test_csv_columns_and_rows(self, report_dir):
        rows, _ = load_report(report_dir)
        # 2 methods x 2 d1 sizes x 2 test trajs x 10 steps
        assert len(rows) == 80
        assert {r["method"] for r in rows} == {"l", "pi"}
        assert all(r["shape_err"] >= 0.0 for r in rows)
        assert all(r["vel_err"] is None for r in rows)  # ODE benchmark
        # methods that never read D2 record d2_size 0
        assert {r["d2_size"] for r in rows if r["method"] == "l"} == {0}
        assert {r["d2_size"] for r in rows if r["method"] == "pi"} == {128}

    def test_json_aggregates_match_rows(self, report_dir):
        rows, doc = load_report(report_dir)
        for agg in doc["aggregates"]:
            vals = [r["shape_err"] for r in rows
                    if (r["method"], r["d1_size"], r["d2_size"])
                    == (agg["method"], agg["d1_size"], agg["d2_size"])]
            assert np.isclose(agg["shape"]["median"], np.median(vals))
            assert np.isclose(agg["shape"]["q75"], np.percentile(vals, 75))
            assert np.isclose(agg["shape"]["mean"], np.mean(vals))

    def test_json_carries_config_and_stamp(self, report_dir):
        _, doc = load_report(report_dir)
        assert doc["config"]["system"] == "duffing"
        assert doc["config"]["d1_grid"] == [16, 64]
        assert doc["build"]["package"] == "splitkoop"
        cells = doc["cells"]
        assert len(cells) == 4
        assert all("spectral_radius" in c for c in cells)

    def test_determinism_byte_identical(self, report_dir, tmp_path):
        run_sweep(TINY, out_dir=tmp_path)
        a = (report_dir / "report.csv").read_bytes()
        b = (tmp_path / "report.csv").read_bytes()
        assert a == b

    def test_jobs_do_not_change_output(self, report_dir, tmp_path):
        run_sweep(TINY, out_dir=tmp_path, jobs=4)
        assert (report_dir / "report.csv").read_bytes() == \
            (tmp_path / "report.csv").read_bytes()

    def test_plot_and_summary(self, report_dir):
        rows, _ = load_report(report_dir)
        text = summarize_report(rows)
        assert "pi" in text and "|D1|" in text
        written = plot_report(rows, report_dir)
        assert len(written) == 1  # no velocity metric for the ODE benchmark
        svg = open(written[0]).read(200)
        assert "<?xml" in svg or "<svg" in svg

    def test_fit_failure_recorded_not_fatal(self, monkeypatch):
        original = harness.fit_cell_model

        def flaky(bench, cfg, method, d1_size, d2_size):
            if method == "l" and d1_size == 16:
                raise RuntimeError("synthetic fit failure")
            return original(bench, cfg, method, d1_size, d2_size)

        monkeypatch.setattr(harness, "fit_cell_model", flaky)
        report = run_sweep(TINY)
        failed = [c for c in report.cells if c.fit_error is not None]
        done = [c for c in report.cells if c.fit_error is None]
        assert len(failed) == 1 and "synthetic" in failed[0].fit_error
        assert len(done) == 3, "healthy cells must still run"
        agg = report.pooled_aggregates()
        assert sum(a["n_fit_failures"] for a in agg) == 1

    def test_nested_prefixes_share_records(self):
        bench = prepare_benchmark(TINY, seed=0)
        small = bench.d1.prefix(16)
        big = bench.d1.prefix(64)
        assert np.array_equal(small.x, big.x[:, :16])
