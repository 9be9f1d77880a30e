"""Checks for the sweep harness: determinism, warm/cold equivalence,
aggregation, emission and the scaling-law report."""

import math

import numpy as np
import pytest

from vts import harness as hn
from vts import numerics as nm
from vts import optimizer as op
from vts.numerics import LineFit


def tiny_scaling_spec(**overrides):
    base = dict(kind=nm.GEV, instance_count=2, seed_base=1,
                epsilon_grid=(1e-1, 1e-2, 1e-3), max_iterations=30_000,
                parallelism=1)
    base.update(overrides)
    return hn.ExperimentSpec(**base)


def tiny_sigma_spec(**overrides):
    base = dict(kind=nm.GEV, instance_count=2, seed_base=1,
                sigma_grid=(1e-2, 1e-3, 1e-4), max_iterations=30_000,
                parallelism=1)
    base.update(overrides)
    return hn.ExperimentSpec(**base)


class TestSpec:
    def test_monotone_grid_enforced(self):
        with pytest.raises(ValueError):
            hn.ExperimentSpec(kind=nm.GEV, epsilon_grid=(1e-3, 1e-2))

    def test_thread_resolution_env(self, monkeypatch):
        spec = tiny_scaling_spec(parallelism=None)
        monkeypatch.setenv("VTS_THREADS", "3")
        assert spec.threads() == 3
        monkeypatch.delenv("VTS_THREADS")
        assert spec.threads() >= 1


class TestScalingExperiment:
    def test_row_count_and_reasons(self):
        result = hn.scaling_experiment(tiny_scaling_spec())
        assert len(result.rows) == 2 * 3
        assert all(row.stop_reason == op.STOP_CONVERGED for row in result.rows)

    def test_rows_deterministic_across_parallelism(self):
        serial = hn.scaling_experiment(tiny_scaling_spec(parallelism=1))
        parallel = hn.scaling_experiment(tiny_scaling_spec(parallelism=2))
        for row_a, row_b in zip(serial.rows, parallel.rows):
            assert (row_a.seed, row_a.x, row_a.n_it) == (row_b.seed, row_b.x, row_b.n_it)
            assert row_a.loss_final == row_b.loss_final
            assert row_a.match_error == row_b.match_error

    def test_warm_equals_cold(self):
        warm = hn.scaling_experiment(tiny_scaling_spec(instance_count=1))
        cold = hn.scaling_experiment(tiny_scaling_spec(instance_count=1, warm=False))
        for row_w, row_c in zip(warm.rows, cold.rows):
            assert row_w.n_it == row_c.n_it
            assert row_w.loss_final == row_c.loss_final
            assert row_w.match_error == row_c.match_error

    def test_n_it_nondecreasing_in_accuracy(self):
        result = hn.scaling_experiment(tiny_scaling_spec())
        for seed in (1, 2):
            cells = [r for r in result.rows if r.seed == seed]
            its = [r.n_it for r in sorted(cells, key=lambda r: -r.x)]
            assert its == sorted(its)

    def test_missing_cells_on_tiny_budget(self):
        result = hn.scaling_experiment(tiny_scaling_spec(
            instance_count=1, max_iterations=3))
        missing = [r for r in result.rows if r.stop_reason == "missing"]
        assert missing
        assert all(math.isnan(r.loss_final) for r in missing)
        assert result.aggregates["instances_L"] == 0


class TestSigmaExperiment:
    def test_rows_and_stall(self):
        result = hn.sigma_experiment(tiny_sigma_spec())
        assert len(result.rows) == 2 * 3
        assert all(row.stop_reason == op.STOP_STALLED for row in result.rows)

    def test_match_floor_decreases_with_sigma(self):
        result = hn.sigma_experiment(tiny_sigma_spec())
        for seed in (1, 2):
            cells = sorted([r for r in result.rows if r.seed == seed],
                           key=lambda r: -r.x)
            for coarse, fine in zip(cells, cells[1:]):
                assert fine.match_error <= 2.0 * coarse.match_error


class TestAggregation:
    def test_aggregates_match_recomputation_from_rows(self, tmp_path):
        result = hn.scaling_experiment(tiny_scaling_spec())
        path = tmp_path / "rows.csv"
        hn.emit_results(result, path, "csv")
        rows = hn.parse_rows_csv(path.read_text())
        groups = {}
        for row in rows:
            groups.setdefault(row.seed, []).append(row)
        fits = [hn.fits_for_instance(group, result.fit_window, with_match=False)
                for group in groups.values()]
        recomputed = hn.aggregate_fits(fits)
        for key, value in result.aggregates.items():
            assert recomputed[key] == pytest.approx(value, abs=1e-12)

    def test_mean_and_deviation_definitions(self):
        fits = [hn.InstanceFits(1, None, LineFit(2.0, -1.0, 0.0), None),
                hn.InstanceFits(2, None, LineFit(4.0, -3.0, 0.0), None)]
        agg = hn.aggregate_fits(fits)
        assert agg["kappa_L_mean"] == pytest.approx(3.0)
        assert agg["kappa_L_dev"] == pytest.approx(1.0)
        assert agg["C_L_mean"] == pytest.approx(2.0)
        assert agg["C_L_dev"] == pytest.approx(1.0)

    def test_single_point_grid_gives_no_fit(self):
        result = hn.scaling_experiment(tiny_scaling_spec(
            instance_count=1, epsilon_grid=(1e-3,)))
        assert result.fits[0].n_it is None
        assert result.aggregates["instances_N"] == 0


class TestTheoryChecks:
    def synthetic(self, kappa_l_eps, kappa_l_sigma, kappa_lambda):
        scaling = hn.SweepResult(
            nm.GEV, "epsilon", (1e-3,), 1e-3, [], [],
            {"kappa_L_mean": kappa_l_eps, "C_L_mean": 1.9}, {})
        sigma = hn.SweepResult(
            nm.GEV, "sigma", (1e-6,), 1e-6, [], [],
            {"kappa_L_mean": kappa_l_sigma, "C_L_mean": 4.5,
             "kappa_lambda_mean": kappa_lambda, "C_lambda_mean": 3.0}, {})
        return scaling, sigma

    def test_exact_slopes_pass(self):
        report = hn.theory_checks(*self.synthetic(2.0, 2.0, 1.0))
        assert report.passed
        assert report.constants["lambda_sigma"] == pytest.approx(10 ** -3.0)

    def test_reported_aggregate_values_pass(self):
        report = hn.theory_checks(*self.synthetic(1.990, 2.034, 1.028))
        assert report.passed

    def test_wrong_slope_flagged(self):
        report = hn.theory_checks(*self.synthetic(3.0, 2.0, 1.0))
        assert not report.passed
        failing = [c for c in report.checks if not c.passed]
        assert failing and failing[0].name == "epsilon-sweep kappa_L"


class TestEmission:
    def test_csv_byte_stable(self, tmp_path):
        result = hn.scaling_experiment(tiny_scaling_spec())
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        hn.emit_results(result, a, "csv")
        hn.emit_results(result, b, "csv")
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().splitlines()[0] == hn.CSV_HEADER

    def test_json_round_trip_aggregates(self, tmp_path):
        result = hn.scaling_experiment(tiny_scaling_spec())
        path = tmp_path / "result.json"
        hn.emit_results(result, path, "json")
        loaded = hn.load_result_json(path)
        assert loaded["aggregates"] == result.aggregates
        assert len(loaded["rows"]) == len(result.rows)

    def test_empty_rows_header_only(self, tmp_path):
        result = hn.SweepResult(nm.GEV, "epsilon", (), 1e-3, [], [], {}, {})
        path = tmp_path / "empty.csv"
        hn.emit_results(result, path, "csv")
        assert path.read_text() == hn.CSV_HEADER + "\n"

    def test_plot_series(self, tmp_path):
        scaling = hn.scaling_experiment(tiny_scaling_spec())
        sigma = hn.sigma_experiment(tiny_sigma_spec())
        text = hn.plot_series({"scaling_gev": scaling.rows,
                               "sigma_gev": sigma.rows})
        lines = text.strip().splitlines()
        assert lines[0] == "figure,kind,x,y,count"
        figures = {line.split(",")[0] for line in lines[1:]}
        assert figures == {"iterations_vs_accuracy", "loss_vs_accuracy",
                           "iterations_vs_sigma", "loss_vs_sigma",
                           "min_accuracy_vs_sigma"}
