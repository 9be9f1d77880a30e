"""Checks for the gradient-descent loop, its adaptive step rule and the
trace exports."""

import numpy as np
import pytest

from vts import ansatz as az
from vts import loss as ls
from vts import numerics as nm
from vts import optimizer as op
from vts.errors import LengthMismatch, NonPositiveDelta


def triangular_gev_instance():
    # distinct diagonal ratios so the oracle roots are simple (and sharp)
    a = np.triu(np.ones((4, 4), dtype=complex)) + np.diag([0, 1, 2, 3])
    b = np.triu(np.full((4, 4), 0.5 + 0.25j))
    return nm.make_instance(nm.GEV, a, b)


class TestAdaptDelta:
    def test_good_improvement_keeps_delta(self):
        assert op.adapt_delta(1.0, 0.5, 0.5) == 0.5

    def test_slow_improvement_grows(self):
        out = op.adapt_delta(1.0, 0.9999, 0.5)
        assert out == pytest.approx(0.5 * 1.0005)

    def test_literal_rule_cancels_on_increase(self):
        out = op.adapt_delta(1.0, 1.1, 0.5)
        assert out == pytest.approx(0.5 * 1.0005 / 1.0005)

    def test_exclusive_rule_shrinks_on_increase(self):
        out = op.adapt_delta(1.0, 1.1, 0.5, exclusive=True)
        assert out == pytest.approx(0.5 / 1.0005)

    def test_both_zero_grows(self):
        assert op.adapt_delta(0.0, 0.0, 1.0) == pytest.approx(1.0005)

    def test_nonpositive_delta(self):
        with pytest.raises(NonPositiveDelta):
            op.adapt_delta(1.0, 0.5, 0.0)


class TestStep:
    def test_zero_gradient(self):
        params = az.zero_parameters(nm.EV, 2, 2)
        out = op.step(params, np.zeros(12), 0.5)
        np.testing.assert_array_equal(out.values, params.values)

    def test_zero_delta(self):
        rng = np.random.default_rng(0)
        params = az.ParameterVector(nm.EV, 2, 2, rng.normal(size=12))
        out = op.step(params, rng.normal(size=12), 0.0)
        np.testing.assert_array_equal(out.values, params.values)

    def test_quadratic_toy_contracts(self):
        # L = x^2 has gradient 2x; x_{k+1} = (1 - 2 delta) x_k
        x, delta = 1.0, 0.2
        for _ in range(50):
            x = x - delta * 2 * x
        assert abs(x) < (1 - 2 * delta) ** 49

    def test_quantized_step(self):
        params = az.zero_parameters(nm.EV, 2, 2)
        gradient = np.full(12, 0.1234)
        out = op.step(params, gradient, 1.0, az.QuantizationSpec(2))
        np.testing.assert_allclose(out.values, np.full(12, -0.12), atol=1e-15)

    def test_length_mismatch(self):
        params = az.zero_parameters(nm.EV, 2, 2)
        with pytest.raises(LengthMismatch):
            op.step(params, np.zeros(11), 0.5)


class TestExtractEigenvalues:
    def test_diagonal_ratio(self):
        out = op.eigenvalues_from_diagonals(np.array([2.0, 3.0]), np.array([1.0, 1.0]))
        np.testing.assert_allclose(out, [2, 3])

    def test_indeterminate_slot(self):
        out = op.eigenvalues_from_diagonals(np.array([1.0, 0.0]), np.array([1.0, 0.0]))
        assert out[0] == 1.0
        assert nm.is_indeterminate(out[1])

    def test_infinite_slot(self):
        out = op.eigenvalues_from_diagonals(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert np.isinf(out[1])

    def test_matches_triangularized(self):
        instance = nm.random_instance(0, 4)
        rng = np.random.default_rng(1)
        params = az.ParameterVector(nm.GEV, 2, 2, rng.uniform(-1, 1, 24))
        eigs = op.extract_eigenvalues(instance, params)
        t, s = ls.triangularized(instance, params)
        np.testing.assert_allclose(eigs, np.diag(t) / np.diag(s), atol=1e-13)


class TestRun:
    def test_already_triangular_stops_first_iteration(self):
        instance = triangular_gev_instance()
        config = op.OptimizerConfig(stop_mode=op.AccuracyVsOracle(1e-6), M=2)
        trace = op.run(instance, config)
        assert trace.stop_reason == op.STOP_CONVERGED
        assert trace.iterations == 1
        assert trace.final.loss == pytest.approx(0.0, abs=1e-15)

    def test_random_gev_converges(self):
        instance = nm.random_instance(2, 4)
        config = op.OptimizerConfig(stop_mode=op.AccuracyVsOracle(1e-3),
                                    max_iterations=20000)
        trace = op.run(instance, config)
        assert trace.stop_reason == op.STOP_CONVERGED
        assert trace.final.match_error < 1e-3
        assert trace.final.loss < trace.rows[0].loss

    def test_deterministic(self):
        instance = nm.random_instance(3, 4, kind=nm.EV)
        config = op.OptimizerConfig(stop_mode=op.AccuracyVsOracle(1e-2),
                                    max_iterations=5000)
        first = op.run(instance, config)
        second = op.run(instance, config)
        assert first.iterations == second.iterations
        for row_a, row_b in zip(first.rows, second.rows):
            assert row_a.loss == row_b.loss
            assert np.array_equal(row_a.eigenvalues, row_b.eigenvalues)

    def test_max_iterations_trace_returned(self):
        instance = nm.random_instance(4, 4)
        config = op.OptimizerConfig(stop_mode=op.AccuracyVsOracle(1e-12),
                                    max_iterations=5)
        trace = op.run(instance, config)
        assert trace.stop_reason == op.STOP_MAX_ITERATIONS
        assert trace.iterations == 5

    def test_stall_mode_with_quantization(self):
        instance = nm.random_instance(5, 4)
        config = op.OptimizerConfig(stop_mode=op.ConvergenceStall(),
                                    quantization=az.QuantizationSpec(3),
                                    max_iterations=20000)
        trace = op.run(instance, config)
        assert trace.stop_reason == op.STOP_STALLED
        assert trace.iterations > config.stall_warmup

    def test_quantized_floor_not_below_unquantized(self):
        instance = nm.random_instance(6, 4)
        sharp = op.run(instance, op.OptimizerConfig(
            stop_mode=op.AccuracyVsOracle(1e-5), max_iterations=40000))
        coarse = op.run(instance, op.OptimizerConfig(
            stop_mode=op.ConvergenceStall(), quantization=az.QuantizationSpec(4),
            max_iterations=40000))
        assert coarse.final.match_error >= sharp.final.match_error - 1e-12

    def test_circuit_evaluator_end_to_end(self):
        # tiny problem so full statevector runs stay fast
        instance = nm.random_instance(1, 2)
        config = op.OptimizerConfig(stop_mode=op.AccuracyVsOracle(1e-2), M=2,
                                    evaluator=ls.CircuitExact(),
                                    max_iterations=60)
        trace = op.run(instance, config)
        matrix_config = op.OptimizerConfig(stop_mode=op.AccuracyVsOracle(1e-2),
                                           M=2, max_iterations=60)
        matrix_trace = op.run(instance, matrix_config)
        assert trace.iterations == matrix_trace.iterations
        for row_a, row_b in zip(trace.rows, matrix_trace.rows):
            assert row_a.loss == pytest.approx(row_b.loss, abs=1e-9)

    def test_shots_evaluator_deterministic(self):
        instance = nm.random_instance(1, 2)
        config = op.OptimizerConfig(stop_mode=op.AccuracyVsOracle(1e-1), M=1,
                                    evaluator=ls.Shots(4000), seed=7,
                                    max_iterations=8)
        first = op.run(instance, config)
        second = op.run(instance, config)
        for row_a, row_b in zip(first.rows, second.rows):
            assert row_a.loss == row_b.loss


class TestTraceExports:
    def _trace(self):
        instance = nm.random_instance(2, 4)
        config = op.OptimizerConfig(stop_mode=op.AccuracyVsOracle(5e-2),
                                    max_iterations=3000)
        return op.run(instance, config)

    def test_csv_layout_and_stability(self, tmp_path):
        trace = self._trace()
        path_a, path_b = tmp_path / "a.csv", tmp_path / "b.csv"
        op.trace_to_csv(trace, path_a)
        op.trace_to_csv(trace, path_b)
        text = path_a.read_text()
        assert text == path_b.read_text()
        header = text.splitlines()[0]
        assert header == ("iteration,loss,delta,match_error,"
                          "lambda_re_0,lambda_re_1,lambda_re_2,lambda_re_3,"
                          "lambda_im_0,lambda_im_1,lambda_im_2,lambda_im_3")
        assert len(text.splitlines()) == trace.iterations + 1

    def test_summary_fields(self, tmp_path):
        trace = self._trace()
        summary = op.trace_summary(trace)
        assert summary["stop_reason"] == op.STOP_CONVERGED
        assert summary["iterations"] == trace.iterations
        assert summary["config"]["evaluator"] == "matrix"
        path = tmp_path / "summary.json"
        op.save_summary(trace, path)
        assert path.read_text().endswith("\n")
