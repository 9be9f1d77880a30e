"""Gradient-descent outer loop: adaptive step size, two stopping modes
(accuracy against the classical oracle, or stalled eigenvalue movement for
quantized parameters) and a full per-iteration trace.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import loss as ls
from .ansatz import ParameterVector, QuantizationSpec, quantize_values, zero_parameters
from .errors import IoFailure, LengthMismatch, NonPositiveDelta
from .numerics import (
    EV,
    GEV,
    INDETERMINATE,
    INFINITE,
    ProblemInstance,
    match_error,
    oracle_spectrum,
)

STOP_CONVERGED = "converged"
STOP_STALLED = "stalled"
STOP_MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class AccuracyVsOracle:
    """Stop once the assignment-matched distance to the classical spectrum
    drops below epsilon."""

    epsilon: float


@dataclass(frozen=True)
class ConvergenceStall:
    """Stop once successive eigenvalue iterates move by at most
    ``threshold`` (matched by assignment)."""

    threshold: float = 1e-12


@dataclass
class OptimizerConfig:
    stop_mode: object
    delta0: float = 0.5
    growth: float = 1.0005
    improvement_threshold: float = 0.001
    M: int = 10
    shift_angle: float = math.pi / 3
    max_iterations: int = 200_000
    quantization: QuantizationSpec | None = None
    evaluator: object = field(default_factory=ls.MatrixExact)
    seed: int = 0
    #: apply the decrease branch of the step rule exclusively when the loss
    #: grew (the literal rule lets the two branches cancel there, which
    #: freezes delta at its maximum and loses convergence)
    rule_exclusive: bool = True
    stall_warmup: int = 10

    def echo(self) -> dict:
        evaluator = self.evaluator
        if isinstance(evaluator, ls.MatrixExact):
            ev_str = "matrix"
        elif isinstance(evaluator, ls.CircuitExact):
            ev_str = "circuit"
        else:
            ev_str = f"shots:{evaluator.count}"
        stop = self.stop_mode
        stop_str = (f"accuracy:{stop.epsilon:g}" if isinstance(stop, AccuracyVsOracle)
                    else f"stall:{stop.threshold:g}")
        return {
            "stop_mode": stop_str,
            "delta0": self.delta0,
            "growth": self.growth,
            "improvement_threshold": self.improvement_threshold,
            "M": self.M,
            "shift_angle": self.shift_angle,
            "max_iterations": self.max_iterations,
            "quantization_d": None if self.quantization is None else self.quantization.d,
            "evaluator": ev_str,
            "seed": self.seed,
            "rule_exclusive": self.rule_exclusive,
        }


@dataclass
class TraceRow:
    iteration: int
    loss: float
    delta: float
    eigenvalues: np.ndarray
    match_error: float
    wall_time: float


@dataclass
class OptimizationTrace:
    rows: list[TraceRow]
    stop_reason: str
    final_params: ParameterVector
    final_t_diag: np.ndarray
    final_s_diag: np.ndarray | None
    oracle: np.ndarray
    config: dict
    seed: int

    @property
    def iterations(self) -> int:
        return len(self.rows)

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]


def adapt_delta(loss_prev: float, loss_curr: float, delta: float,
                growth: float = 1.0005, improvement_threshold: float = 0.001,
                exclusive: bool = False) -> float:
    """One application of the adaptive step rule.

    Literal form (``exclusive=False``): grow delta when the relative
    improvement 2(L_prev - L_curr)/(L_prev + L_curr) is below the threshold,
    and shrink it when the loss grew - both branches apply when both
    conditions hold, cancelling exactly.  ``exclusive=True`` lets the
    shrink branch win in that case.
    """
    if delta <= 0.0:
        raise NonPositiveDelta(f"delta = {delta}")
    total = loss_prev + loss_curr
    relative = 0.0 if total == 0.0 else 2.0 * (loss_prev - loss_curr) / total
    if exclusive:
        if loss_curr > loss_prev:
            return delta / growth
        if relative < improvement_threshold:
            return delta * growth
        return delta
    if relative < improvement_threshold:
        delta = delta * growth
    if loss_curr > loss_prev:
        delta = delta / growth
    return delta


def step(params: ParameterVector, gradient: np.ndarray, delta: float,
         quantization: QuantizationSpec | None = None) -> ParameterVector:
    """gamma <- gamma - delta * gradient, then optional lattice rounding."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != params.values.shape:
        raise LengthMismatch(f"{gradient.shape} gradient for {params.values.shape}")
    values = params.values - delta * gradient
    if quantization is not None:
        values = quantize_values(values, quantization)
    return params.with_values(values)


def eigenvalues_from_diagonals(t_diag: np.ndarray,
                               s_diag: np.ndarray | None) -> np.ndarray:
    """lambda_k = t_kk / s_kk (or t_kk when there is no second matrix).

    Slots where both diagonals (nearly) vanish are reported as
    INDETERMINATE; vanishing s with surviving t as INFINITE.
    """
    if s_diag is None:
        return np.asarray(t_diag, dtype=complex)
    out = np.empty(len(t_diag), dtype=complex)
    for k in range(len(t_diag)):
        t_k, s_k = t_diag[k], s_diag[k]
        if abs(s_k) < 1e-10:
            out[k] = INDETERMINATE if abs(t_k) < 1e-10 else INFINITE
        else:
            out[k] = t_k / s_k
    return out


def extract_eigenvalues(instance: ProblemInstance,
                        params: ParameterVector) -> np.ndarray:
    t, s = ls.triangularized(instance, params)
    return eigenvalues_from_diagonals(np.diag(t), np.diag(s) if s is not None else None)


def _guarded_match(computed: np.ndarray, reference: np.ndarray) -> float:
    if not np.all(np.isfinite(computed)):
        return math.inf
    return match_error(computed, reference)


class _EvaluatorState:
    """Loss/gradient provider for one run, fusing the matrix-exact path."""

    def __init__(self, instance: ProblemInstance, config: OptimizerConfig):
        self.instance = instance
        self.config = config
        self.engine = ls.MatrixEngine(instance, config.M)
        self.mode = config.evaluator
        self._iteration = 0
        self._call = 0

    def begin_iteration(self, iteration: int) -> None:
        self._iteration = iteration
        self._call = 0

    def _shot_rng(self) -> np.random.Generator:
        self._call += 1
        seq = np.random.SeedSequence(
            entropy=self.config.seed,
            spawn_key=(self._iteration, self._call))
        return np.random.default_rng(seq)

    def _evaluate(self, instance: ProblemInstance,
                  params: ParameterVector) -> ls.LossReport:
        if isinstance(self.mode, ls.CircuitExact):
            return ls.loss_circuit(instance, params)
        return ls.loss_circuit(instance, params, shots=self.mode.count,
                               rng=self._shot_rng())

    def loss_and_gradient(self, params: ParameterVector):
        """(loss, gradient) at ``params``."""
        if isinstance(self.mode, ls.MatrixExact):
            loss, gradient, _, _ = self.engine.loss_and_gradient(
                params.values, self.config.shift_angle)
            return loss, gradient
        base = self._evaluate(self.instance, params)
        if params.kind == GEV:
            report = ls.gradient_gev(self.instance, params, self._evaluate)
        else:
            report = ls.gradient_ev(self.instance, params, self._evaluate,
                                    self.config.shift_angle)
        return base.L, report.partials

    def loss_and_diagonals(self, params: ParameterVector):
        if isinstance(self.mode, ls.MatrixExact):
            loss, t, s = self.engine.loss(params.values)
        else:
            loss = self._evaluate(self.instance, params).L
            t, s = ls.triangularized(self.instance, params)
        return loss, np.diag(t), (np.diag(s) if s is not None else None)


def run(instance: ProblemInstance, config: OptimizerConfig) -> OptimizationTrace:
    """Minimize the loss from the all-zero start and record every iteration.

    Each iteration evaluates loss and gradient at the current parameters,
    adapts delta from the two most recent losses, steps (with optional
    quantization), extracts eigenvalues and tests the stop condition.
    """
    started = time.perf_counter()
    oracle = oracle_spectrum(instance)
    params = zero_parameters(instance.kind, instance.n, config.M)
    evaluator = _EvaluatorState(instance, config)
    delta = config.delta0
    loss_prev: float | None = None
    previous_eigs: np.ndarray | None = None
    rows: list[TraceRow] = []
    stop_reason = STOP_MAX_ITERATIONS
    t_diag = s_diag = None
    for iteration in range(1, config.max_iterations + 1):
        evaluator.begin_iteration(iteration)
        loss_curr, gradient = evaluator.loss_and_gradient(params)
        if loss_prev is not None:
            delta = adapt_delta(loss_prev, loss_curr, delta, config.growth,
                                config.improvement_threshold,
                                config.rule_exclusive)
        params = step(params, gradient, delta, config.quantization)
        loss_new, t_diag, s_diag = evaluator.loss_and_diagonals(params)
        eigs = eigenvalues_from_diagonals(t_diag, s_diag)
        err = _guarded_match(eigs, oracle)
        rows.append(TraceRow(iteration, loss_new, delta, eigs, err,
                             time.perf_counter() - started))
        if isinstance(config.stop_mode, AccuracyVsOracle):
            if err < config.stop_mode.epsilon:
                stop_reason = STOP_CONVERGED
                break
        else:
            if (previous_eigs is not None and iteration > config.stall_warmup
                    and np.all(np.isfinite(eigs))
                    and np.all(np.isfinite(previous_eigs))
                    and match_error(previous_eigs, eigs) <= config.stop_mode.threshold):
                stop_reason = STOP_STALLED
                break
        previous_eigs = eigs
        loss_prev = loss_curr
    return OptimizationTrace(rows, stop_reason, params, t_diag, s_diag,
                             oracle, config.echo(), instance.seed)


def trace_to_csv(trace: OptimizationTrace, path) -> None:
    """CSV export: iteration,loss,delta,match_error,lambda_re_*,lambda_im_*."""
    size = len(trace.oracle)
    header = (["iteration", "loss", "delta", "match_error"]
              + [f"lambda_re_{k}" for k in range(size)]
              + [f"lambda_im_{k}" for k in range(size)])
    try:
        with open(path, "w") as handle:
            handle.write(",".join(header) + "\n")
            for row in trace.rows:
                fields = [str(row.iteration), repr(row.loss), repr(row.delta),
                          repr(row.match_error)]
                fields += [repr(v.real) for v in row.eigenvalues]
                fields += [repr(v.imag) for v in row.eigenvalues]
                handle.write(",".join(fields) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def trace_summary(trace: OptimizationTrace) -> dict:
    final = trace.final
    return {
        "stop_reason": trace.stop_reason,
        "iterations": trace.iterations,
        "final_loss": final.loss,
        "final_match_error": final.match_error,
        "eigenvalues": [[v.real, v.imag] for v in final.eigenvalues],
        "seed": trace.seed,
        "config": trace.config,
    }


def save_summary(trace: OptimizationTrace, path) -> None:
    try:
        with open(path, "w") as handle:
            json.dump(trace_summary(trace), handle, indent=1, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
