"""Batch experiment driver: accuracy sweeps and quantization sweeps over
random instances, per-instance line fits, aggregate slopes with their
mean-square deviations, scaling-law checks and flat-file emission.

The accuracy sweep exploits that the stop threshold never influences the
optimization trajectory: one run down to the tightest epsilon is scanned
for the first crossing of every grid value, which produces cell rows
identical to independent cold runs at ~1/|grid| of the cost.  A cold mode
re-running per grid point is kept for cross-checks.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import loss as ls
from . import optimizer as op
from .ansatz import QuantizationSpec
from .errors import DegenerateAbscissa, IoFailure
from .numerics import EV, GEV, LineFit, fit_line, random_instance

DEFAULT_EPSILON_GRID = tuple(10.0 ** -j for j in range(1, 8))
DEFAULT_SIGMA_GRID = tuple(10.0 ** -d for d in range(1, 9))
EPSILON_FIT_WINDOW = 1e-3
SIGMA_FIT_WINDOW = 1e-6


@dataclass
class ExperimentSpec:
    kind: str
    instance_count: int = 20
    seed_base: int = 1
    size: int = 4
    M: int = 10
    epsilon_grid: tuple = DEFAULT_EPSILON_GRID
    sigma_grid: tuple = DEFAULT_SIGMA_GRID
    evaluator: object = field(default_factory=ls.MatrixExact)
    min_modulus: float = 0.1
    max_iterations: int = 200_000
    warm: bool = True
    rule_exclusive: bool = True
    parallelism: int | None = None

    def __post_init__(self):
        if self.instance_count < 1:
            raise ValueError("instance_count must be >= 1")
        for grid in (self.epsilon_grid, self.sigma_grid):
            if len(grid) == 0:
                raise ValueError("grids must be nonempty")
            if any(b >= a for a, b in zip(grid, grid[1:])):
                raise ValueError("grids must be strictly decreasing")

    def threads(self) -> int:
        if self.parallelism is not None:
            return max(1, self.parallelism)
        env = os.environ.get("VTS_THREADS")
        if env:
            return max(1, int(env))
        return os.cpu_count() or 1


@dataclass
class CellRow:
    seed: int
    kind: str
    x: float  # epsilon or sigma of this cell
    n_it: int
    loss_final: float
    match_error: float
    stop_reason: str


@dataclass
class InstanceFits:
    seed: int
    n_it: LineFit | None
    loss: LineFit | None
    match: LineFit | None = None  # sigma sweeps only


@dataclass
class SweepResult:
    kind: str
    sweep: str  # "epsilon" or "sigma"
    grid: tuple
    fit_window: float
    rows: list[CellRow]
    fits: list[InstanceFits]
    aggregates: dict
    config: dict


ScalingResult = SweepResult
SigmaResult = SweepResult


def _usable(row: CellRow) -> bool:
    return row.stop_reason in (op.STOP_CONVERGED, op.STOP_STALLED)


def fits_for_instance(rows: list[CellRow], fit_window: float,
                      with_match: bool) -> InstanceFits:
    """Per-instance line fits on the log10 abscissa, window-restricted."""
    usable = [r for r in rows if _usable(r) and r.x <= fit_window * (1 + 1e-9)]
    seed = rows[0].seed
    n_it_fit = loss_fit = match_fit = None
    if len(usable) >= 2:
        try:
            n_it_fit = fit_line([(math.log10(r.x), r.n_it) for r in usable])
        except DegenerateAbscissa:
            n_it_fit = None
        loss_rows = [r for r in usable if r.loss_final > 0.0]
        if len(loss_rows) >= 2:
            try:
                loss_fit = fit_line([(math.log10(r.x), math.log10(r.loss_final))
                                     for r in loss_rows])
            except DegenerateAbscissa:
                loss_fit = None
        if with_match:
            match_rows = [r for r in usable if r.match_error > 0.0]
            if len(match_rows) >= 2:
                try:
                    match_fit = fit_line(
                        [(math.log10(r.x), math.log10(r.match_error))
                         for r in match_rows])
                except DegenerateAbscissa:
                    match_fit = None
    return InstanceFits(seed, n_it_fit, loss_fit, match_fit)


def _mean_dev(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    return mean, float(np.sqrt(np.mean((arr - mean) ** 2)))


def aggregate_fits(fits: list[InstanceFits]) -> dict:
    """Slope/intercept aggregates in the sign conventions of the scaling
    laws: N_it = -kappa_N log10(x) - C_N, log10(loss) = kappa_L log10(x) - C_L,
    log10(match) = kappa_lambda log10(x) - C_lambda.  Every aggregate comes
    with its mean-square deviation over instances."""
    out: dict = {}
    families = [
        ("N", [f.n_it for f in fits if f.n_it is not None], -1.0),
        ("L", [f.loss for f in fits if f.loss is not None], 1.0),
        ("lambda", [f.match for f in fits if f.match is not None], 1.0),
    ]
    for name, lines, orientation in families:
        out[f"instances_{name}"] = len(lines)
        if not lines:
            continue
        kappa_mean, kappa_dev = _mean_dev([orientation * line.slope for line in lines])
        c_mean, c_dev = _mean_dev([-line.intercept for line in lines])
        out[f"kappa_{name}_mean"] = kappa_mean
        out[f"kappa_{name}_dev"] = kappa_dev
        out[f"C_{name}_mean"] = c_mean
        out[f"C_{name}_dev"] = c_dev
    return out


def _scaling_instance(spec: ExperimentSpec, index: int) -> list[CellRow]:
    seed = spec.seed_base + index
    instance = random_instance(seed, spec.size, spec.min_modulus, spec.kind)
    grid = list(spec.epsilon_grid)
    rows: list[CellRow] = []
    if spec.warm:
        config = op.OptimizerConfig(
            stop_mode=op.AccuracyVsOracle(grid[-1]), M=spec.M,
            evaluator=spec.evaluator, seed=seed,
            max_iterations=spec.max_iterations,
            rule_exclusive=spec.rule_exclusive)
        trace = op.run(instance, config)
        cursor = 0
        for eps in grid:
            hit = None
            for row in trace.rows[cursor:]:
                if row.match_error < eps:
                    hit = row
                    break
            if hit is None:
                rows.append(CellRow(seed, spec.kind, eps, trace.iterations,
                                    math.nan, math.nan, "missing"))
            else:
                cursor = hit.iteration - 1
                rows.append(CellRow(seed, spec.kind, eps, hit.iteration,
                                    hit.loss, hit.match_error, op.STOP_CONVERGED))
        return rows
    for eps in grid:
        config = op.OptimizerConfig(
            stop_mode=op.AccuracyVsOracle(eps), M=spec.M,
            evaluator=spec.evaluator, seed=seed,
            max_iterations=spec.max_iterations,
            rule_exclusive=spec.rule_exclusive)
        trace = op.run(instance, config)
        if trace.stop_reason == op.STOP_CONVERGED:
            rows.append(CellRow(seed, spec.kind, eps, trace.iterations,
                                trace.final.loss, trace.final.match_error,
                                op.STOP_CONVERGED))
        else:
            rows.append(CellRow(seed, spec.kind, eps, trace.iterations,
                                math.nan, math.nan, "missing"))
    return rows


def _sigma_instance(spec: ExperimentSpec, index: int) -> list[CellRow]:
    seed = spec.seed_base + index
    instance = random_instance(seed, spec.size, spec.min_modulus, spec.kind)
    rows: list[CellRow] = []
    for sigma in spec.sigma_grid:
        d = round(-math.log10(sigma))
        config = op.OptimizerConfig(
            stop_mode=op.ConvergenceStall(), M=spec.M,
            evaluator=spec.evaluator, seed=seed,
            quantization=QuantizationSpec(d),
            max_iterations=spec.max_iterations,
            rule_exclusive=spec.rule_exclusive)
        trace = op.run(instance, config)
        reason = (op.STOP_STALLED if trace.stop_reason == op.STOP_STALLED
                  else "missing")
        rows.append(CellRow(seed, spec.kind, sigma, trace.iterations,
                            trace.final.loss, trace.final.match_error, reason))
    return rows


def _run_parallel(worker, spec: ExperimentSpec) -> list[list[CellRow]]:
    indices = range(spec.instance_count)
    threads = spec.threads()
    if threads <= 1 or spec.instance_count == 1:
        return [worker(spec, i) for i in indices]
    with ProcessPoolExecutor(max_workers=min(threads, spec.instance_count)) as pool:
        return list(pool.map(_WorkerCall(worker, spec), indices))


class _WorkerCall:
    """Picklable (worker, spec) closure for the process pool."""

    def __init__(self, worker, spec):
        self.worker = worker
        self.spec = spec

    def __call__(self, index):
        return self.worker(self.spec, index)


def _spec_echo(spec: ExperimentSpec) -> dict:
    evaluator = spec.evaluator
    if isinstance(evaluator, ls.MatrixExact):
        ev_str = "matrix"
    elif isinstance(evaluator, ls.CircuitExact):
        ev_str = "circuit"
    else:
        ev_str = f"shots:{evaluator.count}"
    return {
        "kind": spec.kind,
        "instance_count": spec.instance_count,
        "seed_base": spec.seed_base,
        "size": spec.size,
        "M": spec.M,
        "evaluator": ev_str,
        "min_modulus": spec.min_modulus,
        "max_iterations": spec.max_iterations,
        "warm": spec.warm,
        "rule_exclusive": spec.rule_exclusive,
    }


def scaling_experiment(spec: ExperimentSpec) -> SweepResult:
    """Accuracy sweep: N_it and final loss against the target epsilon."""
    per_instance = _run_parallel(_scaling_instance, spec)
    rows = [row for group in per_instance for row in group]
    fits = [fits_for_instance(group, EPSILON_FIT_WINDOW, with_match=False)
            for group in per_instance]
    return SweepResult(spec.kind, "epsilon", tuple(spec.epsilon_grid),
                       EPSILON_FIT_WINDOW, rows, fits, aggregate_fits(fits),
                       _spec_echo(spec))


def sigma_experiment(spec: ExperimentSpec) -> SweepResult:
    """Quantization sweep: stall iteration count, loss floor and eigenvalue
    accuracy floor against the parameter lattice step."""
    per_instance = _run_parallel(_sigma_instance, spec)
    rows = [row for group in per_instance for row in group]
    fits = [fits_for_instance(group, SIGMA_FIT_WINDOW, with_match=True)
            for group in per_instance]
    return SweepResult(spec.kind, "sigma", tuple(spec.sigma_grid),
                       SIGMA_FIT_WINDOW, rows, fits, aggregate_fits(fits),
                       _spec_echo(spec))


@dataclass
class CheckRow:
    name: str
    value: float
    low: float
    high: float
    passed: bool


@dataclass
class TheoryReport:
    checks: list[CheckRow]
    constants: dict
    flagged: list

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def theory_checks(scaling: SweepResult, sigma: SweepResult,
                  epsilon_kappa_band: tuple = (1.75, 2.25),
                  sigma_kappa_l_band: tuple = (1.6, 2.45),
                  kappa_lambda_band: tuple = (0.8, 1.25)) -> TheoryReport:
    """Assert the quadratic loss law (slope ~2 on both sweeps) and the
    accuracy-floor law (slope ~1 against log sigma); flag instances whose
    individual slopes leave the bands."""
    checks = []
    flagged = []

    def add(name, aggregates, key, band, family):
        value = aggregates.get(key, math.nan)
        passed = bool(band[0] <= value <= band[1]) if math.isfinite(value) else False
        checks.append(CheckRow(name, value, band[0], band[1], passed))
        return passed

    add("epsilon-sweep kappa_L", scaling.aggregates, "kappa_L_mean",
        epsilon_kappa_band, "L")
    add("sigma-sweep kappa_L", sigma.aggregates, "kappa_L_mean",
        sigma_kappa_l_band, "L")
    add("sigma-sweep kappa_lambda", sigma.aggregates, "kappa_lambda_mean",
        kappa_lambda_band, "lambda")
    for fit in scaling.fits:
        if fit.loss is not None and not (
                epsilon_kappa_band[0] <= fit.loss.slope <= epsilon_kappa_band[1]):
            flagged.append(("epsilon:kappa_L", fit.seed, fit.loss.slope))
    for fit in sigma.fits:
        if fit.loss is not None and not (
                sigma_kappa_l_band[0] <= fit.loss.slope <= sigma_kappa_l_band[1]):
            flagged.append(("sigma:kappa_L", fit.seed, fit.loss.slope))
        if fit.match is not None and not (
                kappa_lambda_band[0] <= fit.match.slope <= kappa_lambda_band[1]):
            flagged.append(("sigma:kappa_lambda", fit.seed, fit.match.slope))
    constants = {}
    agg = sigma.aggregates
    if "kappa_lambda_mean" in agg and agg["kappa_lambda_mean"] != 0:
        constants["lambda_sigma"] = 10.0 ** (
            -agg["C_lambda_mean"] / agg["kappa_lambda_mean"])
    if "kappa_L_mean" in agg and agg["kappa_L_mean"] != 0:
        constants["L_sigma"] = 10.0 ** (-agg["C_L_mean"] / agg["kappa_L_mean"])
    return TheoryReport(checks, constants, flagged)


CSV_HEADER = "seed,kind,eps_or_sigma,n_it,loss_final,match_error,stop_reason"


def rows_to_csv(rows: list[CellRow]) -> str:
    lines = [CSV_HEADER]
    for row in rows:
        lines.append(",".join([
            str(row.seed), row.kind, repr(row.x), str(row.n_it),
            repr(row.loss_final), repr(row.match_error), row.stop_reason]))
    return "\n".join(lines) + "\n"


def _fit_dict(fit: LineFit | None):
    if fit is None:
        return None
    return {"slope": fit.slope, "intercept": fit.intercept,
            "residual": fit.residual}


def result_to_dict(result: SweepResult) -> dict:
    return {
        "kind": result.kind,
        "sweep": result.sweep,
        "grid": list(result.grid),
        "fit_window": result.fit_window,
        "config": result.config,
        "rows": [[row.seed, row.kind, row.x, row.n_it, row.loss_final,
                  row.match_error, row.stop_reason] for row in result.rows],
        "fits": [{"seed": fit.seed, "n_it": _fit_dict(fit.n_it),
                  "loss": _fit_dict(fit.loss), "match": _fit_dict(fit.match)}
                 for fit in result.fits],
        "aggregates": result.aggregates,
    }


def emit_results(result: SweepResult, path, fmt: str = "csv") -> None:
    """Write one sweep to disk; csv holds the raw cell rows, json the full
    nested result.  Output bytes depend only on the result."""
    try:
        if fmt == "csv":
            with open(path, "w") as handle:
                handle.write(rows_to_csv(result.rows))
        elif fmt == "json":
            with open(path, "w") as handle:
                json.dump(result_to_dict(result), handle, indent=1, sort_keys=True)
                handle.write("\n")
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_result_json(path) -> dict:
    try:
        with open(path) as handle:
            return json.load(handle)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def parse_rows_csv(text: str) -> list[CellRow]:
    rows = []
    lines = text.strip().splitlines()
    if lines and lines[0] == CSV_HEADER:
        lines = lines[1:]
    for line in lines:
        seed, kind, x, n_it, loss_final, match, reason = line.split(",")
        rows.append(CellRow(int(seed), kind, float(x), int(n_it),
                            float(loss_final), float(match), reason))
    return rows


def plot_series(rows_by_label: dict[str, list[CellRow]]) -> str:
    """Aggregate emitted rows into x/y series (means over instances) for
    the iteration-count, loss and accuracy-floor figures."""
    lines = ["figure,kind,x,y,count"]
    for label, rows in sorted(rows_by_label.items()):
        sweep = "sigma" if "sigma" in label else "accuracy"
        kind = rows[0].kind if rows else ""
        grid = sorted({row.x for row in rows}, reverse=True)
        for x in grid:
            cells = [r for r in rows if r.x == x and _usable(r)]
            if not cells:
                continue
            log_x = math.log10(x)
            mean_it = float(np.mean([c.n_it for c in cells]))
            lines.append(f"iterations_vs_{sweep},{kind},{log_x!r},{mean_it!r},{len(cells)}")
            positive = [c for c in cells if c.loss_final > 0]
            if positive:
                mean_log_loss = float(np.mean([math.log10(c.loss_final) for c in positive]))
                lines.append(f"loss_vs_{sweep},{kind},{log_x!r},{mean_log_loss!r},{len(positive)}")
            if sweep == "sigma":
                positive = [c for c in cells if c.match_error > 0]
                if positive:
                    mean_log_match = float(np.mean(
                        [math.log10(c.match_error) for c in positive]))
                    lines.append(f"min_accuracy_vs_sigma,{kind},{log_x!r},"
                                 f"{mean_log_match!r},{len(positive)}")
    return "\n".join(lines) + "\n"
