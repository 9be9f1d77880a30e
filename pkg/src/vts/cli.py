"""Command-line front end.

Subcommands: solve one instance, print the classical oracle spectrum, run
the sweep experiments, export a compiled gate program with depth/count
accounting, and aggregate emitted rows into plot series.

Exit codes: 0 success, 2 validation error, 3 convergence failure, 4 I/O
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import ansatz as az
from . import circuit as ct
from . import harness as hn
from . import loss as ls
from . import numerics as nm
from . import optimizer as op
from .errors import (
    ExhaustedResampling,
    IoFailure,
    NoConvergence,
    VtsError,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4


def _parse_evaluator(text: str):
    if text == "matrix":
        return ls.MatrixExact()
    if text == "circuit":
        return ls.CircuitExact()
    if text.startswith("shots:"):
        return ls.Shots(int(text.split(":", 1)[1]))
    raise ValueError(f"unknown evaluator {text!r} (matrix|circuit|shots:N)")


def _parse_grid(text: str) -> tuple:
    return tuple(float(part) for part in text.split(","))


def _load_instance(path: str, kind_override: str | None, seed: int):
    instance = nm.load_matrix_file(path, seed=seed)
    if kind_override is None or kind_override == instance.kind:
        return instance
    if kind_override == nm.EV:
        # solve the plain eigenvalue problem of the first matrix alone
        return nm.make_instance(nm.EV, np.asarray(instance.a), seed=seed)
    raise ValueError("cannot solve gev from a file without a second matrix")


def _cmd_solve(args) -> int:
    instance = _load_instance(args.input, args.kind, args.seed)
    quantization = az.QuantizationSpec(args.quantize) if args.quantize is not None else None
    config = op.OptimizerConfig(
        stop_mode=op.AccuracyVsOracle(args.eps),
        M=args.M,
        evaluator=_parse_evaluator(args.evaluator),
        seed=args.seed,
        max_iterations=args.max_iterations,
        quantization=quantization,
        rule_exclusive=not args.rule_literal,
    )
    trace = op.run(instance, config)
    if args.trace:
        op.trace_to_csv(trace, args.trace)
    json.dump(op.trace_summary(trace), sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK if trace.stop_reason == op.STOP_CONVERGED else EXIT_CONVERGENCE


def _cmd_oracle(args) -> int:
    instance = _load_instance(args.input, args.kind, 0)
    spectrum = nm.oracle_spectrum(instance)
    json.dump({
        "kind": instance.kind,
        "n": instance.n,
        "eigenvalues": [[v.real, v.imag] for v in spectrum],
    }, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def _experiment_spec(args) -> hn.ExperimentSpec:
    spec = hn.ExperimentSpec(
        kind=args.kind,
        instance_count=100 if getattr(args, "full_100", False) else args.instances,
        seed_base=args.seed_base,
        M=args.M,
        evaluator=_parse_evaluator(args.evaluator),
        max_iterations=args.max_iterations,
        warm=not getattr(args, "cold_start", False),
        parallelism=args.threads,
    )
    if getattr(args, "eps_grid", None):
        spec.epsilon_grid = _parse_grid(args.eps_grid)
    if getattr(args, "sigma_grid", None):
        spec.sigma_grid = _parse_grid(args.sigma_grid)
    spec.__post_init__()
    return spec


def _emit_sweep(result: hn.SweepResult, out_dir: str, label: str) -> None:
    directory = Path(out_dir)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    hn.emit_results(result, directory / f"{label}_rows.csv", "csv")
    hn.emit_results(result, directory / f"{label}_result.json", "json")


def _cmd_experiment(args) -> int:
    spec = _experiment_spec(args)
    if args.sweep == "scaling":
        result = hn.scaling_experiment(spec)
        label = f"scaling_{spec.kind}"
    else:
        result = hn.sigma_experiment(spec)
        label = f"sigma_{spec.kind}"
    _emit_sweep(result, args.out, label)
    json.dump({"label": label, "aggregates": result.aggregates,
               "config": result.config}, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def _cmd_compile(args) -> int:
    params = az.zero_parameters(args.kind, args.n, args.M)
    layout = ct.RegisterLayout(args.n)
    program = ct.compile_program(params, layout)
    if args.out:
        ct.write_program(program, args.out)
    else:
        sys.stdout.write(ct.export_program(program))
    if args.counts:
        report = ct.depth_and_counts(program)
        sys.stdout.write(f"qubits: {layout.total}\n")
        sys.stdout.write(f"total depth: {report.depth}\n")
        sys.stdout.write(f"toffoli-equivalent multi-controlled cost: "
                         f"{report.toffoli_equivalent}\n")
        sys.stdout.write("stage  depth  counts\n")
        for label, _, _ in program.stages:
            counts = " ".join(f"{family}={count}" for family, count in
                              sorted(report.per_stage[label].items()))
            sys.stdout.write(f"{label:5}  {report.stage_depth[label]:5}  {counts}\n")
    return EXIT_OK


def _cmd_plotdata(args) -> int:
    directory = Path(args.in_dir)
    rows_by_label: dict[str, list[hn.CellRow]] = {}
    for path in sorted(directory.glob("*_rows.csv")):
        label = path.name[: -len("_rows.csv")]
        try:
            rows_by_label[label] = hn.parse_rows_csv(path.read_text())
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    if not rows_by_label:
        raise ValueError(f"no *_rows.csv files under {directory}")
    text = hn.plot_series(rows_by_label)
    try:
        Path(args.out).write_text(text)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vts",
        description="Variational triangularization solver for eigenvalues "
                    "and generalized eigenvalues of complex matrices.")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="optimize one instance from a matrix file")
    solve.add_argument("--input", required=True)
    solve.add_argument("--kind", choices=[nm.GEV, nm.EV])
    solve.add_argument("--eps", type=float, default=1e-4)
    solve.add_argument("--evaluator", default="matrix")
    solve.add_argument("--M", type=int, default=10)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--trace")
    solve.add_argument("--max-iterations", type=int, default=200_000)
    solve.add_argument("--quantize", type=int, default=None,
                       help="decimal digits kept in the parameters")
    solve.add_argument("--rule-literal", action="store_true",
                       help="let both branches of the step rule fire (and "
                            "cancel) when the loss grows")
    solve.set_defaults(func=_cmd_solve)

    oracle = sub.add_parser("oracle", help="print the classical spectrum")
    oracle.add_argument("--input", required=True)
    oracle.add_argument("--kind", choices=[nm.GEV, nm.EV])
    oracle.set_defaults(func=_cmd_oracle)

    experiment = sub.add_parser("experiment", help="batch sweeps over random instances")
    experiment.add_argument("sweep", choices=["scaling", "sigma"])
    experiment.add_argument("--kind", choices=[nm.GEV, nm.EV], required=True)
    experiment.add_argument("--instances", type=int, default=20)
    experiment.add_argument("--seed-base", type=int, default=1)
    experiment.add_argument("--out", required=True)
    experiment.add_argument("--M", type=int, default=10)
    experiment.add_argument("--evaluator", default="matrix")
    experiment.add_argument("--max-iterations", type=int, default=200_000)
    experiment.add_argument("--full-100", action="store_true",
                            help="run the full 100-instance protocol")
    experiment.add_argument("--cold-start", action="store_true",
                            help="restart from zero parameters at every "
                                 "accuracy grid point")
    experiment.add_argument("--eps-grid", help="comma-separated accuracy grid")
    experiment.add_argument("--sigma-grid", help="comma-separated lattice grid")
    experiment.add_argument("--threads", type=int, default=None,
                            help="worker processes (default: VTS_THREADS or cores)")
    experiment.set_defaults(func=_cmd_experiment)

    compile_cmd = sub.add_parser("compile", help="emit the gate program and counts")
    compile_cmd.add_argument("--n", type=int, required=True)
    compile_cmd.add_argument("--M", type=int, default=10)
    compile_cmd.add_argument("--kind", choices=[nm.GEV, nm.EV], default=nm.GEV)
    compile_cmd.add_argument("--out")
    compile_cmd.add_argument("--counts", action="store_true")
    compile_cmd.set_defaults(func=_cmd_compile)

    plotdata = sub.add_parser("plotdata", help="x/y series from emitted rows")
    plotdata.add_argument("--in", dest="in_dir", required=True)
    plotdata.add_argument("--out", required=True)
    plotdata.set_defaults(func=_cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IoFailure as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NoConvergence, ExhaustedResampling) as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (VtsError, ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
