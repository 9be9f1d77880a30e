"""Variational triangularization solver for eigenvalues and generalized
eigenvalues of complex matrices, with an exact statevector simulation of the
quantum loss-evaluation circuit and a desk-scale experiment harness."""

from .ansatz import (
    ParameterVector,
    QuantizationSpec,
    build_unitary,
    quantize,
    shifted,
    zero_parameters,
)
from .circuit import (
    Gate,
    GateProgram,
    RegisterLayout,
    StateVector,
    apply_program,
    compile_program,
    depth_and_counts,
    encode_input,
    export_program,
    marginal_probability,
    measure,
)
from .harness import (
    ExperimentSpec,
    SweepResult,
    emit_results,
    scaling_experiment,
    sigma_experiment,
    theory_checks,
)
from .loss import (
    CircuitExact,
    GradientReport,
    LossReport,
    MatrixExact,
    Shots,
    gradient_ev,
    gradient_gev,
    loss_circuit,
    loss_matrix_exact,
    shots_for_accuracy,
)
from .numerics import (
    EV,
    GEV,
    LineFit,
    ProblemInstance,
    fit_line,
    load_matrix_file,
    make_instance,
    match_error,
    normalize_pair,
    oracle_spectrum,
    pencil_char_poly,
    poly_roots,
    random_instance,
    save_matrix_file,
)
from .optimizer import (
    AccuracyVsOracle,
    ConvergenceStall,
    OptimizationTrace,
    OptimizerConfig,
    adapt_delta,
    extract_eigenvalues,
    run,
    step,
)

__version__ = "0.1.0"
