"""Exact statevector simulation of the loss-evaluation circuit.

The register holds, in order, the segments R(n), C(n), L(1), chi(n),
chi_t(n), psi(n), psi_t(n), K(1), Bt(1), B(1) - 6n+4 qubits total.  Qubit 0
is the most significant bit of the statevector index, and within every
segment the first qubit is the most significant bit of that segment's value.

The compiled program runs seven annotated stages:

* W0 - Hadamards on chi, psi and K;
* W1 - copy chi/psi basis indices into chi_t/psi_t under K=1;
* W2 - the controlled parameterized unitaries on chi and psi, decomposed
  into half-angle rotations sandwiched by K=0-controlled X gates so the
  stage acts as the identity when K=0;
* W3 - index-matching flips of R from chi and of C from psi under K=1;
* W4 - Hadamards on chi and psi;
* W5 - one multi-controlled X onto Bt per strictly-lower index pair (j > k)
  of (chi_t, psi_t) under K=1;
* W6 - first marks the K=0 reference branch on Bt (it never matches a W5
  pattern), then flips the flag qubit B wherever R=C=chi=psi=0 and Bt=1, so
  the B=1 subspace carries exactly the reference amplitude and the
  strictly-lower-triangle amplitudes.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .ansatz import ParameterVector, conjugate_angles
from .errors import (
    ImpossibleOutcome,
    IoFailure,
    LayoutMismatch,
    NotNormalized,
)
from .numerics import GEV, ProblemInstance

SEGMENT_ORDER = ("R", "C", "L", "chi", "chi_t", "psi", "psi_t", "K", "Bt", "B")

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)


@dataclass(frozen=True)
class RegisterLayout:
    """Qubit bookkeeping for a given index-register width n."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def total(self) -> int:
        return 6 * self.n + 4

    def segment_width(self, name: str) -> int:
        if name in ("L", "K", "Bt", "B"):
            return 1
        return self.n

    def segment_start(self, name: str) -> int:
        start = 0
        for candidate in SEGMENT_ORDER:
            if candidate == name:
                return start
            start += self.segment_width(candidate)
        raise KeyError(name)

    def qubits(self, name: str) -> range:
        start = self.segment_start(name)
        return range(start, start + self.segment_width(name))

    def basis_index(self, **segments: int) -> int:
        """Global statevector index with the named segments set and all
        others zero."""
        index = 0
        for name, value in segments.items():
            width = self.segment_width(name)
            if not 0 <= value < 2 ** width:
                raise ValueError(f"{name}={value} outside {width}-bit range")
            shift = self.total - self.segment_start(name) - width
            index |= value << shift
        return index

    def pattern(self, **segments: int) -> dict[int, int]:
        """Map qubit -> bit for fixed segment values (for marginals)."""
        fixed: dict[int, int] = {}
        for name, value in segments.items():
            width = self.segment_width(name)
            for local, qubit in enumerate(self.qubits(name)):
                fixed[qubit] = (value >> (width - 1 - local)) & 1
        return fixed


@dataclass
class StateVector:
    layout: RegisterLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (2 ** self.layout.total,):
            raise LayoutMismatch(
                f"{amps.shape} amplitudes for {self.layout.total} qubits")
        self.amplitudes = amps

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def copy(self) -> "StateVector":
        return StateVector(self.layout, self.amplitudes.copy())


@dataclass(frozen=True)
class Gate:
    """One elementary gate: H, X, RZ(theta) or RY(theta) on ``target`` with
    optional (qubit, polarity) controls."""

    name: str
    target: int
    controls: tuple[tuple[int, int], ...] = ()
    theta: float | None = None

    def matrix(self) -> np.ndarray:
        if self.name == "H":
            return _H
        if self.name == "X":
            return _X
        half = self.theta / 2.0
        if self.name == "RZ":
            return np.array([[np.exp(-1j * half), 0], [0, np.exp(1j * half)]])
        if self.name == "RY":
            c, s = np.cos(half), np.sin(half)
            return np.array([[c, -s], [s, c]], dtype=complex)
        raise ValueError(f"unknown gate {self.name!r}")

    def support(self) -> tuple[int, ...]:
        return (self.target,) + tuple(q for q, _ in self.controls)


@dataclass
class GateProgram:
    layout: RegisterLayout
    gates: list[Gate] = field(default_factory=list)
    #: (label, start, end) slices into ``gates``
    stages: list[tuple[str, int, int]] = field(default_factory=list)

    def begin_stage(self, label: str) -> None:
        self.stages.append((label, len(self.gates), len(self.gates)))

    def add(self, gate: Gate) -> None:
        total = self.layout.total
        for qubit in gate.support():
            if not 0 <= qubit < total:
                raise LayoutMismatch(f"qubit {qubit} outside layout")
        if gate.target in {q for q, _ in gate.controls}:
            raise ValueError("target cannot be a control")
        self.gates.append(gate)
        label, start, _ = self.stages[-1]
        self.stages[-1] = (label, start, len(self.gates))

    def stage_gates(self, label: str) -> list[Gate]:
        for name, start, end in self.stages:
            if name == label:
                return self.gates[start:end]
        raise KeyError(label)


def encode_input(instance: ProblemInstance) -> StateVector:
    """Superposition state holding matrix entries as amplitudes.

    a_ij sits at |i>_R |j>_C |0>_L and (gev only) b_ij at |i>_R |j>_C |1>_L,
    every other qubit in |0>.
    """
    layout = RegisterLayout(instance.n)
    amps = np.zeros(2 ** layout.total, dtype=complex)
    size = instance.size
    for i in range(size):
        for j in range(size):
            amps[layout.basis_index(R=i, C=j, L=0)] = instance.a[i, j]
            if instance.b is not None:
                amps[layout.basis_index(R=i, C=j, L=1)] = instance.b[i, j]
    state = StateVector(layout, amps)
    if abs(state.norm - 1.0) > 1e-10:
        raise NotNormalized(f"encoded norm {state.norm}")
    return state


def _controlled_ansatz_gates(program: GateProgram, register: str,
                             angles: np.ndarray, n: int, M: int) -> None:
    """Controlled unitary stage on ``register``: acts as the block ansatz
    when K=1 and as the identity when K=0.

    Per qubit and block the half-angle sandwich (time order)
    Rz C Rz C Ry C Ry Rz C Rz with K=0-controlled X gates multiplies to
    Rz(t1)Ry(t2)Rz(t3) under K=1 and cancels to the identity under K=0.
    """
    layout = program.layout
    k_qubit = layout.segment_start("K")
    reg = list(layout.qubits(register))
    angles = angles.reshape(M, n, 3)
    anti_k = ((k_qubit, 0),)
    for k in range(M):
        for j in range(n):
            t1, t2, t3 = angles[k, j]
            q = reg[j]
            program.add(Gate("RZ", q, theta=t3 / 2))
            program.add(Gate("X", q, anti_k))
            program.add(Gate("RZ", q, theta=t3 / 2))
            program.add(Gate("X", q, anti_k))
            program.add(Gate("RY", q, theta=t2 / 2))
            program.add(Gate("X", q, anti_k))
            program.add(Gate("RY", q, theta=t2 / 2))
            program.add(Gate("RZ", q, theta=t1 / 2))
            program.add(Gate("X", q, anti_k))
            program.add(Gate("RZ", q, theta=t1 / 2))
        for m in range(n - 1):
            program.add(Gate("X", reg[m + 1], ((k_qubit, 1), (reg[m], 1))))


def compile_program(params: ParameterVector, layout: RegisterLayout) -> GateProgram:
    """Emit the seven-stage program for the given parameters."""
    if params.n != layout.n:
        raise LayoutMismatch(f"params n={params.n} vs layout n={layout.n}")
    n, M = layout.n, params.M
    size = 2 ** n
    program = GateProgram(layout)
    k_qubit = layout.segment_start("K")
    bt_qubit = layout.segment_start("Bt")
    b_qubit = layout.segment_start("B")

    program.begin_stage("W0")
    for q in layout.qubits("chi"):
        program.add(Gate("H", q))
    for q in layout.qubits("psi"):
        program.add(Gate("H", q))
    program.add(Gate("H", k_qubit))

    program.begin_stage("W1")
    for src, dst in zip(layout.qubits("chi"), layout.qubits("chi_t")):
        program.add(Gate("X", dst, ((src, 1), (k_qubit, 1))))
    for src, dst in zip(layout.qubits("psi"), layout.qubits("psi_t")):
        program.add(Gate("X", dst, ((src, 1), (k_qubit, 1))))

    program.begin_stage("W2")
    if params.kind == GEV:
        left = params.left_angles
    else:
        # ev replaces the row-side unitary by the conjugate of the column one
        left = conjugate_angles(params.right_angles)
    _controlled_ansatz_gates(program, "chi", np.asarray(left), n, M)
    _controlled_ansatz_gates(program, "psi", np.asarray(params.right_angles), n, M)

    program.begin_stage("W3")
    for src, dst in zip(layout.qubits("chi"), layout.qubits("R")):
        program.add(Gate("X", dst, ((src, 1), (k_qubit, 1))))
    for src, dst in zip(layout.qubits("psi"), layout.qubits("C")):
        program.add(Gate("X", dst, ((src, 1), (k_qubit, 1))))

    program.begin_stage("W4")
    for q in layout.qubits("chi"):
        program.add(Gate("H", q))
    for q in layout.qubits("psi"):
        program.add(Gate("H", q))

    program.begin_stage("W5")
    chi_t = list(layout.qubits("chi_t"))
    psi_t = list(layout.qubits("psi_t"))
    for j in range(1, size):
        for k in range(j):
            controls = [(q, (j >> (n - 1 - local)) & 1)
                        for local, q in enumerate(chi_t)]
            controls += [(q, (k >> (n - 1 - local)) & 1)
                         for local, q in enumerate(psi_t)]
            controls.append((k_qubit, 1))
            program.add(Gate("X", bt_qubit, tuple(controls)))

    program.begin_stage("W6")
    zeros = [(q, 0) for name in ("R", "C", "chi", "psi") for q in layout.qubits(name)]
    # the K=0 reference branch never matches a W5 pattern; mark it on Bt
    # first so the B=1, Bt=1 subspace carries |a00|^2 + |b00|^2 alongside
    # the strictly-lower-triangle loss amplitudes
    ref = zeros + [(q, 0) for q in chi_t] + [(q, 0) for q in psi_t]
    ref.append((k_qubit, 0))
    program.add(Gate("X", bt_qubit, tuple(ref)))
    program.add(Gate("X", b_qubit, tuple(zeros + [(bt_qubit, 1)])))
    return program


def _apply_gate(amps: np.ndarray, total: int, gate: Gate) -> None:
    """In-place single gate update on the flat amplitude array."""
    tensor = amps.reshape((2,) * total)
    index: list = [slice(None)] * total
    for qubit, polarity in gate.controls:
        index[qubit] = polarity
    branch = tensor[tuple(index)]
    axis = gate.target - sum(1 for qubit, _ in gate.controls if qubit < gate.target)
    moved = np.moveaxis(branch, axis, 0)
    moved[...] = np.tensordot(gate.matrix(), moved, axes=(1, 0))


def apply_program(state: StateVector, program: GateProgram) -> StateVector:
    """Run every gate in order; returns a new state."""
    if program.layout.total != state.layout.total:
        raise LayoutMismatch("state and program disagree on layout")
    amps = state.amplitudes.copy()
    total = state.layout.total
    for gate in program.gates:
        _apply_gate(amps, total, gate)
    return StateVector(state.layout, amps)


def apply_stages(state: StateVector, program: GateProgram):
    """Yield (label, state) after each stage, for norm/invariant checks."""
    if program.layout.total != state.layout.total:
        raise LayoutMismatch("state and program disagree on layout")
    amps = state.amplitudes.copy()
    total = state.layout.total
    for label, start, end in program.stages:
        for gate in program.gates[start:end]:
            _apply_gate(amps, total, gate)
        yield label, StateVector(state.layout, amps.copy())


def marginal_probability(state: StateVector, pattern: dict[int, int]) -> float:
    """Probability mass on basis states whose fixed qubits match ``pattern``."""
    total = state.layout.total
    tensor = state.amplitudes.reshape((2,) * total)
    index: list = [slice(None)] * total
    for qubit, bit in pattern.items():
        if not 0 <= qubit < total:
            raise LayoutMismatch(f"qubit {qubit} outside layout")
        index[qubit] = bit
    return float(np.sum(np.abs(tensor[tuple(index)]) ** 2))


def measure(state: StateVector, qubit: int, rng: np.random.Generator):
    """Projective measurement of one qubit.

    Returns (outcome, collapsed renormalized state, probability of that
    outcome).  The outcome is drawn from ``rng``.
    """
    p_one = marginal_probability(state, {qubit: 1})
    outcome = 1 if rng.random() < p_one else 0
    probability = p_one if outcome == 1 else 1.0 - p_one
    if probability < 1e-15:
        raise ImpossibleOutcome(f"outcome {outcome} has probability {probability}")
    total = state.layout.total
    tensor = state.amplitudes.copy().reshape((2,) * total)
    index: list = [slice(None)] * total
    index[qubit] = 1 - outcome
    tensor[tuple(index)] = 0.0
    collapsed = tensor.reshape(-1) / np.sqrt(probability)
    return outcome, StateVector(state.layout, collapsed), float(probability)


def gate_family(gate: Gate) -> str:
    """Bucket a gate for counting: H, RZ, RY, X, CX, CCX, C{k}X."""
    n_controls = len(gate.controls)
    if gate.name != "X" or n_controls == 0:
        return gate.name
    if n_controls == 1:
        return "CX"
    if n_controls == 2:
        return "CCX"
    return f"C{n_controls}X"


@dataclass
class DepthReport:
    depth: int
    counts: Counter
    per_stage: dict[str, Counter]
    #: critical path of each stage layered in isolation
    stage_depth: dict[str, int]
    toffoli_equivalent: int


def depth_and_counts(program: GateProgram) -> DepthReport:
    """Greedy logical depth (gates with disjoint support share a layer; a
    multi-controlled X counts as one unit at its declared width) plus gate
    counts per family and per stage."""
    frontier = [0] * program.layout.total
    counts: Counter = Counter()
    per_stage: dict[str, Counter] = {}
    stage_depth: dict[str, int] = {}
    toffoli = 0
    depth = 0
    for label, start, end in program.stages:
        stage_counts: Counter = Counter()
        stage_frontier = [0] * program.layout.total
        stage_critical = 0
        for gate in program.gates[start:end]:
            layer = 1 + max(frontier[q] for q in gate.support())
            own_layer = 1 + max(stage_frontier[q] for q in gate.support())
            for q in gate.support():
                frontier[q] = layer
                stage_frontier[q] = own_layer
            depth = max(depth, layer)
            stage_critical = max(stage_critical, own_layer)
            family = gate_family(gate)
            counts[family] += 1
            stage_counts[family] += 1
            n_controls = len(gate.controls)
            if gate.name == "X" and n_controls >= 2:
                toffoli += 1 if n_controls == 2 else 2 * n_controls - 3
        per_stage[label] = stage_counts
        stage_depth[label] = stage_critical
    return DepthReport(depth, counts, per_stage, stage_depth, toffoli)


def export_program(program: GateProgram) -> str:
    """Line-oriented text form, one gate per line, with stage comments."""
    lines = []
    for label, start, end in program.stages:
        lines.append(f"# stage {label}")
        for gate in program.gates[start:end]:
            parts = [gate.name, str(gate.target)]
            for qubit, polarity in gate.controls:
                parts.append(f"ctrl:{'+' if polarity else '-'}{qubit}")
            if gate.theta is not None:
                parts.append(f"theta={gate.theta:.17g}")
            lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def write_program(program: GateProgram, path) -> None:
    try:
        with open(path, "w") as handle:
            handle.write(export_program(program))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
