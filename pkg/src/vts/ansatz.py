"""Parameterized unitaries built from per-qubit Rz-Ry-Rz triples and a CNOT
chain, repeated over M blocks, plus the bookkeeping around their parameter
vectors (shifting single entries, decimal quantization, checkpoints).

Conventions fixed here and relied on everywhere else:

* rotations are half-angle: Rz(t) = exp(-i Z t/2), Ry(t) = exp(-i Y t/2);
* qubit 0 of a register is the most significant bit of its index;
* parameter layout is block-major, qubit-major within a block, and
  (theta_z1, theta_y, theta_z2) within a qubit;
* in time order a block applies all rotation triples first, then the CNOT
  staircase control m -> target m+1 for m = 0..n-2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import BadParameterCount, IndexOutOfRange, IoFailure, KindMismatch
from .numerics import EV, GEV


def rz(theta: float) -> np.ndarray:
    half = theta / 2.0
    return np.array([[np.exp(-1j * half), 0], [0, np.exp(1j * half)]])


def ry(theta: float) -> np.ndarray:
    half = theta / 2.0
    c, s = np.cos(half), np.sin(half)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rotation_triple(t1: float, t2: float, t3: float) -> np.ndarray:
    """Rz(t1) @ Ry(t2) @ Rz(t3): t3 acts first on the state."""
    return rz(t1) @ ry(t2) @ rz(t3)


def param_count(kind: str, n: int, M: int) -> int:
    return (6 if kind == GEV else 3) * n * M


def _cnot_adjacent(n: int, control: int) -> np.ndarray:
    """CNOT on qubits (control, control+1) of an n-qubit register,
    qubit 0 = most significant bit."""
    cx = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
                  dtype=complex)
    left = np.eye(2 ** control, dtype=complex)
    right = np.eye(2 ** (n - control - 2), dtype=complex)
    return np.kron(np.kron(left, cx), right)


_CHAIN_CACHE: dict[int, np.ndarray] = {}


def cnot_chain(n: int) -> np.ndarray:
    """Matrix of the staircase C_{0,1}, C_{1,2}, ... applied in that time
    order (identity for n = 1)."""
    if n not in _CHAIN_CACHE:
        chain = np.eye(2 ** n, dtype=complex)
        for m in range(n - 1):
            chain = _cnot_adjacent(n, m) @ chain
        _CHAIN_CACHE[n] = chain
    return _CHAIN_CACHE[n]


def _kron_all(mats) -> np.ndarray:
    return reduce(np.kron, mats)


def build_unitary(n: int, M: int, block_params) -> np.ndarray:
    """The 2^n x 2^n unitary of M rotation+CNOT blocks.

    ``block_params`` holds 3*n*M angles in the canonical layout.
    """
    params = np.asarray(block_params, dtype=float)
    if params.shape != (3 * n * M,):
        raise BadParameterCount(f"expected {3 * n * M} angles, got {params.shape}")
    angles = params.reshape(M, n, 3)
    chain = cnot_chain(n)
    unitary = np.eye(2 ** n, dtype=complex)
    for k in range(M):
        triples = [rotation_triple(*angles[k, j]) for j in range(n)]
        unitary = chain @ _kron_all(triples) @ unitary
    return unitary


def conjugate_angles(block_params) -> np.ndarray:
    """Angles generating the entrywise complex conjugate of the unitary.

    Rz(t)* = Rz(-t) while Ry and CNOT are real, so negate the two z angles
    of every triple.
    """
    params = np.asarray(block_params, dtype=float).copy()
    params[0::3] *= -1
    params[2::3] *= -1
    return params


@dataclass(frozen=True)
class QuantizationSpec:
    """Keep d decimal digits of every parameter (lattice step 10^-d)."""

    d: int

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("d must be >= 0")

    @property
    def sigma(self) -> float:
        return 10.0 ** (-self.d)


@dataclass(frozen=True)
class ParameterVector:
    """Ordered optimization angles for one problem.

    gev vectors hold 6nM values, the first half driving the left (row)
    register unitary and the second half the right (column) one; ev vectors
    hold the 3nM values of the single unitary.
    """

    kind: str
    n: int
    M: int
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in (GEV, EV):
            raise KindMismatch(f"unknown kind {self.kind!r}")
        values = np.asarray(self.values, dtype=float).copy()
        expected = param_count(self.kind, self.n, self.M)
        if values.shape != (expected,):
            raise BadParameterCount(
                f"{self.kind} with n={self.n}, M={self.M} needs {expected} "
                f"values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameters must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def left_angles(self) -> np.ndarray:
        """Angles of the row-side unitary (gev first half; ev: the single
        set, conjugated downstream where needed)."""
        if self.kind == GEV:
            return self.values[: len(self.values) // 2]
        return self.values

    @property
    def right_angles(self) -> np.ndarray:
        if self.kind == GEV:
            return self.values[len(self.values) // 2:]
        return self.values

    def with_values(self, values) -> "ParameterVector":
        return ParameterVector(self.kind, self.n, self.M, values)


def zero_parameters(kind: str, n: int, M: int) -> ParameterVector:
    return ParameterVector(kind, n, M, np.zeros(param_count(kind, n, M)))


def shifted(params: ParameterVector, k: int, amount: float) -> ParameterVector:
    """Copy of ``params`` with entry ``k`` (0-based) moved by ``amount``."""
    if not 0 <= k < len(params):
        raise IndexOutOfRange(f"index {k} outside 0..{len(params) - 1}")
    values = params.values.copy()
    values[k] += amount
    return params.with_values(values)


def quantize(params: ParameterVector, spec: QuantizationSpec) -> ParameterVector:
    """Round every entry to the nearest multiple of 10^-d, ties away from
    zero."""
    return params.with_values(quantize_values(params.values, spec))


def quantize_values(values: np.ndarray, spec: QuantizationSpec) -> np.ndarray:
    step = spec.sigma
    scaled = np.abs(values) / step
    return np.copysign(np.floor(scaled + 0.5), values) * step


def save_checkpoint(path, params: ParameterVector) -> None:
    payload = {"kind": params.kind, "n": params.n, "M": params.M,
               "values": params.values.tolist()}
    try:
        with open(path, "w") as handle:
            json.dump(payload, handle)
            handle.write("\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_checkpoint(path) -> ParameterVector:
    try:
        with open(path) as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return ParameterVector(payload["kind"], int(payload["n"]), int(payload["M"]),
                           np.asarray(payload["values"], dtype=float))
