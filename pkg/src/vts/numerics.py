"""Dense complex linear algebra behind the solver: the classical eigenvalue
oracle (characteristic polynomial + simultaneous root iteration), random
instance generation, permutation-matched eigenvalue distance and least-squares
line fits for the experiment harness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    DegenerateAbscissa,
    DegeneratePivot,
    ExhaustedResampling,
    IoFailure,
    KindMismatch,
    LengthMismatch,
    NoConvergence,
    NotNormalized,
    SingularPencil,
    ZeroMatrixPair,
)

GEV = "gev"
EV = "ev"

PIVOT_FLOOR = 1e-8
NORMALIZATION_TOL = 1e-12

#: eigenvalue slot whose value is unconstrained (t_kk = s_kk = 0)
INDETERMINATE = complex(float("nan"), float("nan"))
#: eigenvalue slot with s_kk = 0 but t_kk != 0
INFINITE = complex(float("inf"), float("inf"))


def is_indeterminate(value: complex) -> bool:
    return bool(np.isnan(complex(value).real))


@dataclass
class ProblemInstance:
    """A normalized eigenvalue problem.

    ``kind`` is ``"gev"`` (pencil ``A x = lambda B x``) or ``"ev"``
    (``A x = lambda x``, ``b`` is None).  Matrices are stored already divided
    by the joint Frobenius mass, so the squared entries of ``a`` (and ``b``)
    sum to one.
    """

    kind: str
    a: np.ndarray
    b: np.ndarray | None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (GEV, EV):
            raise ValueError(f"unknown kind {self.kind!r}")
        a = np.asarray(self.a, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        size = a.shape[0]
        if size < 2 or size & (size - 1):
            raise ValueError("matrix size must be a power of two, >= 2")
        if self.kind == EV and self.b is not None:
            raise KindMismatch("ev instance carries no second matrix")
        mass = _pair_mass(a, self.b)
        if abs(mass - 1.0) > NORMALIZATION_TOL:
            raise NotNormalized(f"squared mass {mass} != 1")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix entries must be finite")
        pivot = abs(a[0, 0]) ** 2
        if self.b is not None:
            b = np.asarray(self.b, dtype=complex)
            if b.shape != a.shape:
                raise ValueError("matrices must share a shape")
            if not np.all(np.isfinite(b)):
                raise ValueError("matrix entries must be finite")
            pivot += abs(b[0, 0]) ** 2
            b.setflags(write=False)
            self.b = b
        if pivot <= PIVOT_FLOOR:
            raise DegeneratePivot(f"|a00|^2 + |b00|^2 = {pivot} <= {PIVOT_FLOOR}")
        a.setflags(write=False)
        self.a = a

    @property
    def size(self) -> int:
        """Matrix dimension N."""
        return self.a.shape[0]

    @property
    def n(self) -> int:
        """Qubits per index register, log2(N)."""
        return int(self.size).bit_length() - 1


def _pair_mass(a, b) -> float:
    mass = float(np.sum(np.abs(a) ** 2))
    if b is not None:
        mass += float(np.sum(np.abs(b) ** 2))
    return mass


def normalize_pair(a: np.ndarray, b: np.ndarray | None = None):
    """Divide ``a`` (and ``b``) by the square root of their joint squared
    entry mass.

    Returns ``(a_scaled, b_scaled, scale)`` where ``scale`` is the divisor.
    Raises ZeroMatrixPair on zero mass and DegeneratePivot when the (0, 0)
    entries carry (almost) no mass after scaling.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex) if b is not None else None
    mass = _pair_mass(a, b)
    if mass <= 0.0:
        raise ZeroMatrixPair("matrices have zero combined mass")
    scale = float(np.sqrt(mass))
    a_scaled = a / scale
    b_scaled = b / scale if b is not None else None
    pivot = abs(a_scaled[0, 0]) ** 2
    if b_scaled is not None:
        pivot += abs(b_scaled[0, 0]) ** 2
    if pivot <= PIVOT_FLOOR:
        raise DegeneratePivot(f"|a00|^2 + |b00|^2 = {pivot} <= {PIVOT_FLOOR}")
    return a_scaled, b_scaled, scale


def make_instance(kind: str, a: np.ndarray, b: np.ndarray | None = None,
                  seed: int = 0) -> ProblemInstance:
    """Normalize raw matrices and wrap them in a ProblemInstance."""
    if kind == EV:
        if b is not None:
            raise KindMismatch("ev takes a single matrix")
        a_scaled, _, _ = normalize_pair(a, None)
        return ProblemInstance(EV, a_scaled, None, seed)
    if b is None:
        raise KindMismatch("gev needs two matrices")
    a_scaled, b_scaled, _ = normalize_pair(a, b)
    return ProblemInstance(GEV, a_scaled, b_scaled, seed)


def pencil_char_poly(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Coefficients c_0..c_N of p(lambda) = det(A - lambda*B).

    ``b=None`` means the identity.  The determinant is evaluated at N+1
    distinct nodes (roots of unity, where the Vandermonde system is perfectly
    conditioned) and the coefficients recovered by solving the interpolation
    system.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex) if b is not None else np.eye(a.shape[0], dtype=complex)
    size = a.shape[0]
    nodes = np.exp(2j * np.pi * np.arange(size + 1) / (size + 1))
    values = np.array([np.linalg.det(a - x * b) for x in nodes])
    vander = nodes[:, None] ** np.arange(size + 1)[None, :]
    coeffs = np.linalg.solve(vander, values)
    if np.max(np.abs(coeffs)) < 1e-12:
        raise SingularPencil("characteristic polynomial vanishes identically")
    return coeffs


def poly_roots(coeffs: np.ndarray, max_sweeps: int = 500) -> np.ndarray:
    """All roots of sum_k c_k x^k by simultaneous (Durand-Kerner) iteration.

    Iterates until the monic residual max |p(root)/c_N| drops below 1e-12,
    or below the roundoff floor of polynomial evaluation at the iterate
    (whichever is larger); raises NoConvergence otherwise.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    degree = len(coeffs) - 1
    if degree < 1:
        raise ValueError("need a polynomial of degree >= 1")
    if abs(coeffs[-1]) <= 1e-12:
        raise SingularPencil("leading coefficient (near-)zero")
    monic = coeffs / coeffs[-1]
    radius = 1.0 + float(np.max(np.abs(monic[:-1])))
    angles = 2.0 * np.pi * np.arange(degree) / degree + 0.4
    roots = radius * np.exp(1j * angles)
    powers = np.arange(degree + 1)
    for _ in range(max_sweeps):
        diffs = roots[:, None] - roots[None, :]
        np.fill_diagonal(diffs, 1.0)
        values = (roots[:, None] ** powers[None, :]) @ monic
        roots = roots - values / np.prod(diffs, axis=1)
        residual = np.abs((roots[:, None] ** powers[None, :]) @ monic)
        # evaluation roundoff floor: eps * sum_k |c_k| |x|^k
        floor = 4 * np.finfo(float).eps * (
            np.abs(roots[:, None]) ** powers[None, :] @ np.abs(monic))
        if np.all(residual < np.maximum(1e-12, floor)):
            return roots
    raise NoConvergence("root iteration did not reach tolerance")


def oracle_spectrum(instance: ProblemInstance) -> np.ndarray:
    """Classical reference spectrum of the (normalized) instance.

    Roots of det(A - lambda*B) for gev, det(A - lambda*I) for ev.
    """
    coeffs = pencil_char_poly(instance.a, instance.b)
    return poly_roots(coeffs)


def match_error(computed, reference) -> float:
    """(1/N) * min over pairings of sum_i |computed_i - reference_pi(i)|.

    Pairs the two spectra by minimal-cost assignment so the metric does not
    depend on root ordering.
    """
    computed = np.asarray(computed, dtype=complex)
    reference = np.asarray(reference, dtype=complex)
    if computed.shape != reference.shape:
        raise LengthMismatch(f"{computed.shape} vs {reference.shape}")
    cost = np.abs(computed[:, None] - reference[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / len(computed))


def random_instance(seed: int, size: int, min_modulus: float = 0.1,
                    kind: str = GEV, max_attempts: int = 1000) -> ProblemInstance:
    """Draw a random admissible instance from a counter-based stream.

    Entries have real and imaginary parts uniform on [-1, 1], keyed by
    ``seed`` (Philox).  Draws are rejected until the classical spectrum
    exists, every eigenvalue modulus is at least ``min_modulus`` and the
    (0, 0) pivot mass is acceptable.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    for _ in range(max_attempts):
        a = rng.uniform(-1.0, 1.0, (size, size)) + 1j * rng.uniform(-1.0, 1.0, (size, size))
        b = None
        if kind == GEV:
            b = rng.uniform(-1.0, 1.0, (size, size)) + 1j * rng.uniform(-1.0, 1.0, (size, size))
        try:
            instance = make_instance(kind, a, b, seed=seed)
            spectrum = oracle_spectrum(instance)
        except (DegeneratePivot, ZeroMatrixPair, SingularPencil, NoConvergence):
            continue
        if np.min(np.abs(spectrum)) >= min_modulus:
            return instance
    raise ExhaustedResampling(f"no admissible draw in {max_attempts} attempts")


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    residual: float

    def predict(self, x: float) -> float:
        return self.slope * x + self.intercept


def fit_line(points) -> LineFit:
    """Ordinary least squares line through (x, y) points.

    ``residual`` is the root-mean-square deviation of y from the fit.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.ptp(x) == 0.0:
        raise DegenerateAbscissa("all x values coincide")
    x_mean, y_mean = x.mean(), y.mean()
    slope = float(np.sum((x - x_mean) * (y - y_mean)) / np.sum((x - x_mean) ** 2))
    intercept = float(y_mean - slope * x_mean)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return LineFit(slope, intercept, residual)


def save_matrix_file(path, instance: ProblemInstance) -> None:
    """Write an instance as JSON: {"n", "kind", "a_re", "a_im"[, "b_re", "b_im"]}.

    ``n`` is the qubit count per index register (matrices are 2^n x 2^n).
    """
    payload = {
        "n": instance.n,
        "kind": instance.kind,
        "a_re": instance.a.real.tolist(),
        "a_im": instance.a.imag.tolist(),
    }
    if instance.b is not None:
        payload["b_re"] = instance.b.real.tolist()
        payload["b_im"] = instance.b.imag.tolist()
    try:
        with open(path, "w") as handle:
            json.dump(payload, handle, indent=1, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_matrix_file(path, seed: int = 0) -> ProblemInstance:
    """Read the JSON matrix format and return a normalized instance."""
    try:
        with open(path) as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"not valid JSON: {exc}") from exc
    try:
        n = int(payload["n"])
        kind = payload["kind"]
        a = np.asarray(payload["a_re"], dtype=float) + 1j * np.asarray(payload["a_im"], dtype=float)
    except KeyError as exc:
        raise ValueError(f"missing field {exc} in matrix file") from exc
    size = 2 ** n
    if a.shape != (size, size):
        raise ValueError(f"a must be {size}x{size} for n={n}, got {a.shape}")
    b = None
    if kind == GEV:
        if "b_re" not in payload:
            raise ValueError("gev file needs b_re/b_im")
        b = np.asarray(payload["b_re"], dtype=float) + 1j * np.asarray(payload["b_im"], dtype=float)
        if b.shape != a.shape:
            raise ValueError("a and b must share a shape")
    return make_instance(kind, a, b, seed=seed)
