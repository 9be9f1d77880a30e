"""Loss evaluation (matrix-exact, circuit-exact and sampled) and
parameter-shift gradients.

The loss of a parameter vector is the squared mass of the strictly-lower
triangle of T = U_left^T A U_right (plus S = U_left^T B U_right for the
two-matrix problem), where U_left/U_right come from the block ansatz; for
the single-matrix problem U_left is the conjugate of U_right so T = U' A U.

Three evaluation routes return the same LossReport shape: direct matrix
products, exact marginals of the simulated circuit, and binomially sampled
shots with post-selection on the flag ancilla.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import circuit as ct
from .ansatz import ParameterVector, build_unitary, cnot_chain, shifted
from .errors import (
    DegenerateMass,
    InvalidShiftAngle,
    KindMismatch,
    LayoutMismatch,
    NoSuccessfulShots,
)
from .numerics import EV, GEV, ProblemInstance

MODE_MATRIX = "matrix"
MODE_CIRCUIT = "circuit"
MODE_SHOTS = "shots"


@dataclass(frozen=True)
class MatrixExact:
    """Evaluate the loss by direct matrix products."""


@dataclass(frozen=True)
class CircuitExact:
    """Evaluate the loss from exact marginals of the simulated circuit."""


@dataclass(frozen=True)
class Shots:
    """Evaluate the loss from ``count`` simulated probabilistic runs."""

    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("shot count must be >= 1")


@dataclass
class LossReport:
    L: float
    p1: float
    success_p: float
    a_mass: float
    mode: str
    shots_used: int = 0


@dataclass
class GradientReport:
    partials: np.ndarray
    evaluations: int


def reference_mass(instance: ProblemInstance) -> float:
    """|a00~|^2 + |b00~|^2 with the 2^{2n} amplification the circuit applies
    to the reference amplitudes."""
    mass = abs(instance.a[0, 0]) ** 2
    if instance.b is not None:
        mass += abs(instance.b[0, 0]) ** 2
    return float(4.0 ** (2 * instance.n) * mass)


def extract_loss(a_mass: float, p1: float) -> float:
    """Invert the probability relation: L = a_mass * p1 / (1 - p1)."""
    if p1 >= 1.0:
        return math.inf
    return a_mass * p1 / (1.0 - p1)


def _check(instance: ProblemInstance, params: ParameterVector) -> None:
    if params.kind != instance.kind:
        raise KindMismatch(f"{params.kind} parameters for {instance.kind} instance")
    if params.n != instance.n:
        raise LayoutMismatch(f"params n={params.n} vs instance n={instance.n}")


def triangularized(instance: ProblemInstance, params: ParameterVector):
    """(T, S) for the current parameters; S is None for the one-matrix kind."""
    _check(instance, params)
    u_right = build_unitary(params.n, params.M, params.right_angles)
    if params.kind == GEV:
        u_left = build_unitary(params.n, params.M, params.left_angles)
    else:
        u_left = np.conj(u_right)
    t = u_left.T @ instance.a @ u_right
    s = u_left.T @ instance.b @ u_right if instance.b is not None else None
    return t, s


def _triangle_mass(t: np.ndarray, s: np.ndarray | None) -> float:
    loss = float(np.sum(np.abs(np.tril(t, -1)) ** 2))
    if s is not None:
        loss += float(np.sum(np.abs(np.tril(s, -1)) ** 2))
    return loss


def _report(instance: ProblemInstance, loss: float, mode: str,
            shots_used: int = 0) -> LossReport:
    a_mass = reference_mass(instance)
    g_squared = a_mass + loss
    p1 = loss / g_squared
    success_p = g_squared / 2.0 ** (4 * instance.n + 1)
    return LossReport(loss, p1, success_p, a_mass, mode, shots_used)


def loss_matrix_exact(instance: ProblemInstance, params: ParameterVector) -> LossReport:
    t, s = triangularized(instance, params)
    return _report(instance, _triangle_mass(t, s), MODE_MATRIX)


def circuit_probabilities(instance: ProblemInstance, params: ParameterVector):
    """(success_p, p1) from exact marginals of the full program."""
    _check(instance, params)
    layout = ct.RegisterLayout(instance.n)
    program = ct.compile_program(params, layout)
    state = ct.apply_program(ct.encode_input(instance), program)
    p_b = ct.marginal_probability(state, layout.pattern(B=1))
    p_k1_b1 = ct.marginal_probability(state, layout.pattern(B=1, K=1))
    return p_b, p_k1_b1 / p_b


def sample_loss_estimate(a_mass: float, success_p: float, p1: float,
                         shots: int, rng: np.random.Generator):
    """Shot-sampled estimate from known exact probabilities.

    Draws the number of post-selected successes and of K=1 outcomes
    binomially, which is distribution-identical to replaying the circuit
    shot by shot.  Returns (estimate, successes).
    """
    successes = int(rng.binomial(shots, success_p))
    if successes == 0:
        raise NoSuccessfulShots(f"all {shots} runs discarded by post-selection")
    k_ones = int(rng.binomial(successes, p1))
    return extract_loss(a_mass, k_ones / successes), successes


def loss_circuit(instance: ProblemInstance, params: ParameterVector,
                 shots: int | None = None,
                 rng: np.random.Generator | None = None) -> LossReport:
    """Loss via the simulated circuit.

    ``shots=None`` reads exact marginals; otherwise ``shots`` independent
    runs are sampled (ancilla post-selection, then the flag qubit) and the
    loss estimated from the empirical K=1 fraction.
    """
    success_p, p1 = circuit_probabilities(instance, params)
    a_mass = reference_mass(instance)
    if shots is None:
        return LossReport(extract_loss(a_mass, p1), p1, success_p, a_mass,
                          MODE_CIRCUIT)
    if rng is None:
        raise ValueError("shot sampling needs an rng stream")
    estimate, successes = sample_loss_estimate(a_mass, success_p, p1, shots, rng)
    p1_hat = math.inf if estimate == math.inf else estimate / (a_mass + estimate)
    return LossReport(estimate, p1_hat, success_p, a_mass, MODE_SHOTS, shots)


Evaluator = Callable[[ProblemInstance, ParameterVector], LossReport]


def gradient_gev(instance: ProblemInstance, params: ParameterVector,
                 evaluator: Evaluator) -> GradientReport:
    """Two-point rule: dL/dg_k = (L(g_k + pi/2) - L(g_k - pi/2)) / 2."""
    if params.kind != GEV:
        raise KindMismatch("gradient_gev needs gev parameters")
    partials = np.empty(len(params))
    calls = 0
    for k in range(len(params)):
        plus = evaluator(instance, shifted(params, k, np.pi / 2)).L
        minus = evaluator(instance, shifted(params, k, -np.pi / 2)).L
        calls += 2
        partials[k] = 0.5 * (plus - minus)
    return GradientReport(partials, calls)


def _validate_shift_angle(angle: float) -> None:
    remainder = math.fmod(angle, math.pi / 2)
    if min(abs(remainder), math.pi / 2 - abs(remainder)) < 1e-9:
        raise InvalidShiftAngle(f"{angle} is a multiple of pi/2")


def four_point_partial(d_half: float, d_angle: float, angle: float) -> float:
    """Derivative of a frequency-{1,2} trigonometric loss from the two
    symmetric differences d_half = L(+pi/2) - L(-pi/2) and
    d_angle = L(+angle) - L(-angle)."""
    sin_sq_half = math.sin(angle / 2.0) ** 2
    return (-sin_sq_half / (2.0 * math.cos(angle))
            * (2.0 * d_half - d_angle / (sin_sq_half * math.sin(angle))))


def gradient_ev(instance: ProblemInstance, params: ParameterVector,
                evaluator: Evaluator, shift_angle: float = math.pi / 3) -> GradientReport:
    """Four-point rule with shifts +-pi/2 and +-shift_angle.

    Needed because every parameter enters the one-matrix loss with the two
    frequencies 1 and 2, so the plain two-point rule is no longer exact.
    """
    if params.kind != EV:
        raise KindMismatch("gradient_ev needs ev parameters")
    _validate_shift_angle(shift_angle)
    partials = np.empty(len(params))
    calls = 0
    for k in range(len(params)):
        d_half = (evaluator(instance, shifted(params, k, np.pi / 2)).L
                  - evaluator(instance, shifted(params, k, -np.pi / 2)).L)
        d_angle = (evaluator(instance, shifted(params, k, shift_angle)).L
                   - evaluator(instance, shifted(params, k, -shift_angle)).L)
        calls += 4
        partials[k] = four_point_partial(d_half, d_angle, shift_angle)
    return GradientReport(partials, calls)


@dataclass
class ShotPlan:
    epsilon_p: float
    runs: int
    #: the first-order run-count figure ~ 1/epsilon_p, for comparison
    paper_runs: float


def shots_for_accuracy(a_mass: float, p1: float, epsilon_l: float,
                       success_p: float = 1.0, z: float = 2.576) -> ShotPlan:
    """Run count that keeps |L_hat - L| <= epsilon_l with ~99% coverage.

    Inverts dL = a_mass * eps_p / (1 - p1)^2 for the probability accuracy
    eps_p, then sizes the binomial estimate of p1 as z^2 p1 (1-p1) / eps_p^2
    post-selected successes, inflated by 1/success_p raw runs per success.
    """
    if a_mass <= 0.0:
        raise DegenerateMass(f"a_mass = {a_mass}")
    if not 0.0 <= p1 < 1.0:
        raise ValueError("p1 must lie in [0, 1)")
    if epsilon_l <= 0.0:
        raise ValueError("epsilon_l must be positive")
    epsilon_p = epsilon_l * (1.0 - p1) ** 2 / a_mass
    successes = max(1.0, z ** 2 * p1 * (1.0 - p1) / epsilon_p ** 2)
    runs = int(math.ceil(successes / success_p))
    return ShotPlan(epsilon_p, runs, 1.0 / epsilon_p)


def _rz_batch(theta: np.ndarray) -> np.ndarray:
    half = theta / 2.0
    out = np.zeros(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-1j * half)
    out[..., 1, 1] = np.exp(1j * half)
    return out


def _ry_batch(theta: np.ndarray) -> np.ndarray:
    half = theta / 2.0
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.cos(half)
    out[..., 0, 1] = -np.sin(half)
    out[..., 1, 0] = np.sin(half)
    out[..., 1, 1] = np.cos(half)
    return out


def _kron_batch(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Kronecker product over the last two axes, batched (with
    broadcasting) over the rest."""
    rows = left.shape[-2] * right.shape[-2]
    cols = left.shape[-1] * right.shape[-1]
    out = np.einsum("...ab,...cd->...acbd", left, right)
    return out.reshape(out.shape[:-4] + (rows, cols))


class MatrixEngine:
    """Batched matrix-exact loss and parameter-shift gradient.

    Equivalent to calling ``loss_matrix_exact`` once per shifted vector, but
    all 12nM shifted evaluations of one gradient are evaluated together:
    each shift touches a single rotation of a single block, so its unitary
    is the cached suffix product times the rebuilt block times the cached
    prefix product.
    """

    def __init__(self, instance: ProblemInstance, M: int):
        self.instance = instance
        self.kind = instance.kind
        self.n = instance.n
        self.size = instance.size
        self.M = M
        self.chain = cnot_chain(self.n)
        self.mask = np.tril(np.ones((self.size, self.size), dtype=bool), -1)
        self.a_mass = reference_mass(instance)

    # -- plain building blocks -------------------------------------------

    def _triples(self, angles: np.ndarray) -> np.ndarray:
        """(M, n, 3) angles -> (M, n, 2, 2) rotation triples."""
        return (_rz_batch(angles[..., 0]) @ _ry_batch(angles[..., 1])
                @ _rz_batch(angles[..., 2]))

    def _side(self, flat_angles: np.ndarray):
        """Blocks, prefix and suffix products for one 3nM angle set."""
        angles = flat_angles.reshape(self.M, self.n, 3)
        triples = self._triples(angles)
        layers = triples[:, 0]
        for j in range(1, self.n):
            layers = _kron_batch(layers, triples[:, j])
        blocks = self.chain @ layers
        eye = np.eye(self.size, dtype=complex)
        pre = np.empty((self.M + 1, self.size, self.size), dtype=complex)
        suf = np.empty_like(pre)
        pre[0] = eye
        suf[self.M] = eye
        for k in range(self.M):
            pre[k + 1] = blocks[k] @ pre[k]
        for k in range(self.M - 1, -1, -1):
            suf[k] = suf[k + 1] @ blocks[k]
        return angles, triples, pre, suf

    def _shifted_unitaries(self, angles, triples, pre, suf, shifts):
        """Unitaries for every (parameter, shift) pair of one side.

        Returns an array of shape (3nM, len(shifts), N, N) indexed by the
        flat parameter order.
        """
        n, M = self.n, self.M
        shifts = np.asarray(shifts, dtype=float)
        # partial Kronecker contexts around each qubit slot
        lefts = [np.ones((M, 1, 1), dtype=complex)]
        for j in range(1, n):
            lefts.append(_kron_batch(lefts[-1], triples[:, j - 1]))
        rights = [np.ones((M, 1, 1), dtype=complex)]
        for j in range(n - 2, -1, -1):
            rights.insert(0, _kron_batch(triples[:, j + 1], rights[0]))
        out = np.empty((3 * n * M, len(shifts), self.size, self.size),
                       dtype=complex)
        pre_b = pre[:-1, None]
        suf_b = suf[1:, None]
        for j in range(n):
            t1 = angles[:, j, 0][:, None]
            t2 = angles[:, j, 1][:, None]
            t3 = angles[:, j, 2][:, None]
            for c in range(3):
                moved = [t1 + 0.0, t2 + 0.0, t3 + 0.0]
                moved[c] = moved[c] + shifts[None, :]
                triple = (_rz_batch(np.broadcast_to(moved[0], (M, len(shifts))))
                          @ _ry_batch(np.broadcast_to(moved[1], (M, len(shifts))))
                          @ _rz_batch(np.broadcast_to(moved[2], (M, len(shifts)))))
                layer = _kron_batch(_kron_batch(lefts[j][:, None], triple),
                                    rights[j][:, None])
                unitaries = suf_b @ (self.chain @ layer) @ pre_b
                flat = 3 * (np.arange(M) * n + j) + c
                out[flat] = unitaries
        return out

    def _masked(self, t_batch: np.ndarray) -> np.ndarray:
        return np.sum(np.abs(t_batch) ** 2 * self.mask, axis=(-2, -1))

    # -- public surface ---------------------------------------------------

    def loss(self, values: np.ndarray):
        """(loss, T, S) at the given flat parameter vector."""
        if self.kind == GEV:
            half = len(values) // 2
            _, _, pre_l, _ = self._side(values[:half])
            _, _, pre_r, _ = self._side(values[half:])
            u_left, u_right = pre_l[self.M], pre_r[self.M]
        else:
            _, _, pre_r, _ = self._side(values)
            u_right = pre_r[self.M]
            u_left = np.conj(u_right)
        t = u_left.T @ self.instance.a @ u_right
        s = (u_left.T @ self.instance.b @ u_right
             if self.instance.b is not None else None)
        loss = float(np.sum(np.abs(t[self.mask]) ** 2))
        if s is not None:
            loss += float(np.sum(np.abs(s[self.mask]) ** 2))
        return loss, t, s

    def loss_and_gradient(self, values: np.ndarray, shift_angle: float = math.pi / 3):
        """(loss, gradient, T, S) with the exact shift rules."""
        a, b = self.instance.a, self.instance.b
        if self.kind == GEV:
            half = len(values) // 2
            angles_l, triples_l, pre_l, suf_l = self._side(values[:half])
            angles_r, triples_r, pre_r, suf_r = self._side(values[half:])
            u_left, u_right = pre_l[self.M], pre_r[self.M]
            t = u_left.T @ a @ u_right
            s = u_left.T @ b @ u_right if b is not None else None
            loss = float(np.sum(np.abs(t[self.mask]) ** 2))
            if s is not None:
                loss += float(np.sum(np.abs(s[self.mask]) ** 2))
            shifts = (np.pi / 2, -np.pi / 2)
            grads = np.empty(len(values))
            # left side: T' = U'_left^T (A U_right)
            u_prime = self._shifted_unitaries(angles_l, triples_l, pre_l, suf_l, shifts)
            u_prime_t = np.swapaxes(u_prime, -1, -2)
            losses = self._masked(u_prime_t @ (a @ u_right))
            if b is not None:
                losses += self._masked(u_prime_t @ (b @ u_right))
            grads[:half] = 0.5 * (losses[:, 0] - losses[:, 1])
            # right side: T' = (U_left^T A) U'_right
            u_prime = self._shifted_unitaries(angles_r, triples_r, pre_r, suf_r, shifts)
            losses = self._masked((u_left.T @ a) @ u_prime)
            if b is not None:
                losses += self._masked((u_left.T @ b) @ u_prime)
            grads[half:] = 0.5 * (losses[:, 0] - losses[:, 1])
            return loss, grads, t, s
        _validate_shift_angle(shift_angle)
        angles_r, triples_r, pre_r, suf_r = self._side(values)
        u_right = pre_r[self.M]
        t = np.conj(u_right).T @ a @ u_right
        loss = float(np.sum(np.abs(t[self.mask]) ** 2))
        shifts = (np.pi / 2, -np.pi / 2, shift_angle, -shift_angle)
        u_prime = self._shifted_unitaries(angles_r, triples_r, pre_r, suf_r, shifts)
        u_prime_ct = np.conj(np.swapaxes(u_prime, -1, -2))
        losses = self._masked(u_prime_ct @ (a @ u_prime))
        sin_sq_half = math.sin(shift_angle / 2.0) ** 2
        d_half = losses[:, 0] - losses[:, 1]
        d_angle = losses[:, 2] - losses[:, 3]
        grads = (-sin_sq_half / (2.0 * math.cos(shift_angle))
                 * (2.0 * d_half - d_angle / (sin_sq_half * math.sin(shift_angle))))
        return loss, grads, t, None
