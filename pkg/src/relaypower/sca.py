"""Successive convex approximation for joint sensor/relay power allocation.

The MSE objective is nonconvex in (alpha, beta). Around the current iterate it
is bounded above by a separable convex majorant

    sum_j  a_j/alpha_j + b_j/beta_j + c_j/(2 alpha_j^2) + d_j/(2 beta_j^2)

that touches it at the iterate. Its budget-constrained minimiser has a closed
form per channel (the positive root of a depressed cubic) once the two
Lagrange multipliers are known, and those are found by a doubling/bisection
search. Iterating gives a monotone descent method.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from . import _kernels, relay
from .errors import InvalidInputError, NumericalError
from .relay import Allocation, Budgets, PhiCoefficients, RelayProblem

log = logging.getLogger(__name__)

StopReason = Literal["tolerance_met", "max_iterations", "stalled"]


@dataclass(frozen=True)
class ScaOptions:
    epsilon: float = 1e-4
    max_iterations: int = 200
    bisection_tolerance: float = 1e-14
    max_bisection_steps: int = 200
    floor: float = 1e-12
    initialization: Literal["uniform", "custom"] = "uniform"
    stall_tolerance: float = 1e-14


@dataclass(frozen=True)
class MajorantCoeffs:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray


@dataclass(frozen=True)
class ScaState:
    iteration: int
    alloc: Allocation
    phi: np.ndarray
    rho: np.ndarray
    objective: float


@dataclass
class ScaTrace:
    states: list[ScaState] = field(default_factory=list)
    duals: list[tuple[float, float]] = field(default_factory=list)
    converged: bool = False
    stop_reason: StopReason | None = None

    @property
    def objectives(self) -> np.ndarray:
        return np.array([s.objective for s in self.states])

    @property
    def iterations(self) -> int:
        return len(self.states) - 1


# ---------------------------------------------------------------------------
# cubic roots


def cubic_positive_root(cube_coeff, lin_coeff, const_coeff):
    """Unique positive root of ``A x^3 - C x - D = 0`` with A > 0 and C, D >= 0.

    Vectorised over broadcastable inputs. Cardano's formula is used when the
    discriminant is nonnegative, arranged so the two cube roots add instead of
    cancelling; the trigonometric form covers the three-real-root case. Two
    Newton steps polish the result.
    """
    a, c, d = np.broadcast_arrays(
        np.asarray(cube_coeff, dtype=float),
        np.asarray(lin_coeff, dtype=float),
        np.asarray(const_coeff, dtype=float),
    )
    if np.any(~(a > 0)) or np.any(~(c >= 0)) or np.any(~(d >= 0)):
        raise InvalidInputError("cubic needs A > 0, C >= 0, D >= 0")
    if np.any(c + d <= 0):
        raise InvalidInputError("cubic with C = D = 0 has no positive root")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(c)) and np.all(np.isfinite(d))):
        raise InvalidInputError("cubic coefficients must be finite")
    out = np.empty(a.size)
    _kernels.cubic_roots(a.ravel().copy(), c.ravel().copy(), d.ravel().copy(), out)
    out = out.reshape(a.shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Lagrange multiplier search


def _golden_search(lin, const, weights, budget, tol, max_steps, floor):
    """Find lam with sum_j w_j x_j(lam) = budget, x_j the root of lam w_j x^3 = lin_j x + const_j.

    Doubling from the seeded lower bound until the implied power falls below
    the budget, then bisection between the last two multipliers. Channels with
    lin_j = const_j = 0 get the positivity floor and sit out the search.
    """
    lin = np.asarray(lin, dtype=float)
    const = np.asarray(const, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not budget > 0:
        raise InvalidInputError(f"budget must be positive, got {budget}")
    active = (lin + const) > 0
    if not np.any(active):
        log.warning("all channels degenerate; falling back to a uniform split")
        return float("nan"), budget / (weights * lin.size)
    x = np.full(lin.shape, floor)
    target = budget - floor * np.sum(weights[~active])
    if target <= 0:
        raise InvalidInputError("budget too small for the positivity floor")
    xa = np.empty(int(np.count_nonzero(active)))
    lam, total, status = _kernels.golden_search(
        np.ascontiguousarray(lin[active]), np.ascontiguousarray(const[active]),
        np.ascontiguousarray(weights[active]), float(target), float(tol), int(max_steps), xa,
    )
    if status == _kernels.NOT_MONOTONE:
        raise NumericalError(f"implied power not decreasing in the multiplier near lam={lam:.6e}")
    if status == _kernels.STEP_LIMIT:
        log.warning("multiplier search hit %d steps; relative budget gap %.2e",
                    max_steps, abs(total - target) / target)
    x[active] = xa
    return float(lam), x


def golden_search_sensors(coeffs: MajorantCoeffs, channel_powers, p_t: float,
                          options: ScaOptions = ScaOptions()):
    """Multiplier lam_T and sensor scale factors meeting the sensor budget with equality."""
    return _golden_search(coeffs.a, coeffs.c, channel_powers, p_t,
                          options.bisection_tolerance, options.max_bisection_steps, options.floor)


def golden_search_relay(coeffs: MajorantCoeffs, p_r: float, options: ScaOptions = ScaOptions()):
    """Multiplier lam_R and relay powers meeting the relay budget with equality."""
    return _golden_search(coeffs.b, coeffs.d, np.ones_like(coeffs.b), p_r,
                          options.bisection_tolerance, options.max_bisection_steps, options.floor)


# ---------------------------------------------------------------------------
# majorant


def rho_weights(psi: np.ndarray, phi_mat: np.ndarray, phi) -> np.ndarray:
    """Diagonal of diag(phi) (Phi + diag phi)^{-1} Psi Psi^T (Phi + diag phi)^{-1} diag(phi)."""
    k = relay._phi_term(psi, phi_mat, phi)
    return np.asarray(phi) ** 2 * np.sum(k * k, axis=1)


def _evaluate(problem: RelayProblem, alloc: Allocation, iteration: int) -> ScaState:
    psi, phi_mat = problem.psi_phi
    phi = problem.phi(alloc)
    k = relay._phi_term(psi, phi_mat, phi)
    objective = float(np.sum(psi * k))
    rho = phi**2 * np.sum(k * k, axis=1)
    return ScaState(iteration, alloc, phi, rho, objective)


def majorant_coeffs(state: ScaState, coeffs: PhiCoefficients) -> MajorantCoeffs:
    a0, b0 = state.alloc.alpha, state.alloc.beta
    if np.any(a0 <= 0) or np.any(b0 <= 0):
        raise InvalidInputError("majorant needs a strictly positive expansion point")
    w = state.rho / coeffs.p
    return MajorantCoeffs(
        a=w * coeffs.r,
        b=w * coeffs.q,
        c=w * coeffs.sigma * a0 / b0,
        d=w * coeffs.sigma * b0 / a0,
    )


def majorant_eval(state: ScaState, alloc: Allocation, coeffs: PhiCoefficients) -> float:
    """Convex upper bound of the objective built at ``state``, evaluated at ``alloc``."""
    a, b = alloc.alpha, alloc.beta
    if np.any(a <= 0) or np.any(b <= 0):
        raise InvalidInputError("majorant is defined for strictly positive allocations only")
    m = majorant_coeffs(state, coeffs)
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.where(state.rho > 0, state.rho / state.phi, 0.0)
    terms = m.a / a + m.b / b + 0.5 * m.c / a**2 + 0.5 * m.d / b**2 - base
    return state.objective + float(np.sum(terms))


# ---------------------------------------------------------------------------
# allocators


def uniform_allocation(channel_powers, budgets: Budgets) -> Allocation:
    """Equal transmit power P_T/M per sensor and P_R/M per relay channel."""
    channel_powers = np.asarray(channel_powers, dtype=float)
    m = channel_powers.size
    return Allocation(budgets.p_t / (m * channel_powers), np.full(m, budgets.p_r / m))


def sca_step(problem: RelayProblem, state: ScaState, budgets: Budgets,
             options: ScaOptions = ScaOptions()) -> tuple[ScaState, tuple[float, float]]:
    """Minimise the majorant at ``state`` under both budgets; return the new state and duals."""
    m = majorant_coeffs(state, problem.spec.coefficients)
    lam_t, alpha = golden_search_sensors(m, problem.channel_powers, budgets.p_t, options)
    lam_r, beta = golden_search_relay(m, budgets.p_r, options)
    alloc = Allocation(np.maximum(alpha, options.floor), np.maximum(beta, options.floor))
    return _evaluate(problem, alloc, state.iteration + 1), (lam_t, lam_r)


def _check_finite(state: ScaState):
    if not np.isfinite(state.objective) or not np.all(np.isfinite(state.rho)):
        raise NumericalError(
            f"non-finite objective at iteration {state.iteration}: "
            f"alpha={state.alloc.alpha!r} beta={state.alloc.beta!r} objective={state.objective!r}"
        )


def _descend(step, state: ScaState, options: ScaOptions) -> ScaTrace:
    trace = ScaTrace(states=[state])
    stalls = 0
    for _ in range(options.max_iterations):
        old = trace.states[-1]
        if old.objective <= 0:
            trace.converged, trace.stop_reason = True, "tolerance_met"
            return trace
        new, duals = step(old)
        _check_finite(new)
        rel = (old.objective - new.objective) / old.objective
        if new.objective <= old.objective:
            trace.states.append(new)
            trace.duals.append(duals)
        if rel <= options.epsilon:
            trace.converged, trace.stop_reason = True, "tolerance_met"
            return trace
        stalls = stalls + 1 if rel < options.stall_tolerance else 0
        if stalls >= 2:
            trace.stop_reason = "stalled"
            return trace
    trace.stop_reason = "max_iterations"
    return trace


def optimize(problem: RelayProblem, budgets: Budgets, options: ScaOptions = ScaOptions(),
             init: Allocation | None = None) -> tuple[Allocation, ScaTrace]:
    """Joint sensor/relay allocation by successive majorant minimisation.

    Starts from the uniform allocation unless ``init`` is given (which then
    must be feasible and strictly positive). Stops when the relative decrease
    of the objective drops to ``options.epsilon`` or below.

    Returns
    -------
    alloc : Allocation
        Final iterate; both budgets hold with equality.
    trace : ScaTrace
        Every accepted iterate with its objective, weights and multipliers.
    """
    if init is None:
        init = uniform_allocation(problem.channel_powers, budgets)
    if not init.feasible(budgets, problem.channel_powers):
        raise InvalidInputError("initial allocation violates a power budget")
    if not init.is_positive():
        raise InvalidInputError("initial allocation must be strictly positive")
    start = _evaluate(problem, init, 0)
    _check_finite(start)
    trace = _descend(lambda s: sca_step(problem, s, budgets, options), start, options)
    return trace.states[-1].alloc, trace


def one_hop_optimize(problem: RelayProblem, p_t: float, options: ScaOptions = ScaOptions(),
                     init=None) -> tuple[np.ndarray, ScaTrace]:
    """Sensor-only allocation for direct sensor -> FC links.

    Same majorise-minimise loop with effective SNR ``h_j alpha_j / sigma_j``;
    the surrogate sum_j rho_j sigma_j / (h_j alpha_j) has the closed-form
    minimiser alpha_j proportional to sqrt(rho_j sigma_j / (h_j ||y_j||^2)).

    Returns the sensor scale factors and the descent trace (with ``beta``
    fixed to zeros in the recorded allocations).
    """
    if not p_t > 0:
        raise InvalidInputError("P_T must be positive")
    powers = problem.channel_powers
    psi, phi_mat = problem.psi_phi
    zeros = np.zeros_like(powers)
    m = powers.size
    alpha0 = np.full(m, p_t / m) / powers if init is None else np.asarray(init, dtype=float)
    if np.any(alpha0 <= 0) or np.dot(powers, alpha0) > p_t * (1 + 1e-9):
        raise InvalidInputError("initial one-hop allocation must be positive and feasible")

    def evaluate(alpha, iteration):
        phi = problem.one_hop_phi(alpha)
        k = relay._phi_term(psi, phi_mat, phi)
        rho = phi**2 * np.sum(k * k, axis=1)
        return ScaState(iteration, Allocation(alpha, zeros), phi, rho, float(np.sum(psi * k)))

    def step(state):
        weight = state.rho * problem.direct_noise / problem.direct_gain
        root = np.sqrt(weight / powers)
        active = root > 0
        if not np.any(active):
            return state, (float("nan"), 0.0)
        alpha = np.full(m, options.floor)
        budget = p_t - options.floor * np.sum(powers[~active])
        # alpha_j = sqrt(w_j / (lam ||y_j||^2)) with sum ||y_j||^2 alpha_j = budget
        sqrt_lam = np.sum(np.sqrt(weight[active] * powers[active])) / budget
        alpha[active] = root[active] / sqrt_lam
        return evaluate(alpha, state.iteration + 1), (float(sqrt_lam**2), 0.0)

    start = evaluate(alpha0, 0)
    _check_finite(start)
    trace = _descend(step, start, options)
    return trace.states[-1].alloc.alpha, trace


def one_hop_uniform(channel_powers, p_t: float) -> np.ndarray:
    channel_powers = np.asarray(channel_powers, dtype=float)
    return p_t / (channel_powers.size * channel_powers)


def with_options(options: ScaOptions | None = None, **overrides) -> ScaOptions:
    return replace(options or ScaOptions(), **overrides)
