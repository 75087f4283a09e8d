"""Brute-force and finite-difference checkers.

Nothing here touches the optimizer: the grid search only evaluates the
direct-form posterior MSE, so it can referee :func:`relaypower.sca.optimize`.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Callable

import numpy as np

from .errors import InvalidInputError, UnsupportedSizeError
from .relay import Allocation, Budgets, RelayProblem, posterior_mse_batch

MAX_GRID_CHANNELS = 3


@dataclass(frozen=True)
class GridSpec:
    """Grid over both budget-equality surfaces.

    ``resolution`` is the number of intervals per free fraction, so doubling
    it nests the coarser grid inside the finer one.
    """

    resolution: int = 200
    chunk: int = 50_000

    def __post_init__(self):
        if self.resolution < 10:
            raise InvalidInputError("grid resolution must be at least 10")


def simplex_fractions(m: int, resolution: int) -> np.ndarray:
    """All budget splits over ``m`` channels with fractions on a k/resolution lattice."""
    if m == 1:
        return np.ones((1, 1))
    steps = np.arange(resolution + 1)
    pts = [c for c in product(steps, repeat=m - 1) if sum(c) <= resolution]
    head = np.array(pts, dtype=float) / resolution
    return np.column_stack([head, 1.0 - head.sum(axis=1)])


def grid_search_mse(problem: RelayProblem, budgets: Budgets, grid: GridSpec = GridSpec()):
    """Exhaustive minimisation of the posterior MSE over budget-tight allocations.

    Returns
    -------
    best : Allocation
    best_trace : float
    """
    m = problem.channel_count
    if m > MAX_GRID_CHANNELS:
        raise UnsupportedSizeError(f"grid search supports at most {MAX_GRID_CHANNELS} channels, got {m}")
    fr = simplex_fractions(m, grid.resolution)
    alphas = fr * budgets.p_t / problem.channel_powers
    betas = fr * budgets.p_r
    n = fr.shape[0]
    # row-major over (alpha split, beta split)
    pairs = np.arange(n * n)
    best_val, best_idx = np.inf, -1
    for start in range(0, pairs.size, grid.chunk):
        idx = pairs[start:start + grid.chunk]
        ia, ib = np.divmod(idx, n)
        vals = posterior_mse_batch(problem.moments, problem.spec, alphas[ia], betas[ib])
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_idx = float(vals[k]), int(idx[k])
    ia, ib = divmod(best_idx, n)
    return Allocation(alphas[ia], betas[ib]), best_val


def grid_search_one_hop(problem: RelayProblem, p_t: float, resolution: int = 2000):
    """1-D/2-D grid over the sensor budget line for the direct-link objective."""
    m = problem.channel_count
    if m > MAX_GRID_CHANNELS:
        raise UnsupportedSizeError(f"grid search supports at most {MAX_GRID_CHANNELS} channels, got {m}")
    fr = simplex_fractions(m, resolution)
    alphas = fr * p_t / problem.channel_powers
    vals = np.array([problem.one_hop_mse(a) for a in alphas])
    k = int(np.argmin(vals))
    return alphas[k], float(vals[k])


def _steps(x: np.ndarray, step) -> np.ndarray:
    if step is None:
        return 1e-5 * (1.0 + np.abs(x))
    return np.broadcast_to(np.asarray(step, dtype=float), x.shape)


def fd_gradient(f: Callable[[np.ndarray], float], x, step=None) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, step)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h.flat[i]
        grad.flat[i] = (f(x + e) - f(x - e)) / (2 * h.flat[i])
    return grad


def fd_jacobian(g: Callable[[np.ndarray], np.ndarray], x, step=None) -> np.ndarray:
    """Central-difference Jacobian, one column per coordinate of ``x``."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, step)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((np.asarray(g(x + e)) - np.asarray(g(x - e))) / (2 * h[i]))
    return np.column_stack(cols)


def projected_gradient(grad_alpha, grad_beta, channel_powers):
    """Remove the components normal to the two budget-equality hyperplanes."""
    w = np.asarray(channel_powers, dtype=float)
    ga = grad_alpha - (grad_alpha @ w) / (w @ w) * w
    gb = grad_beta - np.mean(grad_beta)
    return ga, gb
