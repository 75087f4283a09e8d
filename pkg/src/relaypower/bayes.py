"""Linear-Gaussian Bayesian fusion.

Joint moments of a Gaussian target and its linear observation, the MMSE
(conditional mean) estimator and its error covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InvalidInputError, NumericalError

PSD_RTOL = 1e-10


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


def _as_vector(a, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(a, dtype=float))
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def check_psd(cov: np.ndarray, name: str = "covariance", rtol: float = PSD_RTOL) -> None:
    """Raise :class:`InvalidInputError` unless ``cov`` is symmetric PSD.

    The smallest eigenvalue may dip to ``-rtol * largest`` to absorb round-off
    in constructed covariances.
    """
    if cov.shape[0] != cov.shape[1]:
        raise InvalidInputError(f"{name} must be square, got {cov.shape}")
    scale = max(np.max(np.abs(cov)), np.finfo(float).tiny)
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidInputError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(symmetrize(cov))
    if eig[0] < -rtol * max(eig[-1], 0.0):
        raise InvalidInputError(
            f"{name} is not positive semidefinite (min eigenvalue {eig[0]:.3e})"
        )


def spd_factor(a: np.ndarray, name: str = "matrix"):
    """Cholesky factor of an SPD matrix, or :class:`NumericalError` with its condition number."""
    try:
        return linalg.cho_factor(a, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(a) if np.all(np.isfinite(a)) else np.inf
        raise NumericalError(f"{name} is singular or indefinite (cond={cond:.3e})") from exc


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a Gaussian random vector."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        cov = _as_matrix(self.cov, "cov")
        if cov.shape != (mean.size, mean.size):
            raise InvalidInputError(
                f"cov shape {cov.shape} does not match mean length {mean.size}"
            )
        check_psd(cov, "prior covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class SensorNetwork:
    """Linear sensors ``y = G x + n`` with ``n ~ N(0, R_n)``.

    ``g`` is M x N (one row per channel), ``r_n`` is the M x M noise covariance.
    """

    g: np.ndarray
    r_n: np.ndarray

    def __post_init__(self):
        g = _as_matrix(self.g, "g")
        r_n = _as_matrix(self.r_n, "r_n")
        if r_n.shape != (g.shape[0], g.shape[0]):
            raise InvalidInputError(
                f"r_n shape {r_n.shape} does not match {g.shape[0]} channels"
            )
        check_psd(r_n, "observation noise covariance")
        if np.linalg.eigvalsh(symmetrize(r_n))[0] <= 0:
            raise InvalidInputError("observation noise covariance must be positive definite")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "r_n", r_n)

    @property
    def channel_count(self) -> int:
        return self.g.shape[0]

    @property
    def target_dim(self) -> int:
        return self.g.shape[1]


@dataclass(frozen=True)
class JointMoments:
    """First and second moments of a jointly Gaussian pair (X, Y).

    ``cov_xy`` is N x M, i.e. E[(X - m_X)(Y - m_Y)^T].
    """

    mean_x: np.ndarray
    mean_y: np.ndarray
    cov_x: np.ndarray
    cov_y: np.ndarray
    cov_xy: np.ndarray

    def __post_init__(self):
        mean_x = _as_vector(self.mean_x, "mean_x")
        mean_y = _as_vector(self.mean_y, "mean_y")
        n, m = mean_x.size, mean_y.size
        cov_x = _as_matrix(self.cov_x, "cov_x")
        cov_y = _as_matrix(self.cov_y, "cov_y")
        cov_xy = np.asarray(self.cov_xy, dtype=float).reshape(n, m)
        if cov_x.shape != (n, n) or cov_y.shape != (m, m):
            raise InvalidInputError(
                f"inconsistent shapes: cov_x {cov_x.shape}, cov_y {cov_y.shape}, n={n}, m={m}"
            )
        for name, val in (("mean_x", mean_x), ("mean_y", mean_y), ("cov_x", cov_x), ("cov_y", cov_y), ("cov_xy", cov_xy)):
            object.__setattr__(self, name, val)

    @property
    def joint_cov(self) -> np.ndarray:
        return np.block([[self.cov_x, self.cov_xy], [self.cov_xy.T, self.cov_y]])

    @property
    def cov_y_condition(self) -> float:
        return float(np.linalg.cond(self.cov_y))


def observation_moments(prior: GaussianBelief, net: SensorNetwork) -> JointMoments:
    """Joint moments of the target and its linear observation ``y = G x + n``."""
    if net.target_dim != prior.dim:
        raise InvalidInputError(
            f"observation matrix has {net.target_dim} columns, prior has dimension {prior.dim}"
        )
    g = net.g
    return JointMoments(
        mean_x=prior.mean.copy(),
        mean_y=g @ prior.mean,
        cov_x=prior.cov.copy(),
        cov_y=symmetrize(g @ prior.cov @ g.T + net.r_n),
        cov_xy=prior.cov @ g.T,
    )


def channel_power(moments: JointMoments, j: int) -> float:
    """Second moment E[y_j^2] = C_Y(j, j) + m_Y(j)^2 of channel ``j`` (0-based)."""
    m = moments.mean_y.size
    if not 0 <= j < m:
        raise IndexError(f"channel index {j} out of range for {m} channels")
    return float(moments.cov_y[j, j] + moments.mean_y[j] ** 2)


def channel_powers(moments: JointMoments) -> np.ndarray:
    """All per-channel second moments as a vector."""
    return np.diag(moments.cov_y) + moments.mean_y**2


def mmse_estimate(moments: JointMoments, z) -> np.ndarray:
    """Conditional mean of X given Y = z.

    ``z`` may be a single observation of length M or a stack of shape (K, M);
    the result then has shape (K, N).
    """
    z = np.asarray(z, dtype=float)
    factor = spd_factor(moments.cov_y, "cov_y")
    innov = (z - moments.mean_y).T
    gain_t = linalg.cho_solve(factor, moments.cov_xy.T)  # C_Y^{-1} C_YX
    return moments.mean_x + (gain_t.T @ innov).T


def posterior_cov_direct(moments: JointMoments) -> np.ndarray:
    """Error covariance C_X - C_XY C_Y^{-1} C_YX of the MMSE estimate."""
    factor = spd_factor(moments.cov_y, "cov_y")
    reduction = moments.cov_xy @ linalg.cho_solve(factor, moments.cov_xy.T)
    return symmetrize(moments.cov_x - reduction)


def mse_trace(cov) -> float:
    return float(np.trace(np.asarray(cov, dtype=float)))
