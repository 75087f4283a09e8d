"""Two-hop amplify-and-forward channel model.

Sensor j scales its observation by sqrt(alpha_j) and sends it to the relay
over a link of power gain ``h_sr``; the relay normalises the received signal
to power ``beta_j`` and forwards it to the fusion center over a link of gain
``h_rd``. Everything the allocation touches collapses into one effective SNR
factor per channel::

    phi_j = p_j alpha_j beta_j / (q_j alpha_j + r_j beta_j + sigma_j)

which enters the posterior covariance through a diagonal term.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import linalg

from .bayes import JointMoments, SensorNetwork, channel_powers, spd_factor, symmetrize
from .errors import InvalidInputError


@dataclass(frozen=True)
class ChannelLink:
    """Power gains and noise powers of one sensor -> relay -> FC path."""

    h_sr: float
    h_rd: float
    sigma_sr: float = 1.0
    sigma_rd: float = 1.0

    def __post_init__(self):
        for name in ("h_sr", "h_rd", "sigma_sr", "sigma_rd"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise InvalidInputError(f"{name} must be positive and finite, got {val}")


@dataclass(frozen=True)
class PhiCoefficients:
    """Coefficients of the effective SNR factor; scalars or per-channel arrays."""

    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class RelaySpec:
    """Per-channel link data (stored as arrays) plus channel second moments."""

    h_sr: np.ndarray
    h_rd: np.ndarray
    sigma_sr: np.ndarray
    sigma_rd: np.ndarray
    channel_powers: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.channel_powers, dtype=float)).size
        for name in ("h_sr", "h_rd", "sigma_sr", "sigma_rd", "channel_powers"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (m,)).copy()
            if not np.all(np.isfinite(arr) & (arr > 0)):
                raise InvalidInputError(f"{name} must be strictly positive and finite")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_links(cls, links: Sequence[ChannelLink], channel_powers) -> "RelaySpec":
        return cls(
            h_sr=[l.h_sr for l in links],
            h_rd=[l.h_rd for l in links],
            sigma_sr=[l.sigma_sr for l in links],
            sigma_rd=[l.sigma_rd for l in links],
            channel_powers=channel_powers,
        )

    @property
    def links(self) -> list[ChannelLink]:
        return [
            ChannelLink(float(a), float(b), float(c), float(d))
            for a, b, c, d in zip(self.h_sr, self.h_rd, self.sigma_sr, self.sigma_rd)
        ]

    @property
    def channel_count(self) -> int:
        return self.channel_powers.size

    @cached_property
    def coefficients(self) -> PhiCoefficients:
        return PhiCoefficients(
            p=self.h_sr * self.h_rd,
            q=self.h_sr * self.sigma_rd * self.channel_powers,
            r=self.h_rd * self.sigma_sr,
            sigma=self.sigma_rd * self.sigma_sr,
        )


@dataclass(frozen=True)
class Budgets:
    p_t: float
    p_r: float

    def __post_init__(self):
        if not (self.p_t > 0 and self.p_r > 0):
            raise InvalidInputError(f"budgets must be positive, got P_T={self.p_t}, P_R={self.p_r}")


@dataclass(frozen=True)
class Allocation:
    """Sensor scale factors ``alpha`` and relay output powers ``beta``."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float)).copy()
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        if alpha.shape != beta.shape or alpha.ndim != 1:
            raise InvalidInputError(f"alpha {alpha.shape} and beta {beta.shape} must be equal-length vectors")
        if np.any(alpha < 0) or np.any(beta < 0) or not np.all(np.isfinite(alpha) & np.isfinite(beta)):
            raise InvalidInputError("allocations must be finite and nonnegative")
        alpha.flags.writeable = False
        beta.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    def sensor_power(self, channel_powers) -> float:
        return float(np.dot(channel_powers, self.alpha))

    def relay_power(self) -> float:
        return float(np.sum(self.beta))

    def feasible(self, budgets: Budgets, channel_powers, rtol: float = 1e-9) -> bool:
        return (
            self.sensor_power(channel_powers) <= budgets.p_t * (1 + rtol)
            and self.relay_power() <= budgets.p_r * (1 + rtol)
        )

    def is_positive(self) -> bool:
        return bool(np.all(self.alpha > 0) and np.all(self.beta > 0))


def phi_coefficients(link: ChannelLink, channel_power: float) -> PhiCoefficients:
    """Effective-SNR coefficients of a single channel.

    ``r`` carries the relay noise power ``sigma_sr``; it reduces to ``h_rd``
    when ``sigma_sr == 1``.
    """
    if not channel_power > 0:
        raise InvalidInputError(f"channel power must be positive, got {channel_power}")
    return PhiCoefficients(
        p=link.h_sr * link.h_rd,
        q=link.h_sr * link.sigma_rd * channel_power,
        r=link.h_rd * link.sigma_sr,
        sigma=link.sigma_rd * link.sigma_sr,
    )


def phi_value(alpha, beta, c: PhiCoefficients):
    """Effective SNR factor ``p a b / (q a + r b + sigma)``; elementwise."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    return c.p * alpha * beta / (c.q * alpha + c.r * beta + c.sigma)


def _relay_normaliser(spec: RelaySpec, alpha) -> np.ndarray:
    # expected power of the signal received at the relay
    return spec.h_sr * spec.channel_powers * alpha + spec.sigma_sr


def effective_gain(spec: RelaySpec, alloc: Allocation) -> np.ndarray:
    """Diagonal end-to-end amplitude gain from observation to FC input."""
    den = _relay_normaliser(spec, alloc.alpha)
    return np.diag(np.sqrt(spec.h_rd * spec.h_sr * alloc.beta * alloc.alpha / den))


def total_noise_cov(spec: RelaySpec, alloc: Allocation) -> np.ndarray:
    """Diagonal covariance of the aggregate (relayed plus FC) noise."""
    den = _relay_normaliser(spec, alloc.alpha)
    return np.diag(spec.h_rd * alloc.beta * spec.sigma_sr / den + spec.sigma_rd)


def psi_phi(moments: JointMoments) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(C_Y^{-1} C_YX, C_Y^{-1})``."""
    factor = spd_factor(moments.cov_y, "cov_y")
    psi = linalg.cho_solve(factor, moments.cov_xy.T)
    phi = symmetrize(linalg.cho_solve(factor, np.eye(moments.cov_y.shape[0])))
    return psi, phi


def _phi_term(psi: np.ndarray, phi_mat: np.ndarray, phi) -> np.ndarray:
    """``(Phi + diag phi)^{-1} Psi``."""
    a = phi_mat + np.diag(phi)
    return linalg.cho_solve(spd_factor(a, "Phi + diag(phi)"), psi)


def trace_objective(psi: np.ndarray, phi_mat: np.ndarray, phi) -> float:
    """Allocation-dependent part of the MSE, Trace(Psi^T (Phi + diag phi)^{-1} Psi)."""
    return float(np.sum(psi * _phi_term(psi, phi_mat, phi)))


def posterior_mse(moments: JointMoments, spec: RelaySpec, alloc: Allocation, form: str = "phi"):
    """Posterior error covariance at the FC and its trace.

    Parameters
    ----------
    form : {"phi", "direct"}
        ``"phi"`` uses the residual-plus-diagonal form (canonical);
        ``"direct"`` conditions on the relayed observation explicitly and is
        kept as an independent cross-check.

    Returns
    -------
    trace : float
    cov : ndarray (N, N)
    """
    if form == "phi":
        psi, phi_mat = psi_phi(moments)
        phi = phi_value(alloc.alpha, alloc.beta, spec.coefficients)
        resid = moments.cov_x - moments.cov_xy @ psi
        cov = resid + psi.T @ _phi_term(psi, phi_mat, phi)
    elif form == "direct":
        h = effective_gain(spec, alloc)
        s = h @ moments.cov_y @ h + total_noise_cov(spec, alloc)
        hc = h @ moments.cov_xy.T
        cov = moments.cov_x - hc.T @ linalg.cho_solve(spd_factor(s, "C_Z"), hc)
    else:
        raise InvalidInputError(f"unknown form {form!r}")
    cov = symmetrize(cov)
    return float(np.trace(cov)), cov


def fc_moments(moments: JointMoments, spec: RelaySpec, alloc: Allocation) -> JointMoments:
    """Joint moments of the target and the signal received at the FC."""
    h = np.diag(effective_gain(spec, alloc))
    return JointMoments(
        mean_x=moments.mean_x,
        mean_y=h * moments.mean_y,
        cov_x=moments.cov_x,
        cov_y=symmetrize(h[:, None] * moments.cov_y * h[None, :] + total_noise_cov(spec, alloc)),
        cov_xy=moments.cov_xy * h[None, :],
    )


def posterior_mse_batch(moments: JointMoments, spec: RelaySpec, alpha, beta) -> np.ndarray:
    """Direct-form posterior MSE trace for a stack of allocations.

    ``alpha`` and ``beta`` have shape (K, M); returns K traces.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    den = _relay_normaliser(spec, alpha)
    gain = np.sqrt(spec.h_rd * spec.h_sr * beta * alpha / den)
    noise = spec.h_rd * beta * spec.sigma_sr / den + spec.sigma_rd
    s = gain[:, :, None] * moments.cov_y[None] * gain[:, None, :]
    idx = np.arange(alpha.shape[1])
    s[:, idx, idx] += noise
    hc = gain[:, :, None] * moments.cov_xy.T[None]
    red = np.einsum("kmn,kmn->k", hc, np.linalg.solve(s, hc))
    return np.trace(moments.cov_x) - red


@dataclass(frozen=True)
class RelayProblem:
    """Everything the allocators need about one channel realization.

    ``direct_gain``/``direct_noise`` describe the sensor -> FC links used by
    the one-hop baseline and may be omitted for two-hop-only problems.
    ``network`` is only needed to simulate raw observations.
    """

    moments: JointMoments
    spec: RelaySpec
    direct_gain: np.ndarray | None = None
    direct_noise: np.ndarray | None = None
    network: SensorNetwork | None = None

    def __post_init__(self):
        if self.spec.channel_count != self.moments.mean_y.size:
            raise InvalidInputError("relay spec and moments disagree on channel count")
        if self.direct_gain is not None:
            g = np.broadcast_to(np.asarray(self.direct_gain, dtype=float), (self.channel_count,)).copy()
            n = np.broadcast_to(
                np.asarray(1.0 if self.direct_noise is None else self.direct_noise, dtype=float),
                (self.channel_count,),
            ).copy()
            if np.any(g <= 0) or np.any(n <= 0):
                raise InvalidInputError("direct gains and noise powers must be positive")
            object.__setattr__(self, "direct_gain", g)
            object.__setattr__(self, "direct_noise", n)

    @classmethod
    def from_moments(cls, moments: JointMoments, h_sr, h_rd, sigma_sr=1.0, sigma_rd=1.0,
                     direct_gain=None, direct_noise=None, network=None) -> "RelayProblem":
        spec = RelaySpec(h_sr, h_rd, sigma_sr, sigma_rd, channel_powers(moments))
        return cls(moments, spec, direct_gain, direct_noise, network)

    @property
    def channel_count(self) -> int:
        return self.spec.channel_count

    @property
    def channel_powers(self) -> np.ndarray:
        return self.spec.channel_powers

    @cached_property
    def psi_phi(self) -> tuple[np.ndarray, np.ndarray]:
        return psi_phi(self.moments)

    @cached_property
    def residual_trace(self) -> float:
        """MSE floor reached when every channel is observed noiselessly at the FC."""
        psi, _ = self.psi_phi
        return float(np.trace(self.moments.cov_x) - np.sum(self.moments.cov_xy.T * psi))

    def phi(self, alloc: Allocation) -> np.ndarray:
        return phi_value(alloc.alpha, alloc.beta, self.spec.coefficients)

    def objective(self, alloc: Allocation) -> float:
        """Allocation-dependent MSE term minimised by the two-hop allocator."""
        psi, phi_mat = self.psi_phi
        return trace_objective(psi, phi_mat, self.phi(alloc))

    def mse(self, alloc: Allocation) -> float:
        return self.residual_trace + self.objective(alloc)

    def one_hop_phi(self, alpha) -> np.ndarray:
        if self.direct_gain is None:
            raise InvalidInputError("problem has no direct (one-hop) links")
        return self.direct_gain * np.asarray(alpha, dtype=float) / self.direct_noise

    def one_hop_objective(self, alpha) -> float:
        psi, phi_mat = self.psi_phi
        return trace_objective(psi, phi_mat, self.one_hop_phi(alpha))

    def one_hop_mse(self, alpha) -> float:
        return self.residual_trace + self.one_hop_objective(alpha)

    def objective_gradient(self, alloc: Allocation) -> tuple[np.ndarray, np.ndarray]:
        """Analytic gradient of :meth:`objective` with respect to (alpha, beta)."""
        psi, phi_mat = self.psi_phi
        c = self.spec.coefficients
        a, b = alloc.alpha, alloc.beta
        k = _phi_term(psi, phi_mat, self.phi(alloc))
        d_obj_d_phi = -np.sum(k * k, axis=1)
        den = c.q * a + c.r * b + c.sigma
        d_phi_d_a = c.p * b * (c.r * b + c.sigma) / den**2
        d_phi_d_b = c.p * a * (c.q * a + c.sigma) / den**2
        return d_obj_d_phi * d_phi_d_a, d_obj_d_phi * d_phi_d_b
