"""Joint sensor/relay power allocation for two-hop linear sensor networks.

Bayesian MMSE fusion over an amplify-and-forward relay, a successive convex
approximation power allocator with closed-form cubic updates, brute-force
oracles, and a Monte Carlo harness for MSE-versus-budget sweeps.
"""

__version__ = "0.1.0"

from .errors import (
    InvalidInputError,
    NumericalError,
    RelayPowerError,
    ScenarioError,
    UnsupportedSizeError,
)
from .bayes import (
    GaussianBelief,
    JointMoments,
    SensorNetwork,
    channel_power,
    mmse_estimate,
    mse_trace,
    observation_moments,
    posterior_cov_direct,
)
from .relay import (
    Allocation,
    Budgets,
    ChannelLink,
    PhiCoefficients,
    RelayProblem,
    RelaySpec,
    effective_gain,
    phi_coefficients,
    phi_value,
    posterior_mse,
    psi_phi,
    total_noise_cov,
)
from .sca import (
    ScaOptions,
    ScaTrace,
    cubic_positive_root,
    one_hop_optimize,
    optimize,
    uniform_allocation,
)

__all__ = [
    "Allocation",
    "Budgets",
    "ChannelLink",
    "GaussianBelief",
    "InvalidInputError",
    "JointMoments",
    "NumericalError",
    "PhiCoefficients",
    "RelayPowerError",
    "RelayProblem",
    "RelaySpec",
    "ScaOptions",
    "ScaTrace",
    "ScenarioError",
    "SensorNetwork",
    "UnsupportedSizeError",
    "channel_power",
    "cubic_positive_root",
    "effective_gain",
    "mmse_estimate",
    "mse_trace",
    "observation_moments",
    "one_hop_optimize",
    "optimize",
    "phi_coefficients",
    "phi_value",
    "posterior_cov_direct",
    "posterior_mse",
    "psi_phi",
    "total_noise_cov",
    "uniform_allocation",
]
