"""
cvqkd

Secret key rates of continuous-variable QKD over passive-splitter downstream
access networks: Gaussian covariance-matrix model of the OLT-ONU link,
strengthened-eavesdropper key rate, parameter studies and a Monte Carlo
cross-check.

Example:
    >>> import cvqkd
    >>> params = cvqkd.ProtocolParams(distance_km=30.0, n_onus=64)
    >>> cvqkd.secret_key_rate(params).key_rate_clamped > 0
    True
"""

from .analysis import (
    SweepGrid,
    SweepResult,
    compare_point_to_point,
    default_grid,
    keyrate_grid,
    optimal_modulation_variance,
    optimum_grid,
    tolerable_excess_noise,
    tolerance_grid,
)
from .errors import (
    ArgumentError,
    BracketError,
    ConfigError,
    CVQKDError,
    DegenerateMeasurementError,
    DomainError,
    EstimationError,
    NumericalConsistencyError,
    UnphysicalStateError,
)
from .gaussian import CovarianceMatrix
from .keyrate import KeyRateReport, holevo_bound, mutual_information, secret_key_rate
from .montecarlo import estimate, simulate, validate
from .protocol import ChannelTotals, ProtocolParams, build_network_covariance, collapse_channel
from .versions import OUTPUT_SCHEMA_VERSION, PACKAGE_VERSION

# Use versions.py as the source of truth
__version__ = PACKAGE_VERSION

__all__ = [
    "ArgumentError",
    "BracketError",
    "ChannelTotals",
    "ConfigError",
    "CovarianceMatrix",
    "CVQKDError",
    "DegenerateMeasurementError",
    "DomainError",
    "EstimationError",
    "KeyRateReport",
    "NumericalConsistencyError",
    "OUTPUT_SCHEMA_VERSION",
    "ProtocolParams",
    "SweepGrid",
    "SweepResult",
    "UnphysicalStateError",
    "__version__",
    "build_network_covariance",
    "collapse_channel",
    "compare_point_to_point",
    "default_grid",
    "estimate",
    "holevo_bound",
    "keyrate_grid",
    "mutual_information",
    "optimal_modulation_variance",
    "optimum_grid",
    "secret_key_rate",
    "simulate",
    "tolerable_excess_noise",
    "tolerance_grid",
    "validate",
]
