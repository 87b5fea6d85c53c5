"""
Downstream access network model.

The OLT (Alice) holds one mode of an EPR state and sends the other through
fiber and a passive splitter (the ODN) to the activated ONU. Everything
between the OLT and the ONU's detector collapses into one total
transmittance and one total excess noise; the detector efficiency is a
trusted beamsplitter in front of an ideal homodyne detector.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, DomainError
from .gaussian import (
    IDENTITY_2,
    SIGMA_Z,
    CovarianceMatrix,
    beamsplitter_transform,
    symplectic_eigenvalues,
)

logger = logging.getLogger(__name__)

IDEAL_SPLITTER = "ideal_1_over_n"
EXPLICIT_SPLITTER = "explicit"
SPLITTER_MODELS = (IDEAL_SPLITTER, EXPLICIT_SPLITTER)

ALICE = "A"
CHANNEL_OUTPUT = "B'2"
ONU = "C1"
DETECTOR_LOSS = "D2"


@dataclass(frozen=True)
class ProtocolParams:
    """
    Physical and protocol parameters of one OLT-ONU link.

    Defaults reproduce the simulation settings used for the access-network
    studies: V = 5, eps_tot = 0.05 SNU, alpha = 0.2 dB/km, eta_d = 0.6,
    eta_e = 0.99, beta = 0.956, at 10 km with 4 ONUs.

    Instances are immutable; the ``with_*`` methods return modified copies.

    Example:
        >>> params = ProtocolParams().with_distance(30.0).with_onus(64)
        >>> params.n_onus
        64
    """

    V: float = 5.0
    beta: float = 0.956
    eta_d: float = 0.6
    eta_e: float = 0.99
    alpha_db_per_km: float = 0.2
    distance_km: float = 10.0
    n_onus: int = 4
    epsilon_segments: Tuple[float, ...] = (0.05,)
    splitter_model: str = IDEAL_SPLITTER
    eta_odn: Optional[float] = None
    trusted_detector: bool = True

    def __post_init__(self):
        segments: Union[float, Iterable[float]] = self.epsilon_segments
        if isinstance(segments, (int, float)):
            segments = (segments,)
        object.__setattr__(self, "epsilon_segments", tuple(float(e) for e in segments))
        object.__setattr__(self, "V", float(self.V))

        if isinstance(self.n_onus, bool) or int(self.n_onus) != self.n_onus:
            raise DomainError(f"n_onus must be an integer, got {self.n_onus!r}")
        object.__setattr__(self, "n_onus", int(self.n_onus))

        self._validate()

    def _validate(self) -> None:
        numbers = {
            "V": self.V,
            "beta": self.beta,
            "eta_d": self.eta_d,
            "eta_e": self.eta_e,
            "alpha_db_per_km": self.alpha_db_per_km,
            "distance_km": self.distance_km,
        }
        for name, value in numbers.items():
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value}")

        if self.V < 1:
            raise DomainError(f"V must be >= 1 (EPR variance in SNU), got {self.V}")
        if not 0 < self.beta <= 1:
            raise DomainError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0 < self.eta_d <= 1:
            raise DomainError(f"eta_d must lie in (0, 1], got {self.eta_d}")
        if not 0 < self.eta_e <= 1:
            raise DomainError(f"eta_e must lie in (0, 1], got {self.eta_e}")
        if self.alpha_db_per_km < 0:
            raise DomainError(f"alpha_db_per_km must be >= 0, got {self.alpha_db_per_km}")
        if self.distance_km < 0:
            raise DomainError(f"distance_km must be >= 0, got {self.distance_km}")
        if self.n_onus < 1:
            raise DomainError(f"n_onus must be >= 1, got {self.n_onus}")
        if not self.epsilon_segments:
            raise DomainError("epsilon_segments must hold at least one value")
        for eps in self.epsilon_segments:
            if not (math.isfinite(eps) and eps >= 0):
                raise DomainError(f"excess noise segments must be >= 0 SNU, got {eps}")

        if self.splitter_model not in SPLITTER_MODELS:
            raise ConfigError(
                f"splitter_model must be one of {SPLITTER_MODELS}, got {self.splitter_model!r}"
            )
        if self.splitter_model == EXPLICIT_SPLITTER:
            if self.eta_odn is None or not 0 < self.eta_odn <= 1:
                raise ConfigError(
                    f"explicit splitter needs eta_odn in (0, 1], got {self.eta_odn}"
                )
        elif self.eta_odn is not None:
            raise ConfigError("eta_odn is only used with splitter_model = 'explicit'")

    @property
    def V_mod(self) -> float:
        """Modulation variance, V = V_mod + 1."""
        return self.V - 1.0

    @property
    def epsilon_tot(self) -> float:
        return float(math.fsum(self.epsilon_segments))

    @classmethod
    def from_modulation_variance(cls, V_mod: float, **kwargs) -> "ProtocolParams":
        return cls(V=V_mod + 1.0, **kwargs)

    def with_distance(self, distance_km: float) -> "ProtocolParams":
        return dataclasses.replace(self, distance_km=distance_km)

    def with_onus(self, n_onus: int) -> "ProtocolParams":
        return dataclasses.replace(self, n_onus=n_onus)

    def with_excess_noise(self, epsilon_tot: float) -> "ProtocolParams":
        """Replace the noise segments by one pre-collapsed total."""
        return dataclasses.replace(self, epsilon_segments=(epsilon_tot,))

    def with_variance(self, V: float) -> "ProtocolParams":
        return dataclasses.replace(self, V=V)

    def with_modulation_variance(self, V_mod: float) -> "ProtocolParams":
        return dataclasses.replace(self, V=V_mod + 1.0)

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["epsilon_segments"] = list(self.epsilon_segments)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProtocolParams":
        """
        Build parameters from a plain mapping.

        ``V_mod`` is accepted in place of ``V``; unknown keys are rejected.
        """
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        if "V_mod" in data:
            if "V" in data:
                raise ConfigError("Give either V or V_mod, not both")
            data["V"] = float(data.pop("V_mod")) + 1.0
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown parameter(s): {', '.join(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ChannelTotals:
    """Total transmittance and input-referred total excess noise of the link."""

    T_tot: float
    epsilon_tot: float

    def __post_init__(self):
        if not 0 < self.T_tot <= 1:
            raise DomainError(f"T_tot must lie in (0, 1], got {self.T_tot}")
        if not self.epsilon_tot >= 0:
            raise DomainError(f"epsilon_tot must be >= 0 SNU, got {self.epsilon_tot}")

    @property
    def loss_db(self) -> float:
        return -10.0 * math.log10(self.T_tot)

    def to_dict(self) -> Dict[str, float]:
        return {"T_tot": self.T_tot, "epsilon_tot": self.epsilon_tot}


def fiber_transmittance(alpha_db_per_km: float, distance_km: float) -> float:
    return float(10.0 ** (-alpha_db_per_km * distance_km / 10.0))


def splitter_transmittance(
    n_onus: int, model: str = IDEAL_SPLITTER, eta_odn: Optional[float] = None
) -> float:
    """
    Transmittance of the ODN towards one ONU.

    Args:
        n_onus: Number of ONUs, 1 meaning no splitter.
        model: ``"ideal_1_over_n"`` or ``"explicit"``.
        eta_odn: Transmittance used by the explicit model.
    """
    if n_onus < 1:
        raise DomainError(f"n_onus must be >= 1, got {n_onus}")
    if model == IDEAL_SPLITTER:
        return 1.0 / n_onus
    if model == EXPLICIT_SPLITTER:
        if eta_odn is None or not 0 < eta_odn <= 1:
            raise ConfigError(f"explicit splitter needs eta_odn in (0, 1], got {eta_odn}")
        return float(eta_odn)
    raise ConfigError(f"splitter_model must be one of {SPLITTER_MODELS}, got {model!r}")


def splitter_loss_db(n_onus: int) -> float:
    """Insertion loss of an ideal 1:n splitter in dB."""
    return -10.0 * math.log10(splitter_transmittance(n_onus))


def collapse_channel(params: ProtocolParams) -> ChannelTotals:
    """
    Collapse all link segments into (T_tot, eps_tot).

    Transmittances multiply (fiber over the full OLT-ONU length, splitter, and
    the electronic-noise beamsplitter eta_e); excess noises add.
    """
    T_tot = (
        fiber_transmittance(params.alpha_db_per_km, params.distance_km)
        * splitter_transmittance(params.n_onus, params.splitter_model, params.eta_odn)
        * params.eta_e
    )
    return ChannelTotals(T_tot=T_tot, epsilon_tot=params.epsilon_tot)


def build_ab_covariance(V: float, totals: ChannelTotals) -> CovarianceMatrix:
    """Covariance of Alice's mode and the channel output before detection."""
    if not V >= 1:
        raise DomainError(f"V must be >= 1, got {V}")
    T, eps = totals.T_tot, totals.epsilon_tot
    corr = math.sqrt(T * (V * V - 1.0)) * SIGMA_Z
    output = (T * (V - 1.0 + eps) + 1.0) * IDENTITY_2
    gamma = CovarianceMatrix(
        np.block([[V * IDENTITY_2, corr], [corr, output]]), (ALICE, CHANNEL_OUTPUT)
    )
    symplectic_eigenvalues(gamma)
    return gamma


def network_covariance_from_totals(
    V: float, totals: ChannelTotals, eta_d: float
) -> CovarianceMatrix:
    """Covariance of (A, C1, D2): the channel output split on the detector beamsplitter."""
    ab = build_ab_covariance(V, totals)
    gamma = beamsplitter_transform(ab, CHANNEL_OUTPUT, eta_d, DETECTOR_LOSS)
    gamma = gamma.relabel({CHANNEL_OUTPUT: ONU})
    symplectic_eigenvalues(gamma)
    return gamma


def build_network_covariance(params: ProtocolParams) -> CovarianceMatrix:
    """
    Covariance matrix of modes (A, C1, D2) for the given link.

    Returns:
        CovarianceMatrix: 6x6 matrix, modes ordered A, C1, D2.
    """
    return network_covariance_from_totals(params.V, collapse_channel(params), params.eta_d)


def network_covariance_closed_form(
    V: float, totals: ChannelTotals, eta_d: float
) -> CovarianceMatrix:
    """
    Closed-form entries of the (A, C1, D2) covariance matrix.

    Independent of the beamsplitter construction; the A-D2 correlation carries
    the same sign on both sides of the diagonal.
    """
    T, eps = totals.T_tot, totals.epsilon_tot
    w = T * (V - 1.0 + eps)
    c = math.sqrt(V * V - 1.0)
    a_c1 = math.sqrt(T * eta_d) * c * SIGMA_Z
    a_d2 = -math.sqrt(T * (1.0 - eta_d)) * c * SIGMA_Z
    c1_d2 = -math.sqrt((1.0 - eta_d) * eta_d) * w * IDENTITY_2
    entries = np.block(
        [
            [V * IDENTITY_2, a_c1, a_d2],
            [a_c1, (eta_d * w + 1.0) * IDENTITY_2, c1_d2],
            [a_d2, c1_d2, ((1.0 - eta_d) * w + 1.0) * IDENTITY_2],
        ]
    )
    return CovarianceMatrix(entries, (ALICE, ONU, DETECTOR_LOSS))


def point_to_point_params(params: ProtocolParams) -> ProtocolParams:
    """
    Same link without the splitter: the standard point-to-point reference.

    The splitter model is reset to ideal so that an explicit eta_odn does not
    survive the removal of the splitter.
    """
    return dataclasses.replace(params, n_onus=1, splitter_model=IDEAL_SPLITTER, eta_odn=None)
