"""
Reverse-reconciliation secret key rate against a strengthened eavesdropper.

Every mode outside the OLT and the activated ONU (splitter ports, other
ONUs, the channel environment) is conceded to Eve, who therefore purifies
the (A, C1, D2) state. Her information is bounded by
``chi = S(A C1 D2) - S(A D2 | x_C1)``.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Tuple

from .errors import DegenerateMeasurementError, NumericalConsistencyError
from .gaussian import CovarianceMatrix, g, homodyne_condition, symplectic_eigenvalues
from .protocol import (
    ALICE,
    ONU,
    ChannelTotals,
    ProtocolParams,
    collapse_channel,
    network_covariance_from_totals,
)

logger = logging.getLogger(__name__)

CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True)
class KeyRateReport:
    """Outcome of one key-rate evaluation, in bits per symbol."""

    mutual_information_bits: float
    holevo_bits: float
    key_rate_bits: float
    key_rate_clamped: float
    nus_joint: Tuple[float, ...]
    nus_conditional: Tuple[float, ...]
    entropy_joint_bits: float
    entropy_conditional_bits: float
    totals: ChannelTotals

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mutual_information_bits": self.mutual_information_bits,
            "holevo_bits": self.holevo_bits,
            "key_rate_bits": self.key_rate_bits,
            "key_rate_clamped": self.key_rate_clamped,
            "nus_joint": list(self.nus_joint),
            "nus_conditional": list(self.nus_conditional),
            "entropy_joint_bits": self.entropy_joint_bits,
            "entropy_conditional_bits": self.entropy_conditional_bits,
            "T_tot": self.totals.T_tot,
            "epsilon_tot": self.totals.epsilon_tot,
        }


def mutual_information(
    gamma: CovarianceMatrix, alice: str = ALICE, onu: str = ONU, quadrature: str = "x"
) -> float:
    """
    Mutual information between Alice's heterodyne and the ONU's homodyne.

    ``I = 1/2 log2((V_A + 1) / (V_A|C1 + 1))`` with the Gaussian conditional
    variance ``V_A|C1 = V_A - <A C1>^2 / V_C1``.
    """
    q = 0 if quadrature == "x" else 1
    V_A = gamma.block(alice, alice)[q, q]
    V_C = gamma.block(onu, onu)[q, q]
    cov = gamma.block(alice, onu)[q, q]

    if not V_C > 0:
        raise DegenerateMeasurementError(f"{quadrature}-variance of mode {onu} is {V_C}")
    V_cond = V_A - cov * cov / V_C
    if V_cond < -CONSISTENCY_TOL:
        raise NumericalConsistencyError(
            f"Conditional variance V_{alice}|{onu} = {V_cond:.12g} is negative"
        )
    return 0.5 * math.log2((V_A + 1.0) / (V_cond + 1.0))


def _holevo_terms(
    gamma: CovarianceMatrix, onu: str, quadrature: str
) -> Tuple[float, float, Tuple[float, ...], Tuple[float, ...]]:
    nus_joint = symplectic_eigenvalues(gamma)
    conditional = homodyne_condition(gamma, onu, quadrature)
    nus_cond = symplectic_eigenvalues(conditional)
    S_joint = float(sum(g(nus_joint)))
    S_cond = float(sum(g(nus_cond)))
    return S_joint, S_cond, tuple(map(float, nus_joint)), tuple(map(float, nus_cond))


def _checked_chi(S_joint: float, S_cond: float) -> float:
    chi = S_joint - S_cond
    if chi < -CONSISTENCY_TOL:
        raise NumericalConsistencyError(f"Holevo bound {chi:.12g} is negative")
    return chi


def holevo_bound(gamma: CovarianceMatrix, onu: str = ONU, quadrature: str = "x") -> float:
    """
    Holevo information of the strengthened eavesdropper on the ONU's data.

    Eve purifies the whole state, so S(E') equals the entropy of ``gamma`` and
    S(E' | x_C1) the entropy of the remaining modes conditioned on the
    homodyne outcome. The trusted detector-loss mode stays in both terms.
    """
    S_joint, S_cond, _, _ = _holevo_terms(gamma, onu, quadrature)
    return _checked_chi(S_joint, S_cond)


def key_rate_for_totals(params: ProtocolParams, totals: ChannelTotals) -> KeyRateReport:
    """
    Key rate for measured channel totals instead of the modelled ones.

    ``params`` supplies V, beta and the detector model; ``totals`` supplies
    (T_tot, eps_tot). With an untrusted detector the detection efficiency is
    folded into the channel and its loss mode is handed to Eve.
    """
    if params.trusted_detector:
        gamma = network_covariance_from_totals(params.V, totals, params.eta_d)
    else:
        folded = ChannelTotals(totals.T_tot * params.eta_d, totals.epsilon_tot)
        gamma = network_covariance_from_totals(params.V, folded, 1.0).reduced([ALICE, ONU])

    info = mutual_information(gamma)
    S_joint, S_cond, nus_joint, nus_cond = _holevo_terms(gamma, ONU, "x")
    chi = _checked_chi(S_joint, S_cond)

    key_rate = params.beta * info - chi
    logger.debug(
        "T_tot=%.6g eps_tot=%.6g I=%.9g chi=%.9g K=%.9g",
        totals.T_tot,
        totals.epsilon_tot,
        info,
        chi,
        key_rate,
    )
    return KeyRateReport(
        mutual_information_bits=info,
        holevo_bits=chi,
        key_rate_bits=key_rate,
        key_rate_clamped=max(key_rate, 0.0),
        nus_joint=nus_joint,
        nus_conditional=nus_cond,
        entropy_joint_bits=S_joint,
        entropy_conditional_bits=S_cond,
        totals=totals,
    )


def secret_key_rate(params: ProtocolParams) -> KeyRateReport:
    """
    Secret key rate ``K = beta * I_AC1 - chi_E'C1`` for a link.

    Args:
        params: Link parameters.

    Returns:
        KeyRateReport: Raw (possibly negative) and clamped rates together with
        the entropies and symplectic eigenvalues behind them.

    Example:
        >>> report = secret_key_rate(ProtocolParams())
        >>> report.key_rate_bits > 0
        True
    """
    return key_rate_for_totals(params, collapse_channel(params))
