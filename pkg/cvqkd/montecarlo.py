"""
Monte Carlo oracle for the prepare-and-measure link.

Alice draws Gaussian-modulated coherent states, the ONU homodynes the x
quadrature, and the channel is estimated from the paired data the way a
parameter-estimation stage would. Comparing the estimates and sampled
moments against the analytic covariance model closes the loop between the
two descriptions.

Samples come from numpy's counter-based Philox generator. The index range is
cut into fixed blocks of ``BLOCK_SIZE`` samples and block ``b`` is drawn from
the stream keyed by ``(seed, b)``, so datasets do not depend on how many
workers generate them.

Example:
    >>> report = validate(ProtocolParams(), n_samples=100_000, seed=7)
    >>> report.passed
    True
"""

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import DomainError, EstimationError
from .keyrate import key_rate_for_totals, secret_key_rate
from .protocol import (
    ALICE,
    ONU,
    ChannelTotals,
    ProtocolParams,
    build_network_covariance,
    collapse_channel,
)
from .utils import build_metadata, format_number, resolve_threads

logger = logging.getLogger(__name__)

BLOCK_SIZE = 1 << 16
MAX_SEED = (1 << 64) - 1
MIN_ESTIMATION_SAMPLES = 100
JACKKNIFE_GROUPS = 100

DATASET_COLUMNS = (
    ("index", "-"),
    ("alice_x", "sqrt(SNU)"),
    ("alice_p", "sqrt(SNU)"),
    ("onu_x", "sqrt(SNU)"),
)


def _check_seed(seed: int) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) <= MAX_SEED:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Philox stream for one block; the 128-bit key packs (block, seed)."""
    return np.random.Generator(np.random.Philox(key=(int(block) << 64) | _check_seed(seed)))


@dataclass(frozen=True, eq=False)
class McDataset:
    """Paired Alice/ONU quadrature samples, in square-root shot-noise units."""

    seed: int
    n_samples: int
    alice_x: np.ndarray
    alice_p: np.ndarray
    onu_x: np.ndarray
    params_used: ProtocolParams

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow([f"{key} [{unit}]" for key, unit in DATASET_COLUMNS])
        for i, values in enumerate(zip(self.alice_x, self.alice_p, self.onu_x)):
            writer.writerow([i] + [format_number(float(v)) for v in values])
        return buffer.getvalue()

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv_text())
        logger.info("Wrote %d samples to %s", self.n_samples, path)


def simulate(
    params: ProtocolParams,
    n_samples: int,
    seed: int,
    threads: Optional[Union[int, str]] = None,
) -> McDataset:
    """
    Sample the prepare-and-measure link.

    ``onu_x = sqrt(eta_d T_tot) alice_x + z`` with ``z ~ N(0, 1 + eta_d T_tot eps_tot)``:
    every vacuum and excess-noise contribution is folded into one Gaussian.

    Args:
        params: Link parameters; T_tot comes from the collapsed channel.
        n_samples: Number of symbols, at least 2.
        seed: Unsigned 64-bit seed.
        threads: Worker count for block generation.
    """
    if isinstance(n_samples, bool) or int(n_samples) != n_samples or n_samples < 2:
        raise DomainError(f"n_samples must be an integer >= 2, got {n_samples!r}")
    n_samples = int(n_samples)
    seed = _check_seed(seed)

    totals = collapse_channel(params)
    gain = math.sqrt(params.eta_d * totals.T_tot)
    noise_std = math.sqrt(1.0 + params.eta_d * totals.T_tot * totals.epsilon_tot)
    mod_std = math.sqrt(params.V_mod)

    n_blocks = -(-n_samples // BLOCK_SIZE)

    def draw(block: int) -> np.ndarray:
        size = min(BLOCK_SIZE, n_samples - block * BLOCK_SIZE)
        # Sample-major draws keep shorter datasets a prefix of longer ones
        return block_generator(seed, block).standard_normal((size, 3)).T

    workers = min(resolve_threads(threads), n_blocks)
    if workers == 1:
        parts = [draw(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(draw, range(n_blocks)))
    z = np.concatenate(parts, axis=1)

    alice_x = mod_std * z[0]
    alice_p = mod_std * z[1]
    onu_x = gain * alice_x + noise_std * z[2]
    logger.debug("Drew %d samples in %d blocks (seed %d)", n_samples, n_blocks, seed)
    return McDataset(seed, n_samples, alice_x, alice_p, onu_x, params)


# Per-group sufficient statistics: n, sum a, sum b, sum a^2, sum b^2, sum ab
_N, _SA, _SB, _SAA, _SBB, _SAB = range(6)


def _group_statistics(a: np.ndarray, b: np.ndarray, n_groups: int) -> np.ndarray:
    bounds = np.linspace(0, len(a), n_groups + 1).astype(int)
    stats = np.empty((n_groups, 6))
    for k, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        ga, gb = a[lo:hi], b[lo:hi]
        stats[k] = (hi - lo, ga.sum(), gb.sum(), ga @ ga, gb @ gb, ga @ gb)
    return stats


def _tree_sum(stats: np.ndarray) -> np.ndarray:
    """Pairwise reduction in a fixed order."""
    level = stats
    while len(level) > 1:
        paired = level[: len(level) // 2 * 2].reshape(-1, 2, level.shape[1]).sum(axis=1)
        if len(level) % 2:
            paired = np.vstack([paired, level[-1:]])
        level = paired
    return level[0]


def _moments(stats: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unbiased var(a), var(b), cov(a, b) from sufficient statistics."""
    n = stats[..., _N]
    var_a = (stats[..., _SAA] - stats[..., _SA] ** 2 / n) / (n - 1)
    var_b = (stats[..., _SBB] - stats[..., _SB] ** 2 / n) / (n - 1)
    cov = (stats[..., _SAB] - stats[..., _SA] * stats[..., _SB] / n) / (n - 1)
    return var_a, var_b, cov


def _channel_estimates(
    stats: np.ndarray, eta_d: float, v_mod: float
) -> Tuple[np.ndarray, np.ndarray]:
    _, var_b, cov = _moments(stats)
    T_hat = cov**2 / (eta_d * v_mod**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        eps_hat = (var_b - eta_d * T_hat * v_mod - 1.0) / (eta_d * T_hat)
    return T_hat, eps_hat


def _jackknife_se(replicates: np.ndarray) -> float:
    g = len(replicates)
    return float(math.sqrt((g - 1) / g * np.sum((replicates - replicates.mean()) ** 2)))


@dataclass(frozen=True, eq=False)
class McEstimate:
    """
    Channel estimates with jackknife standard errors.

    ``T_replicates`` and ``eps_replicates`` hold the leave-one-group-out
    estimates the standard errors were computed from.
    """

    T_hat: float
    eps_hat: float
    T_se: float
    eps_se: float
    n_samples: int
    n_groups: int
    var_alice_x: float
    var_onu_x: float
    cov_alice_onu: float
    T_replicates: np.ndarray = field(repr=False)
    eps_replicates: np.ndarray = field(repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "T_hat": self.T_hat,
            "eps_hat": self.eps_hat,
            "T_se": self.T_se,
            "eps_se": self.eps_se,
            "n_samples": self.n_samples,
            "n_groups": self.n_groups,
        }


def estimate(
    ds: McDataset,
    eta_d: Optional[float] = None,
    v_mod: Optional[float] = None,
    n_groups: int = JACKKNIFE_GROUPS,
) -> McEstimate:
    """
    Estimate (T_tot, eps_tot) from paired x-quadrature data.

    ``T_hat = cov(x_A, x_C1)^2 / (eta_d V_mod^2)`` and
    ``eps_hat = (var(x_C1) - eta_d T_hat V_mod - 1) / (eta_d T_hat)``. Standard
    errors come from a delete-one-group jackknife over ``n_groups`` contiguous
    groups.

    Args:
        ds: Dataset with at least 100 samples.
        eta_d: Known detector efficiency; defaults to the dataset's.
        v_mod: Known modulation variance; defaults to the dataset's.
        n_groups: Number of jackknife groups.

    Raises:
        EstimationError: If the estimated transmittance is not positive.
    """
    eta_d = ds.params_used.eta_d if eta_d is None else float(eta_d)
    v_mod = ds.params_used.V_mod if v_mod is None else float(v_mod)
    if ds.n_samples < MIN_ESTIMATION_SAMPLES:
        raise DomainError(
            f"Estimation needs at least {MIN_ESTIMATION_SAMPLES} samples, got {ds.n_samples}"
        )
    if not v_mod > 0:
        raise EstimationError(f"Channel is not identifiable with V_mod = {v_mod}")
    n_groups = min(int(n_groups), ds.n_samples // 2)
    if n_groups < 2:
        raise DomainError(f"Jackknife needs at least 2 groups, got {n_groups}")

    stats = _group_statistics(ds.alice_x, ds.onu_x, n_groups)
    total = _tree_sum(stats)
    var_a, var_b, cov = _moments(total)
    T_hat, eps_hat = _channel_estimates(total, eta_d, v_mod)
    if not T_hat > 0:
        raise EstimationError(f"Estimated transmittance T_hat = {T_hat} is not positive")

    T_reps, eps_reps = _channel_estimates(total - stats, eta_d, v_mod)
    result = McEstimate(
        T_hat=float(T_hat),
        eps_hat=float(eps_hat),
        T_se=_jackknife_se(T_reps),
        eps_se=_jackknife_se(eps_reps),
        n_samples=ds.n_samples,
        n_groups=n_groups,
        var_alice_x=float(var_a),
        var_onu_x=float(var_b),
        cov_alice_onu=float(cov),
        T_replicates=T_reps,
        eps_replicates=eps_reps,
    )
    logger.debug(
        "T_hat=%.9g +/- %.3g, eps_hat=%.6g +/- %.3g",
        result.T_hat,
        result.T_se,
        result.eps_hat,
        result.eps_se,
    )
    return result


@dataclass(frozen=True)
class ValidationTolerances:
    """
    Pass thresholds for a validation run.

    Moments and channel estimates are judged in standard errors. The plug-in
    key rate passes within ``max(key_rate_bits, key_rate_sigmas * SE)`` bits of
    the true rate, so small datasets are not failed for their own sampling error.
    """

    moment_sigmas: float = 5.0
    estimate_sigmas: float = 3.0
    key_rate_bits: float = 0.01
    key_rate_sigmas: float = 3.0


@dataclass(frozen=True)
class Check:
    name: str
    sampled: float
    expected: float
    standard_error: float
    limit_sigmas: float

    @property
    def z_score(self) -> float:
        diff = self.sampled - self.expected
        if self.standard_error > 0:
            return diff / self.standard_error
        return 0.0 if diff == 0 else math.inf

    @property
    def passed(self) -> bool:
        return bool(abs(self.z_score) <= self.limit_sigmas)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "sampled": self.sampled,
            "expected": self.expected,
            "standard_error": self.standard_error,
            "z_score": self.z_score if math.isfinite(self.z_score) else None,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of one Monte Carlo validation run."""

    seed: int
    n_samples: int
    moments: Tuple[Check, ...]
    estimates: Tuple[Check, ...]
    key_rate_true: float
    key_rate_estimated: float
    key_rate_se: float
    key_rate_tolerance: float
    eps_clamped: bool
    params: ProtocolParams

    @property
    def key_rate_passed(self) -> bool:
        return bool(abs(self.key_rate_estimated - self.key_rate_true) <= self.key_rate_tolerance)

    @property
    def failures(self) -> List[str]:
        failed = [c.name for c in self.moments + self.estimates if not c.passed]
        if not self.key_rate_passed:
            failed.append("key_rate")
        return failed

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "n_samples": self.n_samples,
            "moments": [c.to_dict() for c in self.moments],
            "estimates": [c.to_dict() for c in self.estimates],
            "key_rate": {
                "true": self.key_rate_true,
                "estimated": self.key_rate_estimated,
                "standard_error": self.key_rate_se,
                "tolerance": self.key_rate_tolerance,
                "passed": self.key_rate_passed,
            },
            "eps_clamped": self.eps_clamped,
            "passed": self.passed,
        }

    def to_json_text(self, config: Optional[Dict[str, Any]] = None) -> str:
        inputs = {"seed": self.seed, "n_samples": self.n_samples}
        document: Dict[str, Any] = {
            "metadata": build_metadata("mc", self.params.to_dict(), inputs),
            "report": self.to_dict(),
        }
        if config is not None:
            document["config"] = config
        return json.dumps(document, indent=2) + "\n"


def _plug_in_rate(params: ProtocolParams, T_hat: float, eps_hat: float) -> float:
    totals = ChannelTotals(min(max(T_hat, np.finfo(float).tiny), 1.0), max(eps_hat, 0.0))
    return key_rate_for_totals(params, totals).key_rate_bits


def validate_dataset(
    ds: McDataset, tolerances: ValidationTolerances = ValidationTolerances()
) -> ValidationReport:
    """
    Check a dataset against the analytic covariance model.

    Compares the sampled <x_A^2>, <x_C1^2> and <x_A x_C1> against the matrix
    entries, the channel estimates against the true totals, and the plug-in
    key rate against the true one. Negative excess-noise estimates are clamped
    to 0 before the key rate is evaluated.

    Raises:
        DomainError: If the dataset holds fewer than 100 samples.
        EstimationError: If the channel cannot be estimated, as with V_mod = 0.
    """
    params = ds.params_used
    est = estimate(ds)
    n = ds.n_samples

    gamma = build_network_covariance(params)
    # Prepare-and-measure amplitudes relate to the EPR picture by sqrt(V_mod / (V + 1))
    scale = math.sqrt(params.V_mod / (params.V + 1.0))
    expected_var_a = float(gamma.block(ALICE, ALICE)[0, 0] - 1.0)
    expected_var_b = float(gamma.block(ONU, ONU)[0, 0])
    expected_cov = float(gamma.block(ALICE, ONU)[0, 0]) * scale

    var_a, var_b, cov = est.var_alice_x, est.var_onu_x, est.cov_alice_onu
    limit = tolerances.moment_sigmas
    moments = (
        Check("var_alice_x", var_a, expected_var_a, var_a * math.sqrt(2.0 / (n - 1)), limit),
        Check("var_onu_x", var_b, expected_var_b, var_b * math.sqrt(2.0 / (n - 1)), limit),
        Check(
            "cov_alice_onu_x",
            cov,
            expected_cov,
            math.sqrt((var_a * var_b + cov**2) / (n - 1)),
            limit,
        ),
    )

    totals = collapse_channel(params)
    limit = tolerances.estimate_sigmas
    estimates = (
        Check("T_tot", est.T_hat, totals.T_tot, est.T_se, limit),
        Check("epsilon_tot", est.eps_hat, totals.epsilon_tot, est.eps_se, limit),
    )

    eps_clamped = bool(est.eps_hat < 0)
    if eps_clamped:
        logger.warning("Negative excess-noise estimate %.3g clamped to 0", est.eps_hat)
    key_rate_hat = _plug_in_rate(params, est.T_hat, est.eps_hat)
    replicates = np.array(
        [_plug_in_rate(params, t, e) for t, e in zip(est.T_replicates, est.eps_replicates)]
    )
    key_rate_se = _jackknife_se(replicates)

    return ValidationReport(
        seed=ds.seed,
        n_samples=n,
        moments=moments,
        estimates=estimates,
        key_rate_true=secret_key_rate(params).key_rate_bits,
        key_rate_estimated=key_rate_hat,
        key_rate_se=key_rate_se,
        key_rate_tolerance=max(tolerances.key_rate_bits, tolerances.key_rate_sigmas * key_rate_se),
        eps_clamped=eps_clamped,
        params=params,
    )


def validate(
    params: ProtocolParams,
    n_samples: int,
    seed: int,
    tolerances: ValidationTolerances = ValidationTolerances(),
    threads: Optional[Union[int, str]] = None,
) -> ValidationReport:
    """
    Simulate a dataset and validate it.

    Statistical failures are report entries, not exceptions. A dataset the
    channel cannot be estimated from is a precondition error instead.

    Raises:
        DomainError: If ``n_samples`` is below 100 or ``seed`` is invalid.
        EstimationError: If ``params`` carries no modulation (V = 1).
    """
    report = validate_dataset(simulate(params, n_samples, seed, threads), tolerances)
    logger.info(
        "Monte Carlo validation with %d samples: %s",
        n_samples,
        "passed" if report.passed else f"failed ({', '.join(report.failures)})",
    )
    return report
