"""
Parameter studies over the downstream key-rate model.

Four studies are provided, each returning a :class:`SweepResult` that
serializes to CSV and JSON:

- :func:`keyrate_grid`: key rate over distance and number of ONUs.
- :func:`tolerance_grid`: tolerable excess noise over the same axes.
- :func:`compare_point_to_point`: downstream rate against a splitter-free link.
- :func:`optimum_grid`: optimal modulation variance over the same axes.

Example:
    >>> grid = SweepGrid(distances_km=(10.0, 20.0), onu_counts=(4, 8))
    >>> result = keyrate_grid(grid)
    >>> print(result.to_csv_text())
"""

import csv
import dataclasses
import functools
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from .errors import BracketError, CVQKDError, ConfigError, DomainError
from .keyrate import secret_key_rate
from .protocol import ProtocolParams, point_to_point_params
from .utils import build_metadata, format_number, resolve_threads

logger = logging.getLogger(__name__)

DEFAULT_DISTANCES_KM = tuple(float(d) for d in range(0, 31))
DEFAULT_ONU_COUNTS = tuple(range(2, 65))
DEFAULT_EPS_MAX = 1.0
DEFAULT_BRACKET = (0.01, 100.0)

TOLERANCE_XTOL = 1e-9
ROOT_RESIDUAL_TOL = 1e-6
OPTIMUM_XTOL = 1e-4
COARSE_POINTS = 64
FINE_POINTS = 1024

FLAG_SEPARATOR = ";"

# (key, unit) pairs; the CSV header is "key [unit]"
Column = Tuple[str, str]

AXIS_DISTANCE: Column = ("distance_km", "km")
AXIS_ONUS: Column = ("n_onus", "count")
AXIS_FIBER_LOSS: Column = ("fiber_loss_db", "dB")
FLAGS: Column = ("flags", "-")
ERROR: Column = ("error", "-")


@dataclass(frozen=True)
class SweepGrid:
    """
    Distance x ONU-count grid around a base parameter set.

    Args:
        distances_km: Strictly increasing distances.
        onu_counts: Strictly increasing ONU counts, each >= 1.
        base_params: Parameters every cell starts from.
    """

    distances_km: Tuple[float, ...]
    onu_counts: Tuple[int, ...]
    base_params: ProtocolParams = field(default_factory=ProtocolParams)

    def __post_init__(self):
        distances = tuple(float(d) for d in self.distances_km)
        onus = tuple(int(n) for n in self.onu_counts)
        _check_axis("distances_km", distances)
        _check_axis("onu_counts", onus)
        if distances[0] < 0:
            raise ConfigError(f"distances_km must be >= 0, got {distances[0]}")
        if onus[0] < 1:
            raise ConfigError(f"onu_counts must be >= 1, got {onus[0]}")
        object.__setattr__(self, "distances_km", distances)
        object.__setattr__(self, "onu_counts", onus)

    def cells(self) -> List[Tuple[float, int]]:
        """Cell coordinates, distance-major."""
        return [(d, n) for d in self.distances_km for n in self.onu_counts]

    def params_for(self, distance_km: float, n_onus: int) -> ProtocolParams:
        return self.base_params.with_distance(distance_km).with_onus(n_onus)

    def to_dict(self) -> Dict[str, Any]:
        return {"distances_km": list(self.distances_km), "onu_counts": list(self.onu_counts)}


def _check_axis(name: str, values: Sequence[float]) -> None:
    if not values:
        raise ConfigError(f"{name} must not be empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"{name} must be strictly increasing, got {list(values)}")


def default_grid(base_params: Optional[ProtocolParams] = None) -> SweepGrid:
    """Distances 0..30 km in 1 km steps and 2..64 ONUs."""
    return SweepGrid(
        DEFAULT_DISTANCES_KM, DEFAULT_ONU_COUNTS, base_params or ProtocolParams()
    )


@dataclass
class SweepResult:
    """
    Tabular result of a parameter study.

    Rows are cells in axis order; each row maps column keys to values. Failed
    cells keep their coordinates, leave the payload empty and carry the error
    message.
    """

    kind: str
    columns: Tuple[Column, ...]
    rows: List[Dict[str, Any]]
    metadata: Dict[str, Any]

    @property
    def column_keys(self) -> List[str]:
        return [key for key, _ in self.columns]

    @property
    def failed_cells(self) -> List[Dict[str, Any]]:
        return [row for row in self.rows if row.get("error")]

    def column(self, key: str) -> List[Any]:
        if key not in self.column_keys:
            raise KeyError(f"No column {key!r} in {self.kind} result")
        return [row.get(key) for row in self.rows]

    def axis_values(self, key: str) -> List[Any]:
        """Distinct values of an axis column in first-seen order."""
        return list(dict.fromkeys(self.column(key)))

    def slice(self, axis: str, value: Any) -> "SweepResult":
        """Rows whose ``axis`` column equals ``value``, e.g. a fixed-distance profile."""
        rows = [row for row in self.rows if row.get(axis) == value]
        if not rows:
            raise KeyError(f"No rows with {axis} = {value!r}")
        metadata = dict(self.metadata, slice={axis: value})
        return SweepResult(self.kind, self.columns, rows, metadata)

    def as_matrix(self, key: str, row_axis: str, col_axis: str) -> np.ndarray:
        """Payload column arranged as a (row_axis x col_axis) array, NaN where absent."""
        row_values = self.axis_values(row_axis)
        col_values = self.axis_values(col_axis)
        matrix = np.full((len(row_values), len(col_values)), np.nan)
        row_pos = {v: i for i, v in enumerate(row_values)}
        col_pos = {v: j for j, v in enumerate(col_values)}
        for row in self.rows:
            value = row.get(key)
            if value is not None:
                matrix[row_pos[row[row_axis]], col_pos[row[col_axis]]] = value
        return matrix

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow([f"{key} [{unit}]" for key, unit in self.columns])
        for row in self.rows:
            writer.writerow([format_number(row.get(key)) for key in self.column_keys])
        return buffer.getvalue()

    def to_document(self, config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        document: Dict[str, Any] = {
            "metadata": self.metadata,
            "columns": [{"name": key, "unit": unit} for key, unit in self.columns],
            "rows": self.rows,
        }
        if config is not None:
            document["config"] = config
        return document

    def to_json_text(self, config: Optional[Dict[str, Any]] = None) -> str:
        return json.dumps(self.to_document(config), indent=2) + "\n"

    def write(
        self,
        csv_path: Optional[str] = None,
        json_path: Optional[str] = None,
        config: Optional[Dict[str, Any]] = None,
    ) -> None:
        if csv_path:
            with open(csv_path, "w", encoding="utf-8", newline="") as f:
                f.write(self.to_csv_text())
            logger.info("Wrote %d rows to %s", len(self.rows), csv_path)
        if json_path:
            with open(json_path, "w", encoding="utf-8", newline="") as f:
                f.write(self.to_json_text(config))
            logger.info("Wrote %s result to %s", self.kind, json_path)

    @classmethod
    def concat(cls, results: Sequence["SweepResult"]) -> "SweepResult":
        """Stack results of the same kind; metadata inputs are merged into lists."""
        if not results:
            raise ValueError("Nothing to concatenate")
        first = results[0]
        for other in results[1:]:
            if other.kind != first.kind or other.columns != first.columns:
                raise ValueError(f"Cannot concatenate {other.kind} onto {first.kind}")
        rows = [row for result in results for row in result.rows]
        inputs = [result.metadata["inputs"] for result in results]
        metadata = build_metadata(first.kind, first.metadata["params"], {"parts": inputs})
        return cls(first.kind, first.columns, rows, metadata)


# ---------------------------------------------------------------------------
# Cell evaluation. Cell functions are module-level so they pickle into workers.
# ---------------------------------------------------------------------------

CellOutcome = Tuple[Optional[Dict[str, Any]], Optional[str]]


def _guarded(
    func: Callable[[ProtocolParams], Dict[str, Any]], params: ProtocolParams
) -> CellOutcome:
    try:
        return func(params), None
    except CVQKDError as e:
        return None, f"{type(e).__name__}: {e}"


def _evaluate(
    func: Callable[[ProtocolParams], Dict[str, Any]],
    cells: Sequence[ProtocolParams],
    threads: Optional[Union[int, str]],
) -> List[CellOutcome]:
    workers = min(resolve_threads(threads), max(len(cells), 1))
    task = functools.partial(_guarded, func)
    if workers == 1:
        return [task(params) for params in cells]
    logger.info("Evaluating %d cells on %d workers", len(cells), workers)
    chunksize = max(1, len(cells) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(task, cells, chunksize=chunksize))


def _grid_rows(
    grid: SweepGrid,
    outcomes: Sequence[CellOutcome],
    payload: Sequence[Column],
) -> List[Dict[str, Any]]:
    rows = []
    for (d, n), (values, error) in zip(grid.cells(), outcomes):
        row: Dict[str, Any] = {"distance_km": d, "n_onus": n}
        values = dict(values or {})
        flags = values.pop("flags", [])
        for key, _ in payload:
            row[key] = values.get(key)
        row["flags"] = FLAG_SEPARATOR.join(flags)
        row["error"] = error or ""
        if error:
            logger.warning("Cell (%s km, %d ONUs) failed: %s", d, n, error)
        rows.append(row)
    return rows


def _run_grid(
    kind: str,
    grid: SweepGrid,
    func: Callable[[ProtocolParams], Dict[str, Any]],
    payload: Sequence[Column],
    inputs: Dict[str, Any],
    threads: Optional[Union[int, str]],
) -> SweepResult:
    cells = [grid.params_for(d, n) for d, n in grid.cells()]
    outcomes = _evaluate(func, cells, threads)
    rows = _grid_rows(grid, outcomes, payload)
    columns = (AXIS_DISTANCE, AXIS_ONUS, *payload, FLAGS, ERROR)
    metadata = build_metadata(kind, grid.base_params.to_dict(), dict(grid.to_dict(), **inputs))
    return SweepResult(kind, columns, rows, metadata)


# ---------------------------------------------------------------------------
# Key-rate grid
# ---------------------------------------------------------------------------

KEYRATE_PAYLOAD: Tuple[Column, ...] = (
    ("key_rate", "bits/symbol"),
    ("key_rate_clamped", "bits/symbol"),
)


def _keyrate_cell(params: ProtocolParams) -> Dict[str, Any]:
    report = secret_key_rate(params)
    return {"key_rate": report.key_rate_bits, "key_rate_clamped": report.key_rate_clamped}


def keyrate_grid(grid: SweepGrid, threads: Optional[Union[int, str]] = None) -> SweepResult:
    """
    Raw and clamped key rate for every (distance, ONU count) cell.

    Args:
        grid: Axes and base parameters.
        threads: Worker count, ``"auto"``, or None for ``CVQKD_THREADS``.
    """
    return _run_grid("keyrate", grid, _keyrate_cell, KEYRATE_PAYLOAD, {}, threads)


# ---------------------------------------------------------------------------
# Tolerable excess noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToleranceResult:
    """Largest total excess noise (SNU) with a positive key rate."""

    epsilon_tol: float
    below_threshold: bool = False
    residual_bits: float = 0.0


def tolerable_excess_noise(
    params: ProtocolParams,
    eps_max: float = DEFAULT_EPS_MAX,
    xtol: float = TOLERANCE_XTOL,
) -> ToleranceResult:
    """
    Root of K(eps_tot) = 0 on [0, eps_max] by bisection.

    The excess-noise segments of ``params`` are replaced by a single total.

    Args:
        params: Link parameters.
        eps_max: Upper end of the bracket in SNU.
        xtol: Absolute tolerance on the root.

    Returns:
        ToleranceResult: ``epsilon_tol = 0`` with ``below_threshold`` set when the
        noiseless link has no positive rate.

    Raises:
        BracketError: If K is still positive at ``eps_max``.
    """
    if not eps_max > 0:
        raise ConfigError(f"eps_max must be > 0 SNU, got {eps_max}")

    def rate(eps: float) -> float:
        return secret_key_rate(params.with_excess_noise(eps)).key_rate_bits

    k_low = rate(0.0)
    if k_low <= 0:
        logger.debug("No positive rate at eps = 0 (K = %.6g)", k_low)
        return ToleranceResult(0.0, below_threshold=True, residual_bits=k_low)

    k_high = rate(eps_max)
    if k_high > 0:
        raise BracketError(
            f"Key rate {k_high:.6g} is still positive at eps_max = {eps_max} SNU; widen the bracket"
        )

    eps_star, info = optimize.bisect(rate, 0.0, eps_max, xtol=xtol, maxiter=200, full_output=True)
    residual = rate(eps_star)
    logger.debug(
        "eps* = %.9g after %d iterations, K(eps*) = %.3g", eps_star, info.iterations, residual
    )
    if abs(residual) > ROOT_RESIDUAL_TOL:
        logger.warning("Residual K(eps*) = %.3g exceeds %.0e bits", residual, ROOT_RESIDUAL_TOL)
    return ToleranceResult(float(eps_star), residual_bits=float(residual))


TOLERANCE_PAYLOAD: Tuple[Column, ...] = (
    ("tolerable_excess_noise", "SNU"),
    ("residual_key_rate", "bits/symbol"),
)


def _tolerance_cell(params: ProtocolParams, eps_max: float) -> Dict[str, Any]:
    result = tolerable_excess_noise(params, eps_max)
    return {
        "tolerable_excess_noise": result.epsilon_tol,
        "residual_key_rate": result.residual_bits,
        "flags": ["below_threshold"] if result.below_threshold else [],
    }


def tolerance_grid(
    grid: SweepGrid,
    eps_max: float = DEFAULT_EPS_MAX,
    threads: Optional[Union[int, str]] = None,
) -> SweepResult:
    """Tolerable excess noise for every cell of ``grid``."""
    func = functools.partial(_tolerance_cell, eps_max=eps_max)
    inputs = {"eps_max": eps_max}
    return _run_grid("tolerance", grid, func, TOLERANCE_PAYLOAD, inputs, threads)


# ---------------------------------------------------------------------------
# Point-to-point comparison
# ---------------------------------------------------------------------------

COMPARE_PAYLOAD: Tuple[Column, ...] = (
    ("total_loss_db", "dB"),
    ("key_rate_downstream", "bits/symbol"),
    ("key_rate_point_to_point", "bits/symbol"),
    ("ratio", "%"),
)


def params_for_fiber_loss(base_params: ProtocolParams, fiber_loss_db: float) -> ProtocolParams:
    """
    Parameters whose fiber contributes exactly ``fiber_loss_db``.

    The distance is derived from the attenuation; a lossless fiber model is
    given a 1 dB/km attenuation so the loss can still be expressed.
    """
    if not (math.isfinite(fiber_loss_db) and fiber_loss_db >= 0):
        raise DomainError(f"fiber_loss_db must be >= 0 dB, got {fiber_loss_db}")
    alpha = base_params.alpha_db_per_km
    if alpha <= 0:
        return dataclasses.replace(base_params, alpha_db_per_km=1.0, distance_km=fiber_loss_db)
    return base_params.with_distance(fiber_loss_db / alpha)


def compare_point_to_point(
    fiber_loss_db: float,
    onu_counts: Sequence[int],
    base_params: Optional[ProtocolParams] = None,
) -> SweepResult:
    """
    Downstream key rate against the splitter-free point-to-point rate.

    ``fiber_loss_db`` is the fiber loss only; the downstream link adds the
    splitter loss ``10 log10(n)`` dB on top. Both sides use the ideal splitter
    model, so an explicit ``eta_odn`` in ``base_params`` is ignored here.

    Returns:
        SweepResult: One row per ONU count with both rates and the percentage
        ratio. The ratio is absent when the point-to-point rate is not positive.
    """
    base_params = base_params or ProtocolParams()
    onus = tuple(int(n) for n in onu_counts)
    _check_axis("onu_counts", onus)
    if onus[0] < 1:
        raise ConfigError(f"onu_counts must be >= 1, got {onus[0]}")

    fiber_params = params_for_fiber_loss(base_params, fiber_loss_db)
    reference = point_to_point_params(fiber_params)
    k_ptp = secret_key_rate(reference).key_rate_bits

    rows = []
    for n in onus:
        row: Dict[str, Any] = {"fiber_loss_db": float(fiber_loss_db), "n_onus": n}
        error = ""
        try:
            report = secret_key_rate(reference.with_onus(n))
            row["total_loss_db"] = report.totals.loss_db
            row["key_rate_downstream"] = report.key_rate_bits
            row["key_rate_point_to_point"] = k_ptp
            row["ratio"] = 100.0 * report.key_rate_bits / k_ptp if k_ptp > 0 else None
        except CVQKDError as e:
            error = f"{type(e).__name__}: {e}"
            logger.warning("Comparison cell (%s dB, %d ONUs) failed: %s", fiber_loss_db, n, error)
        for key, _ in COMPARE_PAYLOAD:
            row.setdefault(key, None)
        row["flags"] = "" if k_ptp > 0 else "ratio_undefined"
        row["error"] = error
        rows.append(row)

    columns = (AXIS_FIBER_LOSS, AXIS_ONUS, *COMPARE_PAYLOAD, FLAGS, ERROR)
    inputs = {"fiber_loss_db": float(fiber_loss_db), "onu_counts": list(onus)}
    metadata = build_metadata("compare", base_params.to_dict(), inputs)
    return SweepResult("compare", columns, rows, metadata)


# ---------------------------------------------------------------------------
# Optimal modulation variance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimumResult:
    """Maximizing modulation variance (SNU) and its key rate (bits/symbol)."""

    v_mod: float
    key_rate: float
    fallback: bool = False
    at_bracket_edge: bool = False

    @property
    def flags(self) -> List[str]:
        flags = []
        if self.fallback:
            flags.append("fine_grid_fallback")
        if self.at_bracket_edge:
            flags.append("at_bracket_edge")
        return flags


def _interior_maxima(values: np.ndarray) -> int:
    inner = values[1:-1]
    return int(np.sum((inner > values[:-2]) & (inner > values[2:])))


def optimal_modulation_variance(
    params: ProtocolParams,
    bracket: Tuple[float, float] = DEFAULT_BRACKET,
    xtol: float = OPTIMUM_XTOL,
) -> OptimumResult:
    """
    Modulation variance maximizing the raw key rate.

    A 64-point log-spaced scan over ``bracket`` locates the peak and checks that
    the profile has a single interior maximum; golden-section search then
    refines the peak to ``xtol`` SNU. A multi-peaked profile falls back to a
    1024-point grid search and is flagged.

    Args:
        params: Link parameters; ``V`` is ignored.
        bracket: (lowest, highest) V_mod in SNU, both > 0.
        xtol: Absolute tolerance on V_mod.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 < lo < hi:
        raise ConfigError(f"bracket must satisfy 0 < low < high, got ({lo}, {hi})")

    def rate(v_mod: float) -> float:
        return secret_key_rate(params.with_modulation_variance(v_mod)).key_rate_bits

    scan = np.geomspace(lo, hi, COARSE_POINTS)
    values = np.array([rate(v) for v in scan])
    peaks = _interior_maxima(values)
    best = int(np.argmax(values))

    if peaks > 1:
        logger.warning(
            "Key rate profile has %d interior maxima for %d ONUs at %s km; using grid search",
            peaks,
            params.n_onus,
            params.distance_km,
        )
        return _grid_optimum(rate, lo, hi)
    if best == 0 or best == COARSE_POINTS - 1:
        logger.info("Optimum at the bracket edge V_mod = %.6g", scan[best])
        return OptimumResult(float(scan[best]), float(values[best]), at_bracket_edge=True)

    center = scan[best]
    try:
        result = optimize.minimize_scalar(
            lambda v: -rate(v),
            bracket=(scan[best - 1], center, scan[best + 1]),
            method="golden",
            options={"xtol": xtol / (2.0 * center)},
        )
    except ValueError as e:
        logger.warning("Golden-section bracket rejected (%s); using grid search", e)
        return _grid_optimum(rate, lo, hi)

    logger.debug("V_mod* = %.9g after %d evaluations", result.x, result.nfev)
    return OptimumResult(float(result.x), float(-result.fun))


def _grid_optimum(rate: Callable[[float], float], lo: float, hi: float) -> OptimumResult:
    grid = np.geomspace(lo, hi, FINE_POINTS)
    values = np.array([rate(v) for v in grid])
    best = int(np.argmax(values))
    return OptimumResult(float(grid[best]), float(values[best]), fallback=True)


OPTIMUM_PAYLOAD: Tuple[Column, ...] = (
    ("optimal_modulation_variance", "SNU"),
    ("optimal_key_rate", "bits/symbol"),
)


def _optimum_cell(params: ProtocolParams, bracket: Tuple[float, float]) -> Dict[str, Any]:
    result = optimal_modulation_variance(params, bracket)
    return {
        "optimal_modulation_variance": result.v_mod,
        "optimal_key_rate": result.key_rate,
        "flags": result.flags,
    }


def optimum_grid(
    grid: SweepGrid,
    bracket: Tuple[float, float] = DEFAULT_BRACKET,
    threads: Optional[Union[int, str]] = None,
) -> SweepResult:
    """Optimal modulation variance for every cell of ``grid``."""
    bracket = (float(bracket[0]), float(bracket[1]))
    func = functools.partial(_optimum_cell, bracket=bracket)
    inputs = {"bracket": list(bracket)}
    return _run_grid("optimize", grid, func, OPTIMUM_PAYLOAD, inputs, threads)
