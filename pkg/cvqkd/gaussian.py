"""
Gaussian-state algebra in shot-noise units.

Covariance matrices use xpxp ordering: mode ``k`` occupies rows and columns
``2k`` and ``2k + 1``, and the vacuum has unit quadrature variance.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import block_diag

from .errors import (
    ArgumentError,
    DegenerateMeasurementError,
    DomainError,
    UnphysicalStateError,
)

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
PHYSICALITY_TOL = 1e-9
UNPHYSICAL_TOL = 1e-6
PURITY_TOL = 1e-12

OMEGA_1 = np.array([[0.0, 1.0], [-1.0, 0.0]])
SIGMA_Z = np.diag([1.0, -1.0])
IDENTITY_2 = np.eye(2)

# Single-mode homodyne projectors
PROJECTORS: Dict[str, np.ndarray] = {
    "x": np.diag([1.0, 0.0]),
    "p": np.diag([0.0, 1.0]),
}

ModeRef = Union[int, str]


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """
    Labeled 2N x 2N real symmetric covariance matrix.

    Instances are immutable: the entry array is copied on construction and
    marked read-only, so they can be shared freely between workers.

    Args:
        entries: Real symmetric matrix in shot-noise units, xpxp ordering.
        labels: One name per mode, e.g. ``("A", "C1", "D2")``.
    """

    entries: np.ndarray
    labels: Tuple[str, ...]

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] % 2:
            raise ArgumentError(
                f"Covariance matrix must be square with even dimension, got shape {entries.shape}"
            )
        labels = tuple(str(label) for label in self.labels)
        if len(labels) != entries.shape[0] // 2:
            raise ArgumentError(
                f"Expected {entries.shape[0] // 2} mode labels, got {len(labels)}: {labels}"
            )
        if len(set(labels)) != len(labels):
            raise ArgumentError(f"Mode labels must be unique, got {labels}")

        scale = np.maximum(1.0, np.abs(entries))
        if np.any(np.abs(entries - entries.T) > SYMMETRY_TOL * scale):
            raise DomainError("Covariance matrix is not symmetric")
        entries = 0.5 * (entries + entries.T)
        entries.flags.writeable = False

        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "labels", labels)

    @property
    def n_modes(self) -> int:
        return len(self.labels)

    def index(self, mode: ModeRef) -> int:
        """Resolve a mode label or integer position to a mode index."""
        if isinstance(mode, str):
            try:
                return self.labels.index(mode)
            except ValueError:
                raise ArgumentError(f"Unknown mode label {mode!r}; modes are {self.labels}")
        index = int(mode)
        if not 0 <= index < self.n_modes:
            raise ArgumentError(f"Mode index {index} out of range for {self.n_modes} modes")
        return index

    def block(self, row: ModeRef, col: ModeRef) -> np.ndarray:
        """Return the 2x2 block between two modes."""
        i, j = self.index(row), self.index(col)
        return np.array(self.entries[2 * i : 2 * i + 2, 2 * j : 2 * j + 2])

    def reduced(self, modes: Sequence[ModeRef]) -> "CovarianceMatrix":
        """Return the marginal state of the given modes, in the given order."""
        indices = [self.index(mode) for mode in modes]
        if len(set(indices)) != len(indices):
            raise ArgumentError(f"Repeated modes in {list(modes)}")
        rows = _quadrature_indices(indices)
        return CovarianceMatrix(
            self.entries[np.ix_(rows, rows)], tuple(self.labels[i] for i in indices)
        )

    def relabel(self, mapping: Dict[str, str]) -> "CovarianceMatrix":
        return CovarianceMatrix(
            self.entries, tuple(mapping.get(label, label) for label in self.labels)
        )

    def allclose(self, other: "CovarianceMatrix", atol: float = 1e-12) -> bool:
        return self.labels == other.labels and bool(
            np.allclose(self.entries, other.entries, rtol=0.0, atol=atol)
        )

    def render(self) -> str:
        """Canonical plain-text rendering with 12 significant digits."""
        lines = ["modes: " + " ".join(self.labels)]
        for row in self.entries:
            lines.append(" ".join(f"{value + 0.0:.12g}" for value in row))
        return "\n".join(lines) + "\n"

    def __repr__(self) -> str:
        return f"CovarianceMatrix(labels={self.labels})"


def _quadrature_indices(modes: Iterable[int]) -> list:
    return [q for mode in modes for q in (2 * mode, 2 * mode + 1)]


def symplectic_form(n_modes: int) -> np.ndarray:
    """Block-diagonal symplectic form with per-mode blocks [[0, 1], [-1, 0]]."""
    if n_modes < 1:
        raise ArgumentError(f"n_modes must be positive, got {n_modes}")
    return block_diag(*([OMEGA_1] * n_modes))


def vacuum(labels: Sequence[str]) -> CovarianceMatrix:
    return CovarianceMatrix(np.eye(2 * len(labels)), tuple(labels))


def thermal(nu: float, label: str = "A") -> CovarianceMatrix:
    """Single-mode thermal state with quadrature variance ``nu``."""
    if nu < 1:
        raise DomainError(f"Thermal variance must be >= 1, got {nu}")
    return CovarianceMatrix(nu * IDENTITY_2, (label,))


def direct_sum(first: CovarianceMatrix, second: CovarianceMatrix) -> CovarianceMatrix:
    return CovarianceMatrix(
        block_diag(first.entries, second.entries), first.labels + second.labels
    )


def two_mode_squeezed(V: float, labels: Tuple[str, str] = ("A", "B")) -> CovarianceMatrix:
    """
    Two-mode squeezed vacuum (EPR state) of variance ``V``.

    Args:
        V: EPR variance in shot-noise units, ``V >= 1``.
        labels: Names of the two modes.

    Returns:
        CovarianceMatrix: Diagonal blocks ``V * I``, off-diagonal blocks
        ``sqrt(V^2 - 1) * sigma_z``.

    Example:
        >>> two_mode_squeezed(5.0).block("A", "B")
        array([[ 4.89897949,  0.        ],
               [ 0.        , -4.89897949]])
    """
    if not V >= 1:
        raise DomainError(f"EPR variance V must be >= 1, got {V}")
    corr = np.sqrt(V * V - 1.0) * SIGMA_Z
    entries = np.block([[V * IDENTITY_2, corr], [corr, V * IDENTITY_2]])
    return CovarianceMatrix(entries, tuple(labels))


def _check_transmissivity(eta: float) -> None:
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"Beamsplitter transmissivity must lie in [0, 1], got {eta}")


def beamsplitter_symplectic(eta: float) -> np.ndarray:
    """Beamsplitter matrix Y_eta acting on (signal, ancilla)."""
    _check_transmissivity(eta)
    t, r = np.sqrt(eta), np.sqrt(1.0 - eta)
    return np.block([[t * IDENTITY_2, r * IDENTITY_2], [-r * IDENTITY_2, t * IDENTITY_2]])


def beamsplitter_transform(
    gamma: CovarianceMatrix, mode_index: ModeRef, eta: float, ancilla_label: str
) -> CovarianceMatrix:
    """
    Mix one mode with a fresh vacuum ancilla on a beamsplitter.

    The ancilla is appended as the last mode. The transmitted signal keeps the
    position and label of ``mode_index``.

    Args:
        gamma: Input state.
        mode_index: Mode (index or label) entering the signal port.
        eta: Power transmissivity in [0, 1].
        ancilla_label: Label of the appended ancilla mode.

    Returns:
        CovarianceMatrix: State with ``gamma.n_modes + 1`` modes.
    """
    Y = beamsplitter_symplectic(eta)
    signal = gamma.index(mode_index)
    n = gamma.n_modes

    extended = block_diag(gamma.entries, IDENTITY_2)
    S = np.eye(2 * n + 2)
    ports = [2 * signal, 2 * signal + 1, 2 * n, 2 * n + 1]
    S[np.ix_(ports, ports)] = Y

    return CovarianceMatrix(S @ extended @ S.T, gamma.labels + (ancilla_label,))


def symplectic_eigenvalues(gamma: CovarianceMatrix) -> np.ndarray:
    """
    Symplectic eigenvalues of ``gamma``, sorted descending.

    Computed as the moduli of the eigenvalues of ``i * Omega * gamma``, which
    come in +/- pairs. Values within PHYSICALITY_TOL below 1 are clamped to 1.

    Raises:
        UnphysicalStateError: If any eigenvalue is below ``1 - UNPHYSICAL_TOL``.
    """
    omega = symplectic_form(gamma.n_modes)
    moduli = np.sort(np.abs(np.linalg.eigvals(1j * omega @ gamma.entries)))[::-1]
    nus = moduli[::2]

    lowest = float(nus.min())
    if lowest < 1.0 - UNPHYSICAL_TOL:
        raise UnphysicalStateError(
            f"Symplectic eigenvalue {lowest:.12g} < 1 for modes {gamma.labels}: "
            "state violates the uncertainty principle",
            nu=lowest,
        )
    clamp = (nus < 1.0) & (nus >= 1.0 - PHYSICALITY_TOL)
    return np.where(clamp, 1.0, nus)


def is_physical(gamma: CovarianceMatrix) -> bool:
    try:
        return bool(symplectic_eigenvalues(gamma).min() >= 1.0 - PHYSICALITY_TOL)
    except UnphysicalStateError:
        return False


def g(nu):
    """
    Entropy in bits of a thermal mode with symplectic eigenvalue ``nu``.

    g(x) = ((x+1)/2) log2((x+1)/2) - ((x-1)/2) log2((x-1)/2), with g(1) = 0.
    Accepts scalars or arrays.
    """
    x = np.atleast_1d(np.asarray(nu, dtype=float))
    out = np.zeros_like(x)
    mixed = x > 1.0 + PURITY_TOL
    plus = (x[mixed] + 1.0) / 2.0
    minus = (x[mixed] - 1.0) / 2.0
    out[mixed] = plus * np.log2(plus) - minus * np.log2(minus)
    if np.ndim(nu) == 0:
        return float(out[0])
    return out


def von_neumann_entropy(gamma: CovarianceMatrix) -> float:
    """Von Neumann entropy of a Gaussian state, in bits."""
    return float(np.sum(g(symplectic_eigenvalues(gamma))))


def homodyne_condition(
    gamma: CovarianceMatrix, measured_mode: ModeRef, quadrature: str = "x"
) -> CovarianceMatrix:
    """
    Conditional state of the remaining modes after homodyning one mode.

    Implements ``gamma_rest - sigma (Pi gamma_m Pi)^MP sigma^T`` with the
    Moore-Penrose pseudo-inverse, as in the standard Schur-complement update.

    Args:
        gamma: Joint state with at least two modes.
        measured_mode: Mode (index or label) that is measured.
        quadrature: ``"x"`` or ``"p"``.

    Returns:
        CovarianceMatrix: Conditional state of the other modes, original order.
    """
    if quadrature not in PROJECTORS:
        raise ArgumentError(f"quadrature must be 'x' or 'p', got {quadrature!r}")
    if gamma.n_modes < 2:
        raise ArgumentError("Homodyne conditioning needs at least two modes")

    m = gamma.index(measured_mode)
    rest = [k for k in range(gamma.n_modes) if k != m]
    rest_rows = _quadrature_indices(rest)
    measured_rows = [2 * m, 2 * m + 1]

    gamma_rest = gamma.entries[np.ix_(rest_rows, rest_rows)]
    sigma = gamma.entries[np.ix_(rest_rows, measured_rows)]
    gamma_m = gamma.entries[np.ix_(measured_rows, measured_rows)]

    q = 0 if quadrature == "x" else 1
    if not gamma_m[q, q] > 0:
        raise DegenerateMeasurementError(
            f"Measured {quadrature}-variance of mode {gamma.labels[m]} is {gamma_m[q, q]}"
        )

    proj = PROJECTORS[quadrature]
    conditional = gamma_rest - sigma @ np.linalg.pinv(proj @ gamma_m @ proj) @ sigma.T
    return CovarianceMatrix(conditional, tuple(gamma.labels[k] for k in rest))


def reorder_modes(gamma: CovarianceMatrix, permutation: Sequence[ModeRef]) -> CovarianceMatrix:
    """
    Permute modes: position ``k`` of the result holds mode ``permutation[k]``.

    Raises:
        ArgumentError: If ``permutation`` is not a bijection on the modes.
    """
    try:
        order = [gamma.index(mode) for mode in permutation]
    except ArgumentError as e:
        raise ArgumentError(f"Invalid permutation {list(permutation)}: {e}")
    if sorted(order) != list(range(gamma.n_modes)):
        raise ArgumentError(
            f"Permutation {list(permutation)} is not a bijection on {gamma.n_modes} modes"
        )
    return gamma.reduced(order)
