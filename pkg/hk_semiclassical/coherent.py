"""Coherent states, the Fourier-Bargmann transform and phase-space quadrature."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import erfc

from hk_semiclassical.classical_flow import PhasePoint
from hk_semiclassical.exceptions import (
    BranchAmbiguityError,
    GridAdequacyError,
    QuadratureError,
    SiegelError,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

    from hk_semiclassical.classical_flow import FlowState

logger = logging.getLogger(__name__)

DEFINITENESS_TOLERANCE = 1e-12
MASS_THRESHOLD = 1e-10
DEFAULT_COVERAGE_TARGET = 1.0 - 1e-8
DEFAULT_DENSITY = 4.0
DEFAULT_MAX_RADIUS = 40.0
INITIAL_RADIUS = 2.0
RADIUS_GROWTH = 1.1
SYNTHESIS_CHUNK = 256

FLAG_COVERAGE = "coverage-below-target"


@dataclass(frozen=True, eq=False)
class SiegelMatrix:
    """Complex symmetric d×d matrix with positive-definite imaginary part."""

    entries: NDArray[np.complex128]

    def __post_init__(self) -> None:
        """Symmetrize and check the imaginary part."""
        entries = np.atleast_2d(np.asarray(self.entries, dtype=complex))
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:  # noqa: PLR2004
            msg = f"Siegel matrix must be square, got shape {entries.shape}"
            raise SiegelError(msg)
        if not np.all(np.isfinite(entries)):
            msg = "Siegel matrix has non-finite entries"
            raise SiegelError(msg)
        entries = 0.5 * (entries + entries.T)
        smallest = float(np.min(np.linalg.eigvalsh(entries.imag)))
        if smallest <= DEFINITENESS_TOLERANCE:
            msg = f"Im Γ must be positive definite, smallest eigenvalue is {smallest:g}"
            raise SiegelError(msg)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def identity(cls, dim: int) -> SiegelMatrix:
        """Γ = iI."""
        return cls(1j * np.eye(dim))

    @classmethod
    def scaled(cls, dim: int, scale: complex) -> SiegelMatrix:
        """Γ = scale·I; a real scale means Γ = i·scale·I."""
        if isinstance(scale, complex):
            return cls(scale * np.eye(dim))
        return cls(1j * float(scale) * np.eye(dim))

    @classmethod
    def parse(cls, value: object, dim: int) -> SiegelMatrix:
        """Build from a configuration value.

        Accepts a positive number s (Γ = i·s·I), `{"scale": s}`, a
        `{"re": ..., "im": ...}` object with scalar or d×d entries, or None
        for iI.
        """
        if value is None:
            return cls.identity(dim)
        if isinstance(value, (int, float)):
            return cls.scaled(dim, float(value))
        if isinstance(value, dict) and value.get("scale") is not None:
            return cls.scaled(dim, float(value["scale"]))
        if isinstance(value, dict):
            real = np.asarray(value.get("re") or 0.0, dtype=float)
            imag = np.asarray(value.get("im") or 1.0, dtype=float)
            if real.ndim == 0:
                real = real * np.eye(dim)
            if imag.ndim == 0:
                imag = imag * np.eye(dim)
            return cls(real + 1j * imag)
        msg = f"Cannot interpret {value!r} as a Siegel matrix"
        raise SiegelError(msg)

    @property
    def dim(self) -> int:
        """Matrix size d."""
        return self.entries.shape[0]

    @property
    def normalization(self) -> float:
        """a_Γ = det^{1/4} Im Γ."""
        return float(np.linalg.det(self.entries.imag)) ** 0.25

    def to_json(self) -> dict[str, list[list[float]]]:
        """Config-echo representation."""
        return {"re": self.entries.real.tolist(), "im": self.entries.imag.tolist()}


@dataclass(frozen=True, eq=False)
class PositionGrid:
    """Uniform tensor grid x = origin + k·spacing, k in [0, shape)."""

    origin: NDArray[np.float64]
    spacing: NDArray[np.float64]
    shape: tuple[int, ...]

    def __post_init__(self) -> None:
        """Normalize array types and check positivity."""
        origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        spacing = np.broadcast_to(np.asarray(self.spacing, dtype=float), origin.shape).copy()
        shape = tuple(int(n) for n in np.broadcast_to(np.asarray(self.shape), origin.shape))
        if np.any(spacing <= 0) or any(n < 2 for n in shape):  # noqa: PLR2004
            msg = f"Grid needs positive spacing and at least 2 points per axis, got {spacing}, {shape}"
            raise GridAdequacyError(msg)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_bounds(cls, lower: ArrayLike, upper: ArrayLike, points: int | Sequence[int]) -> PositionGrid:
        """Grid with `points` nodes per axis spanning [lower, upper] inclusive."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.broadcast_to(np.asarray(upper, dtype=float), lower.shape)
        counts = np.broadcast_to(np.asarray(points), lower.shape)
        if np.any(upper <= lower):
            msg = f"Grid upper bounds {upper} must exceed lower bounds {lower}"
            raise GridAdequacyError(msg)
        return cls(lower, (upper - lower) / (counts - 1), tuple(int(n) for n in counts))

    @property
    def dim(self) -> int:
        """Number of axes."""
        return len(self.shape)

    @property
    def size(self) -> int:
        """Total number of points."""
        return math.prod(self.shape)

    @property
    def upper(self) -> NDArray[np.float64]:
        """Last point along each axis."""
        return self.origin + self.spacing * (np.asarray(self.shape) - 1)

    @property
    def period(self) -> NDArray[np.float64]:
        """Length of the periodic extension used by spectral methods."""
        return self.spacing * np.asarray(self.shape)

    def axes(self) -> list[NDArray[np.float64]]:
        """Coordinates along each axis."""
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.shape)]

    def points(self) -> NDArray[np.float64]:
        """All points in C order, shape (size, d)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def weights(self) -> NDArray[np.float64]:
        """Trapezoid weights in C order."""
        return _tensor_weights(self.spacing, self.shape)

    def to_json(self) -> dict[str, list]:
        """Metadata for dumps and summaries."""
        return {
            "origin": self.origin.tolist(),
            "spacing": self.spacing.tolist(),
            "shape": list(self.shape),
        }


def _tensor_weights(spacing: NDArray[np.float64], shape: tuple[int, ...]) -> NDArray[np.float64]:
    weights = np.ones(())
    for h, n in zip(spacing, shape):
        axis = np.full(n, h)
        axis[[0, -1]] *= 0.5
        weights = np.multiply.outer(weights, axis)
    return weights.ravel()


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Complex samples on a position grid, flattened in C order."""

    grid: PositionGrid
    values: NDArray[np.complex128]
    hbar: float
    flags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        """Check shape, finiteness and ħ."""
        values = np.asarray(self.values, dtype=complex).ravel()
        if values.shape != (self.grid.size,):
            msg = f"Expected {self.grid.size} samples, got {values.shape}"
            raise GridAdequacyError(msg)
        if not np.all(np.isfinite(values)):
            msg = "Wavefunction has non-finite samples"
            raise GridAdequacyError(msg)
        if self.hbar <= 0:
            msg = f"hbar must be positive, got {self.hbar}"
            raise ValueError(msg)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "flags", frozenset(self.flags))

    def inner(self, other: WaveFunction) -> complex:
        """⟨self, other⟩ = Σ w·self·conj(other)."""
        return complex(np.sum(self.grid.weights() * self.values * np.conj(other.values)))

    def l2_norm(self) -> float:
        """Trapezoid L² norm."""
        return float(np.sqrt(np.sum(self.grid.weights() * np.abs(self.values) ** 2)))

    def l2_distance(self, other: WaveFunction) -> float:
        """‖self − other‖ on the shared grid."""
        return self.with_values(self.values - other.values).l2_norm()

    def with_values(self, values: ArrayLike, flags: frozenset[str] | None = None) -> WaveFunction:
        """Same grid and ħ, new samples."""
        return WaveFunction(self.grid, values, self.hbar, self.flags if flags is None else flags)

    def scaled(self, factor: complex) -> WaveFunction:
        """factor·ψ."""
        return self.with_values(factor * self.values)

    def __add__(self, other: WaveFunction) -> WaveFunction:
        """Pointwise sum."""
        return self.with_values(self.values + other.values, self.flags | other.flags)


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Tensor trapezoid quadrature for dz over a box in R^{2d}.

    Nodes are ordered in C order over the axes (q1..qd, p1..pd).
    """

    nodes: NDArray[np.float64]
    weights: NDArray[np.float64]
    coverage: float
    coverage_target: float
    center: NDArray[np.float64]
    half_widths: NDArray[np.float64]
    shape: tuple[int, ...]
    spacing: NDArray[np.float64]

    @classmethod
    def lattice(
        cls,
        center: ArrayLike,
        half_widths: ArrayLike,
        spacing: float | ArrayLike,
        coverage: float = 1.0,
        coverage_target: float = DEFAULT_COVERAGE_TARGET,
    ) -> PhaseGrid:
        """Trapezoid lattice on center ± half_widths with spacing at most `spacing`."""
        center = np.asarray(center, dtype=float)
        half_widths = np.broadcast_to(np.asarray(half_widths, dtype=float), center.shape)
        bound = np.broadcast_to(np.asarray(spacing, dtype=float), center.shape)
        counts = np.ceil(2.0 * half_widths / bound - 1e-9).astype(int) + 1
        counts = np.maximum(counts, 2)
        actual = 2.0 * half_widths / (counts - 1)
        axes = [c - r + h * np.arange(n) for c, r, h, n in zip(center, half_widths, actual, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        shape = tuple(int(n) for n in counts)
        return cls(
            nodes=np.stack([m.ravel() for m in mesh], axis=-1),
            weights=_tensor_weights(actual, shape),
            coverage=coverage,
            coverage_target=coverage_target,
            center=center,
            half_widths=half_widths.copy(),
            shape=shape,
            spacing=actual,
        )

    @property
    def dim(self) -> int:
        """Degrees of freedom d (nodes live in R^{2d})."""
        return self.nodes.shape[1] // 2

    @property
    def size(self) -> int:
        """Number of nodes."""
        return self.nodes.shape[0]

    @property
    def volume(self) -> float:
        """Box volume; equals the sum of weights."""
        return float(np.prod(2.0 * self.half_widths))

    def node(self, index: int) -> PhasePoint:
        """Node as a phase point."""
        return PhasePoint.from_vector(self.nodes[index])

    def boundary_mask(self) -> NDArray[np.bool_]:
        """True for nodes on a face of the box."""
        index = np.indices(self.shape).reshape(len(self.shape), -1).T
        return np.any((index == 0) | (index == np.asarray(self.shape) - 1), axis=1)


def gaussian_tail(
    mean: NDArray[np.float64],
    variance: NDArray[np.float64] | float,
    lower: NDArray[np.float64] | float,
    upper: NDArray[np.float64] | float,
) -> NDArray[np.float64]:
    """Mass of N(mean, variance) outside [lower, upper]."""
    scale = np.sqrt(2.0 * variance)
    return 0.5 * erfc((mean - lower) / scale) + 0.5 * erfc((upper - mean) / scale)


def _position_variance(gamma: SiegelMatrix, hbar: float) -> NDArray[np.float64]:
    """Per-axis variance of |φ^Γ|²: ħ/2·diag((Im Γ)^{-1})."""
    return 0.5 * hbar * np.diag(np.linalg.inv(gamma.entries.imag))


def _momentum_variance(gamma: SiegelMatrix, hbar: float) -> NDArray[np.float64]:
    """Per-axis variance of |φ̂^Γ|²: ħ/2·diag((−Im Γ^{-1})^{-1})."""
    precision = -np.linalg.inv(gamma.entries).imag
    return 0.5 * hbar * np.diag(np.linalg.inv(precision))


def coherent_values(
    q: NDArray[np.float64],
    p: NDArray[np.float64],
    widths: NDArray[np.complex128],
    hbar: float,
    x: NDArray[np.float64],
) -> NDArray[np.complex128]:
    """Sample φ_z^Γ for many centers at once.

    Args:
        q: Centers' positions, shape (n, d).
        p: Centers' momenta, shape (n, d).
        widths: Γ entries, shape (d, d) or (n, d, d).
        hbar: Planck constant.
        x: Evaluation points, shape (N, d).

    Returns:
        Array of shape (n, N).
    """
    dim = q.shape[1]
    widths = np.broadcast_to(widths, (q.shape[0], dim, dim))
    amplitude = (math.pi * hbar) ** (-0.25 * dim) * np.linalg.det(widths.imag) ** 0.25
    offset = x[None, :, :] - q[:, None, :]
    quadratic = np.einsum("nkd,nde,nke->nk", offset, widths, offset)
    linear = p @ x.T - 0.5 * np.sum(p * q, axis=1)[:, None]
    return amplitude[:, None] * np.exp((1j / hbar) * linear + (0.5j / hbar) * quadratic)


def _truncated_mass(
    q: NDArray[np.float64],
    p: NDArray[np.float64],
    gamma: SiegelMatrix,
    hbar: float,
    grid: PositionGrid,
) -> NDArray[np.float64]:
    """Union bound on the position mass outside the grid and the momentum mass beyond Nyquist."""
    position = gaussian_tail(q, _position_variance(gamma, hbar), grid.origin, grid.upper)
    nyquist = math.pi * hbar / grid.spacing
    momentum = gaussian_tail(p, _momentum_variance(gamma, hbar), -nyquist, nyquist)
    return np.sum(position, axis=-1) + np.sum(momentum, axis=-1)


def coherent_state(z: PhasePoint, gamma: SiegelMatrix, hbar: float, grid: PositionGrid) -> WaveFunction:
    """Sample φ_z^Γ(x) = (πħ)^{-d/4} a_Γ exp(i/ħ (p·x − p·q/2) + i/2ħ Γ(x−q)·(x−q)).

    Raises:
        GridAdequacyError: If the grid truncates more than 1e-10 of the mass
            in position or momentum.
    """
    if hbar <= 0:
        msg = f"hbar must be positive, got {hbar}"
        raise ValueError(msg)
    if grid.dim != z.dim or gamma.dim != z.dim:
        msg = f"Dimension mismatch: point {z.dim}, width {gamma.dim}, grid {grid.dim}"
        raise GridAdequacyError(msg)
    truncated = float(_truncated_mass(z.q, z.p, gamma, hbar, grid))
    if truncated > MASS_THRESHOLD:
        msg = f"Grid truncates mass {truncated:.3g} of the coherent state at q={z.q}, p={z.p}"
        raise GridAdequacyError(msg)
    values = coherent_values(z.q[None, :], z.p[None, :], gamma.entries, hbar, grid.points())[0]
    return WaveFunction(grid, values, hbar)


def fb_transform(psi: WaveFunction, gamma: SiegelMatrix, zgrid: PhaseGrid) -> NDArray[np.complex128]:
    """F_B ψ(z) = (2πħ)^{-d/2} ⟨ψ, φ_z^Γ⟩ at every node of `zgrid`.

    Raises:
        GridAdequacyError: If a node's coherent state is truncated by ψ's grid.
    """
    dim = zgrid.dim
    hbar = psi.hbar
    q, p = zgrid.nodes[:, :dim], zgrid.nodes[:, dim:]
    truncated = _truncated_mass(q, p, gamma, hbar, psi.grid)
    worst = int(np.argmax(truncated))
    if truncated[worst] > MASS_THRESHOLD:
        msg = (
            f"Coherent state at node {zgrid.nodes[worst].tolist()} is truncated by the "
            f"position grid (mass {truncated[worst]:.3g})"
        )
        raise GridAdequacyError(msg)

    x = psi.grid.points()
    weighted = psi.grid.weights() * psi.values
    result = np.empty(zgrid.size, dtype=complex)
    for start in range(0, zgrid.size, SYNTHESIS_CHUNK):
        stop = start + SYNTHESIS_CHUNK
        states = coherent_values(q[start:stop], p[start:stop], gamma.entries, hbar, x)
        result[start:stop] = np.conj(states) @ weighted
    return (2.0 * math.pi * hbar) ** (-0.5 * dim) * result


def synthesize(
    amplitudes: NDArray[np.complex128],
    centers: NDArray[np.float64],
    widths: NDArray[np.complex128],
    hbar: float,
    grid: PositionGrid,
) -> NDArray[np.complex128]:
    """Σ_n amplitudes[n]·φ_{centers[n]}^{widths[n]}(x) in a fixed node order.

    `widths` is (d, d) for a shared width or (n, d, d) per node.
    """
    dim = centers.shape[1] // 2
    x = grid.points()
    total = np.zeros(grid.size, dtype=complex)
    shared = widths.ndim == 2  # noqa: PLR2004
    for start in range(0, len(amplitudes), SYNTHESIS_CHUNK):
        stop = start + SYNTHESIS_CHUNK
        chunk = centers[start:stop]
        states = coherent_values(
            chunk[:, :dim],
            chunk[:, dim:],
            widths if shared else widths[start:stop],
            hbar,
            x,
        )
        total += amplitudes[start:stop] @ states
    return total


def fb_inverse(
    field: ArrayLike,
    gamma: SiegelMatrix,
    zgrid: PhaseGrid,
    grid: PositionGrid,
    hbar: float,
) -> WaveFunction:
    """Resynthesize (2πħ)^{-d/2} Σ_nodes w·field(z)·φ_z^Γ on `grid`.

    The result is flagged `coverage-below-target` when the phase grid did not
    reach its coverage target.
    """
    field = np.asarray(field, dtype=complex)
    flags: frozenset[str] = frozenset()
    if zgrid.coverage < zgrid.coverage_target:
        logger.warning(
            "Phase grid coverage %.12f is below target %.12f",
            zgrid.coverage,
            zgrid.coverage_target,
        )
        flags = frozenset({FLAG_COVERAGE})
    amplitudes = (2.0 * math.pi * hbar) ** (-0.5 * zgrid.dim) * zgrid.weights * field
    values = synthesize(amplitudes, zgrid.nodes, gamma.entries, hbar, grid)
    return WaveFunction(grid, values, hbar, flags)


def _marginals(psi: WaveFunction):
    """Position and momentum sample sets (coordinates, probability weights) of ψ."""
    grid = psi.grid
    position_weights = grid.weights() * np.abs(psi.values) ** 2

    spectrum = np.fft.fftn(psi.values.reshape(grid.shape))
    momentum_weights = np.abs(spectrum.ravel()) ** 2
    momentum_weights *= np.sum(position_weights) / np.sum(momentum_weights)
    frequencies = [
        2.0 * math.pi * psi.hbar * np.fft.fftfreq(n, h) for n, h in zip(grid.shape, grid.spacing)
    ]
    mesh = np.meshgrid(*frequencies, indexing="ij")
    momenta = np.stack([m.ravel() for m in mesh], axis=-1)
    return grid.points(), position_weights, momenta, momentum_weights


def _moments(points, weights):
    total = np.sum(weights)
    mean = weights @ points / total
    variance = weights @ (points - mean) ** 2 / total
    return mean, variance


def build_quadrature(
    psi0: WaveFunction,
    gamma: SiegelMatrix,
    coverage_target: float = DEFAULT_COVERAGE_TARGET,
    density: float = DEFAULT_DENSITY,
    max_radius: float = DEFAULT_MAX_RADIUS,
    rng: np.random.Generator | None = None,
) -> PhaseGrid:
    """Build a trapezoid phase grid capturing at least `coverage_target` of ψ0's FB norm.

    The box is centered on the marginal means. Its per-axis half-width is a
    multiple s of the Husimi marginal standard deviation, with s grown from 2
    by factors of 1.1 until the tail bound (a union over the 2d Husimi
    marginals) is at most (1 − target)²‖ψ0‖². Node spacing is at most
    √ħ/density.

    Args:
        psi0: State to decompose.
        gamma: Coherent-state width of the transform.
        coverage_target: Required captured norm fraction, in (0, 1).
        density: Nodes per √ħ per axis.
        max_radius: Largest admissible s.
        rng: When given, the whole lattice is shifted by one random offset.

    Raises:
        QuadratureError: If s would exceed `max_radius` or ψ0 vanishes.
    """
    if not 0.0 < coverage_target < 1.0:
        msg = f"coverage_target must lie in (0, 1), got {coverage_target}"
        raise ValueError(msg)
    if density <= 0:
        msg = f"density must be positive, got {density}"
        raise ValueError(msg)

    hbar = psi0.hbar
    x, x_weights, xi, xi_weights = _marginals(psi0)
    norm2 = float(np.sum(x_weights))
    if norm2 <= 0:
        msg = "Cannot build a quadrature for the zero state"
        raise QuadratureError(msg)

    q_mean, q_var = _moments(x, x_weights)
    p_mean, p_var = _moments(xi, xi_weights)
    window = np.concatenate([_position_variance(gamma, hbar), _momentum_variance(gamma, hbar)])
    center = np.concatenate([q_mean, p_mean])
    sigma = np.sqrt(np.concatenate([q_var, p_var]) + window)
    spacing = math.sqrt(hbar) / density
    if rng is not None:
        center = center + rng.uniform(-0.5 * spacing, 0.5 * spacing, size=center.shape)

    dim = psi0.grid.dim
    allowed = (1.0 - coverage_target) ** 2 * norm2

    def tail(half_widths):
        lower, upper = center - half_widths, center + half_widths
        total = 0.0
        for j in range(dim):
            total += x_weights @ gaussian_tail(x[:, j], window[j], lower[j], upper[j])
            total += xi_weights @ gaussian_tail(xi[:, j], window[dim + j], lower[dim + j], upper[dim + j])
        return float(total)

    radius = INITIAL_RADIUS
    while (mass := tail(radius * sigma)) > allowed:
        radius *= RADIUS_GROWTH
        if radius > max_radius:
            msg = (
                f"Coverage target {coverage_target} not reached within {max_radius} "
                f"standard deviations (tail mass {mass:.3g})"
            )
            raise QuadratureError(msg)

    coverage = 1.0 - math.sqrt(mass / norm2)
    zgrid = PhaseGrid.lattice(center, radius * sigma, spacing, coverage, coverage_target)
    logger.debug(
        "Phase grid: %d nodes, half-widths %s, coverage %.12f",
        zgrid.size,
        np.array2string(zgrid.half_widths, precision=4),
        coverage,
    )
    return zgrid


def gamma_update_blocks(A, B, C, D, gamma0: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """Vectorised (C + Γ₀D)(A + Γ₀B)^{-1} over a leading ensemble axis, symmetrized."""
    numerator = C + gamma0 @ D
    denominator = A + gamma0 @ B
    # X Y^{-1} = (Y^{-T} X^T)^T
    result = np.swapaxes(
        np.linalg.solve(np.swapaxes(denominator, -1, -2), np.swapaxes(numerator, -1, -2)),
        -1,
        -2,
    )
    return 0.5 * (result + np.swapaxes(result, -1, -2))


def gamma_update(state: FlowState, gamma0: SiegelMatrix) -> SiegelMatrix:
    """Γ_t = (C + Γ₀D)(A + Γ₀B)^{-1}.

    Raises:
        SiegelError: If Im Γ_t is not positive definite.
    """
    try:
        entries = gamma_update_blocks(state.A, state.B, state.C, state.D, gamma0.entries)
    except np.linalg.LinAlgError as ex:
        msg = f"A + ΓB is singular at t={state.t}"
        raise SiegelError(msg) from ex
    return SiegelMatrix(entries)


def overlap(X: ArrayLike, z: ArrayLike, hbar: float) -> NDArray[np.complex128]:
    """⟨φ_X, φ_z⟩ for Γ = iI: exp(−|X−z|²/4ħ + iσ(X, z)/2ħ), σ(X, z) = JX·z."""
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    dim = X.shape[-1] // 2
    qx, px = X[..., :dim], X[..., dim:]
    qz, pz = z[..., :dim], z[..., dim:]
    sigma = np.sum(px * qz - qx * pz, axis=-1)
    distance2 = np.sum((X - z) ** 2, axis=-1)
    return np.exp(-distance2 / (4.0 * hbar) + 0.5j * sigma / hbar)


class BranchTracker:
    """Square roots of a complex path w(t), continuous in t.

    Tracks the unwound argument of w; each update must rotate w by less than
    `max_rotation` or the step is reported as ambiguous.
    """

    def __init__(self, initial: ArrayLike, initial_root: ArrayLike | None = None, max_rotation: float = 0.5 * math.pi) -> None:
        """Start the path at `initial` with the principal root (or `initial_root`)."""
        self.previous = np.atleast_1d(np.asarray(initial, dtype=complex)).copy()
        if initial_root is None:
            self.phase = np.angle(self.previous)
        else:
            root = np.broadcast_to(np.asarray(initial_root, dtype=complex), self.previous.shape)
            self.phase = 2.0 * np.angle(root)
        self.max_rotation = max_rotation
        self.largest_rotation = 0.0

    @property
    def roots(self) -> NDArray[np.complex128]:
        """Current branch-continuous roots."""
        return np.sqrt(np.abs(self.previous)) * np.exp(0.5j * self.phase)

    @property
    def argument(self) -> NDArray[np.float64]:
        """Unwound argument of the current roots."""
        return 0.5 * self.phase

    def check(self, value: ArrayLike) -> float:
        """Largest per-member rotation from the current value to `value`."""
        value = np.asarray(value, dtype=complex)
        return float(np.max(np.abs(np.angle(value / self.previous)), initial=0.0))

    def update(self, value: ArrayLike) -> NDArray[np.complex128]:
        """Advance to `value` and return the continued roots.

        Raises:
            BranchAmbiguityError: If any member rotates by `max_rotation` or more.
        """
        value = np.asarray(value, dtype=complex)
        if np.any(value == 0):
            msg = "Square-root path passes through zero"
            raise BranchAmbiguityError(msg)
        rotation = np.angle(value / self.previous)
        largest = float(np.max(np.abs(rotation), initial=0.0))
        if largest >= self.max_rotation:
            msg = f"Determinant rotated by {largest:.3f} rad in one step"
            raise BranchAmbiguityError(msg)
        self.largest_rotation = max(self.largest_rotation, largest)
        self.phase = self.phase + rotation
        self.previous = value.copy()
        return self.roots
