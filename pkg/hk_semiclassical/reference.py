"""Reference propagators: exact Gaussian evolution and split-operator Fourier."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from hk_semiclassical.classical_flow import (
    DEFAULT_STEPS_PER_UNIT_TIME,
    EnsembleState,
    PhasePoint,
    default_steps,
    integrate_ensemble,
)
from hk_semiclassical.coherent import (
    DEFAULT_COVERAGE_TARGET,
    DEFAULT_DENSITY,
    FLAG_COVERAGE,
    MASS_THRESHOLD,
    BranchTracker,
    SiegelMatrix,
    WaveFunction,
    build_quadrature,
    fb_transform,
    gamma_update_blocks,
    synthesize,
)
from hk_semiclassical.exceptions import (
    AliasingError,
    BoundaryError,
    BranchAmbiguityError,
    ModelError,
    ReferenceSolverError,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from hk_semiclassical.coherent import PhaseGrid, PositionGrid
    from hk_semiclassical.hamiltonians import HamiltonianModel

logger = logging.getLogger(__name__)

QUADRATIC_TOLERANCE = 1e-12
EDGE_FRACTION = 0.05
SPECTRAL_EDGE_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class GaussianState:
    """amplitude·(πħ)^{-d/4} exp(i/ħ (p·x − p·q/2) + i/2ħ Γ(x−q)·(x−q))."""

    center: PhasePoint
    width: SiegelMatrix
    amplitude: complex
    hbar: float

    def to_wavefunction(self, grid: PositionGrid) -> WaveFunction:
        """Sample the state on `grid`."""
        values = synthesize(
            np.array([self.amplitude / self.width.normalization]),
            self.center.vector[None, :],
            self.width.entries,
            self.hbar,
            grid,
        )
        return WaveFunction(grid, values, self.hbar)


def _constant_subprincipal(model: HamiltonianModel) -> float:
    if model.subprincipal is None:
        return 0.0
    samples = model.subprincipal(0.0, np.zeros((2, 2 * model.dim)) + np.array([[0.0], [1.0]]))
    if not np.allclose(samples, samples[0]):
        msg = "Reference solvers only support a constant subprincipal term"
        raise ReferenceSolverError(msg)
    return float(samples[0])


def _require_quadratic(model: HamiltonianModel, t0: float, t: float) -> None:
    """Reject models whose Hessian differs between two sample points."""
    points = np.stack([np.zeros(2 * model.dim), np.linspace(0.7, 1.3, 2 * model.dim)])
    for time in {t0, t}:
        hessians = model.hessian(time, points)
        if np.max(np.abs(hessians[0] - hessians[1])) > QUADRATIC_TOLERANCE * max(
            1.0, float(np.max(np.abs(hessians)))
        ):
            msg = f"Model {model.kind!r} is not quadratic: Hessian depends on the phase point"
            raise ModelError(msg)


def _evolve_quadratic(
    model: HamiltonianModel,
    centers: NDArray[np.float64],
    gamma0: SiegelMatrix,
    t0: float,
    t: float,
    steps: int,
):
    """Integrate centers and track det^{1/2}(A + Γ₀B) from 1 at t₀."""
    state = EnsembleState.initial(centers, t0)
    tracker = BranchTracker(np.ones(len(centers)))

    def observe(current: EnsembleState) -> None:
        A, B, _, _ = current.blocks()
        tracker.update(np.linalg.det(A + gamma0.entries @ B))

    try:
        final = integrate_ensemble(model, state, t, steps, observer=observe)
    except BranchAmbiguityError as ex:
        msg = f"det(A + ΓB) branch lost with {steps} steps; increase steps_per_unit_time"
        raise ReferenceSolverError(msg) from ex
    return final, tracker.roots


def exact_quadratic_coherent(
    model: HamiltonianModel,
    z: PhasePoint,
    gamma0: SiegelMatrix,
    t: float,
    hbar: float,
    t0: float = 0.0,
    steps: int | None = None,
) -> GaussianState:
    """Exact evolution of φ_z^{Γ₀} under a quadratic Hamiltonian.

    The amplitude is e^{iδ/ħ}·e^{−iH₁(t−t₀)}·a_{Γ₀}·det^{-1/2}(A + Γ₀B) with
    δ = S + (p·q − p_t·q_t)/2 and the square root continued from 1.

    Raises:
        ModelError: If the model is not quadratic.
    """
    _require_quadratic(model, t0, t)
    if t == t0:
        return GaussianState(center=z, width=gamma0, amplitude=complex(gamma0.normalization), hbar=hbar)

    steps = steps or default_steps(t0, t)
    final, roots = _evolve_quadratic(model, z.vector[None, :], gamma0, t0, t, steps)
    member = final.member(0)
    width = SiegelMatrix(gamma_update_blocks(member.A, member.B, member.C, member.D, gamma0.entries))
    delta = member.action + 0.5 * (z.p @ z.q - member.z.p @ member.z.q)
    phase = delta / hbar - _constant_subprincipal(model) * (t - t0)
    amplitude = np.exp(1j * phase) * gamma0.normalization / roots[0]
    return GaussianState(center=member.z, width=width, amplitude=complex(amplitude), hbar=hbar)


def exact_quadratic_apply(
    model: HamiltonianModel,
    psi0: WaveFunction,
    t: float,
    gamma_decomp: SiegelMatrix | None = None,
    t0: float = 0.0,
    phase_grid: PhaseGrid | None = None,
    coverage_target: float = DEFAULT_COVERAGE_TARGET,
    density: float = DEFAULT_DENSITY,
    steps_per_unit_time: int = DEFAULT_STEPS_PER_UNIT_TIME,
) -> WaveFunction:
    """Exact quadratic propagation by FB decomposition and per-node Gaussian evolution.

    Args:
        model: Quadratic model.
        psi0: Initial state.
        t: Final time.
        gamma_decomp: Width of the decomposition; iI when omitted.
        t0: Initial time.
        phase_grid: Fixed quadrature; built from ψ0 when omitted.
        coverage_target: Coverage target for the built quadrature.
        density: Nodes per √ħ per axis for the built quadrature.
        steps_per_unit_time: RK4 step density.

    Returns:
        The propagated state on ψ0's grid.
    """
    _require_quadratic(model, t0, t)
    dim = psi0.grid.dim
    gamma = gamma_decomp or SiegelMatrix.identity(dim)
    hbar = psi0.hbar
    zgrid = phase_grid or build_quadrature(psi0, gamma, coverage_target, density)
    coefficients = fb_transform(psi0, gamma, zgrid)
    flags: frozenset[str] = frozenset()
    if zgrid.coverage < zgrid.coverage_target:
        logger.warning("Phase grid coverage %.12f is below target", zgrid.coverage)
        flags = frozenset({FLAG_COVERAGE})

    nodes = zgrid.nodes
    steps = default_steps(t0, t, steps_per_unit_time)
    if t == t0:
        centers, width, amplitudes = nodes, gamma, np.ones(zgrid.size, dtype=complex)
    else:
        final, roots = _evolve_quadratic(model, nodes, gamma, t0, t, steps)
        A, B, C, D = final.blocks()
        width = SiegelMatrix(gamma_update_blocks(A[0], B[0], C[0], D[0], gamma.entries))
        q, p = nodes[:, :dim], nodes[:, dim:]
        q_t, p_t = final.z[:, :dim], final.z[:, dim:]
        delta = final.action + 0.5 * (np.sum(p * q, axis=1) - np.sum(p_t * q_t, axis=1))
        phase = delta / hbar - _constant_subprincipal(model) * (t - t0)
        amplitudes = np.exp(1j * phase) * gamma.normalization / (roots * width.normalization)
        centers = final.z

    weights = (2.0 * math.pi * hbar) ** (-0.5 * dim) * zgrid.weights * coefficients * amplitudes
    values = synthesize(weights, centers, width.entries, hbar, psi0.grid)
    return WaveFunction(psi0.grid, values, hbar, flags)


class SplitStepSolver:
    """Strang splitting e^{−iV dt/2ħ} e^{−iT dt/ħ} e^{−iV dt/2ħ} on a periodic grid."""

    def __init__(
        self,
        model: HamiltonianModel,
        grid: PositionGrid,
        hbar: float,
        mass_threshold: float = MASS_THRESHOLD,
    ) -> None:
        """Tabulate V on the grid and T on the discrete momenta ξ_k = 2πħk/L.

        Raises:
            ReferenceSolverError: If the model has no split form.
        """
        if model.split_form is None:
            msg = f"Model {model.kind!r} has no split form T(ξ) + V(x)"
            raise ReferenceSolverError(msg)
        if grid.dim != model.dim:
            msg = f"Grid dimension {grid.dim} does not match model dimension {model.dim}"
            raise ReferenceSolverError(msg)
        self.model = model
        self.grid = grid
        self.hbar = hbar
        self.mass_threshold = mass_threshold
        self.potential = model.split_form.potential(grid.points()).reshape(grid.shape)
        frequencies = [2.0 * math.pi * hbar * np.fft.fftfreq(n, h) for n, h in zip(grid.shape, grid.spacing)]
        momenta = np.stack(np.meshgrid(*frequencies, indexing="ij"), axis=-1)
        self.kinetic = model.split_form.kinetic(momenta)
        self.subprincipal = _constant_subprincipal(model)
        self._edge = self._edge_mask(grid.shape, EDGE_FRACTION)
        self._spectral_edge = self._spectral_mask(grid.shape, SPECTRAL_EDGE_FRACTION)

    @staticmethod
    def _edge_mask(shape, fraction):
        mask = np.zeros(shape, dtype=bool)
        for axis, n in enumerate(shape):
            width = max(1, int(fraction * n))
            index = [slice(None)] * len(shape)
            index[axis] = slice(0, width)
            mask[tuple(index)] = True
            index[axis] = slice(n - width, n)
            mask[tuple(index)] = True
        return mask

    @staticmethod
    def _spectral_mask(shape, fraction):
        mask = np.zeros(shape, dtype=bool)
        for axis, n in enumerate(shape):
            frequency = np.abs(np.fft.fftfreq(n))
            outer = frequency >= 0.5 - fraction
            index = [None] * len(shape)
            index[axis] = slice(None)
            mask |= np.broadcast_to(outer[tuple(index)], shape)
        return mask

    def check(self, values: NDArray[np.complex128]) -> None:
        """Raise if mass reaches the box edge or the spectral tail."""
        density = np.abs(values) ** 2
        total = float(np.sum(density))
        if total == 0:
            return
        edge = float(np.sum(density[self._edge])) / total
        if edge > self.mass_threshold:
            msg = f"Wavepacket reached the box boundary (edge mass fraction {edge:.3g})"
            raise BoundaryError(msg)
        spectrum = np.abs(np.fft.fftn(values)) ** 2
        tail = float(np.sum(spectrum[self._spectral_edge]) / np.sum(spectrum))
        if tail > self.mass_threshold:
            msg = f"Spectral tail mass {tail:.3g} exceeds threshold; refine the grid"
            raise AliasingError(msg)

    def evolve(self, values: NDArray[np.complex128], duration: float, steps: int) -> NDArray[np.complex128]:
        """Advance grid-shaped samples by `duration` in `steps` Strang steps."""
        if steps < 1:
            msg = f"steps must be at least 1, got {steps}"
            raise ValueError(msg)
        if duration == 0:
            return values.copy()
        dt = duration / steps
        half_potential = np.exp(-0.5j * dt * self.potential / self.hbar)
        full_potential = half_potential * half_potential
        kinetic = np.exp(-1j * dt * self.kinetic / self.hbar)

        psi = half_potential * values
        for step in range(steps):
            psi = np.fft.ifftn(kinetic * np.fft.fftn(psi))
            psi = (half_potential if step == steps - 1 else full_potential) * psi
        return psi * np.exp(-1j * self.subprincipal * duration)


def split_step_series(
    model: HamiltonianModel,
    psi0: WaveFunction,
    times: Sequence[float],
    t0: float = 0.0,
    steps_per_unit_time: int = DEFAULT_STEPS_PER_UNIT_TIME,
    mass_threshold: float = MASS_THRESHOLD,
) -> list[WaveFunction]:
    """Split-step propagation through nondecreasing sample times in one pass.

    Raises:
        AliasingError: If the spectral tail exceeds `mass_threshold` of the mass.
        BoundaryError: If more than `mass_threshold` of the mass reaches the box edge.
    """
    times = [float(t) for t in times]
    if any(b < a for a, b in zip([t0, *times], times)):
        msg = f"Times must be nondecreasing from t0={t0}, got {times}"
        raise ValueError(msg)
    solver = SplitStepSolver(model, psi0.grid, psi0.hbar, mass_threshold)
    values = psi0.values.reshape(psi0.grid.shape)
    solver.check(values)

    results = []
    current = t0
    for t in times:
        if t > current:
            values = solver.evolve(values, t - current, default_steps(current, t, steps_per_unit_time))
            solver.check(values)
        results.append(psi0.with_values(values.ravel()))
        current = t
    return results


def split_step_propagate(
    model: HamiltonianModel,
    psi0: WaveFunction,
    t: float,
    steps: int | None = None,
    t0: float = 0.0,
    mass_threshold: float = MASS_THRESHOLD,
) -> WaveFunction:
    """Split-step propagation of ψ0 from t0 to t with `steps` Strang steps."""
    solver = SplitStepSolver(model, psi0.grid, psi0.hbar, mass_threshold)
    values = psi0.values.reshape(psi0.grid.shape)
    solver.check(values)
    if t == t0:
        return psi0.with_values(psi0.values.copy())
    values = solver.evolve(values, t - t0, steps or default_steps(t0, t))
    solver.check(values)
    return psi0.with_values(values.ravel())
