"""Herman-Kluk prefactors, leading-order propagation and kernel diagnostics."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from hk_semiclassical.classical_flow import (
    DEFAULT_STEPS_PER_UNIT_TIME,
    EnsembleState,
    PhasePoint,
    TrajectoryRecord,
    default_steps,
    integrate_ensemble,
    integrate_flow,
)
from hk_semiclassical.coherent import (
    DEFAULT_COVERAGE_TARGET,
    DEFAULT_DENSITY,
    DEFAULT_MAX_RADIUS,
    FLAG_COVERAGE,
    BranchTracker,
    PhaseGrid,
    SiegelMatrix,
    WaveFunction,
    build_quadrature,
    coherent_state,
    coherent_values,
    fb_transform,
    gamma_update,
    gamma_update_blocks,
    gaussian_tail,
    synthesize,
)
from hk_semiclassical.exceptions import BranchAmbiguityError, SingularMatrixError

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

    from hk_semiclassical.classical_flow import FlowState
    from hk_semiclassical.coherent import PositionGrid
    from hk_semiclassical.hamiltonians import HamiltonianModel

logger = logging.getLogger(__name__)

SINGULAR_TOLERANCE = 1e-12
MAX_ROTATION = 0.5 * math.pi
DEFAULT_MAX_REFINEMENTS = 4
OUTPUT_TAIL_WARNING = 1e-6
SUPPORT_WARNING = 1e-3
KERNEL_NOISE_FLOOR = 1e-6


class ThetaMode(str, enum.Enum):
    """Choice of the output width Θ_t."""

    FROZEN_II = "frozen_iI"
    CONSTANT = "constant"
    THAWED = "thawed"


@dataclass(frozen=True)
class HKPrefactor:
    """Branch-continuous prefactor at one sample time."""

    value: complex
    det_arg: complex
    branch_phase: float
    t: float


@dataclass(frozen=True)
class QuadratureSettings:
    """Parameters of the phase-space quadrature built for each input state."""

    coverage_target: float = DEFAULT_COVERAGE_TARGET
    density: float = DEFAULT_DENSITY
    max_radius: float = DEFAULT_MAX_RADIUS
    jitter: bool = False
    seed: int | None = None

    def build(self, psi0: WaveFunction, gamma: SiegelMatrix) -> PhaseGrid:
        """Phase grid for `psi0` under these settings."""
        rng = np.random.default_rng(self.seed) if self.jitter else None
        return build_quadrature(
            psi0,
            gamma,
            coverage_target=self.coverage_target,
            density=self.density,
            max_radius=self.max_radius,
            rng=rng,
        )


def principal_det_sqrt(matrix: NDArray[np.complex128]) -> complex:
    """det^{1/2} as the product of principal roots of the eigenvalues."""
    return complex(np.prod(np.sqrt(np.linalg.eigvals(matrix).astype(complex))))


@dataclass(frozen=True, eq=False)
class HKConfig:
    """Leading-order HK configuration.

    `theta` is the constant output width (iI for frozen_iI) or, in thawed
    mode, the initial width Γ. `normalization` is fixed by `create` so that
    the propagator is the identity at t = t₀.
    """

    theta_mode: ThetaMode
    gamma: SiegelMatrix
    theta: SiegelMatrix
    normalization: complex
    quadrature: QuadratureSettings = field(default_factory=QuadratureSettings)
    order: int = 0
    max_refinements: int = DEFAULT_MAX_REFINEMENTS
    steps_per_unit_time: int = DEFAULT_STEPS_PER_UNIT_TIME

    @classmethod
    def create(
        cls,
        dim: int,
        theta_mode: ThetaMode | str = ThetaMode.FROZEN_II,
        gamma: SiegelMatrix | None = None,
        theta: SiegelMatrix | None = None,
        quadrature: QuadratureSettings | None = None,
        order: int = 0,
        max_refinements: int = DEFAULT_MAX_REFINEMENTS,
        steps_per_unit_time: int = DEFAULT_STEPS_PER_UNIT_TIME,
    ) -> HKConfig:
        """Validate the phase choice and calibrate the normalization.

        Args:
            dim: Degrees of freedom.
            theta_mode: Output width policy.
            gamma: Width Γ of the decomposition; iI when omitted.
            theta: Constant Θ for `constant` mode; defaults to Γ.
            quadrature: Phase-space quadrature settings.
            order: Amplitude order; only 0 is supported.
            max_refinements: Step doublings allowed for branch tracking.
            steps_per_unit_time: Base RK4 step density.

        Returns:
            A calibrated configuration.
        """
        if order != 0:
            msg = f"Only the leading order (0) is supported, got {order}"
            raise ValueError(msg)
        theta_mode = ThetaMode(theta_mode)
        gamma = gamma or SiegelMatrix.identity(dim)
        if gamma.dim != dim:
            msg = f"Γ has size {gamma.dim}, model has dimension {dim}"
            raise ValueError(msg)
        if theta_mode is ThetaMode.FROZEN_II:
            theta = SiegelMatrix.identity(dim)
        elif theta_mode is ThetaMode.THAWED or theta is None:
            theta = gamma

        m0 = np.conj(gamma.entries) - theta.entries
        determinant = complex(np.linalg.det(m0))
        normalization = principal_det_sqrt(1j * m0) / np.sqrt(determinant)
        logger.debug("Calibrated HK normalization %s for mode %s", normalization, theta_mode.value)
        return cls(
            theta_mode=theta_mode,
            gamma=gamma,
            theta=theta,
            normalization=complex(normalization),
            quadrature=quadrature or QuadratureSettings(),
            order=order,
            max_refinements=max_refinements,
            steps_per_unit_time=steps_per_unit_time,
        )

    @property
    def dim(self) -> int:
        """Degrees of freedom."""
        return self.gamma.dim

    def theta_entries(self, A, B, C, D) -> NDArray[np.complex128]:
        """Θ_t for a stack of stability blocks: (d, d) when constant, (n, d, d) when thawed."""
        if self.theta_mode is ThetaMode.THAWED:
            return gamma_update_blocks(A, B, C, D, self.gamma.entries)
        return self.theta.entries

    def to_json(self) -> dict:
        """Config-echo representation."""
        return {
            "theta_mode": self.theta_mode.value,
            "gamma": self.gamma.to_json(),
            "theta": self.theta.to_json(),
            "normalization": [self.normalization.real, self.normalization.imag],
            "order": self.order,
            "max_refinements": self.max_refinements,
            "steps_per_unit_time": self.steps_per_unit_time,
        }


def m_matrices(A, B, C, D, theta: NDArray[np.complex128], gamma: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """Vectorised M(Θ, Γ) = C + DΓ̄ − Θ(A + BΓ̄)."""
    gamma_bar = np.conj(gamma)
    return C + D @ gamma_bar - theta @ (A + B @ gamma_bar)


def m_matrix(state: FlowState, theta: SiegelMatrix, gamma: SiegelMatrix) -> NDArray[np.complex128]:
    """M(Θ, Γ) = C + DΓ̄ − Θ(A + BΓ̄) for one flow state.

    Raises:
        SingularMatrixError: If the smallest singular value is at most 1e-12.
    """
    matrix = m_matrices(state.A, state.B, state.C, state.D, theta.entries, gamma.entries)
    smallest = float(np.min(np.linalg.svd(matrix, compute_uv=False)))
    if smallest <= SINGULAR_TOLERANCE:
        msg = f"M(Θ, Γ) is singular at t={state.t} (smallest singular value {smallest:.3g})"
        raise SingularMatrixError(msg)
    return matrix


def frozen_det_arg(state: FlowState) -> complex:
    """det(A + D + i(C − B)) = det(i·M_t) for Θ = Γ = iI."""
    return complex(np.linalg.det(state.A + state.D + 1j * (state.C - state.B)))


def _track_path(
    traj: TrajectoryRecord,
    model: HamiltonianModel | None,
    max_refinements: int,
    evaluate: Callable[[FlowState], tuple[complex, complex]],
    scale: complex,
) -> list[HKPrefactor]:
    """Follow sqrt(w(t)) continuously along `traj`, refining the trajectory on large rotations.

    `evaluate` returns (w, det_arg) for a sample; the value reported is
    scale·sqrt(w) with the principal root at t₀.
    """
    steps = max(1, len(traj.samples) - 1)
    for refinement in range(max_refinements + 1):
        first, first_arg = evaluate(traj.samples[0])
        tracker = BranchTracker(first, max_rotation=MAX_ROTATION)
        path = [(traj.samples[0].t, first_arg, tracker.roots[0], tracker.argument[0])]
        ambiguous = False
        for state in traj.samples[1:]:
            w, det_arg = evaluate(state)
            if tracker.check(w) >= MAX_ROTATION:
                ambiguous = True
                break
            root = tracker.update(w)[0]
            path.append((state.t, det_arg, root, tracker.argument[0]))
        if not ambiguous:
            offset = float(np.angle(scale))
            return [
                HKPrefactor(value=complex(scale * root), det_arg=det_arg, branch_phase=offset + phase, t=t)
                for t, det_arg, root, phase in path
            ]
        if model is None or refinement == max_refinements:
            break
        steps *= 2
        logger.debug("Refining trajectory to %d steps for branch tracking", steps)
        traj = integrate_flow(model, traj.initial, traj.t0, traj.final.t, steps)

    msg = f"Prefactor branch is ambiguous after {max_refinements} refinements"
    raise BranchAmbiguityError(msg)


def hk_prefactor_frozen(
    traj: TrajectoryRecord,
    model: HamiltonianModel | None = None,
    max_refinements: int = DEFAULT_MAX_REFINEMENTS,
) -> list[HKPrefactor]:
    """Frozen (Θ = Γ = iI) prefactor det^{1/2}(A + D + i(C − B)), continuous from 2^{d/2}.

    This is det^{1/2}(i·M_t) for Θ = Γ = iI, so C − B carries the plus sign.

    Args:
        traj: Integrated trajectory.
        model: When given, the trajectory is re-integrated with doubled steps
            whenever the determinant rotates by π/2 or more in one step.
        max_refinements: Maximum number of step doublings.

    Returns:
        One prefactor per (possibly refined) trajectory sample.

    Raises:
        BranchAmbiguityError: If the branch cannot be followed.
    """

    def evaluate(state):
        det_arg = frozen_det_arg(state)
        return det_arg, det_arg

    return _track_path(traj, model, max_refinements, evaluate, 1.0)


def hk_prefactor_general(
    traj: TrajectoryRecord,
    cfg: HKConfig,
    model: HamiltonianModel | None = None,
) -> list[HKPrefactor]:
    """General prefactor normalization·det^{1/2} M(Θ_t, Γ), continuous from t₀.

    The value squares to det(i·M(Θ_t, Γ)), reported as `det_arg`.

    Raises:
        BranchAmbiguityError: If the branch cannot be followed.
        SingularMatrixError: If M becomes singular.
    """
    dim = cfg.dim

    def evaluate(state):
        if cfg.theta_mode is ThetaMode.THAWED:
            theta = gamma_update(state, cfg.gamma)
        else:
            theta = cfg.theta
        determinant = complex(np.linalg.det(m_matrix(state, theta, cfg.gamma)))
        return determinant, (1j) ** dim * determinant

    return _track_path(traj, model, cfg.max_refinements, evaluate, cfg.normalization)


class _RefinementNeededError(Exception):
    """Raised inside an ensemble observer when a step rotates too far."""


@dataclass(frozen=True, eq=False)
class NodeSnapshot:
    """Evolved quadrature nodes at one time."""

    t: float
    z: NDArray[np.float64]
    action: NDArray[np.float64]
    subprincipal_phase: NDArray[np.float64]
    roots: NDArray[np.complex128]
    theta: NDArray[np.complex128]
    min_abs_det: float


@dataclass(frozen=True, eq=False)
class HKResult:
    """Output of one HK propagation."""

    wavefunction: WaveFunction
    t: float
    node_count: int
    coverage: float
    output_coverage: float
    refinements: int
    phase_grid: PhaseGrid


class HKPropagator:
    """Leading-order HK propagator for one model and configuration."""

    def __init__(self, model: HamiltonianModel, config: HKConfig) -> None:
        """Initialize the propagator.

        Args:
            model: Hamiltonian model.
            config: Calibrated HK configuration.
        """
        if model.dim != config.dim:
            msg = f"Model dimension {model.dim} does not match configuration dimension {config.dim}"
            raise ValueError(msg)
        self.model = model
        self.config = config

    def phase_grid(self, psi0: WaveFunction) -> PhaseGrid:
        """Quadrature for `psi0` under the configured settings."""
        return self.config.quadrature.build(psi0, self.config.gamma)

    def evolve_nodes(
        self,
        nodes: NDArray[np.float64],
        t0: float,
        times: Sequence[float],
    ) -> tuple[list[NodeSnapshot], int]:
        """Integrate every node through `times`, tracking the prefactor branch.

        Returns:
            The snapshots at each time and the number of step doublings used.

        Raises:
            BranchAmbiguityError: If tracking still fails after the maximum
                number of refinements.
        """
        for refinement in range(self.config.max_refinements + 1):
            try:
                return self._evolve_nodes(nodes, t0, times, 2**refinement), refinement
            except _RefinementNeededError:
                logger.debug("Branch rotation too large, refining (%d)", refinement + 1)
        msg = f"Prefactor branch is ambiguous after {self.config.max_refinements} refinements"
        raise BranchAmbiguityError(msg)

    def _evolve_nodes(self, nodes, t0, times, factor):
        config = self.config
        gamma = config.gamma.entries

        def determinant(state: EnsembleState):
            A, B, C, D = state.blocks()
            theta = config.theta_entries(A, B, C, D)
            return theta, np.linalg.det(m_matrices(A, B, C, D, theta, gamma))

        state = EnsembleState.initial(nodes, t0)
        _, initial = determinant(state)
        tracker = BranchTracker(initial, max_rotation=MAX_ROTATION)
        smallest = [float(np.min(np.abs(initial)))]

        def observe(current: EnsembleState) -> None:
            _, value = determinant(current)
            if tracker.check(value) >= MAX_ROTATION:
                raise _RefinementNeededError
            tracker.update(value)
            smallest[0] = min(smallest[0], float(np.min(np.abs(value))))

        snapshots = []
        for t in times:
            steps = default_steps(state.t, t, config.steps_per_unit_time) * factor
            state = integrate_ensemble(self.model, state, t, steps, observer=observe)
            theta, _ = determinant(state)
            snapshots.append(
                NodeSnapshot(
                    t=float(t),
                    z=state.z.copy(),
                    action=state.action.copy(),
                    subprincipal_phase=state.subprincipal_phase.copy(),
                    roots=tracker.roots.copy(),
                    theta=np.array(theta, copy=True),
                    min_abs_det=smallest[0],
                )
            )
        return snapshots

    def amplitudes(
        self,
        snapshot: NodeSnapshot,
        nodes: NDArray[np.float64],
        hbar: float,
    ) -> NDArray[np.complex128]:
        """Per-node factor R·e^{iδ/ħ}·e^{−i∫H₁} multiplying ⟨ψ, φ_z⟩ in the synthesis."""
        dim = self.config.dim
        q, p = nodes[:, :dim], nodes[:, dim:]
        q_t, p_t = snapshot.z[:, :dim], snapshot.z[:, dim:]
        delta = snapshot.action + 0.5 * (np.sum(p * q, axis=1) - np.sum(p_t * q_t, axis=1))
        theta_norm = np.linalg.det(np.asarray(snapshot.theta).imag) ** 0.25
        prefactor = (
            self.config.normalization
            * snapshot.roots
            / (2.0 ** (0.5 * dim) * self.config.gamma.normalization * theta_norm)
        )
        return prefactor * np.exp(1j * delta / hbar - 1j * snapshot.subprincipal_phase)

    def synthesize(
        self,
        snapshot: NodeSnapshot,
        zgrid: PhaseGrid,
        coefficients: NDArray[np.complex128],
        hbar: float,
        grid: PositionGrid,
    ) -> tuple[NDArray[np.complex128], float]:
        """Sum the evolved coherent states; returns samples and the output-grid coverage."""
        dim = self.config.dim
        weights = (2.0 * math.pi * hbar) ** (-0.5 * dim) * zgrid.weights * coefficients
        amplitudes = weights * self.amplitudes(snapshot, zgrid.nodes, hbar)
        values = synthesize(amplitudes, snapshot.z, snapshot.theta, hbar, grid)

        theta = np.broadcast_to(snapshot.theta, (zgrid.size, dim, dim))
        variance = 0.5 * hbar * np.diagonal(np.linalg.inv(theta.imag), axis1=-2, axis2=-1)
        tails = np.sum(gaussian_tail(snapshot.z[:, :dim], variance, grid.origin, grid.upper), axis=1)
        magnitude = np.abs(amplitudes)
        total = float(np.sum(magnitude))
        output_coverage = 1.0 if total == 0 else 1.0 - float(magnitude @ tails) / total
        if 1.0 - output_coverage > OUTPUT_TAIL_WARNING:
            logger.warning(
                "Evolved ensemble leaves the output grid at t=%g (coverage %.9f)",
                snapshot.t,
                output_coverage,
            )
        return values, output_coverage

    def propagate_series(
        self,
        psi0: WaveFunction,
        times: Sequence[float],
        t0: float = 0.0,
        phase_grid: PhaseGrid | None = None,
        grid: PositionGrid | None = None,
    ) -> list[HKResult]:
        """Propagate ψ0 to several nondecreasing times with one ensemble integration.

        Args:
            psi0: Initial state.
            times: Output times, nondecreasing and not before t0.
            t0: Initial time.
            phase_grid: Fixed quadrature; built from ψ0 when omitted.
            grid: Output grid; ψ0's grid when omitted.

        Returns:
            One result per time.
        """
        times = [float(t) for t in times]
        if any(b < a for a, b in zip([t0, *times], times)):
            msg = f"Times must be nondecreasing from t0={t0}, got {times}"
            raise ValueError(msg)
        if psi0.grid.dim != self.config.dim:
            msg = f"State dimension {psi0.grid.dim} does not match model dimension {self.config.dim}"
            raise ValueError(msg)

        zgrid = phase_grid or self.phase_grid(psi0)
        grid = grid or psi0.grid
        coefficients = fb_transform(psi0, self.config.gamma, zgrid)
        flags: frozenset[str] = frozenset()
        if zgrid.coverage < zgrid.coverage_target:
            logger.warning("Phase grid coverage %.12f is below target", zgrid.coverage)
            flags = frozenset({FLAG_COVERAGE})

        snapshots, refinements = self.evolve_nodes(zgrid.nodes, t0, times)
        results = []
        for snapshot in snapshots:
            values, output_coverage = self.synthesize(snapshot, zgrid, coefficients, psi0.hbar, grid)
            results.append(
                HKResult(
                    wavefunction=WaveFunction(grid, values, psi0.hbar, flags),
                    t=snapshot.t,
                    node_count=zgrid.size,
                    coverage=zgrid.coverage,
                    output_coverage=output_coverage,
                    refinements=refinements,
                    phase_grid=zgrid,
                )
            )
        logger.debug("Propagated %d nodes to %d times", zgrid.size, len(times))
        return results

    def propagate(
        self,
        psi0: WaveFunction,
        t: float,
        t0: float = 0.0,
        phase_grid: PhaseGrid | None = None,
        grid: PositionGrid | None = None,
    ) -> HKResult:
        """Propagate ψ0 from t0 to t."""
        return self.propagate_series(psi0, [t], t0, phase_grid, grid)[0]

    def operator(self, t: float, phase_grid: PhaseGrid, t0: float = 0.0) -> HKOperator:
        """Linear operator ψ ↦ HK(t)ψ on a fixed quadrature, integrating the nodes once."""
        snapshots, _ = self.evolve_nodes(phase_grid.nodes, t0, [t])
        return HKOperator(self, snapshots[0], phase_grid)


class HKOperator:
    """HK propagator with precomputed node trajectories."""

    def __init__(self, propagator: HKPropagator, snapshot: NodeSnapshot, phase_grid: PhaseGrid) -> None:
        """Bind the propagator to one evolved quadrature."""
        self.propagator = propagator
        self.snapshot = snapshot
        self.phase_grid = phase_grid

    def flow_map(self) -> NDArray[np.float64]:
        """Evolved node positions z_t, aligned with the phase grid nodes."""
        return self.snapshot.z

    def __call__(self, psi: WaveFunction) -> WaveFunction:
        """Apply the propagator to ψ on ψ's grid."""
        coefficients = fb_transform(psi, self.propagator.config.gamma, self.phase_grid)
        values, _ = self.propagator.synthesize(self.snapshot, self.phase_grid, coefficients, psi.hbar, psi.grid)
        return psi.with_values(values)


def hk_propagate(
    model: HamiltonianModel,
    psi0: WaveFunction,
    t: float,
    cfg: HKConfig,
    t0: float = 0.0,
) -> WaveFunction:
    """Leading-order HK approximation of e^{−i(t−t₀)Ĥ/ħ}ψ0."""
    return HKPropagator(model, cfg).propagate(psi0, t, t0).wavefunction


@dataclass(frozen=True, eq=False)
class DecayReport:
    """Binned FB kernel K̃(X, Y) = (2πħ)^{-d}⟨Aφ_X, φ_Y⟩ against off-graph distance.

    Distances are |φᵗ(X) − Y|/√ħ.
    """

    bin_edges: NDArray[np.float64]
    max_abs: NDArray[np.float64]
    counts: NDArray[np.int64]
    kernel: NDArray[np.complex128]
    distances: NDArray[np.float64]
    x_nodes: NDArray[np.float64]
    y_nodes: NDArray[np.float64]
    mapped: NDArray[np.float64]
    monotone: bool

    @property
    def peak(self) -> float:
        """Largest |K̃| over all samples."""
        return float(np.max(np.abs(self.kernel), initial=0.0))

    @property
    def peak_indices(self) -> NDArray[np.int64]:
        """Index of the Y node with the largest |K̃| for each X."""
        return np.argmax(np.abs(self.kernel), axis=1)

    @property
    def peak_locations(self) -> NDArray[np.float64]:
        """Y node of the largest |K̃| for each X."""
        return self.y_nodes[self.peak_indices]

    @property
    def peak_distances(self) -> NDArray[np.float64]:
        """Off-graph distance of each X's peak."""
        return self.distances[np.arange(len(self.x_nodes)), self.peak_indices]

    @property
    def bin_width(self) -> float:
        """Width of the distance bins."""
        return float(self.bin_edges[1] - self.bin_edges[0])

    def offgraph_ratio(self, distance: float) -> float:
        """max|K̃| at off-graph distance ≥ `distance`, relative to the peak."""
        if self.peak == 0:
            return 0.0
        far = np.abs(self.kernel[self.distances >= distance])
        return float(np.max(far, initial=0.0)) / self.peak

    def rows(self) -> list[dict[str, float | int]]:
        """One row per bin: bin_lower, bin_upper, max_abs_ktilde, count."""
        return [
            {
                "bin_lower": float(lower),
                "bin_upper": float(upper),
                "max_abs_ktilde": float(value),
                "count": int(count),
            }
            for lower, upper, value, count in zip(
                self.bin_edges[:-1], self.bin_edges[1:], self.max_abs, self.counts
            )
        ]

    def peak_rows(self) -> list[dict[str, float | int]]:
        """Peak location per X node."""
        dim = self.x_nodes.shape[1] // 2
        rows = []
        for i, (x, mapped, y, distance) in enumerate(
            zip(self.x_nodes, self.mapped, self.peak_locations, self.peak_distances)
        ):
            row: dict[str, float | int] = {"x_index": i}
            row.update({f"x_q{j + 1}": float(x[j]) for j in range(dim)})
            row.update({f"x_p{j + 1}": float(x[dim + j]) for j in range(dim)})
            row.update({f"mapped_q{j + 1}": float(mapped[j]) for j in range(dim)})
            row.update({f"mapped_p{j + 1}": float(mapped[dim + j]) for j in range(dim)})
            row.update({f"peak_q{j + 1}": float(y[j]) for j in range(dim)})
            row.update({f"peak_p{j + 1}": float(y[dim + j]) for j in range(dim)})
            row["peak_distance"] = float(distance)
            row["peak_bin"] = int(distance // self.bin_width)
            rows.append(row)
        return rows


def fb_kernel_diagnostic(
    apply: Callable[[WaveFunction], WaveFunction],
    flow_map: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    x_nodes: ArrayLike,
    y_nodes: ArrayLike,
    hbar: float,
    grid: PositionGrid,
    bin_width: float = 0.5,
    noise_floor: float = KERNEL_NOISE_FLOOR,
) -> DecayReport:
    """Sample the FB kernel of a black-box linear operator and bin it by off-graph distance.

    Args:
        apply: Linear operator on wavefunctions.
        flow_map: Canonical map applied to the X nodes, (n, 2d) → (n, 2d).
        x_nodes: Source phase points, shape (nX, 2d).
        y_nodes: Target phase points, shape (nY, 2d).
        hbar: Planck constant.
        grid: Position grid for the coherent states.
        bin_width: Width of the distance bins in units of √ħ.
        noise_floor: Fraction of the peak below which bin maxima count as noise.

    Returns:
        The decay report; `monotone` holds when the binned maxima never
        increase by more than noise_floor times the peak.
    """
    x_nodes = np.atleast_2d(np.asarray(x_nodes, dtype=float))
    y_nodes = np.atleast_2d(np.asarray(y_nodes, dtype=float))
    dim = x_nodes.shape[1] // 2
    identity = SiegelMatrix.identity(dim)

    targets = coherent_values(y_nodes[:, :dim], y_nodes[:, dim:], identity.entries, hbar, grid.points())
    weights = grid.weights()
    kernel = np.empty((len(x_nodes), len(y_nodes)), dtype=complex)
    for i, x in enumerate(x_nodes):
        image = apply(coherent_state(PhasePoint.from_vector(x), identity, hbar, grid))
        kernel[i] = np.conj(targets) @ (weights * image.values)
    kernel *= (2.0 * math.pi * hbar) ** (-dim)

    mapped = np.asarray(flow_map(x_nodes), dtype=float)
    distances = np.linalg.norm(mapped[:, None, :] - y_nodes[None, :, :], axis=-1) / math.sqrt(hbar)
    bins = max(1, math.ceil(float(np.max(distances)) / bin_width + 1e-12))
    edges = bin_width * np.arange(bins + 1)
    index = np.minimum((distances // bin_width).astype(int), bins - 1)
    magnitude = np.abs(kernel)
    max_abs = np.zeros(bins)
    np.maximum.at(max_abs, index.ravel(), magnitude.ravel())
    counts = np.bincount(index.ravel(), minlength=bins)

    peak = float(np.max(magnitude, initial=0.0))
    occupied = max_abs[counts > 0]
    monotone = bool(np.all(np.diff(occupied) <= noise_floor * peak))
    if not monotone:
        logger.warning("Binned kernel maxima are not monotone in off-graph distance")
    return DecayReport(
        bin_edges=edges,
        max_abs=max_abs,
        counts=counts,
        kernel=kernel,
        distances=distances,
        x_nodes=x_nodes,
        y_nodes=y_nodes,
        mapped=mapped,
        monotone=monotone,
    )


def schur_norm_bound(
    kernel_samples: ArrayLike,
    x_grid: PhaseGrid,
    y_grid: PhaseGrid,
    hbar: float,
) -> float:
    """Carleman-Schur estimate (2πħ)^{-d}·max(sup_Y ∫|K̃|dX, sup_X ∫|K̃|dY).

    Args:
        kernel_samples: |⟨Aφ_X, φ_Y⟩| sampled on x_grid × y_grid, shape (nX, nY).
        x_grid: Quadrature over X.
        y_grid: Quadrature over Y.
        hbar: Planck constant.

    Returns:
        An upper-bound estimate of the operator's L² norm.
    """
    magnitude = np.abs(np.asarray(kernel_samples))
    if magnitude.shape != (x_grid.size, y_grid.size):
        msg = f"Kernel shape {magnitude.shape} does not match grids ({x_grid.size}, {y_grid.size})"
        raise ValueError(msg)
    peak = float(np.max(magnitude, initial=0.0))
    if peak == 0:
        return 0.0

    over_x = x_grid.weights @ magnitude
    over_y = magnitude @ y_grid.weights
    worst_column = int(np.argmax(over_x))
    worst_row = int(np.argmax(over_y))
    edge = max(
        float(np.max(magnitude[x_grid.boundary_mask(), worst_column], initial=0.0)),
        float(np.max(magnitude[worst_row, y_grid.boundary_mask()], initial=0.0)),
    )
    if edge > SUPPORT_WARNING * peak:
        logger.warning(
            "Kernel support is not covered by the sample grids (boundary %.3g of peak)",
            edge / peak,
        )
    scale = (2.0 * math.pi * hbar) ** (-x_grid.dim)
    return scale * max(float(over_x[worst_column]), float(over_y[worst_row]))
