"""Hamilton's equations with action and variational (stability) equations."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from hk_semiclassical.exceptions import FlowDivergenceError
from hk_semiclassical.hamiltonians import symplectic_form

if TYPE_CHECKING:
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

    from hk_semiclassical.hamiltonians import HamiltonianModel

logger = logging.getLogger(__name__)

DEFAULT_STEPS_PER_UNIT_TIME = 1000
SYMPLECTIC_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """z = (q, p) in R^d × R^d."""

    q: NDArray[np.float64]
    p: NDArray[np.float64]

    @classmethod
    def of(cls, q: ArrayLike, p: ArrayLike) -> PhasePoint:
        """Build a point from position and momentum sequences."""
        return cls(np.atleast_1d(np.asarray(q, dtype=float)), np.atleast_1d(np.asarray(p, dtype=float)))

    @classmethod
    def from_vector(cls, z: ArrayLike) -> PhasePoint:
        """Split a 2d vector into (q, p)."""
        z = np.asarray(z, dtype=float)
        dim = z.shape[-1] // 2
        return cls(z[:dim].copy(), z[dim:].copy())

    @property
    def dim(self) -> int:
        """Degrees of freedom."""
        return self.q.shape[0]

    @property
    def vector(self) -> NDArray[np.float64]:
        """(q, p) concatenated."""
        return np.concatenate([self.q, self.p])


@dataclass(frozen=True, eq=False)
class FlowState:
    """Point on a trajectory with its action and stability blocks."""

    t: float
    z: PhasePoint
    action: float
    A: NDArray[np.float64]
    B: NDArray[np.float64]
    C: NDArray[np.float64]
    D: NDArray[np.float64]
    subprincipal_phase: float = 0.0

    @property
    def stability(self) -> NDArray[np.float64]:
        """F(t) = [[A, B], [C, D]]."""
        return np.block([[self.A, self.B], [self.C, self.D]])


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """All samples of one integrated trajectory."""

    initial: PhasePoint
    t0: float
    step: float
    samples: tuple[FlowState, ...]

    @property
    def final(self) -> FlowState:
        """Last sample."""
        return self.samples[-1]

    @property
    def times(self) -> NDArray[np.float64]:
        """Sample times."""
        return np.array([state.t for state in self.samples])


@dataclass(frozen=True, eq=False)
class EnsembleState:
    """Many trajectories at a common time.

    Arrays are indexed by trajectory along the first axis: `z` is (n, 2d),
    `action` and `subprincipal_phase` are (n,), `stability` is (n, 2d, 2d).
    """

    t: float
    z: NDArray[np.float64]
    action: NDArray[np.float64]
    stability: NDArray[np.float64]
    subprincipal_phase: NDArray[np.float64]

    @classmethod
    def initial(cls, z0: ArrayLike, t0: float) -> EnsembleState:
        """Identity stability, zero action at t0 for initial points z0 (n, 2d)."""
        z0 = np.atleast_2d(np.asarray(z0, dtype=float))
        n, size = z0.shape
        return cls(
            t=float(t0),
            z=z0.copy(),
            action=np.zeros(n),
            stability=np.broadcast_to(np.eye(size), (n, size, size)).copy(),
            subprincipal_phase=np.zeros(n),
        )

    @property
    def dim(self) -> int:
        """Degrees of freedom."""
        return self.z.shape[1] // 2

    @property
    def size(self) -> int:
        """Number of trajectories."""
        return self.z.shape[0]

    def blocks(self):
        """Stability blocks (A, B, C, D), each of shape (n, d, d)."""
        d = self.dim
        F = self.stability
        return F[:, :d, :d], F[:, :d, d:], F[:, d:, :d], F[:, d:, d:]

    def member(self, index: int) -> FlowState:
        """Single-trajectory view of one ensemble member."""
        A, B, C, D = (block[index].copy() for block in self.blocks())
        return FlowState(
            t=self.t,
            z=PhasePoint.from_vector(self.z[index]),
            action=float(self.action[index]),
            A=A,
            B=B,
            C=C,
            D=D,
            subprincipal_phase=float(self.subprincipal_phase[index]),
        )


Observer = Callable[[EnsembleState], None]


def _pack(state: EnsembleState) -> NDArray[np.float64]:
    n = state.size
    return np.concatenate(
        [
            state.z,
            state.action[:, None],
            state.subprincipal_phase[:, None],
            state.stability.reshape(n, -1),
        ],
        axis=1,
    )


def _unpack(t: float, y: NDArray[np.float64], dim: int) -> EnsembleState:
    size = 2 * dim
    return EnsembleState(
        t=t,
        z=y[:, :size],
        action=y[:, size],
        subprincipal_phase=y[:, size + 1],
        stability=y[:, size + 2 :].reshape(-1, size, size),
    )


def _equations_of_motion(model: HamiltonianModel, J: NDArray[np.float64]):
    dim = model.dim
    size = 2 * dim

    def rhs(t: float, y: NDArray[np.float64]) -> NDArray[np.float64]:
        z = y[:, :size]
        F = y[:, size + 2 :].reshape(-1, size, size)
        zdot = model.gradient(t, z) @ J.T
        # S' = p·q' - H with q' = ∂_p H
        action_dot = np.sum(z[:, dim:] * zdot[:, :dim], axis=1) - model.value(t, z)
        if model.subprincipal is None:
            phase_dot = np.zeros(len(y))
        else:
            phase_dot = model.subprincipal(t, z)
        F_dot = J @ model.hessian(t, z) @ F
        return np.concatenate(
            [zdot, action_dot[:, None], phase_dot[:, None], F_dot.reshape(len(y), -1)],
            axis=1,
        )

    return rhs


def _rk4_step(f, y, t, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_ensemble(
    model: HamiltonianModel,
    initial: EnsembleState,
    t1: float,
    steps: int,
    observer: Observer | None = None,
) -> EnsembleState:
    """Integrate z, S, ∫H₁ and F jointly for every ensemble member with fixed-step RK4.

    Args:
        model: Hamiltonian model.
        initial: State at the start time.
        t1: Final time (may precede `initial.t`).
        steps: Number of RK4 steps, at least 1.
        observer: Called with the state at every sample, including the initial one.

    Returns:
        The state at `t1`.

    Raises:
        FlowDivergenceError: If a step produces a non-finite state.
    """
    if steps < 1:
        msg = f"steps must be at least 1, got {steps}"
        raise ValueError(msg)
    if initial.dim != model.dim:
        msg = f"Initial points have dimension {initial.dim}, model has {model.dim}"
        raise ValueError(msg)

    if observer is not None:
        observer(initial)
    if t1 == initial.t:
        return initial

    t0 = initial.t
    h = (t1 - t0) / steps
    rhs = _equations_of_motion(model, symplectic_form(model.dim))
    y = _pack(initial)
    state = initial
    for k in range(1, steps + 1):
        y = _rk4_step(rhs, y, t0 + (k - 1) * h, h)
        t = t1 if k == steps else t0 + k * h
        if not np.all(np.isfinite(y)):
            raise FlowDivergenceError(t)
        state = _unpack(t, y, model.dim)
        if observer is not None:
            observer(state)
    return state


def default_steps(t0: float, t1: float, steps_per_unit_time: int = DEFAULT_STEPS_PER_UNIT_TIME) -> int:
    """Step count for the default policy of `steps_per_unit_time` steps per unit time."""
    return max(1, math.ceil(steps_per_unit_time * abs(t1 - t0) - 1e-9))


def integrate_flow(
    model: HamiltonianModel,
    z0: PhasePoint,
    t0: float,
    t1: float,
    steps: int | None = None,
) -> TrajectoryRecord:
    """Integrate one trajectory and retain every sample.

    Args:
        model: Hamiltonian model.
        z0: Initial phase-space point.
        t0: Initial time.
        t1: Final time.
        steps: Number of RK4 steps; defaults to 10³ per unit time.

    Returns:
        The trajectory record; a single sample when t1 == t0.
    """
    if steps is None:
        steps = default_steps(t0, t1)
    samples: list[FlowState] = []
    integrate_ensemble(
        model,
        EnsembleState.initial(z0.vector[None, :], t0),
        t1,
        steps,
        observer=lambda state: samples.append(state.member(0)),
    )
    step = 0.0 if t1 == t0 else (t1 - t0) / steps
    return TrajectoryRecord(initial=z0, t0=float(t0), step=step, samples=tuple(samples))


def symplectic_defect(state: FlowState) -> float:
    """‖FᵀJF − J‖ in the Frobenius norm."""
    F = state.stability
    J = symplectic_form(state.A.shape[0])
    return float(np.linalg.norm(F.T @ J @ F - J))


def jacobian_check(
    model: HamiltonianModel,
    z0: PhasePoint,
    t: float,
    h: float,
    t0: float = 0.0,
    steps: int | None = None,
) -> float:
    """Max-norm discrepancy between integrated F(t) and finite differences of z0 ↦ z_t."""
    if h <= 0:
        msg = f"Finite-difference step must be positive, got {h}"
        raise ValueError(msg)
    if steps is None:
        steps = default_steps(t0, t)

    size = 2 * model.dim
    offsets = h * np.eye(size)
    points = np.concatenate([z0.vector[None, :], z0.vector + offsets, z0.vector - offsets])
    final = integrate_ensemble(model, EnsembleState.initial(points, t0), t, steps)
    forward = final.z[1 : size + 1]
    backward = final.z[size + 1 :]
    finite_difference = ((forward - backward) / (2.0 * h)).T
    return float(np.max(np.abs(final.stability[0] - finite_difference)))


def write_trajectory_csv(record: TrajectoryRecord, path: Path) -> None:
    """Dump a trajectory as CSV: t, q..., p..., S, A..., B..., C..., D... (row-major blocks)."""
    dim = record.initial.dim
    header = ["t"]
    header += [f"q{i + 1}" for i in range(dim)]
    header += [f"p{i + 1}" for i in range(dim)]
    header.append("S")
    for block in "ABCD":
        header += [f"{block}{i + 1}{j + 1}" for i in range(dim) for j in range(dim)]

    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for state in record.samples:
            row = [state.t, *state.z.q, *state.z.p, state.action]
            for block in (state.A, state.B, state.C, state.D):
                row += list(block.ravel())
            writer.writerow([repr(float(value)) for value in row])
