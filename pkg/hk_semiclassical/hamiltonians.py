"""Hamiltonian models, built-in subquadratic examples and the stability rate."""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable

import numpy as np

from hk_semiclassical.exceptions import ModelError

if TYPE_CHECKING:
    from collections.abc import Mapping

    from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-12
POWER_METHOD_TOLERANCE = 1e-10
POWER_METHOD_MAX_ITERATIONS = 10_000

Evaluator = Callable[[float, "NDArray[np.float64]"], "NDArray[np.float64]"]


class ModelKind(str, enum.Enum):
    """Built-in model inventory."""

    HARMONIC = "harmonic"
    FREE = "free"
    QUADRATIC_GENERAL = "quadratic_general"
    PENDULUM = "pendulum"
    RELATIVISTIC = "relativistic"


@dataclass(frozen=True)
class SplitForm:
    """H = T(ξ) + V(x); both evaluators take arrays of shape (..., d)."""

    kinetic: Callable[[NDArray[np.float64]], NDArray[np.float64]]
    potential: Callable[[NDArray[np.float64]], NDArray[np.float64]]


@dataclass(frozen=True, eq=False)
class HamiltonianModel:
    """Evaluator bundle for a classical symbol H(t, X), X = (q, p) in R^{2d}.

    Evaluators are vectorised over leading axes: for X of shape (..., 2d),
    `value` returns (...), `gradient` (..., 2d) and `hessian` (..., 2d, 2d).
    """

    dim: int
    value: Evaluator
    gradient: Evaluator
    hessian: Evaluator
    subprincipal: Evaluator | None = None
    split_form: SplitForm | None = None
    kind: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)
    quadratic: bool = False

    def __post_init__(self) -> None:
        """Validate the dimension."""
        if self.dim <= 0:
            msg = f"Model dimension must be positive, got {self.dim}"
            raise ModelError(msg)


@dataclass(frozen=True, eq=False)
class PhaseBox:
    """Axis-aligned box in phase space."""

    lower: NDArray[np.float64]
    upper: NDArray[np.float64]

    @classmethod
    def centered(cls, center: ArrayLike, half_width: ArrayLike) -> PhaseBox:
        """Box of the given half-width around a center."""
        center = np.asarray(center, dtype=float)
        half_width = np.broadcast_to(np.asarray(half_width, dtype=float), center.shape)
        return cls(center - half_width, center + half_width)

    def shifted(self, offset: ArrayLike) -> PhaseBox:
        """Translate the box by `offset`."""
        offset = np.asarray(offset, dtype=float)
        return PhaseBox(self.lower + offset, self.upper + offset)


@dataclass(frozen=True, eq=False)
class StabilityBound:
    """Sampled sup of ‖J ∂²H‖, the exponential growth rate of the flow."""

    delta: float
    sample_box: PhaseBox
    sample_count: int

    @property
    def ehrenfest_coefficient(self) -> float:
        """Asymptotic 1/(4δ) coefficient of log(1/ħ) in the validity horizon."""
        return np.inf if self.delta == 0 else 1.0 / (4.0 * self.delta)


def symplectic_form(dim: int) -> NDArray[np.float64]:
    """J = [[0, I], [-I, 0]]."""
    eye = np.eye(dim)
    zero = np.zeros((dim, dim))
    return np.block([[zero, eye], [-eye, zero]])


def _split(X: NDArray[np.float64], dim: int):
    return X[..., :dim], X[..., dim:]


def _constant_subprincipal(value: float | None) -> Evaluator | None:
    if value is None:
        return None

    def subprincipal(_t, X):
        return np.full(np.shape(X)[:-1], float(value))

    return subprincipal


def _check_symmetric(name: str, matrix: NDArray[np.float64]) -> None:
    scale = max(1.0, float(np.max(np.abs(matrix), initial=0.0)))
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > SYMMETRY_TOLERANCE * scale:
        msg = f"{name} must be symmetric, got {matrix.tolist()}"
        raise ModelError(msg)


def _as_axis_vector(value: float | ArrayLike, dim: int, name: str) -> NDArray[np.float64]:
    vector = np.broadcast_to(np.asarray(value, dtype=float), (dim,)).copy()
    if not np.all(np.isfinite(vector)):
        msg = f"{name} must be finite, got {value!r}"
        raise ModelError(msg)
    return vector


def _quadratic_model(
    kind: ModelKind,
    G: NDArray[np.float64],
    K: NDArray[np.float64],
    L: NDArray[np.float64],
    params: Mapping[str, Any],
) -> HamiltonianModel:
    dim = G.shape[0]
    hessian_matrix = np.block([[G, L.T], [L, K]])

    def value(_t, X):
        q, p = _split(X, dim)
        return 0.5 * (
            np.einsum("...i,ij,...j->...", q, G, q)
            + 2.0 * np.einsum("...i,ij,...j->...", p, L, q)
            + np.einsum("...i,ij,...j->...", p, K, p)
        )

    def gradient(_t, X):
        return np.asarray(X) @ hessian_matrix.T

    def hessian(_t, X):
        return np.broadcast_to(hessian_matrix, (*np.shape(X)[:-1], 2 * dim, 2 * dim))

    split_form = None
    if not np.any(L):
        split_form = SplitForm(
            kinetic=lambda xi: 0.5 * np.einsum("...i,ij,...j->...", xi, K, xi),
            potential=lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, G, x),
        )

    return HamiltonianModel(
        dim=dim,
        value=value,
        gradient=gradient,
        hessian=hessian,
        subprincipal=_constant_subprincipal(params.get("subprincipal")),
        split_form=split_form,
        kind=kind.value,
        params=dict(params),
        quadratic=True,
    )


def _pendulum_model(dim: int, params: Mapping[str, Any]) -> HamiltonianModel:
    g = _as_axis_vector(params.get("strength", 1.0), dim, "strength")

    def value(_t, X):
        q, p = _split(X, dim)
        return 0.5 * np.sum(p * p, axis=-1) - np.sum(g * np.cos(q), axis=-1)

    def gradient(_t, X):
        q, p = _split(X, dim)
        return np.concatenate([g * np.sin(q), p], axis=-1)

    def hessian(_t, X):
        q, _ = _split(X, dim)
        diagonal = np.concatenate([g * np.cos(q), np.ones_like(q)], axis=-1)
        return diagonal[..., :, None] * np.eye(2 * dim)

    return HamiltonianModel(
        dim=dim,
        value=value,
        gradient=gradient,
        hessian=hessian,
        subprincipal=_constant_subprincipal(params.get("subprincipal")),
        split_form=SplitForm(
            kinetic=lambda xi: 0.5 * np.sum(xi * xi, axis=-1),
            potential=lambda x: -np.sum(g * np.cos(x), axis=-1),
        ),
        kind=ModelKind.PENDULUM.value,
        params=dict(params),
    )


def _relativistic_model(dim: int, params: Mapping[str, Any]) -> HamiltonianModel:
    mass = float(params.get("mass", 1.0))
    if mass <= 0:
        msg = f"relativistic mass must be positive, got {mass}"
        raise ModelError(msg)
    potential_kind = params.get("potential", "harmonic")
    k = _as_axis_vector(params.get("strength", 1.0), dim, "strength")
    eye = np.eye(dim)

    if potential_kind == "harmonic":

        def potential(x):
            return 0.5 * np.sum(k * x * x, axis=-1)

        def potential_gradient(x):
            return k * x

        def potential_hessian(x):
            return np.broadcast_to(k, x.shape)

    elif potential_kind == "cosine":

        def potential(x):
            return -np.sum(k * np.cos(x), axis=-1)

        def potential_gradient(x):
            return k * np.sin(x)

        def potential_hessian(x):
            return k * np.cos(x)

    elif potential_kind == "none":

        def potential(x):
            return np.zeros(np.shape(x)[:-1])

        def potential_gradient(x):
            return np.zeros_like(x)

        def potential_hessian(x):
            return np.zeros_like(x)

    else:
        msg = f"Unknown relativistic potential {potential_kind!r}"
        raise ModelError(msg)

    def kinetic(xi):
        return np.sqrt(mass * mass + np.sum(xi * xi, axis=-1))

    def value(_t, X):
        q, p = _split(X, dim)
        return kinetic(p) + potential(q)

    def gradient(_t, X):
        q, p = _split(X, dim)
        return np.concatenate([potential_gradient(q), p / kinetic(p)[..., None]], axis=-1)

    def hessian(_t, X):
        q, p = _split(X, dim)
        energy = kinetic(p)[..., None, None]
        kinetic_block = (eye * energy**2 - p[..., :, None] * p[..., None, :]) / energy**3
        result = np.zeros((*np.shape(X)[:-1], 2 * dim, 2 * dim))
        result[..., :dim, :dim] = potential_hessian(q)[..., :, None] * eye
        result[..., dim:, dim:] = kinetic_block
        return result

    return HamiltonianModel(
        dim=dim,
        value=value,
        gradient=gradient,
        hessian=hessian,
        subprincipal=_constant_subprincipal(params.get("subprincipal")),
        split_form=SplitForm(kinetic=kinetic, potential=potential),
        kind=ModelKind.RELATIVISTIC.value,
        params=dict(params),
    )


def make_model(kind: ModelKind | str, **params: Any) -> HamiltonianModel:
    """Build a built-in subquadratic model.

    Args:
        kind: One of the `ModelKind` values.
        **params: Model parameters. `dim` (default 1) for every kind except
            `quadratic_general`, whose dimension is read from `G`. Kind-specific
            parameters: `omega` (harmonic), `G`, `K`, `L` (quadratic_general),
            `strength` (pendulum, relativistic), `mass` and `potential`
            (relativistic). Every kind accepts a constant `subprincipal` term.

    Returns:
        The model, with `split_form` populated whenever H = T(ξ) + V(x).

    Raises:
        ModelError: On unknown kinds, non-positive dimensions or non-symmetric
            quadratic forms.
    """
    try:
        kind = ModelKind(kind)
    except ValueError as ex:
        msg = f"Unknown model kind {kind!r}"
        raise ModelError(msg) from ex

    if kind is ModelKind.QUADRATIC_GENERAL:
        if "G" not in params or "K" not in params:
            msg = "quadratic_general requires G and K"
            raise ModelError(msg)
        G = np.atleast_2d(np.asarray(params["G"], dtype=float))
        K = np.atleast_2d(np.asarray(params["K"], dtype=float))
        dim = G.shape[0]
        L = np.atleast_2d(np.asarray(params.get("L", np.zeros((dim, dim))), dtype=float))
        if dim <= 0 or G.shape != (dim, dim) or K.shape != (dim, dim) or L.shape != (dim, dim):
            msg = f"G, K, L must be square with equal positive size, got {G.shape}, {K.shape}, {L.shape}"
            raise ModelError(msg)
        _check_symmetric("G", G)
        _check_symmetric("K", K)
        return _quadratic_model(kind, G, K, L, params)

    dim = int(params.get("dim", 1))
    if dim <= 0:
        msg = f"Model dimension must be positive, got {dim}"
        raise ModelError(msg)

    if kind is ModelKind.HARMONIC:
        omega = _as_axis_vector(params.get("omega", 1.0), dim, "omega")
        return _quadratic_model(kind, np.diag(omega**2), np.eye(dim), np.zeros((dim, dim)), params)

    if kind is ModelKind.FREE:
        return _quadratic_model(kind, np.zeros((dim, dim)), np.eye(dim), np.zeros((dim, dim)), params)

    if kind is ModelKind.PENDULUM:
        return _pendulum_model(dim, params)

    return _relativistic_model(dim, params)


def box_samples(box: PhaseBox, n: int) -> NDArray[np.float64]:
    """Tensor grid of `n` points per axis over `box`, shape (n^{2d}, 2d)."""
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(box.lower, box.upper)]
    return np.array(list(itertools.product(*axes)), dtype=float)


def spectral_norms(matrices: NDArray[np.float64]) -> NDArray[np.float64]:
    """Spectral norms of a stack of real square matrices.

    Uses the closed form for 2×2 matrices and a batched power iteration on
    MᵀM otherwise.
    """
    matrices = np.asarray(matrices, dtype=float)
    size = matrices.shape[-1]
    if size == 2:  # noqa: PLR2004
        frobenius2 = np.sum(matrices**2, axis=(-2, -1))
        det = matrices[..., 0, 0] * matrices[..., 1, 1] - matrices[..., 0, 1] * matrices[..., 1, 0]
        discriminant = np.sqrt(np.maximum(frobenius2**2 - 4.0 * det**2, 0.0))
        return np.sqrt(0.5 * (frobenius2 + discriminant))

    gram = np.swapaxes(matrices, -1, -2) @ matrices
    vector = np.ones((*matrices.shape[:-2], size)) / np.sqrt(size)
    estimate = np.zeros(matrices.shape[:-2])
    for _ in range(POWER_METHOD_MAX_ITERATIONS):
        image = np.einsum("...ij,...j->...i", gram, vector)
        norm = np.linalg.norm(image, axis=-1)
        converged = np.abs(norm - estimate) <= POWER_METHOD_TOLERANCE * np.maximum(norm, 1.0)
        estimate = norm
        safe = np.where(norm > 0, norm, 1.0)[..., None]
        vector = np.where(norm[..., None] > 0, image / safe, vector)
        if np.all(converged):
            break
    else:
        logger.warning(
            "Power iteration did not converge in %d iterations", POWER_METHOD_MAX_ITERATIONS
        )
    return np.sqrt(estimate)


def estimate_delta(
    model: HamiltonianModel,
    box: PhaseBox,
    n: int,
    t: float = 0.0,
) -> StabilityBound:
    """Estimate δ = sup ‖J ∂²_{X,X} H(t, X)‖ on a sample grid.

    Args:
        model: Model to sample.
        box: Phase-space box (corners in R^{2d}).
        n: Samples per axis, at least 2.
        t: Evaluation time.

    Returns:
        The sampled bound; deterministic for fixed inputs.
    """
    if n < 2:  # noqa: PLR2004
        msg = f"estimate_delta needs at least 2 samples per axis, got {n}"
        raise ModelError(msg)
    if np.any(box.upper < box.lower):
        msg = "Sample box is empty"
        raise ModelError(msg)

    samples = box_samples(box, n)
    J = symplectic_form(model.dim)
    norms = spectral_norms(J @ model.hessian(t, samples))
    delta = float(np.max(norms))
    logger.debug("Estimated delta=%g from %d samples", delta, len(samples))
    return StabilityBound(delta=delta, sample_box=box, sample_count=len(samples))


def finite_difference_gradient(
    model: HamiltonianModel,
    t: float,
    X: ArrayLike,
    step: float = 1e-5,
) -> NDArray[np.float64]:
    """Centered finite differences of `model.value` at X of shape (..., 2d)."""
    X = np.asarray(X, dtype=float)
    offsets = step * np.eye(2 * model.dim)
    forward = model.value(t, X[..., None, :] + offsets)
    backward = model.value(t, X[..., None, :] - offsets)
    return (forward - backward) / (2.0 * step)


@dataclass(frozen=True)
class ConsistencyReport:
    """Worst defects of a model on a sample grid."""

    hessian_asymmetry: float
    gradient_defect: float


def check_consistency(
    model: HamiltonianModel,
    box: PhaseBox,
    n: int = 5,
    t: float = 0.0,
    step: float = 1e-5,
) -> ConsistencyReport:
    """Measure hessian symmetry and gradient/value agreement on a sample grid.

    The gradient defect is ‖∇H − FD(H)‖ / (1 + ‖∇H‖), maximised over samples.
    """
    samples = box_samples(box, n)
    hessian = model.hessian(t, samples)
    scale = np.maximum(np.max(np.abs(hessian), axis=(-2, -1)), 1.0)
    asymmetry = np.max(np.abs(hessian - np.swapaxes(hessian, -1, -2)), axis=(-2, -1)) / scale

    gradient = model.gradient(t, samples)
    defect = np.linalg.norm(gradient - finite_difference_gradient(model, t, samples, step), axis=-1)
    defect /= 1.0 + np.linalg.norm(gradient, axis=-1)
    return ConsistencyReport(
        hessian_asymmetry=float(np.max(asymmetry)),
        gradient_defect=float(np.max(defect)),
    )
