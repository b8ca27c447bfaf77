"""Harness configuration: JSON schema, defaults and semantic validation."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import jsonschema
from singer_sdk import typing as th  # JSON schema typing helpers

from hk_semiclassical.coherent import (
    DEFAULT_COVERAGE_TARGET,
    DEFAULT_DENSITY,
    DEFAULT_MAX_RADIUS,
    MASS_THRESHOLD,
    PositionGrid,
    SiegelMatrix,
)
from hk_semiclassical.exceptions import ConfigError, HKError
from hk_semiclassical.hamiltonians import ModelKind, make_model
from hk_semiclassical.hk_core import (
    DEFAULT_MAX_REFINEMENTS,
    HKConfig,
    QuadratureSettings,
    ThetaMode,
)

if TYPE_CHECKING:
    from pathlib import Path

    from hk_semiclassical.classical_flow import PhasePoint
    from hk_semiclassical.hamiltonians import HamiltonianModel

logger = logging.getLogger(__name__)

LADDER_EXPERIMENTS = ("scaling", "phase-invariance", "ehrenfest")
MIN_LADDER = 3

MatrixType = th.ArrayType(th.ArrayType(th.NumberType))
VectorType = th.ArrayType(th.NumberType)


def _siegel_property(name: str, title: str, description: str) -> th.Property:
    return th.Property(
        name,
        th.ObjectType(
            th.Property("scale", th.NumberType, description="Γ = i·scale·I"),
            th.Property("re", MatrixType, description="Real part, d×d"),
            th.Property("im", MatrixType, description="Imaginary part, d×d"),
            additional_properties=False,
        ),
        title=title,
        description=description,
    )


config_jsonschema = th.PropertiesList(
    th.Property(
        "model",
        th.ObjectType(
            th.Property(
                "kind",
                th.StringType,
                required=True,
                allowed_values=[kind.value for kind in ModelKind],
                description="Built-in model",
            ),
            th.Property("dim", th.IntegerType, default=1, description="Degrees of freedom"),
            th.Property("omega", th.NumberType, description="Harmonic frequency"),
            th.Property("strength", th.NumberType, description="Pendulum or potential strength"),
            th.Property("mass", th.NumberType, description="Relativistic rest mass"),
            th.Property(
                "potential",
                th.StringType,
                allowed_values=["harmonic", "cosine", "none"],
                description="Relativistic potential",
            ),
            th.Property("G", MatrixType, description="quadratic_general position block"),
            th.Property("K", MatrixType, description="quadratic_general momentum block"),
            th.Property("L", MatrixType, description="quadratic_general mixed block"),
            th.Property("subprincipal", th.NumberType, description="Constant H₁ term"),
            additional_properties=False,
        ),
        required=True,
        title="Model",
        description="Hamiltonian model selection and parameters",
    ),
    th.Property(
        "initial_state",
        th.ObjectType(
            th.Property("q", VectorType, default=[0.0], description="Center position"),
            th.Property("p", VectorType, default=[0.0], description="Center momentum"),
            _siegel_property("width", "Width", "Coherent-state width Γ₀ (default iI)"),
            additional_properties=False,
        ),
        title="Initial state",
        description="Coherent-state initial condition",
    ),
    th.Property("hbar", th.NumberType, default=0.1, title="ħ", description="Planck constant"),
    th.Property(
        "hbar_ladder",
        VectorType,
        title="ħ ladder",
        description="Strictly decreasing ħ values for scaling studies",
    ),
    th.Property(
        "time",
        th.ObjectType(
            th.Property("t0", th.NumberType, default=0.0, description="Initial time"),
            th.Property("t", th.NumberType, default=1.0, description="Final time"),
            th.Property("sample_times", VectorType, description="Output times (default [t])"),
            th.Property("horizon", th.NumberType, description="Largest admissible time"),
            th.Property(
                "steps_per_unit_time",
                th.IntegerType,
                default=1000,
                description="RK4 steps per unit time",
            ),
            additional_properties=False,
        ),
        title="Time",
    ),
    th.Property(
        "hk",
        th.ObjectType(
            th.Property(
                "theta_mode",
                th.StringType,
                default=ThetaMode.FROZEN_II.value,
                allowed_values=[mode.value for mode in ThetaMode],
            ),
            _siegel_property("gamma", "Γ", "Decomposition width (default iI)"),
            _siegel_property("theta", "Θ", "Constant output width (default Γ)"),
            th.Property("max_refinements", th.IntegerType, default=DEFAULT_MAX_REFINEMENTS),
            additional_properties=False,
        ),
        title="Herman-Kluk",
    ),
    th.Property(
        "comparison",
        th.ObjectType(
            th.Property(
                "theta_mode",
                th.StringType,
                default=ThetaMode.CONSTANT.value,
                allowed_values=[mode.value for mode in ThetaMode],
            ),
            _siegel_property("gamma", "Γ", "Decomposition width (default 2iI)"),
            _siegel_property("theta", "Θ", "Constant output width (default Γ)"),
            th.Property("max_refinements", th.IntegerType, default=DEFAULT_MAX_REFINEMENTS),
            additional_properties=False,
        ),
        title="Comparison phase",
        description="Second (Θ, Γ) choice for phase-invariance studies",
    ),
    th.Property(
        "quadrature",
        th.ObjectType(
            th.Property("coverage_target", th.NumberType, default=DEFAULT_COVERAGE_TARGET),
            th.Property("density", th.NumberType, default=DEFAULT_DENSITY),
            th.Property("max_radius", th.NumberType, default=DEFAULT_MAX_RADIUS),
            th.Property("jitter", th.BooleanType, default=False),
            additional_properties=False,
        ),
        title="Phase-space quadrature",
    ),
    th.Property(
        "grid",
        th.ObjectType(
            th.Property("lower", VectorType, default=[-8.0]),
            th.Property("upper", VectorType, default=[8.0]),
            th.Property("points", th.ArrayType(th.IntegerType), default=[1024]),
            th.Property("mass_threshold", th.NumberType, default=MASS_THRESHOLD),
            additional_properties=False,
        ),
        title="Position grid",
    ),
    th.Property(
        "reference",
        th.ObjectType(
            th.Property(
                "solver",
                th.StringType,
                default="auto",
                allowed_values=["auto", "exact_quadratic", "split_step", "none"],
            ),
            th.Property("steps_per_unit_time", th.IntegerType, default=1000),
            th.Property("cache", th.BooleanType, default=False),
            additional_properties=False,
        ),
        title="Reference solver",
    ),
    th.Property(
        "ehrenfest",
        th.ObjectType(
            th.Property("threshold", th.NumberType, default=0.1),
            th.Property("max_horizon", th.NumberType, default=10.0),
            th.Property("time_step", th.NumberType, default=0.25),
            additional_properties=False,
        ),
        title="Ehrenfest sweep",
    ),
    th.Property(
        "kernel",
        th.ObjectType(
            th.Property(
                "operator",
                th.StringType,
                default="hk",
                allowed_values=["hk", "identity"],
            ),
            th.Property("x_center", VectorType, description="Center of the X lattice (default initial z)"),
            th.Property("x_half_width", th.NumberType, default=0.5),
            th.Property("x_spacing", th.NumberType, default=0.25),
            th.Property("y_half_width", th.NumberType, default=2.0),
            th.Property("y_spacing", th.NumberType, default=0.1),
            th.Property("bin_width", th.NumberType, default=0.5),
            additional_properties=False,
        ),
        title="Kernel inspection",
    ),
    th.Property(
        "output",
        th.ObjectType(
            th.Property("directory", th.StringType, default="out"),
            th.Property("wavefunction_dumps", th.BooleanType, default=False),
            additional_properties=False,
        ),
        title="Output",
    ),
    th.Property("seed", th.IntegerType, default=0, title="Seed", description="Seed for node jitter"),
    th.Property("workers", th.IntegerType, default=1, title="Workers"),
).to_dict()
config_jsonschema["additionalProperties"] = False


def apply_defaults(schema: dict[str, Any], document: dict[str, Any]) -> dict[str, Any]:
    """Fill missing or null keys with schema defaults, recursing into objects."""
    result = dict(document)
    for name, spec in schema.get("properties", {}).items():
        if result.get(name) is None and "default" in spec:
            result[name] = copy.deepcopy(spec["default"])
        if "properties" in spec and (result.get(name) is not None or _has_defaults(spec)):
            result[name] = apply_defaults(spec, result.get(name) or {})
    return result


def _has_defaults(schema: dict[str, Any]) -> bool:
    return any("default" in spec or _has_defaults(spec) for spec in schema.get("properties", {}).values())


def _key(path) -> str:
    return ".".join(str(part) for part in path) or "<root>"


@dataclass(frozen=True)
class ModelSpec:
    """Model kind and parameters as configured."""

    kind: str
    params: dict[str, Any]

    def build(self) -> HamiltonianModel:
        """Construct the model."""
        return make_model(self.kind, **self.params)

    @property
    def dim(self) -> int:
        """Degrees of freedom."""
        if self.kind == ModelKind.QUADRATIC_GENERAL.value:
            return len(self.params["G"])
        return int(self.params.get("dim", 1))


@dataclass(frozen=True, eq=False)
class InitialStateSpec:
    """Coherent-state initial condition."""

    q: tuple[float, ...]
    p: tuple[float, ...]
    width: SiegelMatrix

    @property
    def point(self) -> PhasePoint:
        """Center as a phase point."""
        from hk_semiclassical.classical_flow import PhasePoint  # noqa: PLC0415

        return PhasePoint.of(self.q, self.p)


@dataclass(frozen=True)
class TimeSpec:
    """Time window and step density."""

    t0: float
    t: float
    sample_times: tuple[float, ...]
    horizon: float
    steps_per_unit_time: int


@dataclass(frozen=True, eq=False)
class HKSpec:
    """Phase choice for one HK configuration."""

    theta_mode: str
    gamma: SiegelMatrix
    theta: SiegelMatrix | None
    max_refinements: int

    def to_config(self, quadrature: QuadratureSettings, steps_per_unit_time: int) -> HKConfig:
        """Calibrated HK configuration."""
        return HKConfig.create(
            self.gamma.dim,
            theta_mode=self.theta_mode,
            gamma=self.gamma,
            theta=self.theta,
            quadrature=quadrature,
            max_refinements=self.max_refinements,
            steps_per_unit_time=steps_per_unit_time,
        )


@dataclass(frozen=True)
class GridSpec:
    """Position grid bounds."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points: tuple[int, ...]
    mass_threshold: float

    def build(self) -> PositionGrid:
        """Construct the grid."""
        return PositionGrid.from_bounds(self.lower, self.upper, self.points)


@dataclass(frozen=True)
class ReferenceSpec:
    """Reference solver selection."""

    solver: str
    steps_per_unit_time: int
    cache: bool


@dataclass(frozen=True)
class EhrenfestSpec:
    """Error threshold and time grid of the Ehrenfest sweep."""

    threshold: float
    max_horizon: float
    time_step: float

    @property
    def times(self) -> tuple[float, ...]:
        """Increasing probe times up to the horizon."""
        count = math.floor(self.max_horizon / self.time_step + 1e-9)
        return tuple(self.time_step * k for k in range(1, count + 1))


@dataclass(frozen=True)
class KernelSpec:
    """Lattices and binning of the kernel inspection."""

    operator: str
    x_center: tuple[float, ...]
    x_half_width: float
    x_spacing: float
    y_half_width: float
    y_spacing: float
    bin_width: float


@dataclass(frozen=True)
class OutputSpec:
    """Output directory and dump switches."""

    directory: str
    wavefunction_dumps: bool


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated harness configuration with defaults applied."""

    model: ModelSpec
    initial_state: InitialStateSpec
    hbar: float
    hbar_ladder: tuple[float, ...]
    time: TimeSpec
    hk: HKSpec
    comparison: HKSpec
    quadrature: QuadratureSettings
    grid: GridSpec
    reference: ReferenceSpec
    ehrenfest: EhrenfestSpec
    kernel: KernelSpec
    output: OutputSpec
    seed: int
    workers: int
    document: dict[str, Any] = field(default_factory=dict)

    def hk_config(self, comparison: bool = False) -> HKConfig:
        """Calibrated HK configuration for the primary or comparison phase."""
        spec = self.comparison if comparison else self.hk
        return spec.to_config(self.quadrature, self.time.steps_per_unit_time)

    def with_overrides(self, overrides: dict[str, Any], experiment: str | None = None) -> ExperimentConfig:
        """Re-validate with top-level or dotted-key overrides (`output.directory`)."""
        return build_config(apply_overrides(self.document, overrides), experiment)


def apply_overrides(document: dict[str, Any], overrides: dict[str, Any] | None) -> dict[str, Any]:
    """Copy of `document` with dotted-key overrides set; None values are skipped."""
    document = copy.deepcopy(document)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        target = document
        *parents, leaf = dotted.split(".")
        for part in parents:
            target = target.setdefault(part, {})
        target[leaf] = value
    return document


def _siegel(value: Any, dim: int, key: str) -> SiegelMatrix:
    try:
        return SiegelMatrix.parse(value, dim)
    except (HKError, ValueError) as ex:
        raise ConfigError(str(ex), key=key) from ex


def _hk_spec(section: dict[str, Any], dim: int, key: str, default_gamma: float) -> HKSpec:
    gamma = section.get("gamma") or {"scale": default_gamma}
    theta = section.get("theta")
    return HKSpec(
        theta_mode=section["theta_mode"],
        gamma=_siegel(gamma, dim, f"{key}.gamma"),
        theta=None if theta is None else _siegel(theta, dim, f"{key}.theta"),
        max_refinements=int(section["max_refinements"]),
    )


def _vector(values: list, dim: int, key: str) -> tuple:
    if len(values) == 1 and dim > 1:
        values = values * dim
    if len(values) != dim:
        msg = f"expected {dim} entries, got {len(values)}"
        raise ConfigError(msg, key=key)
    return tuple(values)


def _positive(value: float, key: str) -> float:
    if not value > 0:
        msg = f"must be positive, got {value}"
        raise ConfigError(msg, key=key)
    return float(value)


def build_config(document: dict[str, Any], experiment: str | None = None) -> ExperimentConfig:
    """Validate a parsed document and build the typed configuration.

    Args:
        document: Parsed JSON object.
        experiment: Experiment name; ladder length rules depend on it.

    Returns:
        The validated configuration.

    Raises:
        ConfigError: Naming the offending key and the violated constraint.
    """
    validator = jsonschema.Draft7Validator(config_jsonschema)
    error = jsonschema.exceptions.best_match(validator.iter_errors(document))
    if error is not None:
        raise ConfigError(error.message, key=_key(error.absolute_path))

    raw = copy.deepcopy(document)
    document = apply_defaults(config_jsonschema, document)

    model_section = {k: v for k, v in document["model"].items() if v is not None}
    kind = model_section.pop("kind")
    spec = ModelSpec(kind=kind, params=model_section)
    try:
        spec.build()
    except HKError as ex:
        raise ConfigError(str(ex), key="model") from ex
    dim = spec.dim

    initial = document["initial_state"]
    initial_state = InitialStateSpec(
        q=_vector(initial["q"], dim, "initial_state.q"),
        p=_vector(initial["p"], dim, "initial_state.p"),
        width=_siegel(initial.get("width"), dim, "initial_state.width"),
    )

    hbar = _positive(document["hbar"], "hbar")
    ladder = tuple(float(h) for h in (document.get("hbar_ladder") or [hbar]))
    if any(h <= 0 for h in ladder):
        msg = f"all entries must be positive, got {list(ladder)}"
        raise ConfigError(msg, key="hbar_ladder")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        msg = f"must be strictly decreasing, got {list(ladder)}"
        raise ConfigError(msg, key="hbar_ladder")
    if experiment in LADDER_EXPERIMENTS and len(ladder) < MIN_LADDER:
        msg = f"{experiment} needs at least {MIN_LADDER} values, got {len(ladder)}"
        raise ConfigError(msg, key="hbar_ladder")

    section = document["time"]
    t0, t = float(section["t0"]), float(section["t"])
    sample_times = tuple(float(s) for s in (section.get("sample_times") or [t]))
    horizon = float(section["horizon"]) if section.get("horizon") is not None else max(t, *sample_times)
    if any(b < a for a, b in zip(sample_times, sample_times[1:])):
        msg = f"must be nondecreasing, got {list(sample_times)}"
        raise ConfigError(msg, key="time.sample_times")
    for key, value in [("time.t", t), *(("time.sample_times", s) for s in sample_times)]:
        if not t0 <= value <= horizon:
            msg = f"{value} lies outside [{t0}, {horizon}]"
            raise ConfigError(msg, key=key)
    steps = int(section["steps_per_unit_time"])
    if steps < 1:
        msg = f"must be at least 1, got {steps}"
        raise ConfigError(msg, key="time.steps_per_unit_time")
    time = TimeSpec(t0, t, sample_times, horizon, steps)

    hk = _hk_spec(document["hk"], dim, "hk", 1.0)
    comparison = _hk_spec(document["comparison"], dim, "comparison", 2.0)
    for key, item in (("hk", hk), ("comparison", comparison)):
        try:
            item.to_config(QuadratureSettings(), steps)
        except (HKError, ValueError) as ex:
            raise ConfigError(str(ex), key=key) from ex

    section = document["quadrature"]
    coverage = float(section["coverage_target"])
    if not 0.0 < coverage < 1.0:
        msg = f"must lie in (0, 1), got {coverage}"
        raise ConfigError(msg, key="quadrature.coverage_target")
    quadrature = QuadratureSettings(
        coverage_target=coverage,
        density=_positive(section["density"], "quadrature.density"),
        max_radius=_positive(section["max_radius"], "quadrature.max_radius"),
        jitter=bool(section["jitter"]),
        seed=int(document["seed"]),
    )

    section = document["grid"]
    grid = GridSpec(
        lower=_vector(section["lower"], dim, "grid.lower"),
        upper=_vector(section["upper"], dim, "grid.upper"),
        points=_vector(section["points"], dim, "grid.points"),
        mass_threshold=_positive(section["mass_threshold"], "grid.mass_threshold"),
    )
    try:
        grid.build()
    except HKError as ex:
        raise ConfigError(str(ex), key="grid") from ex

    section = document["reference"]
    reference = ReferenceSpec(
        solver=section["solver"],
        steps_per_unit_time=int(_positive(section["steps_per_unit_time"], "reference.steps_per_unit_time")),
        cache=bool(section["cache"]),
    )

    section = document["ehrenfest"]
    ehrenfest = EhrenfestSpec(
        threshold=_positive(section["threshold"], "ehrenfest.threshold"),
        max_horizon=_positive(section["max_horizon"], "ehrenfest.max_horizon"),
        time_step=_positive(section["time_step"], "ehrenfest.time_step"),
    )

    section = document["kernel"]
    x_center = section.get("x_center") or [*initial_state.q, *initial_state.p]
    kernel = KernelSpec(
        operator=section["operator"],
        x_center=_vector(x_center, 2 * dim, "kernel.x_center"),
        x_half_width=float(section["x_half_width"]),
        x_spacing=_positive(section["x_spacing"], "kernel.x_spacing"),
        y_half_width=_positive(section["y_half_width"], "kernel.y_half_width"),
        y_spacing=_positive(section["y_spacing"], "kernel.y_spacing"),
        bin_width=_positive(section["bin_width"], "kernel.bin_width"),
    )

    workers = int(document["workers"])
    if workers < 1:
        msg = f"must be at least 1, got {workers}"
        raise ConfigError(msg, key="workers")

    return ExperimentConfig(
        model=spec,
        initial_state=initial_state,
        hbar=hbar,
        hbar_ladder=ladder,
        time=time,
        hk=hk,
        comparison=comparison,
        quadrature=quadrature,
        grid=grid,
        reference=reference,
        ehrenfest=ehrenfest,
        kernel=kernel,
        output=OutputSpec(
            directory=document["output"]["directory"],
            wavefunction_dumps=bool(document["output"]["wavefunction_dumps"]),
        ),
        seed=int(document["seed"]),
        workers=workers,
        document=raw,
    )


def parse_config(
    text: str,
    experiment: str | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Parse a JSON configuration document, applying dotted-key overrides first.

    Raises:
        ConfigError: On malformed JSON or any schema or semantic violation.
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as ex:
        msg = f"invalid JSON: {ex}"
        raise ConfigError(msg) from ex
    if not isinstance(document, dict):
        msg = "configuration must be a JSON object"
        raise ConfigError(msg)
    return build_config(apply_overrides(document, overrides), experiment)


def load_config(
    path: Path,
    experiment: str | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Read and parse a configuration file."""
    logger.info("Loading configuration from %s", path)
    return parse_config(path.read_text(), experiment, overrides)


def effective_document(config: ExperimentConfig) -> dict[str, Any]:
    """The configuration document with all defaults applied, for the run summary."""
    return apply_defaults(config_jsonschema, config.document)
