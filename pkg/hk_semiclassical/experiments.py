"""Experiment classes and the job functions they dispatch."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np
from singer_sdk import typing as th  # JSON Schema typing helpers
from typing_extensions import override

from hk_semiclassical.classical_flow import EnsembleState, PhasePoint, default_steps, integrate_ensemble
from hk_semiclassical.client import Experiment
from hk_semiclassical.coherent import PhaseGrid, SiegelMatrix, WaveFunction, coherent_state, fb_transform
from hk_semiclassical.config import ModelSpec
from hk_semiclassical.exceptions import HKError, ReferenceSolverError
from hk_semiclassical.hamiltonians import ModelKind, PhaseBox, estimate_delta
from hk_semiclassical.hk_core import HKPropagator, fb_kernel_diagnostic, schur_norm_bound
from hk_semiclassical.reference import (
    SplitStepSolver,
    exact_quadratic_apply,
    exact_quadratic_coherent,
    split_step_propagate,
)
from hk_semiclassical.serialization import dump_wavefunction

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence
    from pathlib import Path

    from hk_semiclassical.cache import ReferenceCache
    from hk_semiclassical.config import ExperimentConfig
    from hk_semiclassical.hamiltonians import HamiltonianModel
    from hk_semiclassical.hk_core import DecayReport, HKResult

logger = logging.getLogger(__name__)

FLOOR_FACTOR = 10.0
FLAG_FLOOR = "quadrature-floor"
FLAG_NON_MONOTONE = "non-monotone"
STATUS_CROSSED = "crossed"
STATUS_NO_CROSSING = "no crossing within horizon"
STATUS_REFERENCE_FAILED = "reference-failed"
CROSS_CHECK_TOLERANCE = 1e-6
OFFGRAPH_DISTANCE = 5.0
DELTA_BOX_HALF_WIDTH = 2.0
DELTA_SAMPLES = 21


def initial_wavefunction(config: ExperimentConfig, hbar: float) -> WaveFunction:
    """Configured coherent state sampled on the configured grid."""
    spec = config.initial_state
    return coherent_state(spec.point, spec.width, hbar, config.grid.build())


def resolve_solver(config: ExperimentConfig, model: HamiltonianModel) -> str:
    """Reference solver for `auto`: exact for quadratic models, split-step otherwise."""
    solver = config.reference.solver
    if solver == "auto":
        return "exact_quadratic" if model.quadratic else "split_step"
    return solver


def reference_stream(
    config: ExperimentConfig,
    model: HamiltonianModel,
    psi0: WaveFunction,
    times: Sequence[float],
) -> Iterator[WaveFunction]:
    """Yield reference solutions at nondecreasing `times`, one at a time."""
    solver = resolve_solver(config, model)
    t0 = config.time.t0
    steps = config.reference.steps_per_unit_time
    if solver == "exact_quadratic":
        for t in times:
            yield exact_quadratic_apply(
                model,
                psi0,
                t,
                gamma_decomp=config.hk.gamma,
                t0=t0,
                coverage_target=config.quadrature.coverage_target,
                density=config.quadrature.density,
                steps_per_unit_time=steps,
            )
        return
    if solver != "split_step":
        msg = f"No reference solver configured ({solver!r})"
        raise ReferenceSolverError(msg)

    solver_ = SplitStepSolver(model, psi0.grid, psi0.hbar, config.grid.mass_threshold)
    values = psi0.values.reshape(psi0.grid.shape)
    solver_.check(values)
    current = t0
    for t in times:
        if t > current:
            values = solver_.evolve(values, t - current, default_steps(current, t, steps))
            solver_.check(values)
            current = t
        yield psi0.with_values(values.ravel())


def _reference_description(config: ExperimentConfig, solver: str, hbar: float, times: Sequence[float]) -> dict:
    document = config.document
    return {
        "solver": solver,
        "model": {"kind": config.model.kind, **config.model.params},
        "initial_state": document.get("initial_state"),
        "grid": config.grid.build().to_json(),
        "mass_threshold": config.grid.mass_threshold,
        "gamma": config.hk.gamma.to_json(),
        "quadrature": dataclasses.asdict(config.quadrature),
        "hbar": hbar,
        "t0": config.time.t0,
        "times": list(times),
        "steps_per_unit_time": config.reference.steps_per_unit_time,
    }


def reference_series(
    config: ExperimentConfig,
    model: HamiltonianModel,
    psi0: WaveFunction,
    times: Sequence[float],
    cache: ReferenceCache | None = None,
) -> list[WaveFunction]:
    """Reference solutions at `times`, read from or stored in `cache` when given."""
    description = _reference_description(config, resolve_solver(config, model), psi0.hbar, times)
    if cache is not None:
        cached = cache.get(description)
        if cached is not None and cached.shape == (len(times), psi0.grid.size):
            return [psi0.with_values(row) for row in cached]
    series = list(reference_stream(config, model, psi0, times))
    if cache is not None:
        cache.put(description, np.stack([psi.values for psi in series]))
    return series


def cross_check_reference(config: ExperimentConfig, model: HamiltonianModel, hbar: float, t: float) -> dict[str, Any]:
    """Compare the default reference against an independent solution at one point.

    Quadratic models compare the decomposed exact solution with the closed-form
    Gaussian; other models compare split-step at the configured and at twice
    the configured step density.
    """
    psi0 = initial_wavefunction(config, hbar)
    solver = resolve_solver(config, model)
    reference = next(reference_stream(config, model, psi0, [t]))
    t0 = config.time.t0
    if solver == "exact_quadratic":
        check = "closed_form_gaussian"
        spec = config.initial_state
        other = exact_quadratic_coherent(model, spec.point, spec.width, t, hbar, t0).to_wavefunction(psi0.grid)
    else:
        check = "split_step_doubled"
        steps = 2 * default_steps(t0, t, config.reference.steps_per_unit_time)
        other = split_step_propagate(model, psi0, t, steps=steps, t0=t0, mass_threshold=config.grid.mass_threshold)
    discrepancy = reference.l2_distance(other)
    if discrepancy > CROSS_CHECK_TOLERANCE:
        logger.warning("Reference cross-check %s differs by %.3g at hbar=%g, t=%g", check, discrepancy, hbar, t)
    return {"solver": solver, "check": check, "hbar": hbar, "t": t, "discrepancy": discrepancy}


def hk_series(
    config: ExperimentConfig,
    model: HamiltonianModel,
    psi0: WaveFunction,
    times: Sequence[float],
    comparison: bool = False,
) -> list[HKResult]:
    """HK propagation of ψ0 to every sample time with one ensemble integration."""
    propagator = HKPropagator(model, config.hk_config(comparison))
    return propagator.propagate_series(psi0, times, t0=config.time.t0)


def harmonic_control(config: ExperimentConfig) -> ExperimentConfig:
    """Same settings on the unit harmonic oscillator with the exact reference."""
    return dataclasses.replace(
        config,
        model=ModelSpec(kind=ModelKind.HARMONIC.value, params={"dim": config.model.dim}),
        reference=dataclasses.replace(config.reference, solver="exact_quadratic"),
    )


@dataclass(frozen=True, eq=False)
class Job:
    """One independent ħ point; picklable for worker processes."""

    config: ExperimentConfig
    hbar: float
    times: tuple[float, ...]
    cache: ReferenceCache | None = None


def error_job(job: Job) -> list[dict[str, Any]]:
    """HK against the reference at every time of one ħ."""
    started = time.perf_counter()
    model = job.config.model.build()
    psi0 = initial_wavefunction(job.config, job.hbar)
    results = hk_series(job.config, model, psi0, job.times)
    references = reference_series(job.config, model, psi0, job.times, job.cache)
    runtime = time.perf_counter() - started
    return [
        {
            "hbar": job.hbar,
            "t": result.t,
            "error": result.wavefunction.l2_distance(reference),
            "hk_norm": result.wavefunction.l2_norm(),
            "reference_norm": reference.l2_norm(),
            "node_count": result.node_count,
            "coverage": result.coverage,
            "output_coverage": result.output_coverage,
            "refinements": result.refinements,
            "runtime_seconds": runtime / len(results),
        }
        for result, reference in zip(results, references)
    ]


def difference_job(job: Job) -> list[dict[str, Any]]:
    """Primary against comparison HK outputs at every time of one ħ."""
    started = time.perf_counter()
    model = job.config.model.build()
    psi0 = initial_wavefunction(job.config, job.hbar)
    primary = hk_series(job.config, model, psi0, job.times)
    comparison = hk_series(job.config, model, psi0, job.times, comparison=True)
    runtime = time.perf_counter() - started
    return [
        {
            "hbar": job.hbar,
            "t": first.t,
            "difference": first.wavefunction.l2_distance(second.wavefunction),
            "primary_norm": first.wavefunction.l2_norm(),
            "comparison_norm": second.wavefunction.l2_norm(),
            "primary_nodes": first.node_count,
            "comparison_nodes": second.node_count,
            "runtime_seconds": runtime / len(primary),
        }
        for first, second in zip(primary, comparison)
    ]


def ehrenfest_job(job: Job) -> dict[str, Any]:
    """Walk the time grid until the HK error first exceeds the threshold."""
    started = time.perf_counter()
    config = job.config
    model = config.model.build()
    psi0 = initial_wavefunction(config, job.hbar)
    propagator = HKPropagator(model, config.hk_config())
    zgrid = propagator.phase_grid(psi0)
    coefficients = fb_transform(psi0, propagator.config.gamma, zgrid)
    snapshots, _ = propagator.evolve_nodes(zgrid.nodes, config.time.t0, job.times)
    references = reference_stream(config, model, psi0, job.times)

    row: dict[str, Any] = {
        "hbar": job.hbar,
        "log_inv_hbar": math.log(1.0 / job.hbar),
        "t_star": None,
        "error_at_t_star": None,
        "status": STATUS_NO_CROSSING,
        "last_time": None,
        "max_error": 0.0,
    }
    for snapshot in snapshots:
        try:
            reference = next(references)
        except ReferenceSolverError as ex:
            logger.warning("Reference failed at hbar=%g, t=%g: %s", job.hbar, snapshot.t, ex)
            row["status"] = STATUS_REFERENCE_FAILED
            break
        values, _ = propagator.synthesize(snapshot, zgrid, coefficients, job.hbar, psi0.grid)
        error = reference.with_values(values).l2_distance(reference)
        row["last_time"] = snapshot.t
        row["max_error"] = max(row["max_error"], error)
        if error > config.ehrenfest.threshold:
            row.update(t_star=snapshot.t, error_at_t_star=error, status=STATUS_CROSSED)
            break
    row["runtime_seconds"] = time.perf_counter() - started
    return row


@dataclass(frozen=True)
class ErrorRow:
    """One (ħ, t) measurement."""

    hbar: float
    t: float
    error: float
    hk_norm: float
    runtime_seconds: float
    node_count: int


@dataclass(frozen=True)
class ErrorTable:
    """Errors keyed uniquely by (ħ, t)."""

    rows: tuple[ErrorRow, ...]

    def __post_init__(self) -> None:
        """Check nonnegativity and key uniqueness."""
        keys = set()
        for row in self.rows:
            if not row.error >= 0:
                msg = f"Negative or undefined error {row.error} at hbar={row.hbar}, t={row.t}"
                raise HKError(msg)
            if (row.hbar, row.t) in keys:
                msg = f"Duplicate error row for hbar={row.hbar}, t={row.t}"
                raise HKError(msg)
            keys.add((row.hbar, row.t))

    @classmethod
    def from_records(cls, records: Sequence[dict[str, Any]], error_key: str = "error", norm_key: str = "hk_norm", nodes_key: str = "node_count") -> ErrorTable:
        """Build from experiment rows."""
        return cls(
            tuple(
                ErrorRow(
                    hbar=record["hbar"],
                    t=record["t"],
                    error=record[error_key],
                    hk_norm=record[norm_key],
                    runtime_seconds=record.get("runtime_seconds", 0.0),
                    node_count=record[nodes_key],
                )
                for record in records
            )
        )

    @property
    def times(self) -> list[float]:
        """Distinct sample times in first-seen order."""
        return list(dict.fromkeys(row.t for row in self.rows))

    def series(self, t: float) -> tuple[list[float], list[float]]:
        """(ħ values, errors) at time t, in row order."""
        rows = [row for row in self.rows if row.t == t]
        return [row.hbar for row in rows], [row.error for row in rows]


@dataclass(frozen=True)
class FitResult:
    """Least-squares fit of log error against log ħ."""

    slope: float | None
    intercept: float | None
    residuals: tuple[float | None, ...]
    used: tuple[bool, ...]
    monotone: bool
    flags: tuple[str, ...]

    def to_json(self) -> dict[str, Any]:
        """Summary representation."""
        return dataclasses.asdict(self)


def fit_loglog_slope(
    hbars: Sequence[float],
    errors: Sequence[float],
    floors: Sequence[float] | None = None,
) -> FitResult:
    """Unweighted least squares of log error on log ħ.

    Points with nonpositive error or error below their floor are excluded and
    the fit is flagged `quadrature-floor`. Errors that do not decrease with ħ
    among the fitted points flag `non-monotone`.
    """
    hbars = np.asarray(hbars, dtype=float)
    errors = np.asarray(errors, dtype=float)
    floors = np.zeros_like(errors) if floors is None else np.asarray(floors, dtype=float)
    used = (errors > 0) & (errors >= floors)
    flags = []
    if not np.all(used):
        flags.append(FLAG_FLOOR)

    order = np.argsort(-hbars[used], kind="stable")
    monotone = bool(np.all(np.diff(errors[used][order]) < 0))
    if not monotone:
        flags.append(FLAG_NON_MONOTONE)
        logger.warning("Error ladder is not monotone in hbar: %s", errors.tolist())

    if np.count_nonzero(used) < 2:  # noqa: PLR2004
        return FitResult(None, None, (None,) * len(errors), tuple(bool(u) for u in used), monotone, tuple(flags))

    x, y = np.log(hbars[used]), np.log(errors[used])
    slope, intercept = np.polyfit(x, y, 1)
    residuals: list[float | None] = [None] * len(errors)
    for index, value in zip(np.flatnonzero(used), y - (slope * x + intercept)):
        residuals[index] = float(value)
    return FitResult(float(slope), float(intercept), tuple(residuals), tuple(bool(u) for u in used), monotone, tuple(flags))


@dataclass(frozen=True)
class EhrenfestFit:
    """Fit of t* ≈ c·log(1/ħ) and the monotonicity check."""

    coefficient: float | None
    monotone: bool
    crossed: int


def fit_ehrenfest(hbars: Sequence[float], t_stars: Sequence[float | None]) -> EhrenfestFit:
    """Least-squares c through the origin over the rows that crossed.

    t* must not decrease as ħ decreases; a missing crossing counts as +∞.
    """
    pairs = sorted(zip(hbars, t_stars), key=lambda pair: -pair[0])
    ordered = [math.inf if t is None else t for _, t in pairs]
    monotone = all(b >= a for a, b in zip(ordered, ordered[1:]))
    crossed = [(math.log(1.0 / h), t) for h, t in pairs if t is not None]
    if not crossed:
        return EhrenfestFit(None, monotone, 0)
    numerator = sum(t * L for L, t in crossed)
    denominator = sum(L * L for L, _ in crossed)
    coefficient = numerator / denominator if denominator > 0 else None
    return EhrenfestFit(coefficient, monotone, len(crossed))


@dataclass(frozen=True)
class StudyResult:
    """Scaling or phase-invariance table with per-time fits."""

    table: ErrorTable
    fits: dict[float, FitResult]

    @property
    def fit(self) -> FitResult:
        """Fit at the last sample time."""
        return self.fits[self.table.times[-1]]


@dataclass(frozen=True)
class EhrenfestResult:
    """Crossing rows and fitted growth diagnostics."""

    rows: list[dict[str, Any]]
    fit: EhrenfestFit
    delta: float
    asymptotic_coefficient: float


@dataclass(frozen=True)
class KernelResult:
    """Decay report and Schur bound of one operator."""

    report: DecayReport
    schur_bound: float
    x_grid: PhaseGrid
    y_grid: PhaseGrid


class PropagateExperiment(Experiment):
    """Single propagation job at the configured ħ and sample times."""

    name = "propagate"

    schema = th.PropertiesList(
        th.Property("hbar", th.NumberType, required=True),
        th.Property("t", th.NumberType, required=True),
        th.Property("hk_norm", th.NumberType),
        th.Property("reference_norm", th.NumberType),
        th.Property("error", th.NumberType),
        th.Property("node_count", th.IntegerType),
        th.Property("coverage", th.NumberType),
        th.Property("output_coverage", th.NumberType),
        th.Property("refinements", th.IntegerType),
        th.Property("flags", th.StringType),
    ).to_dict()

    @override
    def get_records(self):
        config = self.config
        hbar = config.hbar
        times = config.time.sample_times
        psi0 = initial_wavefunction(config, hbar)
        results = hk_series(config, self.model, psi0, times)
        references: list[WaveFunction | None] = [None] * len(results)
        if config.reference.solver != "none":
            references = list(reference_series(config, self.model, psi0, times, self.cache))
            self.cross_check = cross_check_reference(config, self.model, hbar, times[-1])

        dumps = self.out_dir / "wavefunctions" if config.output.wavefunction_dumps and self.out_dir else None
        if dumps is not None:
            dumps.mkdir(parents=True, exist_ok=True)
            dump_wavefunction(psi0, dumps / "initial.csv", t=config.time.t0)

        for index, (result, reference) in enumerate(zip(results, references)):
            psi = result.wavefunction
            if dumps is not None:
                dump_wavefunction(psi, dumps / f"hk_{index:03d}.csv", t=result.t, kind="hk")
                if reference is not None:
                    dump_wavefunction(reference, dumps / f"reference_{index:03d}.csv", t=result.t, kind="reference")
            yield {
                "hbar": hbar,
                "t": result.t,
                "hk_norm": psi.l2_norm(),
                "reference_norm": None if reference is None else reference.l2_norm(),
                "error": None if reference is None else psi.l2_distance(reference),
                "node_count": result.node_count,
                "coverage": result.coverage,
                "output_coverage": result.output_coverage,
                "refinements": result.refinements,
                "flags": ";".join(sorted(psi.flags)),
            }

    @override
    def summary(self, records):
        return {
            "hk": self.config.hk_config().to_json(),
            "reference_cross_check": getattr(self, "cross_check", None),
        }


class _LadderExperiment(Experiment):
    """Shared ħ-ladder dispatch with harmonic-control floors."""

    job_function = staticmethod(error_job)
    error_key = "error"
    norm_key = "hk_norm"
    nodes_key = "node_count"
    study: StudyResult

    def jobs(self, config: ExperimentConfig) -> list[Job]:
        """One job per ladder entry."""
        times = self.config.time.sample_times
        return [Job(config, hbar, times, self.cache) for hbar in self.config.hbar_ladder]

    @override
    def get_records(self):
        main = self.jobs(self.config)
        control = self.jobs(harmonic_control(self.config))
        batches = self.map_jobs(self.job_function, main + control)
        rows = [row for batch in batches[: len(main)] for row in batch]
        controls = [row for batch in batches[len(main) :] for row in batch]
        for row, control_row in zip(rows, controls):
            row["control_error"] = control_row[self.error_key]
            row["floor"] = bool(row[self.error_key] < FLOOR_FACTOR * control_row[self.error_key])

        table = ErrorTable.from_records(rows, self.error_key, self.norm_key, self.nodes_key)
        fits = {}
        for t in table.times:
            selected = [row for row in rows if row["t"] == t]
            fits[t] = fit_loglog_slope(
                [row["hbar"] for row in selected],
                [row[self.error_key] for row in selected],
                [FLOOR_FACTOR * row["control_error"] for row in selected],
            )
        self.study = StudyResult(table, fits)
        return rows

    @override
    def summary(self, records):
        fits = [{"t": t, **fit.to_json()} for t, fit in self.study.fits.items()]
        return {
            "slope": self.study.fit.slope,
            "flags": list(self.study.fit.flags),
            "fits": fits,
            "runtimes": [
                {"hbar": row.hbar, "t": row.t, "runtime_seconds": row.runtime_seconds} for row in self.study.table.rows
            ],
        }


class ScalingExperiment(_LadderExperiment):
    """ħ-scaling of the HK error against the reference."""

    name = "scaling"

    schema = th.PropertiesList(
        th.Property("hbar", th.NumberType, required=True),
        th.Property("t", th.NumberType, required=True),
        th.Property("error", th.NumberType, required=True),
        th.Property("hk_norm", th.NumberType),
        th.Property("reference_norm", th.NumberType),
        th.Property("node_count", th.IntegerType),
        th.Property("coverage", th.NumberType),
        th.Property("output_coverage", th.NumberType),
        th.Property("refinements", th.IntegerType),
        th.Property("control_error", th.NumberType),
        th.Property("floor", th.BooleanType),
    ).to_dict()

    @override
    def summary(self, records):
        summary = super().summary(records)
        summary["reference_cross_check"] = cross_check_reference(
            self.config, self.model, self.config.hbar_ladder[0], self.config.time.sample_times[-1]
        )
        return summary


class PhaseInvarianceExperiment(_LadderExperiment):
    """ħ-scaling of the difference between two (Θ, Γ) choices."""

    name = "phase_invariance"
    job_function = staticmethod(difference_job)
    error_key = "difference"
    norm_key = "primary_norm"
    nodes_key = "primary_nodes"

    schema = th.PropertiesList(
        th.Property("hbar", th.NumberType, required=True),
        th.Property("t", th.NumberType, required=True),
        th.Property("difference", th.NumberType, required=True),
        th.Property("primary_norm", th.NumberType),
        th.Property("comparison_norm", th.NumberType),
        th.Property("primary_nodes", th.IntegerType),
        th.Property("comparison_nodes", th.IntegerType),
        th.Property("control_error", th.NumberType),
        th.Property("floor", th.BooleanType),
    ).to_dict()

    @override
    def summary(self, records):
        summary = super().summary(records)
        summary["primary"] = self.config.hk_config().to_json()
        summary["comparison"] = self.config.hk_config(comparison=True).to_json()
        return summary


class EhrenfestExperiment(Experiment):
    """First time the HK error exceeds the threshold, per ħ."""

    name = "ehrenfest"
    primary_keys = ("hbar",)
    result: EhrenfestResult

    schema = th.PropertiesList(
        th.Property("hbar", th.NumberType, required=True),
        th.Property("log_inv_hbar", th.NumberType),
        th.Property("t_star", th.NumberType),
        th.Property("error_at_t_star", th.NumberType),
        th.Property("status", th.StringType, required=True),
        th.Property("last_time", th.NumberType),
        th.Property("max_error", th.NumberType),
        th.Property("growth_at_t_star", th.NumberType),
    ).to_dict()

    def stability_bound(self):
        """δ sampled on a box around the initial center."""
        center = self.config.initial_state.point.vector
        box = PhaseBox.centered(center, DELTA_BOX_HALF_WIDTH)
        samples = DELTA_SAMPLES if self.model.dim == 1 else 5
        return estimate_delta(self.model, box, samples, self.config.time.t0)

    @override
    def get_records(self):
        config = self.config
        t0 = config.time.t0
        times = tuple(t0 + t for t in config.ehrenfest.times)
        jobs = [Job(config, hbar, times) for hbar in config.hbar_ladder]
        rows = self.map_jobs(ehrenfest_job, jobs)

        bound = self.stability_bound()
        for row in rows:
            t_star = row["t_star"]
            row["growth_at_t_star"] = None if t_star is None else math.exp(bound.delta * (t_star - t0))
            if row["status"] != STATUS_CROSSED:
                self.logger.info("hbar=%g: %s", row["hbar"], row["status"])

        fit = fit_ehrenfest(
            [row["hbar"] for row in rows],
            [None if row["t_star"] is None else row["t_star"] - t0 for row in rows],
        )
        if not fit.monotone:
            self.logger.warning("Crossing times are not monotone in hbar")
        self.result = EhrenfestResult(rows, fit, bound.delta, bound.ehrenfest_coefficient)
        return rows

    @override
    def summary(self, records):
        result = self.result
        summary = {
            "delta": result.delta,
            "asymptotic_coefficient": result.asymptotic_coefficient,
            "fitted_coefficient": result.fit.coefficient,
            "monotone": result.fit.monotone,
            "crossed": result.fit.crossed,
            "threshold": self.config.ehrenfest.threshold,
            "runtimes": [{"hbar": row["hbar"], "runtime_seconds": row["runtime_seconds"]} for row in records],
        }
        if self.config.reference.solver != "none" and records:
            summary["reference_cross_check"] = cross_check_reference(
                self.config, self.model, self.config.hbar_ladder[0], self.config.time.t0 + self.config.ehrenfest.time_step
            )
        return summary


def covering_phase_grid(config: ExperimentConfig, propagator: HKPropagator, psi: WaveFunction, half_width: float) -> PhaseGrid:
    """Quadrature for ψ enlarged by `half_width` on every axis, so it serves all translates of ψ."""
    base = propagator.phase_grid(psi)
    return PhaseGrid.lattice(
        base.center,
        base.half_widths + half_width,
        base.spacing,
        base.coverage,
        config.quadrature.coverage_target,
    )


class KernelInspectionExperiment(Experiment):
    """Binned FB kernel of the HK propagator (or the identity) around the graph."""

    name = "inspect_kernel"
    primary_keys = ("bin_lower",)
    result: KernelResult

    schema = th.PropertiesList(
        th.Property("bin_lower", th.NumberType, required=True),
        th.Property("bin_upper", th.NumberType, required=True),
        th.Property("max_abs_ktilde", th.NumberType, required=True),
        th.Property("count", th.IntegerType, required=True),
    ).to_dict()

    @override
    def get_records(self):
        config = self.config
        spec = config.kernel
        hbar = config.hbar
        t0, t = config.time.t0, config.time.t
        dim = config.model.dim
        grid = config.grid.build()
        x_grid = PhaseGrid.lattice(spec.x_center, spec.x_half_width, spec.x_spacing)

        if spec.operator == "identity":
            def apply(psi):
                return psi

            def flow_map(nodes):
                return nodes
        else:
            propagator = HKPropagator(self.model, config.hk_config())
            origin = PhasePoint.of(spec.x_center[:dim], spec.x_center[dim:])
            center = coherent_state(origin, SiegelMatrix.identity(dim), hbar, grid)
            phase_grid = covering_phase_grid(config, propagator, center, spec.x_half_width)
            self.logger.info("Integrating %d quadrature nodes to t=%g", phase_grid.size, t)
            apply = propagator.operator(t, phase_grid, t0)
            model = self.model
            steps = default_steps(t0, t, config.time.steps_per_unit_time)

            def flow_map(nodes):
                return integrate_ensemble(model, EnsembleState.initial(nodes, t0), t, steps).z

        mapped = flow_map(x_grid.nodes)
        lower, upper = mapped.min(axis=0), mapped.max(axis=0)
        y_grid = PhaseGrid.lattice(0.5 * (lower + upper), 0.5 * (upper - lower) + spec.y_half_width, spec.y_spacing)
        self.logger.info("Sampling kernel on %d x %d phase points", x_grid.size, y_grid.size)

        report = fb_kernel_diagnostic(apply, flow_map, x_grid.nodes, y_grid.nodes, hbar, grid, spec.bin_width)
        raw = np.abs(report.kernel) * (2.0 * math.pi * hbar) ** dim
        bound = schur_norm_bound(raw, x_grid, y_grid, hbar)
        self.result = KernelResult(report, bound, x_grid, y_grid)

        peaks = report.peak_rows()
        self.extra_tables["peaks"] = (list(peaks[0]) if peaks else [], peaks)
        return report.rows()

    @override
    def summary(self, records):
        report = self.result.report
        return {
            "operator": self.config.kernel.operator,
            "hbar": self.config.hbar,
            "t": self.config.time.t,
            "peak": report.peak,
            "monotone": report.monotone,
            "offgraph_distance": OFFGRAPH_DISTANCE,
            "offgraph_ratio": report.offgraph_ratio(OFFGRAPH_DISTANCE),
            "max_peak_distance": float(np.max(report.peak_distances, initial=0.0)),
            "peaks_on_graph": bool(np.all(report.peak_distances < report.bin_width)),
            "schur_bound": self.result.schur_bound,
            "x_nodes": self.result.x_grid.size,
            "y_nodes": self.result.y_grid.size,
        }


EXPERIMENT_TYPES: dict[str, type[Experiment]] = {
    "propagate": PropagateExperiment,
    "scaling": ScalingExperiment,
    "phase-invariance": PhaseInvarianceExperiment,
    "ehrenfest": EhrenfestExperiment,
    "inspect-kernel": KernelInspectionExperiment,
}


def _execute(experiment: Experiment, out_dir: Path | None) -> None:
    if out_dir is None:
        experiment.collect()
    else:
        experiment.run(out_dir)


def run_scaling_study(
    cfg: ExperimentConfig,
    out_dir: Path | None = None,
    workers: int | None = None,
    cache: ReferenceCache | None = None,
) -> StudyResult:
    """HK error against the reference over the ħ ladder, with log-log slope fits."""
    experiment = ScalingExperiment(cfg, workers, cache)
    _execute(experiment, out_dir)
    return experiment.study


def run_phase_invariance(
    cfg: ExperimentConfig,
    out_dir: Path | None = None,
    workers: int | None = None,
) -> StudyResult:
    """Difference between the primary and comparison HK phases over the ħ ladder."""
    experiment = PhaseInvarianceExperiment(cfg, workers)
    _execute(experiment, out_dir)
    return experiment.study


def run_ehrenfest(
    cfg: ExperimentConfig,
    out_dir: Path | None = None,
    workers: int | None = None,
) -> EhrenfestResult:
    """Crossing times t*(ħ) and the fitted c in t* ≈ c·log(1/ħ)."""
    experiment = EhrenfestExperiment(cfg, workers)
    _execute(experiment, out_dir)
    return experiment.result


def run_inspect_kernel(cfg: ExperimentConfig, out_dir: Path | None = None) -> KernelResult:
    """Decay report and Schur bound of the configured operator."""
    experiment = KernelInspectionExperiment(cfg)
    _execute(experiment, out_dir)
    return experiment.result
