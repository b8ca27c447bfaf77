"""Experiment base class: row schema, job dispatch and output assembly."""

from __future__ import annotations

import abc
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Any, Callable, TypeVar

import jsonschema

from hk_semiclassical.config import effective_document
from hk_semiclassical.exceptions import HKError
from hk_semiclassical.serialization import SCHEMA_VERSION, write_csv, write_summary

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from pathlib import Path

    from hk_semiclassical.cache import ReferenceCache
    from hk_semiclassical.config import ExperimentConfig
    from hk_semiclassical.hamiltonians import HamiltonianModel

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class RunResult:
    """Paths and contents produced by one experiment run."""

    table: Path
    summary_path: Path
    records: list[dict[str, Any]]
    summary: dict[str, Any]


class Experiment(abc.ABC):
    """Experiment base class.

    Subclasses declare `name`, a row `schema` built with `singer_sdk.typing`
    and `primary_keys`, and yield rows from `get_records`.
    """

    name: str
    schema: dict[str, Any]
    primary_keys: tuple[str, ...] = ("hbar", "t")

    def __init__(
        self,
        config: ExperimentConfig,
        workers: int | None = None,
        cache: ReferenceCache | None = None,
    ) -> None:
        """Initialize the experiment.

        Args:
            config: Validated configuration.
            workers: Worker processes; the configured count when omitted.
            cache: Reference-solution cache, or None to disable caching.
        """
        self.config = config
        self.workers = workers or config.workers
        self.cache = cache
        self.extra_tables: dict[str, tuple[Sequence[str], list[dict[str, Any]]]] = {}
        self.out_dir: Path | None = None

    @cached_property
    def logger(self) -> logging.Logger:
        """Experiment logger."""
        return logging.getLogger(f"hk_semiclassical.experiments.{self.name}")

    @cached_property
    def model(self) -> HamiltonianModel:
        """Model built from the configuration."""
        return self.config.model.build()

    @property
    def columns(self) -> list[str]:
        """Row columns in schema order."""
        return list(self.schema["properties"])

    @abc.abstractmethod
    def get_records(self) -> Iterable[dict[str, Any]]:
        """Yield table rows."""

    def summary(self, records: list[dict[str, Any]]) -> dict[str, Any]:  # noqa: ARG002
        """Fitted quantities for the JSON summary."""
        return {}

    def map_jobs(self, function: Callable[[T], R], jobs: Sequence[T]) -> list[R]:
        """Run independent jobs, returning results in submission order."""
        if self.workers <= 1 or len(jobs) <= 1:
            return [function(job) for job in jobs]
        self.logger.info("Running %d jobs on %d workers", len(jobs), self.workers)
        with ProcessPoolExecutor(max_workers=self.workers) as executor:
            return list(executor.map(function, jobs))

    def validate_records(self, records: list[dict[str, Any]]) -> None:
        """Check each row against the schema and the primary keys for uniqueness."""
        validator = jsonschema.Draft7Validator(self.schema)
        seen = set()
        for record in records:
            error = jsonschema.exceptions.best_match(validator.iter_errors(record))
            if error is not None:
                msg = f"Row {record} violates the {self.name} schema: {error.message}"
                raise HKError(msg)
            key = tuple(record[name] for name in self.primary_keys)
            if key in seen:
                msg = f"Duplicate {self.name} row for {dict(zip(self.primary_keys, key))}"
                raise HKError(msg)
            seen.add(key)

    def collect(self) -> list[dict[str, Any]]:
        """Compute and validate the table without writing anything."""
        records = list(self.get_records())
        self.validate_records(records)
        return records

    def run(self, out_dir: Path) -> RunResult:
        """Compute the table, write `<name>.csv`, extra tables and `<name>.json`."""
        out_dir.mkdir(parents=True, exist_ok=True)
        self.out_dir = out_dir
        self.logger.info("Starting %s experiment", self.name)
        started = time.perf_counter()
        records = self.collect()
        runtime = time.perf_counter() - started

        table = out_dir / f"{self.name}.csv"
        write_csv(table, self.columns, records)
        for suffix, (columns, rows) in self.extra_tables.items():
            write_csv(out_dir / f"{self.name}_{suffix}.csv", columns, rows)

        summary = {
            "experiment": self.name,
            "schema_version": SCHEMA_VERSION,
            "primary_keys": list(self.primary_keys),
            "config": effective_document(self.config),
            "runtime_seconds": runtime,
            "workers": self.workers,
            **self.summary(records),
        }
        summary_path = out_dir / f"{self.name}.json"
        write_summary(summary_path, summary)
        self.logger.info("Finished %s in %.2f s", self.name, runtime)
        return RunResult(table=table, summary_path=summary_path, records=records, summary=summary)
