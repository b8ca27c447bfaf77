"""CSV and JSON writers for experiment outputs and WaveFunction dumps."""

from __future__ import annotations

import csv
import json
import logging
import platform
from importlib import metadata
from typing import TYPE_CHECKING, Any

import numpy as np

from hk_semiclassical.coherent import PositionGrid, WaveFunction

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence
    from pathlib import Path

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DISTRIBUTIONS = ("hk-semiclassical", "numpy", "scipy", "singer-sdk", "jsonschema", "click")


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> int:
    """Write rows with a leading `schema_version` column.

    Floats are written with `repr`, so identical inputs give identical bytes.

    Returns:
        Number of rows written.
    """
    count = 0
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["schema_version", *columns])
        for row in rows:
            writer.writerow([SCHEMA_VERSION, *(_format(row.get(column)) for column in columns)])
            count += 1
    logger.info("Wrote %d rows to %s", count, path)
    return count


def read_csv(path: Path) -> list[dict[str, str]]:
    """Read a table written by `write_csv`."""
    with path.open(newline="") as handle:
        return list(csv.DictReader(handle))


def package_versions() -> dict[str, str]:
    """Installed versions of the packages that shape the numbers."""
    versions = {"python": platform.python_version()}
    for name in DISTRIBUTIONS:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_summary(path: Path, summary: Mapping[str, Any]) -> None:
    """Write the JSON run summary with `schema_version` and package versions added."""
    document = {"schema_version": SCHEMA_VERSION, "versions": package_versions(), **summary}
    path.write_text(json.dumps(_jsonable(document), indent=2, sort_keys=True) + "\n")
    logger.info("Wrote summary to %s", path)


def dump_wavefunction(psi: WaveFunction, path: Path, **metadata_fields: Any) -> None:
    """Write a WaveFunction as CSV.

    The file starts with `# key: value` metadata lines (schema_version, hbar,
    grid origin/spacing/shape, flags and any extra fields), then a header
    `x1..xd,re,im` and one row per grid point in C order.
    """
    grid = psi.grid
    header = {
        "schema_version": SCHEMA_VERSION,
        "hbar": psi.hbar,
        "origin": grid.origin.tolist(),
        "spacing": grid.spacing.tolist(),
        "shape": list(grid.shape),
        "flags": sorted(psi.flags),
        **metadata_fields,
    }
    points = grid.points()
    with path.open("w", newline="") as handle:
        for key, value in header.items():
            handle.write(f"# {key}: {json.dumps(_jsonable(value))}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([*(f"x{i + 1}" for i in range(grid.dim)), "re", "im"])
        for point, value in zip(points, psi.values):
            writer.writerow([*(repr(float(x)) for x in point), repr(float(value.real)), repr(float(value.imag))])


def read_wavefunction(path: Path) -> WaveFunction:
    """Read a WaveFunction written by `dump_wavefunction`."""
    header: dict[str, Any] = {}
    rows = []
    with path.open(newline="") as handle:
        for line in handle:
            if not line.startswith("# "):
                rows.append(line)
                continue
            key, _, value = line[2:].partition(": ")
            header[key] = json.loads(value)
    table = list(csv.reader(rows))[1:]
    data = np.array(table, dtype=float)
    grid = PositionGrid(
        origin=np.asarray(header["origin"], dtype=float),
        spacing=np.asarray(header["spacing"], dtype=float),
        shape=tuple(header["shape"]),
    )
    values = data[:, -2] + 1j * data[:, -1]
    return WaveFunction(grid, values, float(header["hbar"]), frozenset(header.get("flags", [])))

