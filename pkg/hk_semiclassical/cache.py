"""On-disk cache of reference solutions."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import platformdirs

if TYPE_CHECKING:
    from numpy.typing import NDArray

logger = logging.getLogger(__name__)

APP_NAME = "hk-semiclassical"


def job_key(description: dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a job description."""
    canonical = json.dumps(description, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


class ReferenceCache:
    """Reference wavefunction samples stored as `.npz` files, one per job key."""

    def __init__(self, directory: Path | None = None) -> None:
        """Initialize the cache.

        Args:
            directory: Cache location; the user cache dir when omitted.
        """
        if directory is None:
            directory = Path(platformdirs.user_cache_dir(APP_NAME, ensure_exists=True)) / "reference"
        directory.mkdir(parents=True, exist_ok=True)
        self.directory = directory

    def path(self, description: dict[str, Any]) -> Path:
        """File holding the entry for `description`."""
        return self.directory / f"{job_key(description)}.npz"

    def get(self, description: dict[str, Any]) -> NDArray[np.complex128] | None:
        """Cached samples, or None on a miss or an unreadable entry."""
        path = self.path(description)
        if not path.exists():
            return None
        try:
            with np.load(path) as data:
                values = data["values"]
        except (OSError, KeyError, ValueError):
            logger.warning("Ignoring unreadable cache entry %s", path)
            return None
        logger.info("Using reference solution from cache: %s", path)
        return values

    def put(self, description: dict[str, Any], values: NDArray[np.complex128]) -> Path:
        """Store samples for `description`."""
        path = self.path(description)
        partial = path.with_suffix(".tmp.npz")
        np.savez(partial, values=np.asarray(values, dtype=complex))
        partial.replace(path)
        logger.debug("Cached reference solution at %s", path)
        return path
