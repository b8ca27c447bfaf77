"""hk-semiclassical entry point."""

from __future__ import annotations

from hk_semiclassical.cli import cli

cli()
