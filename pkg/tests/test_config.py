"""Tests for configuration parsing and validation."""

import json

import pytest

from hk_semiclassical.coherent import DEFAULT_COVERAGE_TARGET
from hk_semiclassical.config import (
    apply_overrides,
    build_config,
    effective_document,
    load_config,
    parse_config,
)
from hk_semiclassical.exceptions import ConfigError
from hk_semiclassical.hk_core import ThetaMode

MINIMAL = {"model": {"kind": "harmonic"}}


def config_with(**sections):
    return {**MINIMAL, **sections}


def test_minimal_config_defaults():
    config = build_config(MINIMAL)
    assert config.model.kind == "harmonic"
    assert config.model.dim == 1
    assert config.hbar == 0.1
    assert config.hbar_ladder == (0.1,)
    assert config.time.steps_per_unit_time == 1000
    assert config.time.sample_times == (1.0,)
    assert config.time.horizon == 1.0
    assert config.quadrature.coverage_target == DEFAULT_COVERAGE_TARGET
    assert config.hk.theta_mode == ThetaMode.FROZEN_II.value
    assert config.comparison.gamma.entries[0, 0] == 2j
    assert config.reference.solver == "auto"
    assert config.kernel.x_center == (0.0, 0.0)
    assert config.workers == 1


def test_effective_document_lists_every_section():
    document = effective_document(build_config(MINIMAL))
    assert document["grid"]["points"] == [1024]
    assert document["ehrenfest"]["threshold"] == 0.1
    assert document["model"]["dim"] == 1


def test_vectors_broadcast_to_dimension():
    config = build_config(
        {"model": {"kind": "pendulum", "dim": 2}, "initial_state": {"q": [0.5], "p": [0.0, 1.0]}}
    )
    assert config.initial_state.q == (0.5, 0.5)
    assert config.grid.points == (1024, 1024)
    assert config.initial_state.point.vector.tolist() == [0.5, 0.5, 0.0, 1.0]


def test_hk_config_from_sections():
    config = build_config(config_with(hk={"theta_mode": "thawed", "gamma": {"scale": 2.0}}))
    cfg = config.hk_config()
    assert cfg.theta_mode is ThetaMode.THAWED
    assert cfg.gamma.entries[0, 0] == 2j
    assert config.hk_config(comparison=True).theta_mode is ThetaMode.CONSTANT


@pytest.mark.parametrize(
    ("document", "key", "message"),
    [
        (config_with(foo=1), "<root>", "foo"),
        ({"model": {"kind": "harmonic", "omgea": 2.0}}, "model", "omgea"),
        ({"model": {"kind": "morse"}}, "model.kind", "morse"),
        ({}, "<root>", "model"),
        (config_with(hbar_ladder=[0.1, 0.2]), "hbar_ladder", "strictly decreasing"),
        (config_with(hbar_ladder=[0.1, -0.05]), "hbar_ladder", "positive"),
        (config_with(hbar=0), "hbar", "positive"),
        (config_with(ehrenfest={"threshold": 0}), "ehrenfest.threshold", "positive"),
        (config_with(time={"t": 2.0, "horizon": 1.0}), "time.t", "outside"),
        (config_with(time={"t": 1.0, "sample_times": [0.5, 0.2]}), "time.sample_times", "nondecreasing"),
        (config_with(quadrature={"coverage_target": 1.0}), "quadrature.coverage_target", "(0, 1)"),
        (config_with(initial_state={"q": [0.0, 1.0]}), "initial_state.q", "expected 1 entries"),
        (config_with(initial_state={"width": {"scale": -1.0}}), "initial_state.width", "positive definite"),
        (config_with(grid={"lower": [1.0], "upper": [0.0]}), "grid", "must exceed"),
        (config_with(workers=0), "workers", "at least 1"),
        ({"model": {"kind": "relativistic", "mass": 0.0}}, "model", "mass"),
    ],
)
def test_invalid_config_names_the_key(document, key, message):
    with pytest.raises(ConfigError) as excinfo:
        build_config(document)
    assert excinfo.value.key == key
    assert message in str(excinfo.value)


@pytest.mark.parametrize("experiment", ["scaling", "phase-invariance", "ehrenfest"])
def test_short_ladder_rejected_for_studies(experiment):
    document = config_with(hbar_ladder=[0.1, 0.05])
    with pytest.raises(ConfigError) as excinfo:
        build_config(document, experiment)
    assert excinfo.value.key == "hbar_ladder"
    assert build_config(document, "propagate").hbar_ladder == (0.1, 0.05)


def test_ehrenfest_sweep_times():
    config = build_config(config_with(ehrenfest={"max_horizon": 1.0, "time_step": 0.25}))
    assert config.ehrenfest.times == pytest.approx((0.25, 0.5, 0.75, 1.0))


def test_overrides_apply_dotted_keys():
    document = apply_overrides(MINIMAL, {"output.directory": "runs", "seed": 7, "workers": None})
    assert document == {"model": {"kind": "harmonic"}, "output": {"directory": "runs"}, "seed": 7}
    assert MINIMAL == {"model": {"kind": "harmonic"}}

    config = build_config(document).with_overrides({"grid.points": [512]})
    assert config.grid.points == (512,)
    assert config.output.directory == "runs"
    assert config.seed == 7


def test_parse_config_rejects_bad_json():
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config("{model: 1}")
    with pytest.raises(ConfigError, match="JSON object"):
        parse_config("[]")


def test_load_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_with(hbar=0.05)))
    config = load_config(path, overrides={"workers": 2})
    assert config.hbar == 0.05
    assert config.workers == 2
    assert config.document["workers"] == 2
