"""Tests for the built-in Hamiltonian models."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hk_semiclassical.exceptions import ModelError
from hk_semiclassical.hamiltonians import (
    ModelKind,
    PhaseBox,
    check_consistency,
    estimate_delta,
    finite_difference_gradient,
    make_model,
    spectral_norms,
    symplectic_form,
)

coordinates = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


def test_symplectic_form():
    J = symplectic_form(2)
    assert np.array_equal(J.T, -J)
    assert np.array_equal(J @ J, -np.eye(4))


def test_harmonic_value_and_gradient():
    model = make_model("harmonic", omega=2.0)
    X = np.array([[1.0, 0.5]])
    assert model.value(0.0, X)[0] == pytest.approx(0.5 * 4.0 + 0.5 * 0.25)
    assert np.allclose(model.gradient(0.0, X), [[4.0, 0.5]])
    assert model.quadratic
    assert model.split_form is not None


def test_pendulum_hessian():
    model = make_model(ModelKind.PENDULUM, strength=2.0)
    hessian = model.hessian(0.0, np.array([math.pi / 3, 0.7]))
    assert np.allclose(hessian, [[1.0, 0.0], [0.0, 1.0]])
    assert not model.quadratic


def test_quadratic_general_dimension_from_blocks():
    G = np.diag([1.0, 2.0])
    L = np.array([[0.0, 1.0], [0.0, 0.0]])
    model = make_model("quadratic_general", G=G.tolist(), K=np.eye(2).tolist(), L=L.tolist())
    assert model.dim == 2
    assert model.split_form is None
    expected = np.block([[G, L.T], [L, np.eye(2)]])
    assert np.allclose(model.hessian(0.0, np.zeros(4)), expected)


def test_quadratic_general_rejects_asymmetric_block():
    with pytest.raises(ModelError, match="G must be symmetric"):
        make_model("quadratic_general", G=[[1.0, 2.0], [0.0, 1.0]], K=np.eye(2).tolist())


def test_unknown_kind():
    with pytest.raises(ModelError, match="Unknown model kind"):
        make_model("morse")


def test_relativistic_rejects_nonpositive_mass():
    with pytest.raises(ModelError, match="mass"):
        make_model("relativistic", mass=0.0)


def test_subprincipal_is_constant():
    model = make_model("pendulum", subprincipal=0.25)
    values = model.subprincipal(0.0, np.random.default_rng(1).normal(size=(5, 2)))
    assert np.allclose(values, 0.25)


@pytest.mark.parametrize(
    ("kind", "params"),
    [
        ("harmonic", {"omega": 1.0}),
        ("free", {}),
        ("pendulum", {"strength": 1.0}),
    ],
)
def test_estimate_delta_is_one(kind, params):
    model = make_model(kind, **params)
    bound = estimate_delta(model, PhaseBox.centered([0.0, 0.0], 3.0), 11)
    assert bound.delta == pytest.approx(1.0, abs=1e-12)
    assert bound.ehrenfest_coefficient == pytest.approx(0.25)
    assert bound.sample_count == 121


def test_estimate_delta_is_deterministic():
    model = make_model("relativistic", potential="cosine")
    box = PhaseBox.centered([0.0, 0.0, 0.0, 0.0], 1.0)
    assert estimate_delta(model, box, 3).delta == estimate_delta(model, box, 3).delta


def test_estimate_delta_rejects_single_sample():
    with pytest.raises(ModelError):
        estimate_delta(make_model("free"), PhaseBox.centered([0.0, 0.0], 1.0), 1)


def test_spectral_norms_match_numpy():
    matrices = np.random.default_rng(3).normal(size=(6, 4, 4))
    assert np.allclose(spectral_norms(matrices), np.linalg.norm(matrices, ord=2, axis=(-2, -1)), rtol=1e-6)


@pytest.mark.parametrize(
    ("kind", "params"),
    [
        ("harmonic", {"dim": 2, "omega": [1.0, 1.5]}),
        ("pendulum", {"dim": 2}),
        ("relativistic", {"potential": "harmonic"}),
        ("relativistic", {"potential": "cosine", "mass": 0.5}),
        ("relativistic", {"potential": "none"}),
    ],
)
def test_builtin_models_are_consistent(kind, params):
    model = make_model(kind, **params)
    box = PhaseBox.centered(np.zeros(2 * model.dim), 2.0)
    report = check_consistency(model, box, n=4)
    assert report.hessian_asymmetry <= 1e-12
    assert report.gradient_defect <= 1e-8


@settings(max_examples=25, deadline=None)
@given(q=coordinates, p=coordinates)
def test_relativistic_gradient_matches_finite_differences(q, p):
    model = make_model("relativistic", potential="cosine", strength=0.7)
    X = np.array([q, p])
    assert np.allclose(model.gradient(0.0, X), finite_difference_gradient(model, 0.0, X), atol=1e-7)


@settings(max_examples=25, deadline=None)
@given(q=coordinates, p=coordinates)
def test_relativistic_speed_is_subluminal(q, p):
    model = make_model("relativistic", mass=1.0)
    velocity = model.gradient(0.0, np.array([q, p]))[1]
    assert abs(velocity) < 1.0
