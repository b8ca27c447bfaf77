"""Tests for coherent states, the FB transform and branch tracking."""

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hk_semiclassical.classical_flow import PhasePoint, integrate_flow
from hk_semiclassical.coherent import (
    FLAG_COVERAGE,
    BranchTracker,
    PhaseGrid,
    PositionGrid,
    SiegelMatrix,
    build_quadrature,
    coherent_state,
    fb_inverse,
    fb_transform,
    gamma_update,
    gaussian_tail,
    overlap,
)
from hk_semiclassical.exceptions import (
    BranchAmbiguityError,
    GridAdequacyError,
    QuadratureError,
    SiegelError,
)
from hk_semiclassical.hamiltonians import make_model

HBAR = 0.1
GRID = PositionGrid.from_bounds([-6.0], [6.0], 256)
IDENTITY = SiegelMatrix.identity(1)


def test_siegel_matrix_symmetrizes():
    gamma = SiegelMatrix(np.array([[1j, 0.2], [0.0, 2j]]))
    assert np.allclose(gamma.entries, [[1j, 0.1], [0.1, 2j]])
    assert gamma.normalization == pytest.approx(2.0**0.25)


@pytest.mark.parametrize("entries", [[[0.5]], [[1.0 - 1j]], [[1j, 0.0], [0.0, 0.0]]])
def test_siegel_matrix_rejects_nonpositive_imaginary_part(entries):
    with pytest.raises(SiegelError):
        SiegelMatrix(np.array(entries, dtype=complex))


@pytest.mark.parametrize(
    ("value", "expected"),
    [
        (None, [[1j, 0.0], [0.0, 1j]]),
        (2.0, [[2j, 0.0], [0.0, 2j]]),
        ({"scale": 0.5}, [[0.5j, 0.0], [0.0, 0.5j]]),
        ({"re": 0.5, "im": 3.0}, [[0.5 + 3j, 0.0], [0.0, 0.5 + 3j]]),
        ({"re": [[0.0, 0.1], [0.1, 0.0]]}, [[1j, 0.1], [0.1, 1j]]),
    ],
)
def test_siegel_matrix_parse(value, expected):
    assert np.allclose(SiegelMatrix.parse(value, 2).entries, expected)


def test_position_grid_bounds_and_weights():
    grid = PositionGrid.from_bounds([-1.0, 0.0], [1.0, 3.0], [5, 4])
    assert np.allclose(grid.spacing, [0.5, 1.0])
    assert np.allclose(grid.upper, [1.0, 3.0])
    assert grid.size == 20
    assert grid.points().shape == (20, 2)
    assert grid.weights().sum() == pytest.approx(6.0)


def test_position_grid_rejects_inverted_bounds():
    with pytest.raises(GridAdequacyError):
        PositionGrid.from_bounds([1.0], [0.0], 8)


@pytest.mark.parametrize(("q", "p"), [(0.0, 0.0), (1.0, -1.5), (-2.0, 2.0)])
def test_coherent_state_is_normalized(q, p):
    psi = coherent_state(PhasePoint.of([q], [p]), IDENTITY, HBAR, GRID)
    assert psi.l2_norm() == pytest.approx(1.0, abs=1e-10)


def test_coherent_state_rejects_truncation():
    with pytest.raises(GridAdequacyError, match="truncates"):
        coherent_state(PhasePoint.of([5.9], [0.0]), IDENTITY, HBAR, GRID)


def test_inner_product_conjugates_second_argument():
    psi = coherent_state(PhasePoint.of([0.3], [0.4]), IDENTITY, HBAR, GRID)
    assert psi.inner(psi.scaled(2j)) == pytest.approx(-2j, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(
    X=st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)),
    z=st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)),
)
def test_overlap_matches_quadrature(X, z):
    first = coherent_state(PhasePoint.from_vector(X), IDENTITY, HBAR, GRID)
    second = coherent_state(PhasePoint.from_vector(z), IDENTITY, HBAR, GRID)
    assert first.inner(second) == pytest.approx(complex(overlap(X, z, HBAR)), abs=1e-10)


def test_gaussian_tail():
    assert gaussian_tail(np.array(0.0), 1.0, -1.959963984540054, 1.959963984540054) == pytest.approx(0.05)
    assert gaussian_tail(np.array(0.0), 1.0, -np.inf, np.inf) == 0.0


def test_lattice_shape_and_boundary():
    zgrid = PhaseGrid.lattice([0.0, 1.0], [1.0, 0.5], 0.5)
    assert zgrid.shape == (5, 3)
    assert zgrid.size == 15
    assert zgrid.weights.sum() == pytest.approx(zgrid.volume)
    assert np.count_nonzero(zgrid.boundary_mask()) == 12
    assert np.allclose(zgrid.node(0).vector, [-1.0, 0.5])


@pytest.mark.parametrize(
    ("q", "p", "gamma"),
    [
        (0.0, 1.0, IDENTITY),
        (0.5, -0.5, SiegelMatrix.scaled(1, 2.0)),
        (-0.5, 0.0, SiegelMatrix(np.array([[0.3 + 0.8j]]))),
    ],
)
def test_fb_round_trip_and_parseval(q, p, gamma):
    psi = coherent_state(PhasePoint.of([q], [p]), SiegelMatrix.scaled(1, 1.5), HBAR, GRID)
    zgrid = build_quadrature(psi, gamma)
    assert zgrid.coverage >= zgrid.coverage_target
    field = fb_transform(psi, gamma, zgrid)
    assert abs(np.sum(zgrid.weights * np.abs(field) ** 2) - psi.l2_norm() ** 2) <= 1e-6
    assert fb_inverse(field, gamma, zgrid, GRID, HBAR).l2_distance(psi) <= 1e-6


def test_fb_transform_of_coherent_state_is_overlap():
    z0 = np.array([0.2, 0.5])
    psi = coherent_state(PhasePoint.from_vector(z0), IDENTITY, HBAR, GRID)
    zgrid = PhaseGrid.lattice(z0, 0.5, 0.25)
    field = fb_transform(psi, IDENTITY, zgrid)
    expected = (2.0 * math.pi * HBAR) ** -0.5 * overlap(z0, zgrid.nodes, HBAR)
    assert np.allclose(field, expected, atol=1e-10)


def test_quadrature_is_seeded():
    psi = coherent_state(PhasePoint.of([0.0], [1.0]), IDENTITY, HBAR, GRID)
    plain = build_quadrature(psi, IDENTITY)
    first = build_quadrature(psi, IDENTITY, rng=np.random.default_rng(7))
    second = build_quadrature(psi, IDENTITY, rng=np.random.default_rng(7))
    assert np.array_equal(first.nodes, second.nodes)
    assert not np.array_equal(first.nodes, plain.nodes)


def test_quadrature_spacing_respects_density():
    psi = coherent_state(PhasePoint.of([0.0], [0.0]), IDENTITY, HBAR, GRID)
    zgrid = build_quadrature(psi, IDENTITY, density=2.0)
    assert np.all(zgrid.spacing <= math.sqrt(HBAR) / 2.0 * (1.0 + 1e-8))


def test_quadrature_radius_limit():
    psi = coherent_state(PhasePoint.of([0.0], [0.0]), IDENTITY, HBAR, GRID)
    with pytest.raises(QuadratureError):
        build_quadrature(psi, IDENTITY, max_radius=2.05)


def test_fb_inverse_flags_low_coverage(caplog):
    psi = coherent_state(PhasePoint.of([0.0], [0.0]), IDENTITY, HBAR, GRID)
    zgrid = PhaseGrid.lattice([0.0, 0.0], 0.3, 0.1, coverage=0.5)
    field = fb_transform(psi, IDENTITY, zgrid)
    with caplog.at_level(logging.WARNING):
        result = fb_inverse(field, IDENTITY, zgrid, GRID, HBAR)
    assert FLAG_COVERAGE in result.flags
    assert "coverage" in caplog.text


def test_free_gamma_update():
    record = integrate_flow(make_model("free"), PhasePoint.of([0.0], [0.0]), 0.0, 1.0, steps=10)
    assert gamma_update(record.final, IDENTITY).entries[0, 0] == pytest.approx(0.5 + 0.5j)


def test_harmonic_gamma_update_fixed_point():
    record = integrate_flow(make_model("harmonic"), PhasePoint.of([1.0], [0.0]), 0.0, 2.0)
    assert gamma_update(record.final, IDENTITY).entries[0, 0] == pytest.approx(1j, abs=1e-10)


def test_branch_tracker_full_rotation():
    tracker = BranchTracker(1.0)
    for angle in np.linspace(0.0, 2.0 * math.pi, 65)[1:]:
        tracker.update(np.exp(1j * angle))
    assert tracker.roots[0] == pytest.approx(-1.0)
    assert tracker.argument[0] == pytest.approx(math.pi)


def test_branch_tracker_rejects_large_rotation():
    tracker = BranchTracker(1.0)
    with pytest.raises(BranchAmbiguityError):
        tracker.update(np.exp(2j))


def test_branch_tracker_rejects_zero():
    tracker = BranchTracker([1.0, 1.0])
    with pytest.raises(BranchAmbiguityError, match="zero"):
        tracker.update([1.0, 0.0])
