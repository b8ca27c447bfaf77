"""Tests for the exact Gaussian and split-step reference propagators."""

import math

import numpy as np
import pytest

from hk_semiclassical.classical_flow import PhasePoint
from hk_semiclassical.coherent import PositionGrid, SiegelMatrix, coherent_state
from hk_semiclassical.exceptions import BoundaryError, ModelError, ReferenceSolverError
from hk_semiclassical.hamiltonians import make_model
from hk_semiclassical.reference import (
    SplitStepSolver,
    exact_quadratic_apply,
    exact_quadratic_coherent,
    split_step_propagate,
    split_step_series,
)

HBAR = 0.1
GRID = PositionGrid.from_bounds([-6.0], [6.0], 256)
IDENTITY = SiegelMatrix.identity(1)


def test_ground_state_picks_up_zero_point_phase():
    state = exact_quadratic_coherent(make_model("harmonic"), PhasePoint.of([0.0], [0.0]), IDENTITY, 1.3, HBAR)
    assert state.amplitude == pytest.approx(np.exp(-0.65j), abs=1e-9)
    assert state.width.entries[0, 0] == pytest.approx(1j, abs=1e-9)


def test_full_period_negates_the_state():
    z0 = PhasePoint.of([1.0], [0.0])
    psi0 = coherent_state(z0, IDENTITY, HBAR, GRID)
    state = exact_quadratic_coherent(make_model("harmonic"), z0, IDENTITY, 2.0 * math.pi, HBAR)
    assert state.amplitude == pytest.approx(-1.0, abs=1e-8)
    assert state.to_wavefunction(GRID).l2_distance(psi0.scaled(-1.0)) <= 1e-8


def test_zero_duration_is_identity():
    z0 = PhasePoint.of([0.3], [-0.2])
    psi0 = coherent_state(z0, IDENTITY, HBAR, GRID)
    state = exact_quadratic_coherent(make_model("free"), z0, IDENTITY, 0.0, HBAR)
    assert state.to_wavefunction(GRID).l2_distance(psi0) <= 1e-12


def test_apply_matches_coherent_evolution():
    model = make_model("harmonic", omega=1.5)
    z0 = PhasePoint.of([0.5], [0.5])
    psi0 = coherent_state(z0, IDENTITY, HBAR, GRID)
    exact = exact_quadratic_coherent(model, z0, IDENTITY, 0.8, HBAR).to_wavefunction(GRID)
    applied = exact_quadratic_apply(model, psi0, 0.8, gamma_decomp=SiegelMatrix.scaled(1, 2.0))
    assert applied.l2_distance(exact) <= 1e-6


def test_exact_solver_rejects_nonquadratic_model():
    with pytest.raises(ModelError, match="not quadratic"):
        exact_quadratic_coherent(make_model("pendulum"), PhasePoint.of([0.0], [1.0]), IDENTITY, 1.0, HBAR)


def test_split_step_agrees_with_exact_harmonic():
    model = make_model("harmonic")
    z0 = PhasePoint.of([1.0], [0.0])
    psi0 = coherent_state(z0, IDENTITY, HBAR, GRID)
    exact = exact_quadratic_coherent(model, z0, IDENTITY, 1.0, HBAR).to_wavefunction(GRID)
    assert split_step_propagate(model, psi0, 1.0, steps=1000).l2_distance(exact) <= 1e-6


def test_split_step_free_particle_matches_spreading_gaussian():
    model = make_model("free")
    z0 = PhasePoint.of([0.0], [0.0])
    psi0 = coherent_state(z0, IDENTITY, HBAR, GRID)
    exact = exact_quadratic_coherent(model, z0, IDENTITY, 1.0, HBAR).to_wavefunction(GRID)
    assert split_step_propagate(model, psi0, 1.0, steps=1000).l2_distance(exact) <= 1e-8


def test_split_step_zero_duration_returns_input():
    psi0 = coherent_state(PhasePoint.of([0.0], [1.0]), IDENTITY, HBAR, GRID)
    assert split_step_propagate(make_model("pendulum"), psi0, 0.0).l2_distance(psi0) == 0.0


def test_split_step_is_unitary():
    psi0 = coherent_state(PhasePoint.of([0.0], [1.0]), IDENTITY, HBAR, GRID)
    evolved = split_step_propagate(make_model("pendulum"), psi0, 1.0, steps=1000)
    assert evolved.l2_norm() == pytest.approx(psi0.l2_norm(), abs=1e-12)


def test_split_step_is_second_order_in_dt():
    model = make_model("pendulum")
    psi0 = coherent_state(PhasePoint.of([0.0], [1.0]), IDENTITY, HBAR, GRID)
    coarse, medium, fine = (split_step_propagate(model, psi0, 1.0, steps=n) for n in (50, 100, 200))
    ratio = coarse.l2_distance(medium) / medium.l2_distance(fine)
    assert ratio == pytest.approx(4.0, rel=0.05)


def test_split_step_series_matches_single_run():
    model = make_model("pendulum")
    psi0 = coherent_state(PhasePoint.of([0.0], [1.0]), IDENTITY, HBAR, GRID)
    series = split_step_series(model, psi0, [0.0, 0.5, 1.0])
    assert series[0].l2_distance(psi0) == 0.0
    assert series[-1].l2_distance(split_step_propagate(model, psi0, 1.0)) <= 1e-10
    assert series[-1].l2_norm() == pytest.approx(1.0, abs=1e-10)


def test_split_step_subprincipal_phase():
    psi0 = coherent_state(PhasePoint.of([0.0], [1.0]), IDENTITY, HBAR, GRID)
    plain = split_step_propagate(make_model("pendulum"), psi0, 1.0)
    shifted = split_step_propagate(make_model("pendulum", subprincipal=0.5), psi0, 1.0)
    assert shifted.l2_distance(plain.scaled(np.exp(-0.5j))) <= 1e-12


def test_split_step_detects_boundary():
    psi0 = coherent_state(PhasePoint.of([0.0], [2.0]), IDENTITY, HBAR, GRID)
    with pytest.raises(BoundaryError, match="boundary"):
        split_step_propagate(make_model("free"), psi0, 2.5)


def test_split_step_requires_split_form():
    model = make_model("quadratic_general", G=[[1.0]], K=[[1.0]], L=[[0.5]])
    with pytest.raises(ReferenceSolverError, match="split form"):
        SplitStepSolver(model, GRID, HBAR)
