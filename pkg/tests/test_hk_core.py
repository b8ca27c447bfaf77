"""Tests for the HK prefactor, propagator and kernel diagnostics."""

import math

import numpy as np
import pytest

from hk_semiclassical.classical_flow import PhasePoint, integrate_flow
from hk_semiclassical.coherent import PhaseGrid, PositionGrid, SiegelMatrix, coherent_state, overlap
from hk_semiclassical.exceptions import BranchAmbiguityError
from hk_semiclassical.hamiltonians import make_model
from hk_semiclassical.hk_core import (
    HKConfig,
    HKPropagator,
    ThetaMode,
    fb_kernel_diagnostic,
    frozen_det_arg,
    hk_prefactor_frozen,
    hk_prefactor_general,
    hk_propagate,
    m_matrix,
    schur_norm_bound,
)
from hk_semiclassical.reference import exact_quadratic_coherent

HBAR = 0.1
GRID = PositionGrid.from_bounds([-6.0], [6.0], 256)
IDENTITY = SiegelMatrix.identity(1)


def harmonic_record(t, steps=None):
    return integrate_flow(make_model("harmonic"), PhasePoint.of([1.0], [0.0]), 0.0, t, steps)


@pytest.mark.parametrize(
    ("t", "expected"),
    [(0.0, math.sqrt(2.0)), (math.pi, -1j * math.sqrt(2.0)), (2.0 * math.pi, -math.sqrt(2.0))],
)
def test_frozen_prefactor_follows_harmonic_branch(t, expected):
    prefactors = hk_prefactor_frozen(harmonic_record(t))
    assert prefactors[-1].value == pytest.approx(expected, abs=1e-9)
    assert prefactors[-1].det_arg == pytest.approx(2.0 * np.exp(-1j * t), abs=1e-9)


def test_frozen_prefactor_free_particle():
    record = integrate_flow(make_model("free"), PhasePoint.of([0.0], [1.0]), 0.0, 3.0, steps=30)
    for prefactor in hk_prefactor_frozen(record):
        assert prefactor.det_arg == pytest.approx(2.0 - 1j * prefactor.t)
        assert prefactor.value == pytest.approx(np.sqrt(2.0 - 1j * prefactor.t))


def test_frozen_prefactor_rejects_coarse_steps_without_model():
    with pytest.raises(BranchAmbiguityError):
        hk_prefactor_frozen(harmonic_record(2.0 * math.pi, steps=3))


def test_frozen_prefactor_refines_coarse_steps():
    model = make_model("harmonic")
    coarse = integrate_flow(model, PhasePoint.of([1.0], [0.0]), 0.0, 2.0 * math.pi, steps=3)
    prefactors = hk_prefactor_frozen(coarse, model=model)
    assert len(prefactors) == 7
    assert prefactors[-1].value == pytest.approx(-math.sqrt(2.0), abs=0.1)


def test_prefactor_paths_are_step_robust():
    model = make_model("pendulum")
    z0 = PhasePoint.of([0.3], [1.2])
    coarse = integrate_flow(model, z0, 0.0, 3.0, steps=300)
    fine = integrate_flow(model, z0, 0.0, 3.0, steps=600)
    cfg = HKConfig.create(1, ThetaMode.THAWED, gamma=SiegelMatrix.scaled(1, 2.0))
    for prefactor in (hk_prefactor_frozen, lambda record: hk_prefactor_general(record, cfg)):
        a, b = prefactor(coarse), prefactor(fine)
        assert len(b) == 2 * len(a) - 1
        assert max(abs(p.value - q.value) for p, q in zip(a, b[::2])) < 1e-6


@pytest.mark.parametrize("hbar", [0.1, 0.05])
def test_pendulum_propagation_nearly_conserves_norm(hbar):
    grid = PositionGrid.from_bounds([-8.0], [8.0], 1024)
    psi0 = coherent_state(PhasePoint.of([0.0], [1.0]), IDENTITY, hbar, grid)
    result = hk_propagate(make_model("pendulum"), psi0, 1.0, HKConfig.create(1))
    assert abs(result.l2_norm() - psi0.l2_norm()) <= hbar


def test_general_prefactor_matches_frozen():
    record = harmonic_record(4.0)
    frozen = hk_prefactor_frozen(record)
    general = hk_prefactor_general(record, HKConfig.create(1))
    assert len(frozen) == len(general)
    for a, b in zip(frozen[::400], general[::400]):
        assert b.value == pytest.approx(a.value, abs=1e-9)
        assert b.det_arg == pytest.approx(a.det_arg, abs=1e-9)


def test_frozen_det_arg_at_start():
    initial = harmonic_record(0.0).final
    assert frozen_det_arg(initial) == pytest.approx(2.0)


@pytest.mark.parametrize(("theta", "expected"), [(IDENTITY, -2j), (SiegelMatrix.scaled(1, 2.0), -3j)])
def test_m_matrix_at_start(theta, expected):
    initial = harmonic_record(0.0).final
    assert m_matrix(initial, theta, IDENTITY)[0, 0] == pytest.approx(expected)


def test_config_calibration_and_validation():
    cfg = HKConfig.create(1)
    assert cfg.theta_mode is ThetaMode.FROZEN_II
    assert cfg.normalization == pytest.approx(np.exp(0.25j * math.pi))
    assert HKConfig.create(1, "constant", gamma=SiegelMatrix.scaled(1, 2.0)).theta.entries[0, 0] == 2j
    with pytest.raises(ValueError, match="leading order"):
        HKConfig.create(1, order=1)
    with pytest.raises(ValueError, match="dimension"):
        HKConfig.create(2, gamma=IDENTITY)


def test_identity_at_initial_time():
    psi0 = coherent_state(PhasePoint.of([0.5], [1.0]), IDENTITY, HBAR, GRID)
    result = hk_propagate(make_model("pendulum"), psi0, 0.0, HKConfig.create(1))
    assert result.l2_distance(psi0) <= 1e-6


@pytest.mark.parametrize(
    ("mode", "gamma"),
    [
        (ThetaMode.FROZEN_II, IDENTITY),
        (ThetaMode.CONSTANT, SiegelMatrix.scaled(1, 2.0)),
        (ThetaMode.THAWED, SiegelMatrix.scaled(1, 2.0)),
    ],
)
def test_harmonic_propagation_is_exact(mode, gamma):
    model = make_model("harmonic")
    z0 = PhasePoint.of([1.0], [0.0])
    psi0 = coherent_state(z0, IDENTITY, HBAR, GRID)
    result = hk_propagate(model, psi0, 1.0, HKConfig.create(1, mode, gamma=gamma))
    exact = exact_quadratic_coherent(model, z0, IDENTITY, 1.0, HBAR).to_wavefunction(GRID)
    assert result.l2_distance(exact) <= 1e-6


def test_series_matches_single_propagation():
    model = make_model("pendulum")
    psi0 = coherent_state(PhasePoint.of([0.0], [1.0]), IDENTITY, HBAR, GRID)
    propagator = HKPropagator(model, HKConfig.create(1))
    zgrid = propagator.phase_grid(psi0)
    series = propagator.propagate_series(psi0, [0.5, 1.0], phase_grid=zgrid)
    single = propagator.propagate(psi0, 1.0, phase_grid=zgrid)
    assert [result.t for result in series] == [0.5, 1.0]
    assert series[-1].wavefunction.l2_distance(single.wavefunction) <= 1e-10
    assert series[-1].node_count == zgrid.size
    assert series[-1].output_coverage == pytest.approx(1.0)


def test_series_rejects_decreasing_times():
    psi0 = coherent_state(PhasePoint.of([0.0], [0.0]), IDENTITY, HBAR, GRID)
    propagator = HKPropagator(make_model("harmonic"), HKConfig.create(1))
    with pytest.raises(ValueError, match="nondecreasing"):
        propagator.propagate_series(psi0, [1.0, 0.5])


def test_operator_is_linear_and_maps_nodes():
    t = 0.5
    propagator = HKPropagator(make_model("harmonic"), HKConfig.create(1))
    zgrid = PhaseGrid.lattice([0.0, 0.5], 2.5, math.sqrt(HBAR) / 4.0)
    operator = propagator.operator(t, zgrid)

    first = coherent_state(PhasePoint.of([0.0], [0.0]), IDENTITY, HBAR, GRID)
    second = coherent_state(PhasePoint.of([0.5], [1.0]), IDENTITY, HBAR, GRID)
    combined = operator(first + second.scaled(2j))
    separate = operator(first) + operator(second).scaled(2j)
    assert combined.l2_distance(separate) <= 1e-10

    q, p = zgrid.nodes[:, 0], zgrid.nodes[:, 1]
    rotated = np.stack([q * math.cos(t) + p * math.sin(t), p * math.cos(t) - q * math.sin(t)], axis=-1)
    assert np.allclose(operator.flow_map(), rotated, atol=1e-10)


def test_identity_kernel_decays_off_graph():
    x_nodes = np.array([[0.0, 0.0], [0.5, 0.5]])
    y_grid = PhaseGrid.lattice([0.0, 0.0], 2.0, 0.25)
    report = fb_kernel_diagnostic(lambda psi: psi, lambda X: X, x_nodes, y_grid.nodes, HBAR, GRID)
    assert report.peak == pytest.approx(1.0 / (2.0 * math.pi * HBAR), rel=1e-8)
    assert report.max_abs[0] == pytest.approx(report.peak)
    assert np.allclose(report.peak_distances, 0.0)
    assert report.monotone
    assert report.offgraph_ratio(5.0) < 0.01
    assert sum(row["count"] for row in report.rows()) == len(x_nodes) * y_grid.size
    assert [row["peak_bin"] for row in report.peak_rows()] == [0, 0]


def test_schur_bound_of_identity():
    x_grid = PhaseGrid.lattice([0.0, 0.0], 0.5, 0.25)
    y_grid = PhaseGrid.lattice([0.0, 0.0], 4.5, 0.1)
    raw = np.abs(overlap(x_grid.nodes[:, None, :], y_grid.nodes[None, :, :], HBAR))
    assert schur_norm_bound(raw, x_grid, y_grid, HBAR) == pytest.approx(2.0, rel=1e-6)


def test_schur_bound_rejects_mismatched_shape():
    grid = PhaseGrid.lattice([0.0, 0.0], 0.5, 0.25)
    with pytest.raises(ValueError, match="does not match"):
        schur_norm_bound(np.ones((2, 3)), grid, grid, HBAR)
