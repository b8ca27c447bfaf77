"""End-to-end convergence studies on the bundled example configuration.

These take minutes; run them with ``pytest -m slow``.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from hk_semiclassical.classical_flow import (
    EnsembleState,
    PhasePoint,
    integrate_ensemble,
    integrate_flow,
    symplectic_defect,
)
from hk_semiclassical.coherent import PositionGrid, SiegelMatrix, coherent_state
from hk_semiclassical.config import build_config
from hk_semiclassical.experiments import (
    run_ehrenfest,
    run_inspect_kernel,
    run_phase_invariance,
    run_scaling_study,
)
from hk_semiclassical.hamiltonians import make_model, symplectic_form
from hk_semiclassical.hk_core import HKConfig, HKPropagator, hk_prefactor_frozen, hk_propagate
from hk_semiclassical.reference import exact_quadratic_apply

pytestmark = pytest.mark.slow

EXAMPLE = json.loads((Path(__file__).parent.parent / "config.example.json").read_text())
HBAR = 0.1
GRID = PositionGrid.from_bounds([-8.0], [8.0], 1024)
IDENTITY = SiegelMatrix.identity(1)


def example_config(experiment=None, **sections):
    return build_config({**EXAMPLE, **sections}, experiment)


@pytest.mark.parametrize("t", [math.pi / 4, math.pi / 2, math.pi, 2.0 * math.pi])
def test_harmonic_propagation_is_exact_over_a_period(t):
    model = make_model("harmonic")
    psi0 = coherent_state(PhasePoint.of([1.0], [0.5]), IDENTITY, HBAR, GRID)
    result = hk_propagate(model, psi0, t, HKConfig.create(1))
    assert result.l2_distance(exact_quadratic_apply(model, psi0, t)) <= 1e-5


def test_full_harmonic_period_negates_the_state():
    psi0 = coherent_state(PhasePoint.of([1.0], [0.0]), IDENTITY, HBAR, GRID)
    evolved = exact_quadratic_apply(make_model("harmonic"), psi0, 2.0 * math.pi)
    assert evolved.l2_distance(psi0.scaled(-1.0)) <= 1e-8


def test_identity_at_initial_time_for_random_states():
    rng = np.random.default_rng(0)
    model = make_model("pendulum")
    for q, p in rng.uniform(-1.5, 1.5, size=(5, 2)):
        psi0 = coherent_state(PhasePoint.of([q], [p]), IDENTITY, HBAR, GRID)
        assert hk_propagate(model, psi0, 0.0, HKConfig.create(1)).l2_distance(psi0) <= 1e-6


def test_pendulum_orbits_keep_prefactor_symplecticity_and_energy():
    model = make_model("pendulum")
    starts = np.random.default_rng(1).uniform(-1.0, 1.0, size=(100, 2))
    J = symplectic_form(1)
    energy0 = model.value(0.0, starts)
    worst = {"det": np.inf, "defect": 0.0, "energy": 0.0}

    def observe(state):
        A, B, C, D = state.blocks()
        det_arg = np.linalg.det(A + D + 1j * (C - B))
        F = state.stability
        defect = np.linalg.norm(np.swapaxes(F, -1, -2) @ J @ F - J, axis=(1, 2))
        worst["det"] = min(worst["det"], float(np.min(np.abs(det_arg))))
        worst["defect"] = max(worst["defect"], float(np.max(defect)))
        worst["energy"] = max(worst["energy"], float(np.max(np.abs(model.value(state.t, state.z) - energy0))))

    final = integrate_ensemble(model, EnsembleState.initial(starts, 0.0), 10.0, 10_000, observer=observe)
    assert worst["det"] >= 2.0 * (1.0 - 1e-6)
    assert worst["defect"] <= 1e-8
    assert worst["energy"] <= 1e-8
    assert max(symplectic_defect(final.member(i)) for i in range(final.size)) <= 1e-8

    for q, p in starts:
        record = integrate_flow(model, PhasePoint.of([q], [p]), 0.0, 10.0)
        for prefactor in hk_prefactor_frozen(record, model):
            assert abs(prefactor.value**2 - prefactor.det_arg) <= 1e-10 * abs(prefactor.det_arg)


def test_pendulum_error_is_first_order_in_hbar():
    study = run_scaling_study(example_config("scaling"))
    hbars, errors = study.table.series(1.0)
    assert hbars == [0.1, 0.05, 0.025, 0.0125]
    assert all(a > b for a, b in zip(errors, errors[1:]))
    assert 0.8 <= study.fit.slope <= 1.2


def test_phase_choices_agree_to_first_order():
    study = run_phase_invariance(example_config("phase-invariance"))
    assert 0.7 <= study.fit.slope <= 1.3


def test_ehrenfest_time_grows_as_hbar_shrinks():
    result = run_ehrenfest(example_config("ehrenfest", hbar_ladder=[0.1, 0.05, 0.025]))
    assert result.fit.monotone
    assert result.fit.crossed >= 1
    assert result.fit.coefficient > 0


def test_pendulum_kernel_concentrates_on_the_graph():
    config = example_config("inspect-kernel")
    result = run_inspect_kernel(config)
    nodes = EnsembleState.initial(result.report.x_nodes, config.time.t0)
    flow = integrate_ensemble(config.model.build(), nodes, config.time.t, 1000)
    stretch = float(np.max(np.linalg.svd(flow.stability, compute_uv=False)))
    # exact metaplectic kernel at 5√ħ off the graph: exp(-25 / (2(1 + σ²))), e^{-25/4} for the identity
    floor = math.exp(-25.0 / (2.0 * (1.0 + stretch**2)))
    assert result.report.monotone
    assert result.report.offgraph_ratio(5.0) <= 2.0 * floor
    assert result.schur_bound >= 1.0 - 1e-3


def test_schur_bound_dominates_measured_action():
    config = example_config("inspect-kernel")
    bound = run_inspect_kernel(config).schur_bound
    model = config.model.build()
    propagator = HKPropagator(model, config.hk_config())
    rng = np.random.default_rng(2)
    for q, p in rng.uniform(-0.5, 0.5, size=(5, 2)):
        psi0 = coherent_state(PhasePoint.of([q], [1.0 + p]), IDENTITY, config.hbar, GRID)
        assert propagator.propagate(psi0, config.time.t).wavefunction.l2_norm() <= bound
