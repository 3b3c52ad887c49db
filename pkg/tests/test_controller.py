"""Controller synthesis and closed-loop behavior on the design model."""

import numpy as np
import pytest

from powermask.controller import (ControllerDivergence, ControllerMatrices,
                                  closed_loop_spectral_radius, control_step,
                                  init_controller, robustness_check,
                                  simulate_loop, synthesize)
from powermask.sysid import ArxModel


def test_design_loop_is_stable(ctrl, model):
    assert closed_loop_spectral_radius(ctrl, model) < 1.0


def test_constant_target_converges(ctrl, model):
    targets = np.full(400, 30.0)
    err = targets - simulate_loop(ctrl, model, targets)
    # integral action: steady-state error goes to zero on the model
    assert np.max(np.abs(err[-50:])) < 0.3
    assert np.max(np.abs(err[-50:])) < np.max(np.abs(err[:50]))


def test_slow_sinusoid_is_tracked(ctrl, model):
    t = np.arange(1200)
    targets = 35.0 + 8.0 * np.sin(2 * np.pi * t / 200.0)
    err = targets - simulate_loop(ctrl, model, targets)
    rms = float(np.sqrt(np.mean(err[200:] ** 2)))
    assert rms < 0.1 * 16.0


def test_step_changes_settle(ctrl, model):
    targets = np.concatenate([np.full(200, 28.0), np.full(200, 45.0)])
    err = targets - simulate_loop(ctrl, model, targets)
    assert np.max(np.abs(err[360:])) < 0.5


def test_robustness_at_zero_perturbation_is_nominal(ctrl, model):
    # all 8 sign corners collapse onto the nominal model at zero perturbation
    rep = robustness_check(ctrl, model, perturbation=0.0)
    assert rep.n_corners == 8
    assert rep.n_unstable == 0
    assert rep.max_spectral_radius < 1.0
    assert rep.max_ss_deviation_frac < 0.01


def test_robustness_guardband(ctrl, model):
    rep = robustness_check(ctrl, model, perturbation=0.4)
    assert rep.n_unstable == 0
    assert rep.unstable_patterns == ()
    assert rep.max_spectral_radius < 1.0
    assert rep.max_ss_deviation_frac <= 0.15


def test_robustness_rejects_bad_perturbation(ctrl, model):
    with pytest.raises(ValueError):
        robustness_check(ctrl, model, perturbation=1.0)


def test_synthesize_rejects_unstable_model():
    bad = ArxModel(a=np.array([1.2, 0.0, 0.0, 0.0]),
                   b=np.ones((4, 3)))
    with pytest.raises(ValueError):
        synthesize(bad)


def test_synthesize_rejects_bad_weights(model):
    with pytest.raises(ValueError):
        synthesize(model, weights=(1.0, -2.0, 1.0))


def test_matrices_roundtrip(ctrl):
    copy = ControllerMatrices.from_dict(ctrl.to_dict())
    for name in ("A", "B", "C", "D", "u_op", "input_low", "input_high",
                 "gain_sign"):
        assert np.array_equal(getattr(copy, name), getattr(ctrl, name))
    assert copy.state_dim == ctrl.state_dim
    assert copy.deviation_bound == ctrl.deviation_bound


def test_control_step_outputs_physical_commands(ctrl):
    state = init_controller(ctrl)
    cmd = control_step(ctrl, state, 30.0, 28.0)
    assert cmd.shape == (3,)
    assert np.all(np.isfinite(cmd))
    # first call from rest is the operating point plus the feedthrough kick
    assert np.allclose(cmd, ctrl.u_op + ctrl.D * 2.0)


def test_divergence_is_reported_not_propagated_as_nan(ctrl):
    state = init_controller(ctrl)
    state.x[:] = np.inf
    with pytest.raises(ControllerDivergence):
        control_step(ctrl, state, 30.0, 28.0)


def test_controller_state_is_isolated(ctrl):
    s1 = init_controller(ctrl)
    s2 = init_controller(ctrl)
    control_step(ctrl, s1, 40.0, 20.0)
    assert np.all(s2.x == 0.0)
