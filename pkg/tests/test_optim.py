"""Adam updates, step-decay schedule and gradient clipping"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beamcast.errors import ConfigurationError, TrainingError
from beamcast.numcore import AdamState, LrSchedule, Tensor, adam_step, clip_grad_norm, global_grad_norm


def param(values, grad=None):
    t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True, dtype=np.float64)
    t.grad = None if grad is None else np.asarray(grad, dtype=np.float64)
    return t


def test_zero_gradient_leaves_params_unchanged():
    w = param([1.0, -2.0, 3.0], grad=[0.0, 0.0, 0.0])
    state = adam_step({"w": w}, AdamState(lr=0.1))
    np.testing.assert_array_equal(w.data, [1.0, -2.0, 3.0])
    assert state.step == 1


def test_missing_gradient_counts_as_zero():
    w = param([0.5])
    adam_step({"w": w}, AdamState(lr=0.1))
    np.testing.assert_array_equal(w.data, [0.5])


def test_first_step_moves_by_lr_against_sign():
    w = param([0.0, 0.0, 0.0], grad=[2.5, -0.3, 7.0])
    adam_step({"w": w}, AdamState(lr=0.01))
    np.testing.assert_allclose(w.data, [-0.01, 0.01, -0.01], rtol=1e-6)


def test_scalar_quadratic_converges():
    w = param([0.0])
    state = AdamState(lr=0.1)
    for _ in range(100):
        w.grad = 2.0 * (w.data - 3.0)
        adam_step({"w": w}, state)
    assert abs(w.data[0] - 3.0) < 0.1


def test_non_finite_gradient_names_parameter_and_updates_nothing():
    good = param([1.0], grad=[1.0])
    bad = param([1.0], grad=[np.nan])
    state = AdamState(lr=0.1)
    with pytest.raises(TrainingError, match="bad"):
        adam_step({"good": good, "bad": bad}, state)
    np.testing.assert_array_equal(good.data, [1.0])
    assert state.step == 0


def test_zero_lr_freezes_parameters():
    w = param([1.0, 2.0], grad=[5.0, -5.0])
    adam_step({"w": w}, AdamState(lr=0.0))
    np.testing.assert_array_equal(w.data, [1.0, 2.0])


def test_negative_lr_rejected():
    with pytest.raises(ConfigurationError):
        AdamState(lr=-1e-3)


class TestSchedule:
    def test_default_milestones(self):
        schedule = LrSchedule(1e-4, (30, 60, 90), 0.1)
        assert schedule.lr_at(29) == pytest.approx(1e-4)
        assert schedule.lr_at(30) == pytest.approx(1e-5)
        assert schedule.lr_at(60) == pytest.approx(1e-6)
        assert schedule.lr_at(99) == pytest.approx(1e-7)

    @given(st.integers(min_value=0, max_value=200))
    def test_non_increasing(self, epoch):
        schedule = LrSchedule(1e-3, (10, 50, 120), 0.5)
        assert schedule.lr_at(epoch + 1) <= schedule.lr_at(epoch)
        passed = sum(m <= epoch for m in schedule.milestones)
        assert schedule.lr_at(epoch) == pytest.approx(1e-3 * 0.5**passed)

    def test_unsorted_milestones_rejected(self):
        with pytest.raises(ConfigurationError):
            LrSchedule(1e-4, (60, 30))


class TestClipping:
    def test_global_norm(self):
        params = {"a": param([0.0], grad=[3.0]), "b": param([0.0, 0.0], grad=[0.0, 4.0])}
        assert global_grad_norm(params) == pytest.approx(5.0)

    def test_clip_rescales_to_max_norm(self):
        params = {"a": param([0.0], grad=[3.0]), "b": param([0.0], grad=[4.0])}
        before = clip_grad_norm(params, 1.0)
        assert before == pytest.approx(5.0)
        assert global_grad_norm(params) == pytest.approx(1.0, rel=1e-9)

    def test_none_disables_clipping(self):
        params = {"a": param([0.0], grad=[30.0])}
        clip_grad_norm(params, None)
        np.testing.assert_array_equal(params["a"].grad, [30.0])
