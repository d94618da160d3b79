import numpy as np
import pytest

from edgeflow.autodiff import Tensor
from edgeflow.optim import AdamHyper, OptimState, adam_step, lr_at_epoch


def test_zero_grad_no_decay_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    g = {"w": np.zeros(2)}
    hyper = AdamHyper(lr=1e-2, weight_decay=0.0)
    new, state = adam_step(p, g, OptimState(), hyper)
    assert np.array_equal(new["w"].data, p["w"].data)
    assert state.t == 1


def test_first_step_is_signed_lr():
    # first step: mhat = g, vhat = g*g, update = lr * g/(|g| + eps)
    p = {"w": Tensor(np.array([0.5, -0.5, 2.0]), requires_grad=True)}
    g = {"w": np.array([0.3, -0.7, 4.0])}
    hyper = AdamHyper(lr=1e-3, weight_decay=0.0)
    new, _ = adam_step(p, g, OptimState(), hyper)
    delta = p["w"].data - new["w"].data
    assert np.all(np.abs(delta - hyper.lr * np.sign(g["w"])) <= abs(hyper.lr) * 1e-6)


def test_moments_accumulate_and_v_nonnegative():
    p = {"w": Tensor(np.array([1.0]), requires_grad=True)}
    state = OptimState()
    hyper = AdamHyper(lr=1e-3)
    for k in range(5):
        p, state = adam_step(p, {"w": np.array([(-1.0) ** k])}, state, hyper)
    assert state.t == 5
    assert np.all(state.v["w"] >= 0.0)


def test_decoupled_weight_decay_direction():
    p = {"w": Tensor(np.array([10.0]), requires_grad=True)}
    new, _ = adam_step(p, {"w": np.zeros(1)}, OptimState(),
                       AdamHyper(lr=1e-2, weight_decay=1e-2))
    # pure decay shrinks toward zero by lr * wd * w
    assert np.allclose(new["w"].data, 10.0 - 1e-2 * 1e-2 * 10.0)


def test_nonfinite_gradient_names_param():
    p = {"bad.w": Tensor(np.array([1.0]), requires_grad=True)}
    with pytest.raises(FloatingPointError, match="bad.w"):
        adam_step(p, {"bad.w": np.array([np.nan])}, OptimState(), AdamHyper())


def test_multistep_lr_halves_at_milestones():
    base = 1e-4
    assert lr_at_epoch(base, 0, (10, 20)) == base
    assert lr_at_epoch(base, 9, (10, 20)) == base
    assert lr_at_epoch(base, 10, (10, 20)) == base * 0.5
    assert lr_at_epoch(base, 20, (10, 20)) == base * 0.25
    assert lr_at_epoch(base, 99, (10, 20)) == base * 0.25
