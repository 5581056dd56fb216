import numpy as np
import pytest

from fedgan.optim import Adam, AdamState, adam_step
from fedgan.tensor import ParamSet, ShapeError, Tensor

from oracles import adam_scalar_trace


def _ps(**kwargs):
    return ParamSet([(k, Tensor(v)) for k, v in kwargs.items()])


def test_zero_gradient_leaves_params_unchanged():
    params = _ps(w=[1.0, -2.0])
    new_params, new_state = adam_step(
        params, params.zeros_like(), AdamState.zeros(params), lr=0.1, t=1
    )
    assert new_params == params
    assert np.allclose(new_state.m["w"].data, [0.0, 0.0])
    assert np.allclose(new_state.v["w"].data, [0.0, 0.0])


def test_zero_gradient_decays_existing_moments():
    params = _ps(w=[1.0, -2.0])
    state = AdamState(m=_ps(w=[1.0, 1.0]), v=_ps(w=[1.0, 1.0]))
    _, new_state = adam_step(
        params, params.zeros_like(), state, lr=0.1, beta1=0.9, beta2=0.99, t=1
    )
    assert np.allclose(new_state.m["w"].data, [0.9, 0.9])
    assert np.allclose(new_state.v["w"].data, [0.99, 0.99])


def test_degenerate_adam_is_normalized_sgd():
    params = _ps(w=[1.0])
    grads = _ps(w=[1.0])
    new_params, _ = adam_step(
        params, grads, AdamState.zeros(params), lr=0.1, beta1=0.0, beta2=0.0, eps=0.0, t=1
    )
    assert np.allclose(new_params["w"].data, [0.9])


def test_three_step_trace_matches_scalar_recurrence():
    # quadratic loss 0.5*(w-3)^2, gradient w-3
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    expected = adam_scalar_trace(1.0, lambda w: w - 3.0, 3, lr, b1, b2, eps)

    params = _ps(w=[1.0])
    opt = Adam(params, lr=lr, beta1=b1, beta2=b2, eps=eps)
    seen = []
    for _ in range(3):
        grads = _ps(w=[float(params["w"].data[0]) - 3.0])
        params = opt.step(params, grads)
        seen.append(float(params["w"].data[0]))
    assert np.allclose(seen, expected, rtol=0.0, atol=1e-12)


def test_incompatible_sets_rejected():
    params = _ps(w=[1.0])
    bad = _ps(v=[1.0])
    with pytest.raises(ShapeError):
        adam_step(params, bad, AdamState.zeros(params), lr=0.1)


def test_adam_step_deterministic():
    rng = np.random.default_rng(0)
    params = _ps(w=rng.normal(size=8))
    grads = _ps(w=rng.normal(size=8))
    a, _ = adam_step(params, grads, AdamState.zeros(params), lr=1e-3, t=1)
    b, _ = adam_step(params, grads, AdamState.zeros(params), lr=1e-3, t=1)
    assert a["w"].data.tobytes() == b["w"].data.tobytes()
