import numpy as np
import pytest

from s2sr.autodiff import backward, tensor
from s2sr.errors import AutodiffError
from s2sr.optim import Adam, AdamState, adam_step


def test_first_step_approximates_signed_lr():
    # with bias correction, step 1 moves by ~lr*sign(g) for |g| >> eps
    params = {"w": np.array([1.0, -1.0, 2.0])}
    grads = {"w": np.array([0.5, -3.0, 1e-3])}
    state = AdamState()
    adam_step(params, grads, state, lr=0.01)
    np.testing.assert_allclose(
        params["w"], [1.0 - 0.01, -1.0 + 0.01, 2.0 - 0.01], atol=1e-4
    )


def test_zero_grad_zero_update():
    params = {"w": np.array([1.0, 2.0])}
    state = AdamState()
    adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(params["w"], [1.0, 2.0])
    adam_step(params, {}, state, lr=0.1)  # missing grad acts as zero
    np.testing.assert_array_equal(params["w"], [1.0, 2.0])
    assert state.step == 2


def test_quadratic_converges():
    # minimize w^2 from w=1 with lr=0.1
    params = {"w": np.array([1.0])}
    state = AdamState()
    for _ in range(100):
        adam_step(params, {"w": 2.0 * params["w"]}, state, lr=0.1)
    assert abs(params["w"][0]) < 0.1


def test_deterministic_given_same_inputs():
    def run():
        params = {"a": np.array([0.3, -0.2]), "b": np.array([[1.0, 2.0]])}
        state = AdamState()
        rng = np.random.default_rng(0)
        for _ in range(20):
            grads = {
                "a": rng.standard_normal(2),
                "b": rng.standard_normal((1, 2)),
            }
            adam_step(params, grads, state, lr=0.05)
        return params

    p1, p2 = run(), run()
    np.testing.assert_array_equal(p1["a"], p2["a"])
    np.testing.assert_array_equal(p1["b"], p2["b"])


def test_wrapper_updates_through_graph():
    w = tensor([2.0], requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    for _ in range(50):
        opt.zero_grad()
        loss = (w * w).sum()
        backward(loss)
        opt.step()
    assert abs(w.data[0]) < 0.5
    assert opt.state.step == 50


def test_wrapper_rejects_non_parameters():
    frozen = tensor([1.0])
    with pytest.raises(AutodiffError):
        Adam({"w": frozen}, lr=0.1)
