"""Autodiff core, MLP, Adam, and Gaussian head tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reaction_forge.errors import ContractError, InputShapeError, TrainingDivergenceError
from reaction_forge.nn import (
    AdamState,
    GaussianHead,
    MlpTape,
    Tensor,
    adam_step,
    apply_named,
    as_tensor,
    concat,
    gaussian_log_prob,
    gaussian_sample,
    minimum,
    mlp_forward,
    mlp_init,
    normalize_rows,
    parameter,
)
from reaction_forge.rng import substream


def finite_diff(f, x, h=1e-4):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-8)


def test_mlp_gradients_match_finite_differences():
    rng = substream(7, "test", "fdcheck")
    params = mlp_init([5, 16, 16, 3], rng, activation="tanh")
    x = rng.normal(size=(4, 5))
    target = rng.normal(size=(4, 3))

    def loss_of(params):
        y = mlp_forward(params, x)
        return float(((y - target) ** 2).mean())

    tape = MlpTape(params)
    out = tape(as_tensor(x))
    loss = ((out - as_tensor(target)) ** 2).mean()
    loss.backward()
    grads = tape.grads("")

    for i in range(len(params.weights)):
        for name, arr in (("w", params.weights[i]), ("b", params.biases[i])):
            def f(a, i=i, name=name):
                return loss_of(params)
            num = finite_diff(f, arr)
            ana = grads[f"{name}{i}"]
            assert rel_err(ana, num) < 1e-4, f"{name}{i}"


def test_relu_and_clip_gradients():
    x = parameter(np.array([[-2.0, -0.5, 0.5, 2.0]]))
    y = (x.relu() * 3.0).sum()
    y.backward()
    assert np.allclose(x.grad, [[0.0, 0.0, 3.0, 3.0]])

    x2 = parameter(np.array([[-2.0, -0.5, 0.5, 2.0]]))
    z = x2.clip(-1.0, 1.0).sum()
    z.backward()
    # gradient flows only where the input is strictly inside the interval
    assert np.allclose(x2.grad, [[0.0, 1.0, 1.0, 0.0]])


def test_broadcast_add_unbroadcasts_grad():
    a = parameter(np.ones((3, 4)))
    b = parameter(np.ones((4,)))
    ((a + b) * 2.0).sum().backward()
    assert a.grad.shape == (3, 4) and np.allclose(a.grad, 2.0)
    assert b.grad.shape == (4,) and np.allclose(b.grad, 6.0)


def test_matmul_rejects_non_2d():
    a = as_tensor(np.ones((2, 3, 4)))
    b = as_tensor(np.ones((4, 2)))
    with pytest.raises(InputShapeError):
        _ = a @ b


def test_backward_requires_scalar():
    x = parameter(np.ones((2, 2)))
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_pow_scalar_exponent_only():
    x = parameter(np.full((2,), 3.0))
    (x**2).sum().backward()
    assert np.allclose(x.grad, 6.0)
    with pytest.raises(ContractError):
        _ = x ** as_tensor(np.ones(2))


def test_concat_backward_splits():
    a = parameter(np.ones((2, 3)))
    b = parameter(np.ones((2, 2)))
    c = concat([a, b], axis=1)
    (c * np.arange(5.0)[None, :]).sum().backward()
    assert np.allclose(a.grad, [[0, 1, 2], [0, 1, 2]])
    assert np.allclose(b.grad, [[3, 4], [3, 4]])


def test_minimum_ties_route_to_first():
    a = parameter(np.array([1.0, 2.0]))
    b = parameter(np.array([1.0, 1.0]))
    minimum(a, b).sum().backward()
    assert np.allclose(a.grad, [1.0, 0.0])
    assert np.allclose(b.grad, [0.0, 1.0])


def test_normalize_rows_unit_norm():
    rng = substream(0, "test", "norm")
    z = as_tensor(rng.normal(size=(6, 8)))
    n = normalize_rows(z)
    assert np.allclose((n.data**2).sum(axis=1), 1.0, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_elementwise_chain_gradient_property(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(rows, cols))

    def loss_np(a):
        t = np.tanh(a) * a + np.exp(-(a**2))
        return float(t.sum())

    x = parameter(x0.copy())
    (x.tanh() * x + (-(x**2)).exp()).sum().backward()
    num = finite_diff(lambda a: loss_np(a), x0.copy())
    assert rel_err(x.grad, num) < 1e-4


def test_mlp_init_shapes_and_final_scale():
    rng = substream(1, "test", "init")
    p = mlp_init([4, 8, 2], rng, final_scale=0.0)
    assert p.in_dim == 4 and p.out_dim == 2
    assert all(b.shape == (n,) for b, n in zip(p.biases, [8, 2]))
    assert np.all(p.biases[0] == 0.0)
    assert np.all(p.weights[-1] == 0.0)
    # xavier bound for the first layer
    bound = np.sqrt(6.0 / (4 + 8))
    assert np.abs(p.weights[0]).max() <= bound


def test_mlp_forward_rank_mirroring():
    rng = substream(2, "test", "rank")
    p = mlp_init([3, 6, 2], rng)
    x1 = rng.normal(size=3)
    y1 = mlp_forward(p, x1)
    assert y1.shape == (2,)
    y2 = mlp_forward(p, x1[None, :])
    assert y2.shape == (1, 2)
    assert np.allclose(y1, y2[0])


def test_mlp_rejects_bad_activation():
    rng = substream(3, "test", "act")
    with pytest.raises(ContractError):
        mlp_init([3, 4, 3], rng, activation="sigmoid")


def test_frozen_tape_keeps_params_constant():
    rng = substream(4, "test", "frozen")
    p = mlp_init([3, 4, 2], rng)
    tape = MlpTape(p, trainable=False)
    out = tape(as_tensor(rng.normal(size=(2, 3))))
    out.sum().backward()
    g = tape.grads("enc.")
    assert set(g) == {f"enc.{n}{i}" for n in ("w", "b") for i in range(2)}
    assert all(np.all(v == 0.0) for v in g.values())


def test_adam_zero_grad_is_identity():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.zeros(3)}
    state = AdamState(lr=1e-2)
    new, state2 = adam_step(params, grads, state)
    assert np.array_equal(new["w"], params["w"])
    assert state2.step == 1


def test_adam_first_step_oracle():
    # with m_hat = g and v_hat = g^2 the first update is -lr * g / (|g| + eps)
    g = np.array([0.3, -0.7])
    params = {"w": np.zeros(2)}
    state = AdamState(lr=1e-3)
    new, _ = adam_step(params, {"w": g.copy()}, state)
    expect = -1e-3 * g / (np.abs(g) + 1e-8)
    assert np.allclose(new["w"], expect, atol=1e-12)


def test_adam_rejects_nonfinite_grads():
    state = AdamState()
    with pytest.raises(TrainingDivergenceError):
        adam_step({"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])}, state)


def test_adam_lr_zero_updates_moments_only():
    params = {"w": np.array([5.0])}
    state = AdamState(lr=0.0)
    new, state2 = adam_step(params, {"w": np.array([2.0])}, state)
    assert np.array_equal(new["w"], params["w"])
    assert state2.m["w"][0] != 0.0


def test_apply_named_copies_in_place():
    arr = np.zeros(3)
    apply_named({"w": arr}, {"w": np.array([1.0, 2.0, 3.0])})
    assert np.allclose(arr, [1, 2, 3])


def test_gaussian_log_prob_standard_normal_oracle():
    mean = np.zeros((1, 3))
    log_std = np.zeros(3)
    lp = gaussian_log_prob(mean, log_std, np.zeros((1, 3)))
    assert np.allclose(lp, -1.5 * np.log(2 * np.pi))


def test_gaussian_sample_modes():
    rng = substream(5, "test", "gauss")
    head = GaussianHead(mean=mlp_init([4, 8, 2], rng), log_std=np.full(2, -3.0))
    x = rng.normal(size=(3, 4))
    a_det, lp_det = gaussian_sample(head, x, deterministic=True)
    mu = mlp_forward(head.mean, x)
    assert np.allclose(a_det, mu)
    a_st, lp_st = gaussian_sample(head, x, rng=substream(6, "test", "g2"))
    assert not np.allclose(a_st, mu)
    assert np.all(lp_det >= lp_st)  # density is maximal at the mean
    with pytest.raises(InputShapeError):
        gaussian_sample(head, x)


def test_tensor_where_const_and_log_exp_roundtrip():
    x = parameter(np.array([0.5, 1.5, 2.5]))
    y = x.log().exp().sum()
    y.backward()
    assert np.allclose(x.grad, 1.0, atol=1e-12)
