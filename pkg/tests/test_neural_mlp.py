import math

import numpy as np
import pytest
import torch

from conftest import assert_grad_close, central_difference
from modl.neural_mlp import (
    MlpConfig,
    MlpState,
    cross_entropy,
    init_mlp,
    mlp_backward,
    mlp_forward,
    sgd_step,
    zero_mlp,
)
from modl.numerics import DimensionError


def test_zero_weights_heads():
    x = np.array([1.0, -2.0, 3.0])
    scores, _ = mlp_forward(zero_mlp(MlpConfig(3, 2, (4, 4))), x)
    np.testing.assert_allclose(scores, [math.log(2)] * 2)
    scores, _ = mlp_forward(zero_mlp(MlpConfig(3, 2, (4,), head_activation="identity")), x)
    np.testing.assert_array_equal(scores, [0.0, 0.0])


def test_single_linear_layer_by_hand():
    cfg = MlpConfig(1, 1, (), head_activation="identity")
    state = MlpState([np.array([[2.0]])], [np.array([0.0])], cfg)
    scores, tape = mlp_forward(state, [3.0])
    np.testing.assert_array_equal(scores, [6.0])
    g = mlp_backward(state, tape, np.array([0.5]))
    np.testing.assert_array_equal(g.weights[0], np.outer([0.5], [3.0]))


def test_zero_grad_out_gives_zero_grads(rng):
    state = init_mlp(MlpConfig(3, 2, (5, 5)), rng)
    _, tape = mlp_forward(state, rng.normal(size=3))
    g = mlp_backward(state, tape, np.zeros(2))
    assert all(not w.any() for w in g.weights) and all(not b.any() for b in g.biases)


@pytest.mark.parametrize("seed", range(20))
def test_finite_differences(seed):
    r = np.random.default_rng(seed)
    head = "softplus" if seed % 2 == 0 else "identity"
    state = init_mlp(MlpConfig(4, 3, (int(r.integers(2, 9)), int(r.integers(2, 9))), head_activation=head), r)
    x, w = r.normal(size=4), r.normal(size=3)
    _, tape = mlp_forward(state, x)
    g = mlp_backward(state, tape, w)

    def f():
        return float(mlp_forward(state, x)[0] @ w)

    for p, gp in zip(state.weights + state.biases, g.weights + g.biases):
        assert_grad_close(gp, central_difference(f, p))


def test_matches_torch_autograd(rng):
    state = init_mlp(MlpConfig(5, 3, (7, 6)), rng)
    x, w = rng.normal(size=5), rng.normal(size=3)
    _, tape = mlp_forward(state, x)
    g = mlp_backward(state, tape, w)
    Ws = [torch.tensor(W, requires_grad=True) for W in state.weights]
    bs = [torch.tensor(b, requires_grad=True) for b in state.biases]
    a = torch.tensor(x)
    for i, (W, b) in enumerate(zip(Ws, bs)):
        a = W @ a + b
        a = torch.relu(a) if i < len(Ws) - 1 else torch.nn.functional.softplus(a)
    (a @ torch.tensor(w)).backward()
    for ours, theirs in zip(g.weights + g.biases, Ws + bs):
        np.testing.assert_allclose(ours, theirs.grad.numpy(), rtol=1e-10, atol=1e-12)


def test_softplus_scores_positive(rng):
    state = init_mlp(MlpConfig(3, 4, (6,)), rng)
    for _ in range(20):
        assert np.all(mlp_forward(state, rng.normal(size=3) * 10)[0] > 0)


def test_forward_rejects_wrong_width(rng):
    state = init_mlp(MlpConfig(3, 2, (4,)), rng)
    with pytest.raises(DimensionError):
        mlp_forward(state, np.ones(4))
    _, tape = mlp_forward(state, np.ones(3))
    with pytest.raises(DimensionError):
        mlp_backward(state, tape, np.ones(3))


def test_sgd_step_examples(rng):
    cfg = MlpConfig(1, 1, (), head_activation="identity")
    state = MlpState([np.array([[1.0]])], [np.array([0.0])], cfg)
    grads = mlp_backward(state, mlp_forward(state, [1.0])[1], np.array([0.25]))
    new = sgd_step(state, grads, 1.0)
    np.testing.assert_array_equal(new.weights[0], [[0.75]])
    np.testing.assert_array_equal(state.weights[0], [[1.0]])

    big = init_mlp(MlpConfig(3, 2, (4,)), rng)
    g = mlp_backward(big, mlp_forward(big, rng.normal(size=3))[1], rng.normal(size=2))
    twice = sgd_step(sgd_step(big, g, 0.1), g, 0.1)
    once = sgd_step(big, g, 0.2)
    for a, b in zip(twice.weights, once.weights):
        np.testing.assert_allclose(a, b, atol=1e-15)
    zero = mlp_backward(big, mlp_forward(big, np.ones(3))[1], np.zeros(2))
    for a, b in zip(sgd_step(big, zero, 0.3).weights, big.weights):
        np.testing.assert_array_equal(a, b)


def test_cross_entropy_examples():
    assert cross_entropy(np.full(4, 0.25), 2) == pytest.approx(math.log(4))
    assert cross_entropy(np.array([0.0, 1.0]), 1) == 0.0
    assert cross_entropy(np.array([0.75, 0.25]), 1) == pytest.approx(1.3863, abs=1e-4)
    with pytest.raises(IndexError):
        cross_entropy(np.array([0.5, 0.5]), 2)


def test_config_validation():
    with pytest.raises(ValueError):
        MlpConfig(0, 2)
    with pytest.raises(ValueError):
        MlpConfig(2, 2, learning_rate=0)
    with pytest.raises(ValueError):
        MlpConfig(2, 2, head_activation="tanh")
