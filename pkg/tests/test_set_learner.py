import math

import numpy as np
import pytest

from conftest import assert_grad_close, central_difference
from modl.set_learner import (
    SetBlockState,
    SetEncoderState,
    SetLearnerConfig,
    SetLearnerState,
    encode_set,
    init_set_learner,
    set_backward,
    set_forward,
    set_sgd_step,
    zeros_like_state,
)


def _small(seed, d=6, C=3, width=4, R=2, L=2):
    cfg = SetLearnerConfig(d, C, width=width, embedding_dim=3, n_blocks=R, layers_per_block=L)
    return init_set_learner(cfg, np.random.default_rng(seed))


def test_empty_set_encodes_to_zero():
    state = _small(0)
    np.testing.assert_array_equal(encode_set(state, [], []), np.zeros(4))
    scores, _ = set_forward(state, [], [])
    assert scores.shape == (3,) and np.all(np.isfinite(scores))


def test_single_pair_by_hand():
    cfg = SetLearnerConfig(1, 1, width=1, embedding_dim=1, n_blocks=1, layers_per_block=1)
    enc = SetEncoderState(np.array([[0.5]]), np.array([[2.0, 3.0]]), np.array([-1.0]))
    block = SetBlockState([np.array([[1.5]])], [np.array([0.25])], np.array([[0.7]]), np.array([[2.0]]))
    state = SetLearnerState(enc, [block], cfg)
    x0 = max(2.0 * 0.5 + 3.0 * 1.0 - 1.0, 0.0)  # 3.0
    assert encode_set(state, [1.0], [0]) == pytest.approx([x0])
    h = max(1.5 * x0 + 0.25, 0.0)  # 4.75
    expected = math.log1p(math.exp(2.0 * h))
    assert set_forward(state, [1.0], [0])[0] == pytest.approx([expected])


def test_zero_parameters_give_ln2():
    state = zeros_like_state(_small(1))
    scores, _ = set_forward(state, [1.0, -3.0], [0, 4])
    np.testing.assert_allclose(scores, [math.log(2)] * 3)


@pytest.mark.parametrize("seed", range(10))
def test_permutation_invariance_bitwise(seed):
    r = np.random.default_rng(seed)
    state = init_set_learner(SetLearnerConfig(12, 3, width=16, embedding_dim=4, n_blocks=2), r)
    ids = r.choice(12, size=7, replace=False)
    values = r.normal(size=7)
    base, _ = set_forward(state, values, ids)
    for _ in range(5):
        perm = r.permutation(7)
        assert np.array_equal(set_forward(state, values[perm], ids[perm])[0], base)
        assert np.array_equal(encode_set(state, values[perm], ids[perm]), encode_set(state, values, ids))


def test_any_subset_is_accepted():
    state = _small(2)
    for ids in ([], [0], [5], [1, 2, 3], list(range(6))):
        scores, _ = set_forward(state, np.ones(len(ids)), ids)
        assert np.all(scores > 0)


def test_input_validation():
    state = _small(3)
    with pytest.raises(IndexError):
        set_forward(state, [1.0], [6])
    with pytest.raises(ValueError):
        set_forward(state, [1.0, 2.0], [1, 1])
    with pytest.raises(ValueError):
        set_forward(state, [1.0, 2.0], [1])


def test_zero_grad_out_and_absent_embeddings():
    state = _small(4)
    _, tape = set_forward(state, [0.3, -1.2], [1, 4])
    zero = set_backward(state, tape, np.zeros(3))
    assert all(not p.any() for p in zero.parameters())
    g = set_backward(state, tape, np.array([1.0, -2.0, 0.5]))
    absent = [0, 2, 3, 5]
    assert not g.encoder.embeddings[absent].any()


def _min_abs_preactivation(tape):
    pres = [tape.pair_pre] + [z for zs in tape.fc_pre for z in zs] + tape.skip_pre
    return min(float(np.abs(z).min()) for z in pres)


def _instance_off_kinks(seed):
    """Small net with random biases and an input whose pre-activations all clear the FD step.

    With zero biases a dead layer yields pre-activations of exactly 0, where
    ReLU has no derivative, so such draws are resampled.
    """
    r = np.random.default_rng(seed + 100)
    while True:
        state = _small(seed)
        state.encoder.pair_bias[:] = r.normal(size=4)
        for block in state.blocks:
            for b in block.fc_biases:
                b[:] = r.normal(size=4)
        ids = r.choice(6, size=int(r.integers(1, 6)), replace=False)
        values = r.normal(size=ids.size)
        _, tape = set_forward(state, values, ids)
        if _min_abs_preactivation(tape) > 1e-3:
            return state, values, ids, tape


@pytest.mark.parametrize("seed", range(20))
def test_finite_differences(seed):
    state, values, ids, tape = _instance_off_kinks(seed)
    w = np.random.default_rng(seed).normal(size=3)
    g = set_backward(state, tape, w)

    def f():
        return float(set_forward(state, values, ids)[0] @ w)

    for p, gp in zip(state.parameters(), g.parameters()):
        assert_grad_close(gp, central_difference(f, p))


def test_sgd_step(rng):
    state = _small(5)
    _, tape = set_forward(state, [1.0], [2])
    g = set_backward(state, tape, np.ones(3))
    new = set_sgd_step(state, g, 0.1)
    for p, q, gp in zip(state.parameters(), new.parameters(), g.parameters()):
        np.testing.assert_allclose(q, p - 0.1 * gp)
    same = set_sgd_step(state, zeros_like_state(state), 0.5)
    for p, q in zip(state.parameters(), same.parameters()):
        np.testing.assert_array_equal(p, q)


def test_config_validation():
    with pytest.raises(ValueError):
        SetLearnerConfig(0, 2)
    with pytest.raises(ValueError):
        SetLearnerConfig(3, 2, learning_rate=-1)
