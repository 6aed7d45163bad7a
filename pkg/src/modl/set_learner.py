"""Permutation-invariant learner over the set of observed features.

Each observed feature becomes a pair (id embedding, value). A shared
FC+ReLU encodes every pair and the encodings are summed, so the pooled vector
has fixed width whatever subset of features is present. A stack of residual
blocks then refines the pooled vector, each block adding its own linear
read-out to a running class-score accumulator.

Pairs are sorted by feature id before pooling. This keeps the pooled sum
bitwise identical under any reordering of the input.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, glorot_uniform, relu, sigmoid, softplus


@dataclass(frozen=True)
class SetLearnerConfig:
    num_features: int
    num_classes: int
    width: int = 128
    embedding_dim: int = 32
    n_blocks: int = 6
    layers_per_block: int = 3
    learning_rate: float = 0.01

    def __post_init__(self):
        for name in ("num_features", "num_classes", "width", "embedding_dim", "n_blocks", "layers_per_block"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class SetEncoderState:
    embeddings: np.ndarray  # (num_features, embedding_dim)
    pair_weight: np.ndarray  # (width, embedding_dim + 1)
    pair_bias: np.ndarray


@dataclass
class SetBlockState:
    fc_weights: list
    fc_biases: list
    skip: np.ndarray  # (width, width)
    out: np.ndarray  # (num_classes, width)


@dataclass
class SetLearnerState:
    encoder: SetEncoderState
    blocks: list
    config: SetLearnerConfig

    def parameters(self):
        """All parameter arrays in a fixed order (shared with gradients)."""
        params = [self.encoder.embeddings, self.encoder.pair_weight, self.encoder.pair_bias]
        for block in self.blocks:
            params.extend(block.fc_weights)
            params.extend(block.fc_biases)
            params.append(block.skip)
            params.append(block.out)
        return params

    def copy(self):
        enc = self.encoder
        return SetLearnerState(
            SetEncoderState(enc.embeddings.copy(), enc.pair_weight.copy(), enc.pair_bias.copy()),
            [
                SetBlockState(
                    [w.copy() for w in b.fc_weights],
                    [v.copy() for v in b.fc_biases],
                    b.skip.copy(),
                    b.out.copy(),
                )
                for b in self.blocks
            ],
            self.config,
        )


@dataclass
class SetTape:
    ids: np.ndarray
    pairs: np.ndarray  # (n, embedding_dim + 1)
    pair_pre: np.ndarray  # (n, width)
    block_inputs: list = field(default_factory=list)  # x_0 .. x_{R-1}
    fc_inputs: list = field(default_factory=list)  # per block, inputs to each FC layer
    fc_pre: list = field(default_factory=list)  # per block, FC pre-activations
    skip_pre: list = field(default_factory=list)
    logits: np.ndarray = None


def init_set_learner(config, rng):
    w, e, C = config.width, config.embedding_dim, config.num_classes
    encoder = SetEncoderState(
        glorot_uniform(rng, config.num_features, e),
        glorot_uniform(rng, w, e + 1),
        np.zeros(w),
    )
    blocks = [
        SetBlockState(
            [glorot_uniform(rng, w, w) for _ in range(config.layers_per_block)],
            [np.zeros(w) for _ in range(config.layers_per_block)],
            glorot_uniform(rng, w, w),
            glorot_uniform(rng, C, w),
        )
        for _ in range(config.n_blocks)
    ]
    return SetLearnerState(encoder, blocks, config)


def zeros_like_state(state):
    g = state.copy()
    for p in g.parameters():
        p[...] = 0.0
    return g


def _sorted_pairs(state, values, ids):
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if values.shape != ids.shape:
        raise DimensionError(f"{values.shape[0]} values but {ids.shape[0]} ids")
    d = state.config.num_features
    if ids.size and (ids.min() < 0 or ids.max() >= d):
        raise IndexError(f"feature ids must lie in [0, {d})")
    order = np.argsort(ids, kind="stable")
    ids = ids[order]
    values = values[order]
    if ids.size > 1 and np.any(ids[1:] == ids[:-1]):
        raise ValueError("feature ids must be unique")
    return values, ids


def _encode(state, values, ids):
    values, ids = _sorted_pairs(state, values, ids)
    enc = state.encoder
    pairs = np.concatenate([enc.embeddings[ids], values[:, None]], axis=1)
    pair_pre = pairs @ enc.pair_weight.T + enc.pair_bias
    x0 = relu(pair_pre).sum(axis=0)
    return x0, ids, pairs, pair_pre


def encode_set(state, values, ids):
    """Pooled representation of the observed (value, id) pairs."""
    return _encode(state, values, ids)[0]


def set_forward(state, values, ids):
    x, ids, pairs, pair_pre = _encode(state, values, ids)
    tape = SetTape(ids, pairs, pair_pre)
    logits = np.zeros(state.config.num_classes)
    for block in state.blocks:
        tape.block_inputs.append(x)
        inputs, pres = [], []
        h = x
        for W, b in zip(block.fc_weights, block.fc_biases):
            inputs.append(h)
            z = W @ h + b
            pres.append(z)
            h = relu(z)
        tape.fc_inputs.append(inputs)
        tape.fc_pre.append(pres)
        s = block.skip @ x + h
        tape.skip_pre.append(s)
        logits = logits + block.out @ h
        x = relu(s)
    tape.logits = logits
    return softplus(logits), tape


def set_backward(state, tape, grad_out):
    """Reverse pass for ``scores . grad_out``; returns a state-shaped gradient."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (state.config.num_classes,):
        raise DimensionError(f"grad_out must have shape ({state.config.num_classes},)")
    if len(tape.block_inputs) != len(state.blocks):
        raise DimensionError("tape does not match the number of blocks")

    d_logits = grad_out * sigmoid(tape.logits)
    grads = []
    dx = np.zeros(state.config.width)  # gradient flowing into x_r from later blocks
    for r in range(len(state.blocks) - 1, -1, -1):
        block = state.blocks[r]
        x_prev = tape.block_inputs[r]
        h_last = relu(tape.fc_pre[r][-1])

        ds = dx * (tape.skip_pre[r] > 0)
        d_skip = np.outer(ds, x_prev)
        d_out = np.outer(d_logits, h_last)
        dx_prev = block.skip.T @ ds
        dh = ds + block.out.T @ d_logits

        n_fc = len(block.fc_weights)
        dW = [None] * n_fc
        db = [None] * n_fc
        for i in range(n_fc - 1, -1, -1):
            dz = dh * (tape.fc_pre[r][i] > 0)
            dW[i] = np.outer(dz, tape.fc_inputs[r][i])
            db[i] = dz
            dh = block.fc_weights[i].T @ dz
        dx = dx_prev + dh
        grads.append(SetBlockState(dW, db, d_skip, d_out))
    grads.reverse()

    enc = state.encoder
    d_pre = dx[None, :] * (tape.pair_pre > 0)
    d_pair_weight = d_pre.T @ tape.pairs
    d_pair_bias = d_pre.sum(axis=0)
    d_emb = np.zeros_like(enc.embeddings)
    e = enc.embeddings.shape[1]
    d_emb[tape.ids] = (d_pre @ enc.pair_weight)[:, :e]
    return SetLearnerState(SetEncoderState(d_emb, d_pair_weight, d_pair_bias), grads, state.config)


def set_sgd_step(state, grads, learning_rate, inplace=False):
    target = state if inplace else state.copy()
    params, gparams = target.parameters(), grads.parameters()
    if len(params) != len(gparams):
        raise DimensionError("gradient structure does not match the set learner")
    for p, g in zip(params, gparams):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        p -= learning_rate * g
    return target
