"""Feed-forward ReLU network with a hand-written reverse pass.

Used as the medium-capacity learner in the stacked model and as the gating
network of the mixture-of-experts merger.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, as_vector, glorot_uniform, relu, sigmoid, softplus

HEAD_ACTIVATIONS = ("softplus", "identity")


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    output_dim: int
    hidden_widths: tuple = (250, 250, 250)
    learning_rate: float = 0.01
    head_activation: str = "softplus"

    def __post_init__(self):
        widths = (self.input_dim, *self.hidden_widths, self.output_dim)
        if any(int(w) < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.head_activation not in HEAD_ACTIVATIONS:
            raise ValueError(f"head_activation must be one of {HEAD_ACTIVATIONS}")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_widths, self.output_dim)


@dataclass
class MlpState:
    weights: list
    biases: list
    config: MlpConfig

    def copy(self):
        return MlpState([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.config)


@dataclass
class MlpTape:
    """Everything the reverse pass needs from one forward pass."""

    activations: list = field(default_factory=list)  # layer inputs, starting with x
    pre_activations: list = field(default_factory=list)


@dataclass
class MlpGradients:
    weights: list
    biases: list


def init_mlp(config, rng):
    sizes = config.layer_sizes
    weights = [glorot_uniform(rng, n_out, n_in) for n_in, n_out in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(n_out) for n_out in sizes[1:]]
    return MlpState(weights, biases, config)


def zero_mlp(config):
    sizes = config.layer_sizes
    return MlpState(
        [np.zeros((n_out, n_in)) for n_in, n_out in zip(sizes[:-1], sizes[1:])],
        [np.zeros(n_out) for n_out in sizes[1:]],
        config,
    )


def mlp_forward(state, x):
    x = as_vector(x, "x")
    if x.shape[0] != state.config.input_dim:
        raise DimensionError(f"expected input of length {state.config.input_dim}, got {x.shape[0]}")
    tape = MlpTape()
    a = x
    last = len(state.weights) - 1
    for i, (W, b) in enumerate(zip(state.weights, state.biases)):
        tape.activations.append(a)
        z = W @ a + b
        tape.pre_activations.append(z)
        a = relu(z) if i < last else z
    if state.config.head_activation == "softplus":
        a = softplus(a)
    return a, tape


def mlp_backward(state, tape, grad_out):
    """Gradients of ``scores . grad_out`` with respect to every parameter."""
    grad_out = as_vector(grad_out, "grad_out")
    if grad_out.shape[0] != state.config.output_dim:
        raise DimensionError(f"grad_out has length {grad_out.shape[0]}, expected {state.config.output_dim}")
    if len(tape.activations) != len(state.weights):
        raise DimensionError("tape does not match the network depth")

    n = len(state.weights)
    dW = [None] * n
    db = [None] * n
    delta = grad_out
    if state.config.head_activation == "softplus":
        delta = grad_out * sigmoid(tape.pre_activations[-1])
    for i in range(n - 1, -1, -1):
        dW[i] = np.outer(delta, tape.activations[i])
        db[i] = delta
        if i > 0:
            delta = (state.weights[i].T @ delta) * (tape.pre_activations[i - 1] > 0)
    return MlpGradients(dW, db)


def sgd_step(state, grads, learning_rate, inplace=False):
    if len(grads.weights) != len(state.weights) or len(grads.biases) != len(state.biases):
        raise DimensionError("gradient structure does not match the network")
    for W, g in zip(state.weights, grads.weights):
        if W.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match weight shape {W.shape}")
    target = state if inplace else state.copy()
    for W, g in zip(target.weights, grads.weights):
        W -= learning_rate * g
    for b, g in zip(target.biases, grads.biases):
        b -= learning_rate * g
    return target


def cross_entropy(probs, y):
    probs = as_vector(probs, "probs")
    if not 0 <= y < probs.shape[0]:
        raise IndexError(f"class index {y} out of range for {probs.shape[0]} classes")
    return float(-np.log(max(probs[y], 1e-15)))
