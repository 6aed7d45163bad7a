"""Hedge-backpropagation baseline with one early-exit classifier per layer.

A stack of sigmoid layers h^l = sigmoid(W^l h^{l-1}) (h^0 = x, no biases)
feeds an exit classifier softmax(Theta^l^T h^l) at every depth l = 0..L. The
prediction is the alpha-weighted mixture of the exits and alpha follows a
multiplicative-weights rule with a floor.

Two backward schedules are provided. ``naive`` runs a separate reverse pass
from every exit down to the input, so one step costs O(L^2) layer
traversals. ``fast`` folds the alpha-weighted exit losses into one reverse
pass and costs O(L). Both return the same gradients up to rounding.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, as_vector, glorot_uniform, one_hot, sigmoid, softmax

BACKPROP_MODES = ("naive", "fast")
PROBE_CSV_HEADER = "L,mode,mean_step_seconds,std"


@dataclass
class HedgeNet:
    hidden: list  # W^1..W^L, W^l shaped (width, prev)
    exits: list  # Theta^0..Theta^L, Theta^l shaped (dim h^l, num_classes)
    alphas: np.ndarray
    beta: float = 0.99
    smoothing: float = 0.2
    learning_rate: float = 0.01

    def __post_init__(self):
        if len(self.exits) != len(self.hidden) + 1:
            raise DimensionError("need exactly one exit per layer plus one on the input")
        if self.alphas.shape != (len(self.exits),):
            raise DimensionError("one alpha per exit is required")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must be in (0, 1]")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must be in [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        prev = self.exits[0].shape[0]
        for l, W in enumerate(self.hidden, start=1):
            if W.shape[1] != prev or self.exits[l].shape[0] != W.shape[0]:
                raise DimensionError(f"layer {l} shapes do not chain")
            prev = W.shape[0]

    @property
    def n_layers(self):
        return len(self.hidden)

    @property
    def input_dim(self):
        return self.exits[0].shape[0]

    @property
    def num_classes(self):
        return self.exits[0].shape[1]

    def copy(self):
        return HedgeNet(
            [W.copy() for W in self.hidden],
            [T.copy() for T in self.exits],
            self.alphas.copy(),
            self.beta,
            self.smoothing,
            self.learning_rate,
        )


@dataclass
class HedgeTape:
    hs: list  # h^0..h^L
    exit_probs: list  # f^0..f^L


@dataclass
class HedgeGradients:
    hidden: list
    exits: list
    edge_count: int = 0  # backward edges traversed (exit heads + hidden layers)
    per_exit: list = field(default=None)  # naive mode only, unweighted per-exit gradients


def init_hedge_net(input_dim, num_classes, width=50, n_layers=6, beta=0.99, smoothing=0.2,
                   learning_rate=0.01, rng=None):
    rng = rng if rng is not None else np.random.default_rng(0)
    if n_layers < 0 or width < 1 or input_dim < 1 or num_classes < 2:
        raise ValueError("invalid hedge network size")
    dims = [input_dim] + [width] * n_layers
    hidden = [glorot_uniform(rng, dims[l + 1], dims[l]) for l in range(n_layers)]
    exits = [glorot_uniform(rng, dim, num_classes) for dim in dims]
    alphas = np.full(n_layers + 1, 1.0 / (n_layers + 1))
    return HedgeNet(hidden, exits, alphas, beta, smoothing, learning_rate)


def hedge_forward(net, x):
    x = as_vector(x, "x")
    if x.shape[0] != net.input_dim:
        raise DimensionError(f"expected input of length {net.input_dim}, got {x.shape[0]}")
    hs = [x]
    for W in net.hidden:
        hs.append(sigmoid(W @ hs[-1]))
    probs = [softmax(h @ T) for h, T in zip(hs, net.exits)]
    F = net.alphas @ np.asarray(probs)
    return F, probs, HedgeTape(hs, probs)


def exit_losses(tape, y):
    return np.array([-np.log(max(f[y], 1e-15)) for f in tape.exit_probs])


def hedge_alpha_update(net, losses):
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != net.alphas.shape:
        raise DimensionError(f"expected {net.alphas.shape[0]} exit losses, got {losses.shape}")
    if np.any(losses < 0):
        raise ValueError("exit losses must be non-negative")
    alphas = net.alphas * net.beta ** losses
    alphas = np.maximum(alphas, net.smoothing / len(alphas))
    net.alphas = alphas / alphas.sum()
    return net


def _check_tape(net, tape):
    if len(tape.hs) != net.n_layers + 1 or len(tape.exit_probs) != net.n_layers + 1:
        raise DimensionError("tape does not match the network depth")


def _backward_naive(net, tape, y, keep_per_exit):
    target = one_hot(y, net.num_classes)
    d_hidden = [np.zeros_like(W) for W in net.hidden]
    d_exits = [np.zeros_like(T) for T in net.exits]
    per_exit = [] if keep_per_exit else None
    edges = 0
    for j in range(net.n_layers + 1):
        # fresh traversal for exit j: nothing is reused from other exits
        g_hidden = [np.zeros_like(W) for W in net.hidden]
        err = tape.exit_probs[j] - target
        g_exit = np.outer(tape.hs[j], err)
        dh = net.exits[j] @ err
        edges += 1
        for l in range(j, 0, -1):
            h = tape.hs[l]
            dz = dh * h * (1.0 - h)
            g_hidden[l - 1] = np.outer(dz, tape.hs[l - 1])
            dh = net.hidden[l - 1].T @ dz
            edges += 1
        a = net.alphas[j]
        d_exits[j] += a * g_exit
        for l in range(net.n_layers):
            d_hidden[l] += a * g_hidden[l]
        if keep_per_exit:
            g_exits = [np.zeros_like(T) for T in net.exits]
            g_exits[j] = g_exit
            per_exit.append(HedgeGradients(g_hidden, g_exits))
    return HedgeGradients(d_hidden, d_exits, edges, per_exit)


def _backward_fast(net, tape, y):
    target = one_hot(y, net.num_classes)
    L = net.n_layers
    d_hidden = [None] * L
    d_exits = [None] * (L + 1)
    edges = 0
    dh = np.zeros(tape.hs[L].shape[0])
    for l in range(L, -1, -1):
        err = net.alphas[l] * (tape.exit_probs[l] - target)
        d_exits[l] = np.outer(tape.hs[l], err)
        dh = dh + net.exits[l] @ err
        edges += 1
        if l == 0:
            break
        h = tape.hs[l]
        dz = dh * h * (1.0 - h)
        d_hidden[l - 1] = np.outer(dz, tape.hs[l - 1])
        dh = net.hidden[l - 1].T @ dz
        edges += 1
    return HedgeGradients(d_hidden, d_exits, edges)


def hedge_backward(net, tape, y, mode="fast", keep_per_exit=False):
    """Gradients of sum_l alpha_l * CE(f^l, y) for every W^l and Theta^l."""
    if mode not in BACKPROP_MODES:
        raise ValueError(f"mode must be one of {BACKPROP_MODES}, got {mode!r}")
    if not 0 <= y < net.num_classes:
        raise IndexError(f"class index {y} out of range for {net.num_classes} classes")
    _check_tape(net, tape)
    if mode == "naive":
        return _backward_naive(net, tape, y, keep_per_exit)
    return _backward_fast(net, tape, y)


def max_relative_difference(a, b):
    """max|a - b| / max|b| over every gradient block of two results."""
    blocks_a = list(a.hidden) + list(a.exits)
    blocks_b = list(b.hidden) + list(b.exits)
    num = max(float(np.max(np.abs(x - z))) for x, z in zip(blocks_a, blocks_b))
    den = max(float(np.max(np.abs(z))) for z in blocks_b)
    return num / den if den > 0 else num


def hedge_learn(net, tape, y, mode="fast"):
    """SGD step from an existing forward tape, then the alpha update."""
    losses = exit_losses(tape, y)
    grads = hedge_backward(net, tape, y, mode)
    lr = net.learning_rate
    for W, g in zip(net.hidden, grads.hidden):
        W -= lr * g
    for T, g in zip(net.exits, grads.exits):
        T -= lr * g
    hedge_alpha_update(net, losses)
    return losses


def hedge_step(net, x, y, mode="fast"):
    """Predict, take one SGD step with the mode's gradients, then reweight exits."""
    F, _, tape = hedge_forward(net, x)
    losses = hedge_learn(net, tape, y, mode)
    return net, F, losses


# timing -------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeRow:
    L: int
    mode: str
    mean_step_seconds: float
    std: float
    edges_per_step: int


def _time_chunk(net, xs, ys, mode):
    start = time.perf_counter()
    for t in range(len(xs)):
        _, _, tape = hedge_forward(net, xs[t])
        grads = hedge_backward(net, tape, int(ys[t]), mode)
    return (time.perf_counter() - start) / len(xs), grads.edge_count


def complexity_probe(L_values, steps=2000, width=50, input_dim=20, num_classes=2, chunks=10, seed=0):
    """Median-of-means per-step time of forward + backward for both modes.

    The stream is cut into ``chunks`` slices and every (L, mode) pair times
    slice k before any pair moves to slice k + 1, so slow drift of the
    machine spreads evenly over all cells. Parameters are not updated, which
    keeps the two modes on the identical computation stream. BLAS is pinned
    to a single thread while sampling.
    """
    from threadpoolctl import threadpool_limits

    if steps < 100:
        raise ValueError("steps must be >= 100")
    if chunks < 1 or chunks > steps:
        raise ValueError("chunks must be in [1, steps]")
    L_values = sorted({int(L) for L in L_values})
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(steps, input_dim))
    ys = rng.integers(0, num_classes, size=steps)
    nets = {L: init_hedge_net(input_dim, num_classes, width, L, rng=np.random.default_rng(seed + L)) for L in L_values}
    samples = {(L, m): [] for L in L_values for m in BACKPROP_MODES}
    edges = {}
    bounds = np.linspace(0, steps, chunks + 1).astype(int)
    with threadpool_limits(limits=1):
        for L in L_values:
            # warm-up so allocator and caches settle before sampling
            _time_chunk(nets[L], xs[:20], ys[:20], "naive")
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            for L in L_values:
                for mode in BACKPROP_MODES:
                    sec, edges[(L, mode)] = _time_chunk(nets[L], xs[lo:hi], ys[lo:hi], mode)
                    samples[(L, mode)].append(sec)
    rows = []
    for L in L_values:
        for mode in BACKPROP_MODES:
            s = samples[(L, mode)]
            std = float(np.std(s, ddof=1)) if len(s) > 1 else 0.0
            rows.append(ProbeRow(L, mode, float(np.median(s)), std, edges[(L, mode)]))
    return rows


def probe_csv(rows):
    lines = [PROBE_CSV_HEADER]
    lines += [f"{r.L},{r.mode},{r.mean_step_seconds:.9g},{r.std:.9g}" for r in rows]
    return "\n".join(lines) + "\n"


def probe_ratios(rows):
    """naive/fast per-step time ratio keyed by L."""
    by = {(r.L, r.mode): r.mean_step_seconds for r in rows}
    return {L: by[(L, "naive")] / by[(L, "fast")] for L in sorted({r.L for r in rows})}


def linear_fit_r2(xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    total = np.sum((ys - ys.mean()) ** 2)
    return float(slope), float(intercept), float(1.0 - resid @ resid / total) if total > 0 else 1.0
