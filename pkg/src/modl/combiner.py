"""Stacking of heterogeneous learners through summed latent class scores.

Three learners run side by side on every stream step:

* fast   - one-vs-rest Bayesian logistic filter on the [values; mask] vector
* medium - ReLU MLP with a softplus score head on the same vector
* slow   - set learner over the observed (id, value) pairs

In the default ``score_sum`` mode their non-negative scores are added and a
single softmax turns the sum into class probabilities. The neural learners are
trained jointly through that softmax; the filter's scores enter as constants
and the filter updates itself in closed form.

The remaining merge modes (``moe``, ``multiplication``, ``ensemble``,
``greedy``) are the ablation alternatives. They first normalise each learner's
output to a distribution and combine those instead.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .bayes_glm import OmlrState, omlr_predict, omlr_update
from .neural_mlp import MlpConfig, init_mlp, mlp_backward, mlp_forward, sgd_step
from .numerics import DimensionError, one_hot, softmax
from .set_learner import SetLearnerConfig, init_set_learner, set_backward, set_forward, set_sgd_step
from .stream import present_features, to_concat_input

MERGE_MODES = ("score_sum", "moe", "multiplication", "ensemble", "greedy")
LEARNERS = ("fast", "medium", "slow")
JOINT_MODES = ("score_sum", "moe", "multiplication")

_LOG_FLOOR = np.log(1e-15)


@dataclass(frozen=True)
class ModlConfig:
    hidden_widths: tuple = (250, 250, 250)
    set_width: int = 128
    embedding_dim: int = 32
    n_blocks: int = 6
    layers_per_block: int = 3
    learning_rate: float = 0.01
    merge_mode: str = "score_sum"
    greedy_window: int = 100
    moe_width: int = 16
    learners: tuple = LEARNERS

    def __post_init__(self):
        if self.merge_mode not in MERGE_MODES:
            raise ValueError(f"merge_mode must be one of {MERGE_MODES}, got {self.merge_mode!r}")
        unknown = set(self.learners) - set(LEARNERS)
        if unknown or not self.learners:
            raise ValueError(f"learners must be a non-empty subset of {LEARNERS}")
        if self.greedy_window < 1:
            raise ValueError("greedy_window must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        # keep the canonical order so score lists line up across runs
        object.__setattr__(self, "learners", tuple(n for n in LEARNERS if n in self.learners))
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))


@dataclass
class LatentScores:
    names: tuple
    per_learner: list

    def total(self):
        return np.sum(self.per_learner, axis=0)


@dataclass
class ModlEnsemble:
    config: ModlConfig
    num_features: int
    num_classes: int
    fast: OmlrState = None
    medium: object = None
    slow: object = None
    moe_gate: object = None
    greedy_history: dict = field(default_factory=dict)


@dataclass
class ModlPrediction:
    probs: np.ndarray
    scores: LatentScores
    normalized: list  # per-learner distributions, same order as scores
    tapes: dict
    gate: np.ndarray = None
    gate_tape: object = None
    concat: np.ndarray = None


def init_ensemble(num_features, num_classes, config=None, rng=None):
    config = config or ModlConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    ens = ModlEnsemble(config, num_features, num_classes)
    if "fast" in config.learners:
        ens.fast = OmlrState.fresh(2 * num_features, num_classes)
    if "medium" in config.learners:
        ens.medium = init_mlp(
            MlpConfig(2 * num_features, num_classes, config.hidden_widths, config.learning_rate), rng
        )
    if "slow" in config.learners:
        ens.slow = init_set_learner(
            SetLearnerConfig(
                num_features,
                num_classes,
                width=config.set_width,
                embedding_dim=config.embedding_dim,
                n_blocks=config.n_blocks,
                layers_per_block=config.layers_per_block,
                learning_rate=config.learning_rate,
            ),
            rng,
        )
    if config.merge_mode == "moe":
        ens.moe_gate = init_mlp(
            MlpConfig(
                2 * num_features,
                len(config.learners),
                (config.moe_width,),
                config.learning_rate,
                head_activation="identity",
            ),
            rng,
        )
    if config.merge_mode == "greedy":
        ens.greedy_history = {name: deque(maxlen=config.greedy_window) for name in config.learners}
    return ens


# merge strategies ---------------------------------------------------------


def _check_simplex_list(probs_list):
    if len(probs_list) == 0:
        raise ValueError("need at least one distribution to merge")
    arr = np.asarray(probs_list, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError("all distributions must have the same length")
    return arr


def merge_moe(probs_list, gate_out):
    arr = _check_simplex_list(probs_list)
    gate = np.asarray(gate_out, dtype=np.float64)
    if gate.shape != (arr.shape[0],):
        raise DimensionError(f"gate has {gate.shape} entries for {arr.shape[0]} learners")
    return gate @ arr


def _floored_logs(probs_list):
    arr = _check_simplex_list(probs_list)
    with np.errstate(divide="ignore"):
        logs = np.log(arr)
    return np.maximum(logs, _LOG_FLOOR)


def merge_multiplication(probs_list):
    return softmax(_floored_logs(probs_list).sum(axis=0))


def merge_ensemble(probs_list):
    return _check_simplex_list(probs_list).mean(axis=0)


def greedy_weights(history, names):
    """Softmax of each learner's windowed argmax accuracy; uniform when empty."""
    acc = np.array([np.mean(history[n]) if history.get(n) else np.nan for n in names])
    if np.isnan(acc).any():
        return np.full(len(names), 1.0 / len(names))
    return softmax(acc)


def merge_greedy(probs_list, history, names=None):
    arr = _check_simplex_list(probs_list)
    names = names if names is not None else tuple(range(arr.shape[0]))
    return greedy_weights(history, names) @ arr


# forward / learning -------------------------------------------------------


def _learner_scores(ens, obs, concat):
    names, scores, tapes = [], [], {}
    if ens.fast is not None:
        names.append("fast")
        scores.append(omlr_predict(ens.fast, concat))
    if ens.medium is not None:
        s, tape = mlp_forward(ens.medium, concat)
        names.append("medium")
        scores.append(s)
        tapes["medium"] = tape
    if ens.slow is not None:
        values, ids = present_features(obs)
        s, tape = set_forward(ens.slow, values, ids)
        names.append("slow")
        scores.append(s)
        tapes["slow"] = tape
    return LatentScores(tuple(names), scores), tapes


def _normalize(name, score):
    # the filter already emits a distribution
    return score if name == "fast" else softmax(score)


def modl_predict(ens, obs):
    concat = to_concat_input(obs)
    if concat.shape[0] != 2 * ens.num_features:
        raise DimensionError(f"observation has {concat.shape[0] // 2} features, ensemble expects {ens.num_features}")
    scores, tapes = _learner_scores(ens, obs, concat)
    normalized = [_normalize(n, s) for n, s in zip(scores.names, scores.per_learner)]
    pred = ModlPrediction(None, scores, normalized, tapes, concat=concat)

    mode = ens.config.merge_mode
    if mode == "score_sum":
        pred.probs = softmax(scores.total())
    elif mode == "moe":
        gate_logits, pred.gate_tape = mlp_forward(ens.moe_gate, concat)
        pred.gate = softmax(gate_logits)
        pred.probs = merge_moe(normalized, pred.gate)
    elif mode == "multiplication":
        pred.probs = merge_multiplication(normalized)
    elif mode == "ensemble":
        pred.probs = merge_ensemble(normalized)
    else:
        pred.probs = merge_greedy(normalized, ens.greedy_history, scores.names)
    return pred


def _score_gradients(ens, pred, y):
    """Loss gradient with respect to each neural learner's score vector."""
    target = one_hot(y, ens.num_classes)
    mode = ens.config.merge_mode
    grads = {}
    gate_grad = None
    for k, name in enumerate(pred.scores.names):
        if name == "fast":
            continue
        q = pred.normalized[k]
        if mode == "score_sum":
            grads[name] = pred.probs - target
        elif mode == "moe":
            F_y = max(pred.probs[y], 1e-15)
            grads[name] = (pred.gate[k] * q[y] / F_y) * (q - target)
        elif mode == "multiplication":
            u = pred.probs - target
            keep = _floored_logs([q])[0] > _LOG_FLOOR
            u = u * keep
            grads[name] = u - q * u.sum()
        else:
            grads[name] = q - target
    if mode == "moe":
        F_y = max(pred.probs[y], 1e-15)
        d_gate = -np.array([q[y] for q in pred.normalized]) / F_y
        gate_grad = pred.gate * (d_gate - pred.gate @ d_gate)
    return grads, gate_grad


def modl_gradients(ens, obs, y, pred=None):
    """Parameter gradients of the merged loss for every trainable learner.

    Returns ``(grads, pred)`` where ``grads`` maps learner name to a gradient
    structure (plus ``"gate"`` in moe mode). The filter has no entry: it never
    receives a gradient.
    """
    if not 0 <= y < ens.num_classes:
        raise IndexError(f"class index {y} out of range for {ens.num_classes} classes")
    pred = pred if pred is not None else modl_predict(ens, obs)
    score_grads, gate_grad = _score_gradients(ens, pred, y)
    grads = {}
    if "medium" in score_grads:
        grads["medium"] = mlp_backward(ens.medium, pred.tapes["medium"], score_grads["medium"])
    if "slow" in score_grads:
        grads["slow"] = set_backward(ens.slow, pred.tapes["slow"], score_grads["slow"])
    if gate_grad is not None:
        grads["gate"] = mlp_backward(ens.moe_gate, pred.gate_tape, gate_grad)
    return grads, pred


def modl_learn(ens, obs, y, pred=None):
    """One learning step after the label for ``obs`` is revealed. Mutates ``ens``."""
    grads, pred = modl_gradients(ens, obs, y, pred)
    lr = ens.config.learning_rate
    if "medium" in grads:
        sgd_step(ens.medium, grads["medium"], lr, inplace=True)
    if "slow" in grads:
        set_sgd_step(ens.slow, grads["slow"], lr, inplace=True)
    if "gate" in grads:
        sgd_step(ens.moe_gate, grads["gate"], lr, inplace=True)
    if ens.fast is not None:
        ens.fast = omlr_update(ens.fast, pred.concat, y)
    if ens.config.merge_mode == "greedy":
        for name, q in zip(pred.scores.names, pred.normalized):
            ens.greedy_history[name].append(int(np.argmax(q)) == y)
    return ens


def merged_loss(ens, obs, y):
    """Cross-entropy of the merged prediction; used by gradient checks."""
    probs = modl_predict(ens, obs).probs
    return float(-np.log(max(probs[y], 1e-15)))


def training_loss(ens, obs, y):
    """Objective whose gradient :func:`modl_gradients` returns.

    Joint modes train through the merged prediction. ``ensemble`` and
    ``greedy`` train every neural learner on its own cross-entropy, so their
    objective is the sum of those per-learner losses.
    """
    if ens.config.merge_mode in JOINT_MODES:
        return merged_loss(ens, obs, y)
    pred = modl_predict(ens, obs)
    return float(sum(-np.log(max(q[y], 1e-15)) for n, q in zip(pred.scores.names, pred.normalized) if n != "fast"))
