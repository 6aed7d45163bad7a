"""Seeded online-learning trials, summaries and the auxiliary experiments.

Every trial is one pass over a masked stream with strict predict-then-learn
ordering: the error bit for step t is stored before the learner sees y_t.
"""

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bayes_glm import OlrState, OmlrState, olr_predict, olr_update, omlr_predict, omlr_update
from .combiner import MERGE_MODES, ModlConfig, init_ensemble, modl_learn, modl_predict
from .hedge_odl import complexity_probe, hedge_forward, hedge_learn, init_hedge_net, probe_csv
from .stream import MaskPolicy, load_csv, load_libsvm, mask_stream, to_concat_input

MODELS = ("modl", "olr", "mlp", "set", "odl_naive", "odl_fast")
PF_GRID = (0.01, 0.2, 0.5, 0.8, 0.99)
COMPLEXITY_L_VALUES = (5, 11, 20, 40)

# name -> (format, label column, feature count, features kept)
KNOWN_DATASETS = {
    "german": ("csv", -1, 24, None),
    "svmguide3": ("libsvm", 0, 21, None),
    "magic04": ("csv", -1, 10, None),
    "a8a": ("libsvm", 0, 123, None),
    "higgs": ("csv", 0, 28, 21),
    "susy": ("csv", 0, 18, 8),
}
DEFAULT_LEARNING_RATES = {
    "german": 0.01,
    "svmguide3": 0.01,
    "magic04": 0.001,
    "a8a": 0.001,
    "susy": 0.005,
    "higgs": 0.005,
}
FALLBACK_LEARNING_RATE = 0.01

# keys that change how a run is executed but never what it computes
_RUNTIME_KEYS = ("output_dir", "workers", "exclusive")


class ConfigError(ValueError):
    pass


class TrialError(RuntimeError):
    def __init__(self, seed, step, cause):
        super().__init__(f"seed {seed} failed at step {step}: {cause!r}")
        self.seed = seed
        self.step = step


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "german"
    data_format: str = "auto"  # auto | csv | libsvm
    label_column: object = None
    n_features: int = None
    max_features: int = None
    model: str = "modl"
    merge_mode: str = "score_sum"
    p_f: float = 1.0
    always_available: int = 2
    seeds: tuple = (0,)
    learning_rate: float = None
    hidden_widths: tuple = (250, 250, 250)
    set_width: int = 128
    embedding_dim: int = 32
    n_blocks: int = 6
    layers_per_block: int = 3
    odl_width: int = 50
    odl_layers: int = 6
    odl_beta: float = 0.99
    odl_smoothing: float = 0.2
    subsample: int = 50_000
    standardize: bool = False
    output_dir: str = None
    workers: int = 1
    exclusive: bool = False

    def __post_init__(self):
        seeds = (self.seeds,) if isinstance(self.seeds, int) else tuple(int(s) for s in self.seeds)
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not seeds:
            raise ConfigError("seeds must be non-empty")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.merge_mode not in MERGE_MODES:
            raise ConfigError(f"merge_mode must be one of {MERGE_MODES}, got {self.merge_mode!r}")
        if self.data_format not in ("auto", "csv", "libsvm"):
            raise ConfigError("data_format must be auto, csv or libsvm")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.p_f <= 1.0:
            raise ConfigError("p_f must be in [0, 1]")
        if self.subsample is not None and self.subsample < 1:
            raise ConfigError("subsample must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.exclusive and self.workers > 1:
            raise ConfigError("exclusive execution refuses parallel trials (workers > 1)")

    @property
    def dataset_key(self):
        return Path(self.dataset).name.split(".")[0].lower()

    def resolved_learning_rate(self):
        if self.learning_rate is not None:
            return float(self.learning_rate)
        return DEFAULT_LEARNING_RATES.get(self.dataset_key, FALLBACK_LEARNING_RATE)

    def resolved(self):
        """Plain dict with every default filled in."""
        out = asdict(self)
        out["learning_rate"] = self.resolved_learning_rate()
        out["seeds"] = list(self.seeds)
        out["hidden_widths"] = list(self.hidden_widths)
        return out

    def digest(self):
        payload = {k: v for k, v in self.resolved().items() if k not in _RUNTIME_KEYS and k != "seeds"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_mapping(cls, mapping):
        """Build from a (possibly nested) mapping; nested sections are flattened."""
        flat = {}

        def walk(m):
            for k, v in m.items():
                if isinstance(v, dict):
                    walk(v)
                else:
                    flat[k.replace("-", "_")] = v

        walk(mapping or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key in ("seeds", "hidden_widths"):
            if key in flat and isinstance(flat[key], list):
                flat[key] = tuple(flat[key])
        return cls(**flat)


def load_config_file(path):
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data or {}


# datasets -----------------------------------------------------------------

_DATASET_CACHE = {}


def data_root():
    return Path(os.environ.get("MODL_DATA_DIR", "data"))


def resolve_dataset_path(name):
    path = Path(name)
    if path.is_file():
        return path
    root = data_root()
    if root.is_dir():
        stem = path.name.lower()
        for candidate in sorted(root.iterdir()):
            if candidate.is_file() and candidate.name.split(".")[0].lower() == stem:
                return candidate
    raise FileNotFoundError(f"dataset {name!r} not found (looked for a file or for {root}/{path.name}.*)")


def load_dataset(cfg):
    path = resolve_dataset_path(cfg.dataset)
    key = (str(path.resolve()), cfg.data_format, cfg.label_column, cfg.n_features, cfg.max_features)
    if key in _DATASET_CACHE:
        return _DATASET_CACHE[key]
    fmt, label_col, n_feat, keep = KNOWN_DATASETS.get(cfg.dataset_key, ("auto", -1, None, None))
    fmt = cfg.data_format if cfg.data_format != "auto" else fmt
    if fmt == "auto":
        fmt = "libsvm" if path.suffix.lower() in (".svm", ".libsvm") else "csv"
    label_col = cfg.label_column if cfg.label_column is not None else label_col
    n_feat = cfg.n_features or n_feat
    keep = cfg.max_features or keep
    if fmt == "libsvm":
        if n_feat is None:
            raise ConfigError("libsvm input needs n_features")
        ds = load_libsvm(path, n_feat, name=cfg.dataset_key)
    else:
        ds = load_csv(path, label_column=label_col, name=cfg.dataset_key)
    if keep is not None and keep < ds.d:
        ds = type(ds)(ds.features[:, :keep].copy(), ds.labels, ds.num_classes, ds.name, ds.class_names)
    _DATASET_CACHE[key] = ds
    return ds


# stream learners ----------------------------------------------------------


class ModlStreamLearner:
    def __init__(self, num_features, num_classes, config, rng):
        self.ens = init_ensemble(num_features, num_classes, config, rng)

    def predict_one(self, obs):
        pred = modl_predict(self.ens, obs)
        return pred.probs, pred

    def learn_one(self, obs, y, cache):
        modl_learn(self.ens, obs, y, cache)


class OlrStreamLearner:
    """The closed-form filter alone on the [values; mask] vector."""

    def __init__(self, num_features, num_classes):
        self.binary = num_classes == 2
        dim = 2 * num_features
        self.state = OlrState.fresh(dim) if self.binary else OmlrState.fresh(dim, num_classes)

    def predict_one(self, obs):
        x = to_concat_input(obs)
        if self.binary:
            p = olr_predict(self.state, x)
            return np.array([1.0 - p, p]), x
        return omlr_predict(self.state, x), x

    def learn_one(self, obs, y, cache):
        if self.binary:
            self.state = olr_update(self.state, cache, y)
        else:
            self.state = omlr_update(self.state, cache, y)


class OdlStreamLearner:
    def __init__(self, num_features, num_classes, cfg, rng, mode):
        self.mode = mode
        self.net = init_hedge_net(
            2 * num_features,
            num_classes,
            cfg.odl_width,
            cfg.odl_layers,
            cfg.odl_beta,
            cfg.odl_smoothing,
            cfg.resolved_learning_rate(),
            rng,
        )

    def predict_one(self, obs):
        F, _, tape = hedge_forward(self.net, to_concat_input(obs))
        return F, tape

    def learn_one(self, obs, y, cache):
        hedge_learn(self.net, cache, y, self.mode)


def modl_config_from(cfg, learners=None):
    kwargs = dict(
        hidden_widths=cfg.hidden_widths,
        set_width=cfg.set_width,
        embedding_dim=cfg.embedding_dim,
        n_blocks=cfg.n_blocks,
        layers_per_block=cfg.layers_per_block,
        learning_rate=cfg.resolved_learning_rate(),
        merge_mode=cfg.merge_mode,
    )
    if learners is not None:
        kwargs.update(learners=learners, merge_mode="score_sum")
    return ModlConfig(**kwargs)


def build_learner(cfg, num_features, num_classes, seed):
    rng = np.random.default_rng(seed)
    if cfg.model == "modl":
        return ModlStreamLearner(num_features, num_classes, modl_config_from(cfg), rng)
    if cfg.model == "mlp":
        return ModlStreamLearner(num_features, num_classes, modl_config_from(cfg, ("medium",)), rng)
    if cfg.model == "set":
        return ModlStreamLearner(num_features, num_classes, modl_config_from(cfg, ("slow",)), rng)
    if cfg.model == "olr":
        return OlrStreamLearner(num_features, num_classes)
    return OdlStreamLearner(num_features, num_classes, cfg, rng, cfg.model.split("_")[1])


# trials -------------------------------------------------------------------


@dataclass
class TrialResult:
    seed: int
    per_step_error: np.ndarray  # uint8, 1 where argmax(probs) != y
    cumulative_error: int
    wall_seconds: float
    config_digest: str
    log_loss: np.ndarray

    @property
    def curve(self):
        return np.cumsum(self.per_step_error, dtype=np.int64)


@dataclass
class SummaryStats:
    mean: float
    std: float
    single_seed: bool
    seeds: list
    cumulative_errors: list
    curve_mean: np.ndarray
    curve_std: np.ndarray
    failures: dict = field(default_factory=dict)


def run_stream(learner, observations, seed=0, digest=""):
    """Predict-then-learn loop over an iterable of observations."""
    errors, losses = [], []
    start = time.perf_counter()
    t = -1
    try:
        for t, obs in enumerate(observations):
            probs, cache = learner.predict_one(obs)
            y = obs.label
            # the error bit is committed before any state change for this step
            errors.append(int(np.argmax(probs)) != y)
            losses.append(-np.log(max(float(probs[y]), 1e-15)))
            learner.learn_one(obs, y, cache)
    except Exception as exc:
        raise TrialError(seed, t, exc) from exc
    per_step = np.asarray(errors, dtype=np.uint8)
    return TrialResult(
        seed,
        per_step,
        int(per_step.sum()),
        time.perf_counter() - start,
        digest,
        np.asarray(losses, dtype=np.float64),
    )


def run_trial(cfg, seed, dataset=None):
    ds = dataset if dataset is not None else load_dataset(cfg)
    if cfg.subsample is not None and ds.T > cfg.subsample:
        ds = ds.head(cfg.subsample)
    learner = build_learner(cfg, ds.d, ds.num_classes, seed)
    policy = MaskPolicy(cfg.p_f, cfg.always_available, seed)
    return run_stream(learner, mask_stream(ds, policy, cfg.standardize), seed, cfg.digest())


def summarize(results, failures=None):
    results = sorted(results, key=lambda r: r.seed)
    if not results:
        raise RuntimeError(f"every trial failed: {failures}")
    errs = np.array([r.cumulative_error for r in results], dtype=np.float64)
    curves = np.array([r.curve for r in results], dtype=np.float64)
    single = len(results) < 2
    return SummaryStats(
        float(errs.mean()),
        0.0 if single else float(errs.std(ddof=1)),
        single,
        [r.seed for r in results],
        [int(e) for e in errs],
        curves.mean(axis=0),
        np.zeros(curves.shape[1]) if single else curves.std(axis=0, ddof=1),
        dict(failures or {}),
    )


def run_trials(cfg, dataset=None):
    """Run every seed; returns (results, failures keyed by seed)."""
    results, failures = [], {}
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {s: pool.submit(run_trial, cfg, s, dataset) for s in cfg.seeds}
            for s, fut in futures.items():
                try:
                    results.append(fut.result())
                except Exception as exc:
                    failures[s] = repr(exc)
    else:
        for s in cfg.seeds:
            try:
                results.append(run_trial(cfg, s, dataset))
            except Exception as exc:
                failures[s] = repr(exc)
    return results, failures


def run_experiment(cfg, dataset=None):
    results, failures = run_trials(cfg, dataset)
    return summarize(results, failures), results


def ablate_merge(cfg, modes=MERGE_MODES, dataset=None):
    return {mode: run_experiment(replace(cfg, model="modl", merge_mode=mode), dataset) for mode in modes}


def mask_sweep(cfg, p_values=PF_GRID, dataset=None):
    return {p: run_experiment(replace(cfg, p_f=float(p)), dataset) for p in p_values}


# outputs ------------------------------------------------------------------


def summary_dict(summary, results):
    return {
        "mean_cumulative_error": summary.mean,
        "std_cumulative_error": summary.std,
        "single_seed": summary.single_seed,
        "seeds": summary.seeds,
        "cumulative_errors": summary.cumulative_errors,
        "wall_seconds": {str(r.seed): r.wall_seconds for r in results},
        "final_log_loss_mean": {str(r.seed): float(r.log_loss.mean()) if r.log_loss.size else None for r in results},
        "failures": {str(k): v for k, v in summary.failures.items()},
    }


def emit_outputs(summary, results, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out} is not writable")
    (out / "summary.json").write_text(json.dumps(summary_dict(summary, results), indent=2) + "\n")
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    for r in results:
        lines = ["step,cum_error"] + [f"{t + 1},{c}" for t, c in enumerate(r.curve)]
        (curves / f"seed_{r.seed}.csv").write_text("\n".join(lines) + "\n")
    mean_lines = ["step,mean_cum_error,std_cum_error"] + [
        f"{t + 1},{m:.6g},{s:.6g}" for t, (m, s) in enumerate(zip(summary.curve_mean, summary.curve_std))
    ]
    (curves / "mean.csv").write_text("\n".join(mean_lines) + "\n")
    echo = {"config": cfg.resolved(), "config_digest": cfg.digest(), "standardize": cfg.standardize}
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    return out


def output_root():
    return Path(os.environ.get("MODL_OUTPUT_ROOT", "outputs"))


# toy filter experiment ----------------------------------------------------


@dataclass
class ToyReport:
    mean: np.ndarray
    cov: np.ndarray
    theta_mle: np.ndarray
    distance: float
    log_likelihood: np.ndarray  # predictive log-likelihood per step
    n: int


def toy_data(n, seed=0, theta=(1.0, 2.0)):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.normal(-1.5, 1.0, size=n), np.ones(n)])
    p = 1.0 / (1.0 + np.exp(-X @ np.asarray(theta)))
    y = (rng.uniform(size=n) < p).astype(np.int64)
    return X, y


def batch_mle(X, y, lr=1.0, tol=1e-10, max_iter=200_000):
    """Maximum-likelihood logistic weights by full-batch gradient descent."""
    theta = np.zeros(X.shape[1])
    if X.shape[0] == 0:
        return theta
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-X @ theta))
        grad = X.T @ (p - y) / X.shape[0]
        theta -= lr * grad
        if np.linalg.norm(grad) < tol:
            break
    return theta


def run_toy_olr(n=1000, seed=0):
    X, y = toy_data(n, seed)
    state = OlrState.fresh(2)
    ll = np.empty(n)
    for t in range(n):
        p = olr_predict(state, X[t])
        ll[t] = np.log(max(p if y[t] else 1.0 - p, 1e-15))
        state = olr_update(state, X[t], int(y[t]))
    theta = batch_mle(X, y)
    m = state.posterior.mean
    return ToyReport(m, state.posterior.cov, theta, float(np.linalg.norm(m - theta)) if n else 0.0, ll, n)


def run_complexity_bench(L_values=COMPLEXITY_L_VALUES, steps=2000, out_path=None, **probe_kwargs):
    if steps < 2000:
        raise ConfigError("the complexity bench needs at least 2000 steps")
    rows = complexity_probe(L_values, steps, **probe_kwargs)
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(probe_csv(rows))
    return rows
