"""scikit-learn style wrappers around the functional learners.

All classifiers learn online: ``partial_fit`` walks the rows in order and
updates after each one, ``fit`` resets and makes a single pass. The stream
models (:class:`MODLClassifier`, :class:`HedgeODLClassifier`) treat NaN
entries as unavailable features.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bayes_glm import BlrState, OlrState, OmlrState, blr_update, olr_predict, olr_update, omlr_predict, omlr_update
from .combiner import LEARNERS, ModlConfig, init_ensemble, modl_learn, modl_predict
from .hedge_odl import hedge_forward, hedge_learn, init_hedge_net
from .stream import observation_from_row, to_concat_input


def _check_X(X, allow_nan=False):
    return check_array(X, dtype=np.float64, ensure_all_finite="allow-nan" if allow_nan else True)


def _check_Xy(X, y, allow_nan=False):
    X = _check_X(X, allow_nan)
    y = np.asarray(y).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
    return X, y


class _OnlineClassifier(ClassifierMixin, BaseEstimator):
    """Shared class bookkeeping; subclasses implement _init_model/_proba_row/_learn_row."""

    _allow_nan = False

    def _setup(self, classes, n_features):
        classes = np.unique(np.asarray(classes))
        if classes.size < 2:
            raise ValueError("need at least two classes")
        self.classes_ = classes
        self.n_features_in_ = n_features
        self._init_model()

    def _encode(self, y):
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if np.any(self.classes_[idx] != y):
            raise ValueError(f"labels {sorted(set(np.asarray(y)[self.classes_[idx] != y]))} not in classes_")
        return idx

    def _check_width(self, X):
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, estimator expects {self.n_features_in_}")

    def partial_fit(self, X, y, classes=None):
        X, y = _check_Xy(X, y, self._allow_nan)
        if not hasattr(self, "classes_"):
            if classes is None:
                raise ValueError("classes must be passed on the first call to partial_fit")
            self._setup(classes, X.shape[1])
        self._check_width(X)
        for row, label in zip(X, self._encode(y)):
            self._learn_row(row, int(label))
        return self

    def fit(self, X, y):
        X, y = _check_Xy(X, y, self._allow_nan)
        for attr in ("classes_", "n_features_in_"):
            self.__dict__.pop(attr, None)
        self._setup(np.unique(y), X.shape[1])
        return self.partial_fit(X, y)

    def predict_proba(self, X):
        check_is_fitted(self, "classes_")
        X = _check_X(X, self._allow_nan)
        self._check_width(X)
        return np.array([self._proba_row(row) for row in X]).reshape(X.shape[0], len(self.classes_))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def predict_one(self, x):
        """Class probabilities for a single row."""
        return self.predict_proba(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]

    def learn_one(self, x, y):
        return self.partial_fit(np.asarray(x, dtype=np.float64).reshape(1, -1), [y])


class OnlineBayesianLogisticRegression(_OnlineClassifier):
    """Closed-form Gaussian filter for logistic regression (one-vs-rest beyond two classes).

    No intercept is added; append a constant column if one is wanted.
    """

    def __init__(self, epsilon=1e-12):
        self.epsilon = epsilon

    def _init_model(self):
        d, C = self.n_features_in_, len(self.classes_)
        self.state_ = OlrState.fresh(d, self.epsilon) if C == 2 else OmlrState.fresh(d, C, self.epsilon)

    def _proba_row(self, row):
        if len(self.classes_) == 2:
            p = olr_predict(self.state_, row)
            return np.array([1.0 - p, p])
        return omlr_predict(self.state_, row)

    def _learn_row(self, row, label):
        update = olr_update if len(self.classes_) == 2 else omlr_update
        self.state_ = update(self.state_, row, label)

    @property
    def coef_(self):
        check_is_fitted(self, "state_")
        if isinstance(self.state_, OlrState):
            return self.state_.posterior.mean[None, :]
        return np.array([s.posterior.mean for s in self.state_.per_class])


class OnlineBayesianLinearRegression(RegressorMixin, BaseEstimator):
    """Exact sequential Gaussian posterior for linear regression with known noise."""

    def __init__(self, noise_var=1.0):
        self.noise_var = noise_var

    def partial_fit(self, X, y):
        X, y = _check_Xy(X, y)
        if not hasattr(self, "state_"):
            self.n_features_in_ = X.shape[1]
            self.state_ = BlrState.fresh(X.shape[1], self.noise_var)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, estimator expects {self.n_features_in_}")
        for row, target in zip(X, y.astype(np.float64)):
            self.state_ = blr_update(self.state_, row, float(target))
        return self

    def fit(self, X, y):
        self.__dict__.pop("state_", None)
        return self.partial_fit(X, y)

    def predict(self, X, return_std=False):
        check_is_fitted(self, "state_")
        X = _check_X(X)
        mean = X @ self.state_.posterior.mean
        if not return_std:
            return mean
        var = np.einsum("ij,jk,ik->i", X, self.state_.posterior.cov, X) + self.noise_var
        return mean, np.sqrt(var)

    @property
    def coef_(self):
        check_is_fitted(self, "state_")
        return self.state_.posterior.mean

    @property
    def covariance_(self):
        check_is_fitted(self, "state_")
        return self.state_.posterior.cov


class MODLClassifier(_OnlineClassifier):
    """Stacked filter + MLP + set learner trained online; NaN marks a missing feature."""

    _allow_nan = True

    def __init__(self, hidden_widths=(250, 250, 250), set_width=128, embedding_dim=32, n_blocks=6,
                 layers_per_block=3, learning_rate=0.01, merge_mode="score_sum", learners=LEARNERS,
                 random_state=None):
        self.hidden_widths = hidden_widths
        self.set_width = set_width
        self.embedding_dim = embedding_dim
        self.n_blocks = n_blocks
        self.layers_per_block = layers_per_block
        self.learning_rate = learning_rate
        self.merge_mode = merge_mode
        self.learners = learners
        self.random_state = random_state

    def _init_model(self):
        config = ModlConfig(
            hidden_widths=tuple(self.hidden_widths),
            set_width=self.set_width,
            embedding_dim=self.embedding_dim,
            n_blocks=self.n_blocks,
            layers_per_block=self.layers_per_block,
            learning_rate=self.learning_rate,
            merge_mode=self.merge_mode,
            learners=tuple(self.learners),
        )
        rng = np.random.default_rng(self.random_state)
        self.ensemble_ = init_ensemble(self.n_features_in_, len(self.classes_), config, rng)
        self.n_steps_ = 0

    def _proba_row(self, row):
        return modl_predict(self.ensemble_, observation_from_row(row)).probs

    def _learn_row(self, row, label):
        modl_learn(self.ensemble_, observation_from_row(row, label, self.n_steps_), label)
        self.n_steps_ += 1


class HedgeODLClassifier(_OnlineClassifier):
    """Early-exit sigmoid network with hedge weights over exits, fed [values; mask]."""

    _allow_nan = True

    def __init__(self, width=50, n_layers=6, beta=0.99, smoothing=0.2, learning_rate=0.01, backprop="fast",
                 random_state=None):
        self.width = width
        self.n_layers = n_layers
        self.beta = beta
        self.smoothing = smoothing
        self.learning_rate = learning_rate
        self.backprop = backprop
        self.random_state = random_state

    def _init_model(self):
        if self.backprop not in ("naive", "fast"):
            raise ValueError("backprop must be 'naive' or 'fast'")
        self.net_ = init_hedge_net(
            2 * self.n_features_in_,
            len(self.classes_),
            self.width,
            self.n_layers,
            self.beta,
            self.smoothing,
            self.learning_rate,
            np.random.default_rng(self.random_state),
        )

    def _proba_row(self, row):
        return hedge_forward(self.net_, to_concat_input(observation_from_row(row)))[0]

    def _learn_row(self, row, label):
        tape = hedge_forward(self.net_, to_concat_input(observation_from_row(row)))[2]
        hedge_learn(self.net_, tape, label, self.backprop)

    @property
    def alphas_(self):
        check_is_fitted(self, "net_")
        return self.net_.alphas
