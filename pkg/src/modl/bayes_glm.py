"""Closed-form recursive Bayesian filters for linear and logistic regression.

The logistic filter linearises the sigmoid around the current posterior mean
and applies a rank-one Gaussian update, so each observation costs O(d^2) and
no matrix is ever inverted. The observation-noise term is set to x P x^T,
which makes the gain invariant to the overall scale of P and stops a single
large-magnitude input from taking an oversized step.

All update functions are pure: they return a new state and leave their
arguments untouched.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, as_matrix, as_vector, sigmoid

DEFAULT_EPSILON = 1e-12


class FilterError(FloatingPointError):
    """A filter update produced a non-finite quantity.

    The offending step's intermediate values are kept on ``diagnostics``.
    """

    def __init__(self, message, diagnostics):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def standard(cls, dim):
        """Zero mean, identity covariance."""
        return cls(np.zeros(dim), np.eye(dim))

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class OlrState:
    posterior: GaussianPosterior
    epsilon: float = DEFAULT_EPSILON

    @classmethod
    def fresh(cls, dim, epsilon=DEFAULT_EPSILON):
        return cls(GaussianPosterior.standard(dim), epsilon)

    @property
    def dim(self):
        return self.posterior.dim


@dataclass(frozen=True)
class OmlrState:
    per_class: tuple

    @classmethod
    def fresh(cls, dim, num_classes, epsilon=DEFAULT_EPSILON):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        return cls(tuple(OlrState.fresh(dim, epsilon) for _ in range(num_classes)))

    @property
    def num_classes(self):
        return len(self.per_class)

    @property
    def dim(self):
        return self.per_class[0].dim


@dataclass(frozen=True)
class BlrState:
    posterior: GaussianPosterior
    noise_var: float = 1.0

    def __post_init__(self):
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")

    @classmethod
    def fresh(cls, dim, noise_var=1.0):
        return cls(GaussianPosterior.standard(dim), noise_var)

    @property
    def dim(self):
        return self.posterior.dim


def _check_input(x, dim):
    x = as_vector(x, "x")
    if x.shape[0] != dim:
        raise DimensionError(f"expected input of length {dim}, got {x.shape[0]}")
    return x


def _symmetrize(P):
    return 0.5 * (P + P.T)


def olr_predict(state, x):
    """Probability of the positive class under the posterior mean."""
    x = _check_input(x, state.dim)
    return sigmoid(float(x @ state.posterior.mean))


def olr_update(state, x, y):
    if y not in (0, 1):
        raise ValueError(f"binary target must be 0 or 1, got {y!r}")
    x = _check_input(x, state.dim)
    m, P = state.posterior.mean, state.posterior.cov

    Px = P @ x
    q = float(x @ Px)
    if not q >= state.epsilon:
        if np.isnan(q):
            raise FilterError("non-finite quadratic form", {"q": q})
        return state

    p = sigmoid(float(x @ m))
    slope = p * (1.0 - p)
    xi = q * (1.0 + slope * slope)
    gain = Px * (slope / xi)
    new_mean = m + gain * (y - p)
    # diag of outer(gain, gain) * xi is gain_i**2 * xi >= 0, so the trace
    # cannot grow even after rounding
    new_cov = _symmetrize(P - np.outer(gain, gain) * xi)

    if not (np.isfinite(new_mean).all() and np.isfinite(new_cov).all()):
        raise FilterError(
            "logistic filter update diverged",
            {"q": q, "p": p, "slope": slope, "xi": xi, "gain_norm": float(np.linalg.norm(gain))},
        )
    return OlrState(GaussianPosterior(new_mean, new_cov), state.epsilon)


def omlr_predict(state, x):
    """One-vs-rest class probabilities, normalised to sum to one."""
    x = _check_input(x, state.dim)
    scores = np.array([sigmoid(float(x @ s.posterior.mean)) for s in state.per_class])
    total = scores.sum()
    if np.all(scores < 1e-12):
        return np.full(state.num_classes, 1.0 / state.num_classes)
    return scores / total


def omlr_update(state, x, y):
    if not 0 <= y < state.num_classes:
        raise ValueError(f"class index {y} out of range for {state.num_classes} classes")
    x = _check_input(x, state.dim)
    updated = tuple(olr_update(s, x, int(k == y)) for k, s in enumerate(state.per_class))
    if all(new is old for new, old in zip(updated, state.per_class)):
        return state
    return OmlrState(updated)


def blr_update(state, x, y):
    x = _check_input(x, state.dim)
    m, P = state.posterior.mean, state.posterior.cov
    Px = P @ x
    S = float(x @ Px) + state.noise_var
    gain = Px / S
    new_mean = m + gain * (float(y) - float(x @ m))
    new_cov = _symmetrize(P - np.outer(gain, gain) * S)
    return BlrState(GaussianPosterior(new_mean, new_cov), state.noise_var)


def blr_batch_posterior(X, y, prior, noise_var):
    """Posterior of Bayesian linear regression by a direct dense solve.

    Kept as a reference path for checking :func:`blr_update`.
    """
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    if X.shape[0] != y.shape[0]:
        raise DimensionError(f"{X.shape[0]} rows but {y.shape[0]} targets")
    if X.shape[1] != prior.dim:
        raise DimensionError(f"X has {X.shape[1]} columns, prior has dim {prior.dim}")
    if X.shape[0] == 0:
        return prior
    try:
        prior_prec = np.linalg.inv(prior.cov)
        precision = prior_prec + X.T @ X / noise_var
        cov = np.linalg.inv(precision)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular posterior system: {exc}") from exc
    mean = cov @ (X.T @ y / noise_var + prior_prec @ prior.mean)
    return GaussianPosterior(mean, _symmetrize(cov))

