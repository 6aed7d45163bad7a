"""Small dense-algebra and nonlinearity helpers shared by every learner.

Vectors and matrices are plain float64 numpy arrays. The helpers here add the
shape checks and the overflow-safe nonlinearities the learners rely on.
"""

import math

import numpy as np

# sigmoid switches to the exp(z)/(1+exp(z)) branch below this point
_SIGMOID_SPLIT = -500.0


class DimensionError(ValueError):
    """Raised when array shapes do not line up."""


def as_vector(v, name="vector"):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-d, got shape {arr.shape}")
    return arr


def as_matrix(m, name="matrix"):
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got shape {arr.shape}")
    return arr


def matvec(m, v):
    """Matrix-vector product with an explicit shape check."""
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise DimensionError(
            f"cannot multiply {m.shape[0]}x{m.shape[1]} matrix by length-{v.shape[0]} vector"
        )
    return m @ v


def sigmoid(z):
    """Logistic function, safe for very negative inputs.

    Works on scalars and arrays; scalars come back as Python floats.
    """
    if np.ndim(z) == 0:
        z = float(z)
        if z < _SIGMOID_SPLIT:
            e = math.exp(z)
            return e / (1.0 + e)
        return 1.0 / (1.0 + math.exp(-z))
    # array path: exp(-log(1 + e^-z)) never overflows
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def softmax(v):
    v = as_vector(v)
    if v.size == 0:
        raise DimensionError("softmax of an empty vector is undefined")
    e = np.exp(v - v.max())
    return e / e.sum()


def log_softmax(v):
    v = as_vector(v)
    if v.size == 0:
        raise DimensionError("log_softmax of an empty vector is undefined")
    shifted = v - v.max()
    return shifted - np.log(np.exp(shifted).sum())


def softplus(z):
    # log(1 + e^z) without overflow for large z
    z = np.asarray(z, dtype=np.float64)
    return np.logaddexp(0.0, z)


def relu(z):
    return np.maximum(z, 0.0)


def one_hot(index, n):
    if not 0 <= index < n:
        raise IndexError(f"class index {index} out of range for {n} classes")
    out = np.zeros(n)
    out[index] = 1.0
    return out


def glorot_uniform(rng, fan_out, fan_in):
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)), shaped (fan_out, fan_in)."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))
