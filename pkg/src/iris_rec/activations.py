import numpy as np

__all__ = ["ACTIVATIONS", "activation", "sigmoid"]


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0).astype(np.float64)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def _identity(x):
    return np.asarray(x, dtype=np.float64)


def _one(x):
    return np.ones_like(x, dtype=np.float64)


# name -> (function, derivative)
ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "softplus": (_softplus, sigmoid),
    "sigmoid": (sigmoid, _sigmoid_grad),
    "identity": (_identity, _one),
}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None
