"""Shallow residual ReLU networks and their effective tuples.

A network of width ``d`` on ``R^{d_in}`` computes

    N(x) = w1[:, 0] . x + bias[0] + sum_j w2[j-1] * relu(w1[:, j] . x + bias[j])

where column 0 of ``w1`` is the skip connection.  The effective tuple rewrites
the same function as an affine background plus kinks ``Delta_j`` along unit
normals ``n_j`` at offsets ``o_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _frozen(a, ndim) -> np.ndarray:
    arr = np.array(a, dtype=float, ndmin=ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NetworkConfig:
    """Raw parameters ``(w1, w2, bias)`` of a shallow residual ReLU network.

    ``w1`` has shape ``(d_in, d + 1)``, ``w2`` shape ``(d,)`` and ``bias`` shape
    ``(d + 1,)``.  Index 0 of ``w1``'s columns and of ``bias`` is the skip path.
    """

    w1: np.ndarray
    w2: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w1 = _frozen(self.w1, 2)
        w2 = np.array(self.w2, dtype=float).reshape(-1)
        w2.setflags(write=False)
        bias = np.array(self.bias, dtype=float).reshape(-1)
        bias.setflags(write=False)
        d = w2.shape[0]
        if w1.shape[1] != d + 1 or bias.shape[0] != d + 1:
            raise ValueError(
                f"inconsistent shapes: w1 {w1.shape}, w2 {w2.shape}, bias {bias.shape}")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "bias", bias)

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d(self) -> int:
        return self.w2.shape[0]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.w2.size + self.bias.size

    @classmethod
    def zeros(cls, d_in: int, d: int) -> "NetworkConfig":
        return cls(np.zeros((d_in, d + 1)), np.zeros(d), np.zeros(d + 1))

    @classmethod
    def affine(cls, linear, const) -> "NetworkConfig":
        linear = np.atleast_1d(np.asarray(linear, dtype=float))
        return cls(linear.reshape(-1, 1), np.zeros(0), [const])

    def to_vector(self) -> np.ndarray:
        """Flatten as ``w1`` column by column, then ``w2``, then ``bias``."""
        return np.concatenate([self.w1.T.ravel(), self.w2, self.bias])

    @classmethod
    def from_vector(cls, theta, d_in: int, d: int) -> "NetworkConfig":
        theta = np.asarray(theta, dtype=float)
        n1 = d_in * (d + 1)
        if theta.shape != (n1 + 2 * d + 1,):
            raise ValueError(f"parameter vector has length {theta.shape}, expected {n1 + 2 * d + 1}")
        w1 = theta[:n1].reshape(d + 1, d_in).T
        return cls(w1, theta[n1:n1 + d], theta[n1 + d:])

    def norm_inf(self) -> float:
        """Largest absolute parameter entry."""
        return float(np.max(np.abs(self.to_vector())))

    def widen(self, normal, offset: float, kink: float) -> "NetworkConfig":
        """Append the neuron ``kink * relu(normal . x - offset)``."""
        w1 = np.column_stack([self.w1, np.asarray(normal, dtype=float)])
        return NetworkConfig(w1, np.append(self.w2, kink), np.append(self.bias, -offset))


def as_points(x, d_in: int):
    """Coerce ``x`` to an ``(N, d_in)`` array; also report whether it was a single point.

    For ``d_in == 1`` a flat array is read as a batch of scalars.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        X, single = x.reshape(1, 1), True
    elif x.ndim == 1:
        if x.shape[0] == d_in:
            X, single = x.reshape(1, -1), True
        elif d_in == 1:
            X, single = x.reshape(-1, 1), False
        else:
            raise ValueError(f"point dimension {x.shape[0]} does not match d_in = {d_in}")
    else:
        X, single = x, False
    if X.shape[1] != d_in:
        raise ValueError(f"point dimension {X.shape[1]} does not match d_in = {d_in}")
    return X, single


def preactivations(W: NetworkConfig, X: np.ndarray) -> np.ndarray:
    """Hidden pre-activations, shape ``(N, d)``."""
    return X @ W.w1[:, 1:] + W.bias[1:]


def eval_response(W: NetworkConfig, x):
    """Response at a point (returns a float) or at each row of ``(N, d_in)``."""
    X, single = as_points(x, W.d_in)
    out = X @ W.w1[:, 0] + W.bias[0]
    if W.d:
        out = out + np.maximum(preactivations(W, X), 0.0) @ W.w2
    return float(out[0]) if single else out


def response_jacobian(W: NetworkConfig, X: np.ndarray) -> np.ndarray:
    """Gradient of the response w.r.t. the flat parameters, one row per point.

    The ReLU derivative at 0 is taken to be 0.
    """
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    pre = preactivations(W, X)
    active = (pre > 0.0).astype(float)
    # d/dw1[:, j] = w2_j * 1[pre_j > 0] * x for j >= 1, and x for the skip column
    col_scale = np.concatenate([np.ones((N, 1)), active * W.w2], axis=1)  # (N, d+1)
    g_w1 = (col_scale[:, :, None] * X[:, None, :]).reshape(N, -1)
    g_w2 = np.maximum(pre, 0.0)
    g_b = col_scale
    return np.concatenate([g_w1, g_w2, g_b], axis=1)


def response_subgradient(W: NetworkConfig, x) -> NetworkConfig:
    """Parameter gradient of the response at one point, packed like ``W``."""
    X, _ = as_points(x, W.d_in)
    if X.shape[0] != 1:
        raise ValueError("response_subgradient takes a single point; use response_jacobian for batches")
    return NetworkConfig.from_vector(response_jacobian(W, X)[0], W.d_in, W.d)


@dataclass(frozen=True)
class Neuron:
    normal: np.ndarray
    offset: float
    kink: float

    def __post_init__(self):
        object.__setattr__(self, "normal", _frozen(self.normal, 1))
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "kink", float(self.kink))


@dataclass(frozen=True)
class EffectiveTuple:
    """Neurons ``(n_j, o_j, Delta_j)`` plus an affine background."""

    neurons: tuple
    background_linear: np.ndarray
    background_const: float

    def __post_init__(self):
        object.__setattr__(self, "neurons", tuple(self.neurons))
        lin = _frozen(self.background_linear, 1)
        object.__setattr__(self, "background_linear", lin)
        object.__setattr__(self, "background_const", float(self.background_const))
        for nr in self.neurons:
            if nr.normal.shape != lin.shape:
                raise ValueError("neuron normal dimension does not match the background")
            if abs(np.linalg.norm(nr.normal) - 1.0) > 1e-12:
                raise ValueError("neuron normals must be unit vectors")

    @property
    def d_in(self) -> int:
        return self.background_linear.shape[0]

    @property
    def d(self) -> int:
        return len(self.neurons)


def effective_tuple(W: NetworkConfig) -> EffectiveTuple:
    neurons = []
    const = W.bias[0]
    e1 = np.zeros(W.d_in)
    e1[0] = 1.0
    for j in range(1, W.d + 1):
        w = W.w1[:, j]
        scale = np.linalg.norm(w)
        if scale == 0.0:
            # constant neuron: fold w2 * relu(b) into the background
            const += W.w2[j - 1] * max(W.bias[j], 0.0)
            neurons.append(Neuron(e1, 0.0, 0.0))
        else:
            neurons.append(Neuron(w / scale, -W.bias[j] / scale, scale * W.w2[j - 1]))
    return EffectiveTuple(tuple(neurons), W.w1[:, 0], const)


def eval_tuple(E: EffectiveTuple, x):
    X, single = as_points(x, E.d_in)
    out = X @ E.background_linear + E.background_const
    for nr in E.neurons:
        out = out + nr.kink * np.maximum(X @ nr.normal - nr.offset, 0.0)
    return float(out[0]) if single else out


def tuple_to_network(E: EffectiveTuple) -> NetworkConfig:
    cols = [E.background_linear] + [nr.normal for nr in E.neurons]
    w1 = np.column_stack(cols) if cols else np.zeros((E.d_in, 1))
    w2 = [nr.kink for nr in E.neurons]
    bias = [E.background_const] + [-nr.offset for nr in E.neurons]
    return NetworkConfig(w1, w2, bias)


# --- JSON ---------------------------------------------------------------

def network_to_json(W: NetworkConfig) -> dict:
    return {
        "d_in": W.d_in,
        "d": W.d,
        "w1": [W.w1[:, j].tolist() for j in range(W.d + 1)],
        "w2": W.w2.tolist(),
        "bias": W.bias.tolist(),
    }


def network_from_json(obj: dict) -> NetworkConfig:
    d_in, d = int(obj["d_in"]), int(obj["d"])
    cols = obj["w1"]
    if len(cols) != d + 1 or any(len(c) != d_in for c in cols):
        raise ValueError(f"w1 must be a list of {d + 1} columns of length {d_in}")
    if len(obj["w2"]) != d or len(obj["bias"]) != d + 1:
        raise ValueError(f"w2 must have length {d} and bias length {d + 1}")
    return NetworkConfig(np.array(cols, dtype=float).T.reshape(d_in, d + 1), obj["w2"], obj["bias"])


def tuple_to_json(E: EffectiveTuple) -> dict:
    return {
        "d_in": E.d_in,
        "neurons": [{"normal": nr.normal.tolist(), "offset": nr.offset, "kink": nr.kink}
                    for nr in E.neurons],
        "background": {"linear": E.background_linear.tolist(), "const": E.background_const},
    }


def tuple_from_json(obj: dict) -> EffectiveTuple:
    neurons = tuple(Neuron(n["normal"], n["offset"], n["kink"]) for n in obj["neurons"])
    bg = obj["background"]
    return EffectiveTuple(neurons, bg["linear"], bg["const"])
