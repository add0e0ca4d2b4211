"""Small numpy neural-network kernel: dense and LSTM layers, hand-derived
backward passes, inverted dropout, Glorot initialisation and Adam.

Everything runs in float64. Layers operate on batches: dense layers accept
``(..., in)`` arrays and act on the trailing axis, LSTM layers accept
``(batch, time, in)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GATES = ("f", "i", "o", "c")

_SELU_ALPHA = 1.6732632423543772
_SELU_SCALE = 1.0507009873554805


class ShapeError(ValueError):
    """Raised when an array does not have the dimension a layer expects."""


class TapeError(RuntimeError):
    """Raised when backward is requested without a recorded forward pass."""


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


def sigmoid(z):
    # tanh form avoids overflow in exp for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Activation:
    """Pointwise activation with its derivative w.r.t. the pre-activation."""

    KINDS = ("relu", "sigmoid", "tanh", "selu", "linear")

    def __init__(self, kind="linear"):
        if isinstance(kind, Activation):
            kind = kind.kind
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}; expected one of {self.KINDS}")
        self.kind = kind

    def __repr__(self):
        return f"Activation({self.kind!r})"

    def __eq__(self, other):
        return isinstance(other, Activation) and other.kind == self.kind

    def __call__(self, z):
        k = self.kind
        if k == "relu":
            return np.maximum(z, 0.0)
        if k == "sigmoid":
            return sigmoid(z)
        if k == "tanh":
            return np.tanh(z)
        if k == "selu":
            return _SELU_SCALE * np.where(z > 0, z, _SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))
        return z

    def grad(self, z):
        k = self.kind
        if k == "relu":
            return (z > 0).astype(float)
        if k == "sigmoid":
            s = sigmoid(z)
            return s * (1.0 - s)
        if k == "tanh":
            return 1.0 - np.tanh(z) ** 2
        if k == "selu":
            return _SELU_SCALE * np.where(z > 0, 1.0, _SELU_ALPHA * np.exp(np.minimum(z, 0.0)))
        return np.ones_like(z)


def glorot_limit(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def glorot_uniform(rng, shape):
    """Glorot/Xavier uniform sample for an ``(out, in)`` weight matrix."""
    fan_out, fan_in = shape
    limit = glorot_limit(fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


def dropout_mask(rng, shape, rate):
    """Inverted-dropout mask: kept units are scaled by ``1 / (1 - rate)``."""
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


class Dense:
    """Fully connected layer ``activation(x @ W.T + b)`` with ``W`` of shape (out, in)."""

    def __init__(self, units, input_dim, activation="linear"):
        self.units = int(units)
        self.input_dim = int(input_dim)
        self.activation = Activation(activation)
        self.W = np.zeros((self.units, self.input_dim))
        self.b = np.zeros(self.units)

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    @property
    def n_params(self):
        return self.units * self.input_dim + self.units

    def init_params(self, rng):
        self.W[...] = glorot_uniform(rng, self.W.shape)
        self.b[...] = 0.0

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ShapeError(
                f"dense layer expects trailing dimension in={self.input_dim}, got {x.shape[-1]}"
            )
        z = x @ self.W.T + self.b
        return self.activation(z), (x, z)

    def backward(self, dout, cache):
        x, z = cache
        dz = dout * self.activation.grad(z)
        x2 = x.reshape(-1, self.input_dim)
        dz2 = dz.reshape(-1, self.units)
        grads = {"W": dz2.T @ x2, "b": dz2.sum(axis=0)}
        return dz @ self.W, grads


def dense_forward(layer, x):
    """Evaluation-mode forward of a single dense layer."""
    return layer.forward(x)[0]


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden, batch=None):
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


class LSTM:
    """LSTM layer with per-gate input (W), recurrent (U) and bias (b) parameters.

    Gates use the logistic sigmoid. ``activation`` is the cell activation,
    applied both to the candidate state and to the cell state on output.
    Dropout masks (input and recurrent) are drawn once per sequence and
    reused at every step.
    """

    def __init__(self, units, input_dim, activation="tanh", dropout=0.0,
                 recurrent_dropout=0.0, return_sequences=False):
        if not 0.0 <= dropout < 1.0 or not 0.0 <= recurrent_dropout < 1.0:
            raise ValueError("dropout fractions must lie in [0, 1)")
        self.units = int(units)
        self.input_dim = int(input_dim)
        self.activation = Activation(activation)
        self.dropout = float(dropout)
        self.recurrent_dropout = float(recurrent_dropout)
        self.return_sequences = bool(return_sequences)
        h, d = self.units, self.input_dim
        self._params = {}
        for g in GATES:
            self._params[f"W_{g}"] = np.zeros((h, d))
        for g in GATES:
            self._params[f"U_{g}"] = np.zeros((h, h))
        for g in GATES:
            self._params[f"b_{g}"] = np.zeros(h)

    @property
    def params(self):
        return self._params

    def __getattr__(self, name):
        params = self.__dict__.get("_params")
        if params is not None and name in params:
            return params[name]
        raise AttributeError(name)

    @property
    def n_params(self):
        h, d = self.units, self.input_dim
        return 4 * (h * d + h * h + h)

    def init_params(self, rng):
        for g in GATES:
            self._params[f"W_{g}"][...] = glorot_uniform(rng, (self.units, self.input_dim))
        for g in GATES:
            self._params[f"U_{g}"][...] = glorot_uniform(rng, (self.units, self.units))
        for g in GATES:
            self._params[f"b_{g}"][...] = 0.0

    def _check_step(self, x, h, c):
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"LSTM input dimension d={self.input_dim}, got {x.shape[-1]}")
        if h.shape[-1] != self.units:
            raise ShapeError(f"LSTM hidden state dimension h={self.units}, got {h.shape[-1]}")
        if c.shape[-1] != self.units:
            raise ShapeError(f"LSTM cell state dimension h={self.units}, got {c.shape[-1]}")

    def _step(self, x, h_prev, c_prev):
        p = self._params
        pre = {g: x @ p[f"W_{g}"].T + h_prev @ p[f"U_{g}"].T + p[f"b_{g}"] for g in GATES}
        f = sigmoid(pre["f"])
        i = sigmoid(pre["i"])
        o = sigmoid(pre["o"])
        g = self.activation(pre["c"])
        c = f * c_prev + i * g
        h = o * self.activation(c)
        return h, c, (f, i, o, g, pre["c"], c)

    def sample_masks(self, rng, batch):
        if rng is None:
            return None, None
        return (dropout_mask(rng, (batch, self.input_dim), self.dropout),
                dropout_mask(rng, (batch, self.units), self.recurrent_dropout))

    def forward(self, X, training=False, rng=None, masks=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3:
            raise ShapeError(f"LSTM expects (batch, time, features), got shape {X.shape}")
        B, T, d = X.shape
        if T < 1:
            raise ShapeError("LSTM needs a sequence of at least one step")
        if d != self.input_dim:
            raise ShapeError(f"LSTM input dimension d={self.input_dim}, got {d}")
        if masks is None:
            masks = self.sample_masks(rng, B) if training else (None, None)
        mx, mh = masks
        h = np.zeros((B, self.units))
        c = np.zeros((B, self.units))
        steps = []
        H = np.empty((B, T, self.units))
        for t in range(T):
            xt = X[:, t] if mx is None else X[:, t] * mx
            hp = h if mh is None else h * mh
            c_prev = c
            h, c, inner = self._step(xt, hp, c_prev)
            steps.append((xt, hp, c_prev, inner))
            H[:, t] = h
        out = H if self.return_sequences else H[:, -1]
        return out, (steps, masks, T)

    def backward(self, dout, cache):
        steps, (mx, mh), T = cache
        p = self._params
        act = self.activation
        B = steps[0][0].shape[0]
        if self.return_sequences:
            dH = dout
        else:
            dH = np.zeros((B, T, self.units))
            dH[:, -1] = dout
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dX = np.empty((B, T, self.input_dim))
        dh_next = np.zeros((B, self.units))
        dc_next = np.zeros((B, self.units))
        for t in reversed(range(T)):
            xt, hp, c_prev, (f, i, o, g, zc, c) = steps[t]
            dh = dH[:, t] + dh_next
            a = act(c)
            do = dh * a
            dc = dc_next + dh * o * act.grad(c)
            dz = {
                "f": dc * c_prev * f * (1.0 - f),
                "i": dc * g * i * (1.0 - i),
                "o": do * o * (1.0 - o),
                "c": dc * i * act.grad(zc),
            }
            dc_next = dc * f
            dxt = np.zeros((B, self.input_dim))
            dhp = np.zeros((B, self.units))
            for q in GATES:
                grads[f"W_{q}"] += dz[q].T @ xt
                grads[f"U_{q}"] += dz[q].T @ hp
                grads[f"b_{q}"] += dz[q].sum(axis=0)
                dxt += dz[q] @ p[f"W_{q}"]
                dhp += dz[q] @ p[f"U_{q}"]
            dX[:, t] = dxt if mx is None else dxt * mx
            dh_next = dhp if mh is None else dhp * mh
        return dX, grads


def lstm_step(layer, x, prev, masks=None):
    """One LSTM time step from ``prev`` (an :class:`LstmState`).

    ``masks`` is an optional ``(input_mask, recurrent_mask)`` pair applied to
    ``x`` and ``prev.h`` before the gate pre-activations.
    """
    x = np.asarray(x, dtype=float)
    h_prev = np.asarray(prev.h, dtype=float)
    c_prev = np.asarray(prev.c, dtype=float)
    layer._check_step(x, h_prev, c_prev)
    if masks is not None:
        mx, mh = masks
        if mx is not None:
            x = x * mx
        if mh is not None:
            h_prev = h_prev * mh
    h, c, _ = layer._step(x, h_prev, c_prev)
    return LstmState(h, c)


def lstm_forward(layer, sequence, training=False, rng=None, masks=None):
    """Run ``layer`` over one ``(T, d)`` sequence from the zero state.

    Returns ``(T, h)`` hidden states when the layer returns sequences,
    otherwise the final hidden state.
    """
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 2:
        raise ShapeError(f"expected a (T, d) sequence, got shape {seq.shape}")
    if seq.shape[0] == 0:
        raise ShapeError("empty sequence")
    if masks is not None:
        masks = tuple(None if m is None else np.asarray(m, dtype=float)[None] for m in masks)
    out, _ = layer.forward(seq[None], training=training, rng=rng, masks=masks)
    return out[0]


class Sequential:
    """Ordered layer stack that records a tape for backpropagation."""

    def __init__(self, layers):
        self.layers = list(layers)
        self._tape = None

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers)

    def named_params(self):
        """``[(layer_index, name, array), ...]`` in a fixed order."""
        return [(k, name, arr) for k, layer in enumerate(self.layers)
                for name, arr in layer.params.items()]

    def init_weights(self, seed):
        rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
        for layer in self.layers:
            layer.init_params(rng)

    def forward(self, x, training=False, rng=None, record=True):
        caches = []
        out = np.asarray(x, dtype=float)
        for layer in self.layers:
            out, cache = layer.forward(out, training=training, rng=rng)
            caches.append(cache)
        self._tape = caches if record else None
        return out

    def backward(self, dout):
        """Gradients of the loss for every parameter, given d(loss)/d(output).

        Returns a list (one dict per layer) aligned with ``layer.params``.
        The tape is consumed.
        """
        if self._tape is None:
            raise TapeError("backward called without a recorded forward pass")
        caches, self._tape = self._tape, None
        grads = [None] * len(self.layers)
        d = np.asarray(dout, dtype=float)
        for k in reversed(range(len(self.layers))):
            d, grads[k] = self.layers[k].backward(d, caches[k])
        return grads


def init_weights(model, seed):
    """Glorot-uniform kernels (input and recurrent), zero biases."""
    model.init_weights(seed)
    return model


@dataclass
class Adam:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    t: int = 0
    m: list = field(default_factory=list, repr=False)
    v: list = field(default_factory=list, repr=False)

    def step(self, params, grads, names=None):
        """Update ``params`` in place from aligned ``grads``."""
        if len(params) != len(grads):
            raise ShapeError("params and grads are not aligned")
        for k, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(names[k] if names else k)
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
        return params


def optimizer_step(state, params, grads, names=None):
    return state.step(params, grads, names)
