"""Position-sizing networks: Linear, MLP, causal CNN and LSTM.

Every model maps a trailing window of feature vectors to a position in
(-1, 1) via a final tanh. Forward functions take a parameter dict of
``Tensor`` objects and a batch of windows and return a ``Tensor``; dropout is
active only when an ``rng`` is supplied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, as_tensor, concat, no_grad, stack
from .errors import ConfigError, FingerprintMismatch, ShapeMismatch
from .indicators import FEATURE_FINGERPRINT, N_FEATURES

ARCHITECTURES = ("linear", "mlp", "cnn", "lstm")
WINDOW = {"linear": 5, "mlp": 5, "cnn": 20, "lstm": 20}
KERNEL_SIZE = 3
CHECKPOINT_FORMAT = "optbt-checkpoint/1"


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rng is None or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def _flatten(window, m: int) -> Tensor:
    u = as_tensor(window)
    if u.ndim == 3:
        u = u.reshape(u.shape[0], -1)
    elif u.ndim == 1:
        u = u.reshape(1, -1)
    if u.ndim != 2 or u.shape[1] != m:
        raise ShapeMismatch(f"expected flattened windows of length {m}, got shape {u.shape}")
    return u


def _sequence(window, d: int) -> Tensor:
    x = as_tensor(window)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[2] != d:
        raise ShapeMismatch(f"expected (batch, time, {d}) windows, got shape {x.shape}")
    return x


def linear_forward(params, window, dropout: float = 0.0, rng=None) -> Tensor:
    """tanh(W'u + b) on flattened windows; dropout acts on the input."""
    W, b = params["W"], params["b"]
    u = _dropout(_flatten(window, W.shape[0]), dropout, rng)
    return (u @ W + b).tanh().reshape(-1)


def _head(params, h: Tensor, dropout: float, rng) -> Tensor:
    z = (h @ params["W1"] + params["b1"]).tanh()
    z = _dropout(z, dropout, rng)
    return (z @ params["W2"] + params["b2"]).tanh().reshape(-1)


def mlp_forward(params, window, dropout: float = 0.0, rng=None) -> Tensor:
    u = _flatten(window, params["W1"].shape[0])
    return _head(params, u, dropout, rng)


def _causal_conv(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Left zero-padded 1-D convolution; ``kernel[-1]`` multiplies the current day."""
    B, T, C = x.shape
    k, _, H = kernel.shape
    xp = concat([Tensor(np.zeros((B, k - 1, C))), x], axis=1)
    out = None
    for j in range(k):
        term = xp[:, j:j + T, :].reshape(B * T, C) @ kernel[j]
        out = term if out is None else out + term
    return (out + bias).reshape(B, T, H)


def cnn_pooled(params, window) -> Tensor:
    """Average-pooled output of the two causal convolution layers."""
    x = _sequence(window, params["K1"].shape[1])
    h = _causal_conv(x, params["K1"], params["c1"]).tanh()
    h = _causal_conv(h, params["K2"], params["c2"]).tanh()
    return h.mean(axis=1)


def cnn_forward(params, window, dropout: float = 0.0, rng=None) -> Tensor:
    return _head(params, cnn_pooled(params, window), dropout, rng)


def lstm_forward(params, window, dropout: float = 0.0, rng=None) -> Tensor:
    """Per-step positions (batch, time) from a zero-initialised LSTM."""
    W, U, b = params["W"], params["U"], params["b"]
    x = _sequence(window, W.shape[0])
    B, T, _ = x.shape
    H = U.shape[0]
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    outs = []
    for t in range(T):
        z = x[:, t, :] @ W + h @ U + b
        i = z[:, :H].sigmoid()
        f = z[:, H:2 * H].sigmoid()
        o = z[:, 2 * H:3 * H].sigmoid()
        g = z[:, 3 * H:].tanh()
        c = f * c + i * g
        h = o * c.tanh()
        hd = _dropout(h, dropout, rng)
        outs.append((hd @ params["W_out"] + params["b_out"]).tanh().reshape(-1))
    return stack(outs, axis=1)


FORWARD = {"linear": linear_forward, "mlp": mlp_forward, "cnn": cnn_forward, "lstm": lstm_forward}


def param_shapes(arch: str, n_features: int, window: int, hidden: int) -> dict:
    m = n_features * window
    H = hidden
    if arch == "linear":
        return {"W": (m, 1), "b": (1,)}
    if arch == "mlp":
        return {"W1": (m, H), "b1": (H,), "W2": (H, 1), "b2": (1,)}
    if arch == "cnn":
        return {"K1": (KERNEL_SIZE, n_features, H), "c1": (H,),
                "K2": (KERNEL_SIZE, H, H), "c2": (H,),
                "W1": (H, H), "b1": (H,), "W2": (H, 1), "b2": (1,)}
    if arch == "lstm":
        return {"W": (n_features, 4 * H), "U": (H, 4 * H), "b": (4 * H,),
                "W_out": (H, 1), "b_out": (1,)}
    raise ConfigError(f"unknown architecture {arch!r}; valid: {', '.join(ARCHITECTURES)}")


def _fan_in(name: str, shape: tuple, shapes: dict) -> int:
    if len(shape) == 3:
        return shape[0] * shape[1]
    if len(shape) == 2:
        return shape[0]
    # biases take the fan-in of the weight they are added to
    partner = {"b": "W", "b1": "W1", "b2": "W2", "c1": "K1", "c2": "K2", "b_out": "W_out"}[name]
    if name == "b" and "U" in shapes:
        return shapes["W"][0]
    return _fan_in(partner, shapes[partner], shapes)


@dataclass
class Model:
    arch: str
    params: dict
    hidden: int
    dropout: float = 0.0
    n_features: int = N_FEATURES
    window: int = field(default=0)

    def __post_init__(self):
        if self.window == 0:
            self.window = WINDOW[self.arch]

    def forward(self, x, rng=None) -> Tensor:
        return FORWARD[self.arch](self.params, x, self.dropout, rng)

    def predict(self, x) -> np.ndarray:
        with no_grad():
            return self.forward(x).data

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def copy(self) -> "Model":
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return Model(self.arch, params, self.hidden, self.dropout, self.n_features, self.window)

    # -- checkpoints ---------------------------------------------------------
    def to_dict(self, extra: dict | None = None) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "arch": self.arch,
            "hyperparameters": {"hidden_size": self.hidden, "dropout_rate": self.dropout,
                                "n_features": self.n_features, "window": self.window,
                                **(extra or {})},
            "feature_fingerprint": FEATURE_FINGERPRINT,
            "params": {k: {"shape": list(v.shape), "values": v.data.ravel().tolist()}
                       for k, v in sorted(self.params.items())},
        }

    def save(self, path, extra: dict | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(extra), sort_keys=True))

    @classmethod
    def from_dict(cls, doc: dict) -> "Model":
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"not a checkpoint document: format={doc.get('format')!r}")
        if doc.get("feature_fingerprint") != FEATURE_FINGERPRINT:
            raise FingerprintMismatch(
                f"checkpoint feature order {doc.get('feature_fingerprint')!r} does not "
                f"match {FEATURE_FINGERPRINT!r}")
        hp = doc["hyperparameters"]
        params = {k: Tensor(np.array(v["values"], dtype=float).reshape(v["shape"]),
                            requires_grad=True)
                  for k, v in doc["params"].items()}
        model = cls(doc["arch"], params, hp["hidden_size"], hp["dropout_rate"],
                    hp["n_features"], hp["window"])
        expected = param_shapes(model.arch, model.n_features, model.window, model.hidden)
        got = {k: tuple(v.shape) for k, v in params.items()}
        if got != expected:
            raise ShapeMismatch(f"checkpoint parameter shapes {got} != {expected}")
        return model

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_model(arch: str, hidden: int = 10, dropout: float = 0.0, seed: int = 0,
               n_features: int = N_FEATURES, window: int | None = None) -> Model:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
    window = WINDOW.get(arch, 0) if window is None else window
    shapes = param_shapes(arch, n_features, window, hidden)
    rng = np.random.default_rng(seed)
    params = {}
    for name in sorted(shapes):
        bound = 1.0 / np.sqrt(_fan_in(name, shapes[name], shapes))
        params[name] = Tensor(rng.uniform(-bound, bound, shapes[name]), requires_grad=True)
    return Model(arch, params, hidden, dropout, n_features, window)


def zero_model(arch: str, hidden: int = 2, n_features: int = N_FEATURES,
               window: int | None = None) -> Model:
    window = WINDOW[arch] if window is None else window
    shapes = param_shapes(arch, n_features, window, hidden)
    params = {k: Tensor(np.zeros(s), requires_grad=True) for k, s in shapes.items()}
    return Model(arch, params, hidden, 0.0, n_features, window)
