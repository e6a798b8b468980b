"""Scalar-input MLPs with tanh/sigmoid activations, trained from scratch.

Two model types share one training loop through a small duck-typed surface
(``to_vector``, ``with_vector``, ``loss_and_grad``):

* :class:`NetworkParams` -- a plain MLP ``x -> alpha . h^(L) + beta``.
* :class:`VariedDepthNet` -- a trainable linear combination of MLPs of
  pairwise distinct depths.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import make_rng


class Activation(str, enum.Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"

    def __call__(self, z):
        if self is Activation.TANH:
            return np.tanh(z)
        # logistic via tanh: stable for any z and several times faster than expit
        return 0.5 * np.tanh(0.5 * z) + 0.5

    def derivative_from_output(self, h):
        """phi'(z) written in terms of h = phi(z)."""
        if self is Activation.TANH:
            return 1.0 - h * h
        return h * (1.0 - h)

    @property
    def saturation_values(self) -> tuple[float, float]:
        return (-1.0, 1.0) if self is Activation.TANH else (0.0, 1.0)

    def limit(self, sign: float) -> float:
        """lim phi(z) for z -> sign * infinity."""
        lo, hi = self.saturation_values
        return hi if sign > 0 else lo


def as_activation(tag) -> Activation:
    if isinstance(tag, Activation):
        return tag
    try:
        return Activation(str(tag).lower())
    except ValueError:
        raise ValueError(f"unknown activation {tag!r}; expected 'tanh' or 'sigmoid'") from None


class NumericError(FloatingPointError):
    pass


@dataclass
class ForwardTrace:
    hidden: list
    preacts: list
    output: float


@dataclass
class NetworkParams:
    """Layered weights for a 1 -> m_1 -> ... -> m_L -> 1 network."""

    weights: list
    biases: list
    alpha: np.ndarray
    beta: float
    activation: Activation = Activation.TANH

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float).reshape(np.shape(w)) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float).ravel() for b in self.biases]
        self.alpha = np.asarray(self.alpha, dtype=float).ravel()
        self.beta = float(self.beta)
        self.activation = as_activation(self.activation)
        if not self.weights:
            raise ValueError("network needs at least one hidden layer")
        prev = 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[1] != prev:
                raise ValueError(f"layer {i + 1} weight shape {w.shape} does not chain from width {prev}")
            if b.shape != (w.shape[0],):
                raise ValueError(f"layer {i + 1} bias shape {b.shape} does not match {w.shape[0]} units")
            prev = w.shape[0]
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases differ in length")
        if self.alpha.shape != (prev,):
            raise ValueError(f"readout has {self.alpha.size} weights for {prev} units")

    @property
    def widths(self) -> list[int]:
        return [w.shape[0] for w in self.weights]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def total_width(self) -> int:
        """M, the number of hidden units across all layers."""
        return sum(self.widths)

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                             self.alpha.copy(), self.beta, self.activation)

    def with_readout(self, alpha, beta) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                             alpha, beta, self.activation)

    # -- flat parameter vector ------------------------------------------
    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases)) + self.alpha.size + 1

    def to_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        parts += [self.alpha, [self.beta]]
        return np.concatenate(parts)

    def with_vector(self, vec) -> "NetworkParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {vec.size}")
        pos = 0
        weights, biases = [], []
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(vec[pos:pos + b.size].copy())
            pos += b.size
        alpha = vec[pos:pos + self.alpha.size].copy()
        return NetworkParams(weights, biases, alpha, vec[-1], self.activation)

    # -- evaluation -----------------------------------------------------
    def _layers(self, x: np.ndarray):
        h = x.reshape(-1, 1)
        hidden, preacts = [], []
        for w, b in zip(self.weights, self.biases):
            z = h @ w.T + b
            h = self.activation(z)
            preacts.append(z)
            hidden.append(h)
        return hidden, preacts

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        hidden, _ = self._layers(x.ravel())
        return (hidden[-1] @ self.alpha + self.beta).reshape(x.shape)

    def loss_and_grad(self, x, y) -> tuple[float, np.ndarray]:
        """Mean squared error and its gradient as a flat vector."""
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.size == 0:
            raise ValueError("empty batch")
        hidden, _ = self._layers(x)
        resid = hidden[-1] @ self.alpha + self.beta - y
        return float(np.mean(resid ** 2)), self.backward(x, hidden, 2.0 * resid / x.size)

    def backward(self, x, hidden, upstream) -> np.ndarray:
        """Flat gradient of ``sum(upstream * f(x))`` given the forward ``hidden``."""
        grads = []
        d_alpha = hidden[-1].T @ upstream
        d_beta = upstream.sum()
        delta = np.outer(upstream, self.alpha) * self.activation.derivative_from_output(hidden[-1])
        for layer in range(self.depth - 1, -1, -1):
            below = hidden[layer - 1] if layer > 0 else x.reshape(-1, 1)
            grads.append((delta.T @ below, delta.sum(axis=0)))
            if layer > 0:
                delta = (delta @ self.weights[layer]) * \
                    self.activation.derivative_from_output(hidden[layer - 1])
        grads.reverse()
        parts = []
        for gw, gb in grads:
            parts += [gw.ravel(), gb]
        parts += [d_alpha, [d_beta]]
        return np.concatenate(parts)

    def saturation_state(self, sign: float) -> list[np.ndarray]:
        """Limits s^(1..L) of the hidden layers as x -> sign * infinity.

        First-layer units saturate by the sign of their input weight (a zero
        weight leaves the unit at phi(b)); deeper layers are propagated
        through the affine maps.
        """
        w1 = self.weights[0][:, 0]
        s = np.where(w1 == 0.0, self.activation(self.biases[0]),
                     np.where(np.sign(w1) * sign > 0,
                              self.activation.limit(1), self.activation.limit(-1)))
        states = [s]
        for w, b in zip(self.weights[1:], self.biases[1:]):
            s = self.activation(w @ s + b)
            states.append(s)
        return states

    def saturation_limit(self, sign: float) -> float:
        """alpha . s^(L) + beta at the +/- infinity end."""
        return float(self.alpha @ self.saturation_state(sign)[-1] + self.beta)

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "activation": self.activation.value,
            "layers": [{"shape": list(w.shape), "weights": w.ravel().tolist(), "biases": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
            "alpha": self.alpha.tolist(),
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkParams":
        weights = [np.asarray(l["weights"], dtype=float).reshape(l["shape"]) for l in d["layers"]]
        biases = [np.asarray(l["biases"], dtype=float) for l in d["layers"]]
        return cls(weights, biases, d["alpha"], d["beta"], d["activation"])


def forward(net: NetworkParams, x: float) -> ForwardTrace:
    if not math.isfinite(x):
        raise NumericError(f"non-finite input {x}")
    if not np.all(np.isfinite(net.to_vector())):
        raise NumericError("network has non-finite parameters")
    hidden, preacts = net._layers(np.array([float(x)]))
    hidden = [h[0] for h in hidden]
    preacts = [z[0] for z in preacts]
    return ForwardTrace(hidden, preacts, float(hidden[-1] @ net.alpha + net.beta))


def gradient(net: NetworkParams, batch) -> NetworkParams:
    """Gradient of the batch MSE, returned in the network's own shape."""
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    x, y = np.array(batch, dtype=float).T
    _, g = net.loss_and_grad(x, y)
    return net.with_vector(g)


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_network(widths: Sequence[int], activation="sigmoid", seed=0) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, "init")
    widths = [int(w) for w in widths]
    if not widths or any(w < 1 for w in widths):
        raise ValueError(f"invalid widths {widths}")
    weights, biases = [], []
    prev = 1
    for w in widths:
        weights.append(glorot_uniform(rng, w, prev))
        biases.append(np.zeros(w))
        prev = w
    alpha = glorot_uniform(rng, 1, prev).ravel()
    return NetworkParams(weights, biases, alpha, 0.0, activation)


# -- varied-depth combination -------------------------------------------

@dataclass
class VariedDepthNet:
    subnets: list
    combination: np.ndarray

    def __post_init__(self):
        self.combination = np.asarray(self.combination, dtype=float).ravel()
        if len(self.subnets) != self.combination.size:
            raise ValueError("one combination weight per subnet required")
        depths = [s.depth for s in self.subnets]
        if len(set(depths)) != len(depths):
            raise ValueError(f"subnet depths must be pairwise distinct, got {depths}")

    @property
    def depths(self) -> list[int]:
        return [s.depth for s in self.subnets]

    @property
    def n_params(self) -> int:
        return sum(s.n_params for s in self.subnets) + self.combination.size

    def copy(self) -> "VariedDepthNet":
        return VariedDepthNet([s.copy() for s in self.subnets], self.combination.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([s.to_vector() for s in self.subnets] + [self.combination])

    def with_vector(self, vec) -> "VariedDepthNet":
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {vec.size}")
        pos, subs = 0, []
        for s in self.subnets:
            subs.append(s.with_vector(vec[pos:pos + s.n_params]))
            pos += s.n_params
        return VariedDepthNet(subs, vec[pos:].copy())

    def subnet_outputs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        return np.stack([s.predict(x) for s in self.subnets], axis=1)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (self.subnet_outputs(x) @ self.combination).reshape(x.shape)

    def loss_and_grad(self, x, y) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.size == 0:
            raise ValueError("empty batch")
        traces = [s._layers(x)[0] for s in self.subnets]
        outs = np.stack([h[-1] @ s.alpha + s.beta for h, s in zip(traces, self.subnets)], axis=1)
        resid = outs @ self.combination - y
        upstream = 2.0 * resid / x.size
        parts = [s.backward(x, h, c * upstream)
                 for s, h, c in zip(self.subnets, traces, self.combination)]
        parts.append(outs.T @ upstream)
        return float(np.mean(resid ** 2)), np.concatenate(parts)

    def saturation_limit(self, sign: float) -> float:
        return float(sum(c * s.saturation_limit(sign)
                         for c, s in zip(self.combination, self.subnets)))

    def to_dict(self) -> dict:
        return {"kind": "varied_depth",
                "subnets": [s.to_dict() for s in self.subnets],
                "combination": self.combination.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "VariedDepthNet":
        return cls([NetworkParams.from_dict(s) for s in d["subnets"]], d["combination"])


def build_varied_depth(depths: Sequence[int], width: int, activation="sigmoid", seed=0) -> VariedDepthNet:
    depths = [int(d) for d in depths]
    if not depths:
        raise ValueError("at least one subnet depth required")
    if any(d < 1 for d in depths):
        raise ValueError(f"depths must be >= 1, got {depths}")
    if len(set(depths)) != len(depths):
        raise ValueError(f"duplicate depths rejected: {depths}")
    subnets = [init_network([width] * d, activation, make_rng(seed, "subnet", i))
               for i, d in enumerate(depths)]
    return VariedDepthNet(subnets, np.full(len(depths), 1.0 / len(depths)))


def varied_forward(net: VariedDepthNet, x: float) -> float:
    if not math.isfinite(x):
        raise NumericError(f"non-finite input {x}")
    return float(net.predict(np.array([x]))[0])


# -- training --------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    max_epochs: int = 20000
    batch_size: int | None = None  # None = full batch
    validation_fraction: float = 0.2
    patience: int = 1000
    seed: int = 0
    validation_mode: str = "interleaved"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.validation_mode not in ("tail", "interleaved"):
            raise ValueError("validation_mode must be 'tail' or 'interleaved'")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    diverged: bool = False
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss,
                "best_epoch": self.best_epoch, "stopped_early": self.stopped_early,
                "diverged": self.diverged, "warnings": self.warnings}


def validation_mask(n: int, validation_fraction: float, mode: str = "tail") -> np.ndarray:
    """Boolean mask of held-out samples; order of the samples is never shuffled.

    ``"tail"`` holds out the last ``validation_fraction`` of the samples;
    ``"interleaved"`` holds out evenly spaced samples across the whole range.
    """
    n_val = max(1, int(round(n * validation_fraction)))
    if n - n_val < 2:
        raise ValueError(f"{n} samples leave fewer than 2 training points after the split")
    mask = np.zeros(n, dtype=bool)
    if mode == "tail":
        mask[n - n_val:] = True
    elif mode == "interleaved":
        # evenly spaced picks, never the first or last sample
        picks = np.floor((np.arange(n_val) + 0.5) * n / n_val).astype(int)
        mask[np.clip(picks, 1, n - 2)] = True
    else:
        raise ValueError(f"unknown validation mode {mode!r}")
    return mask


def train(model, x, y, cfg: TrainConfig | None = None):
    """Adam on the MSE with hold-out early stopping.

    A ``validation_fraction`` of the samples is held out (see
    :func:`validation_mask`).  Returns ``(best_model, history)`` where ``best_model`` holds
    the parameters of the epoch with the lowest validation loss.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y differ in length")
    held_out = validation_mask(x.size, cfg.validation_fraction, cfg.validation_mode)
    history = History()
    if np.ptp(x) == 0.0:
        msg = "degenerate dataset: all inputs identical"
        warnings.warn(msg)
        history.warnings.append(msg)
    xt, yt, xv, yv = x[~held_out], y[~held_out], x[held_out], y[held_out]
    split = xt.size
    rng = make_rng(cfg.seed, "batches")

    theta = model.to_vector()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best_theta, best_val, since_best = theta.copy(), math.inf, 0
    current = model
    for epoch in range(cfg.max_epochs):
        if cfg.batch_size is None or cfg.batch_size >= split:
            batches = [slice(None)]
        else:
            order = rng.permutation(split)
            batches = [order[i:i + cfg.batch_size] for i in range(0, split, cfg.batch_size)]
        epoch_loss = 0.0
        for idx, batch in enumerate(batches):
            loss, g = current.loss_and_grad(xt[batch], yt[batch])
            epoch_loss += loss * (split if isinstance(batch, slice) else len(batch)) / split
            if not (math.isfinite(loss) and np.all(np.isfinite(g))):
                history.diverged = True
                break
            step = epoch * len(batches) + idx + 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1 ** step)
            v_hat = v / (1 - cfg.beta2 ** step)
            theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
            current = current.with_vector(theta)
        if history.diverged:
            break
        # training loss is accumulated over the epoch's batches, before each update
        train_loss = float(epoch_loss)
        val_loss = float(np.mean((current.predict(xv) - yv) ** 2))
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            history.diverged = True
            break
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        if val_loss < best_val:
            best_val, best_theta, since_best = val_loss, theta.copy(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                history.stopped_early = True
                break
    return model.with_vector(best_theta), history


def varied_train(net: VariedDepthNet, x, y, cfg: TrainConfig | None = None):
    return train(net, x, y, cfg)


# -- checkpoints -------------------------------------------------------------

def model_from_dict(d: dict):
    if d.get("kind") == "varied_depth":
        return VariedDepthNet.from_dict(d)
    return NetworkParams.from_dict(d)


def dumps_checkpoint(model, extra: dict | None = None) -> str:
    payload = {"format": "annlab-checkpoint/1", "model": model.to_dict()}
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=1, sort_keys=True) + "\n"


def save_checkpoint(path, model, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_checkpoint(model, extra))


def load_checkpoint(path):
    """Returns ``(model, payload)``."""
    with open(path) as fh:
        payload = json.load(fh)
    if "model" not in payload:
        raise ValueError(f"{path} is not an annlab checkpoint")
    return model_from_dict(payload["model"]), payload
