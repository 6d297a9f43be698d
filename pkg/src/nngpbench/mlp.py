"""Feedforward ReLU network regressor trained by mini-batch backpropagation.

Inputs are the design-matrix columns plus both coordinates, standardized
with a stored record; the target is standardized too and predictions are
mapped back. Hidden layers use ReLU, the output layer is affine.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SpatialDataset, Standardizer, fit_standardizer

FORMAT_VERSION = 1

# tuner search bounds; configs outside them are accepted with a warning
BOUNDS = {
    "hidden_layers": (1, 5),
    "units": (10, 50),
    "batch_size": (32, 128),
    "epochs": (10, 30),
    "learning_rate": (1e-5, 1e-2),
}


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    units: tuple[int, ...] = (32,)
    batch_size: int = 32
    epochs: int = 20
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(int(u) for u in self.units))
        if any(u < 1 for u in self.units):
            raise ValueError("every hidden layer needs at least one unit")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def hidden_layers(self) -> int:
        return len(self.units)

    def out_of_bounds(self) -> list[str]:
        """Names of settings outside the tuner's search ranges."""
        bad = []
        lo, hi = BOUNDS["hidden_layers"]
        if not lo <= self.hidden_layers <= hi:
            bad.append("hidden_layers")
        lo, hi = BOUNDS["units"]
        if any(not lo <= u <= hi for u in self.units):
            bad.append("units")
        for name in ("batch_size", "epochs", "learning_rate"):
            lo, hi = BOUNDS[name]
            if not lo <= getattr(self, name) <= hi:
                bad.append(name)
        return bad

    def to_dict(self) -> dict:
        return {
            "hidden_layers": self.hidden_layers,
            "units": list(self.units),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MlpConfig:
        units = tuple(d["units"])
        if "hidden_layers" in d and d["hidden_layers"] != len(units):
            raise ValueError("hidden_layers does not match the length of units")
        return cls(
            units=units,
            batch_size=int(d["batch_size"]),
            epochs=int(d["epochs"]),
            learning_rate=float(d["learning_rate"]),
            optimizer=d.get("optimizer", "adam"),
            seed=int(d.get("seed", 0)),
        )


# ---------------------------------------------------------------------------
# network primitives; parameters are a list of (W, b) with W of shape
# (fan_in, fan_out) acting on row-major batches


Params = list[tuple[np.ndarray, np.ndarray]]


def init_params(sizes: list[int], rng: np.random.Generator) -> Params:
    """He-scaled uniform weights, zero biases."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / fan_in)
        params.append((rng.uniform(-limit, limit, (fan_in, fan_out)), np.zeros(fan_out)))
    return params


def network_output(params: Params, Z: np.ndarray) -> np.ndarray:
    out, _ = _forward(params, np.atleast_2d(Z))
    return out


def _forward(params: Params, Z: np.ndarray):
    pre = []
    a = Z
    last = len(params) - 1
    for l, (W, b) in enumerate(params):
        u = a @ W + b
        if l < last:
            pre.append(u)
            a = np.maximum(u, 0.0)
        else:
            a = u
    return a[:, 0], (Z, pre)


def _backward(params: Params, cache, out: np.ndarray, t: np.ndarray) -> Params:
    Z, pre = cache
    n = t.size
    delta = (2.0 / n) * (out - t)[:, None]
    grads: Params = [None] * len(params)  # type: ignore[list-item]
    for l in range(len(params) - 1, -1, -1):
        a_in = Z if l == 0 else np.maximum(pre[l - 1], 0.0)
        grads[l] = (a_in.T @ delta, delta.sum(axis=0))
        if l > 0:
            delta = (delta @ params[l][0].T) * (pre[l - 1] > 0)
    return grads


def loss(y, yhat) -> float:
    """Mean squared error."""
    y = np.asarray(y, dtype=float).reshape(-1)
    yhat = np.asarray(yhat, dtype=float).reshape(-1)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} vs {yhat.size}")
    return float(np.mean((y - yhat) ** 2))


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for pair in params for p in pair]
        self.v = [np.zeros_like(p) for pair in params for p in pair]
        self.t = 0

    def step(self, flat_params, flat_grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(flat_params, flat_grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _RMSprop:
    def __init__(self, params, lr, rho=0.9, eps=1e-8):
        self.lr, self.rho, self.eps = lr, rho, eps
        self.v = [np.zeros_like(p) for pair in params for p in pair]

    def step(self, flat_params, flat_grads):
        for p, g, v in zip(flat_params, flat_grads, self.v):
            v *= self.rho
            v += (1.0 - self.rho) * g * g
            p -= self.lr * g / (np.sqrt(v) + self.eps)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class MlpModel:
    params: Params
    x_scaler: Standardizer
    y_mean: float
    y_sd: float
    config: MlpConfig
    n_inputs: int
    history: tuple[float, ...] = field(default=(), compare=False)

    def prepare(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if inputs.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} input columns, got {inputs.shape[1]}")
        return self.x_scaler.transform(inputs)

    def predict(self, X: np.ndarray, coords: np.ndarray) -> np.ndarray:
        return forward(self, np.hstack([X, coords]))


def model_inputs(ds: SpatialDataset) -> np.ndarray:
    """Design matrix with both coordinates appended (K + 2 columns)."""
    return np.hstack([ds.X, ds.coords])


def forward(model: MlpModel, inputs: np.ndarray) -> np.ndarray:
    """Prediction on the response scale for raw (unstandardized) input rows."""
    return network_output(model.params, model.prepare(inputs)) * model.y_sd + model.y_mean


def _scaler_for(inputs: np.ndarray) -> Standardizer:
    sd = inputs.std(axis=0, ddof=1) if inputs.shape[0] > 1 else np.zeros(inputs.shape[1])
    varying = [j for j in range(inputs.shape[1]) if sd[j] > 0]
    if not varying:
        return Standardizer((), np.empty(0), np.empty(0))
    return fit_standardizer(inputs, varying)


def train(
    ds: SpatialDataset,
    config: MlpConfig,
    *,
    inputs: np.ndarray | None = None,
    epoch_orders=None,
) -> MlpModel:
    """Fit the network on ``ds`` (features plus coordinates) by mini-batch descent.

    Rows are reshuffled every epoch from a generator seeded by
    ``config.seed``; the same seed always yields the same weights.
    ``epoch_orders`` replaces the shuffles with explicit row orders, one
    per epoch. Non-finite training loss raises :class:`TrainingDiverged`.
    """
    if ds.y is None:
        raise ValueError("dataset has no response")
    raw = model_inputs(ds) if inputs is None else np.asarray(inputs, dtype=float)
    n = raw.shape[0]
    if n < config.batch_size:
        raise ValueError(f"n={n} is smaller than batch_size={config.batch_size}")
    scaler = _scaler_for(raw)
    Z = scaler.transform(raw)
    y_mean = float(ds.y.mean())
    y_sd = float(ds.y.std(ddof=1)) if n > 1 else 1.0
    if not y_sd > 0:
        y_sd = 1.0
    t = (ds.y - y_mean) / y_sd

    rng = np.random.default_rng(config.seed)
    params = init_params([Z.shape[1], *config.units, 1], rng)
    flat = [p for pair in params for p in pair]
    opt = (_Adam if config.optimizer == "adam" else _RMSprop)(params, config.learning_rate)

    history = []
    orders = iter(epoch_orders) if epoch_orders is not None else None
    for epoch in range(config.epochs):
        perm = rng.permutation(n) if orders is None else np.asarray(next(orders))
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = perm[s : s + config.batch_size]
            out, cache = _forward(params, Z[idx])
            batch_loss = float(np.mean((out - t[idx]) ** 2))
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite training loss in epoch {epoch + 1}; "
                    f"learning rate {config.learning_rate:g} is likely too large"
                )
            total += batch_loss * idx.size
            grads = _backward(params, cache, out, t[idx])
            opt.step(flat, [g for pair in grads for g in pair])
        history.append(total / n)
    return MlpModel(
        params=params,
        x_scaler=scaler,
        y_mean=y_mean,
        y_sd=y_sd,
        config=config,
        n_inputs=raw.shape[1],
        history=tuple(history),
    )


def gradients(params: Params, Z: np.ndarray, t: np.ndarray) -> Params:
    """Backpropagated gradients of the mean squared error for each (W, b)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    out, cache = _forward(params, Z)
    return _backward(params, cache, out, t)


def gradient_check(
    params: Params,
    Z: np.ndarray,
    t: np.ndarray,
    epsilon: float = 1e-5,
) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    ``Z`` and ``t`` are network-space inputs and targets. Parameters whose
    ±epsilon perturbation flips the sign of any hidden pre-activation are
    skipped, since the loss is not differentiable across a ReLU kink.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    work = [(W.copy(), b.copy()) for W, b in params]
    out, cache = _forward(work, Z)
    analytic = _backward(work, cache, out, t)
    base_signs = [u > 0 for u in cache[1]]

    def probe():
        o, (_, pre) = _forward(work, Z)
        flipped = any(np.any((u > 0) != s) for u, s in zip(pre, base_signs))
        return float(np.mean((o - t) ** 2)), flipped

    worst = 0.0
    for l, (W, b) in enumerate(work):
        for arr, grad in ((W, analytic[l][0]), (b, analytic[l][1])):
            for i in np.ndindex(arr.shape):
                orig = arr[i]
                arr[i] = orig + epsilon
                up, f1 = probe()
                arr[i] = orig - epsilon
                down, f2 = probe()
                arr[i] = orig
                if f1 or f2:
                    continue
                numeric = (up - down) / (2.0 * epsilon)
                a = grad[i]
                denom = max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, abs(a - numeric) / denom)
    return worst


def model_gradient_check(model: MlpModel, inputs, y, epsilon: float = 1e-5) -> float:
    """:func:`gradient_check` on raw inputs and responses via the model's scalers."""
    Z = model.prepare(inputs)
    t = (np.asarray(y, dtype=float) - model.y_mean) / model.y_sd
    return gradient_check(model.params, Z, t, epsilon)


def warn_if_out_of_bounds(config: MlpConfig) -> None:
    bad = config.out_of_bounds()
    if bad:
        warnings.warn(
            "MLP config outside the tuner search ranges for: " + ", ".join(bad),
            stacklevel=3,
        )


def save_model(model: MlpModel, path: str | Path, extra: dict | None = None) -> None:
    meta = {
        "format": "nngpbench.mlp",
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "y_mean": model.y_mean,
        "y_sd": model.y_sd,
        "n_inputs": model.n_inputs,
        "scaled_columns": list(model.x_scaler.columns),
        "layers": len(model.params),
        **(extra or {}),
    }
    arrays = {"meta": np.array(json.dumps(meta))}
    arrays["x_mean"] = model.x_scaler.mean
    arrays["x_sd"] = model.x_scaler.sd
    for l, (W, b) in enumerate(model.params):
        arrays[f"W{l}"] = W
        arrays[f"b{l}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path: str | Path) -> tuple[MlpModel, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != "nngpbench.mlp":
            raise ValueError(f"{path} is not an MLP model file")
        if meta["version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported MLP model version {meta['version']}")
        params = [(z[f"W{l}"], z[f"b{l}"]) for l in range(meta["layers"])]
        scaler = Standardizer(tuple(meta["scaled_columns"]), z["x_mean"], z["x_sd"])
    model = MlpModel(
        params=params,
        x_scaler=scaler,
        y_mean=float(meta["y_mean"]),
        y_sd=float(meta["y_sd"]),
        config=MlpConfig.from_dict(meta["config"]),
        n_inputs=int(meta["n_inputs"]),
    )
    return model, meta
