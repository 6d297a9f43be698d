"""Hyperparameter search by tree-structured Parzen estimation.

The first ``n_startup`` suggestions are uniform draws (log-uniform on log
scales). After that each active parameter is sampled independently from a
Parzen density fitted to the best ``gamma`` fraction of trials, and the
candidate with the largest good-to-bad density ratio wins. Conditional
parameters are only sampled when their parent condition holds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from . import mlp
from .dataset import SpatialDataset, kfold_indices

GAMMA = 0.25
N_STARTUP = 10
N_CANDIDATES = 24
PRIOR_WEIGHT = 1.0


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # "integer" or "real"
    lo: float
    hi: float
    log: bool = False
    # (parent name, predicate on the parent's value)
    condition: tuple[str, Callable[[float], bool]] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("integer", "real"):
            raise ValueError(f"{self.name}: kind must be 'integer' or 'real'")
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi")
        if self.log and not self.lo > 0:
            raise ValueError(f"{self.name}: log scale needs lo > 0")

    # work in an internal coordinate where kernels are symmetric
    def to_internal(self, v: float) -> float:
        return math.log(v) if self.log else float(v)

    def from_internal(self, u: float) -> float | int:
        v = math.exp(u) if self.log else u
        v = min(max(v, self.lo), self.hi)
        if self.kind == "integer":
            v = int(min(max(round(v), math.ceil(self.lo)), math.floor(self.hi)))
        return v

    @property
    def internal_bounds(self) -> tuple[float, float]:
        return self.to_internal(self.lo), self.to_internal(self.hi)


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[Param, ...]

    def __post_init__(self):
        if not self.params:
            raise ValueError("search space is empty")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        seen = set()
        for p in self.params:
            if p.condition is not None and p.condition[0] not in seen:
                raise ValueError(f"{p.name}: parent {p.condition[0]!r} must come earlier")
            seen.add(p.name)

    def active(self, p: Param, values: dict) -> bool:
        if p.condition is None:
            return True
        parent, pred = p.condition
        return parent in values and bool(pred(values[parent]))

    def names(self) -> list[str]:
        return [p.name for p in self.params]


@dataclass(frozen=True)
class TrialRecord:
    index: int
    params: dict
    score: float
    status: str  # "complete" or "failed"
    message: str = ""


def mlp_space() -> SearchSpace:
    """Layer count, per-layer units, batch size, epochs and log learning rate."""
    lo_l, hi_l = mlp.BOUNDS["hidden_layers"]
    lo_u, hi_u = mlp.BOUNDS["units"]
    params = [Param("hidden_layers", "integer", lo_l, hi_l)]
    for i in range(1, hi_l + 1):
        cond = None if i <= lo_l else ("hidden_layers", lambda v, i=i: v >= i)
        params.append(Param(f"units_{i}", "integer", lo_u, hi_u, condition=cond))
    params += [
        Param("batch_size", "integer", *mlp.BOUNDS["batch_size"]),
        Param("epochs", "integer", *mlp.BOUNDS["epochs"]),
        Param("learning_rate", "real", *mlp.BOUNDS["learning_rate"], log=True),
    ]
    return SearchSpace(tuple(params))


def config_from_params(values: dict, optimizer: str = "adam", seed: int = 0) -> mlp.MlpConfig:
    layers = int(values["hidden_layers"])
    return mlp.MlpConfig(
        units=tuple(int(values[f"units_{i}"]) for i in range(1, layers + 1)),
        batch_size=int(values["batch_size"]),
        epochs=int(values["epochs"]),
        learning_rate=float(values["learning_rate"]),
        optimizer=optimizer,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Parzen estimators


def _bandwidths(points: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Per-point bandwidth: the larger of range/20 and the nearest-neighbour gap."""
    floor = (hi - lo) / 20.0
    if points.size < 2:
        return np.full(points.size, max(floor, 1e-12))
    order = np.argsort(points)
    s = points[order]
    gaps = np.diff(s)
    nn = np.empty_like(s)
    nn[0] = gaps[0]
    nn[-1] = gaps[-1]
    if s.size > 2:
        nn[1:-1] = np.minimum(gaps[:-1], gaps[1:])
    bw = np.empty_like(s)
    bw[order] = np.maximum(nn, floor)
    return np.maximum(bw, 1e-12)


@dataclass(frozen=True)
class _Parzen:
    mus: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray
    lo: float
    hi: float

    @classmethod
    def fit(cls, points, lo, hi) -> _Parzen:
        points = np.asarray(points, dtype=float)
        # a broad prior component keeps both densities positive everywhere
        mus = np.concatenate([points, [(lo + hi) / 2.0]])
        sigmas = np.concatenate([_bandwidths(points, lo, hi), [hi - lo]])
        w = np.concatenate([np.ones(points.size), [PRIOR_WEIGHT]])
        return cls(mus, sigmas, w / w.sum(), lo, hi)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(self.mus.size, size=size, p=self.weights)
        out = np.empty(size)
        for i, c in enumerate(comp):
            # truncated normal by rejection; the prior component makes this quick
            for _ in range(100):
                v = rng.normal(self.mus[c], self.sigmas[c])
                if self.lo <= v <= self.hi:
                    break
            else:
                v = min(max(v, self.lo), self.hi)
            out[i] = v
        return out

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)[:, None]
        mass = norm.cdf(self.hi, self.mus, self.sigmas) - norm.cdf(self.lo, self.mus, self.sigmas)
        logp = (
            norm.logpdf(x, self.mus, self.sigmas)
            - np.log(np.maximum(mass, 1e-300))
            + np.log(self.weights)
        )
        return logsumexp(logp, axis=1)


def _split(history: list[TrialRecord], gamma: float):
    ranked = sorted(history, key=lambda r: (r.score, r.index))
    n_good = max(1, math.ceil(gamma * len(ranked)))
    return ranked[:n_good], ranked[n_good:]


def _random_value(p: Param, rng: np.random.Generator):
    lo, hi = p.internal_bounds
    return p.from_internal(rng.uniform(lo, hi))


def suggest(
    space: SearchSpace,
    history: list[TrialRecord],
    rng: np.random.Generator,
    *,
    gamma: float = GAMMA,
    n_startup: int = N_STARTUP,
    n_candidates: int = N_CANDIDATES,
) -> dict:
    """Next hyperparameter vector given the trials so far."""
    if not space.params:
        raise ValueError("search space is empty")
    usable = [r for r in history if r.status in ("complete", "failed")]
    complete = [r for r in usable if r.status == "complete"]
    values: dict = {}
    if len(complete) < n_startup:
        for p in space.params:
            if space.active(p, values):
                values[p.name] = _random_value(p, rng)
        return values

    good, bad = _split(usable, gamma)
    for p in space.params:
        if not space.active(p, values):
            continue
        lo, hi = p.internal_bounds
        g_pts = [p.to_internal(r.params[p.name]) for r in good if p.name in r.params]
        b_pts = [p.to_internal(r.params[p.name]) for r in bad if p.name in r.params]
        l_est = _Parzen.fit(g_pts, lo, hi)
        g_est = _Parzen.fit(b_pts, lo, hi)
        cand = l_est.sample(rng, n_candidates)
        if p.kind == "integer":
            cand = np.array([p.to_internal(p.from_internal(c)) for c in cand])
        score = l_est.log_pdf(cand) - g_est.log_pdf(cand)
        values[p.name] = p.from_internal(float(cand[int(np.argmax(score))]))
    return values


def optimize(
    space: SearchSpace,
    objective: Callable[[dict], float],
    n_trials: int = 50,
    seed: int = 0,
    *,
    sampler: str = "tpe",
    history_path: str | Path | None = None,
    **tpe_options,
) -> tuple[dict, list[TrialRecord]]:
    """Run ``n_trials`` suggest/evaluate rounds and return the best parameters.

    Trials whose objective raises or returns a non-finite value are recorded
    as failed with score +inf and stay in the bad set. When ``history_path``
    is given each trial is appended to that CSV as soon as it finishes.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if sampler not in ("tpe", "random"):
        raise ValueError(f"unknown sampler {sampler!r}")
    rng = np.random.default_rng(seed)
    history: list[TrialRecord] = []
    writer = _HistoryWriter(history_path, space) if history_path is not None else None
    for t in range(n_trials):
        if sampler == "random":
            values = suggest(space, [], rng)
        else:
            values = suggest(space, history, rng, **tpe_options)
        try:
            score = float(objective(values))
            if not math.isfinite(score):
                raise FloatingPointError(f"objective returned {score}")
            rec = TrialRecord(t, values, score, "complete")
        except (FloatingPointError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            rec = TrialRecord(t, values, math.inf, "failed", str(exc))
        history.append(rec)
        if writer is not None:
            writer.append(rec)
    complete = [r for r in history if r.status == "complete"]
    if not complete:
        raise RuntimeError(f"all {n_trials} trials failed; last error: {history[-1].message}")
    best = min(complete, key=lambda r: (r.score, r.index))
    return best.params, history


class _HistoryWriter:
    def __init__(self, path, space: SearchSpace):
        self.path = Path(path)
        self.names = space.names()
        with self.path.open("w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(["trial", *self.names, "score", "status"])

    def append(self, rec: TrialRecord) -> None:
        row = [rec.index]
        row += [("" if n not in rec.params else repr(rec.params[n])) for n in self.names]
        row += [repr(rec.score), rec.status]
        with self.path.open("a", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(row)


def write_history(history: list[TrialRecord], space: SearchSpace, path: str | Path) -> None:
    w = _HistoryWriter(path, space)
    for rec in history:
        w.append(rec)


def cv_objective(
    ds: SpatialDataset,
    folds: int = 5,
    seed: int = 0,
    optimizer: str = "adam",
) -> Callable[[dict], float]:
    """Mean held-out MSE of an MLP over ``folds`` folds fixed for every trial."""
    parts = kfold_indices(ds.n, folds, seed)
    splits = []
    for j in range(folds):
        train_idx = np.sort(np.concatenate([parts[i] for i in range(folds) if i != j]))
        splits.append((train_idx, np.sort(parts[j])))

    def objective(values: dict) -> float:
        config = config_from_params(values, optimizer=optimizer, seed=seed)
        errs = []
        for train_idx, test_idx in splits:
            model = mlp.train(ds.subset(train_idx), config)
            test = ds.subset(test_idx)
            errs.append(mlp.loss(test.y, mlp.forward(model, mlp.model_inputs(test))))
        return float(np.mean(errs))

    return objective


def refit_best(ds: SpatialDataset, config: mlp.MlpConfig) -> mlp.MlpModel:
    """Train on all of ``ds`` with ``config``; out-of-range settings only warn."""
    mlp.warn_if_out_of_bounds(config)
    return mlp.train(ds, config)
