"""Prediction error measures and the report tables built from them."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_RANGE_EDGES = (-math.inf, 10.0, 10.5, 11.0, 11.5, 12.0, 12.5, 13.0, math.inf)
HISTOGRAM_EDGES = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, math.inf)


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).reshape(-1)
    yhat = np.asarray(yhat, dtype=float).reshape(-1)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} observed vs {yhat.shape[0]} predicted")
    if y.size == 0:
        raise ValueError("need at least one observation")
    return y, yhat


def percent_errors(y, yhat) -> np.ndarray:
    """Absolute percentage error 100·|y−ŷ|/|y| per sample."""
    y, yhat = _pair(y, yhat)
    if np.any(y == 0):
        raise ValueError("percentage error undefined for zero responses")
    return 100.0 * np.abs(y - yhat) / np.abs(y)


@dataclass(frozen=True)
class MetricReport:
    mae: float
    mse: float
    rmse: float
    mape: float | None
    n: int


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def compute(y, yhat, *, with_mape: bool = True) -> MetricReport:
    """MAE, MSE, RMSE and MAPE (percent) of predictions ``yhat`` against ``y``."""
    y, yhat = _pair(y, yhat)
    err = y - yhat
    mse_ = float(np.mean(err**2))
    mape = float(np.mean(percent_errors(y, yhat))) if with_mape else None
    return MetricReport(
        mae=float(np.mean(np.abs(err))),
        mse=mse_,
        rmse=math.sqrt(mse_),
        mape=mape,
        n=int(y.size),
    )


@dataclass(frozen=True)
class RangeBin:
    lower: float
    upper: float
    mape: float | None
    count: int


@dataclass(frozen=True)
class RangeBreakdown:
    bins: tuple[RangeBin, ...]

    @property
    def n(self) -> int:
        return sum(b.count for b in self.bins)


def range_breakdown(y, yhat, edges=DEFAULT_RANGE_EDGES) -> RangeBreakdown:
    """MAPE within each response range ``[edges[j], edges[j+1])``.

    Empty ranges get ``mape=None`` rather than 0 or NaN.
    """
    y, yhat = _pair(y, yhat)
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be a strictly increasing sequence of length >= 2")
    if np.any((y < edges[0]) | (y >= edges[-1]) & (edges[-1] != math.inf)):
        raise ValueError("some responses fall outside the outermost edges")
    pe = percent_errors(y, yhat)
    which = np.searchsorted(edges, y, side="right") - 1
    bins = []
    for j in range(edges.size - 1):
        mask = which == j
        count = int(mask.sum())
        bins.append(
            RangeBin(
                float(edges[j]),
                float(edges[j + 1]),
                float(pe[mask].mean()) if count else None,
                count,
            )
        )
    return RangeBreakdown(tuple(bins))


@dataclass(frozen=True)
class ErrorRateHistogram:
    edges: tuple[float, ...]
    frequencies: tuple[float, ...]
    counts: tuple[int, ...]


def error_histogram(y, yhat, edges=HISTOGRAM_EDGES) -> ErrorRateHistogram:
    """Relative frequency (percent) of per-sample percentage errors in each bin."""
    pe = percent_errors(y, yhat)
    edges = tuple(float(e) for e in edges)
    which = np.searchsorted(np.asarray(edges), pe, side="right") - 1
    which = np.clip(which, 0, len(edges) - 2)
    counts = np.bincount(which, minlength=len(edges) - 1)
    freq = 100.0 * counts / pe.size
    return ErrorRateHistogram(edges, tuple(float(f) for f in freq), tuple(int(c) for c in counts))


def _range_label(lo: float, hi: float) -> str:
    fmt = lambda v: f"{v:g}"  # noqa: E731
    if math.isinf(lo):
        return f"~{fmt(hi)}"
    if math.isinf(hi):
        return f"{fmt(lo)}~"
    return f"{fmt(lo)}~{fmt(hi)}"


def _fmt(value: float | None, digits: int = 4) -> str:
    return "NA" if value is None else f"{value:.{digits}f}"


def format_metric_table(rows: dict[str, dict[str, MetricReport | None]]) -> str:
    """Aligned text table: one block per sample size, one column per model.

    ``rows`` maps a size label to ``{model: report}``; a ``None`` report
    renders as ``failed``.
    """
    models = sorted({m for cells in rows.values() for m in cells}, key=_model_order)
    out = io.StringIO()
    header = f"{'size':<10}{'metric':<8}" + "".join(f"{m:>14}" for m in models)
    out.write(header + "\n")
    for size, cells in rows.items():
        for metric in ("mae", "mse", "rmse", "mape"):
            line = f"{size:<10}{metric.upper():<8}"
            for m in models:
                rep = cells.get(m)
                line += f"{'failed' if rep is None else _fmt(getattr(rep, metric)):>14}"
            out.write(line + "\n")
            size = ""
    return out.getvalue()


def format_range_table(breakdowns: dict[str, RangeBreakdown]) -> str:
    models = list(breakdowns)
    first = next(iter(breakdowns.values()))
    out = io.StringIO()
    out.write(f"{'log(y)':<12}" + "".join(f"{m:>14}" for m in models) + "\n")
    for j, b in enumerate(first.bins):
        line = f"{_range_label(b.lower, b.upper):<12}"
        for m in models:
            line += f"{_fmt(breakdowns[m].bins[j].mape, 3):>14}"
        out.write(line + "\n")
    return out.getvalue()


def format_histogram_table(hists: dict[str, ErrorRateHistogram]) -> str:
    models = list(hists)
    first = next(iter(hists.values()))
    out = io.StringIO()
    out.write(f"{'error %':<12}" + "".join(f"{m:>14}" for m in models) + "\n")
    for j in range(len(first.frequencies)):
        lo, hi = first.edges[j], first.edges[j + 1]
        label = f"{lo:g}~" if math.isinf(hi) else f"{lo:g}~{hi:g}"
        out.write(f"{label:<12}" + "".join(f"{hists[m].frequencies[j]:>14.3f}" for m in models) + "\n")
    out.write(f"{'total':<12}" + "".join(f"{sum(hists[m].frequencies):>14.3f}" for m in models) + "\n")
    return out.getvalue()


_MODEL_RANK = {"ols": 0, "gp-exact": 1, "nngp": 2, "dnn": 3}


def _model_order(name: str) -> tuple[int, str]:
    return (_MODEL_RANK.get(name, 99), name)
