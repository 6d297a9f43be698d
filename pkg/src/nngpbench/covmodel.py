"""Isotropic covariance families, empirical semivariograms and IRWGLS fitting.

Parametrization: ``sigma2`` is the partial sill, ``phi`` the decay (``1/phi``
is the range in km) and ``tau2`` the nugget. The nugget never enters
``cov(d)``; it only appears on the diagonal of the covariance of observations.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.spatial.distance import pdist

FAMILIES = ("exponential", "gaussian", "spherical")

# phi * (practical range) for each family; used only to seed the optimizer
_PRACTICAL_RANGE = {"exponential": 3.0, "gaussian": math.sqrt(3.0), "spherical": 1.0}


def _check_family(family: str) -> None:
    if family not in FAMILIES:
        raise ValueError(f"unknown covariance family {family!r}; choose from {FAMILIES}")


def correlation(family: str, phi: float, d) -> np.ndarray:
    """Correlation ρ(d) of the spatial process (ρ(0) = 1)."""
    _check_family(family)
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    u = phi * d
    if family == "exponential":
        return np.exp(-u)
    if family == "gaussian":
        return np.exp(-(u**2))
    return np.where(u < 1.0, 1.0 - 1.5 * u + 0.5 * u**3, 0.0)


@dataclass(frozen=True)
class CovarianceSpec:
    family: str
    sigma2: float
    phi: float
    tau2: float = 0.0

    def __post_init__(self):
        _check_family(self.family)
        if not self.sigma2 >= 0:
            raise ValueError("sigma2 must be >= 0")
        if not self.phi > 0:
            raise ValueError("phi must be > 0")
        if not self.tau2 >= 0:
            raise ValueError("tau2 must be >= 0")

    @property
    def alpha(self) -> float:
        """Noise-to-signal ratio τ²/σ²."""
        return self.tau2 / self.sigma2 if self.sigma2 > 0 else math.inf

    @property
    def range(self) -> float:
        return 1.0 / self.phi


# Documented default: Gaussian family fitted to a 10,000-listing rent sample.
DEFAULT_SPEC = CovarianceSpec("gaussian", sigma2=0.03, phi=1.0 / 25.8, tau2=0.04)


def cov(spec: CovarianceSpec, d) -> np.ndarray | float:
    """Covariance of the spatial process at distance ``d`` km (nugget excluded)."""
    out = spec.sigma2 * correlation(spec.family, spec.phi, d)
    return float(out) if np.ndim(out) == 0 else out


def semivariogram(spec: CovarianceSpec, d) -> np.ndarray | float:
    """γ(d) = τ² + σ² − C(d) for d > 0, and γ(0) = 0."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    g = spec.tau2 + spec.sigma2 * (1.0 - correlation(spec.family, spec.phi, d))
    g = np.where(d > 0, g, 0.0)
    return float(g) if g.ndim == 0 else g


@dataclass(frozen=True)
class EmpiricalVariogram:
    """Binned classical semivariance estimates.

    ``h`` is the mean separation of the pairs falling in each bin, ``gamma``
    the estimate and ``counts`` the number of pairs. Empty bins are omitted.
    """

    h: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        for name in ("h", "gamma", "counts"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.h.shape == self.gamma.shape == self.counts.shape):
            raise ValueError("h, gamma and counts must have equal length")

    def __len__(self) -> int:
        return self.h.size

    def scaled(self, c: float) -> EmpiricalVariogram:
        return EmpiricalVariogram(self.h, self.gamma * c, self.counts, self.edges)

    def subset(self, mask) -> EmpiricalVariogram:
        return EmpiricalVariogram(self.h[mask], self.gamma[mask], self.counts[mask], self.edges)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("h,gamma,pairs\n")
            for h, g, c in zip(self.h, self.gamma, self.counts):
                fh.write(f"{float(h)!r},{float(g)!r},{int(c)}\n")


def empirical_variogram(
    residuals,
    coords,
    n_bins: int = 30,
    max_dist: float | None = None,
    max_pairs: int = 1_000_000,
    seed: int = 0,
) -> EmpiricalVariogram:
    """Matheron estimator γ̂(h_j) = Σ (r_i − r_k)² / (2 N_j) over equal-width lag bins.

    When the number of distinct pairs exceeds ``max_pairs`` a uniform random
    sample of ``max_pairs`` pairs is used instead. ``max_dist`` defaults to
    one sixth of the bounding-box diagonal, which keeps the fit on the short
    lags that drive Kriging and away from the noisy tail of a single
    realization.
    """
    r = np.asarray(residuals, dtype=float).reshape(-1)
    coords = np.asarray(coords, dtype=float)
    n = r.size
    if coords.shape != (n, 2):
        raise ValueError(f"coords must have shape ({n}, 2)")
    if n < 2:
        raise ValueError("need at least 2 points")
    if max_dist is None:
        max_dist = float(np.hypot(*np.ptp(coords, axis=0))) / 6.0
    if not max_dist > 0:
        raise ValueError("max_dist must be > 0")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")

    total = n * (n - 1) // 2
    if total <= max_pairs:
        d = pdist(coords)
        i, k = np.triu_indices(n, 1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        k = rng.integers(0, n - 1, size=max_pairs)
        k = k + (k >= i)
        d = np.hypot(*(coords[i] - coords[k]).T)
    sq = (r[i] - r[k]) ** 2

    edges = np.linspace(0.0, max_dist, n_bins + 1)
    keep = (d > 0) & (d <= max_dist)
    which = np.clip(np.searchsorted(edges, d[keep], side="left") - 1, 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins).astype(float)
    sums = np.bincount(which, weights=sq[keep], minlength=n_bins)
    dsum = np.bincount(which, weights=d[keep], minlength=n_bins)
    nz = counts > 0
    return EmpiricalVariogram(
        h=dsum[nz] / counts[nz],
        gamma=sums[nz] / (2.0 * counts[nz]),
        counts=counts[nz],
        edges=edges,
    )


@dataclass(frozen=True)
class VariogramFit:
    spec: CovarianceSpec
    converged: bool
    iterations: int
    loss: float


def _model_gamma(family: str, theta: np.ndarray, h: np.ndarray) -> np.ndarray:
    sigma2, phi, tau2 = theta
    return tau2 + sigma2 * (1.0 - correlation(family, phi, h))


_FLOOR = 1e-10


def _weighted_fit(family, h, g, w, theta0):
    def resid(x):
        theta = np.array([x[0], math.exp(x[1]), x[2]])
        return np.sqrt(w) * (g - _model_gamma(family, theta, h))

    x0 = np.array([theta0[0], math.log(theta0[1]), theta0[2]])
    lo = np.array([_FLOOR, -np.inf, 0.0])
    x0 = np.maximum(x0, lo + 1e-12)
    sol = optimize.least_squares(
        resid, x0, bounds=(lo, np.full(3, np.inf)), method="trf",
        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000,
    )
    x = sol.x
    return np.array([max(x[0], _FLOOR), math.exp(x[1]), max(x[2], 0.0)])


def _starts(family: str, h: np.ndarray, g: np.ndarray) -> list[np.ndarray]:
    hmax = float(h.max())
    top = float(g.max())
    first = float(g[np.argmin(h)])
    out = []
    for frac in (0.05, 0.5, 0.9):
        nug = frac * first
        for r in (hmax / 8, hmax / 4, hmax / 2, hmax):
            out.append(np.array([max(top - nug, 1e-3), _PRACTICAL_RANGE[family] / r, nug]))
    return out


def _cressie_loss(family, theta, h, g, n):
    model = np.maximum(_model_gamma(family, theta, h), _FLOOR)
    return float(np.sum(n / model**2 * (g - model) ** 2))


def fit_irwgls(
    ev: EmpiricalVariogram,
    family: str,
    *,
    tol: float = 1e-6,
    max_iter: int = 50,
) -> VariogramFit:
    """Fit (σ², φ, τ²) of ``family`` by iteratively re-weighted least squares.

    Weights are Cressie's N_j / γ(h_j; ψ)², recomputed from the previous
    iterate until the largest relative parameter change drops below ``tol``.
    On non-convergence the best iterate is returned with ``converged=False``.
    """
    _check_family(family)
    if len(ev) < 4:
        raise ValueError(f"need at least 4 non-empty bins, got {len(ev)}")
    h, n = ev.h, ev.counts
    scale = float(np.mean(ev.gamma))
    if not scale > 0:
        raise ValueError("empirical semivariances are all zero")
    g = ev.gamma / scale

    # ordinary weighted start, then pick the best of a small multistart
    best = None
    for theta0 in _starts(family, h, g):
        theta = _weighted_fit(family, h, g, n / np.maximum(g, _FLOOR) ** 2, theta0)
        loss = _cressie_loss(family, theta, h, g, n)
        if best is None or loss < best[1]:
            best = (theta, loss)
    theta = best[0]
    best_theta, best_loss = theta, best[1]

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = n / np.maximum(_model_gamma(family, theta, h), _FLOOR) ** 2
        new = _weighted_fit(family, h, g, w, theta)
        loss = _cressie_loss(family, new, h, g, n)
        if loss < best_loss:
            best_theta, best_loss = new, loss
        change = np.max(np.abs(new - theta) / np.maximum(np.abs(theta), 1e-8))
        theta = new
        if change < tol:
            converged = True
            best_theta, best_loss = theta, loss
            break
    if not converged:
        warnings.warn(f"IRWGLS for {family} did not converge in {max_iter} iterations")
    spec = CovarianceSpec(
        family,
        sigma2=float(best_theta[0] * scale),
        phi=float(best_theta[1]),
        tau2=float(best_theta[2] * scale),
    )
    return VariogramFit(spec, converged, it, best_loss)


@dataclass(frozen=True)
class FamilySelection:
    family: str
    score: float
    scores: dict[str, float]
    fits: dict[str, VariogramFit]

    @property
    def spec(self) -> CovarianceSpec:
        return self.fits[self.family].spec


def cv_score(ev: EmpiricalVariogram, family: str, folds: int = 5) -> float:
    """Mean held-out weighted squared error over interleaved bin folds.

    Bin j is held out in fold ``j % folds``; held-out errors are weighted by
    N_j / γ̂_j², which does not depend on the candidate model.
    """
    m = len(ev)
    idx = np.arange(m)
    scores = []
    for f in range(folds):
        test = idx % folds == f
        if not test.any():
            continue
        train_ev = ev.subset(~test)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_irwgls(train_ev, family)
        g = ev.gamma[test]
        model = _model_gamma(
            family, np.array([fit.spec.sigma2, fit.spec.phi, fit.spec.tau2]), ev.h[test]
        )
        w = ev.counts[test] / np.maximum(g, _FLOOR * max(ev.gamma.max(), 1.0)) ** 2
        scores.append(float(np.sum(w * (g - model) ** 2)))
    return float(np.mean(scores))


def select_family(
    ev: EmpiricalVariogram, families=FAMILIES, folds: int = 5
) -> FamilySelection:
    """Fit every candidate family and keep the one with the lowest CV score.

    Ties go to the earlier family in ``families``. A single candidate is
    returned without scoring.
    """
    families = list(families)
    if not families:
        raise ValueError("need at least one family")
    fits = {f: fit_irwgls(ev, f) for f in families}
    if len(families) == 1:
        return FamilySelection(families[0], math.nan, {families[0]: math.nan}, fits)
    if len(ev) - math.ceil(len(ev) / folds) < 4:
        raise ValueError(f"{len(ev)} bins are too few for {folds}-fold family selection")
    scores = {f: cv_score(ev, f, folds) for f in families}
    best = min(families, key=lambda f: (scores[f], families.index(f)))
    return FamilySelection(best, scores[best], scores, fits)
