"""Dense Gaussian-process regression and universal Kriging.

Cubic in n; used directly for small problems and as the reference against
which the nearest-neighbour approximation is checked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .covmodel import CovarianceSpec, correlation
from .dataset import SpatialDataset

DEFAULT_MAX_N = 5000
DUPLICATE_TOL = 1e-9


class SizeCapError(ValueError):
    pass


@dataclass(frozen=True)
class ExactGpFit:
    spec: CovarianceSpec
    beta_gls: np.ndarray
    chol: tuple  # scipy cho_factor output for Λ
    gls_cov_unscaled: np.ndarray  # (X'Λ⁻¹X)⁻¹
    X: np.ndarray
    y: np.ndarray
    coords: np.ndarray
    resid_weights: np.ndarray  # Λ⁻¹(y − Xβ̂)
    feature_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.X.shape[0]


def covariance_matrix(spec: CovarianceSpec, coords_a, coords_b=None) -> np.ndarray:
    """Cross-covariance of the spatial process between two site sets (no nugget)."""
    coords_b = coords_a if coords_b is None else coords_b
    return spec.sigma2 * correlation(spec.family, spec.phi, cdist(coords_a, coords_b))


def _has_duplicates(coords: np.ndarray) -> bool:
    return bool(cKDTree(coords).query_pairs(DUPLICATE_TOL))


def fit_exact(ds: SpatialDataset, spec: CovarianceSpec, max_n: int = DEFAULT_MAX_N) -> ExactGpFit:
    """Factor Λ = C(θ) + τ²I and compute the GLS coefficient estimate."""
    if ds.y is None:
        raise ValueError("dataset has no response")
    n = ds.n
    if n > max_n:
        raise SizeCapError(
            f"exact GP limited to n <= {max_n} (got n={n}); the dense factorization "
            "is cubic in n, use the NNGP model instead"
        )
    if spec.tau2 == 0 and _has_duplicates(ds.coords):
        raise np.linalg.LinAlgError(
            "duplicate coordinates with zero nugget make the covariance singular; "
            "use tau2 > 0 or jitter the coordinates"
        )
    lam = covariance_matrix(spec, ds.coords)
    lam[np.diag_indices(n)] += spec.tau2
    try:
        cf = linalg.cho_factor(lam, lower=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"covariance matrix is not positive definite for {spec}: {exc}"
        ) from None
    X, y = ds.X, ds.y
    li_x = linalg.cho_solve(cf, X)
    li_y = linalg.cho_solve(cf, y)
    gram = X.T @ li_x
    gcf = linalg.cho_factor(gram)
    beta = linalg.cho_solve(gcf, X.T @ li_y)
    gls_cov = linalg.cho_solve(gcf, np.eye(X.shape[1]))
    return ExactGpFit(
        spec=spec,
        beta_gls=beta,
        chol=cf,
        gls_cov_unscaled=gls_cov,
        X=X,
        y=y,
        coords=ds.coords,
        resid_weights=linalg.cho_solve(cf, y - X @ beta),
        feature_names=tuple(ds.feature_names),
    )


def kriging_weights(fit: ExactGpFit, X_new, coords_new) -> np.ndarray:
    """Weights λ (one row per query) with universal-Kriging mean λ'y."""
    X_new, coords_new = _check_query(fit, X_new, coords_new)
    c0 = covariance_matrix(fit.spec, coords_new, fit.coords)  # (m, n)
    li_c0 = linalg.cho_solve(fit.chol, c0.T)  # (n, m)
    li_x = linalg.cho_solve(fit.chol, fit.X)  # (n, K)
    u = X_new - c0 @ li_x  # x0 − X'Λ⁻¹c0, per row
    return li_c0.T + u @ fit.gls_cov_unscaled @ li_x.T


def _check_query(fit, X_new, coords_new):
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    coords_new = np.atleast_2d(np.asarray(coords_new, dtype=float))
    if X_new.shape[1] != fit.X.shape[1]:
        raise ValueError(f"expected {fit.X.shape[1]} feature columns, got {X_new.shape[1]}")
    if coords_new.shape != (X_new.shape[0], 2):
        raise ValueError("coords_new must be (m, 2) and match X_new rows")
    return X_new, coords_new


def krige(
    fit: ExactGpFit,
    X_new,
    coords_new,
    *,
    noiseless: bool = False,
    beta_correction: bool = True,
    chunk: int = 2048,
) -> tuple[np.ndarray, np.ndarray]:
    """Universal-Kriging predictive mean and variance at new sites.

    By default the target is a new observation y(s₀), whose variance includes
    the nugget; ``noiseless=True`` targets the latent surface x₀'β + w(s₀).
    The term accounting for estimating β by GLS is included unless
    ``beta_correction=False``.
    """
    X_new, coords_new = _check_query(fit, X_new, coords_new)
    li_x = linalg.cho_solve(fit.chol, fit.X)
    means, variances = [], []
    sill = fit.spec.sigma2 + (0.0 if noiseless else fit.spec.tau2)
    for start in range(0, X_new.shape[0], chunk):
        xs = X_new[start : start + chunk]
        c0 = covariance_matrix(fit.spec, coords_new[start : start + chunk], fit.coords)
        li_c0 = linalg.cho_solve(fit.chol, c0.T)
        mean = xs @ fit.beta_gls + c0 @ fit.resid_weights
        var = sill - np.einsum("ij,ji->i", c0, li_c0)
        if beta_correction:
            u = xs - c0 @ li_x
            var = var + np.einsum("ij,jk,ik->i", u, fit.gls_cov_unscaled, u)
        means.append(mean)
        variances.append(np.maximum(var, 0.0))
    return np.concatenate(means), np.concatenate(variances)
