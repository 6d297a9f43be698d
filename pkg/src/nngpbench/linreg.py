"""Ordinary least squares hedonic regression with classical inference."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .dataset import SpatialDataset


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, columns: list[str]):
        self.columns = columns
        super().__init__(
            "design matrix is rank deficient; linearly dependent column(s): " + ", ".join(columns)
        )


@dataclass(frozen=True)
class OlsFit:
    beta: np.ndarray
    t_values: np.ndarray
    std_errors: np.ndarray
    sigma2_hat: float
    r2: float
    adj_r2: float
    n: int
    K: int
    xtx_inv: np.ndarray
    feature_names: tuple[str, ...]

    @property
    def dof(self) -> int:
        return self.n - self.K


def _rank_tolerance(R: np.ndarray, shape: tuple[int, int]) -> float:
    return max(shape) * np.finfo(float).eps * abs(R[0, 0])


def fit(ds: SpatialDataset) -> OlsFit:
    """Least-squares fit of ``ds.y`` on ``ds.X`` via column-pivoted QR.

    ``ds.X`` already holds the intercept; coordinates are not used.
    """
    X, y = ds.X, ds.y
    n, K = X.shape
    if y is None:
        raise ValueError("dataset has no response")
    if n <= K:
        raise ValueError(f"OLS needs n > K (n={n}, K={K})")
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > _rank_tolerance(R, X.shape)))
    if rank < K:
        dropped = sorted(piv[rank:])
        raise RankDeficientError([ds.feature_names[j] for j in dropped])

    coef_piv = linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(K)
    beta[piv] = coef_piv
    R_inv = linalg.solve_triangular(R, np.eye(K))
    xtx_inv_piv = R_inv @ R_inv.T
    xtx_inv = np.empty((K, K))
    xtx_inv[np.ix_(piv, piv)] = xtx_inv_piv

    resid = y - X @ beta
    rss = float(resid @ resid)
    sigma2 = rss / (n - K)
    se = np.sqrt(sigma2 * np.diag(xtx_inv))
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / (n - K)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    return OlsFit(
        beta=beta,
        t_values=t,
        std_errors=se,
        sigma2_hat=sigma2,
        r2=r2,
        adj_r2=adj_r2,
        n=n,
        K=K,
        xtx_inv=xtx_inv,
        feature_names=tuple(ds.feature_names),
    )


def fit_normal_equations(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Coefficients from the Cholesky-solved normal equations (cross-check only)."""
    c = linalg.cho_factor(X.T @ X)
    return linalg.cho_solve(c, X.T @ y)


def predict(model: OlsFit, X_new: np.ndarray) -> np.ndarray:
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != model.K:
        raise ValueError(f"expected {model.K} columns, got {X_new.shape[1]}")
    return X_new @ model.beta


def prediction_interval(model: OlsFit, X_new: np.ndarray, level: float = 0.95):
    """Point prediction, predictive sd and classical t-interval for new rows."""
    mean = predict(model, X_new)
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    lev = np.einsum("ij,jk,ik->i", X_new, model.xtx_inv, X_new)
    sd = np.sqrt(model.sigma2_hat * (1.0 + lev))
    q = stats.t.ppf(0.5 + level / 2.0, model.dof)
    return mean, sd, mean - q * sd, mean + q * sd


def coefficient_table(model: OlsFit) -> str:
    out = io.StringIO()
    width = max(len("Variable name"), *(len(n) for n in model.feature_names)) + 2
    out.write(f"{'Variable name':<{width}}{'Coef.':>14}{'t value':>12}\n")
    for name, b, t in zip(model.feature_names, model.beta, model.t_values):
        out.write(f"{name:<{width}}{b:>14.6g}{t:>12.4g}\n")
    out.write(f"{'Adjusted R2':<{width}}{model.adj_r2:>14.4f}\n")
    return out.getvalue()
