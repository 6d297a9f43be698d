"""Conjugate nearest-neighbour Gaussian process (response NNGP) regression.

With the noise ratio α = τ²/σ² and decay φ held fixed, the model
y ~ N(Xβ, σ²M̃), where M̃ is the Vecchia approximation of P(φ) + αI, has a
closed-form normal–inverse-gamma posterior for (β, σ²) and Student-t
predictive distributions. M̃⁻¹ is never formed densely: the factor
M̃⁻¹ = (I−A)' diag(1/d) (I−A) is assembled row by row from k-point local
solves, so fitting costs O(n k³).

Points are processed in ascending x-coordinate order (ties by y, then input
index). Neighbour indices and the factor live in that ordered space;
:attr:`NeighborGraph.order` maps positions back to input rows.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg, sparse, stats
from scipy.spatial import cKDTree

from . import linreg
from .covmodel import DEFAULT_SPEC, correlation
from .dataset import SpatialDataset, kfold_indices

FORMAT_VERSION = 1
DEFAULT_K = 30
DEFAULT_FAMILY = DEFAULT_SPEC.family
DEFAULT_PHI = DEFAULT_SPEC.phi
DEFAULT_ALPHA = DEFAULT_SPEC.alpha
_CHUNK = 2048


class SingularNeighborError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# neighbour graph


@dataclass(frozen=True)
class NeighborGraph:
    """Vecchia ordering plus, per ordered position, its nearest predecessors.

    ``neighbors[p, :counts[p]]`` are positions (not input rows) of the
    ``min(p, k)`` nearest earlier points, nearest first; unused slots are -1.
    """

    order: np.ndarray
    neighbors: np.ndarray
    counts: np.ndarray
    k: int

    @property
    def n(self) -> int:
        return self.order.size

    def neighbor_list(self, p: int) -> np.ndarray:
        return self.neighbors[p, : self.counts[p]]


def vecchia_order(coords: np.ndarray) -> np.ndarray:
    n = coords.shape[0]
    return np.lexsort((np.arange(n), coords[:, 1], coords[:, 0]))


def _rank_candidates(pos: np.ndarray, idx: np.ndarray, xs: np.ndarray):
    """Sort candidate columns of each row by (distance, index), predecessors only."""
    n = xs.shape[0]
    pred = idx < pos[:, None]
    key_idx = np.where(pred, idx, n + 1)
    o = np.argsort(key_idx, axis=1, kind="stable")
    idx = np.take_along_axis(idx, o, axis=1)
    pred = np.take_along_axis(pred, o, axis=1)
    diff = xs[idx] - xs[pos][:, None, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    dk = np.where(pred, d, np.inf)
    o = np.argsort(dk, axis=1, kind="stable")
    return np.take_along_axis(idx, o, axis=1), np.take_along_axis(dk, o, axis=1), d, pred.sum(1)


def build_neighbor_graph(coords, k: int, order=None) -> NeighborGraph:
    """Order the sites and find each one's k nearest predecessors exactly.

    Ties in distance are broken by the lower ordered position. ``k`` is
    clamped to ``n - 1``. ``order`` overrides the default x-coordinate
    ordering with an explicit permutation.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] < 1:
        raise ValueError("coords must be an (n, 2) array with n >= 1")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = coords.shape[0]
    k = min(int(k), n - 1)
    if order is None:
        order = vecchia_order(coords)
    else:
        order = np.asarray(order, dtype=np.int64)
        if not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError("order must be a permutation of range(n)")
    xs = coords[order]
    nb = np.full((n, max(k, 0)), -1, dtype=np.int64)
    counts = np.minimum(np.arange(n), k).astype(np.int64)
    if k == 0:
        return NeighborGraph(order, nb, counts, k)

    # the first k+1 positions take every predecessor
    head = min(k + 1, n)
    for p in range(1, head):
        pos = np.array([p])
        cand = np.arange(p)[None, :]
        ranked, *_ = _rank_candidates(pos, cand, xs)
        nb[p, :p] = ranked[0, :p]

    # rows in [s, 2s) search a tree over the first 2s points, so at least
    # half of the indexed points precede any query row
    s = head
    while s < n:
        e = min(2 * s, n)
        tree = cKDTree(xs[:e])
        pending = np.arange(s, e)
        m = min(2 * k + 2, e)
        while pending.size:
            _, idx = tree.query(xs[pending], k=m)
            idx = np.asarray(idx).reshape(pending.size, m)
            ranked, dk, d, npred = _rank_candidates(pending, idx, xs)
            kth = dk[:, k - 1]
            complete = (npred >= k) & ((kth * (1.0 + 1e-12) < d.max(axis=1)) | (m == e))
            nb[pending[complete]] = ranked[complete, :k]
            pending = pending[~complete]
            m = min(2 * m, e)
        s = e
    return NeighborGraph(order, nb, counts, k)


# ---------------------------------------------------------------------------
# sparse factor


@dataclass(frozen=True)
class SparseVecchiaFactor:
    """A (strictly lower triangular, CSR) and conditional variances d, ordered space."""

    A: sparse.csr_matrix
    d: np.ndarray
    graph: NeighborGraph = field(repr=False)

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """diag(1/√d)(I − A) v for ordered-space vectors or matrices."""
        out = v - self.A @ v
        scale = 1.0 / np.sqrt(self.d)
        return out * (scale if out.ndim == 1 else scale[:, None])

    def precision(self) -> np.ndarray:
        """Dense (I−A)' diag(1/d) (I−A); for testing on small n only."""
        n = self.d.size
        ia = np.eye(n) - self.A.toarray()
        return ia.T @ (ia / self.d[:, None])


def _local_systems(xs, rows, nbrs, family, phi, alpha):
    P = xs[nbrs]  # (B, m, 2)
    diff = P[:, :, None, :] - P[:, None, :, :]
    M = correlation(family, phi, np.sqrt(np.einsum("ijkl,ijkl->ijk", diff, diff)))
    m = nbrs.shape[1]
    M[:, np.arange(m), np.arange(m)] += alpha
    dq = P - xs[rows][:, None, :]
    r = correlation(family, phi, np.sqrt(np.einsum("ijk,ijk->ij", dq, dq)))
    return M, r


def _solve_rows(xs, rows, nbrs, family, phi, alpha):
    M, r = _local_systems(xs, rows, nbrs, family, phi, alpha)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise SingularNeighborError(
            "a neighbour correlation sub-matrix is singular (duplicate or near-duplicate "
            "coordinates with alpha=0?); use alpha > 0 or jitter the coordinates"
        ) from None
    z = np.linalg.solve(L, r[..., None])
    b = np.linalg.solve(np.swapaxes(L, 1, 2), z)[..., 0]
    d = (1.0 + alpha) - np.einsum("ij,ij->i", z[..., 0], z[..., 0])
    return b, d


def build_factor(
    graph: NeighborGraph,
    coords,
    family: str,
    phi: float,
    alpha: float,
    workers: int = 1,
) -> SparseVecchiaFactor:
    """Row-wise conditional regressions of each site on its neighbour set.

    Rows are solved in fixed-size batches, so the result does not depend on
    ``workers``.
    """
    if not alpha >= 0:
        raise ValueError("alpha must be >= 0")
    if not phi > 0:
        raise ValueError("phi must be > 0")
    xs = np.asarray(coords, dtype=float)[graph.order]
    n = graph.n
    counts = graph.counts
    d = np.full(n, 1.0 + alpha)
    data = np.zeros(int(counts.sum()))
    indptr = np.concatenate([[0], np.cumsum(counts)])
    indices = np.empty(int(counts.sum()), dtype=np.int64)

    jobs = []
    for c in np.unique(counts):
        if c == 0:
            continue
        rows = np.flatnonzero(counts == c)
        for s in range(0, rows.size, _CHUNK):
            jobs.append(rows[s : s + _CHUNK])

    def run(rows):
        c = counts[rows[0]]
        nbrs = graph.neighbors[rows, :c]
        return rows, nbrs, _solve_rows(xs, rows, nbrs, family, phi, alpha)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(rows) for rows in jobs]

    for rows, nbrs, (b, dr) in results:
        c = nbrs.shape[1]
        slots = indptr[rows][:, None] + np.arange(c)
        indices[slots] = nbrs
        data[slots] = b
        d[rows] = dr
    if np.any(~(d > 0)):
        raise SingularNeighborError(
            "non-positive conditional variance; the neighbour systems are numerically "
            "singular (use alpha > 0 or jitter duplicate coordinates)"
        )
    A = sparse.csr_matrix((data, indices, indptr), shape=(n, n))
    A.sort_indices()
    return SparseVecchiaFactor(A, d, graph)


def jitter_duplicates(coords, eps: float = 1e-6) -> np.ndarray:
    """Shift the r-th repeat of any coordinate pair by r·eps km in x and y."""
    coords = np.array(coords, dtype=float, copy=True)
    _, inverse = np.unique(coords, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    seen: dict[int, int] = {}
    for i, g in enumerate(inverse):
        r = seen.get(g, 0)
        if r:
            coords[i] += r * eps
        seen[g] = r + 1
    return coords


# ---------------------------------------------------------------------------
# conjugate posterior


@dataclass(frozen=True)
class ConjugatePrior:
    """β | σ² ~ N(mu, σ²V), σ² ~ IG(a, b)."""

    mu: np.ndarray
    V: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if V.shape != (mu.size, mu.size):
            raise ValueError("prior V must be K x K matching mu")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("prior a and b must be positive")
        if not np.allclose(V, V.T):
            raise ValueError("prior V must be symmetric")
        try:
            np.linalg.cholesky(V)
        except np.linalg.LinAlgError:
            raise ValueError("prior V must be positive definite") from None
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "V", V)

    @classmethod
    def default(cls, ds: SpatialDataset, scale: float = 100.0) -> ConjugatePrior:
        """Zero mean, V = 100·I, a = 2 and b set to the OLS residual variance."""
        K = ds.K
        b = linreg.fit(ds).sigma2_hat if ds.n > K else float(np.var(ds.y))
        return cls(np.zeros(K), scale * np.eye(K), 2.0, max(b, 1e-12))


@dataclass(frozen=True)
class ConjugatePosterior:
    mu: np.ndarray
    V: np.ndarray
    a: float
    b: float
    family: str
    phi: float
    alpha: float
    k: int
    y: np.ndarray
    X: np.ndarray
    coords: np.ndarray
    feature_names: tuple[str, ...] = ()
    graph: NeighborGraph | None = field(default=None, repr=False, compare=False)
    factor: SparseVecchiaFactor | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def sigma2_mean(self) -> float:
        """Posterior mean of σ² (finite when a > 1)."""
        return self.b / (self.a - 1.0)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.coords)


def fit_conjugate(
    ds: SpatialDataset,
    family: str = DEFAULT_FAMILY,
    phi: float = DEFAULT_PHI,
    alpha: float = DEFAULT_ALPHA,
    k: int = DEFAULT_K,
    prior: ConjugatePrior | None = None,
    *,
    graph: NeighborGraph | None = None,
    workers: int = 1,
    jitter: bool = False,
) -> ConjugatePosterior:
    """Closed-form normal–inverse-gamma posterior of (β, σ²) for fixed (φ, α).

    ``jitter=True`` separates duplicated coordinates by 1e-6 km before
    fitting; it is never applied implicitly.
    """
    if ds.y is None:
        raise ValueError("dataset has no response")
    n, K = ds.X.shape
    if n <= K:
        raise ValueError(f"need n > K (n={n}, K={K})")
    coords = jitter_duplicates(ds.coords) if jitter else ds.coords
    if prior is None:
        prior = ConjugatePrior.default(ds)
    if prior.mu.size != K:
        raise ValueError(f"prior has {prior.mu.size} coefficients, data has {K}")
    if graph is None:
        graph = build_neighbor_graph(coords, k)
    factor = build_factor(graph, coords, family, phi, alpha, workers=workers)

    y_t = factor.whiten(ds.y[graph.order])
    X_t = factor.whiten(ds.X[graph.order])
    v_cf = linalg.cho_factor(prior.V)
    v_inv = linalg.cho_solve(v_cf, np.eye(K))
    prec = v_inv + X_t.T @ X_t
    p_cf = linalg.cho_factor(prec)
    V_post = linalg.cho_solve(p_cf, np.eye(K))
    V_post = 0.5 * (V_post + V_post.T)
    mu_post = linalg.cho_solve(p_cf, v_inv @ prior.mu + X_t.T @ y_t)
    quad = prior.mu @ v_inv @ prior.mu + y_t @ y_t - mu_post @ prec @ mu_post
    b_post = prior.b + 0.5 * quad
    if not b_post > 0:
        raise np.linalg.LinAlgError(f"posterior scale b*={b_post} is not positive")
    return ConjugatePosterior(
        mu=mu_post,
        V=V_post,
        a=prior.a + 0.5 * n,
        b=float(b_post),
        family=family,
        phi=float(phi),
        alpha=float(alpha),
        k=graph.k,
        y=ds.y,
        X=ds.X,
        coords=np.asarray(coords),
        feature_names=tuple(ds.feature_names),
        graph=graph,
        factor=factor,
    )


@dataclass(frozen=True)
class NngpPrediction:
    """Location-scale Student-t predictive per query point."""

    mean: np.ndarray
    scale: np.ndarray
    dof: float

    @property
    def variance(self) -> np.ndarray:
        return self.scale**2 * self.dof / (self.dof - 2.0)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def interval(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        q = stats.t.ppf(0.5 + level / 2.0, self.dof)
        return self.mean - q * self.scale, self.mean + q * self.scale


def predict(
    post: ConjugatePosterior,
    X_new,
    coords_new,
    *,
    n_neighbors: int | None = None,
    beta_correction: bool = True,
    workers: int = 1,
) -> NngpPrediction:
    """Kriging from the ``k`` nearest training sites of each query point.

    ``n_neighbors`` overrides the fitted k (clamped to n).
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    coords_new = np.atleast_2d(np.asarray(coords_new, dtype=float))
    K = post.mu.size
    if X_new.shape[1] != K:
        raise ValueError(f"expected {K} feature columns, got {X_new.shape[1]}")
    if coords_new.shape != (X_new.shape[0], 2):
        raise ValueError("coords_new must be (m, 2) and match X_new rows")
    m = min(int(n_neighbors or post.k), post.n)
    _, idx = post.tree.query(coords_new, k=m)
    idx = np.asarray(idx).reshape(coords_new.shape[0], m)
    resid = post.y - post.X @ post.mu

    allc = np.vstack([post.coords, coords_new])
    q0 = post.n

    def run(s):
        rows = np.arange(s, min(s + _CHUNK, coords_new.shape[0]))
        nb = idx[rows]
        M, r = _local_systems(allc, q0 + rows, nb, post.family, post.phi, post.alpha)
        try:
            w = np.linalg.solve(M, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise SingularNeighborError(
                "singular neighbour system at prediction time; use alpha > 0"
            ) from None
        mean = X_new[rows] @ post.mu + np.einsum("ij,ij->i", w, resid[nb])
        v = (1.0 + post.alpha) - np.einsum("ij,ij->i", w, r)
        if beta_correction:
            u = X_new[rows] - np.einsum("ij,ijk->ik", w, post.X[nb])
            v = v + np.einsum("ij,jk,ik->i", u, post.V, u)
        return mean, np.maximum(v, 0.0)

    starts = range(0, coords_new.shape[0], _CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    mean = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
    v = np.concatenate([p[1] for p in parts]) if parts else np.empty(0)
    return NngpPrediction(mean=mean, scale=np.sqrt(post.b / post.a * v), dof=2.0 * post.a)


# ---------------------------------------------------------------------------
# cross-validated tuning


def _cv_mse(ds, folds_idx, family, phi, alpha, k, graphs):
    sse = 0.0
    for f, test in enumerate(folds_idx):
        train = np.setdiff1d(np.arange(ds.n), test)
        tr = ds.subset(train)
        post = fit_conjugate(tr, family, phi, alpha, k, graph=graphs[f])
        pred = predict(post, ds.X[test], ds.coords[test])
        sse += float(np.sum((ds.y[test] - pred.mean) ** 2))
    return sse / ds.n


def _fold_graphs(ds, folds_idx, k):
    graphs = []
    for test in folds_idx:
        train = np.setdiff1d(np.arange(ds.n), test)
        graphs.append(build_neighbor_graph(ds.coords[train], k))
    return graphs


@dataclass(frozen=True)
class GridSearchResult:
    phi: float
    alpha: float
    table: list[tuple[float, float, float]]  # (phi, alpha, cv_mse)


def grid_search(
    ds: SpatialDataset,
    family: str,
    phi_grid,
    alpha_grid,
    k: int = DEFAULT_K,
    folds: int = 5,
    seed: int = 0,
) -> GridSearchResult:
    """K-fold CV MSE over every (φ, α) pair; ties prefer smaller α, then smaller φ."""
    phi_grid = [float(p) for p in phi_grid]
    alpha_grid = [float(a) for a in alpha_grid]
    if not phi_grid or not alpha_grid:
        raise ValueError("grids must be non-empty")
    if folds < 2:
        raise ValueError("folds must be >= 2")
    folds_idx = kfold_indices(ds.n, folds, seed)
    graphs = _fold_graphs(ds, folds_idx, k)
    table = []
    for phi in phi_grid:
        for alpha in alpha_grid:
            table.append((phi, alpha, _cv_mse(ds, folds_idx, family, phi, alpha, k, graphs)))
    best = min(table, key=lambda row: (row[2], row[1], row[0]))
    return GridSearchResult(best[0], best[1], table)


def neighbor_curve(
    ds: SpatialDataset,
    family: str,
    phi: float,
    alpha: float,
    k_list,
    folds: int = 5,
    seed: int = 0,
) -> list[tuple[int, float]]:
    """CV MSE for each neighbour count in ``k_list`` (duplicates dropped, order kept)."""
    ks = list(dict.fromkeys(int(k) for k in k_list))
    if not ks:
        raise ValueError("k_list must be non-empty")
    folds_idx = kfold_indices(ds.n, folds, seed)
    out = []
    for k in ks:
        graphs = _fold_graphs(ds, folds_idx, k)
        out.append((k, _cv_mse(ds, folds_idx, family, phi, alpha, k, graphs)))
    return out


# ---------------------------------------------------------------------------
# persistence


def save_posterior(post: ConjugatePosterior, path: str | Path, extra: dict | None = None) -> None:
    """Write a fitted posterior to an ``.npz`` container with a JSON header.

    Entries of ``extra`` are stored in the header alongside the model's own.
    """
    meta = {
        **(extra or {}),
        "format": "nngpbench.nngp",
        "version": FORMAT_VERSION,
        "family": post.family,
        "phi": post.phi,
        "alpha": post.alpha,
        "k": post.k,
        "a": post.a,
        "b": post.b,
        "feature_names": list(post.feature_names),
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            meta=np.array(json.dumps(meta)),
            mu=post.mu,
            V=post.V,
            y=post.y,
            X=post.X,
            coords=post.coords,
        )


def load_posterior(path: str | Path) -> ConjugatePosterior:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != "nngpbench.nngp":
            raise ValueError(f"{path} is not an NNGP model file")
        if meta["version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported NNGP model version {meta['version']}")
        return ConjugatePosterior(
            mu=z["mu"],
            V=z["V"],
            a=float(meta["a"]),
            b=float(meta["b"]),
            family=meta["family"],
            phi=float(meta["phi"]),
            alpha=float(meta["alpha"]),
            k=int(meta["k"]),
            y=z["y"],
            X=z["X"],
            coords=z["coords"],
            feature_names=tuple(meta["feature_names"]),
        )
