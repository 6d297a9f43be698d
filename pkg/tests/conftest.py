import numpy as np
import pytest
from scipy.spatial.distance import cdist

from nngpbench.covmodel import correlation
from nngpbench.dataset import SpatialDataset
from nngpbench.synth import default_lifull_like, generate


def make_dataset(n, seed=0, K=3, extent=10.0, noise=0.5, beta=None):
    """Small random design with an intercept and a smooth spatial signal."""
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, extent, (n, 2))
    X = np.column_stack([np.ones(n), rng.normal(size=(n, K - 1))])
    beta = np.arange(1.0, K + 1.0) if beta is None else np.asarray(beta, dtype=float)
    w = np.sin(coords[:, 0] / 2.0) + np.cos(coords[:, 1] / 3.0)
    y = X @ beta + w + noise * rng.normal(size=n)
    names = ("intercept",) + tuple(f"x{j}" for j in range(1, K))
    return SpatialDataset(y=y, X=X, coords=coords, feature_names=names)


def dense_conjugate(ds, family, phi, alpha, mu, V, a, b):
    """Normal-inverse-gamma posterior under the full (unapproximated) M = P + alpha*I."""
    M = correlation(family, phi, cdist(ds.coords, ds.coords)) + alpha * np.eye(ds.n)
    Mi = np.linalg.inv(M)
    Vi = np.linalg.inv(V)
    prec = Vi + ds.X.T @ Mi @ ds.X
    V_post = np.linalg.inv(prec)
    mu_post = V_post @ (Vi @ mu + ds.X.T @ Mi @ ds.y)
    a_post = a + ds.n / 2.0
    b_post = b + 0.5 * (mu @ Vi @ mu + ds.y @ Mi @ ds.y - mu_post @ prec @ mu_post)
    return mu_post, V_post, a_post, b_post, M


def dense_predictive_mean(ds, family, phi, alpha, mu_post, X0, c0):
    """x0'mu + rho0' M^-1 (y - X mu) with the full training set."""
    M = correlation(family, phi, cdist(ds.coords, ds.coords)) + alpha * np.eye(ds.n)
    rho = correlation(family, phi, cdist(c0, ds.coords))
    return X0 @ mu_post + rho @ np.linalg.solve(M, ds.y - ds.X @ mu_post)


def brute_force_neighbors(coords, order, k):
    """Exact k nearest predecessors in ``order`` by an O(n^2) scan."""
    xs = coords[order]
    out = []
    for i in range(len(order)):
        if i == 0:
            out.append([])
            continue
        d = np.sqrt(((xs[:i] - xs[i]) ** 2).sum(axis=1))
        ranked = sorted(range(i), key=lambda j: (d[j], j))
        out.append(sorted(ranked[: min(k, i)]))
    return out


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance line; all lines are printed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, ok, detail):
        lines[number] = f"acceptance {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])


@pytest.fixture(scope="session")
def synth_small():
    ds, truth = generate(default_lifull_like(n=1000, seed=3))
    return ds, truth


@pytest.fixture
def small_ds():
    return make_dataset(120, seed=1)
