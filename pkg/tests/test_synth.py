import numpy as np
import pytest
from scipy.spatial.distance import cdist

from nngpbench import linreg, synth
from nngpbench.covmodel import DEFAULT_SPEC, CovarianceSpec, correlation
from nngpbench.dataset import load_csv, write_csv
from nngpbench.synth import FeatureSpec, SynthSpec, default_lifull_like, generate, simulate_field


def test_no_spatial_signal():
    spec = default_lifull_like(n=4000, seed=1).with_(cov=CovarianceSpec("gaussian", 0.0, 0.05, 0.04))
    ds, truth = generate(spec)
    assert np.all(truth.w == 0)
    np.testing.assert_allclose(ds.y, ds.X @ truth.beta + truth.eps)
    fit = linreg.fit(ds)
    # coefficients within four standard errors of the truth
    assert np.all(np.abs(fit.beta - truth.beta) < 4 * fit.std_errors)


def test_exact_covariance_at_full_conditioning():
    rng = np.random.default_rng(0)
    coords = rng.uniform(0, 10, (200, 2))
    cov = CovarianceSpec("exponential", 1.5, 0.4, 0.0)
    target = cov.sigma2 * correlation(cov.family, cov.phi, cdist(coords, coords))
    w = simulate_field(coords, cov, np.random.default_rng(1), k=199, size=2000)
    errs = []
    for reps in (250, 500, 1000, 2000):
        sample = w[:, :reps] @ w[:, :reps].T / reps
        errs.append(np.linalg.norm(sample - target) / np.linalg.norm(target))
    # Monte-Carlo error shrinks roughly like 1/sqrt(reps)
    assert errs[-1] < errs[0]
    assert errs[-1] < 0.1
    assert errs[-1] < 0.75 * errs[0]


def test_marginal_variance_at_default_k():
    rng = np.random.default_rng(2)
    coords = rng.uniform(0, 200, (3000, 2))
    w = simulate_field(coords, DEFAULT_SPEC, np.random.default_rng(3), size=200)
    assert np.mean(w.var(axis=1)) == pytest.approx(DEFAULT_SPEC.sigma2, rel=0.1)


def test_seed_determinism():
    a, ta = generate(default_lifull_like(n=500, seed=9))
    b, tb = generate(default_lifull_like(n=500, seed=9))
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(ta.w, tb.w)
    c, _ = generate(default_lifull_like(n=500, seed=10))
    assert not np.array_equal(a.y, c.y)


def test_default_summary_statistics():
    ds, _ = generate(default_lifull_like(n=10_000, seed=0))
    assert 11.0 <= ds.y.mean() <= 11.2
    assert 0.35 <= ds.y.std(ddof=1) <= 0.45


def test_default_covariance():
    spec = default_lifull_like()
    assert spec.cov == CovarianceSpec("gaussian", 0.03, 1 / 25.8, 0.04)
    assert spec.cov.alpha == pytest.approx(4 / 3)
    assert spec.domain[1] - spec.domain[0] > 0


def test_spec_round_trip(tmp_path):
    spec = default_lifull_like(n=123, seed=4)
    spec.dump(tmp_path / "spec.yaml")
    assert SynthSpec.load(tmp_path / "spec.yaml") == spec
    assert SynthSpec.from_dict(spec.to_dict()) == spec


def test_csv_dogfood(tmp_path):
    ds, _ = generate(default_lifull_like(n=200, seed=5))
    write_csv(ds, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", ds.schema)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.coords, ds.coords)


def test_categorical_frequencies():
    ds, _ = generate(default_lifull_like(n=20_000, seed=6))
    labels = ds.decode_categorical("direction")
    share = labels.count("South") / len(labels)
    assert share == pytest.approx(0.45, abs=0.02)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(name="a", dist="categorical", categories=("x", "y"), probs=(0.6, 0.6)),
        dict(name="a", dist="categorical", categories=("x",), probs=(1.0,)),
        dict(name="a", dist="uniform", params=(2.0, 1.0)),
        dict(name="a", dist="normal", params=(0.0,)),
        dict(name="a", dist="poisson", params=(1.0,)),
    ],
)
def test_invalid_features(kwargs):
    with pytest.raises(ValueError):
        FeatureSpec(**kwargs)


def test_invalid_spec():
    base = default_lifull_like(n=10)
    with pytest.raises(ValueError, match="area"):
        base.with_(domain=(0.0, 0.0, 0.0, 1.0))
    with pytest.raises(ValueError, match="beta"):
        base.with_(beta=(1.0, 2.0))
