import numpy as np
import pytest
from scipy import stats

from nngpbench import linreg
from nngpbench.dataset import SpatialDataset
from conftest import make_dataset


def ds_from(X, y, names=None):
    X = np.asarray(X, dtype=float)
    names = names or ("intercept",) + tuple(f"x{j}" for j in range(1, X.shape[1]))
    return SpatialDataset(y=y, X=X, coords=np.zeros((X.shape[0], 2)), feature_names=names)


class TestFit:
    def test_exact_line(self):
        x = np.linspace(0, 1, 20)
        fit = linreg.fit(ds_from(np.column_stack([np.ones(20), x]), 2 + 3 * x))
        np.testing.assert_allclose(fit.beta, [2, 3], atol=1e-10)
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)

    def test_pure_noise(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([np.ones(2000), rng.normal(size=(2000, 3))])
        fit = linreg.fit(ds_from(X, rng.normal(size=2000)))
        assert fit.adj_r2 <= fit.r2
        assert abs(fit.adj_r2) < 0.01

    def test_residuals_orthogonal(self):
        ds = make_dataset(300, seed=4, K=5)
        fit = linreg.fit(ds)
        r = ds.y - linreg.predict(fit, ds.X)
        assert np.max(np.abs(ds.X.T @ r)) < 1e-6 * ds.n

    def test_matches_normal_equations(self):
        ds = make_dataset(300, seed=5, K=6)
        np.testing.assert_allclose(
            linreg.fit(ds).beta, linreg.fit_normal_equations(ds.X, ds.y), rtol=1e-8, atol=1e-10
        )

    def test_inference_matches_textbook(self):
        ds = make_dataset(150, seed=6, K=4)
        fit = linreg.fit(ds)
        X, y = ds.X, ds.y
        beta = np.linalg.solve(X.T @ X, X.T @ y)
        resid = y - X @ beta
        s2 = resid @ resid / (150 - 4)
        se = np.sqrt(s2 * np.diag(np.linalg.inv(X.T @ X)))
        np.testing.assert_allclose(fit.std_errors, se, rtol=1e-9)
        np.testing.assert_allclose(fit.t_values, beta / se, rtol=1e-9)
        r2 = 1 - resid @ resid / np.sum((y - y.mean()) ** 2)
        assert fit.adj_r2 == pytest.approx(1 - (1 - r2) * 149 / 146, rel=1e-12)

    def test_duplicated_column_named(self):
        ds = make_dataset(50, seed=1, K=3)
        X = np.column_stack([ds.X, ds.X[:, 2]])
        with pytest.raises(linreg.RankDeficientError) as info:
            linreg.fit(ds_from(X, ds.y, ("intercept", "x1", "x2", "x2_copy")))
        assert set(info.value.columns) & {"x2", "x2_copy"}
        assert "x2" in str(info.value)

    def test_needs_n_greater_than_k(self):
        with pytest.raises(ValueError, match="n > K"):
            linreg.fit(ds_from(np.eye(3), np.ones(3)))


class TestPredict:
    def test_intercept_only(self):
        y = np.array([1.0, 2.0, 6.0])
        fit = linreg.fit(ds_from(np.ones((3, 1)), y))
        np.testing.assert_allclose(linreg.predict(fit, np.ones((2, 1))), 3.0)

    def test_hand_two_by_two(self):
        # 1·b0 + 0·b1 = 3 and 1·b0 + 1·b1 = 5 (plus a third consistent row)
        X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        fit = linreg.fit(ds_from(X, np.array([3.0, 5.0, 7.0])))
        assert linreg.predict(fit, [[1.0, 4.0]])[0] == pytest.approx(11.0, abs=1e-10)

    def test_dimension_mismatch(self):
        fit = linreg.fit(make_dataset(30))
        with pytest.raises(ValueError, match="columns"):
            linreg.predict(fit, np.ones((2, 5)))

    def test_prediction_interval(self):
        ds = make_dataset(80, seed=2)
        fit = linreg.fit(ds)
        x0 = ds.X[:3]
        mean, sd, lo, hi = linreg.prediction_interval(fit, x0, 0.9)
        lev = np.einsum("ij,jk,ik->i", x0, np.linalg.inv(ds.X.T @ ds.X), x0)
        np.testing.assert_allclose(sd, np.sqrt(fit.sigma2_hat * (1 + lev)), rtol=1e-10)
        q = stats.t.ppf(0.95, 80 - 3)
        np.testing.assert_allclose(hi - mean, q * sd, rtol=1e-12)
        np.testing.assert_allclose(mean - lo, q * sd, rtol=1e-12)


def test_coefficient_table_layout():
    fit = linreg.fit(make_dataset(40))
    text = linreg.coefficient_table(fit)
    lines = text.splitlines()
    assert lines[0].split() == ["Variable", "name", "Coef.", "t", "value"]
    assert lines[1].startswith("intercept")
    assert lines[-1].startswith("Adjusted R2")
