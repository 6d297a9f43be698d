import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nngpbench import covmodel, linreg, synth
from nngpbench.covmodel import (
    DEFAULT_SPEC,
    FAMILIES,
    CovarianceSpec,
    EmpiricalVariogram,
    cov,
    empirical_variogram,
    fit_irwgls,
    select_family,
    semivariogram,
)

specs = st.builds(
    CovarianceSpec,
    family=st.sampled_from(FAMILIES),
    sigma2=st.floats(1e-3, 10.0),
    phi=st.floats(1e-3, 5.0),
    tau2=st.floats(0.0, 5.0),
)


class TestCov:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_sill_at_origin(self, family):
        assert cov(CovarianceSpec(family, 1.7, 0.3), 0.0) == pytest.approx(1.7)

    def test_exponential_hand_value(self):
        assert cov(CovarianceSpec("exponential", 2.0, 0.5), 2.0) == pytest.approx(2 * math.exp(-1), abs=1e-12)
        assert cov(CovarianceSpec("exponential", 2.0, 0.5), 2.0) == pytest.approx(0.735759, abs=1e-6)

    def test_documented_gaussian_at_range(self):
        assert cov(DEFAULT_SPEC, 25.8) == pytest.approx(0.03 * math.exp(-1), rel=1e-12)
        assert cov(DEFAULT_SPEC, 25.8) == pytest.approx(0.011036, abs=1e-6)
        assert DEFAULT_SPEC.alpha == pytest.approx(4.0 / 3.0)

    def test_spherical_hand_values(self):
        s = CovarianceSpec("spherical", 1.0, 0.1)
        assert cov(s, 5.0) == pytest.approx(1 - 0.75 + 0.0625)
        assert cov(s, 10.0) == 0.0 and cov(s, 50.0) == 0.0

    def test_negative_distance(self):
        with pytest.raises(ValueError):
            cov(DEFAULT_SPEC, -1.0)
        with pytest.raises(ValueError):
            semivariogram(DEFAULT_SPEC, [-0.5])

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            CovarianceSpec("matern", 1.0, 1.0)
        with pytest.raises(ValueError):
            CovarianceSpec("gaussian", 1.0, 0.0)


class TestSemivariogram:
    def test_hand_value(self):
        s = CovarianceSpec("exponential", 1.0, 1.0, 0.5)
        assert semivariogram(s, 1.0) == pytest.approx(1.5 - math.exp(-1), abs=1e-12)
        assert semivariogram(s, 1.0) == pytest.approx(1.132121, abs=1e-6)

    def test_limits(self):
        s = CovarianceSpec("gaussian", 0.3, 0.2, 0.1)
        assert semivariogram(s, 0.0) == 0.0
        assert semivariogram(s, 1e6) == pytest.approx(0.4)

    @settings(max_examples=100, deadline=None)
    @given(specs, st.lists(st.floats(1e-6, 100.0), min_size=2, max_size=20))
    def test_identity_and_monotonicity(self, spec, ds):
        d = np.sort(np.asarray(ds))
        c = cov(spec, d)
        g = semivariogram(spec, d)
        np.testing.assert_allclose(g + c, spec.tau2 + spec.sigma2, rtol=1e-12, atol=1e-12)
        assert np.all(np.diff(c) <= 1e-15)
        assert np.all(np.diff(g) >= -1e-15)


class TestEmpiricalVariogram:
    def test_two_points(self):
        ev = empirical_variogram([0.0, 2.0], [[0, 0], [1, 0]], n_bins=3, max_dist=2.0)
        assert len(ev) == 1
        assert ev.gamma[0] == 2.0 and ev.counts[0] == 1 and ev.h[0] == 1.0

    def test_constant_residuals(self):
        rng = np.random.default_rng(0)
        ev = empirical_variogram(np.full(50, 3.0), rng.uniform(0, 10, (50, 2)))
        assert np.all(ev.gamma == 0)

    def test_matches_pair_loop(self):
        rng = np.random.default_rng(1)
        c = rng.uniform(0, 10, (40, 2))
        r = rng.normal(size=40)
        ev = empirical_variogram(r, c, n_bins=5, max_dist=6.0)
        sums, cnt, dsum = np.zeros(5), np.zeros(5), np.zeros(5)
        for i in range(40):
            for k in range(i + 1, 40):
                d = np.hypot(*(c[i] - c[k]))
                if 0 < d <= 6.0:
                    j = min(int(np.ceil(d / 1.2)) - 1, 4)
                    sums[j] += (r[i] - r[k]) ** 2
                    cnt[j] += 1
                    dsum[j] += d
        nz = cnt > 0
        np.testing.assert_allclose(ev.gamma, sums[nz] / (2 * cnt[nz]), rtol=1e-12)
        np.testing.assert_array_equal(ev.counts, cnt[nz])
        np.testing.assert_allclose(ev.h, dsum[nz] / cnt[nz], rtol=1e-12)

    def test_pair_subsampling_is_seeded(self):
        rng = np.random.default_rng(2)
        c = rng.uniform(0, 10, (300, 2))
        r = rng.normal(size=300)
        a = empirical_variogram(r, c, max_pairs=5000, seed=4)
        b = empirical_variogram(r, c, max_pairs=5000, seed=4)
        np.testing.assert_array_equal(a.gamma, b.gamma)
        assert a.counts.sum() <= 5000

    def test_errors(self):
        with pytest.raises(ValueError, match="2 points"):
            empirical_variogram([1.0], [[0, 0]])
        with pytest.raises(ValueError, match="max_dist"):
            empirical_variogram([1.0, 2.0], [[0, 0], [1, 1]], max_dist=0.0)

    def test_csv(self, tmp_path):
        ev = EmpiricalVariogram([1.0, 2.0], [0.5, 0.75], [3, 4])
        ev.to_csv(tmp_path / "v.csv")
        assert (tmp_path / "v.csv").read_text().splitlines() == ["h,gamma,pairs", "1.0,0.5,3", "2.0,0.75,4"]


def exact_variogram(spec, h=None):
    h = np.linspace(1.0, 40.0, 25) if h is None else h
    return EmpiricalVariogram(h, semivariogram(spec, h), np.full(h.size, 1000.0))


class TestIrwgls:
    def test_noise_free_recovery(self):
        truth = CovarianceSpec("exponential", 1.0, 0.2, 0.1)
        fit = fit_irwgls(exact_variogram(truth), "exponential")
        assert fit.converged
        s = fit.spec
        for got, want in ((s.sigma2, 1.0), (s.phi, 0.2), (s.tau2, 0.1)):
            assert abs(got - want) / want < 1e-4

    @pytest.mark.parametrize("family", FAMILIES)
    def test_noise_free_each_family(self, family):
        truth = CovarianceSpec(family, 0.5, 0.05, 0.2)
        s = fit_irwgls(exact_variogram(truth), family).spec
        np.testing.assert_allclose([s.sigma2, s.phi, s.tau2], [0.5, 0.05, 0.2], rtol=1e-4)

    @pytest.mark.parametrize("c", [1e-3, 0.37, 25.0])
    def test_scale_equivariance(self, c):
        rng = np.random.default_rng(5)
        truth = CovarianceSpec("gaussian", 0.3, 0.06, 0.1)
        base = exact_variogram(truth)
        noisy = EmpiricalVariogram(base.h, base.gamma * rng.uniform(0.9, 1.1, len(base)), base.counts)
        a = fit_irwgls(noisy, "gaussian").spec
        b = fit_irwgls(noisy.scaled(c ** 2), "gaussian").spec
        assert b.sigma2 == pytest.approx(c**2 * a.sigma2, rel=1e-6)
        assert b.tau2 == pytest.approx(c**2 * a.tau2, rel=1e-6, abs=1e-12 * c**2)
        assert b.phi == pytest.approx(a.phi, rel=1e-6)

    def test_too_few_bins(self):
        with pytest.raises(ValueError, match="4"):
            fit_irwgls(EmpiricalVariogram([1, 2, 3], [1, 2, 3], [1, 1, 1]), "gaussian")

    def test_non_convergence_flagged(self):
        rng = np.random.default_rng(9)
        h = np.linspace(1, 30, 12)
        ev = EmpiricalVariogram(h, rng.uniform(0.5, 1.5, 12), np.full(12, 10.0))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = fit_irwgls(ev, "spherical", max_iter=1, tol=0.0)
        assert not fit.converged
        assert any("did not converge" in str(w.message) for w in caught)
        assert fit.spec.sigma2 > 0 and fit.spec.tau2 >= 0


class TestSelectFamily:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_noise_free_picks_generator(self, family):
        truth = CovarianceSpec(family, 0.5, 0.05, 0.1)
        assert select_family(exact_variogram(truth)).family == family

    def test_single_candidate(self):
        ev = exact_variogram(CovarianceSpec("gaussian", 0.5, 0.05, 0.1))
        sel = select_family(ev, ["spherical"])
        assert sel.family == "spherical" and sel.spec.family == "spherical"

    def test_tie_goes_to_first(self, monkeypatch):
        monkeypatch.setattr(covmodel, "cv_score", lambda ev, fam, folds=5: 1.0)
        ev = exact_variogram(CovarianceSpec("gaussian", 0.5, 0.05, 0.1))
        assert select_family(ev, ["spherical", "gaussian"]).family == "spherical"
        assert select_family(ev, ["gaussian", "spherical"]).family == "gaussian"

    @pytest.mark.slow
    def test_exponential_data_selects_exponential(self):
        truth = CovarianceSpec("exponential", 0.05, 1 / 20.0, 0.01)
        hits = 0
        for s in range(10):
            spec = synth.default_lifull_like(n=10_000, seed=100 + s).with_(cov=truth)
            ds, _ = synth.generate(spec)
            resid = ds.y - ds.X @ linreg.fit(ds).beta
            ev = empirical_variogram(resid, ds.coords, seed=s)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                hits += select_family(ev).family == "exponential"
        assert hits >= 8
