import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nngpbench import metrics
from nngpbench.metrics import (
    HISTOGRAM_EDGES,
    compute,
    error_histogram,
    format_histogram_table,
    format_metric_table,
    format_range_table,
    range_breakdown,
)

positive = st.floats(1.0, 20.0, allow_nan=False)


class TestCompute:
    def test_symmetric_errors(self):
        r = compute([10, 10], [9, 11])
        assert (r.mae, r.mse, r.rmse, r.mape, r.n) == (1.0, 1.0, 1.0, 10.0, 2)

    def test_identity(self):
        r = compute([3.0, 4.0], [3.0, 4.0])
        assert r.mae == r.mse == r.rmse == r.mape == 0.0

    def test_mape_magnitude(self):
        assert compute([11.0], [11.11]).mape == pytest.approx(1.0, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            compute([1, 2], [1])

    def test_zero_response(self):
        with pytest.raises(ValueError, match="zero"):
            compute([0.0, 1.0], [0.0, 1.0])
        assert compute([0.0, 1.0], [0.5, 1.0], with_mape=False).mape is None

    def test_against_direct_formulas(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(9, 13, 200)
        yhat = y + rng.normal(0, 0.2, 200)
        r = compute(y, yhat)
        e = y - yhat
        assert r.mae == pytest.approx(sum(abs(v) for v in e) / 200, rel=1e-12)
        assert r.mse == pytest.approx(sum(v * v for v in e) / 200, rel=1e-12)
        assert r.mape == pytest.approx(100 * sum(abs(a - b) / abs(a) for a, b in zip(y, yhat)) / 200,
                                       rel=1e-12)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.tuples(positive, positive), min_size=1, max_size=40), st.floats(0.1, 10))
    def test_properties(self, pairs, c):
        y = np.array([p[0] for p in pairs])
        yhat = np.array([p[1] for p in pairs])
        r = compute(y, yhat)
        assert abs(r.rmse - math.sqrt(r.mse)) <= 1e-12 * max(1.0, r.rmse)
        assert r.rmse**2 == pytest.approx(r.mse, rel=1e-12, abs=1e-300)
        assert r.mae <= r.rmse * (1 + 1e-12)
        assert r.mape >= 0
        s = compute(c * y, c * yhat)
        assert s.mape == pytest.approx(r.mape, rel=1e-9, abs=1e-9)
        assert s.mae == pytest.approx(c * r.mae, rel=1e-9, abs=1e-12)
        assert s.rmse == pytest.approx(c * r.rmse, rel=1e-9, abs=1e-12)
        h1, h2 = error_histogram(y, yhat), error_histogram(c * y, c * yhat)
        np.testing.assert_allclose(h1.frequencies, h2.frequencies)

    def test_cross_checks_mse(self):
        rng = np.random.default_rng(2)
        y, yhat = rng.normal(size=50) + 5, rng.normal(size=50) + 5
        assert metrics.mse(y, yhat) == compute(y, yhat).mse


class TestRangeBreakdown:
    def test_single_bin_matches_overall(self):
        y = np.array([11.1, 11.2, 11.3])
        yhat = np.array([11.0, 11.4, 11.3])
        rb = range_breakdown(y, yhat)
        used = [b for b in rb.bins if b.count]
        assert len(used) == 1
        assert used[0].mape == pytest.approx(compute(y, yhat).mape, rel=1e-15)
        assert rb.n == 3

    def test_empty_bins_flagged(self):
        rb = range_breakdown([11.2], [11.0])
        empty = [b for b in rb.bins if b.count == 0]
        assert len(empty) == len(rb.bins) - 1
        assert all(b.mape is None for b in empty)

    def test_two_bins_by_subset(self):
        y = np.array([9.5, 9.8, 12.2, 12.4, 12.1])
        yhat = np.array([9.6, 9.7, 12.0, 12.5, 12.1])
        rb = range_breakdown(y, yhat, edges=(0, 10, 20))
        assert [b.count for b in rb.bins] == [2, 3]
        assert rb.bins[0].mape == pytest.approx(compute(y[:2], yhat[:2]).mape)
        assert rb.bins[1].mape == pytest.approx(compute(y[2:], yhat[2:]).mape)

    def test_default_edges(self):
        rb = range_breakdown([11.0], [11.0])
        edges = [rb.bins[0].lower] + [b.upper for b in rb.bins]
        assert edges == [-math.inf, 10, 10.5, 11, 11.5, 12, 12.5, 13, math.inf]
        # lower edge is inclusive
        assert rb.bins[3].count == 1

    def test_edges_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            range_breakdown([1.0], [1.0], edges=(0, 2, 1))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(8, 14), st.floats(8, 14)), min_size=1, max_size=60))
    def test_counts_partition(self, pairs):
        y = [p[0] for p in pairs]
        yhat = [p[1] for p in pairs]
        rb = range_breakdown(y, yhat)
        assert rb.n == len(pairs)
        for a, b in zip(rb.bins[:-1], rb.bins[1:]):
            assert a.upper == b.lower


class TestHistogram:
    def test_edges(self):
        assert HISTOGRAM_EDGES == (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, math.inf)

    def test_all_zero(self):
        h = error_histogram([10.0, 11.0], [10.0, 11.0])
        assert h.frequencies[0] == 100.0 and sum(h.frequencies[1:]) == 0.0

    def test_one_per_bin(self):
        pct = np.array([0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.25, 10.0])
        y = np.full(8, 100.0)
        h = error_histogram(y, y + pct)
        assert h.frequencies == (12.5,) * 8
        assert h.counts == (1,) * 8

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.tuples(positive, positive), min_size=1, max_size=80))
    def test_partition(self, pairs):
        h = error_histogram([p[0] for p in pairs], [p[1] for p in pairs])
        assert abs(sum(h.frequencies) - 100.0) <= 1e-9
        assert sum(h.counts) == len(pairs)


class TestFormatting:
    def test_metric_table_orders_models(self):
        r = compute([10, 10], [9, 11])
        text = format_metric_table({"1000": {"dnn": r, "ols": r, "nngp": None}})
        header = text.splitlines()[0].split()
        assert header[2:] == ["ols", "nngp", "dnn"]
        assert "failed" in text

    def test_range_and_histogram_tables(self):
        y, yhat = np.array([10.2, 11.7]), np.array([10.0, 11.8])
        rt = format_range_table({"ols": range_breakdown(y, yhat)})
        assert "~10" in rt and "13~" in rt and "NA" in rt
        ht = format_histogram_table({"ols": error_histogram(y, yhat)})
        assert ht.splitlines()[-1].split() == ["total", "100.000"]
