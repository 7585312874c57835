import datetime as dt
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntldetect.data import ConsumptionMatrix, GapDescriptor, SeasonCalendar, detect_gaps
from ntldetect.imputation import (
    NoQueryWindow,
    Side,
    derivative_transform,
    dtw_cost,
    find_candidates,
    impute_gap,
    impute_matrix,
    impute_row,
)

from oracles import dtw_brute_force

SUMMER_START = dt.date(2015, 6, 1)


def daily(start, n):
    return [start + dt.timedelta(days=j) for j in range(n)]


class TestDerivativeTransform:
    def test_constant(self):
        assert derivative_transform([5, 5, 5, 5]).tolist() == [0.0, 0.0]

    def test_ramp(self):
        # ((1-0) + (2-0)/2) / 2 = 1 at each interior point
        assert derivative_transform([0, 1, 2, 3]).tolist() == [1.0, 1.0]

    def test_spike(self):
        # ((2-0) + (0-0)/2) / 2 = 1
        assert derivative_transform([0, 2, 0]).tolist() == [1.0]

    def test_too_short(self):
        with pytest.raises(ValueError):
            derivative_transform([1, 2])

    @given(
        st.floats(-5, 5),
        st.floats(-10, 10),
        st.integers(3, 20),
    )
    @settings(max_examples=50, deadline=None)
    def test_affine_sequence_gives_constant_slope(self, slope, intercept, n):
        x = slope * np.arange(n) + intercept
        d = derivative_transform(x)
        assert np.allclose(d, slope, atol=1e-9)


class TestDtwCost:
    def test_identical_is_zero(self):
        assert dtw_cost([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_two_by_two_grid(self):
        # All warping paths on the 2x2 grid of unit local costs cost >= 2.
        assert dtw_cost([0.0, 0.0], [1.0, 1.0]) == 2.0

    def test_singletons(self):
        assert dtw_cost([3.0], [7.0]) == 16.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dtw_cost([], [1.0])

    def test_derivative_cost_on_short_sequence_rejected(self):
        with pytest.raises(ValueError):
            dtw_cost([1.0, 2.0], [1.0, 2.0, 3.0], local_cost="derivative")

    @given(st.data())
    @settings(max_examples=80, deadline=None)
    def test_symmetry_and_self_zero(self, data):
        n = data.draw(st.integers(1, 6))
        m = data.draw(st.integers(1, 6))
        a = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n)))
        b = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=m, max_size=m)))
        assert dtw_cost(a, a) == 0.0
        assert dtw_cost(a, b) == pytest.approx(dtw_cost(b, a), abs=1e-12)

    @pytest.mark.parametrize("local_cost", ["squared", "derivative"])
    def test_matches_path_enumeration_oracle_sampled(self, local_cost):
        rng = np.random.default_rng(5)
        min_len = 3 if local_cost == "derivative" else 1
        for _ in range(120):
            n = rng.integers(min_len, 6)
            m = rng.integers(min_len, 6)
            a = rng.integers(0, 3, size=n).astype(float)
            b = rng.integers(0, 3, size=m).astype(float)
            got = dtw_cost(a, b, local_cost=local_cost)
            want = dtw_brute_force(a, b, local_cost=local_cost)
            assert got == pytest.approx(want, abs=1e-12)


def periodic_summer_row(n=90, pattern=(10.0, 13.0, 11.5, 9.0, 7.5, 8.0, 12.0)):
    """One row fully inside a single summer block, exactly periodic."""
    values = np.tile(np.asarray(pattern, dtype=float), n // len(pattern) + 1)[:n].copy()
    return values, daily(SUMMER_START, n)


class TestFindCandidates:
    def test_exact_copy_returns_zero_cost(self):
        values, dates = periodic_summer_row()
        series = values.copy()
        t, T = 40, 5
        series[t : t + T] = np.nan
        gap = GapDescriptor(0, t, T)
        cands = find_candidates(series, dates, gap, SeasonCalendar(), 1, Side.BEFORE)
        zero = [c for c in cands if c.dtw_cost == 0.0]
        assert zero, "an exact in-season copy of the query must be returned"
        # Verify one of them really is the same-phase copy.
        q = series[t - T : t]
        for c in zero:
            np.testing.assert_allclose(series[c.position : c.position + c.length], q)

    def test_other_season_motif_is_excluded(self):
        # Gap sits in summer; the only matching motif lives in autumn.
        n = 180
        dates = daily(dt.date(2015, 6, 1), n)  # Jun-Nov: summer then autumn
        series = np.full(n, np.nan)
        motif = np.array([4.0, 9.0, 2.0, 7.0, 5.0])
        t, T = 20, 5
        series[t - T : t] = motif  # query
        series[150 : 155] = motif  # exact copy, but in autumn
        gap = GapDescriptor(0, t, T)
        cal = SeasonCalendar()
        assert cal.season_of(dates[150])[1] != cal.season_of(dates[t])[1]
        cands = find_candidates(series, dates, gap, cal, 1, Side.BEFORE, filter_ddtw=False)
        assert cands == []
        # Brute-force exclusion check: every possible start is inadmissible
        # (wrong season, incomplete, or overlapping the gap/query spans).
        cal_keys = cal.season_keys(dates)
        gap_season = cal.season_of(dates[t])
        for p in range(n - T + 1):
            window = series[p : p + T]
            in_season = all(cal_keys[p + j] == gap_season for j in range(T))
            complete = not np.isnan(window).any()
            overlaps = not (p + T <= t - T or p >= t + T)
            assert (not in_season) or (not complete) or overlaps

    def test_prior_year_same_season_needs_larger_search_size(self):
        # Two summers; motif only in the earlier one.
        dates = daily(dt.date(2014, 6, 1), 366 + 90)
        n = len(dates)
        series = np.full(n, np.nan)
        motif = np.array([4.0, 9.0, 2.0, 7.0, 5.0, 6.0, 3.0])
        cal = SeasonCalendar()
        # Gap in summer 2015.
        t = next(i for i, d in enumerate(dates) if d == dt.date(2015, 6, 20))
        T = 7
        series[t - T : t] = motif
        # Plant candidates in summer 2014 only.
        p14 = next(i for i, d in enumerate(dates) if d == dt.date(2014, 6, 20))
        series[p14 : p14 + T] = motif
        gap = GapDescriptor(0, t, T)
        near = find_candidates(series, dates, gap, cal, 1, Side.BEFORE, filter_ddtw=False)
        far = find_candidates(series, dates, gap, cal, 2, Side.BEFORE, filter_ddtw=False)
        assert near == []
        assert [c.position for c in far] == [p14]

    def test_filter_agrees_with_direct_cost_comparison(self):
        rng = np.random.default_rng(123)
        values, dates = periodic_summer_row()
        series = values + rng.normal(0, 0.4, size=values.size)
        t, T = 40, 6
        series[t : t + T] = np.nan
        gap = GapDescriptor(0, t, T)
        cal = SeasonCalendar()
        all_c = find_candidates(series, dates, gap, cal, 1, Side.BEFORE, filter_ddtw=False)
        kept = find_candidates(series, dates, gap, cal, 1, Side.BEFORE, filter_ddtw=True)
        assert all_c, "fixture must produce candidates"
        q = series[t - T : t]
        expected_kept = []
        for c in all_c:
            w = series[c.position : c.position + c.length]
            direct_dtw = dtw_cost(q, w)
            direct_ddtw = dtw_cost(q, w, local_cost="derivative")
            assert c.dtw_cost == pytest.approx(direct_dtw, abs=1e-9)
            assert c.ddtw_cost == pytest.approx(direct_ddtw, abs=1e-9)
            if direct_ddtw < direct_dtw or direct_dtw == 0.0:
                expected_kept.append(c.position)
        assert [c.position for c in kept] == expected_kept

    def test_no_adjacent_query_window_raises(self):
        values, dates = periodic_summer_row()
        series = values.copy()
        series[:10] = np.nan  # gap at the very start: nothing before it
        gap = GapDescriptor(0, 0, 10)
        with pytest.raises(NoQueryWindow):
            find_candidates(series, dates, gap, SeasonCalendar(), 1, Side.BEFORE)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_search_size_monotonicity(self, seed):
        rng = np.random.default_rng(seed)
        dates = daily(dt.date(2014, 1, 1), 731)
        series = 5 + np.sin(np.arange(731) / 9.0) + rng.normal(0, 0.3, 731)
        series = np.maximum(series, 0.0)
        t = int(rng.integers(40, 680))
        T = int(rng.integers(3, 9))
        series[t : t + T] = np.nan
        gap = GapDescriptor(0, t, T)
        cal = SeasonCalendar()
        try:
            small = find_candidates(series, dates, gap, cal, 1, Side.BEFORE)
            large = find_candidates(series, dates, gap, cal, 4, Side.BEFORE)
        except NoQueryWindow:
            return
        small_set = {(c.position, c.side) for c in small}
        large_set = {(c.position, c.side) for c in large}
        assert small_set <= large_set


class TestImputeGap:
    def test_periodic_gap_recovered_exactly(self):
        values, dates = periodic_summer_row()
        t, T = 40, 5
        truth = values[t : t + T].copy()
        series = values.copy()
        series[t : t + T] = np.nan
        fill, method = impute_gap(series, dates, GapDescriptor(0, t, T), SeasonCalendar(), 1)
        assert method == "two_sided"
        np.testing.assert_allclose(fill, truth, atol=1e-9)

    def test_two_planted_motifs_average(self):
        # Flat background; two exact copies of the query context planted so
        # each side finds exactly one disjoint match.
        n = 90
        dates = daily(SUMMER_START, n)
        rng = np.random.default_rng(9)
        series = 5.0 + 0.05 * rng.standard_normal(n)
        qb = np.array([9.0, 1.0, 8.0, 2.0, 7.0])
        qa = np.array([2.0, 8.0, 1.0, 9.0, 3.0])
        comp_b = np.array([6.0, 6.5, 5.5, 6.2, 5.8])
        comp_a = np.array([5.6, 6.4, 5.2, 6.6, 5.4])
        t, T = 40, 5
        series[t - T : t] = qb
        series[t + T : t + 2 * T] = qa
        series[10 : 15] = qb  # before-side motif
        series[15 : 20] = comp_b  # its completion
        series[70 : 75] = comp_a  # after-side completion
        series[75 : 80] = qa  # after-side motif
        series[t : t + T] = np.nan
        fill, method = impute_gap(series, dates, GapDescriptor(0, t, T), SeasonCalendar(), 1)
        assert method == "two_sided"
        np.testing.assert_allclose(fill, (comp_b + comp_a) / 2.0, atol=1e-9)

    def test_gap_spanning_almost_whole_row_falls_back(self):
        n = 30
        dates = daily(SUMMER_START, n)
        series = np.full(n, np.nan)
        series[0] = 4.0
        gap = GapDescriptor(0, 1, n - 1)
        fill, method = impute_gap(series, dates, gap, SeasonCalendar(), 1)
        assert method == "season_mean"
        np.testing.assert_allclose(fill, 4.0)

    def test_fill_is_never_negative(self):
        n = 60
        dates = daily(SUMMER_START, n)
        rng = np.random.default_rng(3)
        series = np.maximum(rng.normal(0.05, 0.3, n), 0.0)
        series[25:31] = np.nan
        fill, _ = impute_gap(series, dates, GapDescriptor(0, 25, 6), SeasonCalendar(), 1)
        assert (fill >= 0.0).all()


class TestImputeRow:
    def test_short_gaps_use_linear_interpolation(self):
        n = 40
        dates = daily(SUMMER_START, n)
        series = np.linspace(1.0, 10.0, n)
        series[10] = np.nan
        series[20:22] = np.nan
        filled, counts = impute_row(series, dates, SeasonCalendar(), 1, min_gap=3)
        assert counts == {"linear": 2}
        np.testing.assert_allclose(filled, np.linspace(1.0, 10.0, n), atol=1e-9)

    def test_edge_gap_uses_nearest_neighbor(self):
        n = 30
        dates = daily(SUMMER_START, n)
        series = np.full(n, 7.0)
        series[:2] = np.nan
        filled, counts = impute_row(series, dates, SeasonCalendar(), 1, min_gap=3)
        assert counts == {"linear": 1}
        np.testing.assert_allclose(filled, 7.0)


class TestImputeMatrix:
    def make_seasonal_matrix(self, rng, n_rows=4, n_days=200):
        dates_start = dt.date(2015, 1, 1)
        idx = np.arange(n_days)
        rows = []
        for _ in range(n_rows):
            base = rng.uniform(5, 15)
            row = (
                base
                + 2.0 * np.sin(2 * np.pi * idx / 365.25)
                + 1.5 * np.sin(2 * np.pi * idx / 7.0)
                + rng.normal(0, 0.1, n_days)
            )
            rows.append(np.maximum(row, 0.0))
        values = np.array(rows)
        dates = daily(dates_start, n_days)
        ids = [f"c{i}" for i in range(n_rows)]
        return ConsumptionMatrix(ids, np.zeros(n_rows, dtype=int), dates, values)

    def test_complete_matrix_is_identity(self):
        rng = np.random.default_rng(0)
        m = self.make_seasonal_matrix(rng)
        out, counts = impute_matrix(m)
        assert counts == {}
        np.testing.assert_array_equal(out.values, m.values)

    def test_masked_cells_filled_and_others_untouched(self):
        rng = np.random.default_rng(1)
        m = self.make_seasonal_matrix(rng)
        truth = m.values.copy()
        masked = truth.copy()
        # Plant a few multi-day runs per row.
        for i in range(m.n_consumers):
            for _ in range(4):
                start = int(rng.integers(10, 170))
                length = int(rng.integers(1, 12))
                masked[i, start : start + length] = np.nan
        dm = m.replace_values(masked)
        out, counts = impute_matrix(dm, search_size=1)
        assert not np.isnan(out.values).any()
        assert (out.values >= 0.0).all()
        keep = ~np.isnan(masked)
        np.testing.assert_array_equal(out.values[keep], masked[keep])
        assert sum(counts.values()) == len(detect_gaps(dm))

    def test_single_row_matrix(self):
        rng = np.random.default_rng(2)
        m = self.make_seasonal_matrix(rng, n_rows=1)
        vals = m.values.copy()
        vals[0, 50:57] = np.nan
        out, _ = impute_matrix(m.replace_values(vals))
        assert not np.isnan(out.values).any()

    def test_beats_linear_interpolation_on_seasonal_data(self):
        rng = np.random.default_rng(42)
        m = self.make_seasonal_matrix(rng, n_rows=6, n_days=365)
        truth = m.values.copy()
        masked = truth.copy()
        gaps = []
        for i in range(m.n_consumers):
            for start in (60, 130, 250):
                length = int(rng.integers(5, 15))
                masked[i, start : start + length] = np.nan
                gaps.append((i, start, length))
        out, _ = impute_matrix(m.replace_values(masked), search_size=1)

        def gap_rmse(filled):
            errs = []
            for i, start, length in gaps:
                diff = filled[i, start : start + length] - truth[i, start : start + length]
                errs.append(np.sqrt(np.mean(diff**2)))
            return float(np.mean(errs))

        linear = masked.copy()
        for i, start, length in gaps:
            lo, hi = masked[i, start - 1], masked[i, start + length]
            linear[i, start : start + length] = lo + (hi - lo) * np.arange(1, length + 1) / (
                length + 1
            )
        assert gap_rmse(out.values) < 0.5 * gap_rmse(linear)
