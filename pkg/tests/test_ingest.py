import numpy as np
import pytest

from rlvs.ingest import (
    TickDataError,
    TickSeries,
    load_ticks,
    normalize_price,
    normalize_time,
    resample,
    save_ticks,
    synth_gbm_ticks,
)


def write(tmp_path, text, name="ticks.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadTicks:
    def test_two_row_file(self, tmp_path):
        p = write(tmp_path, "time_s,price\n0.0,100.0\n1.0,101.0\n")
        s = load_ticks(p)
        assert len(s) == 2
        assert s.prices[1] == 101.0

    def test_negative_price_reports_line(self, tmp_path):
        p = write(tmp_path, "time_s,price\n0.0,100.0\n1.0,-5\n")
        with pytest.raises(TickDataError, match="line 3.*non-positive"):
            load_ticks(p)

    def test_unsorted_rows_sorted_ascending(self, tmp_path):
        p = write(tmp_path, "time_s,price\n1.0,101.0\n0.5,100.0\n")
        s = load_ticks(p)
        assert list(s.times) == [0.5, 1.0]
        assert list(s.prices) == [100.0, 101.0]

    def test_duplicate_timestamps_keep_input_order(self, tmp_path):
        p = write(tmp_path, "time_s,price\n5.0,101.0\n1.0,99.0\n5.0,102.0\n")
        s = load_ticks(p)
        assert list(s.prices) == [99.0, 101.0, 102.0]

    def test_empty_file_distinct_error(self, tmp_path):
        p = write(tmp_path, "time_s,price\n")
        with pytest.raises(TickDataError, match="no tick rows"):
            load_ticks(p)

    def test_parse_failure_reports_line(self, tmp_path):
        p = write(tmp_path, "time_s,price\n0.0,100.0\nbogus,1.0\n")
        with pytest.raises(TickDataError, match="line 3"):
            load_ticks(p)

    def test_bad_header(self, tmp_path):
        p = write(tmp_path, "t,p\n0.0,100.0\n")
        with pytest.raises(TickDataError, match="header"):
            load_ticks(p)

    def test_round_trip(self, tmp_path):
        s = synth_gbm_ticks(100.0, 0.05, 0.3, 50, seed=3)
        p = tmp_path / "out.csv"
        save_ticks(s, p)
        back = load_ticks(p)
        np.testing.assert_array_equal(back.times, s.times)
        np.testing.assert_array_equal(back.prices, s.prices)


class TestSynthGbm:
    def test_zero_vol_is_deterministic_exponential(self):
        s = synth_gbm_ticks(100.0, 0.1, 0.0, 11, trading_days=252, seed=0)
        t_years = s.times / s.session_length / 252
        np.testing.assert_allclose(s.prices, 100.0 * np.exp(0.1 * t_years), rtol=1e-12)

    def test_same_seed_identical(self):
        a = synth_gbm_ticks(50.0, 0.0, 0.8, 500, seed=9)
        b = synth_gbm_ticks(50.0, 0.0, 0.8, 500, seed=9)
        np.testing.assert_array_equal(a.prices, b.prices)
        np.testing.assert_array_equal(a.times, b.times)

    def test_annualized_sample_vol_recovers_sigma(self):
        # Oracle: sample std of generated log returns, annualized by
        # sqrt(steps per year) = sqrt((n-1) * trading_days).
        s = synth_gbm_ticks(100.0, 0.0, 0.5, 23_401, trading_days=252, seed=21)
        r = np.diff(np.log(s.prices))
        ann = np.std(r, ddof=1) * np.sqrt(23_400 * 252)
        assert abs(ann - 0.5) / 0.5 < 0.03

    def test_too_few_ticks(self):
        with pytest.raises(TickDataError):
            synth_gbm_ticks(100.0, 0.0, 0.5, 1, seed=0)


class TestNormalizeTime:
    def test_midpoint(self):
        s = TickSeries(np.array([11_700.0]), np.array([100.0]))
        assert normalize_time(s).times[0] == pytest.approx(0.5)

    def test_endpoints(self):
        s = TickSeries(np.array([0.0, 23_400.0]), np.array([100.0, 101.0]))
        out = normalize_time(s)
        assert out.times[0] == 0.0
        assert out.times[1] == 1.0

    def test_hand_value_1100_est(self):
        s = TickSeries(np.array([5_400.0]), np.array([100.0]))
        assert normalize_time(s).times[0] == pytest.approx(0.2308, abs=1e-4)

    def test_round_trip_recovers_times(self):
        s = synth_gbm_ticks(100.0, 0.0, 0.4, 200, seed=5)
        out = normalize_time(s)
        np.testing.assert_allclose(out.times * s.session_length, s.times, rtol=1e-12)


class TestNormalizePrice:
    def test_midpoint(self):
        assert normalize_price(425.0, 400.0, 450.0) == pytest.approx(0.5)

    def test_band_endpoints(self):
        assert normalize_price(400.0, 400.0, 450.0) == 0.0
        assert normalize_price(450.0, 400.0, 450.0) == 1.0

    def test_out_of_range_passes_through(self):
        assert normalize_price(455.0, 400.0, 450.0) == pytest.approx(1.1)

    def test_degenerate_band(self):
        with pytest.raises(TickDataError):
            normalize_price(1.0, 5.0, 5.0)

    def test_affine_in_convex_combinations(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            p, q = rng.uniform(300, 500, size=2)
            a = rng.uniform()
            lhs = normalize_price(a * p + (1 - a) * q, 400.0, 450.0)
            rhs = a * normalize_price(p, 400.0, 450.0) + (1 - a) * normalize_price(q, 400.0, 450.0)
            assert abs(lhs - rhs) < 1e-12


class TestResample:
    def test_locf_boundaries(self):
        s = TickSeries(np.array([0.0, 10.0, 299.0, 301.0]),
                       np.array([1.0, 2.0, 3.0, 4.0]))
        out = resample(s, 300.0)
        assert list(out.times) == [0.0, 300.0]
        assert list(out.prices) == [1.0, 3.0]

    def test_interval_larger_than_session(self):
        s = TickSeries(np.array([0.0, 100.0, 200.0]), np.array([1.0, 2.0, 3.0]))
        out = resample(s, 1e6)
        assert list(out.times) == [0.0]
        assert list(out.prices) == [1.0]

    def test_full_session_count(self):
        s = synth_gbm_ticks(100.0, 0.0, 0.5, 23_401, seed=2)
        out = resample(s, 300.0)
        assert len(out) == 79
        assert out.times[0] == 0.0
        assert out.times[-1] == 23_400.0

    def test_prices_are_subset_and_times_are_boundaries(self):
        s = synth_gbm_ticks(100.0, 0.0, 0.5, 997, seed=4)
        out = resample(s, 450.0)
        assert np.all(np.diff(out.times) == 450.0)
        assert set(out.prices).issubset(set(s.prices))

    def test_boundary_before_first_tick_omitted(self):
        s = TickSeries(np.array([100.0, 700.0]), np.array([1.0, 2.0]))
        out = resample(s, 300.0)
        assert list(out.times) == [300.0, 600.0]
        assert list(out.prices) == [1.0, 1.0]


def test_series_rejects_unsorted_and_nonpositive():
    with pytest.raises(TickDataError):
        TickSeries(np.array([1.0, 0.5]), np.array([1.0, 1.0]))
    with pytest.raises(TickDataError):
        TickSeries(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
