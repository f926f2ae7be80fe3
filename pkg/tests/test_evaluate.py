import itertools
import math

import numpy as np
import pytest

from conftest import square_lonlat
from spillnet import evaluate as ev
from spillnet import features as feat
from spillnet import geo, ingest, model
from spillnet.errors import (
    AlignmentError,
    EmptyInput,
    InsufficientData,
    LengthMismatch,
    TooFewNonzero,
    ZeroMean,
    ZeroVariance,
)

T0 = ingest.parse_timestamp("2010-04-24T00:00:00Z")


class TestSummaryStats:
    def test_headline_range(self):
        series = [612.6, 524.1, 782.3, 601.0, 543.0]
        mean, std, mx, mn, rng, n = ev.summary_stats(series)
        assert mx == 782.3 and mn == 524.1
        assert rng == pytest.approx(258.2)
        assert n == 5

    def test_constant_series(self):
        _, std, _, _, rng, _ = ev.summary_stats([7.0] * 4)
        assert std == 0.0 and rng == 0.0

    def test_two_point_mean(self):
        mean, *_ = ev.summary_stats([524.1, 782.3])
        assert mean == pytest.approx(653.2)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            ev.summary_stats([])


class TestCoefficientOfVariation:
    def test_constant_zero_percent(self):
        assert ev.coefficient_of_variation([100.0, 100.0, 100.0]) == 0.0

    def test_known_ratio(self):
        series = np.array([1.0, 1.0]) * 50.0
        series = [50.0 * (1 + 0.068), 50.0 * (1 - 0.068)]
        assert ev.coefficient_of_variation(series) == pytest.approx(6.8, rel=1e-9)

    def test_zero_mean(self):
        with pytest.raises(ZeroMean):
            ev.coefficient_of_variation([1.0, -1.0])


class TestOverlapRatio:
    def test_identical_polygons(self):
        p = geo.GeoPolygon(exterior=square_lonlat(side_deg=0.1))
        assert ev.overlap_ratio(p, p) == pytest.approx(1.0, abs=0.01)

    def test_disjoint(self):
        a = geo.GeoPolygon(exterior=square_lonlat(center_lon=0.0, side_deg=0.05))
        b = geo.GeoPolygon(exterior=square_lonlat(center_lon=1.0, side_deg=0.05))
        assert ev.overlap_ratio(a, b) == 0.0

    def test_half_shifted_square_one_third(self):
        a = geo.GeoPolygon(exterior=square_lonlat(center_lon=0.0, side_deg=0.1))
        b = geo.GeoPolygon(exterior=square_lonlat(center_lon=0.05, side_deg=0.1))
        assert ev.overlap_ratio(a, b) == pytest.approx(1.0 / 3.0, abs=0.01)

    def test_symmetry(self):
        a = geo.GeoPolygon(exterior=square_lonlat(center_lon=0.02, side_deg=0.1))
        b = geo.GeoPolygon(exterior=square_lonlat(center_lat=0.03, side_deg=0.08))
        assert ev.overlap_ratio(a, b) == pytest.approx(ev.overlap_ratio(b, a), abs=5e-3)

    def test_hole_excluded(self):
        outer = square_lonlat(side_deg=0.1)
        hole = square_lonlat(side_deg=0.05)
        holey = geo.GeoPolygon(exterior=outer, holes=(tuple(hole),))
        full = geo.GeoPolygon(exterior=outer)
        assert ev.overlap_ratio(holey, full) == pytest.approx(0.75, abs=0.01)


class TestTemporalConsistency:
    def test_uniform_drift_zero_variance(self):
        pts = [(0.01 * k, 0.0, T0 + 3600.0 * k) for k in range(6)]
        assert ev.temporal_consistency(pts) == pytest.approx(0.0, abs=1e-9)

    def test_alternating_speeds_unit_variance(self):
        # speeds alternate 1 and 3 km/h -> population variance 1.0
        pts = [(0.0, 0.0, T0)]
        lon = 0.0
        for k in range(4):
            speed = 1.0 if k % 2 == 0 else 3.0
            lon += speed / geo.KM_PER_DEG
            pts.append((lon, 0.0, T0 + 3600.0 * (k + 1)))
        assert ev.temporal_consistency(pts) == pytest.approx(1.0, rel=1e-6)

    def test_two_points_insufficient(self):
        with pytest.raises(InsufficientData):
            ev.temporal_consistency([(0, 0, T0), (0.1, 0, T0 + 3600)])


class TestBootstrapCi:
    def test_constant_samples_degenerate(self):
        lo, hi = ev.bootstrap_ci([5.0] * 10, seed=0)
        assert lo == hi == 5.0

    def test_seed_deterministic(self):
        data = np.random.default_rng(0).normal(size=50)
        assert ev.bootstrap_ci(data, seed=9) == ev.bootstrap_ci(data, seed=9)
        assert ev.bootstrap_ci(data, seed=9) != ev.bootstrap_ci(data, seed=10)

    def test_width_shrinks_with_n(self):
        rng = np.random.default_rng(1)
        small = rng.normal(size=100)
        big = rng.normal(size=1000)
        lo_s, hi_s = ev.bootstrap_ci(small, seed=2, resamples=4000)
        lo_b, hi_b = ev.bootstrap_ci(big, seed=2, resamples=4000)
        assert (hi_b - lo_b) < (hi_s - lo_s)

    def test_insufficient(self):
        with pytest.raises(InsufficientData):
            ev.bootstrap_ci([1.0], seed=0)

    def test_coverage_monte_carlo(self):
        # ~95% of CIs over standard-normal samples should cover 0
        rng = np.random.default_rng(7)
        covered = 0
        trials = 400
        for t in range(trials):
            data = rng.normal(size=100)
            lo, hi = ev.bootstrap_ci(data, seed=t, resamples=600)
            covered += lo <= 0.0 <= hi
        assert 0.91 * trials <= covered <= 0.985 * trials


class TestPairedT:
    def test_equal_inputs_zero_variance(self):
        with pytest.raises(ZeroVariance):
            ev.paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])

    def test_hand_computed_t(self):
        t, df, p = ev.paired_t_test([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])
        assert t == pytest.approx(2.0 / (1.0 / math.sqrt(3.0)), rel=1e-12)
        assert t == pytest.approx(3.4641016, rel=1e-6)
        assert df == 2

    def test_p_against_density_quadrature(self):
        # two-sided tail mass of the t density, integrated numerically
        from scipy.integrate import quad

        t_obs, df = 3.4641016, 2

        def density(x):
            c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
            return c * (1 + x * x / df) ** (-(df + 1) / 2)

        tail, _ = quad(density, t_obs, np.inf)
        _, _, p = ev.paired_t_test([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])
        assert p == pytest.approx(2 * tail, abs=1e-9)
        assert p == pytest.approx(0.0742, abs=5e-4)

    def test_antisymmetry(self):
        a = [1.0, 3.0, 2.5, 4.0]
        b = [0.5, 2.0, 3.0, 1.0]
        ta, _, pa = ev.paired_t_test(a, b)
        tb, _, pb = ev.paired_t_test(b, a)
        assert ta == -tb
        assert pa == pytest.approx(pb, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            ev.paired_t_test([1.0, 2.0], [1.0])

    def test_cdf_reference_points(self):
        from scipy.stats import norm, t as t_dist

        for t_val, df in [(0.5, 3), (1.9, 7), (2.8, 24), (4.0, 2)]:
            ours = ev.student_t_sf_two_sided(t_val, df)
            ref = 2 * t_dist.sf(t_val, df)
            assert ours == pytest.approx(ref, abs=1e-10)
        for z in (-2.5, -1.0, 0.0, 0.7, 3.1):
            assert ev.normal_cdf(z) == pytest.approx(norm.cdf(z), abs=1e-12)


def wilcoxon_enumeration_oracle(d):
    """Independent enumeration: distribution of min(W+, W-) over all sign
    patterns of the observed |d| midranks."""
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    ranks = ev._midranks(np.abs(d))
    total = ranks.sum()
    w_obs = min(ranks[d > 0].sum(), ranks[d < 0].sum())
    count = 0
    for signs in itertools.product([0, 1], repeat=len(d)):
        wp = sum(r for r, s in zip(ranks, signs) if s)
        if min(wp, total - wp) <= w_obs + 1e-12:
            count += 1
    return w_obs, count / 2 ** len(d)


class TestWilcoxon:
    def test_all_positive_n5(self):
        a = [2.0, 3.0, 4.0, 5.0, 6.0]
        b = [1.0, 1.0, 1.0, 1.0, 1.0]
        w, p = ev.wilcoxon_signed_rank(a, b)
        assert w == 0.0
        assert p == pytest.approx(2.0 / 32.0, rel=1e-12)

    def test_equal_inputs(self):
        with pytest.raises(TooFewNonzero):
            ev.wilcoxon_signed_rank([1.0] * 6, [1.0] * 6)

    def test_symmetric_alternating(self):
        a = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
        b = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
        w, p = ev.wilcoxon_signed_rank(a, b)
        ranks = ev._midranks([1.0] * 6)
        assert w == pytest.approx(ranks.sum() / 2.0)
        assert p == pytest.approx(1.0)

    def test_exact_matches_enumeration_random(self):
        rng = np.random.default_rng(3)
        for trial in range(100):
            n = int(rng.integers(5, 11))
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            if np.all(a - b == 0):
                continue
            try:
                w, p = ev.wilcoxon_signed_rank(a, b)
            except TooFewNonzero:
                continue
            w_ref, p_ref = wilcoxon_enumeration_oracle(a - b)
            assert w == pytest.approx(w_ref)
            assert p == pytest.approx(p_ref, rel=1e-12)

    def test_ties_midranks(self):
        a = [2.0, 2.0, 3.0, 3.0, 5.0]
        b = [1.0, 1.0, 1.0, 1.0, 1.0]
        w, p = ev.wilcoxon_signed_rank(a, b)
        w_ref, p_ref = wilcoxon_enumeration_oracle(np.array(a) - np.array(b))
        assert w == pytest.approx(w_ref)
        assert p == pytest.approx(p_ref)

    def test_normal_approximation_large_n(self):
        rng = np.random.default_rng(5)
        a = rng.normal(0.8, 1.0, size=30)
        b = rng.normal(0.0, 1.0, size=30)
        w, p = ev.wilcoxon_signed_rank(a, b)
        from scipy.stats import wilcoxon as scipy_wilcoxon

        ref = scipy_wilcoxon(a, b, correction=False, mode="approx")
        assert w == pytest.approx(ref.statistic)
        assert p == pytest.approx(ref.pvalue, rel=1e-6)


def scenario_truth_and_encoded_predictions(n_obs=8):
    """Truth series plus predictions that encode the truth exactly."""
    series = feat.generate_scenario(3, seed=4, duration_h=48, step_h=1)
    observations = [o for o, _ in series]
    env = [e for _, e in series]
    timed = feat.featurize_series(observations, env)
    normalizer = feat.fit_normalizer([t.values for t in timed])
    horizons = (3, 7, 11, 15)
    origin = observations[0].timestamp
    by_ts = {t.timestamp: t.values for t in timed}
    means = {}
    for h in horizons:
        means[h] = np.concatenate([
            feat.normalize(by_ts[origin + h * 3600.0], normalizer), np.zeros(3)])
    pset = model.PredictionSet(horizons=horizons, means=means,
                               uncertainties={h: np.zeros(28) for h in horizons})
    return observations, normalizer, [(origin, pset)]


class TestEvaluateRun:
    def test_encoded_truth_scores_perfectly(self):
        observations, normalizer, preds = scenario_truth_and_encoded_predictions()
        report = ev.evaluate_run(preds, observations, normalizer,
                                 cells_per_axis=256)
        assert report.area_mae == pytest.approx(0.0, abs=0.5)
        assert report.centroid_disp_km == pytest.approx(0.0, abs=0.05)
        assert report.overlap_ratio > 0.9

    def test_constant_lat_offset_displacement(self):
        observations, normalizer, preds = scenario_truth_and_encoded_predictions()
        origin, pset = preds[0]
        shifted = {}
        for h in pset.horizons:
            vec = feat.denormalize(pset.means[h][:25], normalizer)
            vec[9] += 0.01  # 0.01 deg north
            shifted[h] = np.concatenate([feat.normalize(vec, normalizer), np.zeros(3)])
        pset2 = model.PredictionSet(horizons=pset.horizons, means=shifted,
                                    uncertainties=pset.uncertainties)
        report = ev.evaluate_run([(origin, pset2)], observations, normalizer,
                                 cells_per_axis=128)
        assert report.centroid_disp_km == pytest.approx(1.112, abs=2e-3)

    def test_missing_horizon_alignment_error(self):
        observations, normalizer, preds = scenario_truth_and_encoded_predictions()
        with pytest.raises(AlignmentError):
            ev.evaluate_run(preds, observations[:3], normalizer)

    def test_report_csv_row_count(self):
        observations, normalizer, preds = scenario_truth_and_encoded_predictions()
        text = ev.report_csv(preds, observations, normalizer)
        assert len(text.strip().splitlines()) == 1 + 4  # header + horizons
