"""Evaluation metrics and the statistical comparison machinery: raster IoU,
centroid-track statistics, bootstrap confidence intervals, paired t and
Wilcoxon signed-rank tests.

The t and normal tail probabilities come from an in-package regularized
incomplete beta (Lentz continued fraction) and math.erf, accurate to well
under 1e-10 at reference points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import features as feat
from . import geo
from .errors import (
    AlignmentError,
    EmptyInput,
    InsufficientData,
    InvalidGeometry,
    LengthMismatch,
    TooFewNonzero,
    ZeroMean,
    ZeroVariance,
)

RASTER_CELLS = 512
WILCOXON_EXACT_LIMIT = 12


@dataclass(frozen=True)
class MetricReport:
    area_mae: float
    centroid_disp_km: float
    overlap_ratio: float          # mean IoU; reported as spatial_accuracy
    temporal_consistency: float   # variance of centroid speeds (km/h)^2
    cv_percent: float
    drift_velocity: tuple         # km/h per consecutive prediction step

    def to_dict(self):
        return {
            "area_mae_km2": self.area_mae,
            "centroid_disp_km": self.centroid_disp_km,
            "overlap_ratio": self.overlap_ratio,
            "spatial_accuracy": self.overlap_ratio,
            "temporal_consistency": self.temporal_consistency,
            "cv_percent": self.cv_percent,
            "drift_velocity_kmh": list(self.drift_velocity),
        }


@dataclass(frozen=True)
class StatResult:
    mean: float
    ci_low: float
    ci_high: float
    t_stat: float
    df: int
    p_value: float
    wilcoxon_w: float
    wilcoxon_p: float


def summary_stats(series):
    """(mean, population std, max, min, range, count) of an area series."""
    vals = np.asarray(list(series), dtype=float)
    if vals.size == 0:
        raise EmptyInput("empty series")
    return (
        float(vals.mean()), float(vals.std()), float(vals.max()),
        float(vals.min()), float(vals.max() - vals.min()), int(vals.size),
    )


def coefficient_of_variation(series) -> float:
    vals = np.asarray(list(series), dtype=float)
    if vals.size == 0:
        raise EmptyInput("empty series")
    m = vals.mean()
    if abs(m) < 1e-300:
        raise ZeroMean("mean is zero; CV undefined")
    return 100.0 * float(vals.std()) / float(m)


# -- raster overlap -------------------------------------------------------------


def _rings_mask(rings_xy, xs, ys) -> np.ndarray:
    """Even-odd point-in-polygon over the cell-center grid."""
    gx = xs[np.newaxis, :]
    gy = ys[:, np.newaxis]
    inside = np.zeros((len(ys), len(xs)), dtype=bool)
    for ring in rings_xy:
        pts = np.asarray(ring, dtype=float)
        n = len(pts)
        for i in range(n):
            x1, y1 = pts[i]
            x2, y2 = pts[(i + 1) % n]
            if y1 == y2:
                continue
            crosses = (y1 > gy) != (y2 > gy)
            xint = x1 + (gy - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (gx < xint)
    return inside


def overlap_ratio(pred: geo.GeoPolygon, obs: geo.GeoPolygon,
                  cells_per_axis: int = RASTER_CELLS) -> float:
    """IoU by cell counting on the joint bounding box."""
    lon_min = min(pred.bbox()[0], obs.bbox()[0])
    lat_min = min(pred.bbox()[1], obs.bbox()[1])
    lon_max = max(pred.bbox()[2], obs.bbox()[2])
    lat_max = max(pred.bbox()[3], obs.bbox()[3])
    frame = geo.LocalFrame(0.5 * (lon_min + lon_max), 0.5 * (lat_min + lat_max))
    x0, y0 = frame.to_xy(lon_min, lat_min)
    x1, y1 = frame.to_xy(lon_max, lat_max)
    pad_x = max(1e-9, 0.005 * (x1 - x0))
    pad_y = max(1e-9, 0.005 * (y1 - y0))
    xs = np.linspace(x0 - pad_x, x1 + pad_x, cells_per_axis)
    ys = np.linspace(y0 - pad_y, y1 + pad_y, cells_per_axis)

    def mask(poly):
        rings = [frame.project_ring(poly.exterior)]
        rings += [frame.project_ring(h) for h in poly.holes]
        return _rings_mask(rings, xs, ys)

    a = mask(pred)
    b = mask(obs)
    union = np.count_nonzero(a | b)
    if union == 0:
        raise InvalidGeometry("both polygons rasterized to nothing")
    return np.count_nonzero(a & b) / union


def temporal_consistency(centroids) -> float:
    """Population variance of consecutive centroid speeds (km/h)."""
    pts = list(centroids)
    if len(pts) < 3:
        raise InsufficientData(f"need >= 3 centroid points, got {len(pts)}")
    ts = [p[2] for p in pts]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("centroid timestamps must be strictly increasing")
    speeds = drift_velocity(pts)
    return float(np.var(speeds))


def drift_velocity(centroids):
    """Per-step centroid speed series (km/h) from (lon, lat, t_seconds)."""
    pts = list(centroids)
    speeds = []
    for (lon1, lat1, t1), (lon2, lat2, t2) in zip(pts, pts[1:]):
        dt_h = (t2 - t1) / 3600.0
        speeds.append(geo.haversine_km(lon1, lat1, lon2, lat2) / dt_h)
    return speeds


def track_consistency(tracks) -> float:
    """Centroid-speed variance per track, averaged over tracks.

    Each track should hold predictions for ONE lead time over consecutive
    origins; mixing horizons at adjacent instants would charge the model for
    cross-horizon disagreement rather than temporal stability.
    """
    variances = []
    for track in tracks:
        pts = sorted(track, key=lambda p: p[2])
        pts = [p for i, p in enumerate(pts) if i == 0 or p[2] > pts[i - 1][2]]
        speeds = drift_velocity(pts) if len(pts) >= 3 else []
        if len(speeds) >= 2:
            variances.append(float(np.var(speeds)))
    return float(np.mean(variances)) if variances else 0.0


# -- special functions ----------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf_two_sided(t: float, df: int) -> float:
    """Two-tailed P(|T| >= t) for Student's t."""
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


# -- statistical tests ----------------------------------------------------------


def bootstrap_ci(samples, level: float = 0.95, resamples: int = 10000, seed: int = 0):
    """Percentile bootstrap CI of the mean; deterministic in seed."""
    vals = np.asarray(list(samples), dtype=float)
    if vals.size < 2:
        raise InsufficientData(f"need >= 2 samples, got {vals.size}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, vals.size, size=(resamples, vals.size))
    means = vals[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def paired_t_test(a, b):
    """Two-tailed paired t-test; returns (t, df, p)."""
    x = np.asarray(list(a), dtype=float)
    y = np.asarray(list(b), dtype=float)
    if x.size != y.size:
        raise LengthMismatch(f"lengths {x.size} and {y.size}")
    if x.size < 2:
        raise InsufficientData("need >= 2 pairs")
    d = x - y
    sd = d.std(ddof=1)
    if sd < 1e-300:
        raise ZeroVariance("paired differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(d.size)))
    df = int(d.size - 1)
    return t, df, student_t_sf_two_sided(abs(t), df)


def _midranks(values) -> np.ndarray:
    vals = np.asarray(values, dtype=float)
    order = np.argsort(vals, kind="stable")
    ranks = np.empty(vals.size)
    i = 0
    sorted_vals = vals[order]
    while i < vals.size:
        j = i
        while j + 1 < vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a, b):
    """Signed-rank test with midranks; W = min(W+, W-).

    Exact two-sided p by sign-pattern enumeration for n_eff <= 12, normal
    approximation with tie correction above.
    """
    x = np.asarray(list(a), dtype=float)
    y = np.asarray(list(b), dtype=float)
    if x.size != y.size:
        raise LengthMismatch(f"lengths {x.size} and {y.size}")
    d = x - y
    d = d[d != 0.0]
    n = d.size
    if n < 5:
        raise TooFewNonzero(f"{n} nonzero differences, need >= 5")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = float(ranks.sum())
    w = min(w_plus, total - w_plus)

    if n <= WILCOXON_EXACT_LIMIT:
        # distribution of W+ over all 2^n equally likely sign patterns
        count = 0
        for pattern in range(1 << n):
            wp = 0.0
            for i in range(n):
                if pattern >> i & 1:
                    wp += ranks[i]
            if min(wp, total - wp) <= w + 1e-12:
                count += 1
        p = count / (1 << n)
    else:
        mean_w = n * (n + 1) / 4.0
        # tie correction subtracts sum(t^3 - t)/48 from the null variance
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        tie_term = float(((tie_counts ** 3) - tie_counts).sum())
        var_w = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0
        z = (w - mean_w) / math.sqrt(var_w)
        p = min(1.0, 2.0 * normal_cdf(z))
    return w, p


def compare_paired(a, b, seed: int = 0, resamples: int = 10000) -> StatResult:
    """Bundle of CI + both paired tests over per-timestep differences."""
    x = np.asarray(list(a), dtype=float)
    y = np.asarray(list(b), dtype=float)
    t, df, p = paired_t_test(x, y)
    lo, hi = bootstrap_ci(x - y, seed=seed, resamples=resamples)
    try:
        w, wp = wilcoxon_signed_rank(x, y)
    except TooFewNonzero:
        w, wp = float("nan"), float("nan")
    return StatResult(mean=float((x - y).mean()), ci_low=lo, ci_high=hi,
                      t_stat=t, df=df, p_value=p, wilcoxon_w=w, wilcoxon_p=wp)


# -- prediction-vs-truth evaluation ----------------------------------------------


def ellipse_from_features(vec: np.ndarray) -> geo.GeoPolygon:
    """Boundary reconstruction: an ellipse matching the predicted area,
    aspect ratio, orientation, and centroid. Predictions are feature vectors,
    not polygons, so comparisons need a synthesized outline.
    """
    area = max(float(vec[feat.IDX["area_km2"]]), 1e-3)
    aspect = max(float(vec[feat.IDX["aspect_ratio"]]), 1.0)
    sin2t = float(vec[feat.IDX["orientation_sin2t"]])
    cos2t = float(vec[feat.IDX["orientation_cos2t"]])
    theta = 0.5 * math.atan2(sin2t, cos2t) % math.pi
    lon = float(vec[feat.IDX["centroid_lon"]])
    lat = float(vec[feat.IDX["centroid_lat"]])
    # vertex-covariance aspect is (a/b)^2 for an angle-sampled ellipse
    ring = feat._ellipse_ring(lon, lat, area, math.sqrt(aspect), theta)
    return geo.GeoPolygon(exterior=ring)


def evaluate_run(predictions, truth, normalizer, horizon_unit_h: float = 1.0,
                 cells_per_axis: int = RASTER_CELLS) -> MetricReport:
    """Score a prediction series against observed boundaries.

    predictions: [(origin_ts, PredictionSet), ...]; truth: SpillObservations.
    Every (origin + horizon) instant must match a truth timestamp.
    """
    truth_by_ts = {round(o.timestamp, 3): o for o in truth}
    aligned = []
    for origin_ts, pset in predictions:
        for h in pset.horizons:
            target_ts = round(origin_ts + h * horizon_unit_h * 3600.0, 3)
            obs = truth_by_ts.get(target_ts)
            if obs is None:
                raise AlignmentError(
                    f"no truth observation at {target_ts} (origin {origin_ts}, horizon {h})"
                )
            vec = feat.denormalize(pset.means[h][:feat.FEATURE_DIM], normalizer)
            aligned.append((target_ts, h, vec, obs))
    if not aligned:
        raise AlignmentError("no aligned prediction/truth pairs")
    aligned.sort(key=lambda r: r[0])

    area_errs, disp, ious = [], [], []
    tracks = {}
    for target_ts, h, vec, obs in aligned:
        desc = geo.descriptors(obs.boundary)
        area_errs.append(abs(vec[feat.IDX["area_km2"]] - desc.area_km2))
        plon, plat = vec[feat.IDX["centroid_lon"]], vec[feat.IDX["centroid_lat"]]
        disp.append(geo.haversine_km(plon, plat, desc.centroid[0], desc.centroid[1]))
        ious.append(overlap_ratio(ellipse_from_features(vec), obs.boundary,
                                  cells_per_axis=cells_per_axis))
        tracks.setdefault(h, []).append((plon, plat, target_ts))

    consistency = track_consistency(tracks.values())
    # speed series along the shortest-horizon track (the densest one)
    densest = tracks[min(tracks)]
    speeds = drift_velocity(densest) if len(densest) >= 2 else []
    areas = [v[feat.IDX["area_km2"]] for _, _, v, _ in aligned]
    mean_area = float(np.mean(areas))
    cv = 100.0 * float(np.std(areas)) / mean_area if mean_area != 0 else float("nan")
    return MetricReport(
        area_mae=float(np.mean(area_errs)),
        centroid_disp_km=float(np.mean(disp)),
        overlap_ratio=float(np.mean(ious)),
        temporal_consistency=consistency,
        cv_percent=cv,
        drift_velocity=tuple(speeds),
    )


def report_csv(predictions, truth, normalizer, horizon_unit_h: float = 1.0) -> str:
    """One row per aligned timestep: predicted vs observed area/centroid."""
    truth_by_ts = {round(o.timestamp, 3): o for o in truth}
    lines = ["target_ts,horizon,pred_area_km2,true_area_km2,pred_lon,pred_lat,"
             "true_lon,true_lat,centroid_err_km"]
    for origin_ts, pset in predictions:
        for h in pset.horizons:
            target_ts = round(origin_ts + h * horizon_unit_h * 3600.0, 3)
            obs = truth_by_ts.get(target_ts)
            if obs is None:
                raise AlignmentError(f"no truth at {target_ts}")
            vec = feat.denormalize(pset.means[h][:feat.FEATURE_DIM], normalizer)
            desc = geo.descriptors(obs.boundary)
            err = geo.haversine_km(vec[8], vec[9], desc.centroid[0], desc.centroid[1])
            lines.append(
                f"{target_ts},{h},{vec[0]:.6g},{desc.area_km2:.6g},"
                f"{vec[8]:.8g},{vec[9]:.8g},{desc.centroid[0]:.8g},"
                f"{desc.centroid[1]:.8g},{err:.6g}"
            )
    return "\n".join(lines) + "\n"


def boundaries_geojson(predictions, truth, normalizer,
                       horizon_unit_h: float = 1.0) -> str:
    """Truth plus reconstructed predicted boundaries for offline plotting."""
    feats = []
    for o in truth:
        feats.append({
            "type": "Feature",
            "properties": {"kind": "truth", "timestamp": o.timestamp},
            "geometry": {
                "type": "Polygon",
                "coordinates": [[list(p) for p in o.boundary.exterior]
                                + [list(o.boundary.exterior[0])]],
            },
        })
    for origin_ts, pset in predictions:
        for h in pset.horizons:
            vec = feat.denormalize(pset.means[h][:feat.FEATURE_DIM], normalizer)
            ring = ellipse_from_features(vec).exterior
            feats.append({
                "type": "Feature",
                "properties": {"kind": "prediction", "origin": origin_ts, "horizon": h},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[list(p) for p in ring] + [list(ring[0])]],
                },
            })
    return json.dumps({"type": "FeatureCollection", "features": feats})
