"""Feature pipeline: observation series -> normalized 25-dim sequences, plus
the synthetic scenario generator families used for desk-scale experiments.

The 25-component index map is the frozen tensor contract for every model in
the package; see FEATURE_NAMES.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from . import geo
from .errors import EmptyInput, InsufficientData, UnknownScenario
from .ingest import SpillObservation, format_timestamp, parse_timestamp

# frozen index map: [0..6] shape, [7] vertex count, [8..11] extent,
# [12..16] time, [17..22] wind/current, [23] sst, [24] wave height
FEATURE_NAMES = (
    "area_km2", "perimeter_km", "compactness", "convexity", "aspect_ratio",
    "orientation_sin2t", "orientation_cos2t", "vertex_count", "centroid_lon",
    "centroid_lat", "bbox_width_km", "bbox_height_km", "hours_since_start",
    "hour_sin", "hour_cos", "day_sin", "day_cos", "wind_u_mps", "wind_v_mps",
    "wind_speed_mps", "current_u_mps", "current_v_mps", "current_speed_mps",
    "sst_celsius", "wave_height_m",
)
IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}
FEATURE_DIM = 25

NORM_CLIP = 3.0
WINDOW_STEPS = 16
HORIZON_STEPS = (3, 7, 11, 15)
SHORT_SPAN_H = 48.0
MEDIUM_SPAN_DAYS = 7
DAYS_PER_YEAR = 365.25
WIND_DRIFT_FACTOR = 0.03  # fraction of wind speed advecting the slick
MPS_TO_KMH = 3.6

SCALE_SHORT = "short"
SCALE_MEDIUM = "medium"


@dataclass(frozen=True)
class EnvSample:
    """Environmental forcing at one instant."""

    wind_u: float
    wind_v: float
    current_u: float
    current_v: float
    sst: float
    wave_height: float
    valid_time: float  # UTC seconds

    def __post_init__(self):
        if self.wave_height < 0:
            raise ValueError(f"negative wave height {self.wave_height}")


@dataclass(frozen=True)
class TimedFeatures:
    timestamp: float
    values: np.ndarray  # (25,)


@dataclass(frozen=True)
class Normalizer:
    mu: np.ndarray
    sigma: np.ndarray

    def to_dict(self):
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(mu=np.asarray(doc["mu"], dtype=float),
                   sigma=np.asarray(doc["sigma"], dtype=float))


@dataclass(frozen=True)
class FeatureSequence:
    """One training window plus its per-horizon targets.

    window: (16 x 25); horizon_targets: horizon-step -> (28,) with dims 0..24
    the feature map and 25..27 auxiliary rates (area km^2/h, centroid velocity
    east/north km/h). end_time marks the window's last grid instant.
    """

    window: np.ndarray
    horizon_targets: dict
    scale_class: str
    end_time: float


def _cyclic(angle: float):
    return math.sin(angle), math.cos(angle)


def extract_features(obs: SpillObservation, env: EnvSample, t0: float) -> np.ndarray:
    """Fixed-order 25-vector for one observation under given forcing."""
    if obs.timestamp < t0:
        raise ValueError(f"observation at {obs.timestamp} precedes start {t0}")
    desc = geo.descriptors(obs.boundary)
    lon_min, lat_min, lon_max, lat_max = obs.boundary.bbox()
    frame = geo.LocalFrame.for_polygon(obs.boundary)
    x_min, y_min = frame.to_xy(lon_min, lat_min)
    x_max, y_max = frame.to_xy(lon_max, lat_max)

    dt = datetime.fromtimestamp(obs.timestamp, tz=timezone.utc)
    hour_of_day = dt.hour + dt.minute / 60.0 + dt.second / 3600.0
    day_of_year = dt.timetuple().tm_yday + hour_of_day / 24.0
    hour_sin, hour_cos = _cyclic(2.0 * math.pi * hour_of_day / 24.0)
    day_sin, day_cos = _cyclic(2.0 * math.pi * day_of_year / DAYS_PER_YEAR)

    v = np.empty(FEATURE_DIM)
    v[0] = desc.area_km2
    v[1] = desc.perimeter_km
    v[2] = desc.compactness
    v[3] = desc.convexity
    v[4] = desc.aspect_ratio
    v[5] = desc.orientation_sin2t
    v[6] = desc.orientation_cos2t
    v[7] = len(obs.boundary.exterior)
    v[8], v[9] = desc.centroid
    v[10] = x_max - x_min
    v[11] = y_max - y_min
    v[12] = (obs.timestamp - t0) / 3600.0
    v[13], v[14] = hour_sin, hour_cos
    v[15], v[16] = day_sin, day_cos
    v[17], v[18] = env.wind_u, env.wind_v
    v[19] = math.hypot(env.wind_u, env.wind_v)
    v[20], v[21] = env.current_u, env.current_v
    v[22] = math.hypot(env.current_u, env.current_v)
    v[23] = env.sst
    v[24] = env.wave_height
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite feature component")
    return v


def fit_normalizer(train) -> Normalizer:
    """Per-component mean and population std; unit sigma where variance
    collapses below 1e-12."""
    vectors = [np.asarray(t.values if isinstance(t, TimedFeatures) else t, dtype=float)
               for t in train]
    if not vectors:
        raise EmptyInput("cannot fit a normalizer on an empty set")
    mat = np.stack(vectors)
    mu = mat.mean(axis=0)
    var = mat.var(axis=0)
    sigma = np.where(var < 1e-12, 1.0, np.sqrt(var))
    return Normalizer(mu=mu, sigma=sigma)


def normalize(x: np.ndarray, n: Normalizer) -> np.ndarray:
    """Z-score then clip to +-3 sigma (clip after the division)."""
    return np.clip((np.asarray(x, dtype=float) - n.mu) / n.sigma, -NORM_CLIP, NORM_CLIP)


def denormalize(z: np.ndarray, n: Normalizer) -> np.ndarray:
    return n.mu + n.sigma * np.asarray(z, dtype=float)


def _interpolator(series):
    """Piecewise-linear sampler over the raw series with linear-trend
    extrapolation beyond either end (mirrors the padding policy)."""
    times = np.array([s.timestamp for s in series])
    mat = np.stack([s.values for s in series])

    def sample(ts: float) -> np.ndarray:
        if len(times) == 1:
            return mat[0].copy()
        if ts <= times[0]:
            slope = (mat[1] - mat[0]) / (times[1] - times[0])
            return mat[0] + slope * (ts - times[0])
        if ts >= times[-1]:
            slope = (mat[-1] - mat[-2]) / (times[-1] - times[-2])
            return mat[-1] + slope * (ts - times[-1])
        out = np.empty(mat.shape[1])
        for c in range(mat.shape[1]):
            out[c] = np.interp(ts, times, mat[:, c])
        return out

    return sample


def _rederive_row(row: np.ndarray, ts: float, t0: float) -> np.ndarray:
    """Restore the exact trigonometric/hypot identities interpolation breaks."""
    row = row.copy()
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    hour = dt.hour + dt.minute / 60.0 + dt.second / 3600.0
    doy = dt.timetuple().tm_yday + hour / 24.0
    row[12] = (ts - t0) / 3600.0
    row[13], row[14] = _cyclic(2.0 * math.pi * hour / 24.0)
    row[15], row[16] = _cyclic(2.0 * math.pi * doy / DAYS_PER_YEAR)
    row[19] = math.hypot(row[17], row[18])
    row[22] = math.hypot(row[20], row[21])
    return row


def _aux_rates(sample, ts: float, delta_h: float) -> np.ndarray:
    """Central-difference area rate (km^2/h) and centroid velocity (km/h)."""
    d = delta_h * 3600.0
    lo, hi = sample(ts - d), sample(ts + d)
    area_rate = (hi[0] - lo[0]) / (2.0 * delta_h)
    lat_mid = 0.5 * (lo[9] + hi[9])
    east_km = (hi[8] - lo[8]) * math.cos(lat_mid * geo.DEG) * geo.KM_PER_DEG
    north_km = (hi[9] - lo[9]) * geo.KM_PER_DEG
    return np.array([area_rate, east_km / (2.0 * delta_h), north_km / (2.0 * delta_h)])


def build_sequences(series, scale: str):
    """Window a timed feature series at the requested scale.

    Short: hourly grid over the first 48 h; Medium: daily grid over days 1-7.
    Overlapping stride-1 windows of 16 steps; a series yielding fewer grid
    points produces one window front-padded by linear-trend extrapolation.
    Targets land at +3/+7/+11/+15 grid units past each window's end.
    """
    series = list(series)
    times = [s.timestamp for s in series]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("series timestamps must be strictly increasing")
    if len(series) < 2:
        raise InsufficientData(f"need >= 2 observations, got {len(series)}")
    t_start = times[0]
    span_h = (times[-1] - t_start) / 3600.0

    if scale == SCALE_SHORT:
        step_h = 1.0
        grid_hours = np.arange(0.0, min(SHORT_SPAN_H, span_h) + 1e-9, step_h)
    elif scale == SCALE_MEDIUM:
        step_h = 24.0
        last_day = min(MEDIUM_SPAN_DAYS, int(span_h // 24.0))
        grid_hours = np.array([24.0 * d for d in range(1, last_day + 1)])
    else:
        raise ValueError(f"unknown scale {scale!r}")
    if len(grid_hours) < 2:
        raise InsufficientData(f"{len(grid_hours)} grid points at scale {scale}")

    sample = _interpolator(series)
    grid_times = t_start + grid_hours * 3600.0
    grid_rows = [_rederive_row(sample(ts), ts, t_start) for ts in grid_times]

    def padded_window(end_idx: int):
        rows = []
        for k in range(WINDOW_STEPS):
            offset = end_idx - (WINDOW_STEPS - 1) + k
            if offset >= 0:
                rows.append(grid_rows[offset])
            else:
                ts = grid_times[0] + offset * step_h * 3600.0
                rows.append(_rederive_row(sample(ts), ts, t_start))
        return np.stack(rows)

    n = len(grid_rows)
    end_indices = range(WINDOW_STEPS - 1, n) if n >= WINDOW_STEPS else [n - 1]
    sequences = []
    for end_idx in end_indices:
        end_time = grid_times[end_idx]
        targets = {}
        for h in HORIZON_STEPS:
            ts = end_time + h * step_h * 3600.0
            feat = _rederive_row(sample(ts), ts, t_start)
            targets[h] = np.concatenate([feat, _aux_rates(sample, ts, step_h)])
        sequences.append(FeatureSequence(
            window=padded_window(end_idx),
            horizon_targets=targets,
            scale_class=scale,
            end_time=end_time,
        ))
    return sequences


def normalize_sequences(sequences, norm: Normalizer):
    """Normalize windows and the feature part (dims 0..24) of every target;
    auxiliary rate dims stay physical."""
    out = []
    for s in sequences:
        window = np.stack([normalize(row, norm) for row in s.window])
        targets = {}
        for h, t in s.horizon_targets.items():
            targets[h] = np.concatenate([normalize(t[:FEATURE_DIM], norm), t[FEATURE_DIM:]])
        out.append(replace(s, window=window, horizon_targets=targets))
    return out


# -- synthetic scenarios --------------------------------------------------------

SCENARIO_NAMES = {
    1: "initial_release",
    2: "steady_growth",
    3: "environmental_forcing",
    4: "complex_geometry",
    5: "dispersal",
}
DEFAULT_START_UTC = "2010-04-24T00:00:00Z"
DEFAULT_CENTER = (-88.37, 28.74)  # northern Gulf of Mexico
POLY_VERTICES = 64
_NGON_FACTOR = 0.5 * POLY_VERTICES * math.sin(2.0 * math.pi / POLY_VERTICES)


def _ellipse_ring(center_lon, center_lat, area_km2, aspect, theta):
    """64-vertex ellipse whose polygon area equals area_km2 exactly."""
    ab = area_km2 / _NGON_FACTOR
    a = math.sqrt(ab * aspect)
    b = ab / a
    frame = geo.LocalFrame(center_lon, center_lat)
    ring = []
    ct, st = math.cos(theta), math.sin(theta)
    for i in range(POLY_VERTICES):
        phi = 2.0 * math.pi * i / POLY_VERTICES
        ex, ey = a * math.cos(phi), b * math.sin(phi)
        ring.append(frame.to_lonlat(ex * ct - ey * st, ex * st + ey * ct))
    return ring


def _two_lobe_ring(center_lon, center_lat, r1, c1, r2, c2):
    """Star-shaped union outline of two circular lobes offset by c1/c2 (km)."""
    frame = geo.LocalFrame(center_lon, center_lat)
    ring = []
    for i in range(POLY_VERTICES):
        phi = 2.0 * math.pi * i / POLY_VERTICES
        ux, uy = math.cos(phi), math.sin(phi)
        best = 0.1
        for (cx, cy), r in ((c1, r1), (c2, r2)):
            # support of a disc centered at (cx, cy) along direction (ux, uy)
            proj = cx * ux + cy * uy
            d2 = cx * cx + cy * cy - proj * proj
            if d2 < r * r:
                reach = proj + math.sqrt(r * r - d2)
                best = max(best, reach)
        ring.append(frame.to_lonlat(best * ux, best * uy))
    return ring


def generate_scenario(kind: int, seed: int, duration_h: int, step_h: int = 1,
                      start_utc: str = DEFAULT_START_UTC,
                      base_area_km2: float = None,
                      half_life_h: float = 240.0,
                      drift_kmh: tuple = None,
                      spill_id: str = None):
    """Deterministic synthetic (observation, forcing) series.

    1 initial release (rapid linear growth), 2 steady growth with fixed
    drift, 3 time-varying wind/current advection with elongation, 4 drifting
    two-lobe geometry, 5 exponential dispersal decay.
    """
    if kind not in SCENARIO_NAMES:
        raise UnknownScenario(f"scenario kind {kind} not in 1..5")
    if duration_h < 48:
        raise ValueError(f"duration_h must be >= 48, got {duration_h}")
    rng = np.random.default_rng(seed)
    t0 = parse_timestamp(start_utc)
    lon0, lat0 = DEFAULT_CENTER
    spill_id = spill_id or f"scenario-{kind}-{seed}"
    steps = int(duration_h // step_h) + 1

    sst0 = 24.0 + rng.uniform(-2.0, 2.0)
    out = []
    if kind == 3:
        # rotating wind of steady magnitude with a weak background current:
        # the advection direction swings continuously while its speed stays
        # nearly constant, so forcing dominates the centroid track
        wind_amp = rng.uniform(8.0, 12.0)
        wind_phase = rng.uniform(0.0, 2.0 * math.pi)
        omega = 2.0 * math.pi / 48.0  # one rotation per two days
        cur_u = rng.uniform(-0.05, 0.05)
        cur_v = rng.uniform(-0.05, 0.05)

    for k in range(steps):
        t_h = k * step_h
        ts = t0 + t_h * 3600.0

        if kind == 1:
            a0 = base_area_km2 or 50.0
            area = a0 * (1.0 + 0.08 * t_h)
            aspect = 1.1
            theta = 0.3
            center = (lon0, lat0)
            env = EnvSample(2.0, 1.0, 0.05, 0.02, sst0, 0.8, ts)
        elif kind == 2:
            a0 = base_area_km2 or 300.0
            area = a0 + 4.0 * t_h
            aspect = 1.4
            theta = 0.6
            drift_u, drift_v = drift_kmh if drift_kmh is not None else (0.25, 0.12)
            cx, cy = drift_u * t_h, drift_v * t_h
            frame0 = geo.LocalFrame(lon0, lat0)
            center = frame0.to_lonlat(cx, cy)
            env = EnvSample(0.0, 0.0, drift_u / MPS_TO_KMH, drift_v / MPS_TO_KMH,
                            sst0, 0.6, ts)
        elif kind == 3:
            a0 = base_area_km2 or 400.0
            area = a0 * (1.0 + 0.01 * t_h)
            aspect = 1.0 + 1.5 * t_h / duration_h
            wu = wind_amp * math.cos(omega * t_h + wind_phase)
            wv = wind_amp * math.sin(omega * t_h + wind_phase)
            theta = math.atan2(wv, wu) % math.pi
            # closed-form integral of v(t) = 3.6*(drift*wind(t) + current)
            kx = MPS_TO_KMH * WIND_DRIFT_FACTOR * wind_amp / omega
            disp_x = kx * (math.sin(omega * t_h + wind_phase) - math.sin(wind_phase)) \
                + MPS_TO_KMH * cur_u * t_h
            disp_y = -kx * (math.cos(omega * t_h + wind_phase) - math.cos(wind_phase)) \
                + MPS_TO_KMH * cur_v * t_h
            frame0 = geo.LocalFrame(lon0, lat0)
            center = frame0.to_lonlat(disp_x, disp_y)
            env = EnvSample(wu, wv, cur_u, cur_v, sst0 - 0.5 * t_h / 24.0,
                            0.3 + 0.08 * wind_amp, ts)
        elif kind == 4:
            a0 = base_area_km2 or 350.0
            r_base = math.sqrt(a0 / (2.0 * math.pi))
            gap = r_base * (0.4 + 0.01 * t_h)
            r1 = r_base * (1.0 + 0.004 * t_h)
            r2 = 0.8 * r_base * (1.0 + 0.006 * t_h)
            ring = _two_lobe_ring(lon0, lat0, r1, (-gap, 0.0), r2,
                                  (gap, 0.25 * gap))
            env = EnvSample(3.0, -1.5, 0.1, 0.05, sst0, 1.0, ts)
            boundary = geo.GeoPolygon(exterior=ring)
            out.append((SpillObservation(ts, boundary, SCENARIO_NAMES[kind], spill_id), env))
            continue
        else:  # kind == 5
            a0 = base_area_km2 or 780.0
            decay = math.log(2.0) / half_life_h
            area = a0 * math.exp(-decay * t_h)
            aspect = 1.25
            theta = 1.1
            frame0 = geo.LocalFrame(lon0, lat0)
            center = frame0.to_lonlat(0.1 * t_h, -0.05 * t_h)
            env = EnvSample(1.5, -0.5, 0.1 / MPS_TO_KMH, -0.05 / MPS_TO_KMH,
                            sst0, 0.5, ts)

        ring = _ellipse_ring(center[0], center[1], area, aspect, theta)
        boundary = geo.GeoPolygon(exterior=ring)
        out.append((SpillObservation(ts, boundary, SCENARIO_NAMES[kind], spill_id), env))
    return out


def scenario_config_from_json(text: str) -> dict:
    doc = json.loads(text)
    return {
        "kind": int(doc["kind"]),
        "seed": int(doc["seed"]),
        "duration_h": int(doc.get("duration_h", 72)),
        "step_h": int(doc.get("step_h", 1)),
        "start_utc": doc.get("start_utc", DEFAULT_START_UTC),
        "base_area_km2": doc.get("base_area_km2"),
        "half_life_h": doc.get("half_life_h", 240.0),
        "spill_id": doc.get("spill_id"),
    }


def env_samples_to_json(samples) -> str:
    return json.dumps([
        {
            "valid_time": format_timestamp(s.valid_time),
            "wind_u": s.wind_u, "wind_v": s.wind_v,
            "current_u": s.current_u, "current_v": s.current_v,
            "sst": s.sst, "wave_height": s.wave_height,
        }
        for s in samples
    ], indent=2)


def env_samples_from_json(text: str):
    doc = json.loads(text)
    samples = [
        EnvSample(
            wind_u=float(e["wind_u"]), wind_v=float(e["wind_v"]),
            current_u=float(e["current_u"]), current_v=float(e["current_v"]),
            sst=float(e["sst"]), wave_height=float(e["wave_height"]),
            valid_time=parse_timestamp(e["valid_time"]),
        )
        for e in doc
    ]
    samples.sort(key=lambda s: s.valid_time)
    return samples


def env_at(samples, ts: float) -> EnvSample:
    """Linear interpolation of the forcing fields to one instant."""
    if not samples:
        raise EmptyInput("no environmental samples")
    times = [s.valid_time for s in samples]
    if ts <= times[0]:
        return replace(samples[0], valid_time=ts)
    if ts >= times[-1]:
        return replace(samples[-1], valid_time=ts)
    j = int(np.searchsorted(times, ts))
    a, b = samples[j - 1], samples[j]
    w = (ts - a.valid_time) / (b.valid_time - a.valid_time)

    def lerp(x, y):
        return x + w * (y - x)

    return EnvSample(
        wind_u=lerp(a.wind_u, b.wind_u), wind_v=lerp(a.wind_v, b.wind_v),
        current_u=lerp(a.current_u, b.current_u), current_v=lerp(a.current_v, b.current_v),
        sst=lerp(a.sst, b.sst), wave_height=lerp(a.wave_height, b.wave_height),
        valid_time=ts,
    )


def featurize_series(observations, env_samples, t0: float = None):
    """Pair each observation with interpolated forcing and extract features."""
    obs = sorted(observations, key=lambda o: o.timestamp)
    if not obs:
        raise EmptyInput("no observations")
    start = t0 if t0 is not None else obs[0].timestamp
    out = []
    for o in obs:
        env = env_at(env_samples, o.timestamp)
        out.append(TimedFeatures(o.timestamp, extract_features(o, env, start)))
    return out
