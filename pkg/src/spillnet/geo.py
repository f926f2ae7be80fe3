"""Planar/spherical polygon geometry on WGS84 coordinates.

Polygons are stored as lon/lat vertex rings. Metric quantities come from an
equirectangular projection about the polygon's bounding-box center latitude
(adequate for spill extents of a couple of degrees), except perimeter_km which
uses great-circle edge lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, InvalidGeometry, ZeroVarianceShape

EARTH_RADIUS_KM = 6371.0088
DEG = math.pi / 180.0
KM_PER_DEG = EARTH_RADIUS_KM * DEG  # 111.195... km per degree of latitude


def _dedupe_ring(ring):
    """Drop consecutive duplicate vertices and an explicit closing vertex."""
    pts = [(float(lon), float(lat)) for lon, lat in ring]
    out = []
    for p in pts:
        if not out or p != out[-1]:
            out.append(p)
    if len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return out


def _signed_area(ring):
    """Shoelace signed area in the ring's native coordinates (CCW positive)."""
    a = 0.0
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        a += x1 * y2 - x2 * y1
    return 0.5 * a


def _segments_properly_intersect(p1, p2, p3, p4):
    """True when open segments p1p2 and p3p4 cross at an interior point."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != d2 and d3 != d4


def _check_simple(ring):
    """O(n^2) proper-intersection test over non-adjacent edge pairs."""
    n = len(ring)
    edges = [(ring[i], ring[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # adjacent through the closure
            if _segments_properly_intersect(*edges[i], *edges[j]):
                raise InvalidGeometry(
                    f"exterior ring self-intersects (edges {i} and {j})"
                )


@dataclass(frozen=True)
class GeoPolygon:
    """Simple polygon in WGS84 lon/lat degrees, implicit ring closure.

    The exterior ring is normalized counter-clockwise and holes clockwise at
    construction; consecutive duplicate vertices are removed.
    """

    exterior: tuple
    holes: tuple = field(default=())

    def __post_init__(self):
        ext = _dedupe_ring(self.exterior)
        if len(ext) < 3:
            raise InvalidGeometry(f"exterior needs >= 3 distinct vertices, got {len(ext)}")
        for lon, lat in ext:
            if not (-180.0 <= lon <= 180.0) or not (-90.0 <= lat <= 90.0):
                raise InvalidGeometry(f"vertex ({lon}, {lat}) outside lon/lat range")
        if abs(_signed_area(ext)) == 0.0:
            raise InvalidGeometry("exterior ring has zero area")
        _check_simple(ext)
        if _signed_area(ext) < 0:
            ext = [ext[0]] + ext[:0:-1]
        norm_holes = []
        for k, ring in enumerate(self.holes):
            h = _dedupe_ring(ring)
            if len(h) < 3:
                raise InvalidGeometry(f"hole {k} needs >= 3 distinct vertices")
            for lon, lat in h:
                if not (-180.0 <= lon <= 180.0) or not (-90.0 <= lat <= 90.0):
                    raise InvalidGeometry(f"hole vertex ({lon}, {lat}) out of range")
            if _signed_area(h) > 0:
                h = [h[0]] + h[:0:-1]
            norm_holes.append(tuple(h))
        object.__setattr__(self, "exterior", tuple(ext))
        object.__setattr__(self, "holes", tuple(norm_holes))

    def bbox(self):
        lons = [p[0] for p in self.exterior]
        lats = [p[1] for p in self.exterior]
        return min(lons), min(lats), max(lons), max(lats)


@dataclass(frozen=True)
class ShapeDescriptors:
    area_km2: float
    perimeter_km: float
    centroid: tuple
    compactness: float
    convexity: float
    aspect_ratio: float
    orientation_sin2t: float
    orientation_cos2t: float


class LocalFrame:
    """Equirectangular km frame anchored at (lon0, lat0).

    x runs east, y north. Shared by the planner and simulator so vehicle
    coordinates stay consistent across boundary updates.
    """

    def __init__(self, lon0: float, lat0: float):
        self.lon0 = float(lon0)
        self.lat0 = float(lat0)
        self._coslat = math.cos(lat0 * DEG)

    @classmethod
    def for_polygon(cls, polygon: GeoPolygon) -> "LocalFrame":
        lon_min, lat_min, lon_max, lat_max = polygon.bbox()
        return cls(0.5 * (lon_min + lon_max), 0.5 * (lat_min + lat_max))

    def to_xy(self, lon: float, lat: float):
        x = EARTH_RADIUS_KM * (lon - self.lon0) * self._coslat * DEG
        y = EARTH_RADIUS_KM * (lat - self.lat0) * DEG
        return x, y

    def to_lonlat(self, x: float, y: float):
        lon = self.lon0 + x / (EARTH_RADIUS_KM * self._coslat * DEG)
        lat = self.lat0 + y / (EARTH_RADIUS_KM * DEG)
        return lon, lat

    def project_ring(self, ring):
        return [self.to_xy(lon, lat) for lon, lat in ring]


def project_local(polygon: GeoPolygon):
    """Project to planar km (east, north) about the bbox center latitude.

    Returns (exterior_xy, holes_xy, frame).
    """
    frame = LocalFrame.for_polygon(polygon)
    ext = frame.project_ring(polygon.exterior)
    holes = [frame.project_ring(h) for h in polygon.holes]
    return ext, holes, frame


def haversine_km(lon1, lat1, lon2, lat2):
    """Great-circle distance between two lon/lat points."""
    phi1, phi2 = lat1 * DEG, lat2 * DEG
    dphi = (lat2 - lat1) * DEG
    dlmb = (lon2 - lon1) * DEG
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def area_km2(polygon: GeoPolygon) -> float:
    """Shoelace area on projected coordinates, holes subtracted."""
    ext, holes, _ = project_local(polygon)
    area = abs(_signed_area(ext))
    for h in holes:
        area -= abs(_signed_area(h))
    if area <= 0:
        raise InvalidGeometry("holes consume the full exterior area")
    return area


def perimeter_km(polygon: GeoPolygon) -> float:
    """Sum of great-circle edge lengths over the exterior ring."""
    ring = polygon.exterior
    n = len(ring)
    total = 0.0
    for i in range(n):
        lon1, lat1 = ring[i]
        lon2, lat2 = ring[(i + 1) % n]
        total += haversine_km(lon1, lat1, lon2, lat2)
    return total


def _planar_perimeter(ring_xy):
    n = len(ring_xy)
    return sum(
        math.hypot(ring_xy[(i + 1) % n][0] - ring_xy[i][0], ring_xy[(i + 1) % n][1] - ring_xy[i][1])
        for i in range(n)
    )


def _planar_centroid(ring_xy, holes_xy):
    """Area centroid of the projected polygon, holes subtracted."""

    def ring_moments(ring):
        a = cx = cy = 0.0
        n = len(ring)
        for i in range(n):
            x1, y1 = ring[i]
            x2, y2 = ring[(i + 1) % n]
            cross = x1 * y2 - x2 * y1
            a += cross
            cx += (x1 + x2) * cross
            cy += (y1 + y2) * cross
        return a / 2.0, cx / 6.0, cy / 6.0

    a0, cx0, cy0 = ring_moments(ring_xy)
    sgn = 1.0 if a0 >= 0 else -1.0
    a_tot, cx_tot, cy_tot = abs(a0), sgn * cx0, sgn * cy0
    for h in holes_xy:
        ah, cxh, cyh = ring_moments(h)
        sgn_h = 1.0 if ah >= 0 else -1.0
        a_tot -= abs(ah)
        cx_tot -= sgn_h * cxh
        cy_tot -= sgn_h * cyh
    if a_tot <= 0:
        raise InvalidGeometry("degenerate polygon: zero net area")
    return cx_tot / a_tot, cy_tot / a_tot


def convex_hull(points):
    """Monotone-chain convex hull; returns CCW hull vertices."""
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) < 3:
        raise InvalidGeometry("hull needs >= 3 distinct points")

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def descriptors(polygon: GeoPolygon) -> ShapeDescriptors:
    """Shape summary used as the geometric half of the feature vector.

    Compactness (4*pi*A/P^2) and convexity use projected-plane quantities so
    their [0, 1] bounds are exact; perimeter_km stays great-circle.
    """
    ext_xy, holes_xy, frame = project_local(polygon)
    area = abs(_signed_area(ext_xy)) - sum(abs(_signed_area(h)) for h in holes_xy)
    if area <= 0:
        raise InvalidGeometry("holes consume the full exterior area")
    planar_p = _planar_perimeter(ext_xy)
    compact = 4.0 * math.pi * area / (planar_p * planar_p)

    hull = convex_hull(ext_xy)
    hull_area = abs(_signed_area(hull))
    convexity = area / hull_area if hull_area > 0 else 1.0

    cx, cy = _planar_centroid(ext_xy, holes_xy)
    centroid = frame.to_lonlat(cx, cy)

    pts = np.asarray(ext_xy, dtype=float)
    cov = np.cov(pts.T, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    lam2, lam1 = float(evals[0]), float(evals[1])
    if lam2 < 1e-12:
        raise ZeroVarianceShape(f"collinear vertices: minor eigenvalue {lam2:.3e}")
    vx, vy = evecs[:, 1]
    theta = math.atan2(vy, vx) % math.pi
    return ShapeDescriptors(
        area_km2=area,
        perimeter_km=perimeter_km(polygon),
        centroid=centroid,
        compactness=compact,
        convexity=convexity,
        aspect_ratio=lam1 / lam2,
        orientation_sin2t=math.sin(2.0 * theta),
        orientation_cos2t=math.cos(2.0 * theta),
    )


def largest_component(polygons) -> GeoPolygon:
    """Component with maximal area; ties broken by lowest input index."""
    polys = list(polygons)
    if not polys:
        raise EmptyInput("no polygons supplied")
    best, best_area = polys[0], area_km2(polys[0])
    for p in polys[1:]:
        a = area_km2(p)
        if a > best_area:
            best, best_area = p, a
    return best
