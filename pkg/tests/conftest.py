import struct

import numpy as np
import pytest

from spillnet import geo


def square_lonlat(center_lon=0.0, center_lat=0.0, side_deg=0.1):
    h = side_deg / 2.0
    return [
        (center_lon - h, center_lat - h),
        (center_lon + h, center_lat - h),
        (center_lon + h, center_lat + h),
        (center_lon - h, center_lat + h),
    ]


def regular_ngon(n, center_lon=0.0, center_lat=0.0, radius_deg=0.05):
    return [
        (center_lon + radius_deg * np.cos(2 * np.pi * k / n),
         center_lat + radius_deg * np.sin(2 * np.pi * k / n))
        for k in range(n)
    ]


@pytest.fixture
def equator_square():
    return geo.GeoPolygon(exterior=square_lonlat())


def build_shapefile(rings_per_record, file_shape_type=5):
    """Hand-assemble .shp bytes per the ESRI layout: 100-byte header with
    big-endian magic/length and little-endian version/shape-type, then
    big-endian record headers with little-endian polygon payloads."""
    bodies = []
    for rec_no, rings in enumerate(rings_per_record, start=1):
        points = [p for ring in rings for p in ring]
        parts, off = [], 0
        for ring in rings:
            parts.append(off)
            off += len(ring)
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        content = struct.pack("<i", 5)
        content += struct.pack("<4d", min(xs), min(ys), max(xs), max(ys))
        content += struct.pack("<ii", len(parts), len(points))
        content += struct.pack(f"<{len(parts)}i", *parts)
        flat = [c for p in points for c in p]
        content += struct.pack(f"<{len(flat)}d", *flat)
        bodies.append(struct.pack(">ii", rec_no, len(content) // 2) + content)
    total = 100 + sum(len(b) for b in bodies)
    header = struct.pack(">i", 9994) + b"\x00" * 20 + struct.pack(">i", total // 2)
    header += struct.pack("<ii", 1000, file_shape_type)
    header += struct.pack("<8d", *([0.0] * 8))
    return header + b"".join(bodies)
