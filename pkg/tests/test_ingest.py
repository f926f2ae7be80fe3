import json
import struct

import numpy as np
import pytest

from conftest import build_shapefile
from spillnet import geo, ingest
from spillnet.errors import (
    BadMagic,
    GeometryError,
    IngestError,
    ParseError,
    SchemaError,
    TruncatedFile,
    UnsupportedShape,
)

SQUARE = [(-88.125, 28.5), (-88.0, 28.5), (-88.0, 28.625), (-88.125, 28.625)]


class TestParseShapefile:
    def test_hand_built_square(self):
        blob = build_shapefile([[SQUARE]])
        records = ingest.parse_shapefile(blob)
        assert len(records) == 1
        rec = records[0]
        assert rec.shape_type == 5
        assert len(rec.points) == 4
        assert rec.parts == (0,)
        assert rec.points[0] == (-88.125, 28.5)

    def test_bad_magic(self):
        blob = b"\x00\x00\x00\x00" + build_shapefile([[SQUARE]])[4:]
        with pytest.raises(BadMagic):
            ingest.parse_shapefile(blob)

    def test_declared_length_exceeds_bytes(self):
        blob = bytearray(build_shapefile([[SQUARE]]))
        declared = struct.unpack_from(">i", blob, 24)[0]
        struct.pack_into(">i", blob, 24, declared * 2)
        with pytest.raises(TruncatedFile):
            ingest.parse_shapefile(bytes(blob))

    def test_unsupported_shape_type(self):
        blob = bytearray(build_shapefile([[SQUARE]]))
        struct.pack_into("<i", blob, 100 + 8, 3)  # polyline payload type
        with pytest.raises(UnsupportedShape):
            ingest.parse_shapefile(bytes(blob))

    def test_null_record_skipped(self):
        # one null record: 8-byte header + 4-byte shape type 0
        body = struct.pack(">ii", 1, 2) + struct.pack("<i", 0)
        total = 100 + len(body)
        header = struct.pack(">i", 9994) + b"\x00" * 20 + struct.pack(">i", total // 2)
        header += struct.pack("<ii", 1000, 0) + struct.pack("<8d", *([0.0] * 8))
        assert ingest.parse_shapefile(header + body) == []

    def test_truncation_fuzz_never_crashes(self):
        blob = build_shapefile([[SQUARE], [SQUARE]])
        rng = np.random.default_rng(42)
        for _ in range(10_000):
            k = int(rng.integers(0, len(blob)))
            with pytest.raises(IngestError):
                ingest.parse_shapefile(blob[:k])

    def test_multi_ring_hole_inference(self):
        # exterior written CW, hole CCW per the ESRI convention
        outer_cw = list(reversed(SQUARE))
        hole_ccw = [(-88.1, 28.53), (-88.03, 28.53), (-88.03, 28.6), (-88.1, 28.6)]
        blob = build_shapefile([[outer_cw, hole_ccw]])
        polys = ingest.record_to_polygons(ingest.parse_shapefile(blob)[0])
        assert len(polys) == 1
        assert len(polys[0].holes) == 1

    def test_two_cw_rings_two_components(self):
        other = [(lon + 1.0, lat) for lon, lat in SQUARE]
        blob = build_shapefile([[list(reversed(SQUARE)), list(reversed(other))]])
        polys = ingest.record_to_polygons(ingest.parse_shapefile(blob)[0])
        assert len(polys) == 2
        assert all(not p.holes for p in polys)


class TestRoundTrip:
    def test_shapefile_json_shapefile_bit_exact(self):
        ring = [(-88.123456789456, 28.98765432101), (-88.0012345, 28.9871),
                (-88.00054321, 29.123456789), (-88.2222221, 29.0000001)]
        blob = build_shapefile([[ring]])
        polys = ingest.record_to_polygons(ingest.parse_shapefile(blob)[0])
        obs = [ingest.SpillObservation(timestamp=1_272_067_200.0, boundary=polys[0],
                                       spill_id="rt")]
        doc = ingest.spill_to_json(obs, "rt")
        reparsed = ingest.parse_spill_json(doc)
        assert reparsed[0].boundary.exterior == polys[0].exterior

        blob2 = ingest.write_shapefile([reparsed[0].boundary])
        polys2 = ingest.record_to_polygons(ingest.parse_shapefile(blob2)[0])
        assert polys2[0].exterior == polys[0].exterior
        assert polys2[0].holes == polys[0].holes

    def test_shapefile_and_json_twin_agree(self):
        blob = build_shapefile([[SQUARE]])
        from_shp = ingest.record_to_polygons(ingest.parse_shapefile(blob)[0])[0]
        doc = json.dumps({
            "spill_id": "twin",
            "observations": [{
                "timestamp_utc": "2010-04-24T00:00:00Z",
                "exterior": [list(p) for p in SQUARE],
            }],
        })
        from_json = ingest.parse_spill_json(doc)[0].boundary
        assert from_shp.exterior == from_json.exterior
        assert from_shp.holes == from_json.holes


class TestSpillJson:
    def _doc(self, observations):
        return json.dumps({"spill_id": "s1", "observations": observations})

    def test_single_square(self):
        doc = self._doc([{
            "timestamp_utc": "2010-04-24T06:00:00Z",
            "exterior": [list(p) for p in SQUARE],
        }])
        obs = ingest.parse_spill_json(doc)
        assert len(obs) == 1
        assert obs[0].spill_id == "s1"

    def test_duplicate_timestamps(self):
        entry = {"timestamp_utc": "2010-04-24T06:00:00Z",
                 "exterior": [list(p) for p in SQUARE]}
        with pytest.raises(SchemaError):
            ingest.parse_spill_json(self._doc([entry, dict(entry)]))

    def test_out_of_range_latitude(self):
        bad = [[-88.1, 95.0], [-88.0, 95.0], [-88.0, 95.1]]
        with pytest.raises(GeometryError):
            ingest.parse_spill_json(self._doc([{
                "timestamp_utc": "2010-04-24T00:00:00Z", "exterior": bad}]))

    def test_pointer_path_in_schema_error(self):
        doc = json.dumps({"spill_id": "s1", "observations": [
            {"exterior": [list(p) for p in SQUARE]}]})
        with pytest.raises(SchemaError) as err:
            ingest.parse_spill_json(doc)
        assert err.value.pointer == "/observations/0/timestamp_utc"

    def test_sorted_output(self):
        e = [list(p) for p in SQUARE]
        doc = self._doc([
            {"timestamp_utc": "2010-04-25T00:00:00Z", "exterior": e},
            {"timestamp_utc": "2010-04-24T00:00:00Z", "exterior": e},
        ])
        obs = ingest.parse_spill_json(doc)
        assert obs[0].timestamp < obs[1].timestamp


class TestManifestSeries:
    def test_assembles_sorted_series(self):
        later = [(lon + 0.2, lat) for lon, lat in SQUARE]
        blobs = {
            "b.shp": build_shapefile([[later]]),
            "a.shp": build_shapefile([[SQUARE]]),
        }
        manifest = {"a.shp": "2010-04-24T00:00:00Z", "b.shp": "2010-04-25T00:00:00Z"}
        obs = ingest.ingest_shapefile_series(blobs, manifest, "dwh")
        assert [o.source_tag for o in obs] == ["a.shp", "b.shp"]

    def test_missing_manifest_entry(self):
        with pytest.raises(SchemaError):
            ingest.ingest_shapefile_series({"a.shp": build_shapefile([[SQUARE]])}, {})


class TestDms:
    def test_north(self):
        assert ingest.dms_to_decimal('29°01\'35"N') == pytest.approx(29.026389, abs=1e-6)

    def test_west(self):
        assert ingest.dms_to_decimal('88°23\'14"W') == pytest.approx(-88.387222, abs=1e-6)

    def test_minutes_out_of_range(self):
        with pytest.raises(ParseError):
            ingest.dms_to_decimal('12°61\'00"N')

    def test_garbage(self):
        with pytest.raises(ParseError):
            ingest.dms_to_decimal("twelve degrees north")
