import json

import numpy as np
import pytest

from potsherd.catalog import (
    Catalog,
    Polyline,
    ProfileSketch,
    catalog_to_manifest,
    densify,
    effective_segments,
    load_catalog,
    parse_manifest,
    save_catalog,
    validate_catalog,
)
from potsherd.errors import AllMissing, EmptyCatalog, InvariantViolation, MalformedFile

from conftest import manifest

INNER = [(0, 5), (40, 5), (80, 60)]
OUTER = [(0, 0), (45, 0), (85, 60)]


def write(tmp_path, doc, name="m.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_two_classes_three_sketches(tmp_path):
    doc = manifest({"a": [(INNER, OUTER), (INNER, OUTER)], "b": [(INNER, OUTER)]})
    cat = load_catalog(write(tmp_path, doc))
    assert cat.class_ids == ["a", "b"]
    assert [len(cat[c]) for c in cat.class_ids] == [2, 1]
    np.testing.assert_array_equal(cat["a"][0].inner.points, np.array(INNER, float))


def test_negative_radius_rejected(tmp_path):
    bad = [(-1.0, 5)] + INNER[1:]
    with pytest.raises(InvariantViolation, match="x"):
        load_catalog(write(tmp_path, manifest({"a": [(bad, OUTER)]})))


def test_single_point_polyline_rejected(tmp_path):
    with pytest.raises(InvariantViolation):
        load_catalog(write(tmp_path, manifest({"a": [([(10, 10)], OUTER)]})))


def test_short_polyline_rejected(tmp_path):
    with pytest.raises(InvariantViolation):
        load_catalog(write(tmp_path, manifest({"a": [([(0, 0), (5, 0)], OUTER)]})))


def test_duplicate_consecutive_points_rejected(tmp_path):
    dup = [INNER[0], INNER[1], INNER[1], INNER[2]]
    with pytest.raises(InvariantViolation):
        load_catalog(write(tmp_path, manifest({"a": [(dup, OUTER)]})))


@pytest.mark.parametrize("value", [float("nan"), float("inf")])
def test_non_finite_rejected(value):
    cat = Catalog({"a": (ProfileSketch("a", Polyline.from_points([(0, 0), (value, 20), (30, 30)]),
                                       Polyline.from_points(OUTER), "a/0"),)})
    with pytest.raises(InvariantViolation):
        validate_catalog(cat)


def test_too_many_sketches(tmp_path):
    with pytest.raises(InvariantViolation):
        load_catalog(write(tmp_path, manifest({"a": [(INNER, OUTER)] * 9})))


def test_empty_catalog(tmp_path):
    with pytest.raises(EmptyCatalog):
        load_catalog(write(tmp_path, {"classes": []}))
    (tmp_path / "empty").mkdir()
    with pytest.raises(EmptyCatalog):
        load_catalog(tmp_path / "empty")


@pytest.mark.parametrize(
    "doc",
    [
        [],
        {"classes": {}},
        {"classes": [{"sketches": []}]},
        {"classes": [{"class_id": "a", "sketches": [{"inner": [[0, "x"]], "outer": OUTER}]}]},
        {"classes": [{"class_id": "a", "sketches": [{"inner": [[0, 0, "yes"], [20, 0]], "outer": OUTER}]}]},
        {"classes": [{"class_id": "a", "sketches": [{"outer": OUTER}]}]},
        {"units": "furlong", "classes": []},
    ],
)
def test_malformed(tmp_path, doc):
    with pytest.raises(MalformedFile):
        load_catalog(write(tmp_path, doc))


def test_not_json(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{nope")
    with pytest.raises(MalformedFile, match="m.json"):
        load_catalog(p)


def test_missing_path(tmp_path):
    with pytest.raises(MalformedFile):
        load_catalog(tmp_path / "absent.json")


def test_units_converted_to_mm(tmp_path):
    doc = manifest({"a": [([(0, 0.5), (4, 0.5), (8, 6)], [(0, 0), (4.5, 0), (8.5, 6)])]})
    doc["units"] = "cm"
    cat = load_catalog(write(tmp_path, doc))
    np.testing.assert_allclose(cat["a"][0].outer.points[-1], [85.0, 60.0])


def test_directory_merge_and_duplicate(tmp_path):
    write(tmp_path, manifest({"a": [(INNER, OUTER)]}), "1.json")
    write(tmp_path, manifest({"b": [(INNER, OUTER)]}), "2.json")
    assert load_catalog(tmp_path).class_ids == ["a", "b"]
    write(tmp_path, manifest({"a": [(INNER, OUTER)]}), "3.json")
    with pytest.raises(InvariantViolation, match="already defined"):
        load_catalog(tmp_path)


def test_duplicate_class_in_one_file():
    doc = manifest({"a": [(INNER, OUTER)]})
    doc["classes"].append(doc["classes"][0])
    with pytest.raises(InvariantViolation):
        parse_manifest(doc)


def test_deterministic_and_round_trip(tmp_path, small_catalog):
    p = tmp_path / "c.json"
    save_catalog(small_catalog, p)
    a, b = load_catalog(p), load_catalog(p)
    assert catalog_to_manifest(a) == catalog_to_manifest(b)
    assert catalog_to_manifest(a) == catalog_to_manifest(small_catalog)


def test_missing_flag_round_trip(tmp_path):
    inner = [[0, 5], [40, 5, True], [60, 30], [80, 60]]
    doc = manifest({"a": [(inner, OUTER)]})
    cat = load_catalog(write(tmp_path, doc))
    assert cat["a"][0].inner.missing.tolist() == [False, True, False, False]
    again = parse_manifest(catalog_to_manifest(cat))
    assert again["a"][0].inner.missing.tolist() == [False, True, False, False]


def _sketch(missing):
    pts = [(0, 0), (10, 0), (20, 5), (30, 15), (40, 30)]
    return ProfileSketch("a", Polyline.from_points(pts, missing), Polyline.from_points(pts), "a/0")


def test_effective_segments_identity():
    segs = effective_segments(_sketch([False] * 5), "inner")
    assert len(segs) == 1
    np.testing.assert_array_equal(segs[0], _sketch([False] * 5).inner.points)


def test_effective_segments_split_in_middle():
    segs = effective_segments(_sketch([False, False, True, False, False]), "inner")
    assert [len(s) for s in segs] == [3, 2]
    np.testing.assert_array_equal(segs[0][-1], [20, 5])
    np.testing.assert_array_equal(segs[1][0], [30, 15])


def test_effective_segments_all_missing():
    with pytest.raises(AllMissing):
        effective_segments(_sketch([True] * 4 + [False]), "inner")


def test_effective_segments_concatenate_to_non_missing_edges(rng):
    pts = np.cumsum(rng.uniform(1, 3, size=(30, 2)), axis=0)
    for _ in range(20):
        miss = rng.random(30) < 0.3
        miss[0] = False
        sk = ProfileSketch("a", Polyline.from_points(pts, miss), Polyline.from_points(pts), "a/0")
        segs = effective_segments(sk, "inner")
        edges = [tuple(map(tuple, s[i : i + 2])) for s in segs for i in range(len(s) - 1)]
        want = [tuple(map(tuple, pts[i : i + 2])) for i in range(29) if not miss[i]]
        assert edges == want


def test_densify_keeps_vertices_and_bounds_gap(cone):
    d = densify(cone, 0.5)
    for side in ("inner", "outer"):
        pts = d.side(side).points
        assert np.linalg.norm(np.diff(pts, axis=0), axis=1).max() <= 0.5 + 1e-9
        for v in cone.side(side).points:
            assert np.min(np.linalg.norm(pts - v, axis=1)) < 1e-9
