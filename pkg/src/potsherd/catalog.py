"""Vessel-profile sketches and the class catalog.

A sketch is the half-profile of a wheel-thrown vessel drawn in the axial
plane: ``x`` is the radial distance from the rotation axis and ``y`` the
height along it, both in millimetres.  Each side (inner / outer surface) is an
ordered polyline.  A per-point ``missing`` flag marks the segment from that
point to the next as not being real vessel surface (partial drawings); such
segments are never intersected or sampled.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import AllMissing, EmptyCatalog, InvariantViolation, MalformedFile

SIDES = ("inner", "outer")
MIN_POLYLINE_LENGTH = 10.0  # mm
MIN_POINT_GAP = 1e-6  # mm
MAX_SKETCHES_PER_CLASS = 8

_UNIT_SCALE = {"mm": 1.0, "cm": 10.0, "m": 1000.0}


@dataclass(frozen=True)
class Polyline:
    """Profile polyline with per-segment missing flags.

    ``missing[i]`` refers to the segment ``points[i] -> points[i + 1]``; the
    flag of the last point is carried but has no segment to describe.
    """

    points: np.ndarray  # (n, 2) float64
    missing: np.ndarray  # (n,) bool

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        miss = np.ascontiguousarray(self.missing, dtype=bool)
        pts.setflags(write=False)
        miss.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "missing", miss)

    @classmethod
    def from_points(cls, points, missing=None) -> "Polyline":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if missing is None:
            missing = np.zeros(len(pts), dtype=bool)
        return cls(pts, np.asarray(missing, dtype=bool))

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def all_missing(self) -> bool:
        """True when no segment survives (arrays are read-only, so this is cached)."""
        return bool(self.missing[:-1].all())

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    def __eq__(self, other):
        if not isinstance(other, Polyline):
            return NotImplemented
        return np.array_equal(self.points, other.points) and np.array_equal(self.missing, other.missing)

    __hash__ = None


@dataclass(frozen=True)
class ProfileSketch:
    class_id: str
    inner: Polyline
    outer: Polyline
    source_id: str = ""

    def side(self, name: str) -> Polyline:
        if name == "inner":
            return self.inner
        if name == "outer":
            return self.outer
        raise ValueError(f"unknown side {name!r}")

    @property
    def r_max(self) -> float:
        return float(max(self.inner.points[:, 0].max(), self.outer.points[:, 0].max()))

    @property
    def height(self) -> float:
        ys = np.concatenate([self.inner.points[:, 1], self.outer.points[:, 1]])
        return float(ys.max() - ys.min())


@dataclass(frozen=True)
class Catalog:
    """Ordered mapping ``class_id -> sketches``; order defines class indices."""

    classes: dict = field(default_factory=dict)

    @property
    def class_ids(self) -> list[str]:
        return list(self.classes)

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self) -> Iterator[str]:
        return iter(self.classes)

    def __getitem__(self, class_id: str) -> tuple[ProfileSketch, ...]:
        return self.classes[class_id]

    def index(self, class_id: str) -> int:
        return self.class_ids.index(class_id)

    def sketches(self) -> Iterator[ProfileSketch]:
        for sketches in self.classes.values():
            yield from sketches


def validate_polyline(poly: Polyline, where: str) -> None:
    pts = poly.points
    if pts.ndim != 2 or pts.shape[1] != 2 or len(poly.missing) != len(pts):
        raise InvariantViolation(f"{where}: malformed point array")
    if len(pts) < 2:
        raise InvariantViolation(f"{where}: needs at least 2 points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise InvariantViolation(f"{where}: non-finite coordinate")
    if np.any(pts[:, 0] < 0):
        i = int(np.argmax(pts[:, 0] < 0))
        raise InvariantViolation(f"{where}: point {i} has x = {pts[i, 0]} < 0 (must lie on one side of the axis)")
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(gaps <= MIN_POINT_GAP):
        i = int(np.argmax(gaps <= MIN_POINT_GAP))
        raise InvariantViolation(f"{where}: consecutive duplicate points at index {i}")
    if gaps.sum() < MIN_POLYLINE_LENGTH:
        raise InvariantViolation(f"{where}: arc length {gaps.sum():.3f} mm < {MIN_POLYLINE_LENGTH} mm")


def validate_sketch(sketch: ProfileSketch) -> None:
    for side in SIDES:
        validate_polyline(sketch.side(side), f"sketch {sketch.source_id!r} ({sketch.class_id}) {side}")


def validate_catalog(catalog: Catalog) -> None:
    if not catalog.classes:
        raise EmptyCatalog("catalog has no classes")
    for class_id, sketches in catalog.classes.items():
        if not 1 <= len(sketches) <= MAX_SKETCHES_PER_CLASS:
            raise InvariantViolation(
                f"class {class_id!r}: {len(sketches)} sketches, expected 1..{MAX_SKETCHES_PER_CLASS}"
            )
        for sketch in sketches:
            if sketch.class_id != class_id:
                raise InvariantViolation(f"sketch {sketch.source_id!r} filed under {class_id!r}")
            validate_sketch(sketch)


def _parse_polyline(raw, scale: float, where: str) -> Polyline:
    if not isinstance(raw, list):
        raise MalformedFile(f"{where}: expected a list of points")
    pts, miss = [], []
    for i, entry in enumerate(raw):
        if not isinstance(entry, (list, tuple)) or len(entry) not in (2, 3):
            raise MalformedFile(f"{where}[{i}]: expected [x, y] or [x, y, missing]")
        x, y = entry[0], entry[1]
        if isinstance(x, bool) or isinstance(y, bool) or not all(isinstance(v, (int, float)) for v in (x, y)):
            raise MalformedFile(f"{where}[{i}]: coordinates must be numbers")
        flag = entry[2] if len(entry) == 3 else False
        if not isinstance(flag, bool):
            raise MalformedFile(f"{where}[{i}]: missing flag must be a boolean")
        pts.append((float(x) * scale, float(y) * scale))
        miss.append(flag)
    return Polyline.from_points(np.array(pts, dtype=np.float64).reshape(-1, 2), miss)


def parse_manifest(doc, origin: str = "<memory>") -> Catalog:
    """Build an unvalidated :class:`Catalog` from a decoded manifest."""
    if not isinstance(doc, dict) or not isinstance(doc.get("classes"), list):
        raise MalformedFile(f"{origin}: top level must be an object with a 'classes' list")
    unit = doc.get("units", "mm")
    if unit not in _UNIT_SCALE:
        raise MalformedFile(f"{origin}: unknown units {unit!r}")
    scale = _UNIT_SCALE[unit]
    classes: dict[str, tuple[ProfileSketch, ...]] = {}
    for ci, entry in enumerate(doc["classes"]):
        if not isinstance(entry, dict) or not isinstance(entry.get("class_id"), str):
            raise MalformedFile(f"{origin}: classes[{ci}] needs a string 'class_id'")
        class_id = entry["class_id"]
        if class_id in classes:
            raise InvariantViolation(f"{origin}: duplicate class_id {class_id!r}")
        raw_sketches = entry.get("sketches")
        if not isinstance(raw_sketches, list):
            raise MalformedFile(f"{origin}: class {class_id!r} needs a 'sketches' list")
        sketches = []
        for si, raw in enumerate(raw_sketches):
            where = f"{origin}: {class_id}/sketches[{si}]"
            if not isinstance(raw, dict) or "inner" not in raw or "outer" not in raw:
                raise MalformedFile(f"{where}: needs 'inner' and 'outer'")
            source_id = raw.get("source_id", f"{class_id}#{si}")
            if not isinstance(source_id, str):
                raise MalformedFile(f"{where}: source_id must be a string")
            sketches.append(
                ProfileSketch(
                    class_id=class_id,
                    inner=_parse_polyline(raw["inner"], scale, where + ".inner"),
                    outer=_parse_polyline(raw["outer"], scale, where + ".outer"),
                    source_id=source_id,
                )
            )
        classes[class_id] = tuple(sketches)
    return Catalog(classes)


def load_catalog(path) -> Catalog:
    """Load and validate a profile manifest file, or every ``*.json`` in a directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.json"))
        if not files:
            raise EmptyCatalog(f"{path}: no manifest files")
    elif path.is_file():
        files = [path]
    else:
        raise MalformedFile(f"{path}: no such file or directory")

    merged: dict[str, tuple[ProfileSketch, ...]] = {}
    for f in files:
        try:
            doc = json.loads(f.read_text())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedFile(f"{f}: {exc}") from exc
        part = parse_manifest(doc, str(f))
        for class_id, sketches in part.classes.items():
            if class_id in merged:
                raise InvariantViolation(f"{f}: class_id {class_id!r} already defined")
            merged[class_id] = sketches
    catalog = Catalog(merged)
    validate_catalog(catalog)
    return catalog


def catalog_to_manifest(catalog: Catalog) -> dict:
    def poly(p: Polyline):
        return [
            [float(x), float(y), True] if m else [float(x), float(y)]
            for (x, y), m in zip(p.points, p.missing)
        ]

    return {
        "units": "mm",
        "classes": [
            {
                "class_id": cid,
                "sketches": [
                    {"source_id": s.source_id, "inner": poly(s.inner), "outer": poly(s.outer)}
                    for s in sketches
                ],
            }
            for cid, sketches in catalog.classes.items()
        ],
    }


def save_catalog(catalog: Catalog, path) -> None:
    Path(path).write_text(json.dumps(catalog_to_manifest(catalog)))


def effective_segments(sketch: ProfileSketch, side: str) -> list[np.ndarray]:
    """Maximal runs of points joined by non-missing segments, in order."""
    poly = sketch.side(side)
    return _runs(poly)


def _runs(poly: Polyline) -> list[np.ndarray]:
    ok = np.zeros(len(poly.missing) + 1, dtype=np.int8)
    ok[1:-1] = ~poly.missing[:-1]
    edges = np.diff(ok)
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    if not len(starts):
        raise AllMissing(f"every segment of this {len(poly)}-point polyline is flagged missing")
    return [poly.points[a : b + 1] for a, b in zip(starts, ends)]


def densify(sketch: ProfileSketch, spacing: float) -> ProfileSketch:
    """Subdivide every segment so no gap exceeds ``spacing``; vertices are kept."""

    def dense(poly: Polyline) -> Polyline:
        pts, miss = poly.points, poly.missing
        seg = np.diff(pts, axis=0)
        counts = np.maximum(np.ceil(np.linalg.norm(seg, axis=1) / spacing).astype(int), 1)
        out_pts = [pts[i] + seg[i] * (np.arange(c)[:, None] / c) for i, c in enumerate(counts)]
        out_miss = [np.full(c, miss[i]) for i, c in enumerate(counts)]
        out_pts.append(pts[-1:])
        out_miss.append(miss[-1:])
        return Polyline(np.concatenate(out_pts), np.concatenate(out_miss))

    return ProfileSketch(sketch.class_id, dense(sketch.inner), dense(sketch.outer), sketch.source_id)


def sketch_from_arrays(class_id: str, inner: Sequence, outer: Sequence, source_id: str = "") -> ProfileSketch:
    return ProfileSketch(class_id, Polyline.from_points(inner), Polyline.from_points(outer), source_id)
