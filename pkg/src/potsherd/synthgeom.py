"""Synthetic fracture outlines from profile sketches.

Rotating a profile point ``(r, z)`` about the vessel axis sweeps the circle
``x**2 + y**2 = r**2`` at height ``z``.  A cutting plane meets each such
circle in at most two points, so a fracture outline is obtained circle by
circle without ever building a mesh.  :func:`brute_force_fracture` does build
the mesh, and exists only to check :func:`generate_fracture`.

Frames
------
A :class:`CuttingPlane` is described by its tilt from the vertical axis, an
azimuth and a horizontal offset.  With ``d = (cos az, sin az, 0)`` and
``h = (-sin az, cos az, 0)`` the unit normal is ``cos(tilt) h + sin(tilt) z``
and the plane passes through ``offset * h``.  Outlines are expressed in the
in-plane basis ``(d, up)`` where ``up`` is the projection of ``+z`` onto the
plane, so the sherd's vertical stays vertical in 2D.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .catalog import SIDES, ProfileSketch, effective_segments
from .errors import AllMissing, CannotIntersect, DegenerateSherd, MalformedFile

MAX_TILT = 20.0  # degrees
MAX_CUT_SLOPE = 15.0  # degrees
TANGENT_TOL = 1e-9
MIN_SHERD_LENGTH = 20.0  # mm
MAX_SHERD_HEIGHT_FRACTION = 0.6
PLANE_TRIES = 100

SIDE_CODES = {"inner": 0, "outer": 1, "break": 2}
SIDE_NAMES = ("inner", "outer", "break")
INNER, OUTER, BREAK = 0, 1, 2


@dataclass(frozen=True)
class CuttingPlane:
    tilt: float  # degrees from the rotation axis
    azimuth: float  # radians
    offset: float  # mm

    def __post_init__(self):
        if not 0.0 <= self.tilt <= MAX_TILT:
            raise ValueError(f"tilt {self.tilt} outside [0, {MAX_TILT}] degrees")

    @property
    def direction(self) -> np.ndarray:
        """Horizontal in-plane axis ``d``; the positive root lies along it."""
        return np.array([math.cos(self.azimuth), math.sin(self.azimuth), 0.0])

    @property
    def horizontal(self) -> np.ndarray:
        return np.array([-math.sin(self.azimuth), math.cos(self.azimuth), 0.0])

    @property
    def normal(self) -> np.ndarray:
        t = math.radians(self.tilt)
        return np.array([-math.sin(self.azimuth) * math.cos(t), math.cos(self.azimuth) * math.cos(t), math.sin(t)])

    @property
    def up(self) -> np.ndarray:
        t = math.radians(self.tilt)
        return np.array([math.sin(self.azimuth) * math.sin(t), -math.cos(self.azimuth) * math.sin(t), math.cos(t)])

    @property
    def point(self) -> np.ndarray:
        return self.offset * self.horizontal

    def signed_distance(self, pts) -> np.ndarray:
        return (np.asarray(pts) - self.point) @ self.normal


@dataclass(frozen=True)
class CutLine:
    """Almost-horizontal line ``y = z_intercept + tan(slope) * x`` in the outline frame."""

    z_intercept: float
    slope_angle: float  # degrees
    keep_side: str  # "above" | "below"

    def __post_init__(self):
        if abs(self.slope_angle) > MAX_CUT_SLOPE:
            raise ValueError(f"cut slope {self.slope_angle} exceeds {MAX_CUT_SLOPE} degrees")
        if self.keep_side not in ("above", "below"):
            raise ValueError(f"keep_side must be 'above' or 'below', got {self.keep_side!r}")

    def halfplane(self) -> tuple[float, float, float]:
        """Coefficients ``(a, b, c)`` with ``a*x + b*y + c > 0`` on the kept side."""
        s = np.radians(self.slope_angle)
        a, b, c = -np.sin(s), np.cos(s), -self.z_intercept * np.cos(s)
        if self.keep_side == "below":
            a, b, c = -a, -b, -c
        return float(a), float(b), float(c)


@dataclass(frozen=True)
class ProfileExtent:
    r_max: float
    z_min: float
    z_max: float

    @classmethod
    def of(cls, sketch: ProfileSketch) -> "ProfileExtent":
        pts = np.concatenate([sketch.inner.points, sketch.outer.points])
        return cls(float(pts[:, 0].max()), float(pts[:, 1].min()), float(pts[:, 1].max()))


@dataclass
class SherdOutline:
    """Ordered 2D outline in millimetres with a side code per point.

    Consecutive points with the same inner/outer code are joined by surface
    segments; a break point interrupts the chain.
    """

    points: np.ndarray  # (n, 2)
    sides: np.ndarray  # (n,) int8 codes, see SIDE_CODES
    class_id: str | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.sides = np.asarray(self.sides, dtype=np.int8)
        if len(self.sides) != len(self.points):
            raise ValueError("points and sides differ in length")

    def __len__(self):
        return len(self.points)

    @property
    def surface_mask(self) -> np.ndarray:
        return self.sides != BREAK

    def runs(self) -> list[tuple[int, int]]:
        """Index ranges ``[start, end)`` of surface chains with at least 2 points."""
        out = []
        n = len(self.sides)
        i = 0
        while i < n:
            j = i + 1
            while j < n and self.sides[j] == self.sides[i]:
                j += 1
            if self.sides[i] != BREAK and j - i >= 2:
                out.append((i, j))
            i = j
        return out

    def arc_length(self) -> float:
        return float(sum(_polyline_length(self.points[a:b]) for a, b in self.runs()))

    def side_counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.sides == code)) for name, code in SIDE_CODES.items()}

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "points": [[float(x), float(y), SIDE_NAMES[s]] for (x, y), s in zip(self.points, self.sides)],
        }

    @classmethod
    def from_json(cls, doc) -> "SherdOutline":
        if not isinstance(doc, dict) or not isinstance(doc.get("points"), list):
            raise MalformedFile("outline must be an object with a 'points' list")
        class_id = doc.get("class_id")
        if class_id is not None and not isinstance(class_id, str):
            raise MalformedFile("class_id must be a string or null")
        pts, sides = [], []
        for i, entry in enumerate(doc["points"]):
            if (
                not isinstance(entry, list)
                or len(entry) != 3
                or entry[2] not in SIDE_CODES
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in entry[:2])
            ):
                raise MalformedFile(f"points[{i}]: expected [x, y, 'inner'|'outer'|'break']")
            pts.append(entry[:2])
            sides.append(SIDE_CODES[entry[2]])
        if not np.all(np.isfinite(np.asarray(pts, dtype=float))):
            raise MalformedFile("non-finite coordinate in outline")
        return cls(np.array(pts, dtype=np.float64).reshape(-1, 2), np.array(sides, dtype=np.int8), class_id)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "SherdOutline":
        try:
            doc = json.loads(Path(path).read_text())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedFile(f"{path}: {exc}") from exc
        try:
            return cls.from_json(doc)
        except MalformedFile as exc:
            raise MalformedFile(f"{path}: {exc}") from exc


@dataclass
class Chain:
    """Connected polyline of one surface side (2D or 3D points)."""

    points: np.ndarray
    side: int


def _polyline_length(pts) -> float:
    if len(pts) < 2:
        return 0.0
    d = np.diff(pts, axis=0)
    return float(np.sqrt((d * d).sum(axis=1)).sum())


def sample_cutting_plane(rng: np.random.Generator, extent: ProfileExtent, sketch: ProfileSketch | None = None) -> CuttingPlane:
    """Random near-vertical plane; with ``sketch`` given, retried until it cuts both walls."""
    if not extent.r_max > 0:
        raise CannotIntersect("profile has zero radius")
    for _ in range(PLANE_TRIES):
        plane = CuttingPlane(
            tilt=float(rng.uniform(0.0, MAX_TILT)),
            azimuth=float(rng.uniform(0.0, 2 * np.pi)),
            offset=float(rng.uniform(-0.8 * extent.r_max, 0.8 * extent.r_max)),
        )
        if sketch is None or _cuts_both_sides(sketch, plane):
            return plane
    raise CannotIntersect(f"no intersecting plane found in {PLANE_TRIES} tries")


def _cuts_both_sides(sketch: ProfileSketch, plane: CuttingPlane) -> bool:
    tan_t = np.tan(np.radians(plane.tilt))
    for side in SIDES:
        pts = sketch.side(side).points
        _, _, hit = kernels.circle_plane_section(pts[:, 0], pts[:, 1], plane.offset, tan_t, TANGENT_TOL)
        if hit.sum() < 2:
            return False
    return True


def circle_plane_intersection(r: float, z: float, plane: CuttingPlane) -> list[np.ndarray]:
    """All points of the circle ``x**2 + y**2 = r**2, height z`` on the plane.

    Two points (positive root first) when transversal, one when tangent,
    none otherwise.
    """
    if r < 0:
        raise ValueError("radius must be non-negative")
    tan_t = np.tan(np.radians(plane.tilt))
    u, w, hit = kernels.circle_plane_section(np.array([r]), np.array([z]), plane.offset, tan_t, TANGENT_TOL)
    if not hit[0]:
        return []
    d, h = plane.direction, plane.horizontal
    base = w[0] * h + np.array([0.0, 0.0, z])
    if u[0] == 0.0:
        return [base]
    return [base + u[0] * d, base - u[0] * d]


def pick_root(points, plane: CuttingPlane) -> np.ndarray:
    """The intersection on the positive-root branch: largest coordinate along ``plane.direction``."""
    points = [np.asarray(p, dtype=float) for p in points]
    if not points:
        raise ValueError("no intersection points to choose from")
    d = plane.direction
    return max(points, key=lambda p: float(p @ d))


def _section_sides(sketch: ProfileSketch, plane: CuttingPlane):
    """Per side: ``(u, w, z, bounds, code)`` from the compiled section kernel."""
    tan_t = math.tan(math.radians(plane.tilt))
    out = []
    for side in SIDES:
        poly = sketch.side(side)
        if poly.all_missing:
            raise AllMissing(f"every segment of the {side} side is flagged missing")
        u, w, z, bounds = kernels.section_polyline(
            poly.points[:, 0], poly.points[:, 1], poly.missing, plane.offset, tan_t, TANGENT_TOL
        )
        out.append((u, w, z, bounds.tolist(), SIDE_CODES[side]))
    return out


def _split(pts, bounds, code):
    return [Chain(pts[i:j], code) for i, j in zip(bounds[:-1], bounds[1:])]


def section_chains(sketch: ProfileSketch, plane: CuttingPlane) -> list[Chain]:
    """3D positive-root section of every effective profile segment, inner side first.

    Circles without an intersection are skipped and their neighbours joined
    directly; missing profile segments end a chain.  Each chain is closed on
    the exact tangency where it enters or leaves the intersecting region.
    """
    d, h = plane.direction, plane.horizontal
    chains = []
    for u, w, z, bounds, code in _section_sides(sketch, plane):
        pts = np.empty((len(u), 3))
        pts[:, 0] = u * d[0] + w * h[0]
        pts[:, 1] = u * d[1] + w * h[1]
        pts[:, 2] = z
        chains.extend(_split(pts, bounds, code))
    return chains


def _planar_sides(sketch: ProfileSketch, plane: CuttingPlane, origin=None):
    # project_chains(section_chains(...)) without the 3D round trip:
    # x = u and y = z cos t - w sin t in the (d, up) frame.  Yields (xy, bounds, code)
    t = math.radians(plane.tilt)
    tan_t, ct, st = math.tan(t), math.cos(t), math.sin(t)
    if origin is not None:
        origin = (np.asarray(origin, dtype=float) @ np.column_stack([plane.direction, plane.up])).tolist()
    out = []
    for side in SIDES:
        poly = sketch.side(side)
        if poly.all_missing:
            raise AllMissing(f"every segment of the {side} side is flagged missing")
        xy, bounds, o2 = kernels.section_planar(poly.points, poly.missing, plane.offset, tan_t, TANGENT_TOL, ct, st,
                                                origin)
        if len(bounds) > 1:
            origin = o2
            out.append((xy, bounds, SIDE_CODES[side]))
    return out


def _planar_chains(sketch: ProfileSketch, plane: CuttingPlane, origin=None) -> list[Chain]:
    return [c for xy, bounds, code in _planar_sides(sketch, plane, origin) for c in _split(xy, bounds, code)]


def _uncut_outline(sketch: ProfileSketch, plane: CuttingPlane, origin=None) -> SherdOutline:
    # _planar_chains + check_sherd + assemble_outline in one compiled pass
    t = math.radians(plane.tilt)
    o2 = None
    if origin is not None:
        o2 = (np.asarray(origin, dtype=float) @ np.column_stack([plane.direction, plane.up])).tolist()
    sides = []
    for side in SIDES:
        poly = sketch.side(side)
        if poly.all_missing:
            raise AllMissing(f"every segment of the {side} side is flagged missing")
        sides.append((poly.points, poly.missing, SIDE_CODES[side]))
    xy, codes, counts, chord = kernels.section_outline(sides, plane.offset, math.tan(t), TANGENT_TOL, math.cos(t),
                                                       math.sin(t), o2)
    if min(counts) < 2 or chord < MIN_SHERD_LENGTH:
        check_sherd(_planar_chains(sketch, plane, origin))  # raises with the precise reason
    return SherdOutline(xy, codes, sketch.class_id)


def project_chains(chains: list[Chain], plane: CuttingPlane, origin=None) -> list[Chain]:
    """In-plane ``(d, up)`` coordinates relative to ``origin`` (default: first point)."""
    basis = np.column_stack([plane.direction, plane.up])
    if origin is None:
        origin = chains[0].points[0] if chains else np.zeros(3)
    o2 = np.asarray(origin, dtype=float) @ basis
    return [Chain(c.points @ basis - o2, c.side) for c in chains]


def clip_chains(chains: list[Chain], cut: CutLine) -> list[Chain]:
    a, b, c = cut.halfplane()
    out = []
    for ch in chains:
        pts, piece = kernels.clip_polyline(ch.points, a, b, c)
        if len(pts) == 0:
            continue
        bounds = np.flatnonzero(np.diff(piece)) + 1
        for part in np.split(pts, bounds):
            if len(part) >= 2:
                out.append(Chain(part, ch.side))
    return out


def assemble_outline(chains: list[Chain], class_id: str | None = None) -> SherdOutline:
    """Flatten chains, inserting a break point between consecutive chains of one side."""
    joins = [i > 0 and chains[i - 1].side == ch.side for i, ch in enumerate(chains)]
    pts = np.empty((sum(len(ch.points) for ch in chains) + sum(joins), 2))
    sides = np.empty(len(pts), dtype=np.int8)
    k = 0
    for ch, join in zip(chains, joins):
        if join:
            pts[k] = 0.5 * (pts[k - 1] + ch.points[0, :2])
            sides[k] = BREAK
            k += 1
        pts[k:k + len(ch.points)] = ch.points[:, :2]
        sides[k:k + len(ch.points)] = ch.side
        k += len(ch.points)
    return SherdOutline(pts, sides, class_id)


def check_sherd(chains: list[Chain]) -> None:
    per_side = {INNER: 0, OUTER: 0}
    chord = 0.0
    for ch in chains:
        per_side[ch.side] += len(ch.points)
        if len(ch.points):
            chord += math.dist(ch.points[0].tolist(), ch.points[-1].tolist())
    if min(per_side.values()) < 2:
        raise DegenerateSherd(f"fewer than 2 points on a side ({per_side[INNER]} inner, {per_side[OUTER]} outer)")
    if chord >= MIN_SHERD_LENGTH:  # end-to-end distance never exceeds arc length
        return
    length = sum(_polyline_length(ch.points) for ch in chains)
    if length < MIN_SHERD_LENGTH:
        raise DegenerateSherd(f"outline length {length:.2f} mm < {MIN_SHERD_LENGTH} mm")


def generate_fracture(
    sketch: ProfileSketch,
    plane: CuttingPlane,
    cuts=(),
    *,
    rotation: np.ndarray | None = None,
    origin=None,
) -> SherdOutline:
    """Fracture outline of ``sketch`` cut by ``plane``, clipped by ``cuts``.

    ``rotation`` (3x3) is applied to the 3D section before projection, which
    is how alignment-error augmentation enters.  Raises
    :class:`DegenerateSherd` when the result is too small to be a sherd.
    """
    if rotation is None:
        if not cuts:
            return _uncut_outline(sketch, plane, origin)
        chains = _planar_chains(sketch, plane, origin)
    else:
        chains = [Chain(c.points @ np.asarray(rotation).T, c.side) for c in section_chains(sketch, plane)]
        chains = project_chains(chains, plane, origin)
    for cut in cuts or ():
        chains = clip_chains(chains, cut)
    check_sherd(chains)
    return assemble_outline(chains, sketch.class_id)


def sample_cut_lines(
    outline_chains: list[Chain], vessel_height: float, rng: np.random.Generator
) -> tuple[CutLine, CutLine]:
    """Upper and lower cut lines limiting sherd height to 60% of the vessel."""
    ys = np.concatenate([c.points[:, 1] for c in outline_chains])
    y0, y1 = float(ys.min()), float(ys.max())
    max_h = min(y1 - y0, MAX_SHERD_HEIGHT_FRACTION * vessel_height)
    height = float(rng.uniform(0.35, 1.0)) * max_h
    lower = float(rng.uniform(y0, y1 - height)) if y1 - height > y0 else y0
    slopes = []
    while len(slopes) < 2:
        s = float(rng.normal(0.0, 5.0))
        if abs(s) <= MAX_CUT_SLOPE:
            slopes.append(s)
    return (
        CutLine(lower + height, slopes[0], "below"),
        CutLine(lower, slopes[1], "above"),
    )


def brute_force_fracture(
    sketch: ProfileSketch, plane: CuttingPlane, angular_step: float = 0.1, *, origin=None, chunk: int = 256
) -> SherdOutline:
    """Mesh-based reference section; O(profile points x angular steps).

    Rotates the profile into a dense quad mesh, intersects every mesh edge
    with the plane and keeps crossings on the positive-root half
    (non-negative coordinate along ``plane.direction``).  Test use only.
    """
    if angular_step > 0.5:
        raise ValueError("angular_step must be <= 0.5 degrees")
    n_steps = int(round(360.0 / angular_step))
    phi = np.linspace(0.0, 2 * np.pi, n_steps, endpoint=False)
    cphi, sphi = np.cos(phi), np.sin(phi)
    nrm, q, d = plane.normal, plane.point, plane.direction
    # signed distance of (r cos phi, r sin phi, z) = r * A(phi) + z * nz - n.q
    along_n = cphi * nrm[0] + sphi * nrm[1]
    nq = float(nrm @ q)

    chains = []
    for side in SIDES:
        code = SIDE_CODES[side]
        for seg in effective_segments(sketch, side):
            keys, pts = [], []
            for lo in range(0, len(seg), chunk):
                block = seg[lo : lo + chunk + 1]  # one row of overlap for profile edges
                r, z = block[:, 0:1], block[:, 1:2]
                s = r * along_n + z * nrm[2] - nq  # (m, steps)
                # edges around each circle
                s2 = np.roll(s, -1, axis=1)
                rows = block[: min(chunk, len(block))]
                ii, kk = np.nonzero((s[: len(rows)] > 0) != (s2[: len(rows)] > 0))
                t = s[ii, kk] / (s[ii, kk] - s2[ii, kk])
                k2 = (kk + 1) % n_steps
                p_a = _ring_point(rows[ii], cphi[kk], sphi[kk])
                p_b = _ring_point(rows[ii], cphi[k2], sphi[k2])
                pts.append(p_a + t[:, None] * (p_b - p_a))
                keys.append(lo + ii.astype(float))
                # edges along the profile
                if len(block) > 1:
                    ii, kk = np.nonzero((s[:-1] > 0) != (s[1:] > 0))
                    t = s[ii, kk] / (s[ii, kk] - s[ii + 1, kk])
                    p_a = _ring_point(block[ii], cphi[kk], sphi[kk])
                    p_b = _ring_point(block[ii + 1], cphi[kk], sphi[kk])
                    pts.append(p_a + t[:, None] * (p_b - p_a))
                    keys.append(lo + ii + t)
            if not pts:
                continue
            pts = np.concatenate(pts)
            keys = np.concatenate(keys)
            keep = pts @ d >= 0
            pts, keys = pts[keep], keys[keep]
            if len(pts) < 2:
                continue
            chains.append(Chain(pts[np.argsort(keys, kind="stable")], code))
    chains = project_chains(chains, plane, origin)
    check_sherd(chains)
    return assemble_outline(chains, sketch.class_id)


def _ring_point(profile_pts, c, s):
    return np.stack([profile_pts[:, 0] * c, profile_pts[:, 0] * s, profile_pts[:, 1]], axis=1)


def densify_polyline(pts: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.diff(pts, axis=0)
    counts = np.maximum(np.ceil(np.linalg.norm(seg, axis=1) / spacing).astype(int), 1)
    parts = [pts[i] + seg[i] * (np.arange(c)[:, None] / c) for i, c in enumerate(counts)]
    parts.append(pts[-1:])
    return np.concatenate(parts)


def outline_hausdorff(a: SherdOutline, b: SherdOutline, resolution: float = 0.02) -> float:
    """Symmetric Hausdorff distance between the surface polylines of two outlines.

    Each outline's vertices are measured against the other outline's runs
    densified at ``resolution`` mm.
    """

    def vertices(o):
        return np.concatenate([o.points[s:e] for s, e in o.runs()])

    def dense(o):
        return np.concatenate([densify_polyline(o.points[s:e], resolution) for s, e in o.runs()])

    da = cKDTree(dense(b)).query(vertices(a))[0].max()
    db = cKDTree(dense(a)).query(vertices(b))[0].max()
    return float(max(da, db))
