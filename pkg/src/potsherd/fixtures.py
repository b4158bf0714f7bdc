"""Parametric vessel families standing in for scanned catalogue sketches.

Each family is a wall centre-line (control points in units of rim radius
``R`` and vessel height ``H``) plus a wall thickness and a rim style.  The
centre-line is smoothed by corner cutting except at vertices marked sharp,
then offset by half the thickness to either side to give the outer and inner
profile polylines.  Sketches of one class are small perturbations of a class
prototype.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .catalog import Catalog, Polyline, ProfileSketch, validate_catalog
from .synthgeom import densify_polyline

# name: (control points as (r/R, z/H), sharp vertex indices, height/R, thickness mm)
FAMILIES = {
    "plate": ([(0, 0), (0.55, 0), (1.0, 1.0)], (), 0.16, 6.0),
    "conical_bowl": ([(0, 0), (0.3, 0), (1.0, 1.0)], (1,), 0.55, 5.0),
    "hemispherical_bowl": ([(0, 0), (0.3, 0), (0.75, 0.3), (0.95, 0.7), (1.0, 1.0)], (), 0.6, 5.0),
    "cup": ([(0, 0), (0.85, 0), (1.0, 0.12), (1.0, 1.0)], (), 1.1, 4.0),
    "beaker": ([(0, 0), (0.45, 0), (0.55, 0.15), (1.0, 1.0)], (), 2.2, 3.5),
    "jar": ([(0, 0), (0.7, 0), (1.45, 0.45), (0.8, 0.88), (1.0, 1.0)], (), 1.6, 6.5),
    "carinated_bowl": ([(0, 0), (0.45, 0), (1.1, 0.45), (0.95, 1.0)], (2,), 0.7, 5.5),
    "dish": ([(0, 0), (0.8, 0), (1.0, 0.2), (1.0, 1.0)], (1,), 0.3, 7.0),
    "incurved_bowl": ([(0, 0), (0.35, 0), (1.1, 0.45), (0.85, 1.0)], (), 0.75, 5.0),
    "bottle": ([(0, 0), (1.4, 0), (2.0, 0.35), (0.6, 0.7), (0.45, 0.8), (1.0, 1.0)], (), 2.0, 6.0),
    "footed_bowl": ([(0, 0), (0.28, 0), (0.33, -0.35), (0.45, -0.35), (0.5, 0), (1.0, 1.0)], (), 0.5, 6.0),
    "collared_jar": ([(0, 0), (0.8, 0), (1.5, 0.5), (1.0, 0.78), (0.98, 0.85), (1.0, 1.0)], (), 1.3, 7.0),
}
RIM_STYLES = ("plain", "bead", "flare")


@dataclass(frozen=True)
class CatalogSpec:
    n_classes: int = 10
    sketches_per_class: int = 2
    rim_radius: tuple = (70.0, 130.0)  # mm
    jitter: float = 0.05  # relative perturbation between sketches of a class
    min_separation: float = 10.0  # mm, Hausdorff between class prototypes
    spacing: float = 0.5  # mm between profile points


def _chaikin(pts: np.ndarray, sharp: set, iterations: int = 4) -> np.ndarray:
    """Corner cutting on a polyline, leaving endpoints and ``sharp`` vertices in place."""
    breaks = sorted({0, len(pts) - 1} | set(sharp))
    out = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        seg = pts[a : b + 1]
        for _ in range(iterations):
            if len(seg) < 3:
                break
            q = 0.75 * seg[:-1] + 0.25 * seg[1:]
            r = 0.25 * seg[:-1] + 0.75 * seg[1:]
            mid = np.empty((2 * len(q) - 2, 2))
            mid[0::2] = r[:-1]
            mid[1::2] = q[1:]
            seg = np.vstack([seg[:1], mid, seg[-1:]])
        out.append(seg if not out else seg[1:])
    return np.vstack(out)


def _normals(pts: np.ndarray) -> np.ndarray:
    """Per-vertex right-hand unit normals with mitre scaling at corners."""
    seg = np.diff(pts, axis=0)
    seg /= np.linalg.norm(seg, axis=1, keepdims=True)
    seg_n = np.stack([seg[:, 1], -seg[:, 0]], axis=1)
    n = np.empty_like(pts)
    n[0], n[-1] = seg_n[0], seg_n[-1]
    avg = seg_n[:-1] + seg_n[1:]
    avg /= np.maximum(np.linalg.norm(avg, axis=1, keepdims=True), 1e-12)
    cos_half = np.clip(np.sum(avg * seg_n[1:], axis=1), 0.5, 1.0)
    n[1:-1] = avg / cos_half[:, None]
    return n


def _drop_close(pts: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > tol:
            keep.append(i)
    return pts[keep]


def vessel_profile(ctrl, sharp, radius: float, height: float, thickness: float, rim: str,
                   spacing: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Inner and outer profile polylines, each from the base centre to the rim."""
    ctrl = np.asarray(ctrl, dtype=float) * [radius, height]
    if rim == "flare":
        top = ctrl[-1]
        ctrl = np.vstack([ctrl[:-1], top - [0.06 * radius, 0.06 * height], top + [0.12 * radius, 0.0]])
    centre = _chaikin(ctrl, set(sharp))
    centre = densify_polyline(centre, spacing)
    centre = _drop_close(centre, 0.2 * spacing)
    centre[:, 1] += thickness / 2
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(centre, axis=0), axis=1))])
    t = np.full(len(centre), thickness)
    if rim == "bead":
        ramp = np.clip((arc - (arc[-1] - 10.0)) / 6.0, 0.0, 1.0)
        t = t * (1.0 + 0.9 * ramp)
    n = _normals(centre)
    outer = centre + n * (t[:, None] / 2)
    inner = centre - n * (t[:, None] / 2)
    # rounded rim cap split between the two sides
    tip, tip_n = centre[-1], n[-1] / np.linalg.norm(n[-1])
    tangent = np.array([-tip_n[1], tip_n[0]])
    ang = np.linspace(0, np.pi, 13)[1:-1]
    cap = tip + (t[-1] / 2) * (np.cos(ang)[:, None] * tip_n + np.sin(ang)[:, None] * tangent)
    outer = np.vstack([outer, cap[:5]])
    inner = np.vstack([inner, cap[:5:-1]])
    outer[:, 0] = np.maximum(outer[:, 0], 0.0)
    inner[:, 0] = np.maximum(inner[:, 0], 0.0)
    return _drop_close(inner), _drop_close(outer)


def _class_recipes(n_classes: int):
    names = list(FAMILIES)
    recipes = []
    for k in range(n_classes):
        family = names[k % len(names)]
        rim = RIM_STYLES[(k // len(names)) % len(RIM_STYLES)]
        recipes.append((family, rim))
    return recipes


def _prototype_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    return float(max(cKDTree(b).query(a)[0].max(), cKDTree(a).query(b)[0].max()))


def make_parametric_catalog(spec: CatalogSpec | None = None, rng: np.random.Generator | None = None, **kw) -> Catalog:
    """Deterministic (under ``rng``) catalog of distinguishable vessel families."""
    spec = spec or CatalogSpec(**kw)
    if spec.n_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = rng if rng is not None else np.random.default_rng(0)
    classes = {}
    protos = []
    for k, (family, rim) in enumerate(_class_recipes(spec.n_classes)):
        ctrl, sharp, h_ratio, thick = FAMILIES[family]
        for _ in range(200):
            radius = float(rng.uniform(*spec.rim_radius))
            outer = vessel_profile(ctrl, sharp, radius, h_ratio * radius, thick, rim, 2.0)[1]
            if all(_prototype_hausdorff(outer, p) >= spec.min_separation for p in protos):
                break
        else:
            raise RuntimeError(f"could not place class {k} at separation {spec.min_separation} mm")
        protos.append(outer)
        class_id = f"{family}-{rim}-{k:02d}"
        sketches = []
        for j in range(spec.sketches_per_class):
            jit = spec.jitter if j else 0.0
            c = np.asarray(ctrl, dtype=float) * (1.0 + jit * rng.uniform(-1, 1, size=(len(ctrl), 2)))
            c[0] = 0.0
            c[1, 1] = 0.0
            r = radius * (1.0 + jit * rng.uniform(-1, 1))
            h = h_ratio * radius * (1.0 + jit * rng.uniform(-1, 1))
            th = thick * (1.0 + 2 * jit * rng.uniform(-1, 1))
            inner, outer = vessel_profile(c, sharp, r, h, th, rim, spec.spacing)
            sketches.append(
                ProfileSketch(class_id, Polyline.from_points(inner), Polyline.from_points(outer), f"{class_id}/{j}")
            )
        classes[class_id] = tuple(sketches)
    catalog = Catalog(classes)
    validate_catalog(catalog)
    return catalog


def prototype_separation(catalog: Catalog) -> float:
    """Smallest Hausdorff distance between the first-sketch outer profiles of two classes."""
    outers = [catalog[c][0].outer.points for c in catalog.class_ids]
    best = np.inf
    for i in range(len(outers)):
        for j in range(i + 1, len(outers)):
            best = min(best, _prototype_hausdorff(outers[i], outers[j]))
    return float(best)
