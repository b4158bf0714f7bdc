"""From a sherd outline to the classifier's fixed-size point set.

Outlines are centred (scale is kept: vessel size is class information),
optionally augmented, then sampled at a limited arc-length resolution so
printing and tracing artifacts finer than the resolution are not encoded.
Each sample carries its side (inner / outer) and the turning angle of the
outline at that point, both laid out group-hot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import kernels
from .errors import BreakLabel, EmptyOutline
from .synthgeom import BREAK, INNER, OUTER, SherdOutline

ROTATION_SIGMA = 10.0  # degrees
SCALE_MEAN = 1.2
SCALE_VARIANCE = 0.8
SCALE_BOUNDS = (0.3, 3.0)
SPACING_SLACK = 0.25


@dataclass(frozen=True)
class SamplingConfig:
    K: int = 512
    resolution: float = 2.0  # mm

    def __post_init__(self):
        if self.K < 16:
            raise ValueError(f"K must be >= 16, got {self.K}")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")


TRAIN_SAMPLING = SamplingConfig(512, 2.0)
EVAL_SAMPLING = SamplingConfig(1024, 1.0)


@dataclass
class PointSample:
    """``K`` sampled points: the first ``n_distinct`` are distinct, the rest repeats."""

    xy: np.ndarray  # (K, 2)
    side: np.ndarray  # (K,) int8
    sin: np.ndarray  # (K,)
    cos: np.ndarray  # (K,)
    n_distinct: int

    def __len__(self):
        return len(self.xy)


@dataclass
class EncodedSample:
    loc: np.ndarray  # (K, 4): x_in, y_in, x_out, y_out
    ang: np.ndarray  # (K, 4): sin_in, cos_in, sin_out, cos_out
    label: int | None = None
    n_distinct: int | None = None

    @property
    def K(self) -> int:
        return len(self.loc)


def center_outline(outline: SherdOutline) -> SherdOutline:
    """Translate so the mean of the surface points is the origin."""
    surf = outline.points[outline.surface_mask]
    if len(surf) == 0:
        raise EmptyOutline("outline has no inner/outer points")
    return SherdOutline(outline.points - surf.mean(axis=0), outline.sides.copy(), outline.class_id)


def random_rotation(rng: np.random.Generator, sigma_deg: float = ROTATION_SIGMA) -> np.ndarray:
    """Rotation by ``|a|``, ``a ~ N(0, sigma)``, about a uniformly random axis."""
    angle = abs(float(rng.normal(0.0, sigma_deg)))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(np.radians(angle) * axis).as_matrix()


def augment_fracture(points3d: np.ndarray, rng: np.random.Generator, *, angle: float | None = None) -> np.ndarray:
    """Small random 3D rotation of a fracture polyline, before projection.

    ``angle`` (degrees) overrides the random magnitude; the axis stays random.
    """
    pts = np.asarray(points3d, dtype=np.float64)
    if angle is None:
        rot = random_rotation(rng)
    else:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        rot = Rotation.from_rotvec(np.radians(angle) * axis).as_matrix()
    return pts @ rot.T


def draw_scale(rng: np.random.Generator, mean: float = SCALE_MEAN, variance: float = SCALE_VARIANCE,
               bounds: tuple[float, float] = SCALE_BOUNDS) -> float:
    sd = np.sqrt(variance)
    while True:
        s = float(rng.normal(mean, sd))
        if bounds[0] <= s <= bounds[1]:
            return s


def augment_scale(outline: SherdOutline, rng: np.random.Generator, *, scale: float | None = None) -> SherdOutline:
    s = draw_scale(rng) if scale is None else scale
    return SherdOutline(outline.points * s, outline.sides.copy(), outline.class_id)


@dataclass
class _RunTable:
    points: np.ndarray  # compacted run vertices
    garc: np.ndarray
    start: np.ndarray
    end: np.ndarray
    side: np.ndarray  # per run
    length: float


def _run_table(outline: SherdOutline) -> _RunTable:
    runs = outline.runs()
    if not runs:
        raise EmptyOutline("outline has no surface segment to sample")
    pts, garc, start, end, side = [], [], [], [], []
    offset, n = 0.0, 0
    for a, b in runs:
        p = outline.points[a:b]
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        pts.append(p)
        garc.append(cum + offset)
        start.append(n)
        end.append(n + len(p))
        side.append(outline.sides[a])
        offset += cum[-1]
        n += len(p)
    return _RunTable(
        np.concatenate(pts), np.concatenate(garc), np.array(start, dtype=np.int64),
        np.array(end, dtype=np.int64), np.array(side, dtype=np.int8), offset,
    )


def sample_positions(length: float, cfg: SamplingConfig, rng: np.random.Generator) -> np.ndarray:
    """Stratified jittered arc positions: ``min(K, floor(L / resolution))`` strata,
    one draw in the central ``SPACING_SLACK`` fraction of each, so neighbours
    are at least ``resolution * (1 - SPACING_SLACK)`` apart."""
    m = min(cfg.K, int(np.floor(length / cfg.resolution + 1e-9)))
    m = max(m, 1)
    width = length / m
    jitter = SPACING_SLACK * (rng.random(m) - 0.5)
    return (np.arange(m) + 0.5 + jitter) * width


def sample_points(outline: SherdOutline, cfg: SamplingConfig, rng: np.random.Generator,
                  *, angle_spacing: float | None = None) -> PointSample:
    """Resolution-limited random sampling padded by repetition to exactly ``K``.

    Turning angles are evaluated on the dense outline at the sampled
    positions, with neighbours ``angle_spacing`` (default: the resolution)
    away along the arc.
    """
    table = _run_table(outline)
    if not table.length > 0:
        raise EmptyOutline("outline has zero surface length")
    pos = sample_positions(table.length, cfg, rng)
    spacing = cfg.resolution if angle_spacing is None else angle_spacing
    xy, run, sin, cos = kernels.sample_runs(table.points, table.garc, table.start, table.end, pos, spacing)
    m = len(pos)
    side = table.side[run]
    if m < cfg.K:
        pad = rng.integers(0, m, cfg.K - m)
        xy = np.concatenate([xy, xy[pad]])
        side = np.concatenate([side, side[pad]])
        sin = np.concatenate([sin, sin[pad]])
        cos = np.concatenate([cos, cos[pad]])
    return PointSample(xy, side, sin, cos, m)


def compute_angle(outline: SherdOutline, arc_positions, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """``(sin, cos)`` of the turning angle at global surface-arc positions."""
    table = _run_table(outline)
    _, _, sin, cos = kernels.sample_runs(
        table.points, table.garc, table.start, table.end, np.atleast_1d(arc_positions), spacing
    )
    return sin, cos


def encode(samples: PointSample, label: int | None = None, mode: str = "group_hot") -> EncodedSample:
    """Lay out location and angle features per side.

    ``group_hot`` puts inner points in columns 0-1 and outer points in 2-3 of
    both arrays.  ``one_hot`` is the ablation baseline: ``(x, y, in, out)`` and
    ``(sin, cos, in, out)``.
    """
    side = samples.side
    if np.any(side == BREAK):
        raise BreakLabel("break-labelled points cannot be encoded")
    if np.any((side != INNER) & (side != OUTER)):
        raise BreakLabel("unknown side code")
    k = len(side)
    loc = np.zeros((k, 4))
    ang = np.zeros((k, 4))
    inner = side == INNER
    if mode == "group_hot":
        col = np.where(inner, 0, 2)
        rows = np.arange(k)
        loc[rows, col] = samples.xy[:, 0]
        loc[rows, col + 1] = samples.xy[:, 1]
        ang[rows, col] = samples.sin
        ang[rows, col + 1] = samples.cos
    elif mode == "one_hot":
        onehot = np.stack([inner, ~inner], axis=1).astype(float)
        loc[:, :2] = samples.xy
        loc[:, 2:] = onehot
        ang[:, 0] = samples.sin
        ang[:, 1] = samples.cos
        ang[:, 2:] = onehot
    else:
        raise ValueError(f"unknown encoding {mode!r}")
    return EncodedSample(loc, ang, label, samples.n_distinct)


def prepare(outline: SherdOutline, cfg: SamplingConfig, rng: np.random.Generator, label: int | None = None,
            mode: str = "group_hot") -> EncodedSample:
    """centre -> sample -> encode, as applied at evaluation time."""
    return encode(sample_points(center_outline(outline), cfg, rng), label, mode)
