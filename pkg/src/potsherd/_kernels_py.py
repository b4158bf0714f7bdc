"""Pure numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and semantics; ``potsherd.kernels`` picks one at import time.
"""
import math

import numpy as np


def circle_plane_section(r, z, offset, tan_tilt, tol):
    """Positive-root intersection of profile circles with a cutting plane.

    In the plane's horizontal frame a circle of radius ``r`` at height ``z``
    meets the plane where ``w = offset - z * tan_tilt`` and ``u**2 + w**2 = r**2``.
    Returns ``(u, w, hit)`` with ``u = +sqrt(r**2 - w**2)``; tangent circles
    (normalized discriminant within ``tol``) get ``u = 0``.
    """
    r = np.asarray(r, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    w = offset - z * tan_tilt
    disc = r * r - w * w
    r2 = r * r
    with np.errstate(divide="ignore", invalid="ignore"):
        dn = np.where(r2 > 0, disc / np.where(r2 > 0, r2, 1.0), np.where(np.abs(w) <= 1e-12, 0.0, -1.0))
    hit = dn >= -tol
    u = np.where(dn > tol, np.sqrt(np.maximum(disc, 0.0)), 0.0)
    return u, w, hit


def tangent_crossing(r0, r1, z0, z1, offset, tan_tilt):
    """Parameter ``t`` in [0, 1] where the lerped circle from ``(r0, z0)`` to
    ``(r1, z1)`` touches the plane (root of its discriminant)."""
    dr = r1 - r0
    w0 = offset - z0 * tan_tilt
    dw = -(z1 - z0) * tan_tilt
    qa = dr * dr - dw * dw
    qb = 2.0 * (r0 * dr - w0 * dw)
    qc = r0 * r0 - w0 * w0
    disc = math.sqrt(max(qb * qb - 4.0 * qa * qc, 0.0))
    # numerically stable pair of roots
    qq = -0.5 * (qb + math.copysign(disc, qb) if qb != 0 else disc)
    t1 = qq / qa if qa != 0 else math.inf
    t2 = qc / qq if qq != 0 else math.inf
    # the sign change guarantees one root in [0, 1]; take the one closest to it
    best, gap = 0.5, math.inf
    for t in (t1, t2):
        if math.isfinite(t) and abs(min(max(t, 0.0), 1.0) - t) < gap:
            best, gap = t, abs(min(max(t, 0.0), 1.0) - t)
    return min(max(best, 0.0), 1.0)


def section_polyline(r, z, missing, offset, tan_tilt, tol):
    """Positive-root section of one profile side, split into chains.

    A chain is a maximal run of non-missing segments.  Points whose circle
    misses the plane are dropped; where the run enters or leaves the
    intersecting region a tangent point (``u = 0``) closes the chain.
    Returns flat ``(u, w, z)`` arrays and chain boundaries ``bounds`` so
    chain ``k`` is ``[bounds[k], bounds[k + 1])``; chains under 2 points
    are dropped.
    """
    r = np.asarray(r, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    ok = np.zeros(len(r) + 1, dtype=np.int8)
    ok[1:-1] = ~np.asarray(missing, dtype=bool)[:-1]
    edges = np.diff(ok)
    us, ws, zs, bounds = [], [], [], [0]
    for a, b in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        rr, zz = r[a : b + 1], z[a : b + 1]
        u, w, hit = circle_plane_section(rr, zz, offset, tan_tilt, tol)
        keys = np.flatnonzero(hit).astype(float)
        uu, ww, zh = u[hit], w[hit], zz[hit]
        trans = np.flatnonzero(hit[:-1] != hit[1:])
        if len(trans):
            t = np.array([tangent_crossing(rr[j], rr[j + 1], zz[j], zz[j + 1], offset, tan_tilt) for j in trans])
            zt = zz[trans] + t * (zz[trans + 1] - zz[trans])
            order = np.argsort(np.concatenate([keys, trans + t]), kind="stable")
            uu = np.concatenate([uu, np.zeros(len(t))])[order]
            ww = np.concatenate([ww, offset - zt * tan_tilt])[order]
            zh = np.concatenate([zh, zt])[order]
        if len(uu) >= 2:
            us.append(uu)
            ws.append(ww)
            zs.append(zh)
            bounds.append(bounds[-1] + len(uu))
    if not us:
        return np.empty(0), np.empty(0), np.empty(0), np.array(bounds)
    return np.concatenate(us), np.concatenate(ws), np.concatenate(zs), np.array(bounds)


def clip_polyline(points, a, b, c):
    """Keep the parts of an open polyline where ``a*x + b*y + c > 0``.

    Returns ``(out, piece)``: the clipped vertices (crossing points inserted)
    and, per vertex, the index of the connected piece it belongs to.
    """
    p = np.asarray(points, dtype=np.float64)
    n = len(p)
    if n == 0:
        return np.empty((0, 2)), np.empty(0, dtype=np.int64)
    f = a * p[:, 0] + b * p[:, 1] + c
    inside = f > 0
    trans = np.zeros(n, dtype=bool)
    trans[1:] = inside[1:] != inside[:-1]
    ti = np.nonzero(trans)[0]
    t = f[ti - 1] / (f[ti - 1] - f[ti])
    q = p[ti - 1] + t[:, None] * (p[ti] - p[ti - 1])

    # interleave: crossing of segment (i-1, i) sorts before vertex i
    keys = np.concatenate([2 * ti, 2 * np.nonzero(inside)[0] + 1])
    pts = np.concatenate([q, p[inside]])
    starts = np.concatenate([inside[ti], np.zeros(int(inside.sum()), dtype=bool)])
    if inside[0]:
        starts[len(ti)] = True
    order = np.argsort(keys, kind="stable")
    piece = np.cumsum(starts[order]) - 1
    return pts[order], piece.astype(np.int64)


def _interp(points, garc, lo, hi, s):
    j = np.searchsorted(garc, s, side="right") - 1
    j = np.clip(j, lo, hi - 2)
    seg = garc[j + 1] - garc[j]
    t = np.where(seg > 0, (s - garc[j]) / np.where(seg > 0, seg, 1.0), 0.0)
    return points[j] + t[:, None] * (points[j + 1] - points[j])


def sample_runs(points, garc, run_start, run_end, positions, spacing):
    """Evaluate points and turning angles at global arc positions.

    Runs are contiguous vertex ranges ``run_start[k]:run_end[k]`` laid end to
    end; ``garc`` is the non-decreasing arc position of every vertex along the
    concatenation.  The angle at a sample is the counter-clockwise angle from
    ``p(s + spacing) - p(s)`` to ``p(s - spacing) - p(s)``, neighbours clamped
    to the ends of the sample's own run; a missing neighbour counts as a
    straight continuation.  Returns ``(xy, run_index, sin, cos)``.
    """
    points = np.asarray(points, dtype=np.float64)
    garc = np.asarray(garc, dtype=np.float64)
    run_start = np.asarray(run_start, dtype=np.int64)
    run_end = np.asarray(run_end, dtype=np.int64)
    pos = np.asarray(positions, dtype=np.float64)
    first = garc[run_start]
    ri = np.clip(np.searchsorted(first, pos, side="right") - 1, 0, len(run_start) - 1)
    lo, hi = run_start[ri], run_end[ri]
    a0, a1 = garc[lo], garc[hi - 1]
    s = np.clip(pos, a0, a1)
    p = _interp(points, garc, lo, hi, s)
    pa = _interp(points, garc, lo, hi, np.maximum(s - spacing, a0)) - p
    pb = _interp(points, garc, lo, hi, np.minimum(s + spacing, a1)) - p
    na = np.hypot(pa[:, 0], pa[:, 1])
    nb = np.hypot(pb[:, 0], pb[:, 1])
    ok = (na > 0) & (nb > 0)
    sin = pb[:, 0] * pa[:, 1] - pb[:, 1] * pa[:, 0]
    cos = pb[:, 0] * pa[:, 0] + pb[:, 1] * pa[:, 1]
    norm = np.hypot(sin, cos)
    norm = np.where(ok & (norm > 0), norm, 1.0)
    sin = np.where(ok, sin / norm, 0.0)
    cos = np.where(ok, cos / norm, -1.0)
    return p, ri.astype(np.int64), sin, cos


def maxpool_forward(h):
    """Max over axis 1 of a ``(B, K, F)`` array; first index wins ties."""
    idx = np.argmax(h, axis=1)
    out = np.take_along_axis(h, idx[:, None, :], axis=1)[:, 0, :]
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool_backward(grad, idx, k):
    b, f = grad.shape
    dh = np.zeros((b, k, f), dtype=grad.dtype)
    np.put_along_axis(dh, idx[:, None, :], grad[:, None, :], axis=1)
    return dh


def section_planar(points, missing, offset, tan_tilt, tol, cos_t, sin_t, origin=None):
    """In-plane ``(u, z cos t - w sin t)`` of :func:`section_polyline` minus ``origin``.

    Without ``origin`` the first output point is used (``(0, 0)`` when empty).
    Returns ``(xy, bounds, origin)`` with bounds as a list.
    """
    points = np.asarray(points, dtype=float)
    u, w, z, bounds = section_polyline(points[:, 0], points[:, 1], missing, offset, tan_tilt, tol)
    xy = np.column_stack([u, z * cos_t - w * sin_t])
    if origin is None:
        origin = tuple(xy[0].tolist()) if len(xy) else (0.0, 0.0)
    return xy - origin, bounds.tolist(), tuple(origin)


def section_outline(sides, offset, tan_tilt, tol, cos_t, sin_t, origin=None):
    """Whole uncut outline from ``(points, missing, code)`` sides in order.

    Chains of one side are joined by a break point (code 2) at their midpoint.
    Returns ``(xy, codes, counts, chord)``: per-side section point counts
    (breaks excluded) and the summed end-to-end distance of all chains.
    """
    pts, codes, counts, chord = [], [], [], 0.0
    for points, missing, code in sides:
        xy, bounds, o2 = section_planar(points, missing, offset, tan_tilt, tol, cos_t, sin_t, origin)
        counts.append(len(xy))
        if not len(xy):
            continue
        origin = o2
        starts, ends = np.array(bounds[:-1]), np.array(bounds[1:]) - 1
        chord += float(np.hypot(*(xy[ends] - xy[starts]).T).sum())
        c = np.full(len(xy), code, dtype=np.int8)
        at = starts[1:]
        pts.append(np.insert(xy, at, 0.5 * (xy[at - 1] + xy[at]), axis=0))
        codes.append(np.insert(c, at, 2))
    if not pts:
        return np.empty((0, 2)), np.empty(0, dtype=np.int8), counts, chord
    return np.concatenate(pts), np.concatenate(codes), counts, chord
