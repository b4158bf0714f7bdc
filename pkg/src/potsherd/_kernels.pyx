# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Mirrors ``_kernels_py`` function for function; see that module for the
semantics of each kernel.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, hypot, fmax, fmin, copysign, isfinite, INFINITY

cnp.import_array()

ctypedef fused real:
    float
    double


def circle_plane_section(r, z, double offset, double tan_tilt, double tol):
    cdef const double[::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = rv.shape[0], i
    u_arr = np.empty(n)
    w_arr = np.empty(n)
    hit_arr = np.empty(n, dtype=np.bool_)
    cdef double[::1] u = u_arr
    cdef double[::1] w = w_arr
    cdef cnp.npy_bool[::1] hit = hit_arr
    cdef double ri, wi, disc, r2, dn
    for i in range(n):
        ri = rv[i]
        wi = offset - zv[i] * tan_tilt
        r2 = ri * ri
        disc = r2 - wi * wi
        if r2 > 0:
            dn = disc / r2
        elif fabs(wi) <= 1e-12:
            dn = 0.0
        else:
            dn = -1.0
        w[i] = wi
        hit[i] = dn >= -tol
        if dn > tol:
            u[i] = sqrt(disc if disc > 0 else 0.0)
        else:
            u[i] = 0.0
    return u_arr, w_arr, hit_arr


cdef double _tangent_crossing(double r0, double r1, double z0, double z1, double offset, double tan_tilt):
    cdef double dr = r1 - r0, w0 = offset - z0 * tan_tilt, dw = -(z1 - z0) * tan_tilt
    cdef double qa = dr * dr - dw * dw
    cdef double qb = 2.0 * (r0 * dr - w0 * dw)
    cdef double qc = r0 * r0 - w0 * w0
    cdef double disc = sqrt(fmax(qb * qb - 4.0 * qa * qc, 0.0))
    cdef double qq = -0.5 * ((qb + copysign(disc, qb)) if qb != 0 else disc)
    cdef double t1 = qq / qa if qa != 0 else INFINITY
    cdef double t2 = qc / qq if qq != 0 else INFINITY
    cdef double best = 0.5, gap = INFINITY, g
    if isfinite(t1):
        g = fabs(fmin(fmax(t1, 0.0), 1.0) - t1)
        if g < gap:
            best, gap = t1, g
    if isfinite(t2):
        g = fabs(fmin(fmax(t2, 0.0), 1.0) - t2)
        if g < gap:
            best, gap = t2, g
    return fmin(fmax(best, 0.0), 1.0)


def tangent_crossing(double r0, double r1, double z0, double z1, double offset, double tan_tilt):
    return _tangent_crossing(r0, r1, z0, z1, offset, tan_tilt)


cdef inline bint _hit(double r, double w, double tol, double *u):
    cdef double r2 = r * r, disc = r2 - w * w, dn
    if r2 > 0:
        dn = disc / r2
    elif fabs(w) <= 1e-12:
        dn = 0.0
    else:
        dn = -1.0
    u[0] = sqrt(disc if disc > 0 else 0.0) if dn > tol else 0.0
    return dn >= -tol


cdef Py_ssize_t _section(const double[:, ::1] p, const cnp.npy_bool[::1] mv, double offset, double tan_tilt,
                         double tol, double[:, ::1] out, list bounds):
    # rows of out are (u, w, z); returns the number of rows written
    cdef Py_ssize_t n = p.shape[0], i, j, a, m = 0, chain_start
    cdef double ui, wi, t, zt
    cdef bint h, h_prev
    i = 0
    while i < n - 1:
        if mv[i]:
            i += 1
            continue
        # run of non-missing segments: points a..j
        a = i
        j = i
        while j < n - 1 and not mv[j]:
            j += 1
        chain_start = m
        h_prev = False
        for i in range(a, j + 1):
            wi = offset - p[i, 1] * tan_tilt
            h = _hit(p[i, 0], wi, tol, &ui)
            if i > a and h != h_prev:
                t = _tangent_crossing(p[i - 1, 0], p[i, 0], p[i - 1, 1], p[i, 1], offset, tan_tilt)
                zt = p[i - 1, 1] + t * (p[i, 1] - p[i - 1, 1])
                if h and t >= 1.0:
                    # tangency at this very point: keep the point ahead of its twin
                    out[m, 0], out[m, 1], out[m, 2] = ui, wi, p[i, 1]
                    out[m + 1, 0], out[m + 1, 1], out[m + 1, 2] = 0.0, offset - zt * tan_tilt, zt
                    m += 2
                    h_prev = h
                    continue
                out[m, 0], out[m, 1], out[m, 2] = 0.0, offset - zt * tan_tilt, zt
                m += 1
            if h:
                out[m, 0], out[m, 1], out[m, 2] = ui, wi, p[i, 1]
                m += 1
            h_prev = h
        if m - chain_start >= 2:
            bounds.append(m)
        else:
            m = chain_start
        i = j
    return m


def section_polyline(r, z, missing, double offset, double tan_tilt, double tol):
    p = np.ascontiguousarray(np.column_stack([np.asarray(r, dtype=np.float64), np.asarray(z, dtype=np.float64)]))
    out = np.empty((2 * len(p) + 1, 3))
    bounds = [0]
    cdef Py_ssize_t m = _section(p, np.ascontiguousarray(missing, dtype=np.bool_), offset, tan_tilt, tol, out,
                                 bounds)
    return out[:m, 0].copy(), out[:m, 1].copy(), out[:m, 2].copy(), np.array(bounds, dtype=np.int64)


def section_planar(points, missing, double offset, double tan_tilt, double tol, double cos_t, double sin_t,
                   origin=None):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i, m
    cdef double ox = 0.0, oy = 0.0
    out_arr = np.empty((2 * n + 1, 3))
    cdef double[:, ::1] out = out_arr
    bounds = [0]
    m = _section(p, np.ascontiguousarray(missing, dtype=np.bool_), offset, tan_tilt, tol, out, bounds)
    if origin is not None:
        ox, oy = origin
    elif m:
        ox, oy = out[0, 0], out[0, 2] * cos_t - out[0, 1] * sin_t
    xy_arr = np.empty((m, 2))
    cdef double[:, ::1] xy = xy_arr
    for i in range(m):
        xy[i, 0] = out[i, 0] - ox
        xy[i, 1] = out[i, 2] * cos_t - out[i, 1] * sin_t - oy
    return xy_arr, bounds, (ox, oy)


def section_outline(sides, double offset, double tan_tilt, double tol, double cos_t, double sin_t, origin=None):
    cdef const double[:, ::1] p
    cdef double[:, ::1] out
    cdef double[:, ::1] xy
    cdef cnp.int8_t[::1] cv
    cdef double ox = 0.0, oy = 0.0, x, y, x0 = 0.0, y0 = 0.0, chord = 0.0
    cdef Py_ssize_t i, k, lo, hi, q = 0, total = 0, m
    cdef cnp.int8_t code, brk = 2  # break side code
    done = []
    for points, missing, c in sides:
        p = np.ascontiguousarray(points, dtype=np.float64)
        out = np.empty((2 * p.shape[0] + 1, 3))
        bounds = [0]
        m = _section(p, np.ascontiguousarray(missing, dtype=np.bool_), offset, tan_tilt, tol, out, bounds)
        done.append((out, bounds, c))
        total += m + max(len(bounds) - 2, 0)
    have_origin = origin is not None
    if have_origin:
        ox, oy = origin
    xy_arr = np.empty((total, 2))
    codes = np.empty(total, dtype=np.int8)
    xy = xy_arr
    cv = codes
    counts = []
    for out, bounds, c in done:
        code = c
        m = bounds[len(bounds) - 1]  # no negative indexing under wraparound=False
        counts.append(m)
        if m and not have_origin:
            ox, oy = out[0, 0], out[0, 2] * cos_t - out[0, 1] * sin_t
            have_origin = True
        for k in range(len(bounds) - 1):
            lo = bounds[k]
            hi = bounds[k + 1]
            x0 = out[lo, 0] - ox
            y0 = out[lo, 2] * cos_t - out[lo, 1] * sin_t - oy
            if k > 0:  # break point midway between consecutive chains
                xy[q, 0] = 0.5 * (xy[q - 1, 0] + x0)
                xy[q, 1] = 0.5 * (xy[q - 1, 1] + y0)
                cv[q] = brk
                q += 1
            for i in range(lo, hi):
                x = out[i, 0] - ox
                y = out[i, 2] * cos_t - out[i, 1] * sin_t - oy
                xy[q, 0] = x
                xy[q, 1] = y
                cv[q] = code
                q += 1
            chord += hypot(x - x0, y - y0)
    return xy_arr, codes, counts, chord


def clip_polyline(points, double a, double b, double c):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t n = p.shape[0], i, m = 0
    out_arr = np.empty((2 * n + 1, 2))
    piece_arr = np.empty(2 * n + 1, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef cnp.int64_t[::1] piece = piece_arr
    cdef cnp.int64_t cur = -1
    cdef double f_prev = 0.0, f, t
    cdef bint in_prev = False, inside
    for i in range(n):
        f = a * p[i, 0] + b * p[i, 1] + c
        inside = f > 0
        if i > 0 and inside != in_prev:
            t = f_prev / (f_prev - f)
            if inside:
                cur += 1
            out[m, 0] = p[i - 1, 0] + t * (p[i, 0] - p[i - 1, 0])
            out[m, 1] = p[i - 1, 1] + t * (p[i, 1] - p[i - 1, 1])
            piece[m] = cur
            m += 1
        if inside:
            if i == 0:
                cur += 1
            out[m, 0] = p[i, 0]
            out[m, 1] = p[i, 1]
            piece[m] = cur
            m += 1
        f_prev = f
        in_prev = inside
    return out_arr[:m].copy(), piece_arr[:m].copy()


cdef inline Py_ssize_t _bisect_right(const double[::1] g, double s, Py_ssize_t lo, Py_ssize_t hi) noexcept nogil:
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if s < g[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


cdef inline void _interp(const double[:, ::1] p, const double[::1] g, Py_ssize_t lo, Py_ssize_t hi,
                         double s, double* x, double* y) noexcept nogil:
    # global search matches numpy.searchsorted over the whole array
    cdef Py_ssize_t j = _bisect_right(g, s, 0, g.shape[0]) - 1
    cdef double seg, t
    if j < lo:
        j = lo
    if j > hi - 2:
        j = hi - 2
    seg = g[j + 1] - g[j]
    t = (s - g[j]) / seg if seg > 0 else 0.0
    x[0] = p[j, 0] + t * (p[j + 1, 0] - p[j, 0])
    y[0] = p[j, 1] + t * (p[j + 1, 1] - p[j, 1])


def sample_runs(points, garc, run_start, run_end, positions, double spacing):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    cdef const double[::1] g = np.ascontiguousarray(garc, dtype=np.float64)
    cdef const cnp.int64_t[::1] rs = np.ascontiguousarray(run_start, dtype=np.int64)
    cdef const cnp.int64_t[::1] re = np.ascontiguousarray(run_end, dtype=np.int64)
    cdef const double[::1] pos = np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t m = pos.shape[0], nr = rs.shape[0], k, ri, lo, hi
    xy_arr = np.empty((m, 2))
    run_arr = np.empty(m, dtype=np.int64)
    sin_arr = np.empty(m)
    cos_arr = np.empty(m)
    cdef double[:, ::1] xy = xy_arr
    cdef cnp.int64_t[::1] run = run_arr
    cdef double[::1] sn = sin_arr
    cdef double[::1] cs = cos_arr
    cdef double s, a0, a1, px, py, ax, ay, bx, by, na, nb, cr, dt, nrm, v
    for k in range(m):
        v = pos[k]
        # searchsorted(first, v, 'right') - 1 over run starts
        lo = 0
        hi = nr
        while lo < hi:
            ri = (lo + hi) >> 1
            if v < g[rs[ri]]:
                hi = ri
            else:
                lo = ri + 1
        ri = lo - 1
        if ri < 0:
            ri = 0
        if ri > nr - 1:
            ri = nr - 1
        lo = rs[ri]
        hi = re[ri]
        a0 = g[lo]
        a1 = g[hi - 1]
        s = v
        if s < a0:
            s = a0
        if s > a1:
            s = a1
        _interp(p, g, lo, hi, s, &px, &py)
        _interp(p, g, lo, hi, s - spacing if s - spacing > a0 else a0, &ax, &ay)
        _interp(p, g, lo, hi, s + spacing if s + spacing < a1 else a1, &bx, &by)
        ax -= px
        ay -= py
        bx -= px
        by -= py
        na = hypot(ax, ay)
        nb = hypot(bx, by)
        if na > 0 and nb > 0:
            cr = bx * ay - by * ax
            dt = bx * ax + by * ay
            nrm = hypot(cr, dt)
            if nrm > 0:
                sn[k] = cr / nrm
                cs[k] = dt / nrm
            else:
                sn[k] = cr
                cs[k] = dt
        else:
            sn[k] = 0.0
            cs[k] = -1.0
        xy[k, 0] = px
        xy[k, 1] = py
        run[k] = ri
    return xy_arr, run_arr, sin_arr, cos_arr


def _maxpool_forward(real[:, :, ::1] h, real[:, ::1] out, cnp.int64_t[:, ::1] idx):
    cdef Py_ssize_t B = h.shape[0], K = h.shape[1], F = h.shape[2], b, k, f
    with nogil:
        for b in range(B):
            for f in range(F):
                out[b, f] = h[b, 0, f]
                idx[b, f] = 0
            for k in range(1, K):
                for f in range(F):
                    if h[b, k, f] > out[b, f]:
                        out[b, f] = h[b, k, f]
                        idx[b, f] = k


def _maxpool_backward(real[:, ::1] grad, const cnp.int64_t[:, ::1] idx, real[:, :, ::1] dh):
    cdef Py_ssize_t B = grad.shape[0], F = grad.shape[1], b, f
    with nogil:
        for b in range(B):
            for f in range(F):
                dh[b, idx[b, f], f] = grad[b, f]


def maxpool_forward(h):
    h = np.ascontiguousarray(h)
    if h.dtype not in (np.float32, np.float64):
        h = h.astype(np.float64)
    out = np.empty((h.shape[0], h.shape[2]), dtype=h.dtype)
    idx = np.empty((h.shape[0], h.shape[2]), dtype=np.int64)
    if h.shape[1] == 0:
        raise ValueError("max-pool over zero points")
    _maxpool_forward(h, out, idx)
    return out, idx


def maxpool_backward(grad, idx, Py_ssize_t k):
    grad = np.ascontiguousarray(grad)
    if grad.dtype not in (np.float32, np.float64):
        grad = grad.astype(np.float64)
    dh = np.zeros((grad.shape[0], k, grad.shape[1]), dtype=grad.dtype)
    _maxpool_backward(grad, np.ascontiguousarray(idx, dtype=np.int64), dh)
    return dh
