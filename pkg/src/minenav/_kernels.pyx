# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: grid ray casting, NDT derivative accumulation and
segment visibility against polygon edges.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature and semantics; ``minenav.kernels`` picks one at import time.
"""
import numpy as np

from libc.math cimport exp, fabs, floor, sqrt, INFINITY
from libc.stdlib cimport free, malloc
from libc.string cimport memset

HIT_NONE = -1
HIT_FLOOR = 0
HIT_WALL = 1
HIT_CEILING = 2


def cast_rays(const unsigned char[:, ::1] occ,
              const double[:, ::1] floor_z,
              const double[:, ::1] ceil_z,
              double origin_x, double origin_y, double res,
              double sx, double sy, double sz,
              const double[:, ::1] dirs,
              double rmax):
    """Trace unit rays from (sx, sy, sz) through a 2.5D grid.

    Returns (ranges, kinds); kinds is -1 for no return within rmax.
    """
    cdef Py_ssize_t n = dirs.shape[0]
    cdef Py_ssize_t H = occ.shape[0], W = occ.shape[1]
    ranges_arr = np.full(n, np.nan, dtype=np.float64)
    kinds_arr = np.full(n, -1, dtype=np.int8)
    cdef double[::1] ranges = ranges_arr
    cdef signed char[::1] kinds = kinds_arr

    cdef double gx = (sx - origin_x) / res
    cdef double gy = (sy - origin_y) / res
    cdef Py_ssize_t i0 = <Py_ssize_t>floor(gy)
    cdef Py_ssize_t j0 = <Py_ssize_t>floor(gx)
    cdef Py_ssize_t r, i, j, step_i, step_j
    cdef double dx, dy, dz, t_max_x, t_max_y, t_dx, t_dy
    cdef double t_enter, t_exit, z_in, fz, cz, th
    cdef signed char kind
    cdef double hit_t

    for r in range(n):
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        i = i0
        j = j0
        if dx > 0:
            step_j = 1
            t_dx = res / dx
            t_max_x = ((j0 + 1) - gx) * res / dx
        elif dx < 0:
            step_j = -1
            t_dx = -res / dx
            t_max_x = (gx - j0) * res / (-dx)
        else:
            step_j = 0
            t_dx = INFINITY
            t_max_x = INFINITY
        if dy > 0:
            step_i = 1
            t_dy = res / dy
            t_max_y = ((i0 + 1) - gy) * res / dy
        elif dy < 0:
            step_i = -1
            t_dy = -res / dy
            t_max_y = (gy - i0) * res / (-dy)
        else:
            step_i = 0
            t_dy = INFINITY
            t_max_y = INFINITY

        t_enter = 0.0
        kind = -1
        hit_t = 0.0
        while True:
            t_exit = t_max_x if t_max_x < t_max_y else t_max_y
            fz = floor_z[i, j]
            cz = ceil_z[i, j]
            z_in = sz + dz * t_enter
            if z_in <= fz:
                kind = 0
                hit_t = t_enter
                break
            if z_in >= cz:
                kind = 2
                hit_t = t_enter
                break
            if dz < 0:
                th = (fz - sz) / dz
                if th <= t_exit:
                    kind = 0
                    hit_t = th
                    break
            elif dz > 0:
                th = (cz - sz) / dz
                if th <= t_exit:
                    kind = 2
                    hit_t = th
                    break
            if t_exit >= rmax:
                break
            if t_max_x < t_max_y:
                j += step_j
                t_enter = t_max_x
                t_max_x += t_dx
            else:
                i += step_i
                t_enter = t_max_y
                t_max_y += t_dy
            if i < 0 or j < 0 or i >= H or j >= W:
                break
            if occ[i, j]:
                kind = 1
                hit_t = t_enter
                break
        if kind >= 0 and hit_t < rmax:
            ranges[r] = hit_t
            kinds[r] = kind
    return ranges_arr, kinds_arr


def ndt_derivatives(const double[:, ::1] pts,
                    const double[:, ::1] R,
                    const double[::1] t,
                    const double[:, :, ::1] dR,
                    const double[:, :, ::1] d2R,
                    const int[:, :, ::1] lookup,
                    const double[::1] origin,
                    double voxel,
                    const double[:, ::1] means,
                    const double[:, :, ::1] icov,
                    bint want_derivs):
    """NDT score, gradient and Hessian over (x, y, z, roll, pitch, yaw).

    dR holds the three first derivatives of R, d2R the six unique second
    derivatives in the order (rr, rp, ry, pp, py, yy).
    """
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t nx = lookup.shape[0], ny = lookup.shape[1], nz = lookup.shape[2]
    grad_arr = np.zeros(6)
    hess_arr = np.zeros((6, 6))
    cdef double[::1] grad = grad_arr
    cdef double[:, ::1] hess = hess_arr
    cdef double score = 0.0
    cdef double px, py, pz, x0, x1, x2, q0, q1, q2, c0, c1, c2, m, s
    cdef double ja[3][3]
    cdef double hb[6][3]
    cdef double cj[3][3]
    cdef double b[6]
    cdef double jcj
    cdef Py_ssize_t k, a, c, u, e, ix, iy, iz, vx, vy, vz, di, dj, dk
    cdef int v
    cdef double inv_vox = 1.0 / voxel
    cdef int pair_a[6]
    cdef int pair_b[6]
    pair_a[:] = [0, 0, 0, 1, 1, 2]
    pair_b[:] = [0, 1, 2, 1, 2, 2]

    for k in range(n):
        px = pts[k, 0]
        py = pts[k, 1]
        pz = pts[k, 2]
        x0 = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        x1 = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        x2 = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        if want_derivs:
            for a in range(3):
                for c in range(3):
                    ja[a][c] = dR[a, c, 0] * px + dR[a, c, 1] * py + dR[a, c, 2] * pz
            for e in range(6):
                for c in range(3):
                    hb[e][c] = d2R[e, c, 0] * px + d2R[e, c, 1] * py + d2R[e, c, 2] * pz
        vx = <Py_ssize_t>floor((x0 - origin[0]) * inv_vox)
        vy = <Py_ssize_t>floor((x1 - origin[1]) * inv_vox)
        vz = <Py_ssize_t>floor((x2 - origin[2]) * inv_vox)
        for di in range(-1, 2):
            ix = vx + di
            if ix < 0 or ix >= nx:
                continue
            for dj in range(-1, 2):
                iy = vy + dj
                if iy < 0 or iy >= ny:
                    continue
                for dk in range(-1, 2):
                    iz = vz + dk
                    if iz < 0 or iz >= nz:
                        continue
                    v = lookup[ix, iy, iz]
                    if v < 0:
                        continue
                    q0 = x0 - means[v, 0]
                    q1 = x1 - means[v, 1]
                    q2 = x2 - means[v, 2]
                    c0 = icov[v, 0, 0] * q0 + icov[v, 0, 1] * q1 + icov[v, 0, 2] * q2
                    c1 = icov[v, 1, 0] * q0 + icov[v, 1, 1] * q1 + icov[v, 1, 2] * q2
                    c2 = icov[v, 2, 0] * q0 + icov[v, 2, 1] * q1 + icov[v, 2, 2] * q2
                    m = q0 * c0 + q1 * c1 + q2 * c2
                    s = exp(-0.5 * m)
                    if s < 1e-12:
                        continue
                    score += s
                    if not want_derivs:
                        continue
                    b[0] = c0
                    b[1] = c1
                    b[2] = c2
                    for a in range(3):
                        b[3 + a] = c0 * ja[a][0] + c1 * ja[a][1] + c2 * ja[a][2]
                        for c in range(3):
                            cj[a][c] = (icov[v, c, 0] * ja[a][0] + icov[v, c, 1] * ja[a][1]
                                        + icov[v, c, 2] * ja[a][2])
                    for a in range(6):
                        grad[a] -= s * b[a]
                    # translation block: C itself
                    for a in range(3):
                        for c in range(3):
                            hess[a, c] += s * (b[a] * b[c] - icov[v, a, c])
                    # mixed block
                    for a in range(3):
                        for c in range(3):
                            hess[a, 3 + c] += s * (b[a] * b[3 + c] - cj[c][a])
                    # rotation block
                    for e in range(6):
                        a = pair_a[e]
                        c = pair_b[e]
                        jcj = ja[a][0] * cj[c][0] + ja[a][1] * cj[c][1] + ja[a][2] * cj[c][2]
                        hess[3 + a, 3 + c] += s * (b[3 + a] * b[3 + c] - jcj
                                                   - (c0 * hb[e][0] + c1 * hb[e][1] + c2 * hb[e][2]))
    if want_derivs:
        for a in range(6):
            for c in range(a):
                hess[a, c] = hess[c, a]
    return score, grad_arr, hess_arr


cdef inline int _sgn(double v, double tol) nogil:
    if v > tol:
        return 1
    if v < -tol:
        return -1
    return 0


cdef bint _inside(double px, double py, const double[:, ::1] edges,
                  const int[::1] edge_poly, unsigned char* parity,
                  Py_ssize_t n_poly, double tol) nogil:
    """Strict interior test: points on any edge count as outside."""
    cdef Py_ssize_t e, E = edges.shape[0]
    cdef double cx, cy, dx, dy, ex, ey, l2, u, qx, qy, xint
    memset(parity, 0, n_poly)
    for e in range(E):
        cx = edges[e, 0]
        cy = edges[e, 1]
        dx = edges[e, 2]
        dy = edges[e, 3]
        if (px >= (cx if cx < dx else dx) - tol and px <= (cx if cx > dx else dx) + tol
                and py >= (cy if cy < dy else dy) - tol and py <= (cy if cy > dy else dy) + tol):
            ex = dx - cx
            ey = dy - cy
            l2 = ex * ex + ey * ey
            if l2 > 0:
                u = ((px - cx) * ex + (py - cy) * ey) / l2
                if u < 0:
                    u = 0
                elif u > 1:
                    u = 1
            else:
                u = 0
            qx = cx + u * ex - px
            qy = cy + u * ey - py
            if qx * qx + qy * qy <= tol * tol:
                return False
        if (cy > py) != (dy > py):
            xint = cx + (py - cy) * (dx - cx) / (dy - cy)
            if px < xint:
                parity[edge_poly[e]] ^= 1
    for e in range(n_poly):
        if parity[e]:
            return True
    return False


cdef bint _visible(double ax, double ay, double bx, double by,
                   const double[:, ::1] edges, const int[::1] edge_poly,
                   unsigned char* parity, Py_ssize_t n_poly,
                   double* touch, double tol) nogil:
    cdef Py_ssize_t e, E = edges.shape[0], nt = 0, p, q
    cdef double abx = bx - ax, aby = by - ay
    cdef double L2 = abx * abx + aby * aby
    cdef double L = sqrt(L2)
    cdef double minx, maxx, miny, maxy, cx, cy, dx, dy, cdx, cdy, lcd
    cdef double dc, dd, da, db, tc, t_tol, lo, hi, tmp
    cdef int s1, s2, s3, s4
    if L <= tol:
        return not _inside(ax, ay, edges, edge_poly, parity, n_poly, tol)
    t_tol = tol / L
    minx = (ax if ax < bx else bx) - tol
    maxx = (ax if ax > bx else bx) + tol
    miny = (ay if ay < by else by) - tol
    maxy = (ay if ay > by else by) + tol
    for e in range(E):
        cx = edges[e, 0]
        cy = edges[e, 1]
        dx = edges[e, 2]
        dy = edges[e, 3]
        if (cx < minx and dx < minx) or (cx > maxx and dx > maxx):
            continue
        if (cy < miny and dy < miny) or (cy > maxy and dy > maxy):
            continue
        dc = (abx * (cy - ay) - aby * (cx - ax)) / L
        dd = (abx * (dy - ay) - aby * (dx - ax)) / L
        s1 = _sgn(dc, tol)
        s2 = _sgn(dd, tol)
        if s1 * s2 > 0:
            continue
        cdx = dx - cx
        cdy = dy - cy
        lcd = sqrt(cdx * cdx + cdy * cdy)
        if s1 * s2 < 0 and lcd > tol:
            da = (cdx * (ay - cy) - cdy * (ax - cx)) / lcd
            db = (cdx * (by - cy) - cdy * (bx - cx)) / lcd
            s3 = _sgn(da, tol)
            s4 = _sgn(db, tol)
            if s3 * s4 < 0:
                return False
        if s1 == 0:
            tc = ((cx - ax) * abx + (cy - ay) * aby) / L2
            if t_tol < tc < 1.0 - t_tol:
                touch[nt] = tc
                nt += 1
        if s2 == 0:
            tc = ((dx - ax) * abx + (dy - ay) * aby) / L2
            if t_tol < tc < 1.0 - t_tol:
                touch[nt] = tc
                nt += 1
    # insertion sort of touch parameters
    for p in range(1, nt):
        tmp = touch[p]
        q = p - 1
        while q >= 0 and touch[q] > tmp:
            touch[q + 1] = touch[q]
            q -= 1
        touch[q + 1] = tmp
    lo = 0.0
    for p in range(nt + 1):
        hi = touch[p] if p < nt else 1.0
        if hi - lo > t_tol:
            tmp = 0.5 * (lo + hi)
            if _inside(ax + tmp * abx, ay + tmp * aby, edges, edge_poly, parity, n_poly, tol):
                return False
        lo = hi
    return True


def segments_visible(const double[:, ::1] segs,
                     const double[:, ::1] edges,
                     const int[::1] edge_poly,
                     Py_ssize_t n_poly,
                     double tol=1e-9):
    """For each segment (ax, ay, bx, by): 1 if its open interior avoids
    every polygon interior (touching boundaries is allowed)."""
    cdef Py_ssize_t m = segs.shape[0], k, E = edges.shape[0]
    out_arr = np.ones(m, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    if E == 0 or m == 0:
        return out_arr
    cdef unsigned char* parity = <unsigned char*>malloc(n_poly + 1)
    cdef double* touch = <double*>malloc((2 * E + 2) * sizeof(double))
    try:
        for k in range(m):
            out[k] = _visible(segs[k, 0], segs[k, 1], segs[k, 2], segs[k, 3],
                              edges, edge_poly, parity, n_poly, touch, tol)
    finally:
        free(parity)
        free(touch)
    return out_arr


def points_inside(const double[:, ::1] pts,
                  const double[:, ::1] edges,
                  const int[::1] edge_poly,
                  Py_ssize_t n_poly,
                  double tol=1e-9):
    """1 where a point lies strictly inside some polygon (boundary excluded)."""
    cdef Py_ssize_t m = pts.shape[0], k
    out_arr = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    if edges.shape[0] == 0 or m == 0:
        return out_arr
    cdef unsigned char* parity = <unsigned char*>malloc(n_poly + 1)
    try:
        for k in range(m):
            out[k] = _inside(pts[k, 0], pts[k, 1], edges, edge_poly, parity, n_poly, tol)
    finally:
        free(parity)
    return out_arr
