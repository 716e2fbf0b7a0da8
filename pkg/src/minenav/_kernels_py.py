"""Pure numpy versions of the compiled kernels.

Same signatures and results as ``_kernels`` (up to floating-point summation
order). Used when the extension is not built or MINENAV_PURE_PYTHON is set.
"""
from __future__ import annotations

import numpy as np

HIT_NONE = -1
HIT_FLOOR = 0
HIT_WALL = 1
HIT_CEILING = 2


def cast_rays(occ, floor_z, ceil_z, origin_x, origin_y, res, sx, sy, sz, dirs, rmax):
    """Vectorised DDA: all rays advance one cell per loop iteration."""
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(dirs)
    H, W = occ.shape
    ranges = np.full(n, np.nan)
    kinds = np.full(n, -1, dtype=np.int8)
    if n == 0:
        return ranges, kinds
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    gx = (sx - origin_x) / res
    gy = (sy - origin_y) / res
    i0, j0 = int(np.floor(gy)), int(np.floor(gx))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_dx = np.where(dx != 0, res / np.abs(dx), np.inf)
        t_dy = np.where(dy != 0, res / np.abs(dy), np.inf)
        t_mx = np.where(dx > 0, ((j0 + 1) - gx) * res / dx,
                        np.where(dx < 0, (gx - j0) * res / -dx, np.inf))
        t_my = np.where(dy > 0, ((i0 + 1) - gy) * res / dy,
                        np.where(dy < 0, (gy - i0) * res / -dy, np.inf))
    step_j = np.sign(dx).astype(np.int64)
    step_i = np.sign(dy).astype(np.int64)
    ii = np.full(n, i0, dtype=np.int64)
    jj = np.full(n, j0, dtype=np.int64)
    t_enter = np.zeros(n)
    active = np.arange(n)

    def _record(idx, t, kind):
        ok = t < rmax
        ranges[idx[ok]] = t[ok]
        kinds[idx[ok]] = kind

    while active.size:
        a = active
        t_exit = np.minimum(t_mx[a], t_my[a])
        fz = floor_z[ii[a], jj[a]]
        cz = ceil_z[ii[a], jj[a]]
        z_in = sz + dz[a] * t_enter[a]
        done = np.zeros(a.size, dtype=bool)

        below = z_in <= fz
        _record(a[below], t_enter[a][below], HIT_FLOOR)
        done |= below
        above = ~done & (z_in >= cz)
        _record(a[above], t_enter[a][above], HIT_CEILING)
        done |= above
        with np.errstate(divide="ignore", invalid="ignore"):
            tf = (fz - sz) / dz[a]
            tc = (cz - sz) / dz[a]
        fl = ~done & (dz[a] < 0) & (tf <= t_exit)
        _record(a[fl], tf[fl], HIT_FLOOR)
        done |= fl
        ce = ~done & (dz[a] > 0) & (tc <= t_exit)
        _record(a[ce], tc[ce], HIT_CEILING)
        done |= ce
        done |= t_exit >= rmax

        go = a[~done]
        if go.size == 0:
            break
        step_x = t_mx[go] < t_my[go]
        gx_idx, gy_idx = go[step_x], go[~step_x]
        jj[gx_idx] += step_j[gx_idx]
        t_enter[gx_idx] = t_mx[gx_idx]
        t_mx[gx_idx] += t_dx[gx_idx]
        ii[gy_idx] += step_i[gy_idx]
        t_enter[gy_idx] = t_my[gy_idx]
        t_my[gy_idx] += t_dy[gy_idx]
        inb = (ii[go] >= 0) & (jj[go] >= 0) & (ii[go] < H) & (jj[go] < W)
        go = go[inb]
        wall = occ[ii[go], jj[go]].astype(bool)
        _record(go[wall], t_enter[go[wall]], HIT_WALL)
        active = go[~wall]
    return ranges, kinds


_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_OFFSETS = np.array([(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)])


def ndt_derivatives(pts, R, t, dR, d2R, lookup, origin, voxel, means, icov, want_derivs):
    pts = np.asarray(pts, dtype=np.float64)
    x = pts @ R.T + t
    base = np.floor((x - origin) / voxel).astype(np.int64)
    cells = base[:, None, :] + _OFFSETS[None, :, :]
    dims = np.array(lookup.shape)
    inb = np.all((cells >= 0) & (cells < dims), axis=2)
    pi, oi = np.nonzero(inb)
    c = cells[pi, oi]
    vox = lookup[c[:, 0], c[:, 1], c[:, 2]]
    keep = vox >= 0
    pi, vox = pi[keep], vox[keep]
    q = x[pi] - means[vox]
    C = icov[vox]
    cq = np.einsum("kij,kj->ki", C, q)
    s = np.exp(-0.5 * np.einsum("ki,ki->k", q, cq))
    sig = s >= 1e-12
    pi, vox, q, C, cq, s = pi[sig], vox[sig], q[sig], C[sig], cq[sig], s[sig]
    score = float(s.sum())
    grad = np.zeros(6)
    hess = np.zeros((6, 6))
    if not want_derivs or s.size == 0:
        return score, grad, hess
    p = pts[pi]
    ja = np.einsum("aij,kj->kai", dR, p)          # (K, 3 angles, 3)
    hb = np.einsum("eij,kj->kei", d2R, p)         # (K, 6 pairs, 3)
    J = np.concatenate([np.broadcast_to(np.eye(3), (len(p), 3, 3)), ja], axis=1)  # (K, 6, 3)
    b = np.einsum("kai,ki->ka", J, cq)
    grad = -(s[:, None] * b).sum(axis=0)
    cJ = np.einsum("kij,kaj->kai", C, J)
    jcj = np.einsum("kai,kbi->kab", J, cJ)
    outer = b[:, :, None] * b[:, None, :]
    hess = np.einsum("k,kab->ab", s, outer - jcj)
    second = np.einsum("kei,ki->ke", hb, cq)
    sec = (s[:, None] * second).sum(axis=0)
    for e, (a, c_) in enumerate(_PAIRS):
        hess[3 + a, 3 + c_] -= sec[e]
        if a != c_:
            hess[3 + c_, 3 + a] -= sec[e]
    return score, grad, hess


def _on_boundary(px, py, edges, tol):
    c = edges[:, :2]
    d = edges[:, 2:]
    e = d - c
    l2 = np.einsum("ij,ij->i", e, e)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(l2 > 0, ((px - c[:, 0]) * e[:, 0] + (py - c[:, 1]) * e[:, 1]) / l2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    qx = c[:, 0] + u * e[:, 0] - px
    qy = c[:, 1] + u * e[:, 1] - py
    return bool(np.any(qx * qx + qy * qy <= tol * tol))


def _inside(px, py, edges, edge_poly, n_poly, tol):
    if _on_boundary(px, py, edges, tol):
        return False
    cy, dy = edges[:, 1], edges[:, 3]
    cx, dx = edges[:, 0], edges[:, 2]
    straddle = (cy > py) != (dy > py)
    if not straddle.any():
        return False
    cx, cy, dx, dy = cx[straddle], cy[straddle], dx[straddle], dy[straddle]
    xint = cx + (py - cy) * (dx - cx) / (dy - cy)
    hits = edge_poly[straddle][px < xint]
    parity = np.bincount(hits, minlength=n_poly) % 2
    return bool(parity.any())


def _sgn(v, tol):
    return np.where(v > tol, 1, np.where(v < -tol, -1, 0))


def _visible(ax, ay, bx, by, edges, edge_poly, n_poly, tol):
    abx, aby = bx - ax, by - ay
    L2 = abx * abx + aby * aby
    L = np.sqrt(L2)
    if L <= tol:
        return not _inside(ax, ay, edges, edge_poly, n_poly, tol)
    t_tol = tol / L
    cx, cy, dx, dy = edges[:, 0], edges[:, 1], edges[:, 2], edges[:, 3]
    minx, maxx = min(ax, bx) - tol, max(ax, bx) + tol
    miny, maxy = min(ay, by) - tol, max(ay, by) + tol
    near = ~(((cx < minx) & (dx < minx)) | ((cx > maxx) & (dx > maxx))
             | ((cy < miny) & (dy < miny)) | ((cy > maxy) & (dy > maxy)))
    cx, cy, dx, dy = cx[near], cy[near], dx[near], dy[near]
    s1 = _sgn((abx * (cy - ay) - aby * (cx - ax)) / L, tol)
    s2 = _sgn((abx * (dy - ay) - aby * (dx - ax)) / L, tol)
    cdx, cdy = dx - cx, dy - cy
    lcd = np.sqrt(cdx * cdx + cdy * cdy)
    with np.errstate(divide="ignore", invalid="ignore"):
        s3 = _sgn((cdx * (ay - cy) - cdy * (ax - cx)) / lcd, tol)
        s4 = _sgn((cdx * (by - cy) - cdy * (bx - cx)) / lcd, tol)
    if np.any((s1 * s2 < 0) & (lcd > tol) & (s3 * s4 < 0)):
        return False
    touches = []
    for sel, qx, qy in ((s1 == 0, cx, cy), (s2 == 0, dx, dy)):
        tc = ((qx[sel] - ax) * abx + (qy[sel] - ay) * aby) / L2
        touches.append(tc[(tc > t_tol) & (tc < 1.0 - t_tol)])
    bounds = np.concatenate([[0.0], np.sort(np.concatenate(touches)), [1.0]])
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi - lo > t_tol:
            m = 0.5 * (lo + hi)
            if _inside(ax + m * abx, ay + m * aby, edges, edge_poly, n_poly, tol):
                return False
    return True


def segments_visible(segs, edges, edge_poly, n_poly, tol=1e-9):
    segs = np.asarray(segs, dtype=np.float64).reshape(-1, 4)
    edges = np.asarray(edges, dtype=np.float64).reshape(-1, 4)
    edge_poly = np.asarray(edge_poly, dtype=np.int32)
    out = np.ones(len(segs), dtype=np.uint8)
    if len(edges) == 0:
        return out
    for k, (ax, ay, bx, by) in enumerate(segs):
        out[k] = _visible(ax, ay, bx, by, edges, edge_poly, n_poly, tol)
    return out


def points_inside(pts, edges, edge_poly, n_poly, tol=1e-9):
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    edges = np.asarray(edges, dtype=np.float64).reshape(-1, 4)
    edge_poly = np.asarray(edge_poly, dtype=np.int32)
    out = np.zeros(len(pts), dtype=np.uint8)
    if len(edges) == 0:
        return out
    for k, (px, py) in enumerate(pts):
        out[k] = _inside(px, py, edges, edge_poly, n_poly, tol)
    return out
