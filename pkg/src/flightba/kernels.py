"""Hot numeric kernels with a numba path and a pure-numpy path.

The backend is chosen once at import time. Set ``FLIGHTBA_NUMBA=0`` to force
the numpy path (numba is also skipped automatically when it is not
installed). Both paths take and return the same arrays, and the test-suite
checks them against each other.

Camera arrays used throughout:

* ``R``      (M, 3, 3) world->camera rotations
* ``t``      (M, 3)    world->camera translations
* ``intr``   (M, 6)    ``fx, fy, cx, cy, k1, k2``
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

_FLAG = os.environ.get("FLIGHTBA_NUMBA", "1").strip().lower()
USE_NUMBA = _HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")

if _HAVE_NUMBA:
    njit = numba.njit(cache=True, nogil=True)
else:  # pragma: no cover
    def njit(func):
        return func


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# projection with Jacobians


def project_jac_numpy(R, t, intr, cam, pts):
    """Project ``pts[i]`` into camera ``cam[i]``.

    Returns ``uv (n,2)``, ``depth (n,)``, ``J_cam (n,2,6)`` w.r.t. a left
    rotation increment and a translation increment, and ``J_pt (n,2,3)``.
    Rows with non-positive depth are zero-filled.
    """
    Rc = R[cam]
    rx = np.einsum("nij,nj->ni", Rc, pts)
    xc = rx + t[cam]
    z = xc[:, 2]
    ok = z > 0
    zs = np.where(ok, z, 1.0)
    xn = xc[:, 0] / zs
    yn = xc[:, 1] / zs
    k = intr[cam]
    fx, fy, cx, cy, k1, k2 = (k[:, i] for i in range(6))
    r2 = xn * xn + yn * yn
    d = 1.0 + k1 * r2 + k2 * r2 * r2
    dd = k1 + 2.0 * k2 * r2
    uv = np.stack([fx * xn * d + cx, fy * yn * d + cy], axis=1)

    # d(uv)/d(xn, yn)
    a00 = fx * (d + 2.0 * xn * xn * dd)
    a01 = fx * 2.0 * xn * yn * dd
    a10 = fy * 2.0 * xn * yn * dd
    a11 = fy * (d + 2.0 * yn * yn * dd)
    iz = 1.0 / zs
    P = np.empty((len(cam), 2, 3))
    P[:, 0, 0] = a00 * iz
    P[:, 0, 1] = a01 * iz
    P[:, 0, 2] = -(a00 * xn + a01 * yn) * iz
    P[:, 1, 0] = a10 * iz
    P[:, 1, 1] = a11 * iz
    P[:, 1, 2] = -(a10 * xn + a11 * yn) * iz

    Jc = np.empty((len(cam), 2, 6))
    # d(xc)/d(omega) = -[rx]_x  ->  P @ -skew(rx) = cross(rx, P_row)
    Jc[:, :, 0:3] = np.cross(rx[:, None, :], P)
    Jc[:, :, 3:6] = P
    Jp = np.einsum("nij,njk->nik", P, Rc)

    uv[~ok] = 0.0
    Jc[~ok] = 0.0
    Jp[~ok] = 0.0
    return uv, z, Jc, Jp


@njit
def _project_jac_loop(R, t, intr, cam, pts):
    n = cam.shape[0]
    uv = np.zeros((n, 2))
    depth = np.empty(n)
    Jc = np.zeros((n, 2, 6))
    Jp = np.zeros((n, 2, 3))
    for i in range(n):
        c = cam[i]
        rx0 = R[c, 0, 0] * pts[i, 0] + R[c, 0, 1] * pts[i, 1] + R[c, 0, 2] * pts[i, 2]
        rx1 = R[c, 1, 0] * pts[i, 0] + R[c, 1, 1] * pts[i, 1] + R[c, 1, 2] * pts[i, 2]
        rx2 = R[c, 2, 0] * pts[i, 0] + R[c, 2, 1] * pts[i, 1] + R[c, 2, 2] * pts[i, 2]
        X = rx0 + t[c, 0]
        Y = rx1 + t[c, 1]
        Z = rx2 + t[c, 2]
        depth[i] = Z
        if Z <= 0.0:
            continue
        fx = intr[c, 0]
        fy = intr[c, 1]
        k1 = intr[c, 4]
        k2 = intr[c, 5]
        iz = 1.0 / Z
        xn = X * iz
        yn = Y * iz
        r2 = xn * xn + yn * yn
        d = 1.0 + k1 * r2 + k2 * r2 * r2
        dd = k1 + 2.0 * k2 * r2
        uv[i, 0] = fx * xn * d + intr[c, 2]
        uv[i, 1] = fy * yn * d + intr[c, 3]
        a00 = fx * (d + 2.0 * xn * xn * dd)
        a01 = fx * 2.0 * xn * yn * dd
        a10 = fy * 2.0 * xn * yn * dd
        a11 = fy * (d + 2.0 * yn * yn * dd)
        P = np.empty((2, 3))
        P[0, 0] = a00 * iz
        P[0, 1] = a01 * iz
        P[0, 2] = -(a00 * xn + a01 * yn) * iz
        P[1, 0] = a10 * iz
        P[1, 1] = a11 * iz
        P[1, 2] = -(a10 * xn + a11 * yn) * iz
        for r in range(2):
            p0 = P[r, 0]
            p1 = P[r, 1]
            p2 = P[r, 2]
            Jc[i, r, 0] = rx1 * p2 - rx2 * p1
            Jc[i, r, 1] = rx2 * p0 - rx0 * p2
            Jc[i, r, 2] = rx0 * p1 - rx1 * p0
            Jc[i, r, 3] = p0
            Jc[i, r, 4] = p1
            Jc[i, r, 5] = p2
            for col in range(3):
                Jp[i, r, col] = p0 * R[c, 0, col] + p1 * R[c, 1, col] + p2 * R[c, 2, col]
    return uv, depth, Jc, Jp


def project_jac_numba(R, t, intr, cam, pts):
    return _project_jac_loop(
        np.ascontiguousarray(R, dtype=np.float64),
        np.ascontiguousarray(t, dtype=np.float64),
        np.ascontiguousarray(intr, dtype=np.float64),
        np.ascontiguousarray(cam, dtype=np.int64),
        np.ascontiguousarray(pts, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# plain batch projection (no Jacobians)


def project_numpy(R, t, intr, cam, pts):
    xc = np.einsum("nij,nj->ni", R[cam], pts) + t[cam]
    z = xc[:, 2]
    zs = np.where(z > 0, z, 1.0)
    xn = xc[:, 0] / zs
    yn = xc[:, 1] / zs
    k = intr[cam]
    r2 = xn * xn + yn * yn
    d = 1.0 + k[:, 4] * r2 + k[:, 5] * r2 * r2
    uv = np.stack([k[:, 0] * xn * d + k[:, 2], k[:, 1] * yn * d + k[:, 3]], axis=1)
    uv[z <= 0] = 0.0
    return uv, z


# ---------------------------------------------------------------------------
# min over candidates


def _loss_numpy(s, code, delta):
    if code == 0:
        return s
    return np.where(s <= delta * delta, s, 2.0 * delta * np.sqrt(s) - delta * delta)


@njit
def _loss_scalar(s, code, delta):
    if code == 0 or s <= delta * delta:
        return s
    return 2.0 * delta * np.sqrt(s) - delta * delta


def min_candidates_numpy(uv, ok, cands, offsets, code, delta, sat):
    """Per observation: min robust loss over its candidate slice and argmin.

    Observation ``i`` owns ``cands[offsets[i]:offsets[i+1]]``. Empty slices give
    ``(0, -1)``; observations with ``ok[i]`` false give ``(sat, -1)``.
    """
    n = len(uv)
    counts = np.diff(offsets)
    value = np.zeros(n)
    arg = np.full(n, -1, dtype=np.int64)
    if cands.shape[0] == 0:
        has = counts > 0
        value[has & ~ok] = sat
        return value, arg
    owner = np.repeat(np.arange(n), counts)
    diff = cands - uv[owner]
    s = np.einsum("ij,ij->i", diff, diff)
    best = np.full(n, np.inf)
    np.minimum.at(best, owner, s)
    # first index attaining the minimum, matching a sequential scan
    hit = s == best[owner]
    local = np.arange(len(s)) - offsets[owner]
    first = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first, owner[hit], local[hit])
    has = counts > 0
    good = has & ok
    value[good] = _loss_numpy(best[good], code, delta)
    arg[good] = first[good]
    value[has & ~ok] = sat
    return value, arg


@njit
def _min_candidates_loop(uv, ok, cands, offsets, code, delta, sat):
    n = uv.shape[0]
    value = np.zeros(n)
    arg = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        a = offsets[i]
        b = offsets[i + 1]
        if b == a:
            continue
        if not ok[i]:
            value[i] = sat
            continue
        best = np.inf
        bi = -1
        for j in range(a, b):
            dx = cands[j, 0] - uv[i, 0]
            dy = cands[j, 1] - uv[i, 1]
            s = dx * dx + dy * dy
            if s < best:
                best = s
                bi = j - a
        value[i] = _loss_scalar(best, code, delta)
        arg[i] = bi
    return value, arg


def min_candidates_numba(uv, ok, cands, offsets, code, delta, sat):
    cands = np.ascontiguousarray(cands, dtype=np.float64).reshape(-1, 2)
    return _min_candidates_loop(
        np.ascontiguousarray(uv, dtype=np.float64),
        np.ascontiguousarray(ok, dtype=np.bool_),
        cands,
        np.ascontiguousarray(offsets, dtype=np.int64),
        int(code),
        float(delta),
        float(sat),
    )


# ---------------------------------------------------------------------------
# RANSAC hypothesis scoring


def score_hypotheses_numpy(R, t, intr, X, cands, counts, code, delta, sat):
    """Sum over cameras of the min-over-candidates loss, per hypothesis.

    ``cands`` is padded to (M, K, 2) with ``counts[j]`` valid rows per camera.
    Hypotheses containing NaN score ``inf``.
    """
    N = len(X)
    M = len(R)
    if N == 0:
        return np.zeros(0)
    cam = np.tile(np.arange(M), N)
    pts = np.repeat(X, M, axis=0)
    uv, z = project_numpy(R, t, intr, cam, np.nan_to_num(pts))
    uv = uv.reshape(N, M, 2)
    z = z.reshape(N, M)
    K = cands.shape[1]
    diff = uv[:, :, None, :] - cands[None, :, :, :]
    s = np.einsum("nmkc,nmkc->nmk", diff, diff)
    valid = np.arange(K)[None, :] < counts[:, None]
    s = np.where(valid[None], s, np.inf)
    smin = s.min(axis=2) if K else np.full((N, M), np.inf)
    has = counts > 0
    per = np.where(z > 0, _loss_numpy(np.where(np.isfinite(smin), smin, 0.0), code, delta), sat)
    per = np.where(has[None, :], per, 0.0)
    score = per.sum(axis=1)
    score[np.isnan(X).any(axis=1)] = np.inf
    return score


@njit
def _score_loop(R, t, intr, X, cands, counts, code, delta, sat):
    N = X.shape[0]
    M = R.shape[0]
    out = np.zeros(N)
    for h in range(N):
        x0 = X[h, 0]
        x1 = X[h, 1]
        x2 = X[h, 2]
        if np.isnan(x0) or np.isnan(x1) or np.isnan(x2):
            out[h] = np.inf
            continue
        total = 0.0
        for c in range(M):
            if counts[c] == 0:
                continue
            X_ = R[c, 0, 0] * x0 + R[c, 0, 1] * x1 + R[c, 0, 2] * x2 + t[c, 0]
            Y_ = R[c, 1, 0] * x0 + R[c, 1, 1] * x1 + R[c, 1, 2] * x2 + t[c, 1]
            Z_ = R[c, 2, 0] * x0 + R[c, 2, 1] * x1 + R[c, 2, 2] * x2 + t[c, 2]
            if Z_ <= 0.0:
                total += sat
                continue
            xn = X_ / Z_
            yn = Y_ / Z_
            r2 = xn * xn + yn * yn
            d = 1.0 + intr[c, 4] * r2 + intr[c, 5] * r2 * r2
            u = intr[c, 0] * xn * d + intr[c, 2]
            v = intr[c, 1] * yn * d + intr[c, 3]
            best = np.inf
            for k in range(counts[c]):
                du = u - cands[c, k, 0]
                dv = v - cands[c, k, 1]
                s = du * du + dv * dv
                if s < best:
                    best = s
            total += _loss_scalar(best, code, delta)
        out[h] = total
    return out


def score_hypotheses_numba(R, t, intr, X, cands, counts, code, delta, sat):
    return _score_loop(
        np.ascontiguousarray(R, dtype=np.float64),
        np.ascontiguousarray(t, dtype=np.float64),
        np.ascontiguousarray(intr, dtype=np.float64),
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(cands, dtype=np.float64),
        np.ascontiguousarray(counts, dtype=np.int64),
        int(code),
        float(delta),
        float(sat),
    )


if USE_NUMBA:
    project_jac = project_jac_numba
    min_candidates = min_candidates_numba
    score_hypotheses = score_hypotheses_numba
else:
    project_jac = project_jac_numpy
    min_candidates = min_candidates_numpy
    score_hypotheses = score_hypotheses_numpy
