"""Compiled hot loops for RANSAC hypothesis generation and scoring.

The main kernel draws each hypothesis' triplet (from precomputed index
draws), solves the 3-point Kabsch alignment, and scores the pose against
every correspondence - all inside one parallel loop over hypotheses.
Iterations are independent, so the thread schedule cannot change any
per-hypothesis result: output is bit-identical for any thread count.
fastmath stays off to keep IEEE evaluation order, and no thread-identity
intrinsics are used (they would disable numba's on-disk cache, costing
seconds of JIT per fresh process).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_TINY = np.finfo(np.float64).tiny


@njit(cache=True)
def _det3(m):
    return (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
            - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
            + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))


@njit(cache=True)
def _rt_from_cov(cov, csx, csy, csz, cdx, cdy, cdz, rot, t):
    """Rotation/translation from a centered covariance; False if degenerate.

    det(R) = +1 enforced by flipping the smallest singular direction.
    Writes into rot (3,3) and t (3,).
    """
    u, s, vt = np.linalg.svd(cov)
    if not s[1] > 1e-12 * max(s[0], _TINY):
        return False
    sign = 1.0 if _det3(u) * _det3(vt) > 0.0 else -1.0
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(2):
                acc += vt[k, i] * u[j, k]
            acc += sign * vt[2, i] * u[j, 2]
            rot[i, j] = acc
    t[0] = cdx - (rot[0, 0] * csx + rot[0, 1] * csy + rot[0, 2] * csz)
    t[1] = cdy - (rot[1, 0] * csx + rot[1, 1] * csy + rot[1, 2] * csz)
    t[2] = cdz - (rot[2, 0] * csx + rot[2, 1] * csy + rot[2, 2] * csz)
    return True


@njit(cache=True)
def _score_pose(rot, t, src, src_n, dst, dst_n, thr2, cos_max):
    """Inlier count and inlier squared-distance sum for one pose.

    A correspondence is an inlier when the transformed source point lands
    within sqrt(thr2) of its scene point AND the rotated source normal is
    within the normal gate (dot >= cos_max) of the scene normal.
    """
    n = src.shape[0]
    cnt = 0
    acc = 0.0
    for i in range(n):
        x = rot[0, 0] * src[i, 0] + rot[0, 1] * src[i, 1] + rot[0, 2] * src[i, 2] + t[0]
        y = rot[1, 0] * src[i, 0] + rot[1, 1] * src[i, 1] + rot[1, 2] * src[i, 2] + t[1]
        z = rot[2, 0] * src[i, 0] + rot[2, 1] * src[i, 1] + rot[2, 2] * src[i, 2] + t[2]
        dx = x - dst[i, 0]
        dy = y - dst[i, 1]
        dz = z - dst[i, 2]
        d2 = dx * dx + dy * dy + dz * dz
        if d2 <= thr2:
            nx = rot[0, 0] * src_n[i, 0] + rot[0, 1] * src_n[i, 1] + rot[0, 2] * src_n[i, 2]
            ny = rot[1, 0] * src_n[i, 0] + rot[1, 1] * src_n[i, 1] + rot[1, 2] * src_n[i, 2]
            nz = rot[2, 0] * src_n[i, 0] + rot[2, 1] * src_n[i, 1] + rot[2, 2] * src_n[i, 2]
            ca = nx * dst_n[i, 0] + ny * dst_n[i, 1] + nz * dst_n[i, 2]
            if ca >= cos_max:
                cnt += 1
                acc += d2
    return cnt, acc


@njit(parallel=True, fastmath=False, cache=True)
def generate_and_score(draws, src, src_n, dst, dst_n, thr2, cos_max, area_min):
    """Per hypothesis: pick a non-degenerate triplet, Kabsch it, score it.

    draws is (H, retries, 3) precomputed correspondence indices; the first
    attempt whose source triplet spans area >= area_min (and yields a
    well-conditioned alignment) is used. Hypotheses that exhaust their
    retries are marked invalid (count -1).
    """
    n_hyp = draws.shape[0]
    n_retry = draws.shape[1]
    counts = np.full(n_hyp, -1, dtype=np.int64)
    ssq = np.zeros(n_hyp, dtype=np.float64)
    rotations = np.zeros((n_hyp, 3, 3), dtype=np.float64)
    translations = np.zeros((n_hyp, 3), dtype=np.float64)
    for h in prange(n_hyp):
        rot = rotations[h]
        t = translations[h]
        cov = np.empty((3, 3))
        solved = False
        for attempt in range(n_retry):
            i0 = draws[h, attempt, 0]
            i1 = draws[h, attempt, 1]
            i2 = draws[h, attempt, 2]
            abx = src[i1, 0] - src[i0, 0]
            aby = src[i1, 1] - src[i0, 1]
            abz = src[i1, 2] - src[i0, 2]
            acx = src[i2, 0] - src[i0, 0]
            acy = src[i2, 1] - src[i0, 1]
            acz = src[i2, 2] - src[i0, 2]
            cx = aby * acz - abz * acy
            cy = abz * acx - abx * acz
            cz = abx * acy - aby * acx
            area = 0.5 * np.sqrt(cx * cx + cy * cy + cz * cz)
            if area < area_min:
                continue
            csx = (src[i0, 0] + src[i1, 0] + src[i2, 0]) / 3.0
            csy = (src[i0, 1] + src[i1, 1] + src[i2, 1]) / 3.0
            csz = (src[i0, 2] + src[i1, 2] + src[i2, 2]) / 3.0
            cdx = (dst[i0, 0] + dst[i1, 0] + dst[i2, 0]) / 3.0
            cdy = (dst[i0, 1] + dst[i1, 1] + dst[i2, 1]) / 3.0
            cdz = (dst[i0, 2] + dst[i1, 2] + dst[i2, 2]) / 3.0
            for a in range(3):
                for b in range(3):
                    acc = 0.0
                    for idx in (i0, i1, i2):
                        if a == 0:
                            sa = src[idx, 0] - csx
                        elif a == 1:
                            sa = src[idx, 1] - csy
                        else:
                            sa = src[idx, 2] - csz
                        if b == 0:
                            db = dst[idx, 0] - cdx
                        elif b == 1:
                            db = dst[idx, 1] - cdy
                        else:
                            db = dst[idx, 2] - cdz
                        acc += sa * db
                    cov[a, b] = acc
            if _rt_from_cov(cov, csx, csy, csz, cdx, cdy, cdz, rot, t):
                solved = True
                break
        if solved:
            cnt, acc2 = _score_pose(rot, t, src, src_n, dst, dst_n, thr2, cos_max)
            counts[h] = cnt
            ssq[h] = acc2
    return counts, ssq, rotations, translations


@njit(cache=True)
def inlier_stats(rot, t, src, src_n, dst, dst_n, thr2, cos_max):
    """One refinement pass: inlier count, their covariance, and centroids.

    Returns (count, ssq, cov, cs, cd); cov/cs/cd are meaningful only when
    count >= 3 and feed the Kabsch refit.
    """
    n = src.shape[0]
    flags = np.zeros(n, dtype=np.bool_)
    cnt = 0
    acc = 0.0
    cs = np.zeros(3)
    cd = np.zeros(3)
    for i in range(n):
        x = rot[0, 0] * src[i, 0] + rot[0, 1] * src[i, 1] + rot[0, 2] * src[i, 2] + t[0]
        y = rot[1, 0] * src[i, 0] + rot[1, 1] * src[i, 1] + rot[1, 2] * src[i, 2] + t[1]
        z = rot[2, 0] * src[i, 0] + rot[2, 1] * src[i, 1] + rot[2, 2] * src[i, 2] + t[2]
        dx = x - dst[i, 0]
        dy = y - dst[i, 1]
        dz = z - dst[i, 2]
        d2 = dx * dx + dy * dy + dz * dz
        if d2 <= thr2:
            nx = rot[0, 0] * src_n[i, 0] + rot[0, 1] * src_n[i, 1] + rot[0, 2] * src_n[i, 2]
            ny = rot[1, 0] * src_n[i, 0] + rot[1, 1] * src_n[i, 1] + rot[1, 2] * src_n[i, 2]
            nz = rot[2, 0] * src_n[i, 0] + rot[2, 1] * src_n[i, 1] + rot[2, 2] * src_n[i, 2]
            ca = nx * dst_n[i, 0] + ny * dst_n[i, 1] + nz * dst_n[i, 2]
            if ca >= cos_max:
                flags[i] = True
                cnt += 1
                acc += d2
                for j in range(3):
                    cs[j] += src[i, j]
                    cd[j] += dst[i, j]
    cov = np.zeros((3, 3))
    if cnt >= 3:
        for j in range(3):
            cs[j] /= cnt
            cd[j] /= cnt
        for i in range(n):
            if flags[i]:
                for a in range(3):
                    for b in range(3):
                        cov[a, b] += (src[i, a] - cs[a]) * (dst[i, b] - cd[b])
    return cnt, acc, cov, cs, cd


@njit(cache=True)
def refit_pose(rot_in, t_in, src, src_n, dst, dst_n, thr2, cos_max):
    """Kabsch refit on the current inlier set; keeps the pose if degenerate.

    Returns (count, rot, t) with count measured under the INPUT pose.
    """
    cnt, _, cov, cs, cd = inlier_stats(rot_in, t_in, src, src_n, dst, dst_n, thr2, cos_max)
    rot = rot_in.copy()
    t = t_in.copy()
    if cnt >= 3:
        if not _rt_from_cov(cov, cs[0], cs[1], cs[2], cd[0], cd[1], cd[2], rot, t):
            for i in range(3):
                t[i] = t_in[i]
                for j in range(3):
                    rot[i, j] = rot_in[i, j]
    return cnt, rot, t
