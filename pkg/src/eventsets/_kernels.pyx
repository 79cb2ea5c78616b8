# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; arithmetic mirrors ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


def hungarian(cost):
    cdef double[:, ::1] a = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    cdef Py_ssize_t m = a.shape[1]
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef double[::1] minv = np.empty(m + 1)
    cdef Py_ssize_t[::1] p = np.zeros(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(m + 1, dtype=np.intp)
    cdef unsigned char[::1] used = np.zeros(m + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            ui0 = u[i0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    out = np.zeros(n, dtype=np.int64)
    cdef long long[::1] o = out
    for j in range(1, m + 1):
        if p[j]:
            o[p[j] - 1] = j - 1
    return out


cdef inline double _tiou(double s1, double e1, double s2, double e2) nogil:
    cdef double lo = s1 if s1 > s2 else s2
    cdef double hi = e1 if e1 < e2 else e2
    cdef double inter = hi - lo
    if inter <= 0.0:
        return 0.0
    return inter / ((e1 - s1) + (e2 - s2) - inter)


def soft_nms(starts, ends, scores, double sigma, Py_ssize_t keep):
    cdef double[::1] st = np.ascontiguousarray(starts, dtype=np.float64)
    cdef double[::1] en = np.ascontiguousarray(ends, dtype=np.float64)
    cdef double[::1] sc = np.array(scores, dtype=np.float64, copy=True)
    cdef Py_ssize_t n = sc.shape[0]
    cdef unsigned char[::1] alive = np.ones(n, dtype=np.uint8)
    cdef Py_ssize_t limit = keep if keep < n else n
    if limit < 0:
        limit = 0
    idx = np.zeros(limit, dtype=np.int64)
    val = np.zeros(limit, dtype=np.float64)
    cdef long long[::1] oi = idx
    cdef double[::1] ov = val
    cdef Py_ssize_t r, k, best
    cdef double best_score, bs, be, iou
    for r in range(limit):
        best = -1
        best_score = -INFINITY
        for k in range(n):
            if alive[k] and sc[k] > best_score:
                best_score = sc[k]
                best = k
        alive[best] = 0
        oi[r] = best
        ov[r] = best_score
        bs = st[best]
        be = en[best]
        for k in range(n):
            if alive[k]:
                iou = _tiou(bs, be, st[k], en[k])
                if iou > 0.0:
                    sc[k] = sc[k] * exp(-(iou * iou) / sigma)
    return idx, val


def greedy_match(gt_starts, gt_ends, det_starts, det_ends, double alpha):
    cdef double[::1] gs = np.ascontiguousarray(gt_starts, dtype=np.float64)
    cdef double[::1] ge = np.ascontiguousarray(gt_ends, dtype=np.float64)
    cdef double[::1] ds = np.ascontiguousarray(det_starts, dtype=np.float64)
    cdef double[::1] de = np.ascontiguousarray(det_ends, dtype=np.float64)
    cdef Py_ssize_t n_gt = gs.shape[0]
    cdef Py_ssize_t n_det = ds.shape[0]
    cdef unsigned char[::1] taken = np.zeros(n_gt, dtype=np.uint8)
    out = np.full(n_det, -1, dtype=np.int64)
    cdef long long[::1] o = out
    cdef Py_ssize_t k, g, best
    cdef double best_iou, iou
    for k in range(n_det):
        best = -1
        best_iou = -1.0
        for g in range(n_gt):
            if not taken[g]:
                iou = _tiou(ds[k], de[k], gs[g], ge[g])
                if iou > best_iou:
                    best_iou = iou
                    best = g
        if best >= 0 and best_iou >= alpha:
            taken[best] = 1
            o[k] = best
    return out
