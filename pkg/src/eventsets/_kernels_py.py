"""Pure-Python kernels. ``_kernels.pyx`` mirrors these line for line.

Both versions perform the same floating-point operations in the same order,
so their outputs are bit-identical.
"""

import math

import numpy as np

INF = float("inf")


def hungarian(cost):
    """Min-cost assignment of every row to a distinct column (rows <= cols).

    Shortest augmenting path with row/column potentials. Rows are inserted in
    order and the scan keeps the first column reaching the minimum, so ties
    resolve toward smaller column indices. Returns the column index per row.
    """
    a = np.asarray(cost, dtype=np.float64).tolist()
    n = len(a)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    m = len(a[0])
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
    for j in range(1, m + 1):
        if p[j]:
            out[p[j] - 1] = j - 1
    return out


def _tiou(s1, e1, s2, e2):
    inter = min(e1, e2) - max(s1, s2)
    if inter <= 0.0:
        return 0.0
    union = (e1 - s1) + (e2 - s2) - inter
    return inter / union


def soft_nms(starts, ends, scores, sigma, keep):
    """Gaussian Soft-NMS. Returns ``(indices, scores)`` in selection order."""
    st = np.asarray(starts, dtype=np.float64).tolist()
    en = np.asarray(ends, dtype=np.float64).tolist()
    sc = np.asarray(scores, dtype=np.float64).tolist()
    n = len(sc)
    alive = [True] * n
    sel_idx = []
    sel_score = []
    while len(sel_idx) < keep and len(sel_idx) < n:
        best = -1
        best_score = -INF
        for k in range(n):
            if alive[k] and sc[k] > best_score:
                best_score = sc[k]
                best = k
        alive[best] = False
        sel_idx.append(best)
        sel_score.append(best_score)
        bs = st[best]
        be = en[best]
        for k in range(n):
            if alive[k]:
                iou = _tiou(bs, be, st[k], en[k])
                if iou > 0.0:
                    sc[k] = sc[k] * math.exp(-(iou * iou) / sigma)
    return np.asarray(sel_idx, dtype=np.int64), np.asarray(sel_score, dtype=np.float64)


def greedy_match(gt_starts, gt_ends, det_starts, det_ends, alpha):
    """Match detections (already in rank order) to ground truth greedily.

    Each detection takes its best-tIoU unmatched ground truth if that tIoU
    reaches ``alpha``. Returns the matched ground-truth index per detection,
    -1 for false positives.
    """
    gs = np.asarray(gt_starts, dtype=np.float64).tolist()
    ge = np.asarray(gt_ends, dtype=np.float64).tolist()
    ds = np.asarray(det_starts, dtype=np.float64).tolist()
    de = np.asarray(det_ends, dtype=np.float64).tolist()
    n_gt = len(gs)
    taken = [False] * n_gt
    out = np.full(len(ds), -1, dtype=np.int64)
    for k in range(len(ds)):
        best = -1
        best_iou = -1.0
        for g in range(n_gt):
            if not taken[g]:
                iou = _tiou(ds[k], de[k], gs[g], ge[g])
                if iou > best_iou:
                    best_iou = iou
                    best = g
        if best >= 0 and best_iou >= alpha:
            taken[best] = True
            out[k] = best
    return out
