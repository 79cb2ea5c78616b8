"""Matching costs, per-class bipartite assignment and the set prediction loss.

Boundaries are in frame units. The L1 part of the boundary loss is divided
by the sequence length so its weight does not depend on ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import kernels
from .core import CapacityError, PaddedClassSet, RunConfig

PROB_CLAMP = 1e-7


class MatchingError(ValueError):
    pass


def tiou(a, b, sum_denominator: bool = False) -> float:
    """Temporal IoU of segments ``a=(s1, e1)`` and ``b=(s2, e2)``.

    With ``sum_denominator`` the overlap is added to, not subtracted from,
    the summed lengths (kept only for comparison runs).
    """
    (s1, e1), (s2, e2) = a, b
    if not (s1 < e1 and s2 < e2):
        raise ValueError(f"degenerate segment in tiou({a}, {b})")
    inter = max(0.0, min(e1, e2) - max(s1, s2))
    union = (e1 - s1) + (e2 - s2) + (inter if sum_denominator else -inter)
    return inter / union


def tiou_matrix(a: np.ndarray, b: np.ndarray, sum_denominator: bool = False) -> np.ndarray:
    """Pairwise tIoU between ``(n, 2)`` and ``(m, 2)`` segment arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    inter = np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0])
    inter = np.maximum(inter, 0.0)
    lens = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :]
    return inter / (lens + inter if sum_denominator else lens - inter)


def boundary_loss(gt, pred, T: float, lambda_tiou: float = 2.0, lambda_l1: float = 5.0,
                  sum_denominator: bool = False) -> float:
    """``lambda_tiou * (1 - tIoU) + lambda_l1 * (|ds| + |de|) / T``."""
    t = tiou(gt, pred, sum_denominator)
    l1 = abs(gt[0] - pred[0]) + abs(gt[1] - pred[1])
    return lambda_tiou * (1.0 - t) + lambda_l1 * l1 / T


def _boundary_matrix(gt: np.ndarray, ps: np.ndarray, pe: np.ndarray, T: float, cfg: RunConfig) -> np.ndarray:
    pred = np.stack([ps, pe], axis=1)
    t = tiou_matrix(gt, pred, cfg.tiou_sum_denominator)
    l1 = np.abs(gt[:, None, 0] - ps[None, :]) + np.abs(gt[:, None, 1] - pe[None, :])
    return cfg.lambda_tiou * (1.0 - t) + cfg.lambda_l1 * l1 / T


def matching_cost_matrix(gt: PaddedClassSet, pred_start, pred_end, p_valid, T: float, cfg: RunConfig) -> np.ndarray:
    """``(N_c, N0)`` cost: ``lambda_bound * L_bound - lambda_valid * p_valid``.

    Rows are the valid ground-truth entries of ``gt`` in set order.
    """
    ps = np.asarray(pred_start, dtype=np.float64)
    pe = np.asarray(pred_end, dtype=np.float64)
    pv = np.asarray(p_valid, dtype=np.float64)
    segs = gt.valid_segments()
    if len(segs) > len(ps):
        raise CapacityError(f"class {gt.class_id}: {len(segs)} ground-truth rows exceed {len(ps)} predictions")
    if len(segs) == 0:
        return np.zeros((0, len(ps)))
    return cfg.lambda_bound * _boundary_matrix(segs, ps, pe, T, cfg) - cfg.lambda_valid * pv[None, :]


def hungarian(cost) -> np.ndarray:
    """Minimum-cost assignment; returns the column chosen for each row.

    Ties go to smaller column indices, taking rows in order, so a constant
    matrix yields the identity assignment.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise MatchingError(f"cost matrix must be 2-D, got shape {cost.shape}")
    n, m = cost.shape
    if n > m:
        raise CapacityError(f"cost matrix has {n} rows but only {m} columns")
    bad = np.argwhere(~np.isfinite(cost))
    if len(bad):
        i, j = bad[0]
        raise MatchingError(f"non-finite cost {cost[i, j]} at ({i}, {j})")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    return kernels.hungarian(cost)


@dataclass
class SetPrediction:
    """Differentiable predictions for one sequence.

    Class-specific mode: ``probs`` is ``(C, N0, 2)``, ``start``/``end`` are
    ``(C, N0)``. Class-agnostic mode: ``probs`` is ``(Q, C + 1)`` with column 0
    meaning no event, ``start``/``end`` are ``(Q,)``.
    """

    probs: dc.Tensor
    start: dc.Tensor
    end: dc.Tensor
    T: int


@dataclass
class MatchResult:
    """Assignments of ground-truth rows to prediction indices.

    ``per_class[c]`` holds the prediction index for each valid row of class
    ``c + 1`` (class-specific). In class-agnostic mode ``per_class`` has a
    single entry over all ground truth ordered by class, and ``gt_classes``
    records each row's class.
    """

    mode: str
    per_class: list[np.ndarray]
    gt_classes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_pairs(self) -> int:
        return int(sum(len(a) for a in self.per_class))


def _values(pred: SetPrediction):
    return pred.probs.data.astype(np.float64), pred.start.data.astype(np.float64), pred.end.data.astype(np.float64)


def match_all_classes(gt_sets: list[PaddedClassSet], pred: SetPrediction, cfg: RunConfig,
                      mode: str | None = None) -> MatchResult:
    mode = mode or cfg.matching_mode
    probs, ps, pe = _values(pred)
    T = pred.T
    if mode == "class_specific":
        if probs.shape[:2] != (len(gt_sets), gt_sets[0].size if gt_sets else 0):
            raise MatchingError(f"prediction sets {probs.shape[:2]} do not fit {len(gt_sets)} classes")
        out = []
        for c, gt in enumerate(gt_sets):
            cost = matching_cost_matrix(gt, ps[c], pe[c], probs[c, :, 1], T, cfg)
            out.append(hungarian(cost))
        return MatchResult(mode, out)
    if mode == "class_agnostic":
        segs = [g.valid_segments() for g in gt_sets]
        classes = np.concatenate([np.full(len(s), g.class_id, dtype=np.int64) for s, g in zip(segs, gt_sets)])
        allsegs = np.concatenate(segs) if segs else np.zeros((0, 2))
        if len(allsegs) == 0:
            return MatchResult(mode, [np.zeros(0, dtype=np.int64)], classes)
        cost = cfg.lambda_bound * _boundary_matrix(allsegs, ps, pe, T, cfg) - cfg.lambda_valid * probs[:, classes].T
        return MatchResult(mode, [hungarian(cost)], classes)
    raise MatchingError(f"unknown matching mode {mode!r}")


def _boundary_terms(s_p: dc.Tensor, e_p: dc.Tensor, gs: np.ndarray, ge: np.ndarray, T: float, cfg: RunConfig):
    gs = dc.as_tensor(gs.astype(s_p.dtype))
    ge = dc.as_tensor(ge.astype(s_p.dtype))
    inter = dc.relu(dc.minimum(e_p, ge) - dc.maximum(s_p, gs))
    lens = (e_p - s_p) + (ge - gs)
    union = lens + inter if cfg.tiou_sum_denominator else lens - inter
    t = inter / union
    tiou_term = dc.scale(1.0 - t, cfg.lambda_tiou)
    l1_term = dc.scale(dc.tabs(s_p - gs) + dc.tabs(e_p - ge), cfg.lambda_l1 / T)
    return tiou_term, l1_term


def set_prediction_loss(gt_sets: list[PaddedClassSet], pred: SetPrediction, matches: MatchResult,
                        cfg: RunConfig) -> tuple[dc.Tensor, dict[str, float]]:
    """Sum of matched boundary losses plus ``lambda_class`` times the validity cross-entropy.

    Every prediction enters the cross-entropy: matched ones target "event",
    the rest target "no event". Boundary terms use matched pairs only.
    """
    T = pred.T
    if matches.mode == "class_specific":
        C, N0 = pred.start.shape
        if len(gt_sets) != C or any(g.size != N0 for g in gt_sets) or len(matches.per_class) != C:
            raise MatchingError(f"set sizes disagree: {len(gt_sets)} ground-truth sets vs predictions {(C, N0)}")
        cls_idx, pred_idx, gs, ge = [], [], [], []
        for c, (g, assign) in enumerate(zip(gt_sets, matches.per_class)):
            segs = g.valid_segments()
            if len(assign) != len(segs):
                raise MatchingError(f"class {c + 1}: {len(assign)} matches for {len(segs)} events")
            cls_idx.append(np.full(len(assign), c, dtype=np.int64))
            pred_idx.append(np.asarray(assign, dtype=np.int64))
            gs.append(segs[:, 0])
            ge.append(segs[:, 1])
        ci, pi = np.concatenate(cls_idx), np.concatenate(pred_idx)
        gs, ge = np.concatenate(gs), np.concatenate(ge)
        target = np.zeros((C, N0), dtype=np.int64)
        target[ci, pi] = 1
        s_m = pred.start[ci, pi] if len(ci) else None
        e_m = pred.end[ci, pi] if len(ci) else None
        cc, jj = np.meshgrid(np.arange(C), np.arange(N0), indexing="ij")
        p_t = pred.probs[cc.ravel(), jj.ravel(), target.ravel()]
    else:
        Q = pred.start.shape[0]
        assign = matches.per_class[0]
        segs = np.concatenate([g.valid_segments() for g in gt_sets]) if gt_sets else np.zeros((0, 2))
        if len(assign) != len(segs):
            raise MatchingError(f"{len(assign)} matches for {len(segs)} events")
        target = np.zeros(Q, dtype=np.int64)
        target[assign] = matches.gt_classes
        gs, ge = segs[:, 0], segs[:, 1]
        s_m = pred.start[assign] if len(assign) else None
        e_m = pred.end[assign] if len(assign) else None
        p_t = pred.probs[np.arange(Q), target]
        target = target.ravel()

    weights = np.where(target.ravel() > 0, 1.0, cfg.no_event_weight).astype(p_t.dtype)
    nll = -dc.log(dc.clamp(p_t, PROB_CLAMP, 1.0 - PROB_CLAMP))
    ce = dc.scale(dc.tsum(nll * weights), cfg.lambda_class)
    total = ce
    stats = {"ce": float(ce.data), "tiou": 0.0, "l1": 0.0, "boundary": 0.0}
    if s_m is not None:
        tiou_term, l1_term = _boundary_terms(s_m, e_m, gs, ge, T, cfg)
        tt, ll = dc.tsum(tiou_term), dc.tsum(l1_term)
        total = total + tt + ll
        stats.update(tiou=float(tt.data), l1=float(ll.data), boundary=float(tt.data + ll.data))
    stats["total"] = float(total.data)
    stats["n_matched"] = int(len(gs))
    return total, stats
