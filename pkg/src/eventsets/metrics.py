"""Detection metrics: AP/mAP over tIoU thresholds, AR@AN and its AUC.

Values in :class:`EvalReport` are percentages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .core import SequenceSample
from .decode import DetectionRecord

MAP_ALPHAS = (0.3, 0.4, 0.5, 0.6, 0.7)
AR_ALPHAS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
AN_RANGE = tuple(range(1, 101))


def sort_detections(dets: Sequence[DetectionRecord]) -> list[DetectionRecord]:
    """Score descending; ties by earlier start, then input order."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].start, i))
    return [dets[i] for i in order]


def match_detections(gts, dets: Sequence[DetectionRecord], alpha: float) -> np.ndarray:
    """True-positive flags for ``dets`` (already sorted) against ``gts`` of one class.

    ``gts`` holds ``(start, end)`` pairs or objects with ``start``/``end``.
    """
    g = np.array([(x.start, x.end) if hasattr(x, "start") else tuple(x) for x in gts], dtype=np.float64).reshape(-1, 2)
    d = np.array([(x.start, x.end) for x in dets], dtype=np.float64).reshape(-1, 2)
    if len(d) == 0:
        return np.zeros(0, dtype=bool)
    return kernels.greedy_match(g[:, 0], g[:, 1], d[:, 0], d[:, 1], float(alpha)) >= 0


def average_precision(tp: Sequence[bool], n_gt: int) -> float | None:
    """Area under the all-point interpolated precision/recall curve, in [0, 1]."""
    if n_gt == 0:
        return None
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def _by_class(samples: Sequence[SequenceSample], C: int):
    return {s.id: [[(e.start, e.end) for e in s.events if e.class_id == c] for c in range(1, C + 1)] for s in samples}


def class_ap(samples: Sequence[SequenceSample], detections: Mapping[str, Sequence[DetectionRecord]],
             class_id: int, alpha: float) -> float | None:
    """AP for one class with detections pooled over all sequences."""
    gts = {s.id: [(e.start, e.end) for e in s.events if e.class_id == class_id] for s in samples}
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        return None
    pooled = []
    for sid in sorted(gts):
        dets = sort_detections([d for d in detections.get(sid, ()) if d.class_id == class_id])
        flags = match_detections(gts[sid], dets, alpha)
        pooled.extend((-d.score, d.start, sid, k, bool(f)) for k, (d, f) in enumerate(zip(dets, flags)))
    pooled.sort(key=lambda r: r[:4])
    return average_precision([r[4] for r in pooled], n_gt)


def mean_ap(samples, detections, C: int, alpha: float) -> float | None:
    """Unweighted mean AP over classes that have ground truth, in percent."""
    aps = [class_ap(samples, detections, c, alpha) for c in range(1, C + 1)]
    aps = [a for a in aps if a is not None]
    return 100.0 * float(np.mean(aps)) if aps else None


def _sequence_recall_curve(sample: SequenceSample, dets: Sequence[DetectionRecord], alphas, max_an: int,
                           class_aware: bool, per_class: bool) -> np.ndarray:
    """Recall after each of the first ``max_an`` detections, averaged over ``alphas``."""
    n_gt = len(sample.events)
    curves = np.zeros((len(alphas), max_an))
    if per_class:
        # top-AN within each class; ranks are per-class positions
        groups = {c: sort_detections([d for d in dets if d.class_id == c])[:max_an] for c in {e.class_id for e in sample.events}}
        for a, alpha in enumerate(alphas):
            hits = np.zeros(max_an)
            for c, ds in groups.items():
                gts = [(e.start, e.end) for e in sample.events if e.class_id == c]
                f = match_detections(gts, ds, alpha).astype(np.float64)
                hits[: len(f)] += f
            curves[a] = np.cumsum(hits) / n_gt
        return curves.mean(axis=0)
    ranked = sort_detections(list(dets))[:max_an]
    for a, alpha in enumerate(alphas):
        hits = np.zeros(max_an)
        if class_aware:
            for c in {d.class_id for d in ranked}:
                pos = [k for k, d in enumerate(ranked) if d.class_id == c]
                gts = [(e.start, e.end) for e in sample.events if e.class_id == c]
                f = match_detections(gts, [ranked[k] for k in pos], alpha)
                hits[np.asarray(pos)[f]] = 1.0
        else:
            gts = [(e.start, e.end) for e in sample.events]
            f = match_detections(gts, ranked, alpha)
            hits[: len(f)] = f
        curves[a] = np.cumsum(hits) / n_gt
    return curves.mean(axis=0)


def ar_at_an(samples: Sequence[SequenceSample], detections, an_list=AN_RANGE, alphas=AR_ALPHAS,
             class_aware: bool = True, per_class: bool = False) -> np.ndarray:
    """AR@AN in percent for each AN in ``an_list``; sequences without ground truth are skipped."""
    an = np.asarray(list(an_list), dtype=int)
    max_an = int(an.max())
    curves = [
        _sequence_recall_curve(s, detections.get(s.id, ()), alphas, max_an, class_aware, per_class)
        for s in sorted(samples, key=lambda s: s.id)
        if s.events
    ]
    if not curves:
        return np.full(len(an), np.nan)
    mean_curve = np.mean(curves, axis=0)
    return 100.0 * mean_curve[an - 1]


def auc(ar_values: Sequence[float]) -> float:
    """Normalised area under AR vs AN over unit-spaced AN; equals the mean."""
    return float(np.mean(ar_values))


@dataclass
class EvalReport:
    ap: dict[float, list[float | None]]
    map: dict[float, float | None]
    ar: list[float]
    auc: float
    an: list[int] = field(default_factory=lambda: list(AN_RANGE))

    def ar_at(self, an: int) -> float:
        return self.ar[self.an.index(an)]

    def to_dict(self) -> dict:
        return {
            "ap": {f"{a:.1f}": [None if v is None else round(100 * v, 6) for v in vals] for a, vals in self.ap.items()},
            "map": {f"{a:.1f}": None if v is None else round(v, 6) for a, v in self.map.items()},
            "ar": [round(float(v), 6) for v in self.ar],
            "an": self.an,
            "auc": round(self.auc, 6),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def table(self, label: str = "") -> str:
        cols = [f"mAP@{a:.1f}" for a in MAP_ALPHAS] + ["AR@10", "AR@50", "AR@100", "AUC"]
        vals = [self.map.get(a) for a in MAP_ALPHAS] + [self.ar_at(10), self.ar_at(50), self.ar_at(100), self.auc]
        cells = ["-" if v is None or np.isnan(v) else f"{v:.2f}" for v in vals]
        width = max(len(label), 6)
        head = f"{'scheme':<{width}} | " + " ".join(f"{c:>8}" for c in cols)
        row = f"{label:<{width}} | " + " ".join(f"{c:>8}" for c in cells)
        return head + "\n" + "-" * len(head) + "\n" + row + "\n"


def evaluate(samples: Sequence[SequenceSample], detections, C: int, class_aware: bool = True,
             per_class_an: bool = False) -> EvalReport:
    ap = {a: [class_ap(samples, detections, c, a) for c in range(1, C + 1)] for a in MAP_ALPHAS}
    mp = {}
    for a, vals in ap.items():
        present = [v for v in vals if v is not None]
        mp[a] = 100.0 * float(np.mean(present)) if present else None
    ar = ar_at_an(samples, detections, AN_RANGE, AR_ALPHAS, class_aware, per_class_an)
    return EvalReport(ap, mp, [float(v) for v in ar], auc(ar))
