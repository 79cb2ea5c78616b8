"""Turning model outputs and frame probabilities into scored events.

Three decoders share :class:`DetectionRecord`:

* threshold filtering of the set predictions,
* Frame2Event: TAG grouping over a grid of water levels and union
  thresholds, scored by mean frame probability, then Soft-NMS,
* Unit2Event: every ``(s, e)`` scored by ``P_s(s) * P_e(e) * P_c(s, e)``,
  then Soft-NMS. ``P_s``/``P_e`` are positive first differences of the frame
  probabilities and ``P_c`` is their mean over the segment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import diffcore as dc
from . import kernels
from .core import SequenceSample, frame_labels

GRID = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


@dataclass(frozen=True)
class DetectionRecord:
    start: float
    end: float
    class_id: int
    score: float

    def to_json(self) -> dict:
        return {"s": self.start, "e": self.end, "c": self.class_id, "score": self.score}


def filter_events(p_valid, start, end, tau: float) -> list[DetectionRecord]:
    """Keep set entries whose validity probability reaches ``tau``.

    Inputs are ``(C, N0)``; row ``c`` carries class ``c + 1``.
    """
    p_valid = np.asarray(p_valid, dtype=np.float64)
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    out = []
    for c, j in zip(*np.nonzero(p_valid >= tau)):
        if end[c, j] > start[c, j]:
            out.append(DetectionRecord(float(start[c, j]), float(end[c, j]), int(c) + 1, float(p_valid[c, j])))
    return out


def filter_agnostic(probs, start, end, tau: float) -> list[DetectionRecord]:
    """Class-agnostic variant: ``probs`` is ``(Q, C + 1)`` with column 0 = no event."""
    probs = np.asarray(probs, dtype=np.float64)
    cls = probs[:, 1:].argmax(axis=1)
    score = probs[np.arange(len(probs)), cls + 1]
    out = []
    for q in np.flatnonzero(score >= tau):
        if end[q] > start[q]:
            out.append(DetectionRecord(float(start[q]), float(end[q]), int(cls[q]) + 1, float(score[q])))
    return out


def soft_nms(records: Sequence[DetectionRecord], sigma: float = 0.5, keep: int = 100) -> list[DetectionRecord]:
    """Gaussian Soft-NMS over one class; returns up to ``keep`` records in selection order."""
    if not records:
        return []
    st = np.array([r.start for r in records])
    en = np.array([r.end for r in records])
    sc = np.array([r.score for r in records])
    idx, scores = kernels.soft_nms(st, en, sc, float(sigma), int(keep))
    return [DetectionRecord(records[i].start, records[i].end, records[i].class_id, float(s)) for i, s in zip(idx, scores)]


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def tag_group(frame_probs, gamma: float, tau_union: float) -> list[tuple[int, int]]:
    """Temporal actionness grouping for one class.

    Seeds are maximal runs with probability >= ``gamma``. A seed grows one
    frame at a time (higher-probability neighbour first) while the share of
    above-``gamma`` frames inside it stays >= ``tau_union``; overlapping
    results are merged.
    """
    p = np.asarray(frame_probs, dtype=np.float64)
    T = len(p)
    above = p >= gamma
    grown = []
    for s, e in _runs(above):
        n_above = e - s
        while True:
            sides = []
            if s > 0:
                sides.append((-p[s - 1], 0))
            if e < T:
                sides.append((-p[e], 1))
            sides.sort()
            for _, side in sides:
                frame = s - 1 if side == 0 else e
                n_new = n_above + int(above[frame])
                if n_new / (e - s + 1) >= tau_union:
                    n_above = n_new
                    if side == 0:
                        s -= 1
                    else:
                        e += 1
                    break
            else:
                break
        grown.append((s, e))
    grown.sort()
    merged: list[tuple[int, int]] = []
    for s, e in grown:
        if merged and s < merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def frame2event(frame_probs, N0: int, gammas: Iterable[float] = GRID, taus: Iterable[float] = GRID,
                sigma: float = 0.5) -> list[DetectionRecord]:
    """TAG candidates over the ``gamma x tau`` grid, mean-probability scores, Soft-NMS to ``N0`` per class."""
    P = np.asarray(frame_probs, dtype=np.float64)
    gammas, taus = list(gammas), list(taus)
    out = []
    for c in range(P.shape[1]):
        p = P[:, c]
        cands = set()
        for g in gammas:
            for t in taus:
                cands.update(tag_group(p, g, t))
        recs = [DetectionRecord(float(s), float(e), c + 1, float(p[s:e].mean())) for s, e in sorted(cands)]
        out.extend(soft_nms(recs, sigma, N0))
    return out


@dataclass
class ScoreMaps:
    """Per-class start/end probabilities derived from frame probabilities ``(T, C)``."""

    frame_probs: np.ndarray
    start: np.ndarray
    end: np.ndarray

    @classmethod
    def from_frame_probs(cls, frame_probs) -> "ScoreMaps":
        p = np.asarray(frame_probs, dtype=np.float64)
        prev = np.vstack([np.zeros((1, p.shape[1])), p[:-1]])
        nxt = np.vstack([p[1:], np.zeros((1, p.shape[1]))])
        return cls(p, np.maximum(0.0, p - prev), np.maximum(0.0, p - nxt))

    def completeness(self, c: int) -> np.ndarray:
        """``(T, T)`` matrix of mean probability over frames ``s..e`` (upper triangle)."""
        p = self.frame_probs[:, c]
        cs = np.concatenate([[0.0], np.cumsum(p)])
        s = np.arange(len(p))[:, None]
        e = np.arange(len(p))[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            m = (cs[e + 1] - cs[s]) / (e - s + 1)
        return np.where(e >= s, m, 0.0)


def unit2event_candidates(maps: ScoreMaps, c: int) -> list[DetectionRecord]:
    """All nonzero-score candidates of class index ``c``; start frame ``s`` < last frame ``e``."""
    T = maps.frame_probs.shape[0]
    score = maps.start[:, c][:, None] * maps.end[:, c][None, :] * maps.completeness(c)
    score = np.triu(score, k=1)
    ss, ee = np.nonzero(score > 0)
    return [DetectionRecord(float(s), float(e + 1), c + 1, float(score[s, e])) for s, e in zip(ss, ee)]


def unit2event_decode(maps: ScoreMaps, N0: int, sigma: float = 0.5) -> list[DetectionRecord]:
    out = []
    for c in range(maps.frame_probs.shape[1]):
        out.extend(soft_nms(unit2event_candidates(maps, c), sigma, N0))
    return out


# -- frame-level classifier for the baselines --------------------------------------


class FrameClassifier:
    """Two-layer perceptron giving per-frame class probabilities.

    Trained with per-frame binary occurrence labels on top of a frozen
    embedding function (the detector's frame embedding, or identity).
    """

    def __init__(self, n_in: int, C: int, hidden: int = 64, seed: int = 0, embed=None):
        ss = np.random.SeedSequence(entropy=[int(seed), 0xF2E])
        rng = np.random.Generator(np.random.Philox(ss))
        self.embed = embed
        self.C = C
        self.params = {
            "fc1.w": dc.Tensor(dc.uniform_fan_in(rng, n_in, (n_in, hidden), np.float64), requires_grad=True),
            "fc1.b": dc.Tensor(dc.uniform_fan_in(rng, n_in, (hidden,), np.float64), requires_grad=True),
            "fc2.w": dc.Tensor(dc.uniform_fan_in(rng, hidden, (hidden, C), np.float64), requires_grad=True),
            "fc2.b": dc.Tensor(dc.uniform_fan_in(rng, hidden, (C,), np.float64), requires_grad=True),
        }
        self.seed = seed

    def _inputs(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(self.embed(features) if self.embed is not None else features, dtype=np.float64)

    def _forward(self, x: np.ndarray) -> dc.Tensor:
        p = self.params
        h = dc.relu(dc.linear(dc.as_tensor(x), p["fc1.w"], p["fc1.b"]))
        return dc.sigmoid(dc.linear(h, p["fc2.w"], p["fc2.b"]))

    def fit(self, samples: Sequence[SequenceSample], epochs: int = 5, batch_size: int = 16, lr: float = 1e-3):
        from .train import AdamW

        X = [self._inputs(s.features) for s in samples]
        Y = [frame_labels(s, self.C) for s in samples]
        opt = AdamW(lr={k: lr for k in self.params}, weight_decay={k: 0.0 for k in self.params})
        for epoch in range(epochs):
            ss = np.random.SeedSequence(entropy=[int(self.seed), 0xF2E, epoch])
            order = np.random.Generator(np.random.Philox(ss)).permutation(len(X))
            for i in range(0, len(order), batch_size):
                idx = order[i : i + batch_size]
                x = np.concatenate([X[j] for j in idx])
                y = np.concatenate([Y[j] for j in idx])
                p = dc.clamp(self._forward(x), 1e-7, 1 - 1e-7)
                loss = -dc.tsum(dc.log(p) * y + dc.log(1.0 - p) * (1.0 - y))
                loss = dc.scale(loss, 1.0 / len(y))
                for t in self.params.values():
                    t.grad = None
                dc.backward(loss)
                opt.update(self.params, {k: t.grad for k, t in self.params.items()})
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            return self._forward(self._inputs(features)).data.copy()


# -- running the detector -------------------------------------------------------


def detect_dataset(model, samples: Sequence[SequenceSample], tau: float | None = None,
                   batch_size: int = 32) -> dict[str, list[DetectionRecord]]:
    """Threshold-filtered detections for every sample, keyed by sequence id."""
    cfg = model.cfg
    tau = cfg.tau_infer if tau is None else tau
    out: dict[str, list[DetectionRecord]] = {}
    with dc.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            pred = model.forward(np.stack([s.features for s in chunk]), train=False)
            probs = pred.probs.data.astype(np.float64)
            st = pred.start.data.astype(np.float64)
            en = pred.end.data.astype(np.float64)
            for b, s in enumerate(chunk):
                if cfg.matching_mode == "class_agnostic":
                    out[s.id] = filter_agnostic(probs[b], st[b], en[b], tau)
                else:
                    shape = (cfg.C, cfg.N0)
                    out[s.id] = filter_events(probs[b, :, 1].reshape(shape), st[b].reshape(shape),
                                              en[b].reshape(shape), tau)
    return out


def write_detections(path: str | Path, detections: dict[str, list[DetectionRecord]], order: Iterable[str] | None = None) -> None:
    ids = list(order) if order is not None else list(detections)
    with Path(path).open("w") as fh:
        for sid in ids:
            rec = {"id": sid, "events": [d.to_json() for d in detections.get(sid, [])]}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_detections(path: str | Path) -> dict[str, list[DetectionRecord]]:
    out = {}
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[str(rec["id"])] = [
                    DetectionRecord(float(e["s"]), float(e["e"]), int(e["c"]), float(e["score"])) for e in rec["events"]
                ]
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad detection record ({exc})") from exc
    return out


# -- baselines end to end ----------------------------------------------------------

BASELINES = ("frame2event", "unit2event")


def run_baseline(scheme: str, train_samples: Sequence[SequenceSample], test_samples: Sequence[SequenceSample],
                 C: int, N0: int, sigma: float = 0.5, seed: int = 0, embed=None, epochs: int = 5,
                 hidden: int = 64) -> tuple[dict[str, list[DetectionRecord]], FrameClassifier]:
    """Fit the frame classifier on ``train_samples`` and decode ``test_samples`` with ``scheme``."""
    if scheme not in BASELINES:
        raise ValueError(f"unknown baseline {scheme!r}; choose from {BASELINES}")
    n_in = train_samples[0].n_features if embed is None else embed(train_samples[0].features[:1]).shape[-1]
    clf = FrameClassifier(n_in, C, hidden=hidden, seed=seed, embed=embed).fit(train_samples, epochs=epochs)
    out = {}
    for s in test_samples:
        p = clf.predict(s.features)
        if scheme == "frame2event":
            out[s.id] = frame2event(p, N0, sigma=sigma)
        else:
            out[s.id] = unit2event_decode(ScoreMaps.from_frame_probs(p), N0, sigma=sigma)
    return out, clf
