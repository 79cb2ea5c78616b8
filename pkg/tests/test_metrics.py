import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventsets.core import EventSpan, SequenceSample
from eventsets.decode import DetectionRecord
from eventsets.metrics import (
    AN_RANGE,
    EvalReport,
    ar_at_an,
    auc,
    average_precision,
    class_ap,
    evaluate,
    match_detections,
    mean_ap,
    sort_detections,
)


def seq(sid, events, T=100):
    return SequenceSample(sid, T, np.zeros((T, 1)), [EventSpan(s, e, c) for s, e, c in events])


def det(s, e, c, score):
    return DetectionRecord(float(s), float(e), c, float(score))


def brute_ap(flags, n_gt):
    """Enumerate every rank cutoff, then integrate the upper envelope of precision over recall."""
    pts = []
    for k in range(1, len(flags) + 1):
        tp = sum(flags[:k])
        pts.append((tp / n_gt, tp / k))
    ap = 0.0
    prev_r = 0.0
    for r in sorted({r for r, _ in pts}):
        if r == 0:
            continue
        p = max(p for rr, p in pts if rr >= r)
        ap += (r - prev_r) * p
        prev_r = r
    return ap


class TestMatching:
    def test_exact(self):
        assert match_detections([(10, 20)], [det(10, 20, 1, 0.9)], 0.5).tolist() == [True]

    def test_duplicate(self):
        assert match_detections([(10, 20)], [det(10, 20, 1, 0.9), det(10, 20, 1, 0.8)], 0.5).tolist() == [True, False]

    def test_low_overlap(self):
        assert match_detections([(0, 10)], [det(5, 15, 1, 0.9)], 0.5).tolist() == [False]


class TestAP:
    def test_perfect(self):
        assert average_precision([True], 1) == 1.0

    def test_fp_then_tp(self):
        assert average_precision([False, True], 1) == pytest.approx(0.5)

    def test_no_detections(self):
        assert average_precision([], 3) == 0.0

    def test_no_gt(self):
        assert average_precision([False], 0) is None

    def test_brute_force_500(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            n_gt = int(rng.integers(1, 6))
            dets = [det(*sorted(rng.uniform(0, 50, 2)) + np.array([0, 1]), 1, rng.uniform()) for _ in range(int(rng.integers(0, 11)))]
            gts = [tuple(sorted(rng.uniform(0, 50, 2)) + np.array([0, 1])) for _ in range(n_gt)]
            ranked = sort_detections(dets)
            flags = match_detections(gts, ranked, 0.3).tolist()
            want = brute_ap(flags, n_gt) if flags else 0.0
            assert average_precision(flags, n_gt) == pytest.approx(want, abs=1e-12)

    def test_pooled_order_independent(self):
        samples = [seq("a", [(0, 10, 1)]), seq("b", [(20, 30, 1), (50, 60, 1)])]
        dets = {"a": [det(0, 10, 1, 0.5), det(40, 45, 1, 0.95)], "b": [det(20, 30, 1, 0.9), det(50, 60, 1, 0.4)]}
        a = class_ap(samples, dets, 1, 0.5)
        b = class_ap(samples[::-1], dict(reversed(list(dets.items()))), 1, 0.5)
        assert a == b
        # ranked: .95 FP, .9 TP, .5 TP, .4 TP -> precision 2/3 from recall 1/3 onward, then 3/4
        assert a == pytest.approx(brute_ap([False, True, True, True], 3))

    def test_mean_ap_skips_absent_classes(self):
        samples = [seq("a", [(0, 10, 1)])]
        assert mean_ap(samples, {"a": [det(0, 10, 1, 0.9)]}, C=3, alpha=0.5) == 100.0
        assert mean_ap([seq("z", [])], {}, C=2, alpha=0.5) is None


class TestAR:
    def test_perfect(self):
        samples = [seq("a", [(0, 10, 1), (20, 30, 2)])]
        dets = {"a": [det(0, 10, 1, 0.9), det(20, 30, 2, 0.8)]}
        np.testing.assert_allclose(ar_at_an(samples, dets, [2, 5]), [100.0, 100.0])

    def test_top1(self):
        samples = [seq("a", [(0, 10, 1), (20, 30, 2)])]
        dets = {"a": [det(0, 10, 1, 0.9), det(20, 30, 2, 0.8)]}
        assert ar_at_an(samples, dets, [1])[0] == pytest.approx(50.0)

    def test_class_aware(self):
        samples = [seq("a", [(0, 10, 1)])]
        wrong = {"a": [det(0, 10, 2, 0.9)]}
        assert ar_at_an(samples, wrong, [1])[0] == 0.0
        assert ar_at_an(samples, wrong, [1], class_aware=False)[0] == 100.0

    def test_tiou_grid(self):
        # tIoU 0.8 counts for alpha 0.5 .. 0.8 (7 of 10 thresholds)
        samples = [seq("a", [(0, 10, 1)])]
        assert ar_at_an(samples, {"a": [det(0, 8, 1, 0.9)]}, [1])[0] == pytest.approx(70.0)

    def test_sequences_without_gt_skipped(self):
        samples = [seq("a", [(0, 10, 1)]), seq("b", [])]
        dets = {"a": [det(0, 10, 1, 0.9)], "b": [det(0, 10, 1, 0.9)]}
        assert ar_at_an(samples, dets, [1])[0] == 100.0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_monotone(self, seed):
        rng = np.random.default_rng(seed)
        samples, dets = [], {}
        for k in range(3):
            evs = [(s, s + int(rng.integers(2, 10)), int(rng.integers(1, 3))) for s in rng.choice(80, size=int(rng.integers(1, 5)), replace=False)]
            samples.append(seq(f"s{k}", evs))
            dets[f"s{k}"] = [det(s, s + rng.uniform(1, 12), int(rng.integers(1, 3)), rng.uniform()) for s in rng.uniform(0, 80, int(rng.integers(0, 10)))]
        ar = ar_at_an(samples, dets, AN_RANGE)
        assert np.all(np.diff(ar) >= -1e-12)
        assert np.all((ar >= 0) & (ar <= 100))

    def test_auc_is_mean(self):
        assert auc([10.0, 20.0, 30.0]) == 20.0


def test_report(tmp_path):
    samples = [seq("a", [(0, 10, 1), (20, 30, 2)])]
    rep = evaluate(samples, {"a": [det(0, 10, 1, 0.9), det(20, 30, 2, 0.8)]}, C=2)
    assert isinstance(rep, EvalReport)
    assert rep.map[0.5] == 100.0 and rep.ar_at(100) == 100.0 and rep.auc > 99
    assert rep.to_json() == evaluate(samples, {"a": [det(0, 10, 1, 0.9), det(20, 30, 2, 0.8)]}, C=2).to_json()
    assert "mAP@0.5" in rep.table("EF")
