import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventsets.core import (
    CapacityError,
    ConfigError,
    EventSpan,
    RunConfig,
    SequenceSample,
    frame_labels,
    load_dataset,
    merge_sets,
    sliding_windows,
    split_and_pad,
    write_dataset,
)


class TestSplitAndPad:
    def test_partition_example(self):
        sets = split_and_pad([EventSpan(2, 5, 1), EventSpan(1, 9, 2)], C=2, N0=3)
        assert [s.class_id for s in sets] == [1, 2]
        assert sets[0].valid.tolist() == [True, False, False]
        assert (sets[0].starts[0], sets[0].ends[0]) == (2, 5)
        assert sets[1].valid.tolist() == [True, False, False]
        assert (sets[1].starts[0], sets[1].ends[0]) == (1, 9)

    def test_padding_boundaries_are_zero(self):
        sets = split_and_pad([EventSpan(2, 5, 1)], C=1, N0=3)
        assert sets[0].starts[1:].tolist() == [0, 0]
        assert sets[0].ends[1:].tolist() == [0, 0]

    def test_empty(self):
        sets = split_and_pad([], C=2, N0=3)
        assert len(sets) == 2
        assert all(s.n_valid == 0 and s.size == 3 for s in sets)

    def test_overflow_names_class(self):
        evs = [EventSpan(i * 3, i * 3 + 2, 1) for i in range(4)]
        with pytest.raises(CapacityError, match="class 1"):
            split_and_pad(evs, C=2, N0=3)

    @given(st.lists(st.tuples(st.integers(0, 50), st.integers(1, 10), st.integers(1, 3)), max_size=12))
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, raw):
        evs = [EventSpan(s, s + n, c) for s, n, c in raw]
        sets = split_and_pad(evs, C=3, N0=12)
        assert sum(s.n_valid for s in sets) == len(evs)
        back = merge_sets(sets)
        key = lambda e: (e.class_id, e.start, e.end)
        assert sorted(back, key=key) == sorted(evs, key=key)
        # within a class, input order is kept
        for c in (1, 2, 3):
            assert [e for e in back if e.class_id == c] == [e for e in evs if e.class_id == c]


class TestSlidingWindows:
    def test_window_offsets(self):
        T = 8
        feats = np.arange(2 * T)[:, None].astype(float)
        wins = sliding_windows(feats, [], T)
        assert [w.features[0, 0] for w in wins] == [0, 4, 8]

    def test_full_cover_event(self):
        T = 8
        wins = sliding_windows(np.zeros((2 * T, 1)), [EventSpan(0, 2 * T, 3)], T)
        assert all(w.events == [EventSpan(0, T, 3)] for w in wins)

    def test_clip_at_window_edge(self):
        T = 16
        wins = sliding_windows(np.zeros((2 * T, 1)), [EventSpan(T - 3, T + 5, 1)], T)
        assert wins[0].events == [EventSpan(T - 3, T, 1)]

    def test_drops_partial_and_zero_length(self):
        T = 8
        wins = sliding_windows(np.zeros((13, 1)), [EventSpan(8, 9, 1)], T)
        assert len(wins) == 2  # offsets 0 and 4; offset 8 would be partial
        assert wins[0].events == []  # touches the window end only
        assert wins[1].events == [EventSpan(4, 5, 1)]

    def test_short_sequence(self, caplog):
        assert sliding_windows(np.zeros((5, 2)), [], 8) == []
        assert "shorter than window" in caplog.text

    @given(st.integers(0, 60), st.integers(1, 30), st.sampled_from([4, 8, 16]))
    @settings(max_examples=100, deadline=None)
    def test_clipping_is_intersection(self, s, n, T):
        T_long = 64
        e = min(s + n, T_long)
        if e <= s:
            return
        wins = sliding_windows(np.zeros((T_long, 1)), [EventSpan(s, e, 1)], T)
        for k, w in enumerate(wins):
            off = k * T // 2
            lo, hi = max(s, off), min(e, off + T)
            if hi > lo:
                assert w.events == [EventSpan(lo - off, hi - off, 1)]
                assert 0 <= w.events[0].start < w.events[0].end <= T
            else:
                assert w.events == []


class TestTypes:
    def test_degenerate_event(self):
        with pytest.raises(ValueError):
            EventSpan(3, 3, 1)

    def test_overlap_rejected(self):
        s = SequenceSample("x", 10, np.zeros((10, 1)), [EventSpan(0, 5, 1), EventSpan(4, 8, 1)])
        with pytest.raises(ValueError, match="overlapping"):
            s.validate(C=2)

    def test_cross_class_overlap_allowed(self):
        SequenceSample("x", 10, np.zeros((10, 1)), [EventSpan(0, 5, 1), EventSpan(0, 5, 2)]).validate(C=2)

    def test_feature_rows_must_match(self):
        with pytest.raises(ValueError):
            SequenceSample("x", 10, np.zeros((9, 2)))

    @pytest.mark.parametrize(
        "kw", [{"lambda_l1": 0.0}, {"tau_infer": 1.0}, {"d_m": 30, "heads": 4}, {"matching_mode": "x"}]
    )
    def test_bad_config(self, kw):
        with pytest.raises(ConfigError):
            RunConfig(**kw)

    def test_config_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            RunConfig.from_dict({"bogus": 1})

    def test_default_lambdas(self):
        cfg = RunConfig()
        got = (cfg.lambda_bound, cfg.lambda_valid, cfg.lambda_tiou, cfg.lambda_l1, cfg.lambda_class)
        assert got == (5, 1, 2, 5, 1)
        assert cfg.N0 == 100 and cfg.tau_infer == 0.5


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    samples = [
        SequenceSample("a", 6, rng.standard_normal((6, 3)), [EventSpan(1, 4, 2)]),
        SequenceSample("b", 6, rng.standard_normal((6, 3)), []),
    ]
    write_dataset(tmp_path / "d.jsonl", samples)
    back = load_dataset(tmp_path / "d.jsonl", C=2)
    assert [s.id for s in back] == ["a", "b"]
    np.testing.assert_array_equal(back[0].features, samples[0].features)
    assert back[0].events == samples[0].events


def test_frame_labels():
    s = SequenceSample("a", 6, np.zeros((6, 1)), [EventSpan(1, 3, 2)])
    y = frame_labels(s, 2)
    assert y[:, 1].tolist() == [0, 1, 1, 0, 0, 0]
    assert y[:, 0].sum() == 0
