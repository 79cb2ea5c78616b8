"""Domain types, run configuration, padded class sets and dataset I/O."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

MATCHING_MODES = ("class_specific", "class_agnostic")


class CapacityError(ValueError):
    """A class holds more ground-truth events than its set can carry."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


@dataclass(frozen=True)
class EventSpan:
    """Temporal segment ``[start, end)`` in frame units with a 1-based class id.

    Frame ``i`` covers ``[i, i + 1)``, so boundaries are continuous positions
    in ``[0, T]``.
    """

    start: float
    end: float
    class_id: int

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"degenerate event: start={self.start} end={self.end}")

    @property
    def length(self) -> float:
        return self.end - self.start

    def check(self, T: float, C: int) -> None:
        if self.start < 0 or self.end > T:
            raise ValueError(f"event {self} outside [0, {T}]")
        if not 1 <= self.class_id <= C:
            raise ValueError(f"event {self} class outside [1, {C}]")


@dataclass(frozen=True)
class PaddedClassSet:
    """Fixed-size ground-truth set for one class.

    ``starts``/``ends``/``valid`` all have length N0. Padding entries carry
    ``(0, 0)`` boundaries and ``valid == False``.
    """

    class_id: int
    starts: np.ndarray
    ends: np.ndarray
    valid: np.ndarray

    @property
    def size(self) -> int:
        return len(self.valid)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def valid_segments(self) -> np.ndarray:
        """``(N_c, 2)`` array of valid (start, end) rows in set order."""
        idx = np.flatnonzero(self.valid)
        return np.stack([self.starts[idx], self.ends[idx]], axis=1)

    def events(self) -> list[EventSpan]:
        return [EventSpan(float(s), float(e), self.class_id) for s, e in self.valid_segments()]


@dataclass
class SequenceSample:
    id: str
    length: int
    features: np.ndarray
    events: list[EventSpan] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.length:
            raise ValueError(
                f"sequence {self.id!r}: features shape {self.features.shape} "
                f"does not have {self.length} rows"
            )

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def validate(self, C: int) -> None:
        """Check span bounds and reject within-class overlaps."""
        by_class: dict[int, list[EventSpan]] = {}
        for ev in self.events:
            ev.check(self.length, C)
            by_class.setdefault(ev.class_id, []).append(ev)
        for c, evs in by_class.items():
            evs = sorted(evs, key=lambda e: e.start)
            for a, b in zip(evs, evs[1:]):
                if b.start < a.end:
                    raise ValueError(
                        f"sequence {self.id!r}: overlapping class-{c} events {a} and {b}"
                    )


@dataclass
class RunConfig:
    """Model, loss, optimisation and inference settings."""

    C: int = 4
    N0: int = 100
    d_m: int = 64
    L: int = 2
    heads: int = 4
    d_p: int | None = None
    pos_mode: str = "concat"
    query_mode: str = "input"
    query_init_std: float = 0.02
    dropout: float = 0.1
    lambda_bound: float = 5.0
    lambda_valid: float = 1.0
    lambda_tiou: float = 2.0
    lambda_l1: float = 5.0
    lambda_class: float = 1.0
    no_event_weight: float = 1.0
    tiou_sum_denominator: bool = False
    tau_infer: float = 0.5
    matching_mode: str = "class_specific"
    seed: int = 0
    lr_main: float = 1e-4
    lr_feat: float = 1e-5
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    batch_size: int = 8
    epochs: int = 30
    checkpoint_every: int = 5
    dtype: str = "float32"
    soft_nms_sigma: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("lambda_bound", "lambda_valid", "lambda_tiou", "lambda_l1", "lambda_class"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0 < self.tau_infer < 1:
            raise ConfigError(f"tau_infer must lie in (0, 1), got {self.tau_infer}")
        if self.matching_mode not in MATCHING_MODES:
            raise ConfigError(f"matching_mode must be one of {MATCHING_MODES}")
        if self.pos_mode not in ("concat", "additive"):
            raise ConfigError(f"pos_mode must be 'concat' or 'additive', got {self.pos_mode!r}")
        if self.query_mode not in ("every_layer", "input"):
            raise ConfigError(f"query_mode must be 'every_layer' or 'input', got {self.query_mode!r}")
        if not self.query_init_std > 0:
            raise ConfigError(f"query_init_std must be > 0, got {self.query_init_std}")
        if self.d_m % self.heads:
            raise ConfigError(f"d_m={self.d_m} not divisible by heads={self.heads}")
        if self.pos_dim % 2:
            raise ConfigError(f"positional dimension {self.pos_dim} must be even")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if min(self.C, self.N0, self.heads, self.batch_size) < 1 or self.L < 0:
            raise ConfigError("C, N0, heads and batch_size must be positive; L non-negative")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def pos_dim(self) -> int:
        if self.pos_mode == "additive":
            return self.d_m
        return self.d_p if self.d_p is not None else self.d_m // 4

    @property
    def n_queries(self) -> int:
        return self.C * self.N0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _from_dict(cls, data)


def _from_dict(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    return cls(**data)


def split_and_pad(events: Sequence[EventSpan], C: int, N0: int) -> list[PaddedClassSet]:
    """Partition events by class and pad each class to ``N0`` entries.

    Valid entries keep input order; padding follows them.

    Raises:
        CapacityError: if a class has more than ``N0`` events.
    """
    per_class: list[list[EventSpan]] = [[] for _ in range(C)]
    for ev in events:
        if not 1 <= ev.class_id <= C:
            raise ValueError(f"event class {ev.class_id} outside [1, {C}]")
        per_class[ev.class_id - 1].append(ev)
    sets = []
    for c, evs in enumerate(per_class, start=1):
        if len(evs) > N0:
            raise CapacityError(f"class {c} has {len(evs)} events but N0={N0}")
        starts = np.zeros(N0)
        ends = np.zeros(N0)
        valid = np.zeros(N0, dtype=bool)
        for i, ev in enumerate(evs):
            starts[i], ends[i], valid[i] = ev.start, ev.end, True
        sets.append(PaddedClassSet(c, starts, ends, valid))
    return sets


def merge_sets(sets: Iterable[PaddedClassSet]) -> list[EventSpan]:
    """Inverse of :func:`split_and_pad` up to class grouping."""
    return [ev for s in sets for ev in s.events()]


def sliding_windows(
    long_features: np.ndarray,
    long_events: Sequence[EventSpan],
    T: int,
    id_prefix: str = "seq",
) -> list[SequenceSample]:
    """Cut a long sequence into length-``T`` windows with stride ``T // 2``.

    Events are clipped to each window and shifted to window-local frames;
    zero-length fragments and a trailing partial window are dropped.
    """
    if T % 2:
        raise ValueError(f"window length must be even, got {T}")
    long_features = np.asarray(long_features, dtype=np.float64)
    T_long = long_features.shape[0]
    if T_long < T:
        log.warning("sequence of length %d shorter than window %d; no windows", T_long, T)
        return []
    stride = T // 2
    out = []
    for k, off in enumerate(range(0, T_long - T + 1, stride)):
        evs = []
        for ev in long_events:
            s = max(ev.start, off) - off
            e = min(ev.end, off + T) - off
            if e > s:
                evs.append(EventSpan(s, e, ev.class_id))
        out.append(
            SequenceSample(f"{id_prefix}_w{k}", T, long_features[off : off + T].copy(), evs)
        )
    return out


# -- dataset files -----------------------------------------------------------


def _num(x: float):
    x = float(x)
    return int(x) if x.is_integer() else x


def sample_to_record(sample: SequenceSample) -> dict:
    return {
        "id": sample.id,
        "T": sample.length,
        "F": sample.n_features,
        "features": sample.features.tolist(),
        "events": [{"s": _num(e.start), "e": _num(e.end), "c": e.class_id} for e in sample.events],
    }


def record_to_sample(rec: dict) -> SequenceSample:
    feats = np.asarray(rec["features"], dtype=np.float64).reshape(rec["T"], rec["F"])
    events = [EventSpan(float(e["s"]), float(e["e"]), int(e["c"])) for e in rec["events"]]
    return SequenceSample(str(rec["id"]), int(rec["T"]), feats, events)


def write_dataset(path: str | Path, samples: Iterable[SequenceSample]) -> int:
    path = Path(path)
    n = 0
    try:
        with path.open("w") as fh:
            for s in samples:
                fh.write(json.dumps(sample_to_record(s), separators=(",", ":")))
                fh.write("\n")
                n += 1
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc}") from exc
    return n


def iter_dataset(path: str | Path) -> Iterator[SequenceSample]:
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield record_to_sample(json.loads(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from exc


def load_dataset(path: str | Path, C: int | None = None) -> list[SequenceSample]:
    samples = list(iter_dataset(path))
    if C is not None:
        for s in samples:
            s.validate(C)
    return samples


def max_class_count(samples: Iterable[SequenceSample], C: int) -> int:
    best = 0
    for s in samples:
        counts = np.bincount([e.class_id for e in s.events], minlength=C + 1)
        best = max(best, int(counts.max(initial=0)))
    return best


def frame_labels(sample: SequenceSample, C: int) -> np.ndarray:
    """Binary ``(T, C)`` occurrence labels; frame t is active if it lies inside an event."""
    y = np.zeros((sample.length, C))
    for ev in sample.events:
        lo = int(math.floor(ev.start))
        hi = int(math.ceil(ev.end))
        y[lo:hi, ev.class_id - 1] = 1.0
    return y
