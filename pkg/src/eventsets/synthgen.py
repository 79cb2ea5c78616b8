"""Synthetic multi-class event sequences with controllable co-occurrence.

Randomness comes from numpy's Philox counter-based generator. Each sequence
is keyed by ``(dataset seed, sequence index)`` so any sequence can be
regenerated on its own, independent of generation order. The mixing matrix
is keyed by ``(dataset seed, MIXING_STREAM)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigError, EventSpan, SequenceSample, _from_dict, write_dataset

MIXING_STREAM = 0xFFFF_FFFF
MAX_ATTEMPTS = 100
MANIFEST_VERSION = 1


@dataclass
class GeneratorConfig:
    C: int = 4
    T: int = 64
    F: int = 16
    events_per_class_rate: float = 1.2
    min_len: int = 4
    max_len: int = 24
    cooccur_pairs: list[tuple[int, int, float]] = field(default_factory=list)
    cooccur_jitter: int = 2
    ramp_len: int = 2
    noise_sigma: float = 0.3
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 200

    def __post_init__(self):
        self.cooccur_pairs = [(int(a), int(b), float(p)) for a, b, p in self.cooccur_pairs]
        if not 1 <= self.min_len <= self.max_len <= self.T:
            raise ConfigError("need 1 <= min_len <= max_len <= T")
        if self.noise_sigma < 0 or self.cooccur_jitter < 0 or self.ramp_len < 0:
            raise ConfigError("noise_sigma, cooccur_jitter and ramp_len must be >= 0")
        for a, b, p in self.cooccur_pairs:
            if not (1 <= a <= self.C and 1 <= b <= self.C) or a == b:
                raise ConfigError(f"bad co-occurrence pair ({a}, {b})")
            if not 0 <= p <= 1:
                raise ConfigError(f"co-occurrence probability {p} outside [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cooccur_pairs"] = [list(p) for p in self.cooccur_pairs]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        return _from_dict(cls, data)


def rng_for(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def mixing_matrix(cfg: GeneratorConfig, seed: int) -> np.ndarray:
    """``(F, C)`` unit-normal mixing matrix shared by every sequence of a dataset."""
    return rng_for(seed, MIXING_STREAM).standard_normal((cfg.F, cfg.C))


def _fits(intervals, s, e):
    # same-class events keep at least one empty frame between them
    return all(e < s0 or s > e0 for s0, e0 in intervals)


def _place_events(cfg: GeneratorConfig, rng: np.random.Generator) -> list[list[tuple[int, int]]]:
    per_class = []
    attempts = 0
    for _ in range(cfg.C):
        want = int(rng.poisson(cfg.events_per_class_rate))
        placed: list[tuple[int, int]] = []
        while len(placed) < want and attempts < MAX_ATTEMPTS:
            length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
            s = int(rng.integers(0, cfg.T - length + 1))
            if _fits(placed, s, s + length):
                placed.append((s, s + length))
            else:
                attempts += 1
        per_class.append(placed)
    return per_class


def _add_merged(intervals: list[tuple[int, int]], s: int, e: int) -> list[tuple[int, int]]:
    """Insert ``[s, e)`` merging anything it overlaps or touches."""
    keep = []
    for s0, e0 in intervals:
        if e0 < s or s0 > e:
            keep.append((s0, e0))
        else:
            s, e = min(s, s0), max(e, e0)
    keep.append((s, e))
    return sorted(keep)


def _cooccur(cfg, per_class, rng):
    """Spawn jittered copies of class-``a`` events into class ``b``.

    Copies take priority: a class's own events that overlap or touch a copy
    are dropped, and copies that collide with each other are merged.
    """
    primary = [list(evs) for evs in per_class]
    copies: list[list[tuple[int, int]]] = [[] for _ in per_class]
    j = cfg.cooccur_jitter
    for a, b, p in cfg.cooccur_pairs:
        for s, e in primary[a - 1]:
            if rng.random() >= p:
                continue
            ds, de = rng.integers(-j, j + 1, size=2)
            s2 = min(max(s + int(ds), 0), cfg.T)
            e2 = min(max(e + int(de), 0), cfg.T)
            if e2 > s2:
                copies[b - 1] = _add_merged(copies[b - 1], s2, e2)
    out = []
    for own, cp in zip(primary, copies):
        keep = [(s, e) for s, e in own if all(e < s0 or s > e0 for s0, e0 in cp)]
        out.append(sorted(keep + cp))
    return out


def activity(cfg: GeneratorConfig, per_class: list[list[tuple[int, int]]]) -> np.ndarray:
    """``(T, C)`` activity in [0, 1] with linear ramps inside each event's edges."""
    a = np.zeros((cfg.T, cfg.C))
    step = 1.0 / (cfg.ramp_len + 1)
    for c, evs in enumerate(per_class):
        for s, e in evs:
            t = np.arange(s, e)
            a[s:e, c] = np.minimum(1.0, np.minimum(t - s + 1, e - t) * step)
    return a


def generate_sequence(
    cfg: GeneratorConfig,
    seed: int,
    index: int = 0,
    mixing: np.ndarray | None = None,
    seq_id: str | None = None,
) -> SequenceSample:
    """Draw sequence ``index`` of the dataset keyed by ``seed``.

    Features are ``W @ a_t + noise`` per frame. Identical arguments give
    bit-identical output.
    """
    W = mixing_matrix(cfg, seed) if mixing is None else mixing
    rng = rng_for(seed, index)
    per_class = _place_events(cfg, rng)
    per_class = _cooccur(cfg, per_class, rng)
    act = activity(cfg, per_class)
    feats = act @ W.T
    if cfg.noise_sigma > 0:
        feats = feats + cfg.noise_sigma * rng.standard_normal(feats.shape)
    events = [
        EventSpan(float(s), float(e), c + 1)
        for c, evs in enumerate(per_class)
        for s, e in sorted(evs)
    ]
    return SequenceSample(seq_id or f"s{index:06d}", cfg.T, feats, events)


def split_ranges(cfg: GeneratorConfig) -> dict[str, range]:
    a, b = cfg.n_train, cfg.n_train + cfg.n_val
    return {"train": range(0, a), "val": range(a, b), "test": range(b, b + cfg.n_test)}


def generate_dataset(cfg: GeneratorConfig, seed: int, path: str | Path) -> dict[str, Path]:
    """Write ``train/val/test.jsonl`` and ``manifest.json`` under ``path``."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    W = mixing_matrix(cfg, seed)
    files = {}
    for split, idx in split_ranges(cfg).items():
        target = root / f"{split}.jsonl"
        write_dataset(target, (generate_sequence(cfg, seed, i, W) for i in idx))
        files[split] = target
    manifest = {
        "format_version": MANIFEST_VERSION,
        "seed": int(seed),
        "generator": cfg.to_dict(),
        "files": {k: v.name for k, v in files.items()},
    }
    target = root / "manifest.json"
    try:
        target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write manifest {target}: {exc}") from exc
    files["manifest"] = target
    return files


def load_manifest(path: str | Path) -> tuple[GeneratorConfig, int]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    data = json.loads(path.read_text())
    return GeneratorConfig.from_dict(data["generator"]), int(data["seed"])
