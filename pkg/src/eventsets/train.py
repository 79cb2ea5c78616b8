"""Training: forward, per-step matching, set loss, backward, AdamW update."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .core import CapacityError, RunConfig, SequenceSample, load_dataset, max_class_count, split_and_pad
from .model import EventTransformer
from .setmatch import match_all_classes, set_prediction_loss

log = logging.getLogger(__name__)

LOSS_TERMS = ("total", "boundary", "tiou", "l1", "ce")


class TrainingError(RuntimeError):
    pass


def no_decay(name: str) -> bool:
    """Layer-norm gains/biases and query embeddings are exempt from weight decay."""
    if name == "queries":
        return True
    parts = name.split(".")
    return len(parts) >= 2 and (parts[-2].startswith("ln") or parts[-2].endswith("norm"))


def param_lr(name: str, cfg: RunConfig) -> float:
    return cfg.lr_feat if name.startswith("frame.") else cfg.lr_main


@dataclass
class AdamW:
    """Adam with decoupled weight decay: ``w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w)``."""

    lr: dict[str, float]
    weight_decay: dict[str, float]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: EventTransformer) -> "AdamW":
        cfg = model.cfg
        names = list(model.params)
        return cls(
            lr={n: param_lr(n, cfg) for n in names},
            weight_decay={n: 0.0 if no_decay(n) else cfg.weight_decay for n in names},
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            eps=cfg.adam_eps,
        )

    def update(self, params: dict[str, dc.Tensor], grads: dict[str, np.ndarray]) -> None:
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step
        c2 = 1.0 - b2**self.step
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            g = g.astype(p.dtype, copy=False)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            lr = self.lr[name]
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            wd = self.weight_decay[name]
            if wd:
                upd = upd + wd * p.data
            p.data = (p.data - lr * upd).astype(p.dtype, copy=False)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam.m/{name}"] = self.m[name]
            out[f"adam.v/{name}"] = self.v[name]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], step: int, dtype) -> None:
        self.step = int(step)
        for key, arr in tensors.items():
            kind, _, name = key.partition("/")
            if kind == "adam.m":
                self.m[name] = arr.astype(dtype)
            elif kind == "adam.v":
                self.v[name] = arr.astype(dtype)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * factor
    return total


def batch_loss(model: EventTransformer, batch: Sequence[SequenceSample], train: bool = True,
               gt_cache: dict | None = None):
    """Summed set loss over ``batch`` with matching recomputed from current predictions."""
    cfg = model.cfg
    T = batch[0].length
    if any(s.length != T for s in batch):
        raise TrainingError("all sequences in a batch must share T")
    out = model.forward(np.stack([s.features for s in batch]), train=train)
    for name in ("probs", "start", "end"):
        if not np.isfinite(getattr(out, name).data).all():
            raise TrainingError(f"non-finite model output '{name}'")
    total = None
    stats = {k: 0.0 for k in LOSS_TERMS}
    for b, sample in enumerate(batch):
        gts = gt_cache.get(sample.id) if gt_cache is not None else None
        if gts is None:
            gts = split_and_pad(sample.events, cfg.C, cfg.N0)
            if gt_cache is not None:
                gt_cache[sample.id] = gts
        pred = out.sample(b, cfg)
        matches = match_all_classes(gts, pred, cfg)
        loss, st = set_prediction_loss(gts, pred, matches, cfg)
        total = loss if total is None else total + loss
        for k in LOSS_TERMS:
            stats[k] += st[k]
    return total, stats


def train_step(model: EventTransformer, opt: AdamW, batch: Sequence[SequenceSample],
               gt_cache: dict | None = None) -> dict[str, float]:
    """One optimisation step on ``batch``; returns the pre-update loss terms."""
    if not batch:
        raise TrainingError("empty batch")
    cfg = model.cfg
    model.train_step = opt.step
    for p in model.params.values():
        p.grad = None
    loss, stats = batch_loss(model, batch, train=True, gt_cache=gt_cache)
    if not np.isfinite(loss.data).all():
        raise TrainingError(f"non-finite loss {loss.item()} at step {opt.step}: {stats}")
    dc.backward(loss)
    grads = {n: p.grad for n, p in model.params.items() if p.grad is not None}
    for n, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for {n} at step {opt.step}")
    stats["grad_norm"] = clip_global_norm(grads, cfg.clip_norm)
    opt.update(model.params, grads)
    for n, p in model.params.items():
        if not np.isfinite(p.data).all():
            raise TrainingError(f"parameter {n} became non-finite at step {opt.step}")
    return stats


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=[int(seed), 0xE90C, int(epoch)])
    return np.random.Generator(np.random.Philox(ss)).permutation(n)


def save_training_checkpoint(path, model: EventTransformer, opt: AdamW, epoch: int) -> None:
    model.save(path, opt.state_tensors(), {"epoch": int(epoch), "step": int(opt.step)})


def load_training_checkpoint(path) -> tuple[EventTransformer, AdamW, int]:
    model, extra, meta = EventTransformer.load(path)
    opt = AdamW.for_model(model)
    opt.load_state(extra, meta.get("step", 0), model.dtype)
    return model, opt, int(meta.get("epoch", 0))


def _validation_map(model: EventTransformer, samples: Sequence[SequenceSample]) -> float | None:
    from .decode import detect_dataset
    from .metrics import mean_ap

    if not samples:
        return None
    dets = detect_dataset(model, samples)
    value = mean_ap(samples, dets, model.cfg.C, 0.5)
    return None if value is None else round(value, 6)


def _trim_log(path: Path, last_epoch: int) -> None:
    """Drop log lines written after ``last_epoch`` (left over from an interrupted run)."""
    if not path.exists():
        return
    keep = [ln for ln in path.read_text().splitlines() if ln.strip() and json.loads(ln)["epoch"] <= last_epoch]
    path.write_text("".join(ln + "\n" for ln in keep))


def train(
    train_samples: Sequence[SequenceSample],
    cfg: RunConfig,
    n_features: int | None = None,
    out_dir: str | Path | None = None,
    val_samples: Sequence[SequenceSample] = (),
    resume: str | Path | None = None,
    max_epochs: int | None = None,
) -> tuple[EventTransformer, list[dict]]:
    """Train for ``cfg.epochs`` epochs.

    Writes ``ckpt_eNNN.bin`` every ``cfg.checkpoint_every`` epochs plus
    ``final.bin``, and one JSON line per epoch to ``metrics.jsonl``.
    ``max_epochs`` stops early (the schedule itself is unchanged).
    """
    if not train_samples:
        raise TrainingError("no training samples")
    need = max_class_count(train_samples, cfg.C)
    if need > cfg.N0:
        raise CapacityError(f"a training sequence has {need} events of one class but N0={cfg.N0}")
    if resume is not None:
        model, opt, start_epoch = load_training_checkpoint(resume)
        if model.cfg != cfg:
            log.warning("resuming with the checkpoint's configuration")
        cfg = model.cfg
    else:
        model = EventTransformer(cfg, n_features or train_samples[0].n_features)
        opt = AdamW.for_model(model)
        start_epoch = 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.jsonl"
        if resume is None:
            log_path.write_text("")
        else:
            _trim_log(log_path, start_epoch)
    history: list[dict] = []
    gt_cache: dict = {}
    last = cfg.epochs if max_epochs is None else min(cfg.epochs, max_epochs)
    for epoch in range(start_epoch + 1, last + 1):
        order = epoch_order(len(train_samples), cfg.seed, epoch)
        sums = {k: 0.0 for k in LOSS_TERMS}
        n_steps = 0
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_samples[j] for j in order[i : i + cfg.batch_size]]
            try:
                st = train_step(model, opt, batch, gt_cache)
            except TrainingError as exc:
                log.error("epoch %d: %s", epoch, exc)
                raise
            for k in LOSS_TERMS:
                sums[k] += st[k]
            n_steps += 1
        record = {"epoch": epoch, "step": opt.step}
        record.update({k: round(v / max(n_steps, 1), 8) for k, v in sums.items()})
        record["val_map50"] = _validation_map(model, val_samples)
        history.append(record)
        log.info("epoch %d %s", epoch, record)
        if out is not None:
            with log_path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save_training_checkpoint(out / f"ckpt_e{epoch:03d}.bin", model, opt, epoch)
    if out is not None:
        save_training_checkpoint(out / "final.bin", model, opt, last)
    return model, history


def train_from_files(data_dir: str | Path, cfg: RunConfig, out_dir: str | Path, resume=None):
    data_dir = Path(data_dir)
    tr = load_dataset(data_dir / "train.jsonl", cfg.C)
    va_path = data_dir / "val.jsonl"
    va = load_dataset(va_path, cfg.C) if va_path.exists() else []
    return train(tr, cfg, out_dir=out_dir, val_samples=va, resume=resume)
