"""Event transformer: frame embedding, pre-LN encoder/decoder, set heads.

Query row ``(c - 1) * N0 + i`` belongs to class ``c``, slot ``i``; the
ownership is structural and never learned.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import diffcore as dc
from .core import RunConfig
from .diffcore import AttentionParams, Tensor, multi_head_attention
from .setmatch import SetPrediction

CKPT_MAGIC = b"EVSETCK1"
CKPT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def positional_embeddings(T: int, d_p: int) -> np.ndarray:
    """Sinusoidal table: ``P[t, 2k] = sin(t / 10000^(2k/d_p))``, ``P[t, 2k+1] = cos(...)``."""
    if d_p % 2:
        raise ValueError(f"d_p must be even, got {d_p}")
    t = np.arange(T, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d_p, 2, dtype=np.float64) / d_p)
    P = np.zeros((T, d_p))
    P[:, 0::2] = np.sin(t / freq)
    P[:, 1::2] = np.cos(t / freq)
    return P


@dataclass
class ModelOutput:
    probs: Tensor          # (B, Q, K)
    start: Tensor          # (B, Q)
    end: Tensor            # (B, Q)
    cross_attention: np.ndarray | None  # (B, heads, Q, T), final decoder layer
    T: int

    def sample(self, b: int, cfg: RunConfig) -> SetPrediction:
        """Per-sequence view grouped into class sets (class-specific mode)."""
        if cfg.matching_mode == "class_agnostic":
            return SetPrediction(self.probs[b], self.start[b], self.end[b], self.T)
        C, N0 = cfg.C, cfg.N0
        return SetPrediction(
            self.probs[b].reshape(C, N0, -1),
            self.start[b].reshape(C, N0),
            self.end[b].reshape(C, N0),
            self.T,
        )


def _site(name: str) -> int:
    return zlib.crc32(name.encode())


class EventTransformer:
    """Parameters plus the forward pass. ``params`` maps names to leaf tensors."""

    def __init__(self, cfg: RunConfig, n_features: int, params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.n_features = n_features
        self.dtype = np.dtype(cfg.dtype)
        self.params = params if params is not None else self._init_params()
        self.train_step = 0

    # -- parameters -------------------------------------------------------------

    def _init_params(self) -> dict[str, Tensor]:
        cfg = self.cfg
        ss = np.random.SeedSequence(entropy=[int(cfg.seed), 0x1417])
        rng = np.random.Generator(np.random.Philox(ss))
        d, F = cfg.d_m, self.n_features
        p: dict[str, np.ndarray] = {}

        def lin(name, n_in, n_out, bias=True):
            p[f"{name}.w"] = dc.uniform_fan_in(rng, n_in, (n_in, n_out), self.dtype)
            if bias:
                p[f"{name}.b"] = dc.uniform_fan_in(rng, n_in, (n_out,), self.dtype)

        def norm(name):
            p[f"{name}.g"] = np.ones(d, dtype=self.dtype)
            p[f"{name}.b"] = np.zeros(d, dtype=self.dtype)

        def attn(name):
            lin(f"{name}.q", d, d)
            lin(f"{name}.k", d, d, bias=False)
            lin(f"{name}.v", d, d)
            lin(f"{name}.o", d, d)

        def ff(name):
            lin(f"{name}.fc1", d, 4 * d)
            lin(f"{name}.fc2", 4 * d, d)

        lin("frame.fc1", F, d)
        lin("frame.fc2", d, d)
        n_in = d + cfg.pos_dim if cfg.pos_mode == "concat" else d
        lin("proj_in", n_in, d)
        for layer in range(cfg.L):
            pre = f"enc.{layer}"
            norm(f"{pre}.ln1")
            attn(f"{pre}.attn")
            norm(f"{pre}.ln2")
            ff(f"{pre}.ff")
        norm("mem_norm")
        for layer in range(cfg.L):
            pre = f"dec.{layer}"
            norm(f"{pre}.ln1")
            attn(f"{pre}.self")
            norm(f"{pre}.ln2")
            attn(f"{pre}.cross")
            norm(f"{pre}.ln3")
            ff(f"{pre}.ff")
        norm("out_norm")
        p["queries"] = (cfg.query_init_std * rng.standard_normal((cfg.n_queries, d))).astype(self.dtype)
        n_cls = 2 if cfg.matching_mode == "class_specific" else cfg.C + 1
        lin("head_class", d, n_cls)
        lin("head_start", d, 1)
        lin("head_dur", d, 1)
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def _attn(self, name: str) -> AttentionParams:
        p = self.params
        return AttentionParams(
            p[f"{name}.q.w"], p[f"{name}.q.b"], p[f"{name}.k.w"],
            p[f"{name}.v.w"], p[f"{name}.v.b"], p[f"{name}.o.w"], p[f"{name}.o.b"],
        )

    def _lin(self, x: Tensor, name: str) -> Tensor:
        return dc.linear(x, self.params[f"{name}.w"], self.params.get(f"{name}.b"))

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return dc.layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _drop(self, x: Tensor, site: str, train: bool) -> Tensor:
        return dc.dropout(x, self.cfg.dropout, train, (self.cfg.seed, self.train_step, _site(site)))

    def _ff(self, x: Tensor, name: str, train: bool) -> Tensor:
        h = self._drop(dc.relu(self._lin(x, f"{name}.fc1")), f"{name}.h", train)
        return self._lin(h, f"{name}.fc2")

    @staticmethod
    def _check(x: Tensor, where: str) -> Tensor:
        if not np.isfinite(x.data).all():
            raise NonFiniteError(f"non-finite activation after {where}")
        return x

    # -- forward stages ---------------------------------------------------------

    def embed_frames(self, features) -> Tensor:
        """Per-frame perceptron ``F -> d_m``; rows never mix."""
        x = features if isinstance(features, Tensor) else dc.as_tensor(np.asarray(features, dtype=self.dtype))
        if x.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features per frame, got {x.shape[-1]}")
        return self._lin(dc.relu(self._lin(x, "frame.fc1")), "frame.fc2")

    def frame_features(self, features) -> np.ndarray:
        """Frame embeddings as a plain float64 array (no graph recorded)."""
        with dc.no_grad():
            return self.embed_frames(features).data.astype(np.float64)

    def video_embedding(self, frames: Tensor) -> Tensor:
        T = frames.shape[-2]
        P = positional_embeddings(T, self.cfg.pos_dim).astype(self.dtype)
        P = np.broadcast_to(P, (*frames.shape[:-1], P.shape[-1]))
        if self.cfg.pos_mode == "concat":
            x = dc.concat_last_dim([frames, dc.as_tensor(P)])
        else:
            x = frames + P
        return self._lin(x, "proj_in")

    def encode(self, x: Tensor, train: bool = False) -> Tensor:
        for layer in range(self.cfg.L):
            pre = f"enc.{layer}"
            h = self._norm(x, f"{pre}.ln1")
            a, _ = multi_head_attention(h, h, h, self.cfg.heads, self._attn(f"{pre}.attn"))
            x = x + self._drop(a, f"{pre}.attn", train)
            x = x + self._drop(self._ff(self._norm(x, f"{pre}.ln2"), f"{pre}.ff", train), f"{pre}.ff", train)
            self._check(x, f"encoder layer {layer}")
        return x

    def decode(self, memory: Tensor, train: bool = False) -> tuple[Tensor, np.ndarray | None]:
        """Query self-attention, cross-attention over ``memory``, feed-forward; per layer.

        With ``query_mode="every_layer"`` the decoder state starts at zero and
        the learned queries are added to the attention queries (and
        self-attention keys) of every layer. With ``"input"`` they are only the
        initial state.
        """
        lead = memory.shape[:-2]
        q = self.params["queries"]
        qpos = dc.expand(q, (*lead, *q.shape)) if lead else q
        every = self.cfg.query_mode == "every_layer"
        tgt = dc.as_tensor(np.zeros(qpos.shape, dtype=self.dtype)) if every else qpos
        mem = self._norm(memory, "mem_norm")
        cross = None
        for layer in range(self.cfg.L):
            pre = f"dec.{layer}"
            h = self._norm(tgt, f"{pre}.ln1")
            hq = h + qpos if every else h
            a, _ = multi_head_attention(hq, hq, h, self.cfg.heads, self._attn(f"{pre}.self"))
            tgt = tgt + self._drop(a, f"{pre}.self", train)
            h = self._norm(tgt, f"{pre}.ln2")
            hq = h + qpos if every else h
            a, cross = multi_head_attention(hq, mem, mem, self.cfg.heads, self._attn(f"{pre}.cross"))
            tgt = tgt + self._drop(a, f"{pre}.cross", train)
            tgt = tgt + self._drop(self._ff(self._norm(tgt, f"{pre}.ln3"), f"{pre}.ff", train), f"{pre}.ff", train)
            self._check(tgt, f"decoder layer {layer}")
        return tgt, cross

    def predict_sets(self, D: Tensor, T: int) -> tuple[Tensor, Tensor, Tensor]:
        """Validity probabilities and ``(start, end)`` with ``end = min(T, start + length)``."""
        h = self._norm(D, "out_norm")
        probs = dc.softmax_last_dim(self._lin(h, "head_class"))
        lead = D.shape[:-1]
        s = dc.scale(dc.sigmoid(dc.reshape(self._lin(h, "head_start"), lead)), T)
        length = dc.scale(dc.sigmoid(dc.reshape(self._lin(h, "head_dur"), lead)), T)
        e = dc.minimum(s + length, float(T))
        return probs, s, e

    def forward(self, features, train: bool = False) -> ModelOutput:
        feats = np.asarray(features, dtype=self.dtype)
        squeeze = feats.ndim == 2
        if squeeze:
            feats = feats[None]
        T = feats.shape[1]
        x = self.video_embedding(self.embed_frames(feats))
        memory = self.encode(x, train)
        D, cross = self.decode(memory, train)
        probs, s, e = self.predict_sets(D, T)
        return ModelOutput(probs, s, e, cross, T)

    __call__ = forward

    # -- checkpoints ---------------------------------------------------------------

    def save(self, path: str | Path, extra_tensors: dict[str, np.ndarray] | None = None,
             meta: dict | None = None) -> None:
        tensors = {k: t.data for k, t in self.params.items()}
        tensors.update(extra_tensors or {})
        write_checkpoint(path, self.cfg.to_dict(), self.n_features, tensors, meta or {})

    @classmethod
    def load(cls, path: str | Path) -> tuple["EventTransformer", dict[str, np.ndarray], dict]:
        cfg_d, F, tensors, meta = read_checkpoint(path)
        cfg = RunConfig.from_dict(cfg_d)
        model = cls(cfg, F)
        for name, t in model.params.items():
            if name not in tensors:
                raise CheckpointError(f"{path}: missing parameter {name}")
            arr = tensors.pop(name)
            if arr.shape != t.shape:
                raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {t.shape}")
            t.data = arr.astype(model.dtype)
        model.train_step = int(meta.get("step", 0))
        return model, tensors, meta


def write_checkpoint(path, config: dict, n_features: int, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Layout: magic, u32 header length, JSON header, then float64 little-endian data."""
    names = list(tensors)
    header = {
        "version": CKPT_VERSION,
        "tool_version": __version__,
        "config": config,
        "n_features": int(n_features),
        "meta": meta,
        "tensors": [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, int, dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + n])
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    off = 12 + n
    tensors = {}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(spec["shape"])
        tensors[spec["name"]] = arr.astype(np.float64)
        off += 8 * count
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return header["config"], int(header["n_features"]), tensors, header.get("meta", {})
