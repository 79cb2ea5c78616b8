"""Attention and parameter initialisation built from the primitive ops."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, linear, matmul, reshape, scale, softmax_last_dim, transpose


class AttentionConfigError(ValueError):
    pass


@dataclass
class AttentionParams:
    """Projection weights, each ``(d_m, d_m)``. Keys carry no bias (softmax is shift invariant in it)."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    return transpose(reshape(x, (*lead, n, heads, d // heads)), (*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    nl = len(lead)
    y = transpose(x, (*range(nl), nl + 1, nl, nl + 2))
    return reshape(y, (*lead, n, h * dh))


def multi_head_attention(
    q: Tensor, k: Tensor, v: Tensor, heads: int, params: AttentionParams | None = None
) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention over ``heads`` heads.

    ``q`` is ``(..., n_q, d_m)``; ``k`` and ``v`` are ``(..., n_k, d_m)``.
    With ``params`` the inputs are projected first and the concatenated heads
    are projected by ``wo``; without, projections are the identity.
    Returns the output and a read-only copy of the weights ``(..., heads, n_q, n_k)``.
    """
    d_m = q.shape[-1]
    if d_m % heads:
        raise AttentionConfigError(f"d_m={d_m} is not divisible by heads={heads}")
    if k.shape[-1] != d_m or v.shape[-1] != d_m or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    if params is not None:
        q = linear(q, params.wq, params.bq)
        k = linear(k, params.wk)
        v = linear(v, params.wv, params.bv)
    dh = d_m // heads
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    nd = kh.ndim
    scores = scale(matmul(qh, transpose(kh, (*range(nd - 2), nd - 1, nd - 2))), 1.0 / math.sqrt(dh))
    weights = softmax_last_dim(scores)
    out = _merge_heads(matmul(weights, vh))
    if params is not None:
        out = linear(out, params.wo, params.bo)
    w = weights.data.view()
    w.flags.writeable = False
    return out, w


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
