"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


class GradCheckError(ArithmeticError):
    pass


def _numeric(f0: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float, labels):
    grads = []
    for t, label in zip(tensors, labels):
        g = np.zeros(t.shape)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = f0().item()
            flat[i] = orig - eps
            with no_grad():
                fm = f0().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                coord = [int(k) for k in np.unravel_index(i, t.shape)]
                raise GradCheckError(f"non-finite value at {label}{coord}: f(+)={fp}, f(-)={fm}")
            g.reshape(-1)[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def check_tensors(
    f: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-5, return_details: bool = False
):
    """Max relative error of the analytic gradient of ``f()`` w.r.t. ``tensors``.

    ``f`` closes over ``tensors`` and is re-evaluated with each coordinate
    nudged by ``±eps``. All tensors must be float64.
    """
    for t in tensors:
        if t.dtype != np.float64:
            raise GradCheckError(f"gradient checks need float64 tensors, got {t.dtype}")
    labels = [t.name or f"x{i}" for i, t in enumerate(tensors)]
    saved = [(t.requires_grad, t.grad) for t in tensors]
    for t in tensors:
        # coordinates are nudged in place through a flat view
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    try:
        loss = f()
        if not np.isfinite(loss.data).all():
            raise GradCheckError(f"non-finite function value {loss.data}")
        grads = backward(loss)
        analytic = [grads.get(t, np.zeros(t.shape)) for t in tensors]
        for a, label in zip(analytic, labels):
            bad = np.argwhere(~np.isfinite(a))
            if len(bad):
                raise GradCheckError(f"non-finite analytic gradient at {label}{[int(k) for k in bad[0]]}")
        numeric = _numeric(f, tensors, eps, labels)
    finally:
        for t, (rg, g) in zip(tensors, saved):
            t.requires_grad, t.grad = rg, g
    errs = [relative_error(a, n) for a, n in zip(analytic, numeric)]
    worst = max((float(e.max()) for e in errs if e.size), default=0.0)
    if return_details:
        return worst, {lab: (a, n, e) for lab, a, n, e in zip(labels, analytic, numeric, errs)}
    return worst


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor | np.ndarray, eps: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``."""
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    return check_tensors(lambda: f(xt), [xt], eps)
