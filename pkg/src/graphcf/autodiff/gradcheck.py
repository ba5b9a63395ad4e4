"""Central finite-difference checks against the reverse-mode adjoints."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(fn, params, h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``fn()`` w.r.t. each tensor in ``params``."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(fn().data)
            flat[i] = old - h
            down = float(fn().data)
            flat[i] = old
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_grad(fn, params) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    out = fn()
    out.backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def relative_error(a, b) -> float:
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(fn, params, h: float = 1e-5) -> float:
    """Relative error between analytic and numeric gradients (norm over all params).

    ``fn`` must be deterministic and rebuild its graph on each call; the
    parameters are leaves with ``requires_grad=True``.
    """
    params = [p for p in params if isinstance(p, Tensor)]
    analytic = analytic_grad(fn, params)
    numeric = numeric_grad(fn, params, h)
    return relative_error(analytic, numeric)
