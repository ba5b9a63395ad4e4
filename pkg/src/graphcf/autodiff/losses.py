from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, as_tensor, clamp, log, mean, mul, scale, square, sub, sum, exp

BCE_EPS = 1e-7


def bce(y_hat, y, reduction: str = "mean", weights=None) -> Tensor:
    """Binary cross-entropy with predictions clamped to ``[eps, 1 - eps]``.

    ``y`` is a constant array of 0/1 targets broadcastable to ``y_hat``.
    ``weights`` optionally scales each element's term.
    """
    y_hat = as_tensor(y_hat)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), y_hat.shape)
    p = clamp(y_hat, BCE_EPS, 1.0 - BCE_EPS)
    terms = add(mul(log(p), Tensor(-y)), mul(log(sub(1.0, p)), Tensor(-(1.0 - y))))
    if weights is not None:
        terms = mul(terms, Tensor(np.broadcast_to(np.asarray(weights, dtype=np.float64), y_hat.shape)))
    if reduction == "mean":
        return mean(terms)
    if reduction == "sum":
        return sum(terms)
    if reduction == "none":
        return terms
    raise ValueError(f"unknown reduction {reduction!r}")


def kl_diag_gaussian(mu, sigma) -> Tensor:
    """``KL(N(mu, diag sigma^2) || N(0, I))`` summed over every entry."""
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    var = square(sigma)
    return scale(sum(sub(add(square(mu), var), add(log(var), 1.0))), 0.5)


def sigma_from_logvar(logvar) -> Tensor:
    return exp(scale(as_tensor(logvar), 0.5))


def reparameterize(mu, sigma, rng, noise=None) -> Tensor:
    """``mu + sigma * eps`` with ``eps ~ N(0, I)`` drawn from ``rng``.

    Passing ``noise`` fixes eps (used by gradient checks).
    """
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    eps = rng.standard_normal(mu.shape) if noise is None else np.asarray(noise, dtype=np.float64)
    return add(mu, mul(sigma, Tensor(eps)))
