"""Expected improvement and its inner optimizer over a box."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .core import Box
from .gp import GaussianProcess

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class AcquisitionConfig:
    n_random: int = 2000
    n_refine: int = 5
    refine_iters: int = 50
    xi: float = 0.0
    refine_step: float = 0.1  # initial pattern-search step, fraction of box width

    def __post_init__(self):
        if min(self.n_random, self.n_refine, self.refine_iters) < 1:
            raise ValueError("acquisition counts must be at least 1")
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")


def expected_improvement(mu, sigma, T, xi: float = 0.0):
    """EI for minimization: ``sigma * (z Phi(z) + phi(z))``, ``z = (T - mu - xi) / sigma``.

    Falls back to ``max(T - mu - xi, 0)`` where ``sigma == 0``.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gain = T - mu - xi
    safe = np.where(sigma > 0, sigma, 1.0)
    # gain * Phi(z) + sigma * phi(z) stays finite when z overflows
    with np.errstate(over="ignore", divide="ignore"):
        z = gain / safe
        ei = gain * ndtr(z) + safe * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = np.where(sigma > 0, np.maximum(ei, 0.0), np.maximum(gain, 0.0))
    return float(ei) if ei.ndim == 0 else ei


def ei_at(gp: GaussianProcess, X, T: float, xi: float = 0.0) -> np.ndarray:
    mu, var = gp.posterior(np.atleast_2d(X))
    return expected_improvement(mu, np.sqrt(var), T, xi)


def next_query(
    gp: GaussianProcess,
    box: Box,
    cfg: AcquisitionConfig,
    rng: np.random.Generator,
    incumbent: float | None = None,
) -> np.ndarray:
    """Maximize EI over uniform samples, then pattern-search the best few.

    The incumbent defaults to the smallest training target of ``gp``.
    """
    T = float(gp.y.min()) if incumbent is None else float(incumbent)
    cand = box.sample(rng, cfg.n_random)
    ei = ei_at(gp, cand, T, cfg.xi)
    best_i = int(np.argmax(ei))
    best_x, best_ei = cand[best_i], float(ei[best_i])

    order = np.argsort(-ei, kind="stable")[: cfg.n_refine]
    pts, vals = cand[order].copy(), ei[order].copy()
    dim = box.dim
    steps = np.full(len(pts), cfg.refine_step)
    moves = np.concatenate([np.eye(dim), -np.eye(dim)]) * box.width
    for _ in range(cfg.refine_iters):
        trial = box.clip(pts[:, None, :] + steps[:, None, None] * moves[None])
        tv = ei_at(gp, trial.reshape(-1, dim), T, cfg.xi).reshape(len(pts), -1)
        j = np.argmax(tv, axis=1)
        tbest = tv[np.arange(len(pts)), j]
        better = tbest > vals
        pts[better] = trial[better, j[better]]
        vals[better] = tbest[better]
        steps[~better] *= 0.5
        if np.all(steps < 1e-6):
            break
    k = int(np.argmax(vals))
    if vals[k] > best_ei:
        best_x = pts[k]
    return box.clip(best_x)
