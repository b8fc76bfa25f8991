"""Zero-mean Gaussian-process regression with a Matern 5/2 kernel."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)
JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
NOISE_FLOOR = 1e-6


class KernelNotPD(LinAlgError):
    pass


@dataclass(frozen=True)
class KernelParams:
    """Matern 5/2 hyperparameters.

    ``lengthscales`` is a scalar (isotropic) or one entry per input
    dimension (ARD).
    """

    signal_std: float
    lengthscales: float | np.ndarray
    noise_std: float = 0.0

    def __post_init__(self):
        ell = np.asarray(self.lengthscales, dtype=float)
        if not self.signal_std > 0 or np.any(ell <= 0) or self.noise_std < 0:
            raise ValueError("need signal_std > 0, lengthscales > 0, noise_std >= 0")
        object.__setattr__(self, "lengthscales", float(ell) if ell.ndim == 0 else ell)
        object.__setattr__(self, "signal_std", float(self.signal_std))
        object.__setattr__(self, "noise_std", float(self.noise_std))

    @property
    def ard(self) -> bool:
        return np.ndim(self.lengthscales) == 1

    def to_log(self) -> np.ndarray:
        return np.concatenate(
            [
                [math.log(self.signal_std)],
                np.log(np.atleast_1d(self.lengthscales)),
                [math.log(max(self.noise_std, 1e-300))],
            ]
        )

    @classmethod
    def from_log(cls, z, ard: bool) -> "KernelParams":
        z = np.asarray(z, dtype=float)
        ell = np.exp(z[1:-1]) if ard else float(np.exp(z[1]))
        return cls(float(np.exp(z[0])), ell, float(np.exp(z[-1])))


def _scaled_sqdist(A: np.ndarray, B: np.ndarray, ell) -> np.ndarray:
    A = np.asarray(A, float) / ell
    B = np.asarray(B, float) / ell
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def _matern_from_r(r: np.ndarray, sf2: float) -> np.ndarray:
    sr = SQRT5 * r
    return sf2 * (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


def matern52(params: KernelParams, A, B) -> np.ndarray:
    """Kernel matrix between the rows of ``A`` and ``B`` (noise excluded)."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    r = np.sqrt(_scaled_sqdist(A, B, params.lengthscales))
    return _matern_from_r(r, params.signal_std**2)


def kernel_eval(params: KernelParams, a, b) -> float:
    diff = (np.atleast_1d(np.asarray(a, float)) - np.atleast_1d(np.asarray(b, float)))
    r = float(np.sqrt(np.sum((diff / params.lengthscales) ** 2)))
    return float(_matern_from_r(np.array(r), params.signal_std**2))


def _factor(K: np.ndarray, noise_var: float, jitter: float):
    n = K.shape[0]
    ladder = [j for j in JITTER_LADDER if j >= jitter] or [jitter]
    for j in ladder:
        try:
            L = cholesky(K + (noise_var + j) * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, j
        except LinAlgError:
            continue
    raise KernelNotPD("kernel matrix not PD")


class GaussianProcess:
    """Fitted GP snapshot: training data plus cached Cholesky factor.

    Instances are not mutated after construction; :meth:`add` returns a new
    snapshot.
    """

    def __init__(self, X, y, params: KernelParams, jitter: float = JITTER_LADDER[0]):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError("inputs and targets differ in length")
        if y.size == 0:
            raise ValueError("GP needs at least one observation")
        self.X, self.y, self.params = X, y, params
        K = matern52(params, X, X)
        self.chol, self.jitter = _factor(K, params.noise_std**2, jitter)
        self.alpha = cho_solve((self.chol, True), y, check_finite=False)

    @property
    def n(self) -> int:
        return self.y.size

    def add(self, x, y_new) -> "GaussianProcess":
        return GaussianProcess(
            np.vstack([self.X, np.atleast_2d(x)]), np.append(self.y, y_new), self.params
        )

    def posterior(self, Xq):
        """Mean and variance at query rows; a 1-D query gives scalars."""
        single = np.ndim(Xq) == 1
        Xq = np.atleast_2d(np.asarray(Xq, float))
        Ks = matern52(self.params, self.X, Xq)
        mean = Ks.T @ self.alpha
        V = solve_triangular(self.chol, Ks, lower=True, check_finite=False)
        var = self.params.signal_std**2 - np.einsum("ij,ij->j", V, V)
        var = np.maximum(var, 0.0)
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    def log_marginal_likelihood(self) -> float:
        return float(
            -0.5 * self.y @ self.alpha
            - np.log(np.diag(self.chol)).sum()
            - 0.5 * self.n * LOG_2PI
        )


def log_marginal_likelihood(params: KernelParams, X, y) -> float:
    return GaussianProcess(X, y, params).log_marginal_likelihood()


def lml_and_grad(log_params, X, y, ard: bool, jitter: float = JITTER_LADDER[0]):
    """LML and its gradient with respect to ``[log sf, log ell..., log sn]``."""
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float)
    n = y.size
    params = KernelParams.from_log(log_params, ard)
    sf2, sn2 = params.signal_std**2, params.noise_std**2
    ell = params.lengthscales
    r = np.sqrt(_scaled_sqdist(X, X, ell))
    sr = SQRT5 * r
    e = np.exp(-sr)
    K = sf2 * (1.0 + sr + sr * sr / 3.0) * e
    L, _ = _factor(K, sn2, jitter)
    alpha = cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n), check_finite=False)
    grad = np.empty(len(log_params))
    grad[0] = 0.5 * np.sum(W * (2.0 * K))
    # dk/dlog(ell_d) = (5/3) sf2 (1 + sqrt5 r) exp(-sqrt5 r) (delta_d/ell_d)^2
    base = (5.0 / 3.0) * sf2 * (1.0 + sr) * e
    if ard:
        WB = W * base
        for d in range(X.shape[1]):
            diff = (X[:, d][:, None] - X[:, d][None, :]) / ell[d]
            grad[1 + d] = 0.5 * np.sum(WB * diff * diff)
    else:
        grad[1] = 0.5 * np.sum(W * base * r * r)
    grad[-1] = 0.5 * np.trace(W) * 2.0 * sn2
    return float(lml), grad


@dataclass(frozen=True)
class HyperBounds:
    """Boxes for the hyperparameters, searched in log space."""

    signal_std: tuple = (1e-2, 1e2)
    lengthscale: tuple = (1e-2, 1e1)
    noise_std: tuple = (NOISE_FLOOR, 1.0)
    ard: bool = False

    def log_box(self, dim: int) -> list:
        n_ell = dim if self.ard else 1
        box = [tuple(np.log(self.signal_std))]
        box += [tuple(np.log(self.lengthscale))] * n_ell
        box += [tuple(np.log(self.noise_std))]
        return box


def fit_hyperparams(
    X,
    y,
    bounds: HyperBounds,
    restarts: int,
    rng: np.random.Generator,
    init: Optional[KernelParams] = None,
    maxiter: int = 100,
) -> KernelParams:
    """Best of ``restarts`` L-BFGS-B maximizations of the LML.

    The first start is ``init`` (clipped into the box) when given; the others
    are uniform in the log box. If every start fails, ``init`` is returned
    (or the box centre) and a warning is logged.
    """
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float)
    box = bounds.log_box(X.shape[1])
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    starts: list[np.ndarray] = []
    if init is not None and init.ard == bounds.ard:
        starts.append(np.clip(init.to_log(), lo, hi))
    while len(starts) < max(restarts, 1):
        starts.append(lo + rng.random(lo.size) * (hi - lo))

    def neg(z):
        val, g = lml_and_grad(z, X, y, bounds.ard)
        return -val, -g

    best_z, best_val = None, -np.inf
    for z0 in starts:
        try:
            res = minimize(
                neg, z0, jac=True, method="L-BFGS-B", bounds=box,
                options={"maxiter": maxiter},
            )
            z, val = np.clip(res.x, lo, hi), -float(res.fun)
            start_val = -neg(z0)[0]
            if start_val > val:
                z, val = z0, start_val
        except (LinAlgError, ValueError, FloatingPointError):
            continue
        if np.isfinite(val) and val > best_val:
            best_z, best_val = z, val
    if best_z is None:
        logger.warning("hyperparameter fit failed for every start; keeping previous params")
        if init is not None:
            return init
        return KernelParams.from_log(0.5 * (lo + hi), bounds.ard)
    return KernelParams.from_log(best_z, bounds.ard)


def warp(J):
    """Log warp of a positive cost (floored at 1e-12)."""
    return np.log(np.maximum(J, 1e-12))


def unwarp(y):
    return np.exp(y)


def fit_gp(
    X,
    y,
    bounds: HyperBounds,
    restarts: int,
    rng: np.random.Generator,
    init: Optional[KernelParams] = None,
) -> GaussianProcess:
    params = fit_hyperparams(X, y, bounds, restarts, rng, init)
    return GaussianProcess(X, y, params)

