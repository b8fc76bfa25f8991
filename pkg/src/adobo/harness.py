"""Bayesian-optimization loop shared by aDOBO and every baseline.

Methods differ only in the ``evaluate(theta) -> cost`` callable they pass in;
GP fitting, acquisition, warping and bookkeeping are identical.

Randomness: the master seed feeds ``numpy.random.SeedSequence(seed)``, whose
spawned children are used in this fixed order:

0. ``init``        -- random initial parameters
1. ``acquisition`` -- EI candidate sampling
2. ``hyper``       -- hyperparameter restarts
3. ``method``      -- method-specific draws (e.g. a random initial model)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .bo import AcquisitionConfig, next_query
from .core import Box
from .gp import GaussianProcess, HyperBounds, KernelNotPD, KernelParams, fit_hyperparams, warp

logger = logging.getLogger(__name__)

STREAMS = ("init", "acquisition", "hyper", "method")


def split_rng(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(STREAMS, children)}


def eta(J_best, J_star):
    """Relative regret in percent, ``100 (J_best - J*) / J*``."""
    if not np.all(np.asarray(J_star) > 0):
        raise ValueError("J_star must be positive")
    return 100.0 * (np.asarray(J_best, float) - J_star) / J_star


class RunRecord(NamedTuple):
    n: int
    theta: np.ndarray
    raw_cost: float
    warped_cost: float
    best_so_far: float
    eta: float
    flag: str = ""


@dataclass(frozen=True)
class BoSettings:
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    hyper: HyperBounds = field(default_factory=HyperBounds)
    restarts: int = 2
    warp: bool = True
    n_init: int = 1
    refit_full_until: int = 100  # refit hyperparameters every iteration up to this many points
    refit_every: int = 5  # then every refit_every-th iteration

    def refit_due(self, n_obs: int) -> bool:
        return n_obs <= self.refit_full_until or n_obs % self.refit_every == 0


def _standardize(y: np.ndarray) -> np.ndarray:
    centred = y - y.mean()
    sd = centred.std()
    return centred / sd if sd > 1e-12 else centred


def make_record(n, theta, J, J_best, j_star, use_warp, flag="") -> RunRecord:
    e = float(eta(J_best, j_star)) if j_star is not None else float("nan")
    y = float(warp(J)) if use_warp else float(J)
    return RunRecord(n, np.asarray(theta, float), float(J), y, float(J_best), e, flag)


def bayes_opt(
    evaluate: Callable[[np.ndarray], float],
    box: Box,
    budget: int,
    settings: BoSettings,
    seed: int,
    initial: Sequence[np.ndarray] = (),
    j_star: Optional[float] = None,
    callback: Optional[Callable[[RunRecord], None]] = None,
    trace: Optional[dict] = None,
) -> list[RunRecord]:
    """Minimize ``evaluate`` over ``box`` with exactly ``budget`` evaluations.

    The first evaluations are ``initial`` (user-provided parameters), padded
    with uniform random draws up to ``settings.n_init``. The GP works on the
    box mapped to the unit cube with standardized (optionally log-warped)
    targets. If ``trace`` is a dict it receives the final GP inputs ``Z``
    (unit cube), targets ``y`` and kernel ``params`` (None if never fitted).
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rngs = split_rng(seed)
    unit = Box.uniform(0.0, 1.0, box.dim)
    seeds = [box.clip(np.asarray(t, float)) for t in initial]
    while len(seeds) < settings.n_init:
        seeds.append(box.sample(rngs["init"], 1)[0])

    Z: list[np.ndarray] = []
    J: list[float] = []
    records: list[RunRecord] = []
    params: Optional[KernelParams] = None
    best = np.inf
    for n in range(1, budget + 1):
        if n <= len(seeds):
            theta = seeds[n - 1]
        else:
            y = np.asarray(J)
            y = _standardize(warp(y) if settings.warp else y)
            Zarr = np.asarray(Z)
            if params is None or settings.refit_due(len(J)):
                params = fit_hyperparams(
                    Zarr, y, settings.hyper, settings.restarts, rngs["hyper"], init=params
                )
            try:
                gp = GaussianProcess(Zarr, y, params)
                z = next_query(gp, unit, settings.acquisition, rngs["acquisition"])
            except KernelNotPD:
                logger.warning("GP factorization failed at n=%d; sampling uniformly", n)
                z = unit.sample(rngs["acquisition"], 1)[0]
            theta = box.from_unit(z)
        cost = float(evaluate(theta))
        if not np.isfinite(cost):
            raise ValueError(f"evaluator returned non-finite cost at n={n}")
        Z.append(box.to_unit(theta))
        J.append(cost)
        best = min(best, cost)
        rec = make_record(n, theta, cost, best, j_star, settings.warp)
        records.append(rec)
        if callback is not None:
            callback(rec)
    if trace is not None:
        y = np.asarray(J)
        trace.update(Z=np.asarray(Z), y=_standardize(warp(y) if settings.warp else y), params=params)
    return records
