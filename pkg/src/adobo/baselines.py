"""Comparison methods run under the same experiment harness as aDOBO.

* (Q, R) tuning: BO over diagonal LQR weights for a fixed, possibly noisy,
  linearization.
* K learning: BO over a static feedback gain.
* Least-squares identification: refit ``(A, B)`` to all data after every run.
* Control-sequence learning: BO directly over the open-loop inputs.

The BO-based methods reuse :func:`adobo.dobo.run_decoded`; only the decoding
of ``theta`` into a controller differs.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from .control import synthesize
from .core import Box, CostSpec, LinearModel, pack_model, unpack_model
from .dobo import (
    ExperimentConfig,
    penalty_cost,
    resolve_j_star,
    run_decoded,
    run_policy,
)
from .harness import RunRecord, make_record, split_rng
from .plants import linearize

logger = logging.getLogger(__name__)

PERTURBATION_SEED = 0
WEIGHT_LOG10_RANGE = (-2.0, 2.0)
GAIN_RANGE = (-5.0, 5.0)
INPUT_RANGES = {"lin1d": 2.0, "lin2d": 2.0, "dubins": 3.0, "cartpole": 30.0}


def reference_linearization(config: ExperimentConfig) -> LinearModel:
    """Jacobian of the true plant at the cost's reference point."""
    return linearize(config.plant, config.cost.x_ref, config.cost.u_ref)


def perturbed_model(
    model: LinearModel, alpha: float, rng: Optional[np.random.Generator] = None
) -> LinearModel:
    """``(1 - alpha) (A, B) + alpha (A_r, B_r)`` with entries of ``A_r, B_r`` uniform on [-1, 1]."""
    rng = np.random.default_rng(PERTURBATION_SEED) if rng is None else rng
    A_r = rng.uniform(-1.0, 1.0, model.A.shape)
    B_r = rng.uniform(-1.0, 1.0, model.B.shape)
    return LinearModel((1 - alpha) * model.A + alpha * A_r, (1 - alpha) * model.B + alpha * B_r)


def _diagonal(M: np.ndarray, name: str) -> np.ndarray:
    d = np.diag(M)
    if not np.allclose(M, np.diag(d)):
        raise ValueError(f"(Q, R) tuning needs a diagonal {name}")
    if np.any(d <= 0):
        raise ValueError(f"(Q, R) tuning needs a positive diagonal {name}")
    return d


def qr_weights(theta, n_x: int):
    """Diagonal ``(W_Q, W_R)`` from log10 weights."""
    w = 10.0 ** np.asarray(theta, float)
    return np.diag(w[:n_x]), np.diag(w[n_x:])


def run_qr_tuning(
    config: ExperimentConfig,
    A_star=None,
    B_star=None,
    alpha: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    callback=None,
    trace=None,
) -> list[RunRecord]:
    """BO over the log10 diagonal weights of an LQR design on a fixed model.

    The design model is ``(A*, B*)`` (default: the Jacobian at the reference)
    blended with random matrices by ``alpha``. The first evaluation uses the
    actual ``(Q, R)`` of the cost.
    """
    if config.cost.has_hinge:
        raise ValueError("(Q, R) tuning needs a purely quadratic cost")
    n_x, n_u = config.plant.n_x, config.plant.n_u
    base = reference_linearization(config)
    A_star = base.A if A_star is None else np.asarray(A_star, float)
    B_star = base.B if B_star is None else np.asarray(B_star, float)
    model = perturbed_model(LinearModel(A_star, B_star), alpha, rng)
    cost = config.cost
    init = np.log10(np.concatenate([_diagonal(cost.Q, "Q"), _diagonal(cost.R, "R")]))
    box = Box.uniform(*WEIGHT_LOG10_RANGE, n_x + n_u)

    def decode(theta):
        W_Q, W_R = qr_weights(theta, n_x)
        design = CostSpec(W_Q, W_R, cost.Qf, cost.x_ref, cost.u_ref)
        return lambda: synthesize(model, design, config.N, "lqr")

    return run_decoded(config, decode, box, [box.clip(init)], callback, trace)


def run_k_learning(
    config: ExperimentConfig, rng: Optional[np.random.Generator] = None, callback=None, trace=None
) -> list[RunRecord]:
    """BO over a static gain, ``u = u* + K (x - x*)`` with ``K`` row-major in theta.

    ``rng`` is accepted for interface symmetry; all randomness comes from the
    config seed.
    """
    n_x, n_u = config.plant.n_x, config.plant.n_u
    box = Box.uniform(*GAIN_RANGE, n_x * n_u)
    cost = config.cost

    def decode(theta):
        K = np.asarray(theta, float).reshape(n_u, n_x)
        return lambda: (lambda x, k: cost.u_ref + K @ (x - cost.x_ref))

    return run_decoded(config, decode, box, (), callback, trace)


def input_box(config: ExperimentConfig, limit: Optional[float] = None) -> Box:
    if limit is None:
        limit = INPUT_RANGES[config.plant.kind]
    return Box.uniform(-limit, limit, config.N * config.plant.n_u)


def run_control_sequence_learning(
    config: ExperimentConfig,
    rng: Optional[np.random.Generator] = None,
    input_limit: Optional[float] = None,
    callback=None,
    trace=None,
) -> list[RunRecord]:
    """BO directly over ``u_0..u_{N-1}`` inside a symmetric per-plant input box."""
    n_u, N = config.plant.n_u, config.N
    if N == 0:
        # nothing to learn: the cost is the terminal cost of x0
        j_star = resolve_j_star(config)
        J = run_policy(config.plant, config.cost, config.x0, 0, lambda: None, np.inf)[1]
        rec = make_record(1, np.zeros(0), J, J, j_star, config.settings.warp)
        if callback is not None:
            callback(rec)
        return [rec]
    box = input_box(config, input_limit)

    def decode(theta):
        U = np.asarray(theta, float).reshape(N, n_u)
        return lambda: (lambda x, k: U[k])

    return run_decoded(config, decode, box, (), callback, trace)


def fit_linear_model(pairs: list, controls: list, n_x: int, n_u: int, cost: CostSpec):
    """Least-squares ``(A, B)`` from transitions in deviation coordinates.

    ``pairs`` holds arrays with rows ``[x_k, x_{k+1}]`` and ``controls`` the
    matching ``u_k``. Returns the model and whether the regressor was rank
    deficient (then the minimum-norm solution is used).
    """
    P = np.concatenate(pairs)
    Z = np.hstack([P[:, :n_x] - cost.x_ref, np.concatenate(controls) - cost.u_ref])
    Y = P[:, n_x:] - cost.x_ref
    sol, _, rank, _ = np.linalg.lstsq(Z, Y, rcond=None)
    theta = sol.T  # (n_x, n_x + n_u)
    return LinearModel(theta[:, :n_x], theta[:, n_x:]), rank < n_x + n_u


def run_ls_identification(
    config: ExperimentConfig, rng: Optional[np.random.Generator] = None, callback=None, trace=None
) -> list[RunRecord]:
    """Certainty-equivalence loop with least-squares refits on all data.

    Run ``i`` uses the controller for the current model (the first model is
    drawn uniformly from ``config.bounds``); its transitions join the data
    set and ``(A, B)`` is refit by ordinary least squares. Runs that diverge
    contribute the transitions recorded before divergence. ``trace``, if a
    dict, receives the final regressor ``Z`` and targets ``Y``.
    """
    n_x, n_u = config.plant.n_x, config.plant.n_u
    rng = split_rng(config.seed)["method"] if rng is None else rng
    j_star = resolve_j_star(config)
    penalty = penalty_cost(config)
    model = unpack_model(config.bounds.sample(rng, 1)[0], n_x, n_u)
    data_x: list[np.ndarray] = []  # rows [x_k, x_{k+1}]
    data_u: list[np.ndarray] = []
    records: list[RunRecord] = []
    best = np.inf
    flag = ""
    for n in range(1, config.budget + 1):
        traj, J, failed = run_policy(
            config.plant,
            config.cost,
            config.x0,
            config.N,
            lambda: synthesize(model, config.cost, config.N, config.controller),
            penalty,
        )
        best = min(best, J)
        rec_flag = ";".join(f for f in (flag, "diverged" if failed else "") if f)
        rec = make_record(n, pack_model(model), J, best, j_star, config.settings.warp, rec_flag)
        records.append(rec)
        if callback is not None:
            callback(rec)
        k = traj.horizon
        if k > 0:
            data_x.append(np.hstack([traj.states[:-1], traj.states[1:]]))
            data_u.append(traj.controls)
        if data_x:
            model, deficient = fit_linear_model(data_x, data_u, n_x, n_u, config.cost)
            flag = "rank-deficient" if deficient else ""
        else:
            model = unpack_model(config.bounds.sample(rng, 1)[0], n_x, n_u)
            flag = "no-data"
    if isinstance(trace, dict) and data_x:
        P = np.concatenate(data_x)
        trace["Z"] = np.hstack([P[:, :n_x] - config.cost.x_ref, np.concatenate(data_u) - config.cost.u_ref])
        trace["Y"] = P[:, n_x:] - config.cost.x_ref
    return records
