"""Reference optimum ``J0*`` of the open-loop problem on the true plant.

Linear plants are solved exactly (Riccati recursion for quadratic costs, the
convex hinge QP otherwise). Nonlinear plants use multistart local descent
on the control sequence with central finite-difference gradients; each
start reports a stationarity certificate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import lsq_linear

from .control import (
    HingeQP,
    QpNotConverged,
    lqr_backward,
    mpc_solve,
    predicted_cost,
    solve_hinge_qp,
    synthesize,
)
from .core import CostSpec, DivergenceError, stage_costs
from .plants import PlantSpec, linearize, rollout_batch, true_linear_model

logger = logging.getLogger(__name__)

CERTIFICATE_TOL = 1e-4


class OracleError(RuntimeError):
    def __init__(self, message: str, best: Optional["OracleResult"] = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class OracleResult:
    j_star: float
    controls: np.ndarray
    grad_norm: float
    certified: bool
    start_costs: tuple = ()


def oracle_linear(plant: PlantSpec, cost: CostSpec, x0, N: int) -> float:
    """``x0' P_0 x0`` from the Riccati recursion on the true linear model."""
    if not plant.is_linear:
        raise ValueError(f"{plant.kind} is not linear; use oracle_nonlinear")
    if cost.has_hinge:
        raise ValueError("cost is not purely quadratic; use oracle_nonlinear")
    return lqr_backward(true_linear_model(plant), cost, N).cost_to_go(x0)


def oracle_convex(plant: PlantSpec, cost: CostSpec, x0, N: int) -> float:
    """Exact optimum of a linear plant with a quadratic + hinge cost."""
    if not plant.is_linear:
        raise ValueError(f"{plant.kind} is not linear")
    model = true_linear_model(plant)
    if N == 0:
        return predicted_cost(model, cost, x0, np.zeros((0, plant.n_u)))
    return predicted_cost(model, cost, x0, mpc_solve(model, cost, x0, 0, N, tol=1e-10))


class _Problem:
    """Rollout cost and its finite-difference derivatives for one task."""

    def __init__(self, plant: PlantSpec, cost: CostSpec, x0, N: int):
        self.plant, self.cost, self.N = plant, cost, N
        self.x0 = np.asarray(x0, float)
        self.shape = (N, plant.n_u)
        self.smooth = cost.without_hinge()

    def states(self, U):
        return rollout_batch(self.plant, self.x0, np.asarray(U).reshape((-1,) + self.shape))

    def value(self, u_flat) -> float:
        try:
            X = self.states(u_flat)
        except (DivergenceError, ValueError):
            return np.inf
        return float(stage_costs(X, u_flat.reshape((1,) + self.shape), self.cost)[0])

    def perturbed(self, u_flat):
        """States and controls for ``u`` and its central perturbations."""
        P = u_flat.size
        h = 1e-6 * (1.0 + np.abs(u_flat))
        E = np.diag(h)
        batch = np.concatenate([u_flat[None], u_flat + E, u_flat - E])
        U = batch.reshape((-1,) + self.shape)
        return self.states(U), U, h, P

    def value_and_grad(self, u_flat, smooth_only=False):
        X, U, h, P = self.perturbed(u_flat)
        c = stage_costs(X, U, self.smooth if smooth_only else self.cost)
        g = (c[1 : P + 1] - c[P + 1 :]) / (2 * h)
        return float(c[0]), g, X, h


def _bfgs(problem: _Problem, u0, gtol: float = 1e-6, max_iter: int = 3000, patience: int = 10):
    """BFGS with Armijo backtracking; infinite costs shrink the step.

    Stops at ``|g|_inf <= gtol`` or after ``patience`` consecutive iterations
    without relative progress above 1e-14 (finite-difference noise floor).
    """
    x = np.asarray(u0, float).ravel().copy()
    f, g, _, _ = problem.value_and_grad(x)
    Hinv = np.eye(x.size)
    first = True
    stalled = 0
    for _ in range(max_iter):
        if np.abs(g).max() <= gtol or stalled >= patience:
            break
        p = -Hinv @ g
        slope = g @ p
        if slope >= 0:
            Hinv = np.eye(x.size)
            p, slope = -g, -(g @ g)
        t = 1.0
        while True:
            f_new = problem.value(x + t * p)
            if f_new <= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-14:
                return x, f, g
        x_new = x + t * p
        f_new, g_new, _, _ = problem.value_and_grad(x_new)
        s, yv = x_new - x, g_new - g
        sy = s @ yv
        if sy > 1e-14:
            if first:
                Hinv = np.eye(x.size) * (sy / (yv @ yv))
                first = False
            rho = 1.0 / sy
            V = np.eye(x.size) - rho * np.outer(s, yv)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        stalled = stalled + 1 if f - f_new <= 1e-14 * max(1.0, abs(f)) else 0
        x, f, g = x_new, f_new, g_new
    return x, f, g


def _hinge_rows(problem: _Problem, X):
    """Hinge arguments ``g_r`` for states ``X (..., N+1, n_x)``, excluding ``x_0``."""
    sb = problem.cost.soft_bounds
    parts = []
    lo_idx = np.flatnonzero(np.isfinite(sb.lower))
    hi_idx = np.flatnonzero(np.isfinite(sb.upper))
    if lo_idx.size:
        parts.append((sb.lower[lo_idx] - X[..., 1:, lo_idx]).reshape(X.shape[:-2] + (-1,)))
    if hi_idx.size:
        parts.append((X[..., 1:, hi_idx] - sb.upper[hi_idx]).reshape(X.shape[:-2] + (-1,)))
    return np.concatenate(parts, axis=-1)


def _tv_gains(As, Bs, cost: CostSpec) -> np.ndarray:
    """Time-varying LQR gains for the Jacobians along a trajectory."""
    N = len(As)
    K = np.empty((N, Bs.shape[2], As.shape[1]))
    P = cost.Qf
    for i in range(N - 1, -1, -1):
        A, B = As[i], Bs[i]
        S = cost.R + B.T @ P @ B
        K[i] = -np.linalg.solve(S, B.T @ P @ A)
        P = cost.Q + A.T @ P @ (A + B @ K[i])
        P = 0.5 * (P + P.T)
    return K


def _closed_loop_rollout(problem: _Problem, X_nom, U_nom, K, v):
    """Roll out ``u_i = U_i + v_i + K_i (x_i - X_i)`` on the true plant."""
    from .plants import step

    x = problem.x0
    X, U = [x], []
    for i in range(problem.N):
        u = U_nom[i] + v[i] + K[i] @ (x - X_nom[i])
        x = step(problem.plant, x, u)
        if not np.all(np.isfinite(x)) or np.abs(x).max() > 1e6:
            raise DivergenceError(f"diverged at step {i + 1}")
        X.append(x)
        U.append(u)
    return np.array(X), np.array(U)


def _condense(problem: _Problem, X, U):
    """Local model of the cost in closed-loop feedforward coordinates ``v``.

    Around the trajectory ``(X, U)`` the plant is linearized and stabilized
    with time-varying LQR gains ``K``; perturbations then follow
    ``du_i = K_i dx_i + v_i``. Returns the hinge QP whose objective is the
    quadratic part (exact for the linear model) plus the linearized hinge
    rows, together with ``K``.
    """
    plant, cost, N = problem.plant, problem.cost, problem.N
    n_x, n_u = plant.n_x, plant.n_u
    P = N * n_u
    W = np.concatenate([np.repeat(cost.Q[None], N, axis=0), cost.Qf[None]])
    lins = [linearize(plant, X[i], U[i]) for i in range(N)]
    As = np.array([m.A for m in lins])
    Bs = np.array([m.B for m in lins])
    K = _tv_gains(As, Bs, cost)
    # columns indexed by the entries of v: dX = Sx v, dU = Su v
    Sx = np.zeros((P, N + 1, n_x))
    Su = np.zeros((P, N, n_u))
    for i in range(N):
        Su[:, i] = Sx[:, i] @ K[i].T
        Su[i * n_u : (i + 1) * n_u, i] += np.eye(n_u)
        Sx[:, i + 1] = Sx[:, i] @ As[i].T + Su[:, i] @ Bs[i].T
    dx = X - cost.x_ref
    du = U - cost.u_ref
    H = 2.0 * (
        np.einsum("pia,iab,qib->pq", Sx, W, Sx) + np.einsum("pia,ab,qib->pq", Su, cost.R, Su)
    )
    f = 2.0 * (np.einsum("pia,iab,ib->p", Sx, W, dx) + np.einsum("pia,ab,ib->p", Su, cost.R, du))
    if cost.has_hinge:
        G0 = _hinge_rows(problem, X[None])[0]
        Ag = (_hinge_rows(problem, X[None] + Sx) - G0).T
        lam = cost.soft_bounds.weight
    else:
        G0, Ag, lam = np.zeros(0), np.zeros((0, P)), 0.0
    return HingeQP(0.5 * (H + H.T), f, Ag, G0, lam), K


def _prox_linear(problem: _Problem, u0, max_iter: int = 500, rtol: float = 1e-13):
    """Gauss-Newton descent for a quadratic + hinge rollout cost.

    Each iteration solves the hinge QP of :func:`_condense` and steps by a
    closed-loop forward pass on the true plant, with an Armijo search
    against the model decrease. Working in closed-loop coordinates keeps the
    QP well conditioned on open-loop unstable plants; the minimizer is the
    same open-loop sequence.
    """
    N, n_u = problem.N, problem.plant.n_u
    U = np.asarray(u0, float).reshape(N, n_u)
    X = problem.states(U)[0]
    F = problem.value(U.ravel())
    for _ in range(max_iter):
        qp, K = _condense(problem, X, U)
        v = solve_hinge_qp(qp, tol=1e-10, max_iter=200).v
        pred = qp.weight * np.maximum(qp.b, 0.0).sum() - qp.objective(v)
        if pred <= rtol * max(1.0, abs(F)):
            break
        v = v.reshape(N, n_u)
        t = 1.0
        while True:
            try:
                X_new, U_new = _closed_loop_rollout(problem, X, U, K, t * v)
                F_new = problem.value(U_new.ravel())
            except (DivergenceError, ValueError):
                F_new = np.inf
            if F_new <= F - 1e-4 * t * pred:
                break
            t *= 0.5
            if t < 1e-12:
                return U.ravel()
        X, U, F = X_new, U_new, F_new
    return U.ravel()


def stationarity(problem: _Problem, u_flat, active_tol: float = 1e-6) -> float:
    """Smallest infinity-norm of a (Clarke) subgradient of the cost at ``u``.

    Measured in the closed-loop feedforward coordinates of :func:`_condense`,
    which are related to the raw controls by a unit-triangular map; raw
    control coordinates of an open-loop unstable plant amplify rounding
    error by orders of magnitude. Hinge pieces with ``|g_r| <= active_tol``
    contribute any multiplier in ``[0, lam]``.
    """
    N, n_u = problem.N, problem.plant.n_u
    U = np.asarray(u_flat, float).reshape(N, n_u)
    X = problem.states(U)[0]
    qp, _ = _condense(problem, X, U)
    g, lam = qp.b, qp.weight
    base = qp.f + lam * qp.A[g > active_tol].sum(axis=0)
    near = np.abs(g) <= active_tol
    if not np.any(near):
        return float(np.abs(base).max())
    Jn = qp.A[near].T
    res = lsq_linear(Jn, -base, bounds=(0.0, lam))
    return float(np.abs(Jn @ res.x + base).max())


def _jacobian_warm_start(problem: _Problem) -> Optional[np.ndarray]:
    plant, cost = problem.plant, problem.cost
    model = linearize(plant, cost.x_ref, cost.u_ref)
    try:
        controller = synthesize(model, cost, problem.N)
        x, controls = problem.x0, []
        from .plants import step

        for i in range(problem.N):
            u = controller(x, i)
            controls.append(u)
            x = step(plant, x, u)
        U = np.array(controls).ravel()
        return U if np.isfinite(problem.value(U)) else None
    except Exception:  # noqa: BLE001 -- a failed warm start only drops one start
        return None


def oracle_nonlinear(
    plant: PlantSpec,
    cost: CostSpec,
    x0,
    N: int,
    seeds: int = 4,
    rng: Optional[np.random.Generator] = None,
    random_scale: float = 0.5,
) -> OracleResult:
    """Multistart local minimization of the open-loop rollout cost.

    Starts: the zero (reference) sequence, the closed-loop controls of LQR/MPC
    designed on the Jacobian linearization at the reference, and
    ``seeds - 2`` (at least one) random perturbations of the best of those.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    problem = _Problem(plant, cost, x0, N)
    if N == 0:
        X = np.asarray(x0, float)[None]
        J = float(stage_costs(X, np.zeros((0, plant.n_u)), cost))
        return OracleResult(J, np.zeros((0, plant.n_u)), 0.0, True)
    zero = np.tile(cost.u_ref, N)
    starts = [zero]
    warm = _jacobian_warm_start(problem)
    if warm is not None:
        starts.append(warm)
    anchor = min(starts, key=problem.value)
    for _ in range(max(seeds - len(starts), 1)):
        starts.append(anchor + random_scale * (1 + np.abs(anchor).max()) * rng.standard_normal(anchor.size))

    results = []
    for u0 in starts:
        if not np.isfinite(problem.value(u0)):
            continue
        try:
            if cost.has_hinge:
                u = _prox_linear(problem, u0)
            else:
                u = _bfgs(problem, u0)[0]
            J = problem.value(u)
            cert = stationarity(problem, u)
        except (DivergenceError, QpNotConverged, ValueError, np.linalg.LinAlgError) as exc:
            logger.info("oracle start failed: %s", exc)
            continue
        if np.isfinite(J):
            results.append((J, u, cert))
    if not results:
        raise OracleError("no oracle start produced a finite cost")
    certified = [r for r in results if r[2] <= CERTIFICATE_TOL]
    start_costs = tuple(float(r[0]) for r in results)
    pool = certified or results
    J, u, cert = min(pool, key=lambda r: r[0])
    best = OracleResult(float(J), u.reshape(N, plant.n_u), float(cert), bool(certified), start_costs)
    if not certified:
        raise OracleError(
            f"no oracle start reached stationarity {CERTIFICATE_TOL:g} (best {cert:.2e})", best
        )
    return best


def optimal_cost(plant: PlantSpec, cost: CostSpec, x0, N: int, seeds: int = 4, rng=None) -> float:
    """``J0*`` by the exact route when one exists, else the multistart oracle."""
    if plant.is_linear:
        if cost.has_hinge:
            return oracle_convex(plant, cost, x0, N)
        return oracle_linear(plant, cost, x0, N)
    return oracle_nonlinear(plant, cost, x0, N, seeds=seeds, rng=rng).j_star
