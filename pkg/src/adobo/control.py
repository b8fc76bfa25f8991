"""Controller synthesis for a hypothesized linear model.

Quadratic costs use the finite-horizon Riccati recursion. Costs with hinge
penalties are solved as a condensed convex QP at every step over the
shrinking horizon ``{k, ..., N}``.

The linear model acts on deviations from the references:
``x'-x* = A (x-x*) + B (u-u*)``; with zero references (all benchmark tasks)
this is the plain model ``x' = A x + B u``.

The QP is condensed in the LQR-prestabilized input ``v`` where
``u_j = u* + K_j (x_j - x*) + v_j``. With the Riccati gains the quadratic
part of the cost becomes ``x0' P_k x0 + sum_j v_j' S_j v_j`` with
``S_j = R + B' P_{j+1} B``, so the Hessian is block diagonal and stays
well conditioned even when the hypothesized ``A`` is strongly unstable.
"""

from __future__ import annotations

from dataclasses import dataclass

from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve

from .core import CostSpec, LinearModel, ShapeError, Trajectory, evaluate_cost

KKT_TOL = 1e-6


class RiccatiBreakdown(ArithmeticError):
    pass


class QpNotConverged(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"QP not converged: KKT residual {residual:.3e} after {iterations} iterations"
        )
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class LqrPolicy:
    """Time-varying feedback ``u_k = u* + K_k (x_k - x*)``."""

    gains: np.ndarray  # (N, n_u, n_x)
    value_mats: np.ndarray  # (N+1, n_x, n_x)
    x_ref: np.ndarray
    u_ref: np.ndarray

    @property
    def horizon(self) -> int:
        return self.gains.shape[0]

    def control(self, x, k: int) -> np.ndarray:
        if not 0 <= k < self.horizon:
            raise IndexError(f"step {k} outside horizon {self.horizon}")
        return self.u_ref + self.gains[k] @ (np.asarray(x, float) - self.x_ref)

    def cost_to_go(self, x, k: int = 0) -> float:
        dx = np.asarray(x, float) - self.x_ref
        return float(dx @ self.value_mats[k] @ dx)


def _riccati(A, B, Q, R, Qf, N):
    n_x, n_u = B.shape
    P = np.empty((N + 1, n_x, n_x))
    K = np.empty((N, n_u, n_x))
    S = np.empty((N, n_u, n_u))
    P[N] = Qf
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N - 1, -1, -1):
            Pn = P[k + 1]
            PB = Pn @ B
            S[k] = R + B.T @ PB
            try:
                K[k] = -np.linalg.solve(S[k], PB.T @ A)
            except np.linalg.LinAlgError as exc:
                raise RiccatiBreakdown("Riccati breakdown") from exc
            Pk = Q + A.T @ Pn @ A + A.T @ PB @ K[k]
            P[k] = 0.5 * (Pk + Pk.T)
    return K, P, S


def lqr_backward(model: LinearModel, cost: CostSpec, N: int) -> LqrPolicy:
    if cost.has_hinge:
        raise ValueError("lqr_backward requires a purely quadratic cost")
    if (model.n_x, model.n_u) != (cost.n_x, cost.n_u):
        raise ShapeError("model and cost dimensions differ")
    K, P, _ = _riccati(model.A, model.B, cost.Q, cost.R, cost.Qf, int(N))
    return LqrPolicy(K, P, cost.x_ref, cost.u_ref)


@dataclass(frozen=True)
class HingeQP:
    """``min 0.5 v'Hv + f'v + weight * sum_r max(0, a_r'v + b_r)``.

    In slack form: ``min 0.5 v'Hv + f'v + weight * 1's`` subject to
    ``s >= A v + b`` and ``s >= 0``.
    """

    H: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray
    weight: float

    def objective(self, v) -> float:
        v = np.asarray(v, float)
        hinge = np.maximum(0.0, self.A @ v + self.b).sum() if self.b.size else 0.0
        return float(0.5 * v @ self.H @ v + self.f @ v + self.weight * hinge)

    def inequality_form(self):
        """``(P, q, G, h)`` for ``min 0.5 z'Pz + q'z, G z <= h`` with ``z = (v, s)``."""
        n, m = self.H.shape[0], self.b.size
        P = block_diag(self.H, np.zeros((m, m)))
        q = np.concatenate([self.f, np.full(m, self.weight)])
        G = np.block([[self.A, -np.eye(m)], [np.zeros((m, n)), -np.eye(m)]])
        h = np.concatenate([-self.b, np.zeros(m)])
        return P, q, G, h

    def kkt_residual(self, v, s, nu, omega) -> float:
        """Infinity-norm KKT residual of the slack form."""
        r_stat = self.H @ v + self.f + self.A.T @ nu
        r_slack = self.weight - nu - omega
        w = s - self.A @ v - self.b
        parts = [
            np.abs(r_stat).max(initial=0.0),
            np.abs(r_slack).max(initial=0.0),
            np.maximum(0.0, -w).max(initial=0.0),
            np.maximum(0.0, -s).max(initial=0.0),
            np.maximum(0.0, -nu).max(initial=0.0),
            np.maximum(0.0, -omega).max(initial=0.0),
            np.abs(w * nu).max(initial=0.0),
            np.abs(s * omega).max(initial=0.0),
        ]
        return float(max(parts))


@dataclass(frozen=True)
class QpSolution:
    v: np.ndarray
    s: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    kkt: float
    iterations: int


def _max_step(x, dx) -> float:
    """Largest ``t`` keeping ``x + t dx >= 0``."""
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def solve_hinge_qp(qp: HingeQP, tol: float = KKT_TOL, max_iter: int = 80) -> QpSolution:
    """Mehrotra predictor-corrector interior point on the slack form.

    Converged when every KKT residual component (stationarity, slack
    stationarity, primal equality, both complementarity products) is below
    ``tol * max(1, |f|_inf, |b|_inf)``, i.e. absolute for unit-scale data.
    The slack-stationarity residual ``weight - nu - omega`` is first divided
    by ``max(1, weight)``, its natural scale. The iterate is then polished to
    the exact optimum of its active pattern when that pattern verifies; a
    verified polish also rescues an iteration that stalled short of ``tol``.
    """
    H, f, A, b, lam = qp.H, qp.f, qp.A, qp.b, qp.weight
    n, m = H.shape[0], b.size
    if m == 0 or lam == 0.0:
        v = -np.linalg.solve(H, f)
        s = np.maximum(0.0, A @ v + b)
        nu, om = np.zeros(m), np.full(m, lam)
        return QpSolution(v, s, nu, om, qp.kkt_residual(v, s, nu, om), 0)

    # models whose predictions explode give astronomically scaled data; let
    # the iteration run into non-finite values and report non-convergence
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        sol, converged = _mehrotra(qp, tol, max_iter)
        polished = _polish(qp, sol, tol)
    if polished is not None:
        return polished
    if not converged:
        raise QpNotConverged(sol.kkt, sol.iterations)
    return sol


def _polish(qp: HingeQP, sol: QpSolution, tol: float) -> Optional[QpSolution]:
    """Exact optimum from the active pattern guessed at the interior point.

    Each row is taken as on (``a'v + b > 0``), off (``< 0``) or at its kink
    (``= 0``); kinks are rows with a multiplier strictly inside
    ``(0, weight)`` or a residual below a few thresholds, tried in turn. The
    equality-constrained QP of a pattern is solved directly; if its solution
    is consistent with the pattern and its kink multipliers lie in
    ``[0, weight]`` it satisfies the KKT conditions exactly and replaces the
    interior-point iterate, provided its KKT residual meets the same
    tolerance. Degenerate optima (kinks) are where the interior point
    converges slowest in ``v``. Returns None when no guess verifies.
    """
    if not (np.all(np.isfinite(sol.v)) and np.all(np.isfinite(sol.nu))):
        return None
    H, f, A, b, lam = qp.H, qp.f, qp.A, qp.b, qp.weight
    n = H.shape[0]
    scale = max(1.0, np.abs(f).max(initial=0.0), np.abs(b).max())
    eps = 1e-9 * scale
    r = A @ sol.v + b
    t = sol.nu / lam
    interior = (t > 1e-3) & (t < 1 - 1e-3)
    sign = np.where(r > 0, 1, 0)
    patterns = [np.where(interior | (np.abs(r) <= d * scale), 2, sign) for d in (1e-8, 1e-6, 1e-4)]
    patterns.append(np.where(t > 1 - 1e-3, 1, np.where(t < 1e-3, 0, 2)))
    for pattern in patterns:
        kink = pattern == 2
        E = A[kink]
        k = E.shape[0]
        K = np.block([[H, E.T], [E, np.zeros((k, k))]])
        rhs = np.concatenate([-(f + lam * A[pattern == 1].sum(axis=0)), -b[kink]])
        try:
            z = np.linalg.solve(K, rhs)
        except LinAlgError:
            continue
        if not np.all(np.isfinite(z)):
            continue
        v, mu = z[:n], z[n:]
        r_new = A @ v + b
        if (
            np.all(r_new[pattern == 1] >= -eps)
            and np.all(r_new[pattern == 0] <= eps)
            and np.all(mu >= -1e-9 * lam)
            and np.all(mu <= lam * (1 + 1e-9))
        ):
            nu = np.where(pattern == 1, lam, 0.0)
            nu[kink] = np.clip(mu, 0.0, lam)
            s = np.maximum(0.0, r_new)
            om = lam - nu
            kkt = qp.kkt_residual(v, s, nu, om)
            if kkt <= tol * scale:
                return QpSolution(v, s, nu, om, kkt, sol.iterations)
    return None


def _mehrotra(qp: HingeQP, tol: float, max_iter: int) -> QpSolution:
    H, f, A, b, lam = qp.H, qp.f, qp.A, qp.b, qp.weight
    n, m = H.shape[0], b.size
    scale = max(1.0, np.abs(f).max(initial=0.0), np.abs(b).max())
    thresh = tol * scale
    lam_scale = max(1.0, lam)
    v = np.zeros(n)
    s = np.maximum(b, 0.0) + 1.0
    w = s - b
    nu = np.full(m, 0.5 * lam)
    om = np.full(m, 0.5 * lam)
    AT = A.T

    for it in range(1, max_iter + 1):
        r_v = H @ v + f + AT @ nu
        r_s = lam - nu - om
        r_w = s - A @ v - b - w
        comp1, comp2 = w * nu, s * om
        err = max(
            np.abs(r_v).max(),
            np.abs(r_s).max() / lam_scale,
            np.abs(r_w).max(),
            comp1.max(),
            comp2.max(),
        )
        if err <= thresh:
            return QpSolution(v, s, nu, om, qp.kkt_residual(v, s, nu, om), it - 1), True
        if not np.isfinite(err) or np.any(w <= 0) or np.any(s <= 0):
            break
        mu = (comp1.sum() + comp2.sum()) / (2 * m)
        d1, d2 = nu / w, om / s
        dsum = d1 + d2
        D = d1 * d2 / dsum
        try:
            fac = cho_factor(H + AT @ (D[:, None] * A), lower=True, check_finite=False)
        except LinAlgError:
            break

        def newton(rc1, rc2):
            e = r_s + rc1 / w + d1 * r_w + rc2 / s
            rhs = -r_v - AT @ (-rc1 / w - d1 * r_w + d1 * e / dsum)
            dv = cho_solve(fac, rhs, check_finite=False)
            Adv = A @ dv
            ds = (d1 * Adv - e) / dsum
            dw = ds - Adv + r_w
            dnu = (-rc1 - nu * dw) / w
            dom = (-rc2 - om * ds) / s
            return dv, ds, dw, dnu, dom

        dv, ds, dw, dnu, dom = newton(comp1, comp2)
        alpha = min(
            1.0, _max_step(w, dw), _max_step(s, ds), _max_step(nu, dnu), _max_step(om, dom)
        )
        mu_aff = (
            (w + alpha * dw) @ (nu + alpha * dnu) + (s + alpha * ds) @ (om + alpha * dom)
        ) / (2 * m)
        sigma = (mu_aff / mu) ** 3
        dv, ds, dw, dnu, dom = newton(
            comp1 + dw * dnu - sigma * mu, comp2 + ds * dom - sigma * mu
        )
        alpha = min(
            1.0,
            0.99 * min(_max_step(w, dw), _max_step(s, ds), _max_step(nu, dnu), _max_step(om, dom)),
        )
        v = v + alpha * dv
        s = s + alpha * ds
        w = w + alpha * dw
        nu = nu + alpha * dnu
        om = om + alpha * dom
    return QpSolution(v, s, nu, om, qp.kkt_residual(v, s, nu, om), it), False


class MpcController:
    """Shrinking-horizon convex MPC for one hypothesized model.

    One backward Riccati pass and the closed-loop transition matrices are
    shared by every step ``k``; each call to :meth:`plan` solves the hinge QP
    over ``{k, ..., N}``.
    """

    def __init__(self, model: LinearModel, cost: CostSpec, N: int, tol: float = KKT_TOL):
        if (model.n_x, model.n_u) != (cost.n_x, cost.n_u):
            raise ShapeError("model and cost dimensions differ")
        self.model, self.cost, self.N, self.tol = model, cost, int(N), tol
        A, B = model.A, model.B
        self.K, self.P, self.S = _riccati(A, B, cost.Q, cost.R, cost.Qf, self.N)
        n_x, n_u, N = model.n_x, model.n_u, self.N
        with np.errstate(over="ignore", invalid="ignore"):
            F = A[None] + B[None] @ self.K  # closed-loop matrices, (N, n_x, n_x)
            # phi[j, i] = F_{j-1} ... F_i maps x_i to x_j (identity for j == i)
            phi = np.zeros((N + 1, N + 1, n_x, n_x))
            for i in range(N + 1):
                phi[i, i] = np.eye(n_x)
                for j in range(i, N):
                    phi[j + 1, i] = F[j] @ phi[j, i]
        self.phi = phi
        # gamma[j, l] = phi[j, l+1] B for l < j: effect of v_l on x_j
        gamma = np.zeros((N + 1, N, n_x, n_u))
        for l in range(N):
            gamma[l + 1 :, l] = phi[l + 1 :, l + 1] @ B
        self.gamma = gamma
        self._rows = []
        if cost.has_hinge:
            sb = cost.soft_bounds
            for c in np.flatnonzero(np.isfinite(sb.lower)):
                self._rows.append((int(c), -1.0, sb.lower[c] - cost.x_ref[c]))
            for c in np.flatnonzero(np.isfinite(sb.upper)):
                self._rows.append((int(c), 1.0, cost.x_ref[c] - sb.upper[c]))

    def build_qp(self, x, k: int) -> HingeQP:
        """Condensed QP in the prestabilized inputs ``v_k..v_{N-1}``."""
        N, n_u = self.N, self.model.n_u
        if not 0 <= k < N:
            raise IndexError(f"step {k} outside horizon {N}")
        dx = np.asarray(x, float) - self.cost.x_ref
        M = N - k
        H = 2.0 * block_diag(*self.S[k:]) if M > 1 else 2.0 * self.S[k]
        f = np.zeros(M * n_u)
        nominal = self.phi[k + 1 :, k] @ dx  # (M, n_x), model states x_{k+1..N}
        G = self.gamma[k + 1 :, k:]  # (M, M, n_x, n_u)
        A_rows, b_rows = [], []
        for c, sign, offset in self._rows:
            A_rows.append(sign * G[:, :, c, :].reshape(M, M * n_u))
            b_rows.append(sign * nominal[:, c] + offset)
        if A_rows:
            A_mat, b_vec = np.vstack(A_rows), np.concatenate(b_rows)
        else:
            A_mat, b_vec = np.zeros((0, M * n_u)), np.zeros(0)
        weight = self.cost.soft_bounds.weight if self.cost.has_hinge else 0.0
        return HingeQP(H, f, A_mat, b_vec, weight)

    def _solve_v(self, x, k: int) -> np.ndarray:
        n_u, M = self.model.n_u, self.N - k
        if not self._rows:
            return np.zeros((M, n_u))
        qp = self.build_qp(x, k)
        if not np.all(np.isfinite(qp.b)) or not np.all(np.isfinite(qp.A)):
            raise QpNotConverged(float("inf"), 0)
        if np.all(qp.b <= 0.0):
            # Unconstrained LQR plan already satisfies every bound.
            return np.zeros((M, n_u))
        sol = solve_hinge_qp(qp, tol=self.tol)
        return sol.v.reshape(M, n_u)

    def plan(self, x, k: int) -> np.ndarray:
        """Optimal control sequence ``u_k..u_{N-1}`` for the model from ``x``."""
        v = self._solve_v(x, k)
        dx = np.asarray(x, float) - self.cost.x_ref
        A, B = self.model.A, self.model.B
        controls = np.empty_like(v)
        for j in range(v.shape[0]):
            du = self.K[k + j] @ dx + v[j]
            controls[j] = self.cost.u_ref + du
            dx = A @ dx + B @ du
        return controls

    def first_control(self, x, k: int) -> np.ndarray:
        v = self._solve_v(x, k)
        dx = np.asarray(x, float) - self.cost.x_ref
        return self.cost.u_ref + self.K[k] @ dx + v[0]


def mpc_solve(
    model: LinearModel, cost: CostSpec, x_init, k: int, N: int, tol: float = KKT_TOL
) -> np.ndarray:
    """Optimal controls ``u_k..u_{N-1}`` of the convex problem over ``{k..N}``."""
    return MpcController(model, cost, N, tol).plan(x_init, k)


def predicted_cost(model: LinearModel, cost: CostSpec, x_init, controls) -> float:
    """Cost of ``controls`` on the model's own prediction (deviation coordinates)."""
    controls = np.asarray(controls, float).reshape(-1, model.n_u)
    dx = np.asarray(x_init, float) - cost.x_ref
    states = [dx]
    for u in controls:
        dx = model.A @ dx + model.B @ (u - cost.u_ref)
        states.append(dx)

    return evaluate_cost(Trajectory(np.array(states) + cost.x_ref, controls), cost)


def synthesize(model: LinearModel, cost: CostSpec, N: int, kind: str = "auto"):
    """Controller ``(x, k) -> u`` applying the first optimal control of the
    horizon ``{k..N}``.

    ``kind`` is ``"lqr"``, ``"mpc"`` or ``"auto"`` (MPC only when the cost has
    hinge terms). For quadratic costs both are the same controller.
    """
    if kind == "auto":
        kind = "mpc" if cost.has_hinge else "lqr"
    if kind == "lqr":
        return lqr_backward(model, cost, N).control
    if kind == "mpc":
        return MpcController(model, cost, N).first_control
    raise ValueError(f"unknown controller kind {kind!r}")


def policy_first_control(policy, x, k: int) -> np.ndarray:
    if isinstance(policy, LqrPolicy):
        return policy.control(x, k)
    return policy.first_control(x, k)
