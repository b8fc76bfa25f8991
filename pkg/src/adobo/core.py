"""Shared value types: linear models, quadratic/hinge costs, trajectories and boxes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class ShapeError(ValueError):
    """Raised when array dimensions disagree with a model or plant."""


class DivergenceError(RuntimeError):
    """Raised when a simulated trajectory leaves the finite range."""


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


@dataclass(frozen=True)
class LinearModel:
    """Discrete-time linear model ``x' = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ShapeError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ShapeError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LinearModel):
            return NotImplemented
        return np.array_equal(self.A, other.A) and np.array_equal(self.B, other.B)

    def __hash__(self):
        return hash((self.A.tobytes(), self.B.tobytes()))


def theta_dim(n_x: int, n_u: int) -> int:
    return n_x * (n_x + n_u)


def pack_model(model: LinearModel) -> np.ndarray:
    """Row-major entries of ``A`` followed by row-major entries of ``B``."""
    return np.concatenate([model.A.ravel(), model.B.ravel()])


def unpack_model(theta, n_x: int, n_u: int) -> LinearModel:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != theta_dim(n_x, n_u):
        raise ShapeError(
            f"theta/shape mismatch: got {theta.size} entries for n_x={n_x}, n_u={n_u}"
        )
    A = theta[: n_x * n_x].reshape(n_x, n_x)
    B = theta[n_x * n_x :].reshape(n_x, n_u)
    return LinearModel(A.copy(), B.copy())


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lower_d, upper_d]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ShapeError("box bounds differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def uniform(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))

    def clip(self, theta) -> np.ndarray:
        return np.clip(theta, self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + rng.random((n, self.dim)) * self.width

    def to_unit(self, theta) -> np.ndarray:
        w = np.where(self.width > 0, self.width, 1.0)
        return (np.asarray(theta, dtype=float) - self.lower) / w

    def from_unit(self, z) -> np.ndarray:
        return self.lower + np.asarray(z, dtype=float) * self.width


@dataclass(frozen=True)
class SoftBounds:
    """Hinge-penalized state bounds; infinite entries disable a side."""

    lower: np.ndarray
    upper: np.ndarray
    weight: float

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ShapeError("soft bound vectors differ in length")
        if np.any(lo > hi):
            raise ValueError("soft lower bound exceeds upper bound")
        if not self.weight >= 0:
            raise ValueError("soft bound weight must be nonnegative")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "weight", float(self.weight))

    def violation(self, states: np.ndarray) -> np.ndarray:
        """Componentwise hinge ``max(0, lower - x, x - upper)``; keeps leading axes."""
        states = np.asarray(states, dtype=float)
        with np.errstate(invalid="ignore"):
            below = np.where(np.isfinite(self.lower), self.lower - states, 0.0)
            above = np.where(np.isfinite(self.upper), states - self.upper, 0.0)
        return np.maximum(0.0, np.maximum(below, above))

    @property
    def active(self) -> bool:
        return self.weight > 0 and bool(
            np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper))
        )


@dataclass(frozen=True)
class CostSpec:
    """Quadratic tracking cost with an optional hinge penalty on states.

    ``sum_k (x_k-x*)'Q(x_k-x*) + (u_k-u*)'R(u_k-u*) + (x_N-x*)'Qf(x_N-x*)``
    plus ``weight * sum_{i,j} max(0, lo_j - x_ij, x_ij - hi_j)`` over all
    ``N+1`` states when soft bounds are given.
    """

    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    x_ref: Optional[np.ndarray] = None
    u_ref: Optional[np.ndarray] = None
    soft_bounds: Optional[SoftBounds] = None

    def __post_init__(self):
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        Qf = _as_matrix(self.Qf, "Qf")
        n_x, n_u = Q.shape[0], R.shape[0]
        if Q.shape != (n_x, n_x) or Qf.shape != (n_x, n_x) or R.shape != (n_u, n_u):
            raise ShapeError("Q, Qf must be n_x x n_x and R n_u x n_u")
        for name, M in (("Q", Q), ("Qf", Qf), ("R", R)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12 or np.linalg.eigvalsh(Qf).min() < -1e-12:
            raise ValueError("Q and Qf must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        x_ref = np.zeros(n_x) if self.x_ref is None else np.asarray(self.x_ref, float).ravel()
        u_ref = np.zeros(n_u) if self.u_ref is None else np.asarray(self.u_ref, float).ravel()
        if x_ref.size != n_x or u_ref.size != n_u:
            raise ShapeError("reference dimensions do not match Q/R")
        if self.soft_bounds is not None and self.soft_bounds.lower.size != n_x:
            raise ShapeError("soft bounds must have one entry per state")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Qf", Qf)
        object.__setattr__(self, "x_ref", x_ref)
        object.__setattr__(self, "u_ref", u_ref)

    @classmethod
    def identity(cls, n_x: int, n_u: int, **kw) -> "CostSpec":
        return cls(np.eye(n_x), np.eye(n_u), np.eye(n_x), **kw)

    @property
    def n_x(self) -> int:
        return self.Q.shape[0]

    @property
    def n_u(self) -> int:
        return self.R.shape[0]

    @property
    def has_hinge(self) -> bool:
        return self.soft_bounds is not None and self.soft_bounds.active

    def without_hinge(self) -> "CostSpec":
        return CostSpec(self.Q, self.R, self.Qf, self.x_ref, self.u_ref, None)


@dataclass(frozen=True)
class Trajectory:
    """States ``(N+1, n_x)`` and controls ``(N, n_u)``; 1-D controls mean ``n_u = 1``."""

    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.states, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        U = np.asarray(self.controls, dtype=float)
        if U.ndim == 1:
            U = U.reshape(-1, 1)
        if X.shape[0] != U.shape[0] + 1:
            raise ShapeError(
                f"trajectory has {X.shape[0]} states for {U.shape[0]} controls"
            )
        object.__setattr__(self, "states", X)
        object.__setattr__(self, "controls", U)

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


def stage_costs(states: np.ndarray, controls: np.ndarray, cost: CostSpec) -> np.ndarray:
    """Cost of trajectories with arbitrary leading batch axes.

    ``states`` has shape ``(..., N+1, n_x)`` and ``controls`` ``(..., N, n_u)``;
    returns the total cost per batch element.
    """
    dx = states - cost.x_ref
    du = controls - cost.u_ref
    run = np.einsum("...ki,ij,...kj->...", dx[..., :-1, :], cost.Q, dx[..., :-1, :])
    ctrl = np.einsum("...ki,ij,...kj->...", du, cost.R, du)
    term = np.einsum("...i,ij,...j->...", dx[..., -1, :], cost.Qf, dx[..., -1, :])
    total = run + ctrl + term
    if cost.has_hinge:
        sb = cost.soft_bounds
        total = total + sb.weight * sb.violation(states).sum(axis=(-1, -2))
    return total


def evaluate_cost(traj: Trajectory, cost: CostSpec) -> float:
    controls = traj.controls
    if traj.horizon == 0:
        controls = controls.reshape(0, cost.n_u)
    if traj.states.shape[1] != cost.n_x or controls.shape[1] != cost.n_u:
        raise ShapeError("trajectory dimensions do not match the cost")
    return float(stage_costs(traj.states, controls, cost))
