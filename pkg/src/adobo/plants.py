"""Ground-truth simulators for the benchmark systems.

All steps broadcast over leading batch axes: ``x`` may have shape
``(..., n_x)`` and ``u`` shape ``(..., n_u)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import DivergenceError, LinearModel, ShapeError, Trajectory

DIVERGENCE_NORM = 1e6

PLANT_KINDS = ("dubins", "lin1d", "lin2d", "cartpole")

_DIMS = {"dubins": (3, 2), "lin1d": (1, 1), "lin2d": (2, 1), "cartpole": (4, 1)}

CARTPOLE_DEFAULTS = {"M": 1.5, "m": 0.175, "l": 0.28, "g": 9.81}


class SingularConfiguration(RuntimeError):
    pass


@dataclass(frozen=True)
class PlantSpec:
    kind: str
    dt: float = 0.1
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PLANT_KINDS:
            raise ValueError(f"unknown plant {self.kind!r}; expected one of {PLANT_KINDS}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        params = dict(CARTPOLE_DEFAULTS) if self.kind == "cartpole" else {}
        params.update(self.params)
        if self.kind == "cartpole":
            for key in ("M", "m", "l"):
                if not params[key] > 0:
                    raise ValueError(f"cart-pole parameter {key} must be positive")
        object.__setattr__(self, "params", params)

    @property
    def n_x(self) -> int:
        return _DIMS[self.kind][0]

    @property
    def n_u(self) -> int:
        return _DIMS[self.kind][1]

    @property
    def is_linear(self) -> bool:
        return self.kind in ("lin1d", "lin2d")


def make_plant(name: str, **params) -> PlantSpec:
    """Plant by config name: ``dubins``, ``lin1d``, ``lin2d`` or ``cartpole``."""
    dt = params.pop("dt", 0.1)
    return PlantSpec(name, dt=dt, params=params)


def true_linear_model(plant: PlantSpec) -> LinearModel:
    if plant.kind == "lin1d":
        return LinearModel([[1.0]], [[1.0]])
    if plant.kind == "lin2d":
        return LinearModel([[1.0, 1.0], [0.0, 1.0]], [[0.0], [1.0]])
    raise ValueError(f"{plant.kind} is not a linear plant")


def cartpole_accelerations(params: Mapping[str, float], x, u):
    """Solve the coupled cart/pendulum equations for ``(xdd, psidd)``.

    ``(M+m) xdd - m l psidd cos psi + m l psid^2 sin psi = F`` and
    ``l psidd - g sin psi = xdd cos psi``.
    """
    M, m, l, g = params["M"], params["m"], params["l"], params["g"]
    psi, psid = x[..., 2], x[..., 3]
    F = u[..., 0]
    c, s = np.cos(psi), np.sin(psi)
    det = (M + m) * l - m * l * c * c
    if np.any(np.abs(det) < 1e-9):
        raise SingularConfiguration("singular configuration")
    rhs1 = F - m * l * psid**2 * s
    rhs2 = g * s
    # [[M+m, -m l c], [-c, l]] @ [xdd, psidd] = [rhs1, rhs2]
    xdd = (l * rhs1 + m * l * c * rhs2) / det
    psidd = (c * rhs1 + (M + m) * rhs2) / det
    return xdd, psidd


def _check(plant: PlantSpec, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1:] != (plant.n_x,) or u.shape[-1:] != (plant.n_u,):
        raise ShapeError(
            f"{plant.kind} expects n_x={plant.n_x}, n_u={plant.n_u}; "
            f"got x{x.shape}, u{u.shape}"
        )
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite state or control")
    return x, u


def _step(plant: PlantSpec, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    kind, dt = plant.kind, plant.dt
    if kind == "lin1d":
        return x + u
    if kind == "lin2d":
        return np.stack([x[..., 0] + x[..., 1], x[..., 1] + u[..., 0]], axis=-1)
    if kind == "dubins":
        v, w, phi = u[..., 0], u[..., 1], x[..., 2]
        return x + dt * np.stack([v * np.cos(phi), v * np.sin(phi), w], axis=-1)
    xdd, psidd = cartpole_accelerations(plant.params, x, u)
    return x + dt * np.stack([x[..., 1], xdd, x[..., 3], psidd], axis=-1)


def step(plant: PlantSpec, x, u) -> np.ndarray:
    """One step of the true plant (forward Euler for the continuous ones)."""
    x, u = _check(plant, x, u)
    return _step(plant, x, u)


def rollout(plant: PlantSpec, x0, controls) -> Trajectory:
    controls = np.asarray(controls, dtype=float).reshape(-1, plant.n_u)
    states = rollout_batch(plant, x0, controls)
    return Trajectory(states, controls)


def rollout_batch(plant: PlantSpec, x0, controls) -> np.ndarray:
    """States ``(..., N+1, n_x)`` for control sequences ``(..., N, n_u)``."""
    controls = np.asarray(controls, dtype=float)
    x = np.broadcast_to(np.asarray(x0, dtype=float), controls.shape[:-2] + (plant.n_x,))
    x, _ = _check(plant, x, controls)
    states = np.empty(controls.shape[:-2] + (controls.shape[-2] + 1, plant.n_x))
    states[..., 0, :] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(controls.shape[-2]):
            x = _step(plant, x, controls[..., k, :])
            if not np.all(np.isfinite(x)) or np.abs(x).max(initial=0.0) > DIVERGENCE_NORM:
                raise DivergenceError(f"diverged at step {k + 1}")
            states[..., k + 1, :] = x
    return states


def linearize(plant: PlantSpec, x, u, eps: float = 1e-6) -> LinearModel:
    """Jacobian ``(df/dx, df/du)`` of the discrete step by central differences."""
    x, u = _check(plant, x, u)
    if plant.is_linear:
        return true_linear_model(plant)
    n_x, n_u = plant.n_x, plant.n_u
    z = np.concatenate([x, u])
    E = np.eye(n_x + n_u) * eps
    zp, zm = z + E, z - E
    fp = _step(plant, zp[:, :n_x], zp[:, n_x:])
    fm = _step(plant, zm[:, :n_x], zm[:, n_x:])
    J = ((fp - fm) / (2 * eps)).T
    return LinearModel(J[:, :n_x], J[:, n_x:])
