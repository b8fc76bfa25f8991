"""Closed-loop evaluation of hypothesized linear models and the aDOBO loop."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .control import QpNotConverged, RiccatiBreakdown, synthesize
from .core import (
    Box,
    CostSpec,
    DivergenceError,
    Trajectory,
    evaluate_cost,
    theta_dim,
    unpack_model,
)
from .harness import BoSettings, RunRecord, bayes_opt
from .plants import DIVERGENCE_NORM, PlantSpec, SingularConfiguration, rollout, step

PENALTY_FACTOR = 10.0

Controller = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantSpec
    cost: CostSpec
    x0: np.ndarray
    N: int
    bounds: Box
    settings: BoSettings = field(default_factory=BoSettings)
    budget: int = 100
    seed: int = 0
    controller: str = "auto"  # "lqr" | "mpc" | "auto"
    j_star: Optional[float] = None
    initial: Sequence[np.ndarray] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.x0.size != self.plant.n_x:
            raise ValueError("x0 does not match the plant state dimension")
        if (self.cost.n_x, self.cost.n_u) != (self.plant.n_x, self.plant.n_u):
            raise ValueError("cost dimensions do not match the plant")
        if self.N < 0:
            raise ValueError("horizon must be nonnegative")

    @property
    def theta_dim(self) -> int:
        return theta_dim(self.plant.n_x, self.plant.n_u)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def zero_control_cost(config: ExperimentConfig) -> float:
    controls = np.zeros((config.N, config.plant.n_u)) + config.cost.u_ref
    return evaluate_cost(rollout(config.plant, config.x0, controls), config.cost)


def penalty_cost(config: ExperimentConfig) -> float:
    """Cost recorded for diverging or failed experiments."""
    return PENALTY_FACTOR * zero_control_cost(config)


_FAILURES = (
    DivergenceError,
    QpNotConverged,
    RiccatiBreakdown,
    SingularConfiguration,
    FloatingPointError,
    np.linalg.LinAlgError,
)


def run_policy(
    plant: PlantSpec,
    cost: CostSpec,
    x0,
    N: int,
    make_controller: Callable[[], Controller],
    penalty: float,
) -> tuple[Trajectory, float, bool]:
    """Apply ``controller(x_i, i)`` on the true plant for ``N`` steps.

    Returns the (possibly truncated) trajectory, its cost, and whether the
    run failed; failed runs cost ``penalty``.
    """
    x = np.asarray(x0, dtype=float)
    states, controls = [x], []
    try:
        controller = make_controller()
        for i in range(N):
            u = np.asarray(controller(x, i), dtype=float).reshape(plant.n_u)
            if not np.all(np.isfinite(u)):
                raise DivergenceError(f"non-finite control at step {i}")
            with np.errstate(over="ignore", invalid="ignore"):
                x = step(plant, x, u)
            controls.append(u)
            if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_NORM:
                raise DivergenceError(f"diverged at step {i + 1}")
            states.append(x)
    except _FAILURES:
        n_ok = len(states) - 1
        traj = Trajectory(np.array(states), np.array(controls[:n_ok]).reshape(n_ok, plant.n_u))
        return traj, penalty, True
    traj = Trajectory(np.array(states), np.array(controls).reshape(N, plant.n_u))
    return traj, evaluate_cost(traj, cost), False


Decoder = Callable[[np.ndarray], Callable[[], Controller]]


def adobo_decoder(config: ExperimentConfig) -> Decoder:
    """theta -> factory of the optimal controller for the model ``(A, B)(theta)``."""

    def decode(theta):
        model = unpack_model(theta, config.plant.n_x, config.plant.n_u)
        return lambda: synthesize(model, config.cost, config.N, config.controller)

    return decode


def closed_loop_evaluate(
    theta, config: ExperimentConfig, penalty: Optional[float] = None
) -> tuple[Trajectory, float]:
    """Drive the true plant with the controller designed for ``theta``'s model.

    At every step ``i`` the optimal problem over ``{i..N}`` is solved for the
    hypothesized ``(A, B)`` and only its first control is applied.
    """
    if penalty is None:
        penalty = penalty_cost(config)
    traj, J, _ = run_policy(
        config.plant, config.cost, config.x0, config.N, adobo_decoder(config)(theta), penalty
    )
    return traj, J


def resolve_j_star(config: ExperimentConfig) -> float:
    if config.j_star is not None:
        return float(config.j_star)
    from .oracle import optimal_cost

    return optimal_cost(config.plant, config.cost, config.x0, config.N)


def run_decoded(
    config: ExperimentConfig,
    decode: Decoder,
    bounds: Optional[Box] = None,
    initial: Optional[Sequence[np.ndarray]] = None,
    callback=None,
    trace: Optional[dict] = None,
) -> list[RunRecord]:
    """BO over ``bounds`` where each theta is decoded into a controller.

    Every method (aDOBO and the baselines) goes through here; they differ
    only in ``decode``, the search box and the initial parameters.
    """
    j_star = resolve_j_star(config)
    penalty = penalty_cost(config)

    def evaluate(theta):
        return run_policy(
            config.plant, config.cost, config.x0, config.N, decode(theta), penalty
        )[1]

    return bayes_opt(
        evaluate,
        config.bounds if bounds is None else bounds,
        config.budget,
        config.settings,
        config.seed,
        initial=config.initial if initial is None else initial,
        j_star=j_star,
        callback=callback,
        trace=trace,
    )


def run_adobo(config: ExperimentConfig, callback=None, trace=None) -> list[RunRecord]:
    """Algorithm loop: BO over packed ``(A, B)`` with closed-loop evaluation."""
    return run_decoded(config, adobo_decoder(config), callback=callback, trace=trace)
