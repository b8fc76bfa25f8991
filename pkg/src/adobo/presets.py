"""Benchmark task definitions shared by the CLI, the tests and the examples.

Each preset returns an :class:`ExperimentConfig` for one plant; keyword
arguments override any field (``budget``, ``seed``, ``settings``, ...).
"""

from __future__ import annotations

import math

import numpy as np

from .core import Box, CostSpec, SoftBounds
from .dobo import ExperimentConfig
from .harness import BoSettings
from .plants import make_plant

INF = math.inf


def dubins(**overrides) -> ExperimentConfig:
    """Dubins car regulated to the origin with identity penalties."""
    plant = make_plant("dubins")
    cfg = ExperimentConfig(
        plant=plant,
        cost=CostSpec.identity(3, 2),
        x0=np.array([1.5, 1.0, math.pi / 2]),
        N=30,
        bounds=Box.uniform(-2.0, 2.0, 15),
        settings=BoSettings(warp=True),
        budget=200,
        name="dubins",
    )
    return cfg.replace(**overrides)


def lin1d(**overrides) -> ExperimentConfig:
    """``x+ = x + u`` with unit penalties from ``x0 = 1``."""
    cfg = ExperimentConfig(
        plant=make_plant("lin1d"),
        cost=CostSpec.identity(1, 1),
        x0=np.array([1.0]),
        N=30,
        bounds=Box.uniform(-3.0, 3.0, 2),
        settings=BoSettings(warp=True),
        budget=100,
        name="lin1d",
    )
    return cfg.replace(**overrides)


LIN2D_X0 = np.array([2.0, 1.0])


def lin2d(hinge: bool = True, **overrides) -> ExperimentConfig:
    """Double integrator; with ``hinge`` the states are softly kept above (0.5, -0.4)."""
    soft = SoftBounds([0.5, -0.4], [INF, INF], 100.0) if hinge else None
    cfg = ExperimentConfig(
        plant=make_plant("lin2d"),
        cost=CostSpec.identity(2, 1, soft_bounds=soft),
        x0=LIN2D_X0,
        N=30,
        bounds=Box.uniform(-2.0, 2.0, 6),
        settings=BoSettings(warp=True),
        budget=600 if hinge else 100,
        controller="mpc" if hinge else "lqr",
        name="lin2d_hinge" if hinge else "lin2d",
    )
    return cfg.replace(**overrides)


def cartpole(**overrides) -> ExperimentConfig:
    """Cart-pole stabilization with soft cart-position and overshoot bounds."""
    cost = CostSpec(
        Q=np.diag([0.1, 1.0, 100.0, 1.0]),
        R=np.array([[0.1]]),
        Qf=np.diag([0.1, 1.0, 100.0, 1.0]),
        soft_bounds=SoftBounds([-2.0, -INF, -0.1, -INF], [2.0, INF, INF, INF], 100.0),
    )
    cfg = ExperimentConfig(
        plant=make_plant("cartpole"),
        cost=cost,
        x0=np.array([0.0, 0.0, math.pi / 6, 0.0]),
        N=30,
        bounds=Box.uniform(-2.0, 2.0, 20),
        settings=BoSettings(warp=True),
        budget=250,
        controller="mpc",
        name="cartpole",
    )
    return cfg.replace(**overrides)


PRESETS = {
    "dubins": dubins,
    "lin1d": lin1d,
    "lin2d": lambda **kw: lin2d(hinge=False, **kw),
    "lin2d_hinge": lin2d,
    "cartpole": cartpole,
}


def preset(name: str, **overrides) -> ExperimentConfig:
    try:
        return PRESETS[name](**overrides)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
