"""Bayesian optimization of linear dynamics models for closed-loop control.

The main entry points are :func:`run_adobo` for the model-learning loop,
:mod:`adobo.baselines` for the comparison methods, :func:`optimal_cost` for
the reference optimum and :mod:`adobo.presets` for the benchmark tasks.
"""

from .core import Box, CostSpec, LinearModel, SoftBounds, pack_model, unpack_model
from .dobo import ExperimentConfig, closed_loop_evaluate, run_adobo, run_decoded
from .harness import BoSettings, RunRecord
from .oracle import OracleError, optimal_cost
from .plants import PlantSpec, make_plant

__version__ = "0.1.0"

__all__ = [
    "Box",
    "BoSettings",
    "CostSpec",
    "ExperimentConfig",
    "LinearModel",
    "OracleError",
    "PlantSpec",
    "RunRecord",
    "SoftBounds",
    "closed_loop_evaluate",
    "make_plant",
    "optimal_cost",
    "pack_model",
    "run_adobo",
    "run_decoded",
    "unpack_model",
]
