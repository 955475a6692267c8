"""Simulation study: data-generating processes, sweep runner and factor ANOVA."""

from .anova import AnovaRow, AnovaTable, anova_rank
from .dgp import (
    SimConfig,
    b_from_B,
    generate,
    generate_interlude,
    generate_z3,
    generate_z5,
    replication_seed,
    stratified_sample,
    with_run,
    z3_configs,
    z5_configs,
)
from .sweep import ALL_DESIGNS, RepMetrics, SimResult, run_config, run_replication, run_sweep

__all__ = [
    "ALL_DESIGNS", "AnovaRow", "AnovaTable", "RepMetrics", "SimConfig", "SimResult", "anova_rank",
    "b_from_B", "generate", "generate_interlude", "generate_z3", "generate_z5", "replication_seed",
    "run_config", "run_replication", "run_sweep", "stratified_sample", "with_run", "z3_configs", "z5_configs",
]
