from .metrics import (
    MetricsReport,
    alpha_sweep,
    angle_stats,
    angles_between,
    entailment_asr,
    eval_indices,
    plateau,
    retrieval_asr,
    run_attack_matrix,
)
from .report import read_report, write_report
from .settings import (
    AttackSetting,
    baseline_settings,
    grid_settings,
    run_setting,
    tasks_for,
    vanilla_setting,
)

__all__ = [
    "AttackSetting",
    "MetricsReport",
    "alpha_sweep",
    "angle_stats",
    "angles_between",
    "baseline_settings",
    "entailment_asr",
    "eval_indices",
    "grid_settings",
    "plateau",
    "read_report",
    "retrieval_asr",
    "run_attack_matrix",
    "run_setting",
    "tasks_for",
    "vanilla_setting",
    "write_report",
]
