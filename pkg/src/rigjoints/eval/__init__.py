"""Evaluation metrics (MPJPE per category, PCJ curves) and report writers."""

from .metrics import (
    DEFAULT_MAX_STEPS,
    DEFAULT_RAY_COUNT,
    DEFAULT_STEP_FRACTION,
    TABLE_CATEGORIES,
    MetricReport,
    PcjCurve,
    default_factors,
    joint_bones,
    joint_errors,
    mpjpe,
    pcj_curve,
    pcj_threshold,
    pcj_thresholds,
    ray_fan,
)
from .report import mpjpe_csv, mpjpe_table_csv, pcj_csv, pcj_svg, provenance_line, write_text

__all__ = [name for name in dir() if not name.startswith("_")]
