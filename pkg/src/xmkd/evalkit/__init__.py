"""Metrics, experiment harnesses, BEV rendering and plots."""
from .bev import bev_raster, render_bev
from .harness import ABLATION_ROWS, DEFAULT_GRID, ExperimentReport, ExperimentRow, ablation_run, sensitivity_sweep
from .metrics import accuracy, confusion, iou_per_class, miou

__all__ = [
    "ABLATION_ROWS",
    "DEFAULT_GRID",
    "ExperimentReport",
    "ExperimentRow",
    "ablation_run",
    "accuracy",
    "bev_raster",
    "confusion",
    "iou_per_class",
    "miou",
    "render_bev",
    "sensitivity_sweep",
]
