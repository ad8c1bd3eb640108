"""Configuration, presets, the end-to-end runner and the command line."""

from .config import ScenarioConfig, config_from_json, load_config
from .presets import get_preset, paper_fig2
from .run import (
    build_instance,
    check_report,
    detect_offline,
    detection_summary,
    far_calibrate,
    run_algorithm1,
    simulate,
)

__all__ = [
    "ScenarioConfig",
    "build_instance",
    "check_report",
    "config_from_json",
    "detect_offline",
    "detection_summary",
    "far_calibrate",
    "get_preset",
    "load_config",
    "paper_fig2",
    "run_algorithm1",
    "simulate",
]
