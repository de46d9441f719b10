"""Adversarial overlay attacks on YOLO-style detectors.

Images are H x W x C float arrays in [0, 1]; masks are H x W bool arrays.
"""

from ._core import (
    AttackConfig,
    ConfigError,
    Detector,
    InputError,
    ShapeError,
    build_mask,
    generate_scene,
    run_attack,
    success_rate,
)

__all__ = [
    "AttackConfig",
    "ConfigError",
    "Detector",
    "InputError",
    "ShapeError",
    "build_mask",
    "generate_scene",
    "run_attack",
    "success_rate",
]
