"""Simulation and learning toolkit for mirror-array IRS orientation in indoor VLC."""

from .scene import ConfigError, Scene, build_scene, lambertian_order

__version__ = "0.1.0"
__all__ = ["ConfigError", "Scene", "build_scene", "lambertian_order"]
