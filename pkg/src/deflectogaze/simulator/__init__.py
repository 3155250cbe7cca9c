"""Synthetic specular scenes with exact ground truth."""

from .patterns import Checkerboard, CrossSinusoid, Sinusoid, Uniform, sample
from .render import GroundTruth, ground_truth, render, render_phase_sequence, shade
from .scene import (
    DisplayModel,
    FlatMirrorSurface,
    NoiseModel,
    Scene,
    SingleSphereSurface,
    default_scene,
)
