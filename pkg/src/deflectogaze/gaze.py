"""Optical axis from back-traced normals, kappa calibration and gaze metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .eye import CORNEA, SCLERA, TwoSphereEye
from .geometry import DegenerateConfigurationError, Line3, angle_between, best_fit_axis, normalize
from .reconstruction import SampleSet


class InsufficientTrialsError(ValueError):
    pass


class MissingReferenceError(KeyError):
    pass


@dataclass
class GazeEstimate:
    optical_axis: Line3
    rms_axis_residual: float
    sample_count: int
    model: Optional[TwoSphereEye] = None
    single_region: bool = False

    @property
    def direction(self):
        return self.optical_axis.direction


def estimate_axis(samples: SampleSet, init_model: TwoSphereEye, max_lines: Optional[int] = None) -> GazeEstimate:
    """Best-fit axis of the back-traced refined normals, started on O''_s -> O''_c.

    The axis is oriented out of the eye (sclera centre toward cornea
    centre).  With samples from only one region the result is flagged.
    """
    if max_lines is not None and len(samples) > max_lines:
        samples = samples.subset(np.linspace(0, len(samples) - 1, max_lines).astype(int))
    pts, dirs = samples.back_traced()
    outward = init_model.cornea_center - init_model.sclera_center
    init = Line3(init_model.sclera_center, outward)
    fit = best_fit_axis((pts, dirs), init)
    axis = fit.axis
    if axis.direction @ outward < 0:
        axis = Line3(axis.point, -axis.direction)
    regions = set(np.unique(samples.region).tolist())
    single = not {CORNEA, SCLERA} <= regions
    return GazeEstimate(axis, fit.rms_distance, len(samples), init_model, single)


@dataclass(frozen=True)
class GazeTransform:
    """``visual = rotation @ optical``."""

    rotation: np.ndarray
    fit_residual: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-10) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)

    def apply(self, directions):
        return normalize(np.asarray(directions, dtype=float) @ self.rotation.T)

    @property
    def angle_deg(self):
        from .geometry import rotation_angle

        return np.degrees(rotation_angle(self.rotation))


def _as_directions(axes):
    return np.array([a.direction if isinstance(a, Line3) else normalize(np.asarray(a, float)) for a in axes])


def calibrate_kappa(axes: Sequence, targets, eye_position) -> GazeTransform:
    """Rotation taking optical axes onto the eye-to-target directions (orthogonal Procrustes)."""
    d = _as_directions(axes)
    t = normalize(np.asarray(targets, dtype=float) - np.asarray(eye_position, dtype=float))
    if len(d) != len(t):
        raise ValueError("axes and targets differ in length")
    if len(d) < 2 or np.linalg.matrix_rank(t, tol=1e-9) < 2 or np.linalg.matrix_rank(d, tol=1e-9) < 2:
        raise DegenerateConfigurationError("calibration directions have rank < 2")
    h = t.T @ d
    u, _, vt = np.linalg.svd(h)
    fix = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))])
    r = u @ fix @ vt
    res = angle_between(d @ r.T, t)
    return GazeTransform(r, float(np.sqrt(np.mean(res**2))))


@dataclass
class AngleSeries:
    position: float  # stage position a, degrees
    angles: np.ndarray  # per-trial theta_{a,i}, degrees

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        if not np.all(np.isfinite(self.angles)):
            raise ValueError("angles must be finite")

    @property
    def n(self):
        return len(self.angles)

    @property
    def mean(self):
        return float(np.mean(self.angles))


def relative_error(series: Sequence[AngleSeries], reference: float = 0.0) -> dict:
    """Mean relative error per position: ``| |mean_a - mean_ref| - |a - ref| |`` (degrees)."""
    ref = [s for s in series if np.isclose(s.position, reference)]
    if not ref:
        raise MissingReferenceError(f"no series at the reference position {reference}")
    m0 = ref[0].mean
    return {s.position: abs(abs(s.mean - m0) - abs(s.position - reference)) for s in series}


def precision(series: AngleSeries) -> float:
    """Population standard deviation (divisor n) of the trial angles."""
    if series.n < 2:
        raise InsufficientTrialsError("precision needs at least two trials")
    return float(np.std(series.angles))


def accuracy_rmse(directions, truth) -> float:
    """RMS angle (degrees) between measured directions and ground truth."""
    d = normalize(np.atleast_2d(np.asarray(directions, dtype=float)))
    t = normalize(np.asarray(truth, dtype=float))
    return float(np.degrees(np.sqrt(np.mean(angle_between(d, t) ** 2))))


def angular_precision(directions) -> float:
    """RMS angle (degrees) of directions about their mean; divisor n."""
    d = normalize(np.atleast_2d(np.asarray(directions, dtype=float)))
    if len(d) < 2:
        raise InsufficientTrialsError("precision needs at least two trials")
    m = normalize(d.mean(axis=0))
    return float(np.degrees(np.sqrt(np.mean(angle_between(d, m) ** 2))))


def stage_angle(direction, stage_axis=(0.0, 1.0, 0.0), zero=(0.0, 0.0, -1.0)) -> float:
    """Signed angle (degrees) of ``direction`` projected onto the stage's
    rotation plane, measured from ``zero`` about ``stage_axis`` (right hand)."""
    k = normalize(np.asarray(stage_axis, dtype=float))
    d = np.asarray(direction, dtype=float)
    d = d - (d @ k) * k
    z = np.asarray(zero, dtype=float)
    z = normalize(z - (z @ k) * k)
    return float(np.degrees(np.arctan2(np.cross(z, d) @ k, z @ d)))


def perturb_direction(direction, sigma_deg: float, rng) -> np.ndarray:
    """Tilt ``direction`` by an isotropic Gaussian angle (per tangent component sigma)."""
    from .geometry import _orthonormal_basis

    d = normalize(np.asarray(direction, dtype=float))
    e1, e2 = _orthonormal_basis(d)
    a, b = np.radians(sigma_deg) * rng.standard_normal(2)
    return normalize(d + np.tan(a) * e1 + np.tan(b) * e2)
