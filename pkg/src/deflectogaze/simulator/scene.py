"""Scene description: cameras, display, specular surface and noise."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..eye import BACKGROUND, SCLERA, EggProfile, TwoSphereEye, default_eye
from ..geometry import (
    EPS_T,
    Line3,
    PinholeCamera,
    Plane,
    Pose,
    Sphere,
    intersect_plane_t,
    intersect_spheres_t,
    normalize,
    rotation_matrix,
)

# iPhone 12 Pro panel: 2532 x 1170 px
DISPLAY_WIDTH_PX = 2532
DISPLAY_HEIGHT_PX = 1170
DISPLAY_PITCH_MM = 0.0578


@dataclass(frozen=True)
class DisplayModel:
    """Flat display; the panel is the local z=0 plane, emitting toward local +z.

    Display coordinate ``(x_D, y_D)`` in pixels sits at local
    ``(x_D * pitch, y_D * pitch, 0)``; integer coordinates are pixel centres.
    """

    pose: Pose
    width_px: int = DISPLAY_WIDTH_PX
    height_px: int = DISPLAY_HEIGHT_PX
    pixel_pitch: float = DISPLAY_PITCH_MM

    def __post_init__(self):
        if self.pixel_pitch <= 0:
            raise ValueError("pixel_pitch must be positive")

    @property
    def plane(self) -> Plane:
        return Plane(self.pose.translation, self.pose.rotation[:, 2])

    def to_world(self, xd, yd):
        xd = np.asarray(xd, dtype=float)
        yd = np.asarray(yd, dtype=float)
        local = np.stack([xd * self.pixel_pitch, yd * self.pixel_pitch, np.zeros_like(xd)], axis=-1)
        return self.pose.apply(local)

    def from_world(self, points):
        local = self.pose.apply_inverse(points)
        return local[..., 0] / self.pixel_pitch, local[..., 1] / self.pixel_pitch

    def contains(self, xd, yd, margin=0.0):
        return (
            (xd >= -0.5 - margin)
            & (xd <= self.width_px - 0.5 + margin)
            & (yd >= -0.5 - margin)
            & (yd <= self.height_px - 0.5 + margin)
        )

    def center_world(self):
        return self.to_world((self.width_px - 1) / 2, (self.height_px - 1) / 2)

    def intersect(self, origins, dirs):
        """Display coordinates hit by rays (NaN when parallel or behind)."""
        t = intersect_plane_t(origins, dirs, self.plane)
        hit = origins + np.nan_to_num(t)[..., None] * dirs
        xd, yd = self.from_world(hit)
        bad = np.isnan(t)
        return np.where(bad, np.nan, xd), np.where(bad, np.nan, yd)


@dataclass(frozen=True)
class NoiseModel:
    intensity_sigma: float = 0.0
    quantize_bits: Optional[int] = None
    occlusion_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.intensity_sigma < 0:
            raise ValueError("intensity_sigma must be >= 0")
        if self.quantize_bits is not None and self.quantize_bits not in (8, 10, 12, 16):
            raise ValueError("quantize_bits must be one of 8, 10, 12, 16")


@dataclass(frozen=True)
class SingleSphereSurface:
    sphere: Sphere

    def intersect(self, origins, dirs):
        t = intersect_spheres_t(origins, dirs, self.sphere.center, self.sphere.radius)
        return t, np.where(np.isnan(t), BACKGROUND, SCLERA)

    def normals_at(self, points, label=None):
        return normalize(points - self.sphere.center)

    def transformed(self, pose: Pose):
        return SingleSphereSurface(Sphere(pose.apply(self.sphere.center), self.sphere.radius))


@dataclass(frozen=True)
class FlatMirrorSurface:
    """Square planar mirror (side ``size`` mm) centred on ``plane.point``."""

    plane: Plane
    size: float = 40.0

    def intersect(self, origins, dirs):
        t = intersect_plane_t(origins, dirs, self.plane)
        p = origins + np.nan_to_num(t)[..., None] * dirs
        off = p - self.plane.point
        inplane = np.linalg.norm(off - (off @ self.plane.normal)[..., None] * self.plane.normal, axis=-1)
        t = np.where(inplane <= self.size / 2, t, np.nan)
        return t, np.where(np.isnan(t), BACKGROUND, SCLERA)

    def normals_at(self, points, label=None):
        return np.broadcast_to(self.plane.normal, np.shape(points)).copy()

    def transformed(self, pose: Pose):
        return FlatMirrorSurface(Plane(pose.apply(self.plane.point), pose.rotate(self.plane.normal)), self.size)


@dataclass(frozen=True)
class Scene:
    """Everything the renderer needs.

    ``nominal_eye_center`` is the rig's design position for the eye, used
    only as a geometric prior (e.g. predicted fringe orientation), never
    as ground truth.
    """

    cameras: tuple
    display: DisplayModel
    surface: object
    background_level: float = 0.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    nominal_eye_center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "nominal_eye_center", np.asarray(self.nominal_eye_center, dtype=float))

    def with_surface(self, surface) -> "Scene":
        return replace(self, surface=surface)

    def with_noise(self, noise: NoiseModel) -> "Scene":
        return replace(self, noise=noise)

    def with_display(self, display: DisplayModel) -> "Scene":
        return replace(self, display=display)

    def translated(self, delta) -> "Scene":
        """Whole rig and surface shifted by ``delta`` (mm)."""
        shift = Pose(np.eye(3), np.asarray(delta, dtype=float))
        cams = tuple(replace(c, pose=shift.compose(c.pose)) for c in self.cameras)
        disp = replace(self.display, pose=shift.compose(self.display.pose))
        return replace(
            self,
            cameras=cams,
            display=disp,
            surface=transform_surface(self.surface, shift),
            nominal_eye_center=self.nominal_eye_center + delta,
        )


def transform_surface(surface, pose: Pose):
    return surface.transformed(pose)


# Default rig.  World frame: sclera centre / eye rotation centre at the
# origin, +y down (image convention), cameras toward +z.
CAMERA_WIDTH = 1280
CAMERA_HEIGHT = 960
CAMERA_FOCAL_PX = 2400.0
STEREO_BASELINE_MM = 60.0
EYE_DISTANCE_MM = 80.0
# default gaze: 30 deg away from the camera axis so the display reflection
# straddles the limbus
DEFAULT_GAZE_YAW_DEG = 30.0
DEFAULT_GAZE_PITCH_DEG = 0.0


def default_cameras(baseline=STEREO_BASELINE_MM, distance=EYE_DISTANCE_MM, focal=CAMERA_FOCAL_PX):
    cams = []
    for sx in (-0.5, 0.5):
        center = np.array([sx * baseline, 0.0, -distance])
        pose = Pose.look_at(center, np.zeros(3))
        cams.append(
            PinholeCamera(focal, focal, (CAMERA_WIDTH - 1) / 2, (CAMERA_HEIGHT - 1) / 2, CAMERA_WIDTH, CAMERA_HEIGHT, pose)
        )
    return tuple(cams)


def default_display(distance=50.0, drop=45.0, tilt_deg=0.0):
    """Display below the cameras (``drop`` mm along +y), tilted to face the eye.

    With the defaults the panel's upper edge stays about 20 mm below the
    camera lines of sight, so it never blocks the view of the eye.
    """
    w = DISPLAY_WIDTH_PX * DISPLAY_PITCH_MM
    h = DISPLAY_HEIGHT_PX * DISPLAY_PITCH_MM
    center = np.array([0.0, drop, -distance])
    # local +z points at the eye; local x to world -x so the panel is not mirrored as seen from the eye
    rz = normalize(-center)
    rx = normalize(np.cross([0.0, 1.0, 0.0], rz))
    ry = np.cross(rz, rx)
    rot = np.column_stack([rx, ry, rz])
    rot = rotation_matrix(rx, np.radians(tilt_deg)) @ rot
    origin = center - rot @ np.array([(w - DISPLAY_PITCH_MM) / 2, (h - DISPLAY_PITCH_MM) / 2, 0.0])
    return DisplayModel(Pose(rot, origin))


def gaze_rotation(yaw_deg=DEFAULT_GAZE_YAW_DEG, pitch_deg=DEFAULT_GAZE_PITCH_DEG):
    """Yaw about world y after pitch about world x, both about the origin."""
    ry = rotation_matrix([0, 1.0, 0], np.radians(yaw_deg))
    rx = rotation_matrix([1.0, 0, 0], np.radians(pitch_deg))
    return ry @ rx


def default_two_sphere(yaw_deg=DEFAULT_GAZE_YAW_DEG, pitch_deg=DEFAULT_GAZE_PITCH_DEG) -> TwoSphereEye:
    """Default eye looking toward the rig, turned by ``yaw``/``pitch``."""
    base = default_eye()
    # point the eye toward the cameras (-z) before applying the gaze rotation
    to_rig = Pose(rotation_matrix([0, 1.0, 0], np.pi))
    return base.transformed(Pose(gaze_rotation(yaw_deg, pitch_deg)).compose(to_rig))


def default_scene(surface="two_sphere", **kw) -> Scene:
    if surface == "two_sphere":
        surf = default_two_sphere(kw.pop("yaw_deg", DEFAULT_GAZE_YAW_DEG), kw.pop("pitch_deg", DEFAULT_GAZE_PITCH_DEG))
    elif surface == "ball":
        surf = SingleSphereSurface(Sphere(np.zeros(3), kw.pop("radius", 12.0)))
    elif surface == "egg":
        from ..eye import default_egg

        yaw = kw.pop("yaw_deg", DEFAULT_GAZE_YAW_DEG)
        pitch = kw.pop("pitch_deg", DEFAULT_GAZE_PITCH_DEG)
        to_rig = Pose(rotation_matrix([0, 1.0, 0], np.pi))
        surf = default_egg().transformed(Pose(gaze_rotation(yaw, pitch)).compose(to_rig))
    else:
        surf = surface
    return Scene(default_cameras(), default_display(**kw), surf)
