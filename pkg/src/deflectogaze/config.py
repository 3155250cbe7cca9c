"""YAML scene and experiment configs, validation and content hashing.

Scene file schema (units: lengths mm, image and display coordinates px,
angles rad)::

    cameras:                 # optional; default stereo pair
      - {fx, fy, cx, cy, width, height, rotation: 3x3, translation: [x, y, z]}
    display:                 # either an explicit pose ...
      {rotation, translation, width_px, height_px, pixel_pitch}
    display:                 # ... or the default placement
      {distance: 50, drop: 45, tilt: 0}
    surface:
      {type: two_sphere, yaw: 0.5236, pitch: 0}          # default eye, turned
      {type: two_sphere, cornea_center, sclera_center, cornea_radius, sclera_radius}
      {type: ball, center: [0, 0, 0], radius: 12}
      {type: egg, yaw, pitch} | {type: egg, axis_point, axis_direction}
      {type: flat_mirror, point, normal, size}
    noise: {intensity_sigma: 0.0, quantize_bits: null}
    background_level: 0.0
    nominal_eye_center: [0, 0, 0]
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .eye import EggProfile, TwoSphereEye, default_egg
from .geometry import Line3, PinholeCamera, Plane, Pose, Sphere, rotation_matrix
from .simulator.scene import (
    DisplayModel,
    FlatMirrorSurface,
    NoiseModel,
    Scene,
    SingleSphereSurface,
    default_cameras,
    default_display,
    default_two_sphere,
    gaze_rotation,
)

SCENE_HEADER = "# deflectogaze scene; units: lengths mm, image/display coordinates px, angles rad\n"
EXPERIMENT_KINDS = ("ball", "rotation", "thinning", "grid")


class ConfigError(ValueError):
    pass


def _vec(x, n=3, key="value"):
    try:
        a = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: expected numbers") from e
    if a.shape != (n,) or not np.all(np.isfinite(a)):
        raise ConfigError(f"{key}: expected {n} finite numbers")
    return a


def _pose(d, key):
    try:
        return Pose(np.asarray(d["rotation"], dtype=float), _vec(d["translation"], key=f"{key}.translation"))
    except KeyError as e:
        raise ConfigError(f"{key}: missing {e}") from e
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from e


def _check_keys(d, allowed, key):
    if not isinstance(d, dict):
        raise ConfigError(f"{key}: expected a mapping")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{key}: unknown keys {sorted(extra)}")


def _surface(d):
    _check_keys(
        d,
        {"type", "yaw", "pitch", "cornea_center", "sclera_center", "cornea_radius", "sclera_radius", "center",
         "radius", "axis_point", "axis_direction", "point", "normal", "size"},
        "surface",
    )
    kind = d.get("type")
    to_rig = Pose(rotation_matrix([0, 1.0, 0], np.pi))
    try:
        if kind == "two_sphere":
            if "cornea_center" in d:
                return TwoSphereEye(
                    _vec(d["cornea_center"], key="cornea_center"),
                    _vec(d["sclera_center"], key="sclera_center"),
                    float(d["cornea_radius"]),
                    float(d["sclera_radius"]),
                ).validate()
            return default_two_sphere(np.degrees(d.get("yaw", np.radians(30.0))), np.degrees(d.get("pitch", 0.0)))
        if kind == "ball":
            r = float(d.get("radius", 12.0))
            if r <= 0:
                raise ConfigError("surface.radius must be positive")
            return SingleSphereSurface(Sphere(_vec(d.get("center", [0, 0, 0]), key="center"), r))
        if kind == "egg":
            if "axis_direction" in d:
                return default_egg(Line3(_vec(d.get("axis_point", [0, 0, 0]), key="axis_point"), _vec(d["axis_direction"], key="axis_direction")))
            rot = gaze_rotation(np.degrees(d.get("yaw", np.radians(30.0))), np.degrees(d.get("pitch", 0.0)))
            return default_egg().transformed(Pose(rot).compose(to_rig))
        if kind == "flat_mirror":
            return FlatMirrorSurface(Plane(_vec(d["point"], key="point"), _vec(d["normal"], key="normal")), float(d.get("size", 40.0)))
    except KeyError as e:
        raise ConfigError(f"surface: missing {e}") from e
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"surface: {e}") from e
    raise ConfigError(f"surface.type must be one of two_sphere, ball, egg, flat_mirror (got {kind!r})")


def scene_from_dict(d: dict) -> Scene:
    _check_keys(d, {"cameras", "display", "surface", "noise", "background_level", "nominal_eye_center"}, "scene")
    if "surface" not in d:
        raise ConfigError("scene: missing surface")
    if d.get("cameras") is None:
        cams = default_cameras()
    else:
        cams = []
        for i, c in enumerate(d["cameras"]):
            _check_keys(c, {"fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"}, f"cameras[{i}]")
            try:
                cams.append(
                    PinholeCamera(
                        float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]), int(c["width"]), int(c["height"]),
                        _pose(c, f"cameras[{i}]"),
                    )
                )
            except KeyError as e:
                raise ConfigError(f"cameras[{i}]: missing {e}") from e
            except ValueError as e:
                raise ConfigError(f"cameras[{i}]: {e}") from e
        if len(cams) != 2:
            raise ConfigError("cameras: the stereo pipeline needs exactly two cameras")
    disp = d.get("display") or {}
    _check_keys(disp, {"rotation", "translation", "width_px", "height_px", "pixel_pitch", "distance", "drop", "tilt"}, "display")
    if "rotation" in disp:
        try:
            display = DisplayModel(
                _pose(disp, "display"),
                int(disp.get("width_px", 2532)),
                int(disp.get("height_px", 1170)),
                float(disp.get("pixel_pitch", 0.0578)),
            )
        except ValueError as e:
            raise ConfigError(f"display: {e}") from e
    else:
        display = default_display(float(disp.get("distance", 50.0)), float(disp.get("drop", 45.0)), np.degrees(float(disp.get("tilt", 0.0))))
    nz = d.get("noise") or {}
    _check_keys(nz, {"intensity_sigma", "quantize_bits"}, "noise")
    try:
        noise = NoiseModel(float(nz.get("intensity_sigma", 0.0)), nz.get("quantize_bits"))
    except ValueError as e:
        raise ConfigError(f"noise: {e}") from e
    return Scene(
        tuple(cams),
        display,
        _surface(d["surface"]),
        float(d.get("background_level", 0.0)),
        noise,
        _vec(d.get("nominal_eye_center", [0, 0, 0]), key="nominal_eye_center"),
    )


def _pose_dict(p: Pose):
    return {"rotation": p.rotation.tolist(), "translation": p.translation.tolist()}


def scene_to_dict(scene: Scene) -> dict:
    """Fully explicit scene description (round-trips through :func:`scene_from_dict`)."""
    cams = [
        {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy, "width": c.width, "height": c.height, **_pose_dict(c.pose)}
        for c in scene.cameras
    ]
    disp = {
        **_pose_dict(scene.display.pose),
        "width_px": scene.display.width_px,
        "height_px": scene.display.height_px,
        "pixel_pitch": scene.display.pixel_pitch,
    }
    s = scene.surface
    if isinstance(s, TwoSphereEye):
        surf = {"type": "two_sphere", "cornea_center": s.cornea_center.tolist(), "sclera_center": s.sclera_center.tolist(),
                "cornea_radius": s.cornea_radius, "sclera_radius": s.sclera_radius}
    elif isinstance(s, SingleSphereSurface):
        surf = {"type": "ball", "center": s.sphere.center.tolist(), "radius": s.sphere.radius}
    elif isinstance(s, EggProfile):
        surf = {"type": "egg", "axis_point": s.axis.point.tolist(), "axis_direction": s.axis.direction.tolist()}
    elif isinstance(s, FlatMirrorSurface):
        surf = {"type": "flat_mirror", "point": s.plane.point.tolist(), "normal": s.plane.normal.tolist(), "size": s.size}
    else:
        raise ConfigError(f"cannot serialise surface {type(s).__name__}")
    if scene.noise.occlusion_mask is not None:
        raise ConfigError("occlusion masks are not serialisable")
    return {
        "cameras": cams,
        "display": disp,
        "surface": surf,
        "noise": {"intensity_sigma": scene.noise.intensity_sigma, "quantize_bits": scene.noise.quantize_bits},
        "background_level": scene.background_level,
        "nominal_eye_center": scene.nominal_eye_center.tolist(),
    }


def load_yaml(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            d = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return d


def load_scene(path) -> Scene:
    return scene_from_dict(load_yaml(path))


def save_scene(path, scene: Scene):
    with open(path, "w", encoding="utf-8") as f:
        f.write(SCENE_HEADER)
        yaml.safe_dump(scene_to_dict(scene), f, sort_keys=False)


def content_hash(obj) -> str:
    """Git-style blob hash (SHA-1 of ``"blob <len>\\0" + content``) of canonical JSON."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(text) + text).hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


# ---------------------------------------------------------------- experiments


@dataclass
class ExperimentConfig:
    """One experiment run.  Angles in ``*_deg`` fields are degrees.

    ``noise`` is the image intensity sigma (full scale 1).  ``point_noise_deg``
    adds per-point normal noise after reconstruction; ``"auto"`` tunes it
    so the per-trial axis spread matches ``target_axis_std_deg``.
    """

    kind: str
    scene: Optional[dict] = None  # scene mapping; None -> default for the kind
    noise: float = 0.0
    point_noise_deg: object = 0.0
    target_axis_std_deg: float = 0.05
    trials: int = 20
    positions_deg: list = field(default_factory=lambda: [-4.0, -2.0, 0.0, 2.0, 4.0])
    stage_axis: list = field(default_factory=lambda: [0.0, 1.0, 0.0])
    densities: list = field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125, 0.0625])
    captures: int = 10
    draws: int = 20
    grid_yaw_deg: list = field(default_factory=lambda: [15.0, 30.0, 45.0])
    grid_pitch_deg: list = field(default_factory=lambda: [-7.5, 0.0, 7.5])
    kappa_deg: list = field(default_factory=lambda: [5.0, 1.5])
    stimulus_distance: float = 500.0
    axis_noise_deg: float = 0.0
    period: float = 80.0
    anchors: int = 500
    seed: int = 0
    threads: int = 1
    output: Optional[str] = None

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"kind must be one of {EXPERIMENT_KINDS} (got {self.kind!r})")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        if self.noise < 0 or not np.isfinite(self.noise):
            raise ConfigError("noise must be a finite value >= 0")
        if self.point_noise_deg != "auto" and not (
            isinstance(self.point_noise_deg, (int, float)) and np.isfinite(self.point_noise_deg) and self.point_noise_deg >= 0
        ):
            raise ConfigError("point_noise_deg must be >= 0 or 'auto'")
        for name in ("positions_deg", "densities", "grid_yaw_deg", "grid_pitch_deg", "kappa_deg", "stage_axis"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1 or len(v) == 0 or not np.all(np.isfinite(v)):
                raise ConfigError(f"{name} must be a non-empty list of finite numbers")
        if self.kind == "rotation" and not np.any(np.isclose(self.positions_deg, 0.0)):
            raise ConfigError("positions_deg must include the 0 deg reference")
        if any(d <= 0 or d > 1 for d in self.densities):
            raise ConfigError("densities must lie in (0, 1]")
        if self.period <= 0 or self.anchors < 10 or self.captures < 2 or self.draws < 1 or self.threads < 1:
            raise ConfigError("period > 0, anchors >= 10, captures >= 2, draws >= 1, threads >= 1 required")
        if len(self.kappa_deg) != 2:
            raise ConfigError("kappa_deg is [horizontal, vertical]")
        if self.kind == "grid" and (len(self.grid_yaw_deg) < 2 or len(self.grid_pitch_deg) < 2):
            raise ConfigError("the stimulus grid needs at least 2 x 2 positions")
        self.trials = int(self.trials)
        if self.scene is not None:
            scene_from_dict(self.scene)  # validate early

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        if "experiment" in d:
            d["kind"] = d.pop("experiment")
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "kind" not in d:
            raise ConfigError("missing experiment kind")
        if isinstance(d.get("scene"), str):
            p = Path(d["scene"])
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            d["scene"] = load_yaml(p)
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        d = load_yaml(path)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d, Path(path).parent)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Content hash of everything that shapes the results (output path and threads excluded)."""
        d = self.to_dict()
        d.pop("output")
        d.pop("threads")
        return content_hash(d)


@dataclass
class CalibrationConfig:
    """Simulated display calibration: screen placements, marker board and noise."""

    scene: Optional[dict] = None
    screens: int = 3
    marker_noise_px: float = 0.1
    board: list = field(default_factory=lambda: [7, 5, 4.0])  # nx, ny, spacing mm
    repeats: int = 1
    gaze_check: list = field(default_factory=list)  # [[yaw_deg, pitch_deg], ...]
    period: float = 80.0
    seed: int = 0
    threads: int = 1
    output: Optional[str] = None

    def __post_init__(self):
        if not 1 <= int(self.screens) <= 5:
            raise ConfigError("screens must be between 1 and 5")
        if not np.isfinite(self.marker_noise_px) or self.marker_noise_px < 0:
            raise ConfigError("marker_noise_px must be >= 0")
        if len(self.board) != 3 or int(self.board[0]) * int(self.board[1]) < 4 or float(self.board[2]) <= 0:
            raise ConfigError("board is [nx, ny, spacing] with at least 4 markers")
        if int(self.repeats) < 1:
            raise ConfigError("repeats must be >= 1")
        for g in self.gaze_check:
            if len(g) != 2 or not np.all(np.isfinite(np.asarray(g, dtype=float))):
                raise ConfigError("gaze_check entries are [yaw_deg, pitch_deg]")
        if self.scene is not None:
            scene_from_dict(self.scene)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "CalibrationConfig":
        d = dict(d)
        d.pop("experiment", None)
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if isinstance(d.get("scene"), str):
            p = Path(d["scene"])
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            d["scene"] = load_yaml(p)
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path, **overrides) -> "CalibrationConfig":
        d = load_yaml(path)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d, Path(path).parent)

    def hash(self) -> str:
        d = asdict(self)
        d.pop("output")
        d.pop("threads")
        return content_hash(d)
