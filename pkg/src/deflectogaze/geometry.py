"""3D primitives shared by the simulator and the reconstruction pipeline.

Points and directions are plain ``numpy`` arrays of shape ``(3,)`` (or
``(..., 3)`` for the vectorised helpers).  Units are millimetres for
positions and pixels for image coordinates.

Camera convention: x right, y down, z forward.  A :class:`Pose` maps
local coordinates to world coordinates, ``X_world = R @ X_local + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

EPS_T = 1e-9


class DegenerateConfigurationError(ValueError):
    """Raised when a least-squares system is numerically singular."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver runs out of iterations."""

    def __init__(self, message, residual=None, result=None):
        super().__init__(message)
        self.residual = residual
        self.result = result


def normalize(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


def _orthonormal_basis(d):
    """Two unit vectors spanning the plane orthogonal to unit vector ``d``."""
    d = np.asarray(d, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = normalize(np.cross(d, helper))
    e2 = np.cross(d, e1)
    return e1, e2


def rotation_matrix(axis, angle):
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    k = normalize(axis)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx


def rotvec_to_matrix(rv):
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv)
    if angle < 1e-15:
        return np.eye(3)
    return rotation_matrix(rv / angle, angle)


def angle_between(d1, d2):
    """Angle in radians via atan2(|d1 x d2|, d1 . d2); stable near zero."""
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    c = np.linalg.norm(np.cross(d1, d2), axis=-1)
    return np.arctan2(c, np.sum(d1 * d2, axis=-1))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", normalize(self.direction))

    def at(self, t):
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Pose:
    """Rigid transform local -> world."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-10) or abs(np.linalg.det(r) - 1) > 1e-10:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    def apply(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def apply_inverse(self, points):
        return (np.asarray(points) - self.translation) @ self.rotation

    def rotate(self, dirs):
        return np.asarray(dirs) @ self.rotation.T

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, -1.0, 0.0)) -> "Pose":
        """Camera-to-world pose with +z toward ``target`` and image +y along ``-up``."""
        eye = np.asarray(eye, dtype=float)
        z = normalize(np.asarray(target, dtype=float) - eye)
        down = -np.asarray(up, dtype=float)
        x = normalize(np.cross(down, z))
        y = np.cross(z, x)
        return cls(np.column_stack([x, y, z]), eye)


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def center(self):
        return self.pose.translation

    def project(self, point) -> Optional[tuple]:
        uv = self.project_many(np.asarray(point, dtype=float)[None])[0]
        if np.isnan(uv[0]):
            return None
        return float(uv[0]), float(uv[1])

    def project_many(self, points):
        """Vectorised projection; points behind the camera give NaN."""
        pc = self.pose.apply_inverse(points)
        z = pc[..., 2]
        ok = z > EPS_T
        zs = np.where(ok, z, 1.0)
        u = self.fx * pc[..., 0] / zs + self.cx
        v = self.fy * pc[..., 1] / zs + self.cy
        out = np.stack([u, v], axis=-1)
        out[~ok] = np.nan
        return out

    def backproject(self, u, v) -> Ray:
        return Ray(self.center, self.pixel_directions(np.asarray([u]), np.asarray([v]))[0])

    def pixel_directions(self, u, v):
        """World-frame unit ray directions for pixel coordinate arrays."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        return normalize(self.pose.rotate(d))

    def pixel_grid(self):
        """(v, u) index grids for the full sensor."""
        return np.mgrid[0 : self.height, 0 : self.width].astype(float)


@dataclass(frozen=True)
class Plane:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "normal", normalize(self.normal))

    def signed_distance(self, p):
        return (np.asarray(p) - self.point) @ self.normal

    def reflect_point(self, p):
        p = np.asarray(p, dtype=float)
        return p - 2.0 * self.signed_distance(p)[..., None] * self.normal


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))


@dataclass(frozen=True)
class Line3:
    """Infinite line; ``point`` is stored as the closest point to the origin."""

    point: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = normalize(self.direction)
        p = np.asarray(self.point, dtype=float)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "point", p - (p @ d) * d)

    def distance_to_point(self, q):
        diff = np.asarray(q, dtype=float) - self.point
        return np.linalg.norm(np.cross(diff, self.direction), axis=-1)

    def same_as(self, other: "Line3", tol=1e-9) -> bool:
        """Equality ignoring direction sign."""
        return (
            np.linalg.norm(np.cross(self.direction, other.direction)) < tol
            and np.linalg.norm(self.point - other.point) < tol
        )


def reflect(incident, normal):
    """Mirror ``incident`` about the plane with unit ``normal``."""
    incident = np.asarray(incident, dtype=float)
    normal = np.asarray(normal, dtype=float)
    return incident - 2.0 * np.sum(incident * normal, axis=-1, keepdims=True) * normal


def intersect_spheres_t(origins, dirs, center, radius):
    """Nearest forward hit distance of each ray with a sphere (NaN on miss)."""
    oc = origins - center
    b = np.sum(oc * dirs, axis=-1)
    c = np.sum(oc * oc, axis=-1) - radius * radius
    disc = b * b - c
    sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > EPS_T, t0, np.where(t1 > EPS_T, t1, np.nan))
    return t


def ray_sphere_intersect(ray: Ray, sphere: Sphere):
    """Nearest forward intersection as ``(point, normal, t)`` or ``None``."""
    t = float(intersect_spheres_t(ray.origin[None], ray.direction[None], sphere.center, sphere.radius)[0])
    if np.isnan(t):
        return None
    p = ray.at(t)
    return p, (p - sphere.center) / sphere.radius, t


def intersect_plane_t(origins, dirs, plane: Plane):
    denom = dirs @ plane.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((plane.point - origins) @ plane.normal) / denom
    return np.where((np.abs(denom) > 1e-15) & (t > EPS_T), t, np.nan)


def lines_to_arrays(lines):
    """Accept a sequence of :class:`Line3` or a ``(points, directions)`` pair."""
    if isinstance(lines, tuple) and len(lines) == 2 and isinstance(lines[0], np.ndarray):
        pts, dirs = lines
        return np.asarray(pts, dtype=float), normalize(dirs)
    lines = list(lines)
    return (
        np.array([ln.point for ln in lines], dtype=float),
        np.array([ln.direction for ln in lines], dtype=float),
    )


def best_fit_point(lines, weights=None):
    """Point minimising the sum of squared perpendicular distances to lines.

    Solves ``sum_i (I - d_i d_i^T)(P - p_i) = 0``.  Returns ``(point, rms)``.
    """
    pts, dirs = lines_to_arrays(lines)
    if len(pts) < 2:
        raise DegenerateConfigurationError("need at least two lines")
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=float)
    proj = np.eye(3)[None] - dirs[:, :, None] * dirs[:, None, :]
    a = np.einsum("n,nij->ij", w, proj)
    b = np.einsum("n,nij,nj->i", w, proj, pts)
    if np.linalg.cond(a) > 1e8:
        raise DegenerateConfigurationError("lines are (nearly) parallel")
    p = np.linalg.solve(a, b)
    d = np.linalg.norm(np.cross(p - pts, dirs), axis=-1)
    return p, float(np.sqrt(np.average(d**2, weights=w)))


def line_distances(axis_point, axis_dir, pts, dirs):
    """Shortest distance between one axis and many lines."""
    cr = np.cross(axis_dir, dirs)
    s = np.linalg.norm(cr, axis=-1)
    diff = pts - axis_point
    skew = np.abs(np.sum(diff * cr, axis=-1)) / np.where(s > 1e-9, s, 1.0)
    par = np.linalg.norm(np.cross(diff, axis_dir), axis=-1)
    return np.where(s > 1e-9, skew, par)


def _signed_line_residuals(axis_point, axis_dir, pts, dirs):
    cr = np.cross(axis_dir, dirs)
    s = np.linalg.norm(cr, axis=-1)
    diff = pts - axis_point
    skew = np.sum(diff * cr, axis=-1) / np.where(s > 1e-9, s, 1.0)
    par = np.linalg.norm(np.cross(diff, axis_dir), axis=-1)
    return np.where(s > 1e-9, skew, par)


@dataclass
class AxisFit:
    axis: Line3
    rms_distance: float
    iterations: int = 0
    degenerate: bool = False
    history: list = field(default_factory=list)


def best_fit_axis(lines, init: Line3, max_iter=200, tol=1e-14) -> AxisFit:
    """Line minimising the summed squared line-to-line distances.

    Gauss-Newton over four parameters (two tangent-plane tilts of the
    direction, two offsets in the plane orthogonal to it), re-linearised
    about the current axis each iteration, with backtracking so the cost
    never increases.  A pencil of concurrent lines leaves the direction
    unconstrained; that case returns ``init``'s direction through the
    concurrency point with ``degenerate=True``.
    """
    pts, dirs = lines_to_arrays(lines)
    if len(pts) < 10:
        raise DegenerateConfigurationError("best_fit_axis needs at least 10 lines")
    try:
        centre, rms_c = best_fit_point((pts, dirs))
    except DegenerateConfigurationError:
        rms_c = np.inf
    if rms_c < 1e-9:
        return AxisFit(Line3(centre, init.direction), rms_c, 0, True)

    a = init.point.copy()
    d = init.direction.copy()

    def residuals(a_, d_):
        return _signed_line_residuals(a_, d_, pts, dirs)

    def cost(r):
        return float(r @ r)

    r = residuals(a, d)
    f = cost(r)
    history = [f]
    h = 1e-6
    it = 0
    for it in range(1, max_iter + 1):
        e1, e2 = _orthonormal_basis(d)

        def perturb(x, a=a, d=d, e1=e1, e2=e2):
            return a + x[2] * e1 + x[3] * e2, normalize(d + x[0] * e1 + x[1] * e2)

        jac = np.empty((len(pts), 4))
        for k in range(4):
            dx = np.zeros(4)
            dx[k] = h
            jac[:, k] = (residuals(*perturb(dx)) - residuals(*perturb(-dx))) / (2 * h)
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        alpha = 1.0
        accepted = False
        while alpha > 1e-8:
            a_new, d_new = perturb(alpha * step)
            r_new = residuals(a_new, d_new)
            f_new = cost(r_new)
            if f_new <= f:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        rel = (f - f_new) / max(f, 1e-300)
        # keep the position parameter on the plane orthogonal to the direction
        a, d, r = a_new, d_new, r_new
        f = f_new
        history.append(f)
        if rel < tol or np.linalg.norm(alpha * step) < 1e-13:
            break
    else:
        raise ConvergenceError(
            "best_fit_axis did not converge",
            residual=np.sqrt(f / len(pts)),
            result=AxisFit(Line3(a, d), float(np.sqrt(f / len(pts))), it, False, history),
        )
    return AxisFit(Line3(a, d), float(np.sqrt(f / len(pts))), it, False, history)


def rotation_to_quaternion(r):
    """Unit quaternion ``(w, x, y, z)`` for a rotation matrix."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def quaternion_to_rotation(q):
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def average_poses(poses: Sequence[Pose]) -> Pose:
    """Sign-aligned quaternion mean plus translation mean."""
    qs = np.array([rotation_to_quaternion(p.rotation) for p in poses])
    ref = qs[0]
    qs = np.where((qs @ ref)[:, None] < 0, -qs, qs)
    q = qs.mean(axis=0)
    t = np.mean([p.translation for p in poses], axis=0)
    return Pose(quaternion_to_rotation(q), t)


def rotation_angle(r):
    """Rotation angle (radians) of a rotation matrix."""
    c = np.clip((np.trace(r) - 1) / 2, -1.0, 1.0)
    s = np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2
    return float(np.arctan2(s, c))


def iter_chunks(n, size) -> Iterable[slice]:
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))
