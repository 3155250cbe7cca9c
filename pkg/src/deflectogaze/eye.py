"""Eye surface models: the two-sphere eye and rotationally symmetric eggs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .geometry import EPS_T, Line3, Pose, Sphere, intersect_spheres_t, normalize

BACKGROUND = 0
CORNEA = 1
SCLERA = 2


@dataclass(frozen=True)
class TwoSphereEye:
    """Cornea and sclera spheres.  Units: mm."""

    cornea_center: np.ndarray
    sclera_center: np.ndarray
    cornea_radius: float
    sclera_radius: float

    def __post_init__(self):
        object.__setattr__(self, "cornea_center", np.asarray(self.cornea_center, dtype=float))
        object.__setattr__(self, "sclera_center", np.asarray(self.sclera_center, dtype=float))
        object.__setattr__(self, "cornea_radius", float(self.cornea_radius))
        object.__setattr__(self, "sclera_radius", float(self.sclera_radius))

    @property
    def center_distance(self) -> float:
        return float(np.linalg.norm(self.cornea_center - self.sclera_center))

    def is_valid(self) -> bool:
        d = self.center_distance
        rc, rs = self.cornea_radius, self.sclera_radius
        return bool(0 < rc < rs and 0 < d < rs and d + rc > rs)

    def validate(self):
        if not self.is_valid():
            raise ValueError(f"two-sphere invariants violated: {self}")
        return self

    @property
    def cornea(self) -> Sphere:
        return Sphere(self.cornea_center, self.cornea_radius)

    @property
    def sclera(self) -> Sphere:
        return Sphere(self.sclera_center, self.sclera_radius)

    @property
    def optical_axis(self) -> Line3:
        """Line through both centres, directed sclera -> cornea."""
        return Line3(self.sclera_center, self.cornea_center - self.sclera_center)

    @property
    def direction(self):
        return normalize(self.cornea_center - self.sclera_center)

    def limbus(self):
        """Centre, unit normal and radius of the cornea/sclera intersection circle."""
        d = self.center_distance
        rc, rs = self.cornea_radius, self.sclera_radius
        z = (rs * rs - rc * rc + d * d) / (2 * d)
        return self.sclera_center + z * self.direction, self.direction, float(np.sqrt(rs * rs - z * z))

    def to_vector(self):
        return np.concatenate([self.cornea_center, self.sclera_center, [self.cornea_radius, self.sclera_radius]])

    @classmethod
    def from_vector(cls, x) -> "TwoSphereEye":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6], x[7])

    def transformed(self, pose: Pose) -> "TwoSphereEye":
        return TwoSphereEye(
            pose.apply(self.cornea_center), pose.apply(self.sclera_center), self.cornea_radius, self.sclera_radius
        )

    def rotated_about(self, axis_point, axis_dir, angle) -> "TwoSphereEye":
        from .geometry import rotation_matrix

        r = rotation_matrix(axis_dir, angle)
        p = np.asarray(axis_point, dtype=float)
        return TwoSphereEye(
            r @ (self.cornea_center - p) + p, r @ (self.sclera_center - p) + p, self.cornea_radius, self.sclera_radius
        )

    def intersect(self, origins, dirs):
        """First entry into the union of both spheres.

        Returns ``(t, label)`` with NaN / BACKGROUND on miss.
        """
        tc = intersect_spheres_t(origins, dirs, self.cornea_center, self.cornea_radius)
        ts = intersect_spheres_t(origins, dirs, self.sclera_center, self.sclera_radius)
        tc_f = np.where(np.isnan(tc), np.inf, tc)
        ts_f = np.where(np.isnan(ts), np.inf, ts)
        cornea = tc_f < ts_f
        t = np.minimum(tc_f, ts_f)
        label = np.where(cornea, CORNEA, SCLERA)
        miss = ~np.isfinite(t)
        t = np.where(miss, np.nan, t)
        label = np.where(miss, BACKGROUND, label)
        return t, label

    def normals_at(self, points, label):
        centers = np.where((label == CORNEA)[..., None], self.cornea_center, self.sclera_center)
        return normalize(points - centers)


def default_eye() -> TwoSphereEye:
    """Anatomical defaults: R_c 7.8 mm, R_s 12 mm, centre distance 5.5 mm, axis +z."""
    return TwoSphereEye(np.array([0.0, 0.0, 5.5]), np.zeros(3), 7.8, 12.0)


@dataclass(frozen=True)
class EggProfile:
    """Surface of revolution about a :class:`Line3` axis.

    ``z`` is the axial position measured from the axis' canonical point,
    ``r`` the radius at that position (strictly positive in the interior,
    zero allowed at the two poles).  The squared radius is interpolated
    with a monotone cubic so poles stay regular.  Points with axial
    position above ``limbus_z`` are labelled cornea.
    """

    axis: Line3
    z: np.ndarray
    r: np.ndarray
    limbus_z: float = np.inf

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if np.any(np.diff(z) <= 0):
            raise ValueError("profile z must be strictly increasing")
        if np.any(r[1:-1] <= 0) or np.any(r < 0):
            raise ValueError("profile radius must be positive")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "_r2", PchipInterpolator(z, r * r, extrapolate=False))
        e1 = normalize(np.cross(self.axis.direction, [1.0, 0, 0] if abs(self.axis.direction[0]) < 0.9 else [0, 1.0, 0]))
        e2 = np.cross(self.axis.direction, e1)
        frame = Pose(np.column_stack([e1, e2, self.axis.direction]), self.axis.point)
        object.__setattr__(self, "_frame", frame)

    def _f(self, pl):
        r2 = self._r2(pl[..., 2])
        r2 = np.where(np.isnan(r2), -1.0, r2)
        return pl[..., 0] ** 2 + pl[..., 1] ** 2 - r2

    def intersect(self, origins, dirs, samples=96, bisections=60):
        fr = self._frame
        o = fr.apply_inverse(origins)
        d = dirs @ fr.rotation
        zmid = 0.5 * (self.z[0] + self.z[-1])
        rb = float(np.max(np.hypot(self.z - zmid, self.r))) * 1.001
        t_in = intersect_spheres_t(o, d, np.array([0, 0, zmid]), rb)
        oc = o - np.array([0, 0, zmid])
        b = np.sum(oc * d, axis=-1)
        t_out = -b + np.sqrt(np.maximum(b * b - (np.sum(oc * oc, axis=-1) - rb * rb), 0))
        hit_box = np.isfinite(t_in)
        t_in = np.where(hit_box, t_in, 0.0)
        t_out = np.where(hit_box, t_out, 0.0)
        ts = t_in[:, None] + (t_out - t_in)[:, None] * np.linspace(0, 1, samples)[None]
        fvals = self._f(o[:, None, :] + ts[..., None] * d[:, None, :])
        inside = fvals < 0
        first = np.argmax(inside, axis=1)
        has = inside.any(axis=1) & hit_box & (first > 0)
        idx = np.arange(len(o))
        lo = ts[idx, np.maximum(first - 1, 0)]
        hi = ts[idx, first]
        for _ in range(bisections):
            mid = 0.5 * (lo + hi)
            fm = self._f(o + mid[:, None] * d)
            outside = fm >= 0
            lo = np.where(outside, mid, lo)
            hi = np.where(outside, hi, mid)
        t = np.where(has, 0.5 * (lo + hi), np.nan)
        pl = o + np.nan_to_num(t)[:, None] * d
        label = np.where(has, np.where(pl[:, 2] > self.limbus_z, CORNEA, SCLERA), BACKGROUND)
        return t, label

    def normals_at(self, points, label=None):
        fr = self._frame
        pl = fr.apply_inverse(points)
        dr2 = self._r2.derivative()(pl[..., 2])
        g = np.stack([2 * pl[..., 0], 2 * pl[..., 1], -np.nan_to_num(dr2)], axis=-1)
        return fr.rotate(normalize(g))

    def transformed(self, pose: Pose) -> "EggProfile":
        axis = Line3(pose.apply(self.axis.point), pose.rotate(self.axis.direction))
        # axial offset of the old canonical point along the new canonical line
        shift = float((pose.apply(self.axis.point) - axis.point) @ axis.direction)
        return EggProfile(axis, self.z + shift, self.r, self.limbus_z + shift)


def default_egg(axis: Line3 | None = None, n=4001) -> EggProfile:
    """Aspheric eye: prolate sclera (12 x 12.5 mm) and a conic cornea (R 7.8, Q -0.26).

    Axial positions are measured from the sclera centre, which sits on the
    canonical point of ``axis`` (default: the z axis through the origin).
    """
    axis = axis or Line3(np.zeros(3), [0, 0, 1.0])
    apex = 13.3
    z = np.linspace(-12.5, apex, n)
    r2_s = 144.0 * np.clip(1 - (z / 12.5) ** 2, 0, None)
    dz = apex - z
    r2_c = 2 * 7.8 * dz - (1 - 0.26) * dz * dz
    r2_c = np.where(z > 0, np.clip(r2_c, 0, None), 0)
    r2 = np.maximum(r2_s, r2_c)
    r2[0] = r2[-1] = 0.0
    # limbus: where the cornea takes over
    lz = float(z[np.argmax((r2_c > r2_s) & (z > 0))])
    return EggProfile(axis, z, np.sqrt(r2), lz)
