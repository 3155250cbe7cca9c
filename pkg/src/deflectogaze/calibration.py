"""Display calibration through a switchable screen.

With the screen on, its markers give the screen's pose; with it off it
acts as a mirror, and the cameras see a virtual image of the display.
The virtual display's pose, reflected across the screen plane, is the
real display pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    ConvergenceError,
    DegenerateConfigurationError,
    PinholeCamera,
    Plane,
    Pose,
    average_poses,
    intersect_plane_t,
    rotation_angle,
    rotvec_to_matrix,
)


class InconsistentObservationsError(RuntimeError):
    pass


@dataclass(frozen=True)
class MarkerBoard:
    """Known marker positions (mm) in a plane's local frame (z = 0)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
            raise ValueError("a marker board needs at least 4 two-dimensional points")
        object.__setattr__(self, "points", pts)

    @classmethod
    def grid(cls, nx=7, ny=5, spacing=4.0) -> "MarkerBoard":
        x, y = np.meshgrid((np.arange(nx) - (nx - 1) / 2) * spacing, (np.arange(ny) - (ny - 1) / 2) * spacing)
        return cls(np.column_stack([x.ravel(), y.ravel()]))

    def local3d(self):
        return np.column_stack([self.points, np.zeros(len(self.points))])

    def world(self, pose: Pose):
        return pose.apply(self.local3d())


@dataclass
class PoseFit:
    pose: Pose  # board frame -> world
    rms: float  # reprojection rms, px
    iterations: int = 0


def _normalized_dlt(src, dst):
    """Homography mapping 2D ``src`` to ``dst`` (Hartley-normalised DLT)."""

    def norm_mat(p):
        c = p.mean(axis=0)
        s = np.sqrt(2) / max(np.mean(np.linalg.norm(p - c, axis=1)), 1e-12)
        return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])

    ts, td = norm_mat(src), norm_mat(dst)
    sh = np.column_stack([src, np.ones(len(src))]) @ ts.T
    dh = np.column_stack([dst, np.ones(len(dst))]) @ td.T
    rows = []
    for (x, y, w), (u, v, z) in zip(sh, dh):
        rows.append([0, 0, 0, -z * x, -z * y, -z * w, v * x, v * y, v * w])
        rows.append([z * x, z * y, z * w, 0, 0, 0, -u * x, -u * y, -u * w])
    _, s, vt = np.linalg.svd(np.asarray(rows))
    if s[-2] < 1e-12 * s[0]:
        raise DegenerateConfigurationError("homography is rank deficient")
    h = vt[-1].reshape(3, 3)
    return np.linalg.inv(td) @ h @ ts


def _project_local(camera: PinholeCamera, r, t, local):
    pc = local @ r.T + t
    return np.column_stack([camera.fx * pc[:, 0] / pc[:, 2] + camera.cx, camera.fy * pc[:, 1] / pc[:, 2] + camera.cy])


def estimate_plane_pose(
    board: MarkerBoard, image_points, camera: PinholeCamera, max_iter: int = 50, tol: float = 1e-12
) -> PoseFit:
    """World pose of a planar board from its marker projections.

    Initialised by decomposing the board-to-image homography, then refined
    by Gauss-Newton on the six pose parameters (rotation vector and
    translation in the camera frame) minimising reprojection error.
    """
    uv = np.asarray(image_points, dtype=float)
    pts = board.points
    if len(uv) != len(pts) or len(pts) < 4:
        raise DegenerateConfigurationError("need at least 4 marker correspondences")
    centred = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centred, tol=1e-9 * max(1.0, np.abs(centred).max())) < 2:
        raise DegenerateConfigurationError("markers are collinear")
    xn = np.column_stack([(uv[:, 0] - camera.cx) / camera.fx, (uv[:, 1] - camera.cy) / camera.fy])
    h = _normalized_dlt(pts, xn)
    lam = 2.0 / (np.linalg.norm(h[:, 0]) + np.linalg.norm(h[:, 1]))
    h = h * lam
    if h[2, 2] < 0:  # board must sit in front of the camera
        h = -h
    r1, r2, t = h[:, 0], h[:, 1], h[:, 2]
    r = np.column_stack([r1, r2, np.cross(r1, r2)])
    u_, _, vt = np.linalg.svd(r)
    r = u_ @ np.diag([1, 1, np.linalg.det(u_ @ vt)]) @ vt
    local = board.local3d()

    def resid(r_, t_):
        return (_project_local(camera, r_, t_, local) - uv).ravel()

    res = resid(r, t)
    cost = res @ res
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        jac = np.empty((len(res), 6))
        eps = 1e-7
        for k in range(6):
            dx = np.zeros(6)
            dx[k] = eps
            rp = resid(rotvec_to_matrix(dx[:3]) @ r, t + dx[3:])
            rm = resid(rotvec_to_matrix(-dx[:3]) @ r, t - dx[3:])
            jac[:, k] = (rp - rm) / (2 * eps)
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        alpha = 1.0
        while alpha > 1e-6:
            r_new = rotvec_to_matrix(alpha * step[:3]) @ r
            t_new = t + alpha * step[3:]
            res_new = resid(r_new, t_new)
            c_new = res_new @ res_new
            if c_new <= cost:
                break
            alpha *= 0.5
        else:
            converged = True
            break
        gain = cost - c_new
        r, t, res, cost = r_new, t_new, res_new, c_new
        if gain <= tol * max(cost, 1e-30) or np.linalg.norm(alpha * step) < 1e-12:
            converged = True
            break
    if not converged:
        raise ConvergenceError("plane pose did not converge", residual=np.sqrt(cost / len(pts)))
    pose = camera.pose.compose(Pose(r, t))
    return PoseFit(pose, float(np.sqrt(cost / len(pts))), it)


def _mirror_matrix(n):
    n = np.asarray(n, dtype=float)
    return np.eye(3) - 2 * np.outer(n, n)


def reflect_pose_across_plane(virtual: Pose, mirror: Plane) -> Pose:
    """Real pose behind a mirror from the pose of its virtual image.

    Points map as ``p -> p - 2((p - q) . n) n``; the local z axis is flipped
    afterwards so the result stays a proper rotation.  Points of the local
    z = 0 plane map exactly; the operation is an involution.
    """
    m = _mirror_matrix(mirror.normal)
    rot = m @ virtual.rotation @ np.diag([1.0, 1.0, -1.0])
    return Pose(rot, mirror.reflect_point(virtual.translation))


@dataclass
class ScreenObservation:
    """One screen placement: the solved screen pose and, per camera, the
    display pixels seen in the mirror with their image positions."""

    screen_pose: Pose
    display_points: list  # per camera, (N, 2) display pixel coordinates
    image_points: list  # per camera, (N, 2) camera pixels

    @property
    def mirror(self) -> Plane:
        return Plane(self.screen_pose.translation, self.screen_pose.rotation[:, 2])


@dataclass
class CalibrationResult:
    display_pose: Pose
    reprojection_rms: list  # per camera, px (mean over observations)
    screen_poses: list
    spread_mm: float = 0.0
    spread_deg: float = 0.0
    per_observation: list = field(default_factory=list)


def calibrate_display(
    observations: Sequence[ScreenObservation],
    cameras: Sequence[PinholeCamera],
    pixel_pitch: float,
    max_spread_mm: float = 1.0,
    max_spread_deg: float = 0.5,
) -> CalibrationResult:
    """Fuse display poses solved through one or more screen placements.

    Each (observation, camera) pair yields a virtual display pose from the
    display-pixel correspondences; reflected across that screen's plane it
    becomes an estimate of the real pose.  Estimates are averaged
    (quaternion mean, translation mean).
    """
    if not observations:
        raise ValueError("need at least one observation")
    estimates = []
    rms = [[] for _ in cameras]
    for obs in observations:
        for ci, cam in enumerate(cameras):
            dpx = np.asarray(obs.display_points[ci], dtype=float)
            if len(dpx) < 4:
                continue
            fit = estimate_plane_pose(MarkerBoard(dpx * pixel_pitch), obs.image_points[ci], cam)
            estimates.append(reflect_pose_across_plane(fit.pose, obs.mirror))
            rms[ci].append(fit.rms)
    if not estimates:
        raise DegenerateConfigurationError("no camera saw the display in the mirror")
    mean = average_poses(estimates)
    spread_mm = max(np.linalg.norm(p.translation - mean.translation) for p in estimates)
    spread_deg = max(np.degrees(rotation_angle(p.rotation @ mean.rotation.T)) for p in estimates)
    if spread_mm > max_spread_mm or spread_deg > max_spread_deg:
        raise InconsistentObservationsError(
            f"display estimates disagree by {spread_mm:.3f} mm / {spread_deg:.3f} deg"
        )
    return CalibrationResult(
        mean,
        [float(np.mean(r)) if r else float("nan") for r in rms],
        [o.screen_pose for o in observations],
        float(spread_mm),
        float(spread_deg),
        estimates,
    )


# ---------------------------------------------------------------- simulation


def default_screen_poses(count: int = 3, scene=None):
    """Screen placements near the eye position, each facing the bisector of
    the camera and display directions so the cameras see the display."""
    eye = np.zeros(3) if scene is None else scene.nominal_eye_center
    to_cam = -np.array([0.0, 0.0, 1.0])
    disp = np.array([0.0, 45.0, -50.0]) if scene is None else scene.display.center_world()
    to_disp = (disp - eye) / np.linalg.norm(disp - eye)
    n = (to_cam + to_disp) / np.linalg.norm(to_cam + to_disp)
    x = np.cross([0.0, 1.0, 0.0], n)
    x /= np.linalg.norm(x)
    base = np.column_stack([x, np.cross(n, x), n])
    tilts = [(0.0, 0.0, 0.0), (3.0, -2.0, 1.5), (-2.5, 3.0, -1.5), (1.5, 2.5, 0.8), (-3.0, -1.5, -0.8)]
    poses = []
    for ax, ay, dz in tilts[:count]:
        rot = rotvec_to_matrix(np.radians([ax, ay, 0.0]) @ base.T) @ base
        poses.append(Pose(rot, eye + np.array([0.0, 0.0, -10.0]) + dz * n))
    return poses


def project_markers(board: MarkerBoard, screen_pose: Pose, camera: PinholeCamera, noise_px=0.0, rng=None):
    uv = camera.project_many(board.world(screen_pose))
    if noise_px > 0:
        uv = uv + noise_px * rng.standard_normal(uv.shape)
    return uv


def observe_virtual_display(scene, screen_pose: Pose, camera: PinholeCamera, step_px: int = 60, screen_size=(70.0, 140.0)):
    """Display pixels visible in the switched-off screen, with their exact image positions."""
    display = scene.display
    xs = np.arange(0, display.width_px, step_px, dtype=float)
    ys = np.arange(0, display.height_px, step_px, dtype=float)
    xd, yd = [a.ravel() for a in np.meshgrid(xs, ys)]
    mirror = Plane(screen_pose.translation, screen_pose.rotation[:, 2])
    virtual = mirror.reflect_point(display.to_world(xd, yd))
    uv = camera.project_many(virtual)
    ok = np.isfinite(uv[:, 0]) & (uv[:, 0] >= 0) & (uv[:, 0] <= camera.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= camera.height - 1)
    # the camera ray must meet the mirror inside the screen
    dirs = virtual - camera.center
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t = intersect_plane_t(np.broadcast_to(camera.center, dirs.shape), dirs, mirror)
    hit = camera.center + np.nan_to_num(t)[:, None] * dirs
    local = screen_pose.apply_inverse(hit)
    ok &= np.isfinite(t) & (np.abs(local[:, 0]) <= screen_size[0] / 2) & (np.abs(local[:, 1]) <= screen_size[1] / 2)
    # display must face the mirror image
    ok &= (virtual - camera.center) @ camera.pose.rotation[:, 2] > 0
    return np.column_stack([xd[ok], yd[ok]]), uv[ok]


def simulate_observations(
    scene, screen_poses, board: Optional[MarkerBoard] = None, marker_noise_px: float = 0.0, rng_seed: int = 0
):
    """Solve each screen pose from noisy marker projections, then collect
    noiseless display correspondences through the true mirror."""
    board = board or MarkerBoard.grid()
    rng = np.random.default_rng(rng_seed)
    observations = []
    for pose in screen_poses:
        fits = [
            estimate_plane_pose(board, project_markers(board, pose, cam, marker_noise_px, rng), cam).pose
            for cam in scene.cameras
        ]
        solved = average_poses(fits)
        dps, ips = [], []
        for cam in scene.cameras:
            d, i = observe_virtual_display(scene, pose, cam)
            dps.append(d)
            ips.append(i)
        observations.append(ScreenObservation(solved, dps, ips))
    return observations


def calibrated_scene(scene, result: CalibrationResult):
    """Scene whose display pose is the calibrated one (a drop-in for the oracle rig)."""
    return scene.with_display(replace(scene.display, pose=result.display_pose))


def pose_error(a: Pose, b: Pose):
    """(translation mm, rotation deg) between two poses."""
    return float(np.linalg.norm(a.translation - b.translation)), float(
        np.degrees(rotation_angle(a.rotation @ b.rotation.T))
    )
