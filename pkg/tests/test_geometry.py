import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from deflectogaze.calibration import reflect_pose_across_plane
from deflectogaze.geometry import (
    DegenerateConfigurationError,
    Line3,
    PinholeCamera,
    Plane,
    Pose,
    Ray,
    Sphere,
    angle_between,
    average_poses,
    best_fit_axis,
    best_fit_point,
    normalize,
    quaternion_to_rotation,
    ray_sphere_intersect,
    reflect,
    rotation_angle,
    rotation_matrix,
    rotation_to_quaternion,
    rotvec_to_matrix,
)

from strategies import rotvec, seeds, unit3, vec3


def camera(pose=None):
    return PinholeCamera(2400.0, 2400.0, 639.5, 479.5, 1280, 960, pose or Pose())


# ---------------------------------------------------------------- unit cases


def test_reflect_off_horizontal_mirror():
    d = reflect(normalize([1.0, -1.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    assert np.allclose(d, normalize([1.0, 1.0, 0.0]), atol=1e-15)


def test_ray_sphere_hits_front_and_misses():
    hit = ray_sphere_intersect(Ray([0, 0, -50.0], [0, 0, 1.0]), Sphere([0, 0, 0.0], 12.0))
    p, n, t = hit
    assert np.allclose(p, [0, 0, -12.0]) and np.allclose(n, [0, 0, -1.0]) and t == pytest.approx(38.0)
    assert ray_sphere_intersect(Ray([0, 20.0, -50.0], [0, 0, 1.0]), Sphere([0, 0, 0.0], 12.0)) is None
    # from inside, the exit point is the only forward hit
    p, _, t = ray_sphere_intersect(Ray([0, 0, 0.0], [1.0, 0, 0]), Sphere([0, 0, 0.0], 12.0))
    assert np.allclose(p, [12.0, 0, 0]) and t == pytest.approx(12.0)


def test_project_backproject_principal_point():
    cam = camera()
    ray = cam.backproject(500.0, 500.0)
    u, v = cam.project(ray.at(250.0))
    assert abs(u - 500) < 1e-9 and abs(v - 500) < 1e-9
    assert cam.project([0, 0, -5.0]) is None


def test_best_fit_point_needs_nonparallel_lines():
    with pytest.raises(DegenerateConfigurationError):
        best_fit_point((np.zeros((3, 3)) + [[0, 0, 0], [1, 0, 0], [0, 1, 0]], np.tile([0, 0, 1.0], (3, 1))))


def test_best_fit_axis_pencil_is_flagged():
    rng = np.random.default_rng(0)
    c = np.array([1.0, -2.0, 30.0])
    n = normalize(rng.normal(size=(200, 3)) * [1, 1, 0.2] + [0, 0, -1])
    pts = c + 12.0 * n
    fit = best_fit_axis((pts, -n), Line3(c + [0.3, 0, 0], [0.1, 0.2, 1.0]))
    assert fit.degenerate
    assert fit.rms_distance < 1e-9
    assert fit.axis.distance_to_point(c) < 1e-9


def test_best_fit_axis_two_sphere_geometry():
    """Normals of two spheres whose centres lie on a line all meet that line."""
    rng = np.random.default_rng(1)
    oc, os_ = np.array([0.0, 0.0, -5.5]), np.zeros(3)
    n1 = normalize(rng.normal(size=(300, 3)) * [1, 1, 0.3] + [0, 0, -1])
    n2 = normalize(rng.normal(size=(300, 3)) * [1, 1, 0.3] + [0, 0, -1])
    pts = np.vstack([oc + 7.8 * n1, os_ + 12 * n2])
    nrm = np.vstack([n1, n2])
    fit = best_fit_axis((pts, -nrm), Line3(os_ + [0.2, 0.1, 0], [0.05, 0.0, -1.0]))
    assert fit.rms_distance < 1e-9
    assert np.degrees(angle_between(fit.axis.direction, [0, 0, -1.0])) % 180 < 1e-6
    assert fit.axis.distance_to_point(oc) < 1e-6 and fit.axis.distance_to_point(os_) < 1e-6


def test_pose_rejects_reflections():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]))


def test_average_poses_of_identical_poses():
    p = Pose(rotvec_to_matrix([0.1, -0.2, 0.3]), [1.0, 2.0, 3.0])
    m = average_poses([p, p, p])
    assert np.allclose(m.rotation, p.rotation, atol=1e-12) and np.allclose(m.translation, p.translation)


# ---------------------------------------------------------------- properties


@given(unit3, unit3)
def test_reflect_is_an_involution(d, n):
    assert np.allclose(reflect(reflect(d, n), n), d, atol=1e-12, rtol=0)


@given(unit3, unit3)
def test_reflect_preserves_length_and_angle(d, n):
    r = reflect(d, n)
    assert abs(np.linalg.norm(r) - 1) < 1e-12
    assert abs(abs(r @ n) - abs(d @ n)) < 1e-12


@given(vec3(-50, 50), st.floats(0.5, 40), vec3(-200, 200), unit3)
def test_ray_sphere_point_lies_on_sphere(c, r, o, d):
    hit = ray_sphere_intersect(Ray(o, d), Sphere(c, r))
    if hit is None:
        return
    p, n, t = hit
    assert t > 0
    assert abs(np.linalg.norm(p - c) - r) <= 1e-9 * max(r, np.linalg.norm(o - c))
    assert abs(np.linalg.norm(n) - 1) < 1e-9


@given(vec3(-100, 100), st.integers(3, 30), seeds())
def test_best_fit_point_on_concurrent_lines(c, k, seed):
    rng = np.random.default_rng(seed)
    dirs = normalize(rng.normal(size=(k, 3)))
    assume(np.linalg.svd(dirs, compute_uv=False)[1] > 0.05)
    pts = c + rng.uniform(-50, 50, size=(k, 1)) * dirs
    p, rms = best_fit_point((pts, dirs))
    assert np.linalg.norm(p - c) < 1e-9
    assert rms < 1e-9


@given(rotvec, vec3(-100, 100), st.floats(0, 1279), st.floats(0, 959), st.floats(1.0, 2000.0))
def test_project_backproject_round_trip(rv, t, u, v, depth):
    cam = camera(Pose(rotvec_to_matrix(rv), t))
    ray = cam.backproject(u, v)
    assert np.allclose(ray.origin, t)
    # depth along the optical axis, so the point sits at z_cam = depth
    z = cam.pose.rotation[:, 2]
    uv = cam.project(ray.at(depth / (ray.direction @ z)))
    assert uv is not None
    assert abs(uv[0] - u) < 1e-9 and abs(uv[1] - v) < 1e-9


@given(rotvec, vec3(), vec3(-50, 50), unit3)
def test_reflect_pose_across_plane_involution(rv, t, q, n):
    pose = Pose(rotvec_to_matrix(rv), t)
    mirror = Plane(q, n)
    back = reflect_pose_across_plane(reflect_pose_across_plane(pose, mirror), mirror)
    assert np.allclose(back.rotation, pose.rotation, atol=1e-12, rtol=0)
    assert np.allclose(back.translation, pose.translation, atol=1e-12 * max(1.0, np.abs(t).max(), np.abs(q).max()), rtol=0)


@given(rotvec, vec3(), vec3(-50, 50), unit3, seeds())
def test_reflect_pose_across_plane_isometry(rv, t, q, n, seed):
    pose = Pose(rotvec_to_matrix(rv), t)
    mirror = Plane(q, n)
    real = reflect_pose_across_plane(pose, mirror)
    rng = np.random.default_rng(seed)
    local = rng.uniform(-50, 50, size=(6, 3))
    local[:, 2] = 0.0
    a = real.apply(local)
    scale = max(1.0, np.abs(t).max(), np.abs(q).max())
    # distances are preserved and the local plane maps onto the mirror image
    d_local = np.linalg.norm(local[:, None] - local[None], axis=-1)
    d_world = np.linalg.norm(a[:, None] - a[None], axis=-1)
    assert np.allclose(d_world, d_local, atol=1e-12 * scale * 100, rtol=0)
    assert np.allclose(a, mirror.reflect_point(pose.apply(local)), atol=1e-12 * scale * 100, rtol=0)
    assert np.linalg.det(real.rotation) == pytest.approx(1.0, abs=1e-12)


@given(rotvec)
def test_rotation_matrices_are_proper(rv):
    r = rotvec_to_matrix(rv)
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-10)
    assert abs(np.linalg.det(r) - 1) < 1e-10


@given(rotvec)
def test_quaternion_round_trip(rv):
    r = rotvec_to_matrix(rv)
    assert np.allclose(quaternion_to_rotation(rotation_to_quaternion(r)), r, atol=1e-12)


@given(unit3, st.floats(0.0, 3.1))
def test_rotation_angle_matches_generator(axis, angle):
    assert rotation_angle(rotation_matrix(axis, angle)) == pytest.approx(angle, abs=1e-7)
