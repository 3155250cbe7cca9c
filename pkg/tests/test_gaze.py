import numpy as np
import pytest
from hypothesis import given

from deflectogaze.eye import CORNEA, SCLERA, TwoSphereEye
from deflectogaze.gaze import (
    AngleSeries,
    GazeTransform,
    InsufficientTrialsError,
    MissingReferenceError,
    accuracy_rmse,
    angular_precision,
    calibrate_kappa,
    estimate_axis,
    perturb_direction,
    precision,
    relative_error,
    stage_angle,
)
from deflectogaze.geometry import DegenerateConfigurationError, angle_between, normalize, rotation_angle, rotation_matrix, rotvec_to_matrix
from deflectogaze.reconstruction import SampleSet

from strategies import rotvec, seeds, unit3


def two_sphere_samples(eye, rng, n=400):
    parts = []
    for region, c, r in ((CORNEA, eye.cornea_center, eye.cornea_radius), (SCLERA, eye.sclera_center, eye.sclera_radius)):
        d = normalize(rng.normal(size=(n, 3)) * 0.3 + eye.direction)
        parts.append((c + r * d, d, np.full(n, region)))
    p, d, reg = (np.concatenate(x) for x in zip(*parts))
    z = np.zeros(len(p), int)
    return SampleSet(z, z, z, p, d, reg, n_r=d)


EYE = TwoSphereEye([1.0, 2.0, -5.5], [1.0, 2.0, 0.0], 7.8, 12.0)


def test_axis_from_exact_two_sphere_samples(rng):
    s = two_sphere_samples(EYE, rng)
    init = TwoSphereEye(EYE.cornea_center + [0.2, -0.1, 0], EYE.sclera_center + [-0.1, 0.1, 0], 7.8, 12.0)
    g = estimate_axis(s, init)
    assert np.degrees(angle_between(g.direction, EYE.direction)) < 1e-6
    assert g.optical_axis.distance_to_point(EYE.cornea_center) < 1e-6
    assert g.optical_axis.distance_to_point(EYE.sclera_center) < 1e-6
    assert not g.single_region


def test_single_region_is_flagged(rng):
    s = two_sphere_samples(EYE, rng).of_region(SCLERA)
    s.point[:, 0] += 0.01 * rng.normal(size=len(s))  # break the exact pencil
    assert estimate_axis(s, EYE).single_region


@given(rotvec, seeds())
def test_estimate_axis_is_rotation_equivariant(rv, seed):
    rng = np.random.default_rng(seed)
    s = two_sphere_samples(EYE, rng, 150)
    s.n_r = normalize(s.n_r + 0.01 * rng.normal(size=s.n_r.shape))
    r = rotvec_to_matrix(rv)
    g = estimate_axis(s, EYE)
    rs = SampleSet(s.camera_id, s.u, s.v, s.point @ r.T, s.n @ r.T, s.region, n_r=s.n_r @ r.T)
    reye = TwoSphereEye(r @ EYE.cornea_center, r @ EYE.sclera_center, 7.8, 12.0)
    gr = estimate_axis(rs, reye)
    assert np.allclose(gr.direction, r @ g.direction, atol=1e-9)


def test_kappa_recovers_known_rotation(rng):
    r = rotation_matrix(normalize([0.3, 1.0, 0.2]), np.radians(5))
    axes = normalize(rng.normal(size=(6, 3)))
    eye = np.array([1.0, 2.0, 3.0])
    t = calibrate_kappa(axes, eye + 500 * axes @ r.T, eye)
    assert np.allclose(t.rotation, r, atol=1e-9)
    assert t.fit_residual < 1e-9 and t.angle_deg == pytest.approx(5.0)


@given(rotvec, seeds())
def test_kappa_is_proper_rotation(rv, seed):
    rng = np.random.default_rng(seed)
    axes = normalize(rng.normal(size=(5, 3)))
    targets = normalize(rng.normal(size=(5, 3)))
    t = calibrate_kappa(axes, targets, np.zeros(3))
    assert np.allclose(t.rotation.T @ t.rotation, np.eye(3), atol=1e-12)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0, abs=1e-12)


def test_kappa_rejects_rank_one():
    d = np.tile([0, 0, 1.0], (3, 1))
    with pytest.raises(DegenerateConfigurationError):
        calibrate_kappa(d, d, np.zeros(3))


def test_relative_error_and_precision():
    series = [AngleSeries(0.0, [30.0, 30.2]), AngleSeries(2.0, [32.0, 32.4]), AngleSeries(-2.0, [28.0, 28.0])]
    eps = relative_error(series)
    assert eps[0.0] == 0.0 and eps[2.0] == pytest.approx(0.1) and eps[-2.0] == pytest.approx(0.1)
    assert precision(series[1]) == pytest.approx(0.2)
    with pytest.raises(MissingReferenceError):
        relative_error(series[1:])
    with pytest.raises(InsufficientTrialsError):
        precision(AngleSeries(0.0, [1.0]))
    with pytest.raises(ValueError):
        AngleSeries(0.0, [np.nan])


def test_stage_angle_signs():
    assert stage_angle([0, 0, -1.0]) == pytest.approx(0.0)
    d = rotation_matrix([0, 1.0, 0], np.radians(10)) @ np.array([0, 0, -1.0])
    assert stage_angle(d) == pytest.approx(10.0)
    assert stage_angle(d + [0, 0.5, 0]) == pytest.approx(10.0)


def test_accuracy_and_precision_metrics(rng):
    truth = np.array([0, 0, 1.0])
    tilt = rotation_matrix([1.0, 0, 0], np.radians(0.5)) @ truth
    assert accuracy_rmse([tilt, tilt], truth) == pytest.approx(0.5)
    dirs = [perturb_direction(truth, 0.3, rng) for _ in range(4000)]
    # isotropic 2D Gaussian: rms angle = sqrt(2) sigma
    assert angular_precision(dirs) == pytest.approx(0.3 * np.sqrt(2), rel=0.05)


def test_gaze_transform_validation():
    with pytest.raises(ValueError):
        GazeTransform(np.diag([1.0, 1.0, -1.0]))
    t = GazeTransform(rotation_matrix([0, 0, 1.0], 0.1))
    assert rotation_angle(t.rotation) == pytest.approx(0.1)
