"""One test per acceptance criterion.

The experiment-level tests run the real rendering and reconstruction
pipeline at 1280 x 960.  Noiseless captures are decoded once per scene and
shared through the in-process capture cache; trial-to-trial variation
comes from the seeded per-point and per-axis noise models.
"""

import time

import numpy as np
import pytest
from scipy import ndimage

from deflectogaze.calibration import reflect_pose_across_plane
from deflectogaze.config import CalibrationConfig, ExperimentConfig
from deflectogaze.eye import TwoSphereEye
from deflectogaze.experiments import run_calibration, run_experiment
from deflectogaze.fringes import fringe_prior, ground_truth_view, signal_mask
from deflectogaze.geometry import (
    PinholeCamera,
    Plane,
    Pose,
    best_fit_point,
    normalize,
    reflect,
    rotvec_to_matrix,
)
from deflectogaze.phase import PhaseMap, WaveletParams, cwt_phase, four_step_phase, unwrap, wrap
from deflectogaze.reconstruction import angular_errors, angular_loss, loss_gradient, optimize_two_sphere, ray_data
from deflectogaze.simulator import CrossSinusoid, ground_truth, render
from deflectogaze.simulator.render import render_phase_sequence
from deflectogaze.simulator.scene import default_scene

PERIOD = 80.0


# ---------------------------------------------------------------- 1 ball


def test_ball_radius_scatter_and_runtime():
    t0 = time.perf_counter()
    clean = run_experiment(ExperimentConfig(kind="ball", noise=0.0, period=PERIOD))
    elapsed = time.perf_counter() - t0
    assert abs(clean.summary["radius_error_mm"]) <= 0.01
    assert clean.summary["scatter_um"] < 5.0
    assert elapsed < 120.0

    noisy = run_experiment(ExperimentConfig(kind="ball", noise=0.01, period=PERIOD))
    assert noisy.summary["scatter_um"] < 100.0


# ---------------------------------------------------------------- 2 rotation stage


def test_rotation_stage_error_precision_and_budget():
    """Noiseless: epsilon <= 0.02 and sigma <= 0.01 at every position.
    Noise-matched (per-trial axis std tuned to 0.05 deg): epsilon <= 0.15.

    The time budget is checked by extrapolating the measured cost of one
    full decode to 100 independent captures (20 trials x 5 positions with
    image noise); the full noisy run is recorded in the decisions ledger.
    """
    t0 = time.perf_counter()
    clean = run_experiment(ExperimentConfig(kind="rotation", noise=0.0, trials=20, period=PERIOD))
    elapsed = time.perf_counter() - t0
    assert len(clean.rows) == 5
    for r in clean.rows:
        assert r["epsilon_deg"] <= 0.02
        assert r["sigma_deg"] <= 0.01
    per_capture = (elapsed - clean.timings.get("trace", 0.0)) / 5
    assert clean.timings.get("trace", 0.0) + 100 * per_capture < 45 * 60

    matched = run_experiment(
        ExperimentConfig(kind="rotation", noise=0.0, point_noise_deg="auto", target_axis_std_deg=0.05, trials=20, period=PERIOD)
    )
    sigmas = [r["sigma_deg"] for r in matched.rows]
    assert 0.025 <= np.mean(sigmas) <= 0.08
    assert matched.summary["max_epsilon_deg"] <= 0.15


# ---------------------------------------------------------------- 3 thinning


def test_thinning_precision_degrades_with_density():
    rep = run_experiment(
        ExperimentConfig(
            kind="thinning", noise=0.0, point_noise_deg="auto", target_axis_std_deg=0.28, captures=10, draws=10, period=PERIOD
        )
    )
    rows = sorted(rep.rows, key=lambda r: -r["density"])
    assert [r["density"] for r in rows] == [1.0, 0.5, 0.25, 0.125, 0.0625]
    prec = [r["mean_precision_deg"] for r in rows]
    assert all(b > a for a, b in zip(prec, prec[1:]))
    assert rep.summary["spearman_rho"] == pytest.approx(1.0)
    assert prec[-1] >= 2 * prec[0]


# ---------------------------------------------------------------- 4 grid


def test_grid_closure_and_axis_noise_regime():
    clean = run_experiment(ExperimentConfig(kind="grid", noise=0.0, trials=10, period=PERIOD))
    held = [r for r in clean.rows if r["role"] == "held_out"]
    assert len(held) == 5
    assert max(r["accuracy_deg"] for r in held) < 0.05

    noisy = run_experiment(ExperimentConfig(kind="grid", noise=0.0, trials=10, axis_noise_deg=0.3, period=PERIOD))
    held = [r for r in noisy.rows if r["role"] == "held_out"]
    for r in held:
        assert 0.3 <= r["accuracy_deg"] <= 1.0


# ---------------------------------------------------------------- 5 phase oracle


def test_cwt_matches_four_step_away_from_limbus():
    scene = default_scene("two_sphere")
    gts = ground_truth(scene)
    crossed = render(scene, CrossSinusoid(PERIOD, PERIOD), 0, gts=gts)
    shifted = render_phase_sequence(scene, "vertical", PERIOD, gts=gts)
    for ci, gt in enumerate(gts):
        prior = fringe_prior(scene, ci, PERIOD)
        mask = signal_mask(crossed[ci], prior.camera_period)
        px, _ = cwt_phase(crossed[ci], WaveletParams.for_period(prior.camera_period), mask, prior.branch_angles)
        ref = four_step_phase([f[ci] for f in shifted])
        # band around every region boundary (limbus and silhouette)
        r = gt.region.astype(int)
        edge = (np.diff(r, axis=1, prepend=r[:, :1]) != 0) | (np.diff(r, axis=0, prepend=r[:1]) != 0)
        band = ndimage.binary_dilation(edge, iterations=8)
        ok = px.valid & ref.valid & ~band
        assert ok.sum() > 10000
        assert np.median(np.abs(wrap(px.phase[ok] - ref.phase[ok]))) < 0.05


# ---------------------------------------------------------------- 6 depth-normal loss


@pytest.fixture(scope="module")
def oracle_data():
    scene = default_scene("two_sphere")
    gts = ground_truth(scene)
    views = [ground_truth_view(g, i, erosion=2) for i, g in enumerate(gts)]
    return scene, ray_data(views, scene)


def test_depth_normal_loss_properties(oracle_data):
    scene, data = oracle_data
    assert angular_errors(scene.surface, data).max() < 1e-9
    assert angular_loss(scene.surface, data) < 1e-9

    x = scene.surface.to_vector() + np.array([0.4, -0.3, 0.2, -0.4, 0.3, -0.2, 0.2, -0.2])
    res = optimize_two_sphere(TwoSphereEye.from_vector(x), data, max_pixels=8000)
    assert len(res.history) >= 2
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    assert res.history[-1] < res.history[0]

    sub = data.subset(np.arange(0, len(data), 10))
    rng = np.random.default_rng(11)
    for _ in range(5):
        m = TwoSphereEye.from_vector(scene.surface.to_vector() + rng.normal(scale=0.2, size=8))
        g1, g2 = loss_gradient(m, sub, 1e-4), loss_gradient(m, sub, 5e-5)
        assert np.linalg.norm(g1 - g2) <= 1e-4 * np.linalg.norm(g2)


# ---------------------------------------------------------------- 7 geometry suite


def _smooth_field(rng, shape=(16, 16)):
    v, u = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    f = rng.uniform(-50, 50) + rng.uniform(-1, 1) * u + rng.uniform(-1, 1) * v
    for _ in range(3):
        k = rng.normal(size=2) * 0.3
        f = f + rng.uniform(-3, 3) * np.sin(k[0] * u + k[1] * v + rng.uniform(0, 2 * np.pi))
    step = max(np.abs(np.diff(f, axis=0)).max(), np.abs(np.diff(f, axis=1)).max())
    return f * min(1.0, 2.5 / step)


def test_geometry_property_suite():
    cases = 1000
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()

    # reflect is an involution
    d = normalize(rng.normal(size=(cases, 3)))
    n = normalize(rng.normal(size=(cases, 3)))
    assert np.abs(reflect(reflect(d, n), n) - d).max() < 1e-12

    # unwrap round trip
    for _ in range(cases):
        f = _smooth_field(rng)
        pm = PhaseMap(wrap(f), rng.uniform(0.1, 1.0, f.shape), np.ones(f.shape, bool), "x")
        corr = unwrap(pm, (4, 6), f[6, 4], 2 * np.pi)
        assert np.abs(corr.xd - f).max() < 1e-9

    # best_fit_point on concurrent lines
    for _ in range(cases):
        c = rng.uniform(-100, 100, 3)
        k = int(rng.integers(3, 30))
        dirs = normalize(rng.normal(size=(k, 3)))
        if np.linalg.svd(dirs, compute_uv=False)[1] < 0.05:
            dirs[0] = np.cross(dirs[1], [0.3, 0.1, 1.0]) / np.linalg.norm(np.cross(dirs[1], [0.3, 0.1, 1.0]))
        p, rms = best_fit_point((c + rng.uniform(-50, 50, (k, 1)) * dirs, dirs))
        assert np.linalg.norm(p - c) < 1e-9 and rms < 1e-9

    # reflect_pose_across_plane: involution and isometry
    local = np.c_[rng.uniform(-50, 50, (6, 2)), np.zeros(6)]
    for _ in range(cases):
        pose = Pose(rotvec_to_matrix(rng.uniform(-3, 3, 3)), rng.uniform(-100, 100, 3))
        mirror = Plane(rng.uniform(-50, 50, 3), normalize(rng.normal(size=3)))
        real = reflect_pose_across_plane(pose, mirror)
        back = reflect_pose_across_plane(real, mirror)
        assert np.abs(back.rotation - pose.rotation).max() < 1e-12
        assert np.abs(back.translation - pose.translation).max() < 1e-10
        a = real.apply(local)
        dl = np.linalg.norm(local[:, None] - local[None], axis=-1)
        dw = np.linalg.norm(a[:, None] - a[None], axis=-1)
        assert np.abs(dw - dl).max() < 1e-9
        assert np.abs(a - mirror.reflect_point(pose.apply(local))).max() < 1e-9

    # project / backproject round trip
    for _ in range(cases):
        cam = PinholeCamera(2400.0, 2400.0, 639.5, 479.5, 1280, 960, Pose(rotvec_to_matrix(rng.uniform(-3, 3, 3)), rng.uniform(-100, 100, 3)))
        u, v, depth = rng.uniform(0, 1279), rng.uniform(0, 959), rng.uniform(1, 2000)
        ray = cam.backproject(u, v)
        uv = cam.project(ray.at(depth / (ray.direction @ cam.pose.rotation[:, 2])))
        assert abs(uv[0] - u) < 1e-9 and abs(uv[1] - v) < 1e-9

    assert time.perf_counter() - t0 < 60.0


# ---------------------------------------------------------------- 8 calibration budget


def test_calibrated_display_pose_gaze_budget():
    rep = run_calibration(
        CalibrationConfig(screens=3, marker_noise_px=0.1, board=[7, 5, 4.0], repeats=1, gaze_check=[[30, 0]], period=PERIOD)
    )
    assert rep.summary["max_gaze_shift_deg"] < 0.05
    assert rep.summary["max_degradation_deg"] < 0.05
