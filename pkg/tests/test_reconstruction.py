import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deflectogaze.eye import CORNEA, SCLERA, TwoSphereEye
from deflectogaze.fringes import ground_truth_view
from deflectogaze.geometry import Sphere, normalize, rotvec_to_matrix
from deflectogaze.reconstruction import (
    SampleSet,
    anchors_both_ways,
    angular_errors,
    angular_loss,
    fit_sphere_from_normals,
    initial_two_sphere,
    integrate_refine,
    loss_gradient,
    optimize_two_sphere,
    piece_radius,
    ray_data,
)
from deflectogaze.simulator import ground_truth
from deflectogaze.simulator.scene import default_scene

from strategies import seeds, vec3


@pytest.fixture(scope="module")
def oracle():
    scene = default_scene("two_sphere")
    gts = ground_truth(scene)
    views = [ground_truth_view(g, i, erosion=2) for i, g in enumerate(gts)]
    data = ray_data(views, scene)
    return scene, gts, views, data


def cap(rng, center, radius, n, axis=(0, 0, -1.0), spread=0.4):
    d = normalize(rng.normal(size=(n, 3)) * spread + np.asarray(axis))
    return center + radius * d, d


@given(vec3(-50, 50), st.floats(2, 30), seeds())
def test_sphere_fit_exact_on_noiseless_pencil(c, r, seed):
    p, n = cap(np.random.default_rng(seed), c, r, 200)
    fit = fit_sphere_from_normals(p, n)
    assert np.linalg.norm(fit.sphere.center - c) < 1e-9 * max(1, r)
    assert abs(fit.sphere.radius - r) < 1e-9 * max(1, r)
    assert fit.scatter < 1e-9


def test_sphere_fit_trims_outliers(rng):
    p, n = cap(rng, np.zeros(3), 12.0, 500)
    n[:10] = normalize(rng.normal(size=(10, 3)))
    fit = fit_sphere_from_normals(p, n, trim=3.0)
    assert np.linalg.norm(fit.sphere.center) < 1e-6 and fit.count == 490


@given(vec3(-20, 20), st.floats(3, 20), seeds())
def test_piece_radius_exact_on_sphere(c, r, seed):
    p, n = cap(np.random.default_rng(seed), c, r, 100, spread=0.3)
    assert piece_radius(p, n) == pytest.approx(r, rel=1e-9)


def test_loss_vanishes_at_truth(oracle):
    scene, _, _, data = oracle
    err = angular_errors(scene.surface, data)
    assert err.max() < 1e-9
    assert angular_loss(scene.surface, data) < 1e-9


def test_optimizer_stays_at_truth(oracle):
    scene, _, _, data = oracle
    res = optimize_two_sphere(scene.surface, data, max_pixels=8000)
    assert res.loss < 1e-6
    assert np.abs(res.model.to_vector() - scene.surface.to_vector()).max() < 1e-4


def test_optimizer_recovers_from_perturbed_start(oracle):
    scene, _, _, data = oracle
    x = scene.surface.to_vector() + np.array([0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.3, -0.3])
    res = optimize_two_sphere(TwoSphereEye.from_vector(x), data, max_pixels=8000)
    assert np.abs(res.model.to_vector() - scene.surface.to_vector()).max() < 0.02
    assert res.loss < 1e-4
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_gradient_step_halving(oracle):
    scene, _, _, data = oracle
    sub = data.subset(np.arange(0, len(data), 10))
    rng = np.random.default_rng(7)
    for _ in range(5):
        m = TwoSphereEye.from_vector(scene.surface.to_vector() + rng.normal(scale=0.2, size=8))
        g1 = loss_gradient(m, sub, 1e-4)
        g2 = loss_gradient(m, sub, 5e-5)
        assert np.linalg.norm(g1 - g2) <= 1e-4 * np.linalg.norm(g2)


def test_anchors_and_integration_on_oracle_views(oracle):
    scene, gts, views, _ = oracle
    anchors = anchors_both_ways(views, scene, 200, rng_seed=1)
    truth = np.array([gts[c].point[v, u] for c, u, v in zip(anchors.camera_id, anchors.u, anchors.v)])
    assert np.median(np.linalg.norm(anchors.point - truth, axis=1)) < 1e-3
    init = initial_two_sphere(anchors)
    assert np.abs(init.to_vector() - scene.surface.to_vector()).max() < 0.05
    ref = integrate_refine(scene.surface, views, scene, anchors)
    s = ref.samples
    truth = np.array([gts[c].point[v, u] for c, u, v in zip(s.camera_id, s.u, s.v)])
    assert np.sqrt(np.mean(np.sum((s.point - truth) ** 2, axis=1))) < 1e-3
    assert set(np.unique(s.region)) == {CORNEA, SCLERA}


def test_sample_set_subset_and_concatenate(rng):
    n = 5
    s = SampleSet(np.zeros(n, int), np.arange(n), np.arange(n), rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), np.full(n, SCLERA))
    both = SampleSet.concatenate([s, s.subset([1, 3])])
    assert len(both) == 7 and both.n_r is None
    assert both[5].pixel == (1, 1) and len(both.of_region(CORNEA)) == 0


def test_two_sphere_invariants():
    with pytest.raises(ValueError):
        TwoSphereEye([0, 0, 0], [0, 0, 0], 7.8, 12.0).validate()
    eye = TwoSphereEye([0, 0, -5.5], [0, 0, 0], 7.8, 12.0).validate()
    c, n, r = eye.limbus()
    assert np.allclose(np.linalg.norm([r, np.linalg.norm(c - eye.sclera_center)]), 12.0)
    rot = eye.rotated_about([0, 0, 0], [0, 1.0, 0], 0.3)
    assert rot.center_distance == pytest.approx(5.5)
