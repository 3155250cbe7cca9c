import numpy as np
import pytest

from deflectogaze.eye import BACKGROUND, CORNEA, SCLERA
from deflectogaze.geometry import Plane, normalize, reflect
from deflectogaze.phase import four_step_phase, wrap
from deflectogaze.simulator import CrossSinusoid, NoiseModel, ground_truth, render
from deflectogaze.simulator.patterns import Checkerboard, Sinusoid, Uniform, pattern_from_dict, pattern_to_dict, sample
from deflectogaze.simulator.render import pixel_normals, render_phase_sequence
from deflectogaze.simulator.scene import FlatMirrorSurface, default_scene


@pytest.fixture(scope="module")
def eye():
    scene = default_scene("two_sphere")
    return scene, ground_truth(scene)


def test_reflection_law_at_valid_pixels(eye):
    scene, gts = eye
    for cam, gt in zip(scene.cameras, gts):
        v, u = np.nonzero(gt.valid)
        sel = slice(None, None, 97)
        d = cam.pixel_directions(u[sel].astype(float), v[sel].astype(float))
        r = reflect(d, gt.normal[v[sel], u[sel]])
        to_disp = normalize(scene.display.to_world(gt.display[v[sel], u[sel], 0], gt.display[v[sel], u[sel], 1]) - gt.point[v[sel], u[sel]])
        ang = np.arctan2(np.linalg.norm(np.cross(r, to_disp), axis=1), np.sum(r * to_disp, axis=1))
        assert ang.max() < 1e-9


def test_both_regions_visible(eye):
    _, gts = eye
    for gt in gts:
        labels = set(np.unique(gt.region[gt.valid]).tolist())
        assert labels == {CORNEA, SCLERA}
        assert np.all(gt.region[~np.isfinite(gt.point[..., 0])] == BACKGROUND)


def test_noiseless_render_equals_pattern(eye):
    scene, gts = eye
    pat = CrossSinusoid(80, 80)
    img = render(scene, pat, 0, gts=gts, sampling="analytic")
    for im, gt in zip(img, gts):
        assert np.abs(im[gt.valid] - pat.evaluate(gt.display[gt.valid, 0], gt.display[gt.valid, 1])).max() < 1e-9
        assert np.all(im[~gt.valid] == scene.background_level)


def test_render_is_deterministic_and_seeded(eye):
    scene, gts = eye
    noisy = scene.with_noise(NoiseModel(0.01))
    a = render(noisy, CrossSinusoid(80, 80), 5, gts=gts)
    b = render(noisy, CrossSinusoid(80, 80), 5, gts=gts)
    c = render(noisy, CrossSinusoid(80, 80), 6, gts=gts)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])
    diff = a[0] - render(scene, CrossSinusoid(80, 80), 5, gts=gts)[0]
    assert np.std(diff) == pytest.approx(0.01, rel=0.02)


def test_pixel_normals_independent_of_tiling():
    whole = pixel_normals(3, 1, 0, 1000)
    parts = np.concatenate([pixel_normals(3, 1, s, 200) for s in range(0, 1000, 200)])
    assert np.array_equal(whole, parts)
    with pytest.raises(ValueError):
        pixel_normals(3, 1, 1, 10)


def test_four_step_sequence_identities(eye):
    scene, gts = eye
    frames = render_phase_sequence(scene, "vertical", 80.0, gts=gts, sampling="analytic")
    gt = gts[0]
    i1, i2, i3, i4 = (f[0] for f in frames)
    v = gt.valid
    assert np.abs((i1 + i3 - i2 - i4)[v]).max() < 1e-9
    ph = four_step_phase([i1, i2, i3, i4])
    truth = 2 * np.pi * gt.display[..., 0] / 80.0
    ok = ph.valid & v
    assert np.abs(wrap(ph.phase[ok] - truth[ok])).max() < 1e-6


def test_flat_mirror_scene_reflects_display():
    scene = default_scene("two_sphere")
    mirror = FlatMirrorSurface(Plane(scene.nominal_eye_center, normalize([0, 0.37, -1.0])), 40.0)
    gts = ground_truth(scene.with_surface(mirror))
    assert any(g.valid.any() for g in gts)


def test_patterns():
    s = Sinusoid("horizontal", 100.0, 0.5)
    assert s.evaluate(0.0, 25.0) == pytest.approx(0.5 + 0.5 * np.cos(np.pi / 2 + 0.5))
    with pytest.raises(ValueError):
        Sinusoid("diagonal")
    with pytest.raises(ValueError):
        CrossSinusoid(bias=0.5, amplitude=0.3)
    assert Checkerboard(10).evaluate(5.0, 5.0) == 1.0 and Checkerboard(10).evaluate(15.0, 5.0) == 0.0
    assert Uniform(0.3).evaluate(np.zeros(3), 0.0).tolist() == [0.3] * 3
    # bilinear sampling at integer pixels equals the analytic value
    c = CrossSinusoid(37.0, 41.0)
    x, y = np.arange(20.0), np.arange(20.0) * 2
    assert np.allclose(sample(c, x, y), c.evaluate(x, y))
    assert pattern_from_dict(pattern_to_dict(c)) == c
    with pytest.raises(ValueError):
        pattern_from_dict({"kind": "Spiral"})
