"""Ray-traced rendering of display reflections and the matching ground truth."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..eye import BACKGROUND
from ..geometry import PinholeCamera, reflect
from .patterns import Sinusoid, sample
from .scene import Scene

TILE_ROWS = 64


@dataclass
class GroundTruth:
    """Per-pixel oracle maps for one camera.  Invalid pixels hold NaN."""

    point: np.ndarray  # (H, W, 3)
    normal: np.ndarray  # (H, W, 3)
    display: np.ndarray  # (H, W, 2) x_D, y_D
    region: np.ndarray  # (H, W) int8
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self):
        return self.valid.shape


def _trace_rows(scene: Scene, cam: PinholeCamera, rows: slice):
    h = rows.stop - rows.start
    v, u = np.mgrid[rows.start : rows.stop, 0 : cam.width].astype(float)
    dirs = cam.pixel_directions(u.ravel(), v.ravel())
    origins = np.broadcast_to(cam.center, dirs.shape)
    t, label = scene.surface.intersect(origins, dirs)
    hit = ~np.isnan(t)
    n_px = dirs.shape[0]
    point = np.full((n_px, 3), np.nan)
    normal = np.full((n_px, 3), np.nan)
    disp = np.full((n_px, 2), np.nan)
    if hit.any():
        p = origins[hit] + t[hit, None] * dirs[hit]
        n = scene.surface.normals_at(p, label[hit])
        refl = reflect(dirs[hit], n)
        xd, yd = scene.display.intersect(p, refl)
        point[hit] = p
        normal[hit] = n
        disp[hit, 0] = xd
        disp[hit, 1] = yd
    on_display = hit & ~np.isnan(disp[:, 0])
    on_display[on_display] = scene.display.contains(disp[on_display, 0], disp[on_display, 1])
    region = np.where(hit, label, BACKGROUND).astype(np.int8)
    w = cam.width
    return (
        point.reshape(h, w, 3),
        normal.reshape(h, w, 3),
        disp.reshape(h, w, 2),
        region.reshape(h, w),
        on_display.reshape(h, w),
    )


def trace_camera(scene: Scene, cam: PinholeCamera, threads: int = 1) -> GroundTruth:
    """Trace every pixel of one camera in independent row tiles."""
    tiles = [slice(r, min(cam.height, r + TILE_ROWS)) for r in range(0, cam.height, TILE_ROWS)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda s: _trace_rows(scene, cam, s), tiles))
    else:
        parts = [_trace_rows(scene, cam, s) for s in tiles]
    point, normal, disp, region, valid = (np.concatenate(x, axis=0) for x in zip(*parts))
    disp[~valid] = np.nan
    return GroundTruth(point, normal, disp, region, valid)


def ground_truth(scene: Scene, threads: int = 1) -> list:
    """Exact ray-traced maps for every camera (no noise)."""
    return [trace_camera(scene, cam, threads) for cam in scene.cameras]


def pixel_normals(seed: int, stream: int, start: int, count: int):
    """Standard normal deviates indexed by pixel.

    Pixel ``k`` of stream ``stream`` always consumes Philox counter
    ``k // 2``, so any tiling of the image reproduces the same values.
    """
    if start % 2:
        raise ValueError("tile start must be even")
    key = (np.uint64(seed) << np.uint64(16)) ^ np.uint64(stream)
    n_blocks = (count + 1) // 2
    bg = np.random.Philox(key=int(key), counter=start // 2)
    raw = bg.random_raw(4 * n_blocks).reshape(n_blocks, 4)
    u1 = ((raw[:, [0, 2]] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    u2 = ((raw[:, [1, 3]] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2 * np.pi * u2)
    return z.ravel()[:count]


def apply_noise(image, noise, seed: int, stream: int):
    out = np.asarray(image, dtype=float).copy()
    if noise.occlusion_mask is not None:
        out = np.where(noise.occlusion_mask, np.nan, out)
    if noise.intensity_sigma > 0:
        h, w = out.shape
        out = out + noise.intensity_sigma * pixel_normals(seed, stream, 0, h * w + (h * w) % 2)[: h * w].reshape(h, w)
    if noise.quantize_bits:
        levels = 2**noise.quantize_bits - 1
        out = np.round(np.clip(out, 0, 1) * levels) / levels
    return out


def shade(scene: Scene, gt: GroundTruth, pattern, sampling="bilinear"):
    """Noise-free intensity image for one camera from its ground truth."""
    img = np.full(gt.shape, float(scene.background_level))
    v = gt.valid
    img[v] = sample(pattern, gt.display[v, 0], gt.display[v, 1], sampling)
    return img


def render(scene: Scene, pattern, rng_seed: int = 0, gts=None, sampling="bilinear", threads=1, frame=0) -> list:
    """Camera images of ``pattern`` reflected by the scene surface.

    Pass precomputed ``gts`` to skip tracing when only the pattern or the
    noise draw changes.  ``frame`` selects an independent noise stream.
    """
    gts = gts if gts is not None else ground_truth(scene, threads)
    images = []
    for ci, gt in enumerate(gts):
        img = shade(scene, gt, pattern, sampling)
        occ = scene.noise.occlusion_mask
        if occ is not None:
            img = np.where(occ, scene.background_level, img)
        stream = 1000 * frame + ci
        noisy = apply_noise(img, _without_occlusion(scene.noise), rng_seed, stream)
        images.append(noisy)
    return images


def _without_occlusion(noise):
    from dataclasses import replace

    return replace(noise, occlusion_mask=None)


def render_phase_sequence(
    scene: Scene,
    direction="vertical",
    period=160.0,
    shifts=(0.0, np.pi / 2, np.pi, 3 * np.pi / 2),
    seed: int = 0,
    gts=None,
    bias=0.5,
    amplitude=0.5,
    sampling="bilinear",
):
    """Phase-shifted sinusoid captures; returns ``frames[k][camera]``."""
    gts = gts if gts is not None else ground_truth(scene)
    frames = []
    for k, shift in enumerate(shifts):
        pat = Sinusoid(direction, period, shift, bias, amplitude)
        frames.append(render(scene, pat, seed, gts=gts, sampling=sampling, frame=k + 1))
    return frames
