"""Decode a single-shot crossed-fringe capture into correspondence maps.

The front end of the reconstruction: fringe geometry predicted from the
rig's nominal eye position, signal masking, wavelet phase retrieval,
limbus-aware unwrapping from absolute seeds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .eye import BACKGROUND, CORNEA, SCLERA
from .geometry import intersect_spheres_t, normalize, reflect
from .phase import (
    CorrespondenceMap,
    PhaseMap,
    WaveletParams,
    cwt_phase,
    erode,
    unwrap_pair,
)

log = logging.getLogger(__name__)

# radius of the sphere traced at the rig's nominal eye position
NOMINAL_RADIUS_MM = 12.0
LIMBUS_EXCLUDED = 3


class NoSignalError(RuntimeError):
    """The display reflection is nowhere in the image."""


class NoLimbusError(RuntimeError):
    """No closed high-gradient band separates the correspondence map."""


@dataclass(frozen=True)
class FringePrior:
    """Expected fringe geometry in one camera.

    ``branch_angles`` are the image angles along which the x- and y-phase
    grow; ``camera_period`` is the typical fringe period in camera pixels.
    """

    branch_angles: tuple
    camera_period: float


def fringe_prior(scene, cam_index: int, period: float, stride: int = 6) -> FringePrior:
    """Trace a nominal sphere at ``scene.nominal_eye_center`` on a coarse pixel grid."""
    cam = scene.cameras[cam_index]
    v, u = np.mgrid[0 : cam.height : stride, 0 : cam.width : stride].astype(float)
    dirs = cam.pixel_directions(u.ravel(), v.ravel())
    origins = np.broadcast_to(cam.center, dirs.shape)
    t = intersect_spheres_t(origins, dirs, scene.nominal_eye_center, NOMINAL_RADIUS_MM)
    hit = ~np.isnan(t)
    xd = np.full(t.shape, np.nan)
    yd = np.full(t.shape, np.nan)
    p = origins[hit] + t[hit, None] * dirs[hit]
    n = normalize(p - scene.nominal_eye_center)
    x, y = scene.display.intersect(p, reflect(dirs[hit], n))
    inside = scene.display.contains(x, y)
    xd[hit] = np.where(inside, x, np.nan)
    yd[hit] = np.where(inside, y, np.nan)
    xd = xd.reshape(u.shape)
    yd = yd.reshape(u.shape)
    angles = []
    rates = []
    for arr in (xd, yd):
        gv, gu = np.gradient(arr, stride)
        ok = np.isfinite(gu) & np.isfinite(gv)
        if ok.sum() < 4:
            raise RuntimeError("nominal eye does not reflect the display into this camera")
        angles.append(float(np.arctan2(np.median(gv[ok]), np.median(gu[ok]))))
        rates.append(float(np.median(np.hypot(gu[ok], gv[ok]))))
    return FringePrior(tuple(angles), float(period / np.sqrt(rates[0] * rates[1])))


def signal_mask(image, camera_period: float, background: float = 0.0, min_pixels: int = 500):
    """Pixels lit by the display reflection.

    The image is low-passed over about one fringe period, which leaves the
    local bias level; pixels above half the typical lit level count as
    signal.  Small isolated blobs are dropped.
    """
    img = np.nan_to_num(np.asarray(image, dtype=float) - background)
    smooth = ndimage.gaussian_filter(img, camera_period / 2)
    level = np.percentile(smooth, 99.5)
    if level <= 0:
        return np.zeros(img.shape, bool)
    mask = smooth > 0.5 * level
    lab, n = ndimage.label(mask)
    if n > 1:
        sizes = ndimage.sum(mask, lab, np.arange(1, n + 1))
        keep = np.zeros(n + 1, bool)
        keep[1:] = sizes >= min_pixels
        mask = keep[lab]
    return mask


@dataclass
class RegionMask:
    """Per-pixel label: BACKGROUND (invalid), CORNEA, SCLERA or LIMBUS_EXCLUDED."""

    labels: np.ndarray

    @property
    def cornea(self):
        return self.labels == CORNEA

    @property
    def sclera(self):
        return self.labels == SCLERA

    @property
    def excluded(self):
        return self.labels == LIMBUS_EXCLUDED

    @property
    def measurement(self):
        """The measurement area: cornea and sclera pixels."""
        return (self.labels == CORNEA) | (self.labels == SCLERA)

    @classmethod
    def single_region(cls, valid, label=SCLERA) -> "RegionMask":
        return cls(np.where(valid, label, BACKGROUND).astype(np.int8))


def correspondence_gradient(corr: CorrespondenceMap):
    """Largest display-coordinate step (px) from each valid pixel to a valid 4-neighbour."""
    valid = corr.valid
    g = np.zeros(valid.shape)
    for arr in (corr.xd, corr.yd):
        if arr is None:
            continue
        a = np.where(valid, arr, np.nan)
        for axis in (0, 1):
            d = np.abs(np.diff(a, axis=axis))
            d = np.nan_to_num(d, nan=0.0)
            pad_lo = [(0, 0), (0, 0)]
            pad_hi = [(0, 0), (0, 0)]
            pad_lo[axis] = (1, 0)
            pad_hi[axis] = (0, 1)
            g = np.maximum(g, np.maximum(np.pad(d, pad_lo), np.pad(d, pad_hi)) ** 2)
    return np.sqrt(g)


def segment_limbus(corr: CorrespondenceMap, k: float = 4.0, band: int = 2, min_fraction: float = 0.02) -> RegionMask:
    """Split a correspondence map at the limbus.

    Pixels whose correspondence gradient exceeds ``k`` times the median
    form the limbus band, which is dilated by ``band`` pixels into the
    excluded label.  The valid pixels left over fall into connected pieces;
    the cornea is the piece (or pieces) with the steeper correspondence,
    since its smaller radius compresses the reflected fringes.  Raises
    :class:`NoLimbusError` when fewer than two sizeable pieces remain.
    """
    valid = corr.valid
    if not valid.any():
        raise NoLimbusError("empty correspondence map")
    g = correspondence_gradient(corr)
    med = float(np.median(g[valid]))
    high = valid & (g > k * med)
    excluded = valid & ndimage.binary_dilation(high, iterations=band) if high.any() else np.zeros_like(valid)
    rest = valid & ~excluded
    lab, n = ndimage.label(rest)
    sizes = ndimage.sum(rest, lab, np.arange(1, n + 1)) if n else np.zeros(0)
    big = [i + 1 for i in range(n) if sizes[i] >= min_fraction * valid.sum()]
    if len(big) < 2:
        raise NoLimbusError("no closed high-gradient band found")
    meds = np.array([np.median(g[lab == i]) for i in big])
    split = np.sqrt(meds.max() * meds.min())
    labels = np.full(valid.shape, BACKGROUND, np.int8)
    labels[valid] = LIMBUS_EXCLUDED
    for i, m in zip(big, meds):
        labels[lab == i] = CORNEA if m > split else SCLERA
    if not (labels == CORNEA).any() or not (labels == SCLERA).any():
        raise NoLimbusError("pieces do not separate into cornea and sclera")
    return RegionMask(labels)


@dataclass
class View:
    """One camera's decoded capture."""

    camera_id: int
    corr: CorrespondenceMap
    regions: RegionMask
    phase_x: Optional[PhaseMap] = None
    phase_y: Optional[PhaseMap] = None


SeedFn = Callable[[int, int, int], tuple]


def _seed_pixel(component, confidence):
    """Most confident pixel of the component's interior (falls back to the whole component)."""
    inner = erode(component, 4)
    pool = inner if inner.any() else component
    idx = np.flatnonzero(pool.ravel())
    best = idx[np.argmax(confidence.ravel()[idx])]
    v, u = divmod(int(best), component.shape[1])
    return u, v


def unwrap_regions(phase_x, phase_y, valid, seed_fn: SeedFn, camera_id: int, period: float, min_pixels=200):
    """Unwrap every connected piece of ``valid`` from its own absolute seed."""
    lab, n = ndimage.label(valid)
    conf = np.minimum(phase_x.confidence, phase_y.confidence)
    xd = np.full(valid.shape, np.nan)
    yd = np.full(valid.shape, np.nan)
    done = np.zeros(valid.shape, bool)
    for i in range(1, n + 1):
        comp = lab == i
        if comp.sum() < min_pixels:
            continue
        u, v = _seed_pixel(comp, conf)
        seed = seed_fn(camera_id, u, v)
        if seed is None or not np.all(np.isfinite(seed)):
            log.info("camera %d: no absolute seed for a piece of %d px", camera_id, comp.sum())
            continue
        c = unwrap_pair(phase_x, phase_y, (u, v), seed, period, mask=comp, camera_id=camera_id)
        xd[c.valid] = c.xd[c.valid]
        yd[c.valid] = c.yd[c.valid]
        done |= c.valid
    return CorrespondenceMap(np.where(done, xd, np.nan), np.where(done, yd, np.nan), done, camera_id)


def decode_view(
    image,
    scene,
    cam_index: int,
    period: float,
    seed_fn: SeedFn,
    find_limbus: bool = True,
    edge_erosion: int = 3,
    limbus_k: float = 4.0,
    limbus_band: int = 2,
    params: Optional[WaveletParams] = None,
) -> View:
    """Crossed-fringe image -> correspondence map and region labels for one camera.

    ``seed_fn(camera_id, u, v)`` returns the absolute display coordinate
    at a seed pixel; in simulation it reads the ground truth.  Without a
    detectable limbus the whole map is labelled sclera (single-sphere mode).
    """
    prior = fringe_prior(scene, cam_index, period)
    mask = signal_mask(image, prior.camera_period, scene.background_level)
    if not mask.any():
        raise NoSignalError(f"camera {cam_index}: no reflected fringes in the image")
    params = params or WaveletParams.for_period(prior.camera_period)
    phx, phy = cwt_phase(image, params, mask, prior.branch_angles)
    valid = erode(phx.valid & phy.valid, edge_erosion)
    corr = unwrap_regions(phx, phy, valid, seed_fn, cam_index, period)
    if find_limbus:
        try:
            regions = segment_limbus(corr, limbus_k, limbus_band)
        except NoLimbusError:
            log.info("camera %d: no limbus found, single-sphere mode", cam_index)
            regions = RegionMask.single_region(corr.valid)
        else:
            # unwrap again inside each region so no path crosses the limbus
            corr = unwrap_regions(phx, phy, regions.measurement, seed_fn, cam_index, period)
            labels = np.where(corr.valid, regions.labels, np.where(regions.excluded, LIMBUS_EXCLUDED, BACKGROUND))
            regions = RegionMask(labels.astype(np.int8))
    else:
        regions = RegionMask.single_region(corr.valid)
    return View(cam_index, corr, regions, phx, phy)


def ground_truth_seed(gts) -> SeedFn:
    """Seed function reading the simulator's ground-truth display coordinates."""

    def seed(camera_id, u, v):
        g = gts[camera_id]
        if not g.valid[v, u]:
            return None
        return float(g.display[v, u, 0]), float(g.display[v, u, 1])

    return seed


def ground_truth_view(gt, camera_id: int, erosion: int = 0) -> View:
    """Oracle view: exact correspondences and region labels from the simulator."""
    valid = erode(gt.valid, erosion)
    corr = CorrespondenceMap(
        np.where(valid, gt.display[..., 0], np.nan), np.where(valid, gt.display[..., 1], np.nan), valid, camera_id
    )
    labels = np.where(valid, gt.region, BACKGROUND).astype(np.int8)
    return View(camera_id, corr, RegionMask(labels))
