"""Fringe phase retrieval and unwrapping.

Two routes to the wrapped phase: temporal four-step phase shifting
(multi-shot, used as the reference) and a ridge search over a 2D Morlet
wavelet transform of a single crossed-fringe image.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

CONFIDENCE_THRESHOLD = 0.05
# Gaussian window of the demodulation refinement, in units of the ridge scale
REFINE_SIGMA = 0.35
# pixels whose intensity the local fringe model misses by more than this carry no fringe
RESIDUAL_MAX = 0.02


def wrap(phase):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(phase) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass
class PhaseMap:
    """Wrapped phase of one fringe axis with per-pixel confidence."""

    phase: np.ndarray
    confidence: np.ndarray
    valid: np.ndarray
    axis: str = "x"
    scale: Optional[np.ndarray] = None
    orientation: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.phase.shape


@dataclass
class CorrespondenceMap:
    """Display coordinates (pixels) observed by each camera pixel."""

    xd: Optional[np.ndarray]
    yd: Optional[np.ndarray]
    valid: np.ndarray
    camera_id: int = 0

    @property
    def shape(self):
        return self.valid.shape

    @classmethod
    def combine(cls, x_map: "CorrespondenceMap", y_map: "CorrespondenceMap") -> "CorrespondenceMap":
        valid = x_map.valid & y_map.valid
        xd = np.where(valid, x_map.xd, np.nan)
        yd = np.where(valid, y_map.yd, np.nan)
        return cls(xd, yd, valid, x_map.camera_id)

    def sample(self, u, v):
        """Bilinear lookup at fractional pixels; NaN unless all four taps are valid."""
        h, w = self.valid.shape
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
        uu = np.where(inside, u, 0.0)
        vv = np.where(inside, v, 0.0)
        u0 = np.minimum(np.floor(uu).astype(int), w - 2)
        v0 = np.minimum(np.floor(vv).astype(int), h - 2)
        fu = uu - u0
        fv = vv - v0
        ok = inside & self.valid[v0, u0] & self.valid[v0, u0 + 1] & self.valid[v0 + 1, u0] & self.valid[v0 + 1, u0 + 1]
        out = []
        for arr in (self.xd, self.yd):
            a = np.where(self.valid, arr, 0.0)
            val = (1 - fv) * ((1 - fu) * a[v0, u0] + fu * a[v0, u0 + 1]) + fv * (
                (1 - fu) * a[v0 + 1, u0] + fu * a[v0 + 1, u0 + 1]
            )
            out.append(np.where(ok, val, np.nan))
        return out[0], out[1]


def four_step_phase(images: Sequence[np.ndarray], threshold=CONFIDENCE_THRESHOLD, printed_form=False, axis="x"):
    """Wrapped phase from captures at shifts 0, pi/2, pi, 3pi/2.

    With ``I_k = A + B cos(phi + shift_k)`` the quadrant-correct estimate is
    ``atan2(I4 - I2, I1 - I3)``.  ``printed_form=True`` instead returns the
    two-quadrant ``arctan((I4 - I2) / (I3 - I1))``, which equals ``-phi``
    modulo pi; it exists for cross-checking only.
    """
    if len(images) != 4:
        raise ValueError("four_step_phase needs exactly four images")
    i1, i2, i3, i4 = (np.asarray(im, dtype=float) for im in images)
    if not (i1.shape == i2.shape == i3.shape == i4.shape):
        raise ValueError("image size mismatch")
    s = i4 - i2
    c = i1 - i3
    if printed_form:
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.arctan(s / (i3 - i1))
    else:
        phi = np.arctan2(s, c)
    phi = wrap(phi)
    conf = 0.5 * np.hypot(s, c)
    conf = np.nan_to_num(conf)
    valid = conf >= threshold
    conf = np.where(valid, conf, 0.0)
    return PhaseMap(np.where(valid, phi, np.nan), conf, valid, axis)


@dataclass(frozen=True)
class WaveletParams:
    """Morlet ridge-search grid.

    Scales are a geometric sequence ``[scale_min, scale_max]`` in pixels;
    orientations cover [-pi/2, pi/2) uniformly.  The kernel envelope is
    treated as truncated at ``truncation * s``, which also sets the
    invalid border width.
    """

    f0: float = 1.0
    fb: float = 2.0
    scale_min: float = 20.0 / 3
    scale_max: float = 60.0
    scale_count: int = 16
    orientation_count: int = 16
    truncation: float = 3.0

    def __post_init__(self):
        if self.scale_count < 8 or self.orientation_count < 8:
            raise ValueError("need at least 8 scales and 8 orientations")
        if self.truncation < 3:
            raise ValueError("truncation radius must be >= 3")
        if not 0 < self.scale_min < self.scale_max:
            raise ValueError("invalid scale range")

    @classmethod
    def for_period(cls, period: float, **kw) -> "WaveletParams":
        f0 = kw.get("f0", 1.0)
        return cls(scale_min=period * f0 / 3, scale_max=period * f0 * 3, **kw)

    @property
    def scales(self):
        return np.geomspace(self.scale_min, self.scale_max, self.scale_count)

    @property
    def orientations(self):
        n = self.orientation_count
        return -np.pi / 2 + np.pi * np.arange(n) / n

    @property
    def orientation_step(self):
        return np.pi / self.orientation_count


def morlet_kernel(s, theta, params: WaveletParams, radius=None):
    """Spatial Morlet kernel sampled on a square grid (used by tests and plots)."""
    r = int(np.ceil((radius or params.truncation) * s))
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(float)
    xr = x * np.cos(theta) + y * np.sin(theta)
    yr = -x * np.sin(theta) + y * np.cos(theta)
    return (1 / (s * np.sqrt(np.pi * params.fb))) * np.exp(
        2j * np.pi * params.f0 * xr / s - (xr**2 + yr**2) / (params.fb * s * s)
    )


def _freq_response(shape, s, theta, params: WaveletParams):
    """DFT of the flipped kernel ``psi(-x)`` so that a product with FFT(I)
    gives the correlation sum_x I(x) psi(x - u)."""
    ky = sfft.fftfreq(shape[0])[:, None]
    kx = sfft.fftfreq(shape[1])[None, :]
    kappa = params.f0 / s
    cx, cy = kappa * np.cos(theta), kappa * np.sin(theta)
    amp = s * np.sqrt(np.pi * params.fb)
    return amp * np.exp(-np.pi**2 * params.fb * s * s * ((kx + cx) ** 2 + (ky + cy) ** 2))


@dataclass
class RidgeResult:
    response: np.ndarray  # complex value at the ridge
    scale: np.ndarray
    orientation: np.ndarray


def cwt_ridge(image, params: WaveletParams, orientations, mask=None) -> RidgeResult:
    """Per-pixel argmax of |W(theta, s)| over the given orientation set.

    With ``mask``, the fringe signal is taken as zero outside the mask and
    the masked local mean is removed first, so the bright/dark edge of the
    reflection does not leak into the carrier band.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    pad = int(np.ceil(params.truncation * params.scale_max))
    shape = (sfft.next_fast_len(h + 2 * pad), sfft.next_fast_len(w + 2 * pad))
    buf = np.zeros(shape)
    if mask is not None:
        m = mask.astype(float)
        buf[pad : pad + h, pad : pad + w] = np.where(mask, img, 0.0)
        mbuf = np.zeros(shape)
        mbuf[pad : pad + h, pad : pad + w] = m
        f_img = sfft.fft2(buf)
        f_m = sfft.fft2(mbuf)
    else:
        buf[pad : pad + h, pad : pad + w] = img
        f_img = sfft.fft2(buf)
    best = np.zeros((h, w), dtype=complex)
    best_mod = np.full((h, w), -1.0)
    best_s = np.zeros((h, w))
    best_t = np.zeros((h, w))
    crop = (slice(pad, pad + h), slice(pad, pad + w))
    for s in params.scales:
        if mask is not None:
            # Gaussian-weighted local mean of the masked signal at this scale
            g = np.exp(-np.pi**2 * params.fb * s * s * (sfft.fftfreq(shape[0])[:, None] ** 2 + sfft.fftfreq(shape[1])[None, :] ** 2))
            num = sfft.ifft2(f_img * g).real
            den = sfft.ifft2(f_m * g).real
            mean = np.where(den > 1e-3, num / np.maximum(den, 1e-3), 0.0)
            f_sig = sfft.fft2((buf - mean) * mbuf)
        else:
            f_sig = f_img
        for th in orientations:
            resp = sfft.ifft2(f_sig * _freq_response(shape, s, th, params))[crop]
            mod = np.abs(resp)
            better = mod > best_mod
            best = np.where(better, resp, best)
            best_mod = np.where(better, mod, best_mod)
            best_s = np.where(better, s, best_s)
            best_t = np.where(better, th, best_t)
    return RidgeResult(best, best_s, best_t)


def refine_phase(image, phase_x, phase_y, mask, sigma, iterations=6, return_residual=False):
    """Remove the chirp bias of the ridge phases by joint local demodulation.

    Around every pixel the image is fitted, by Gaussian-weighted least
    squares over the mask, with ``A + a cos(phi_x) + b sin(phi_x) + c
    cos(phi_y) + d sin(phi_y)`` using the current phase estimates; the
    fitted quadrature pair gives a phase correction for each carrier.
    Fitting the bias and both carriers together keeps the bias and the
    other carrier from leaking into the correction.  With
    ``return_residual`` the per-pixel misfit of the last local model is
    returned as well; it is large on pixels that carry no fringe.
    """
    img = np.where(mask, np.asarray(image, dtype=float), 0.0)
    px = np.where(mask, phase_x, 0.0)
    py = np.where(mask, phase_y, 0.0)
    eye5 = np.eye(5)
    resid = np.zeros(img.shape)
    for _ in range(iterations):
        basis = [mask.astype(float), np.cos(px), np.sin(px), np.cos(py), np.sin(py)]
        basis = [np.where(mask, b, 0.0) for b in basis]
        gram = np.empty(img.shape + (5, 5))
        rhs = np.empty(img.shape + (5,))
        for i in range(5):
            rhs[..., i] = ndimage.gaussian_filter(basis[i] * img, sigma, mode="constant")
            for j in range(i, 5):
                gram[..., i, j] = gram[..., j, i] = ndimage.gaussian_filter(basis[i] * basis[j], sigma, mode="constant")
        gram[~mask] = eye5
        rhs[~mask] = 0.0
        # a cos(phi_hat) + b sin(phi_hat) = B cos(phi_hat + delta) with delta = atan2(-b, a)
        coef = np.linalg.solve(gram, rhs[..., None])[..., 0]
        resid = np.abs(img - sum(c * b for c, b in zip(np.moveaxis(coef, -1, 0), basis)))
        px = wrap(px + np.arctan2(-coef[..., 2], coef[..., 1]))
        py = wrap(py + np.arctan2(-coef[..., 4], coef[..., 3]))
    px, py = np.where(mask, px, np.nan), np.where(mask, py, np.nan)
    if return_residual:
        return px, py, np.where(mask, resid, np.inf)
    return px, py


def _branch_orientations(params: WaveletParams, center):
    offs = params.orientations
    offs = offs[(offs >= -np.pi / 4 - 1e-12) & (offs < np.pi / 4 - 1e-12)]
    return center + offs


def cwt_phase(
    image,
    params: WaveletParams,
    mask=None,
    branch_angles=(0.0, np.pi / 2),
    threshold=CONFIDENCE_THRESHOLD,
    roi_margin=None,
    refine: int = 6,
    residual_max: float = RESIDUAL_MAX,
):
    """Single-shot wrapped phases of a crossed fringe image.

    Each axis searches the orientation sub-grid within +/-45 degrees of its
    branch angle (the image direction in which that axis' phase grows);
    the phase is minus the argument of the winning response, so a fringe
    ``cos(phi)`` whose phase gradient lies inside the branch returns
    ``phi``.  Returns ``(PhaseMap_x, PhaseMap_y)``.

    ``mask`` marks pixels carrying fringe signal; only its bounding box
    (plus the kernel support) is transformed.  ``refine`` demodulation
    passes (see :func:`refine_phase`) remove the ridge phase's chirp bias;
    ``refine=0`` returns the bare ridge phase.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    border = int(np.ceil(params.truncation * params.scale_max))
    if mask is not None:
        rows = np.any(mask, axis=1)
        cols = np.any(mask, axis=0)
        if not rows.any():
            empty = np.zeros((h, w))
            return tuple(
                PhaseMap(np.full((h, w), np.nan), empty, np.zeros((h, w), bool), ax) for ax in ("x", "y")
            )
        m = int(roi_margin if roi_margin is not None else 2)
        r0, r1 = max(0, np.argmax(rows) - m), min(h, h - np.argmax(rows[::-1]) + m)
        c0, c1 = max(0, np.argmax(cols) - m), min(w, w - np.argmax(cols[::-1]) + m)
    else:
        r0, r1, c0, c1 = 0, h, 0, w
    sub = img[r0:r1, c0:c1]
    submask = mask[r0:r1, c0:c1] if mask is not None else None
    in_border = np.ones((h, w), bool)
    in_border[border : h - border, border : w - border] = False
    rmask = submask if submask is not None else np.ones(sub.shape, bool)
    ridges = [cwt_ridge(sub, params, _branch_orientations(params, c), submask) for c in branch_angles]
    phases = [wrap(-np.angle(r.response)) for r in ridges]
    fit_ok = np.ones(sub.shape, bool)
    if refine:
        sigma = REFINE_SIGMA * float(np.median(np.concatenate([r.scale[rmask] for r in ridges])))
        px, py, resid = refine_phase(sub, phases[0], phases[1], rmask, sigma, refine, return_residual=True)
        phases = [px, py]
        # adapt to the image noise: typical misfit over the mask sets the scale
        fit_ok = resid <= max(residual_max, 4.0 * float(np.median(resid[rmask])))
    out = []
    for ax, ridge, sub_phase in zip(("x", "y"), ridges, phases):
        phase = np.full((h, w), np.nan)
        conf = np.zeros((h, w))
        scale = np.zeros((h, w))
        orient = np.zeros((h, w))
        phase[r0:r1, c0:c1] = np.where(fit_ok, sub_phase, np.nan)
        conf[r0:r1, c0:c1] = np.abs(ridge.response)
        scale[r0:r1, c0:c1] = ridge.scale
        orient[r0:r1, c0:c1] = ridge.orientation
        valid = (conf >= threshold) & ~in_border & np.isfinite(phase)
        if mask is not None:
            valid &= mask
        conf = np.where(valid, conf, 0.0)
        phase = np.where(valid, phase, np.nan)
        out.append(PhaseMap(phase, conf, valid, ax, scale, orient))
    return tuple(out)


def flood_order(valid, confidence, seed_pixel):
    """Confidence-ordered flood fill from ``seed_pixel = (u, v)``.

    Pixels are taken from a max-heap keyed on confidence; each popped pixel
    is attached to the already-visited neighbour that first reached it.
    Returns flat indices ``(order, parent)`` in visiting order (the seed
    first, with parent -1).  Only the seed's 4-connected component is
    visited.
    """
    h, w = valid.shape
    u0, v0 = int(round(seed_pixel[0])), int(round(seed_pixel[1]))
    if not (0 <= v0 < h and 0 <= u0 < w) or not valid[v0, u0]:
        raise ValueError(f"invalid unwrap seed {tuple(seed_pixel)}")
    ok = valid.ravel().tolist()
    neg_conf = (-np.asarray(confidence, dtype=float)).ravel().tolist()
    done = [False] * (h * w)
    seed = v0 * w + u0
    done[seed] = True
    order = [seed]
    parent = [-1]
    heap = []
    push = heapq.heappush
    pop = heapq.heappop
    counter = 0

    def expand(p):
        nonlocal counter
        r, c = divmod(p, w)
        for q, inside in ((p - w, r > 0), (p + w, r < h - 1), (p - 1, c > 0), (p + 1, c < w - 1)):
            if inside and ok[q] and not done[q]:
                counter += 1
                push(heap, (neg_conf[q], counter, q, p))

    expand(seed)
    while heap:
        _, _, q, p = pop(heap)
        if done[q]:
            continue
        done[q] = True
        order.append(q)
        parent.append(p)
        expand(q)
    return np.asarray(order), np.asarray(parent)


def unwrap_along(wrapped, order, parent, seed_value):
    """Unwrap a wrapped map along a flood order: each pixel takes its
    parent's value plus the wrapped difference."""
    flat = np.asarray(wrapped, dtype=float).ravel()
    diff = np.zeros(len(order))
    diff[1:] = wrap(flat[order[1:]] - flat[parent[1:]])
    out = np.full(flat.shape, np.nan)
    k = np.round((seed_value - flat[order[0]]) / (2 * np.pi))
    vals = {order[0]: flat[order[0]] + 2 * np.pi * k}
    o = order.tolist()
    pa = parent.tolist()
    d = diff.tolist()
    for i in range(1, len(o)):
        vals[o[i]] = vals[pa[i]] + d[i]
    out[order] = [vals[i] for i in o]
    return out.reshape(np.shape(wrapped))


def unwrap(
    phase: PhaseMap,
    seed_pixel,
    seed_value: float,
    fringe_period: float,
    mask=None,
    camera_id: int = 0,
) -> CorrespondenceMap:
    """Confidence-ordered flood-fill unwrapping from one absolute seed.

    Pixels are processed in decreasing confidence; each is unwrapped
    against the already-unwrapped neighbour that reached it.  Only the
    connected component of ``seed_pixel = (u, v)`` is returned valid.  The
    coordinate is ``unwrapped_phase * fringe_period / (2 pi)`` along
    ``phase.axis``.
    """
    valid = phase.valid if mask is None else phase.valid & mask
    order, parent = flood_order(valid, phase.confidence, seed_pixel)
    coord = unwrap_along(phase.phase, order, parent, seed_value) * fringe_period / (2 * np.pi)
    done = np.zeros(valid.size, bool)
    done[order] = True
    done = done.reshape(valid.shape)
    if phase.axis == "x":
        return CorrespondenceMap(coord, None, done, camera_id)
    return CorrespondenceMap(None, coord, done, camera_id)


def unwrap_pair(phase_x: PhaseMap, phase_y: PhaseMap, seed_pixel, seed_xy, fringe_period, mask=None, camera_id=0):
    """Unwrap both axes along one shared flood order (confidence = the
    smaller of the two moduli).  ``seed_xy`` holds the absolute display
    coordinates (px) at the seed."""
    valid = phase_x.valid & phase_y.valid
    if mask is not None:
        valid = valid & mask
    conf = np.minimum(phase_x.confidence, phase_y.confidence)
    order, parent = flood_order(valid, conf, seed_pixel)
    to_phase = 2 * np.pi / fringe_period
    xd = unwrap_along(phase_x.phase, order, parent, seed_xy[0] * to_phase) / to_phase
    yd = unwrap_along(phase_y.phase, order, parent, seed_xy[1] * to_phase) / to_phase
    done = np.zeros(valid.size, bool)
    done[order] = True
    return CorrespondenceMap(xd, yd, done.reshape(valid.shape), camera_id)


def axis_map(corr: CorrespondenceMap):
    return corr.xd if corr.xd is not None else corr.yd


def erode(mask, pixels: int):
    if pixels <= 0:
        return mask.copy()
    return ndimage.binary_erosion(mask, iterations=int(pixels))
