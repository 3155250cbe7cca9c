"""Surface reconstruction from stereo deflectometry correspondences.

Stereo anchor points fix absolute depth, back-traced normals give initial
spheres, the two-sphere model is fitted by minimising the mean angle
between measured and model normals, and a zonal slope integration refines
the surface per camera.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from .eye import BACKGROUND, CORNEA, SCLERA, TwoSphereEye
from .fringes import RegionMask, View
from .geometry import Line3, Sphere, best_fit_point, intersect_spheres_t, lines_to_arrays, normalize

log = logging.getLogger(__name__)


class EmptyOverlapError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------- samples


@dataclass(frozen=True)
class SurfaceSample:
    camera_id: int
    pixel: tuple
    point: np.ndarray
    n: np.ndarray
    n_s: Optional[np.ndarray] = None
    n_r: Optional[np.ndarray] = None
    region: int = SCLERA


@dataclass
class SampleSet:
    """Column store of surface samples; ``n_s``/``n_r`` may be None."""

    camera_id: np.ndarray
    u: np.ndarray
    v: np.ndarray
    point: np.ndarray
    n: np.ndarray
    region: np.ndarray
    n_s: Optional[np.ndarray] = None
    n_r: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.camera_id)

    def __getitem__(self, i) -> SurfaceSample:
        return SurfaceSample(
            int(self.camera_id[i]),
            (int(self.u[i]), int(self.v[i])),
            self.point[i],
            self.n[i],
            None if self.n_s is None else self.n_s[i],
            None if self.n_r is None else self.n_r[i],
            int(self.region[i]),
        )

    def subset(self, idx) -> "SampleSet":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return SampleSet(
            self.camera_id[idx], self.u[idx], self.v[idx], self.point[idx], self.n[idx], self.region[idx],
            pick(self.n_s), pick(self.n_r),
        )

    def of_region(self, region) -> "SampleSet":
        return self.subset(np.flatnonzero(self.region == region))

    @classmethod
    def concatenate(cls, sets: Sequence["SampleSet"]) -> "SampleSet":
        def cat(name):
            parts = [getattr(s, name) for s in sets]
            if any(p is None for p in parts):
                return None
            return np.concatenate(parts)

        return cls(*(cat(k) for k in ("camera_id", "u", "v", "point", "n", "region", "n_s", "n_r")))

    def back_traced(self, refined=True):
        """Lines (point, -normal) pointing into the eye."""
        nrm = self.n_r if refined and self.n_r is not None else self.n
        return self.point, -nrm


# ---------------------------------------------------------------- ray data


def deflectometry_normal(points, camera_center, display_points):
    """Unit normal that reflects the camera ray at ``points`` toward ``display_points``."""
    d_in = normalize(points - camera_center)
    d_out = normalize(display_points - points)
    return normalize(d_out - d_in)


@dataclass
class RayData:
    """Flattened per-pixel measurements of one or more views."""

    camera_id: np.ndarray
    u: np.ndarray
    v: np.ndarray
    origin: np.ndarray
    direction: np.ndarray
    target: np.ndarray  # display point in world, mm
    region: np.ndarray

    def __len__(self):
        return len(self.camera_id)

    def subset(self, idx) -> "RayData":
        return RayData(*(getattr(self, k)[idx] for k in ("camera_id", "u", "v", "origin", "direction", "target", "region")))


def ray_data(views: Sequence[View], scene, use_regions=True) -> RayData:
    parts = []
    for view in views:
        cam = scene.cameras[view.camera_id]
        sel = view.regions.measurement & view.corr.valid if use_regions else view.corr.valid
        v, u = np.nonzero(sel)
        dirs = cam.pixel_directions(u.astype(float), v.astype(float))
        tgt = scene.display.to_world(view.corr.xd[v, u], view.corr.yd[v, u])
        parts.append(
            (np.full(len(u), view.camera_id), u, v, np.broadcast_to(cam.center, dirs.shape), dirs, tgt, view.regions.labels[v, u])
        )
    return RayData(*(np.concatenate(p) for p in zip(*parts)))


def _spheres_for(model):
    if isinstance(model, Sphere):
        return {CORNEA: model, SCLERA: model}
    return {CORNEA: model.cornea, SCLERA: model.sclera}


def _centers_radii(model, region):
    sph = _spheres_for(model)
    cornea = (region == CORNEA)[:, None]
    centers = np.where(cornea, sph[CORNEA].center, sph[SCLERA].center)
    radii = np.where(region == CORNEA, sph[CORNEA].radius, sph[SCLERA].radius)
    return centers, radii


def model_depths(model, data: RayData, extend=True):
    """Distance along each ray to its labelled sphere.

    A ray that misses gets the closest-approach distance when ``extend``
    is set, which keeps the loss continuous while the model moves.
    """
    centers, radii = _centers_radii(model, data.region)
    oc = data.origin - centers
    b = np.einsum("ij,ij->i", oc, data.direction)
    c = np.einsum("ij,ij->i", oc, oc) - radii**2
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    t = -b - root
    t = np.where(t > 1e-9, t, -b + root)
    if extend:
        return np.where(disc >= 0, t, -b)
    return np.where(disc >= 0, t, np.nan)


# ---------------------------------------------------------------- anchors


def _display_points(corr, display, u, v):
    xd, yd = corr.sample(u, v)
    return display.to_world(xd, yd), np.isfinite(xd)


def _mismatch(t, u1, v1, corr1, corr2, scene, c1, c2, d1, target1):
    """Display-coordinate mismatch (px) of camera 2 for depths ``t`` (N, T)."""
    p = c1 + t[..., None] * d1[:, None, :]
    n = normalize(normalize(target1[:, None, :] - p) - d1[:, None, :])
    d2 = normalize(p - c2)
    refl = d2 - 2 * np.sum(d2 * n, axis=-1, keepdims=True) * n
    xp, yp = scene.display.intersect(p, refl)
    uv = scene.cameras[corr2.camera_id].project_many(p.reshape(-1, 3))
    x2, y2 = corr2.sample(uv[:, 0], uv[:, 1])
    x2 = x2.reshape(t.shape)
    y2 = y2.reshape(t.shape)
    m = np.hypot(xp - x2, yp - y2)
    return np.where(np.isfinite(m), m, np.inf)


def depth_mismatch_curve(u, v, corr1, corr2, scene, depths):
    """Mismatch against camera 2 over candidate depths for one camera-1 pixel."""
    cam1 = scene.cameras[corr1.camera_id]
    d1 = cam1.pixel_directions(np.array([float(u)]), np.array([float(v)]))
    tgt, ok = _display_points(corr1, scene.display, np.array([float(u)]), np.array([float(v)]))
    if not ok[0]:
        raise ValueError("pixel has no camera-1 correspondence")
    t = np.asarray(depths, dtype=float)[None, :]
    return _mismatch(t, u, v, corr1, corr2, scene, cam1.center, scene.cameras[corr2.camera_id].center, d1, tgt)[0]


def _nominal_depth(scene, cam, d):
    c = scene.nominal_eye_center
    from .fringes import NOMINAL_RADIUS_MM

    t = intersect_spheres_t(np.broadcast_to(cam.center, d.shape), d, c, NOMINAL_RADIUS_MM)
    closest = (c - cam.center) @ d.T
    return np.where(np.isnan(t), closest, t)


def anchor_overlap(view1: View, view2: View, scene):
    """Camera-1 pixels whose nominal reprojection into camera 2 lands on valid correspondences."""
    cam1 = scene.cameras[view1.camera_id]
    cam2 = scene.cameras[view2.camera_id]
    sel = view1.regions.measurement & view1.corr.valid
    v, u = np.nonzero(sel)
    if len(u) == 0:
        return np.zeros(sel.shape, bool)
    d = cam1.pixel_directions(u.astype(float), v.astype(float))
    t = _nominal_depth(scene, cam1, d)
    uv = cam2.project_many(cam1.center + t[:, None] * d)
    ok = np.isfinite(uv[:, 0])
    uu = np.where(ok, np.round(uv[:, 0]), 0).astype(int)
    vv = np.where(ok, np.round(uv[:, 1]), 0).astype(int)
    ok &= (uu >= 0) & (uu < cam2.width) & (vv >= 0) & (vv < cam2.height)
    ok[ok] = view2.regions.measurement[vv[ok], uu[ok]] & view2.corr.valid[vv[ok], uu[ok]]
    out = np.zeros(sel.shape, bool)
    out[v[ok], u[ok]] = True
    return out


@dataclass
class AnchorReport:
    requested: int
    accepted: int
    dropped_ambiguous: int
    dropped_mismatch: int


def stereo_anchors(
    view1: View,
    view2: View,
    scene,
    count: int = 500,
    rng_seed: int = 0,
    search_mm: float = 8.0,
    coarse_step: float = 0.05,
    tol: float = 1e-4,
    max_mismatch: float = 2.0,
    return_report=False,
):
    """Resolve depth and normal at ``count`` pixels by stereo consistency.

    For each sampled camera-1 pixel the depth ``t`` along its ray is
    scanned: the camera-1 correspondence fixes the normal ``n(t)``, the
    camera-2 ray to the same point is reflected off ``n(t)`` and its
    display hit is compared with camera 2's correspondence.  The best
    coarse depth is polished by golden-section search to ``tol`` mm.
    Pixels with a competing local minimum or a large residual mismatch
    are dropped.
    """
    cam1 = scene.cameras[view1.camera_id]
    cam2 = scene.cameras[view2.camera_id]
    overlap = anchor_overlap(view1, view2, scene)
    pool = np.flatnonzero(overlap.ravel())
    if len(pool) == 0:
        raise EmptyOverlapError("no pixels seen by both cameras")
    rng = np.random.default_rng(rng_seed)
    pick = np.sort(rng.choice(pool, size=min(count, len(pool)), replace=False))
    v, u = np.divmod(pick, overlap.shape[1])
    d1 = cam1.pixel_directions(u.astype(float), v.astype(float))
    tgt, _ = _display_points(view1.corr, scene.display, u.astype(float), v.astype(float))
    t0 = _nominal_depth(scene, cam1, d1)
    offsets = np.arange(-search_mm, search_mm + 1e-9, coarse_step)
    grid = t0[:, None] + offsets[None, :]

    def f(t):
        return _mismatch(t, u, v, view1.corr, view2.corr, scene, cam1.center, cam2.center, d1, tgt)

    curve = f(grid)
    best = np.argmin(curve, axis=1)
    best_val = curve[np.arange(len(u)), best]
    # competing local minima further than 0.5 mm from the best one
    interior = (curve[:, 1:-1] <= curve[:, :-2]) & (curve[:, 1:-1] <= curve[:, 2:]) & np.isfinite(curve[:, 1:-1])
    far = np.abs(offsets[1:-1][None, :] - offsets[best][:, None]) > 0.5
    rival = np.where(interior & far, curve[:, 1:-1], np.inf).min(axis=1)
    ambiguous = rival < np.maximum(2 * best_val, best_val + 1.0)
    # golden section inside [best - step, best + step]
    lo = grid[np.arange(len(u)), best] - coarse_step
    hi = lo + 2 * coarse_step
    g = (np.sqrt(5) - 1) / 2
    a = hi - g * (hi - lo)
    b = lo + g * (hi - lo)
    fa = f(a[:, None])[:, 0]
    fb = f(b[:, None])[:, 0]
    while np.max(hi - lo) > tol:
        left = fa < fb
        hi = np.where(left, b, hi)
        lo = np.where(left, lo, a)
        a = hi - g * (hi - lo)
        b = lo + g * (hi - lo)
        fa = f(a[:, None])[:, 0]
        fb = f(b[:, None])[:, 0]
    t = 0.5 * (lo + hi)
    final = f(t[:, None])[:, 0]
    bad_fit = ~(final <= max_mismatch)
    keep = ~ambiguous & ~bad_fit
    if (~keep).any():
        log.info("anchors: dropped %d ambiguous, %d high-mismatch", int(ambiguous.sum()), int((bad_fit & ~ambiguous).sum()))
    u, v, t, d1, tgt = u[keep], v[keep], t[keep], d1[keep], tgt[keep]
    p = cam1.center + t[:, None] * d1
    n = deflectometry_normal(p, cam1.center, tgt)
    samples = SampleSet(
        np.full(len(u), view1.camera_id), u, v, p, n, view1.regions.labels[v, u].astype(int)
    )
    if return_report:
        return samples, AnchorReport(len(pick), int(keep.sum()), int(ambiguous.sum()), int((bad_fit & ~ambiguous).sum()))
    return samples


# ---------------------------------------------------------------- spheres


@dataclass
class SphereFit:
    sphere: Sphere
    rms_distance: float  # rms distance of back-traced normals to the centre
    scatter: float  # std of those distances
    count: int


def fit_sphere_from_normals(points, normals, trim: Optional[float] = None, rounds: int = 3) -> SphereFit:
    """Centre = best-fit intersection of the back-traced normals, radius = mean distance.

    With ``trim`` set, lines farther than ``trim`` times the median
    distance from the centre are dropped and the fit repeated (``rounds``
    times at most); the default fits all samples once.
    """
    points = np.asarray(points, dtype=float)
    normals = normalize(np.asarray(normals, dtype=float))
    if len(points) < 10:
        raise ValueError("need at least 10 samples to fit a sphere")
    keep = np.ones(len(points), bool)
    for _ in range(rounds if trim else 1):
        center, rms = best_fit_point((points[keep], -normals[keep]))
        dist = np.linalg.norm(np.cross(center - points, normals), axis=1)
        if not trim:
            break
        new_keep = dist <= trim * max(np.median(dist[keep]), 1e-12)
        if new_keep.sum() < 10 or np.array_equal(new_keep, keep):
            break
        keep = new_keep
    p = points[keep]
    radius = float(np.mean(np.linalg.norm(p - center, axis=1)))
    d = dist[keep]
    return SphereFit(Sphere(center, radius), float(np.sqrt(np.mean(d**2))), float(np.std(d)), int(keep.sum()))


def piece_radius(points, normals, min_sep: float = 0.3, max_pairs: int = 4000, rng_seed: int = 0) -> float:
    """Median of ``|p_i - p_j| / |n_i - n_j|`` over sample pairs.

    On a sphere every pair gives the radius exactly, so this needs no
    centre fit and stays usable on small patches.
    """
    p = np.asarray(points, dtype=float)
    n = normalize(np.asarray(normals, dtype=float))
    if len(p) < 2:
        return float("nan")
    rng = np.random.default_rng(rng_seed)
    i = rng.integers(0, len(p), max_pairs)
    j = rng.integers(0, len(p), max_pairs)
    dp = np.linalg.norm(p[i] - p[j], axis=1)
    dn = np.linalg.norm(n[i] - n[j], axis=1)
    ok = (dp > min_sep) & (dn > 1e-9)
    if ok.sum() < 5:
        return float("nan")
    return float(np.median(dp[ok] / dn[ok]))


# anatomical midpoint between corneal (~7.8 mm) and scleral (~12 mm) radii
CORNEA_SCLERA_SPLIT_MM = 10.0


def anchors_both_ways(views: Sequence[View], scene, count: int = 500, rng_seed: int = 0) -> SampleSet:
    """Stereo anchors sampled in each camera of a pair (half the budget each)."""
    a = stereo_anchors(views[0], views[1], scene, count - count // 2, rng_seed)
    try:
        b = stereo_anchors(views[1], views[0], scene, count // 2, rng_seed + 1)
    except EmptyOverlapError:
        return a
    return SampleSet.concatenate([a, b])


def classify_pieces(views: Sequence[View], anchors: SampleSet, min_anchors: int = 6, ratio: float = 1.2):
    """Relabel each measurement piece as cornea or sclera by its anchor radius.

    Pieces are the connected components of each view's measurement area.
    A piece holding at least ``min_anchors`` anchors gets a radius from
    :func:`piece_radius`; when the radii spread by more than ``ratio`` they
    are split at their geometric mean, otherwise compared with
    :data:`CORNEA_SCLERA_SPLIT_MM`.  Pieces without enough anchors keep
    their label.  Returns new views and the relabelled anchors.
    """
    pieces = []  # (view index, piece mask, radius)
    for vi, view in enumerate(views):
        lab, n = ndimage.label(view.regions.measurement)
        mine = anchors.camera_id == view.camera_id
        a_lab = np.zeros(len(anchors), int)
        a_lab[mine] = lab[anchors.v[mine], anchors.u[mine]]
        for k in range(1, n + 1):
            sel = a_lab == k
            r = piece_radius(anchors.point[sel], anchors.n[sel]) if sel.sum() >= min_anchors else float("nan")
            pieces.append((vi, lab == k, r))
    radii = np.array([r for *_, r in pieces if np.isfinite(r)])
    if len(radii) == 0:
        return list(views), anchors
    split = np.sqrt(radii.max() * radii.min()) if radii.max() > ratio * radii.min() else CORNEA_SCLERA_SPLIT_MM
    labels = [v.regions.labels.copy() for v in views]
    for vi, mask, r in pieces:
        if np.isfinite(r):
            labels[vi][mask] = CORNEA if r < split else SCLERA
    out = [replace(v, regions=RegionMask(lab_)) for v, lab_ in zip(views, labels)]
    region = anchors.region.copy()
    for vi, view in enumerate(out):
        mine = anchors.camera_id == view.camera_id
        region[mine] = view.regions.labels[anchors.v[mine], anchors.u[mine]]
    return out, replace(anchors, region=region)


NOMINAL_CORNEA_RADIUS = 7.8
NOMINAL_SCLERA_RADIUS = 12.0
NOMINAL_CENTER_DISTANCE = 5.5


def initial_two_sphere(
    anchors: SampleSet, trim: float = 3.0, prior_center=None, data: Optional["RayData"] = None, min_anchors: int = 10
) -> TwoSphereEye:
    """O'_c, O'_s, R'_c, R'_s from the anchors of each region (outlier-trimmed).

    A region with fewer than ``min_anchors`` anchors (the stereo overlap
    can miss it entirely at oblique gaze) falls back to an anatomical
    start when ``prior_center`` (the rig's nominal eye centre) is given:
    the sclera sits there with radius 12 mm; the cornea (7.8 mm) sits
    5.5 mm from the sclera centre toward the cornea pixels of ``data``.
    The optimizer refines either from the single-camera data.
    """
    fits = {}
    for region in (CORNEA, SCLERA):
        s = anchors.of_region(region)
        if len(s) >= min_anchors:
            fits[region] = fit_sphere_from_normals(s.point, s.n, trim=trim).sphere
    if SCLERA not in fits and prior_center is not None:
        log.info("initial fit: too few sclera anchors, starting from the nominal eye centre")
        fits[SCLERA] = Sphere(np.asarray(prior_center, dtype=float), NOMINAL_SCLERA_RADIUS)
    if CORNEA not in fits and SCLERA in fits and data is not None:
        sc = fits[SCLERA]
        sel = data.region == CORNEA
        if sel.any():
            log.info("initial fit: too few cornea anchors, starting from the anatomical offset")
            t = intersect_spheres_t(data.origin[sel], data.direction[sel], sc.center, sc.radius)
            t = np.where(np.isnan(t), np.linalg.norm(sc.center - data.origin[sel], axis=1), t)
            p = data.origin[sel] + t[:, None] * data.direction[sel]
            d = normalize(p.mean(axis=0) - sc.center)
            fits[CORNEA] = Sphere(sc.center + NOMINAL_CENTER_DISTANCE * d, NOMINAL_CORNEA_RADIUS)
    if CORNEA not in fits or SCLERA not in fits:
        raise ValueError("need at least 10 anchors per region to fit a sphere")
    model = TwoSphereEye(fits[CORNEA].center, fits[SCLERA].center, fits[CORNEA].radius, fits[SCLERA].radius)
    return model.validate()


# ---------------------------------------------------------------- loss


def _residuals(model, data: RayData):
    t = model_depths(model, data)
    p = data.origin + t[:, None] * data.direction
    n = deflectometry_normal(p, data.origin, data.target)
    centers, _ = _centers_radii(model, data.region)
    ns = normalize(p - centers)
    cr = np.cross(ns, n)
    ang = np.arctan2(np.linalg.norm(cr, axis=1), np.einsum("ij,ij->i", n, ns))
    return ang, cr


def angular_errors(model, data: RayData):
    """Per-pixel angle (rad) between measured and model normals."""
    return _residuals(model, data)[0]


def angular_loss(model, data: RayData) -> float:
    """Mean angle between deflectometry normals and model normals."""
    return float(np.mean(angular_errors(model, data)))


def _vector_model(model):
    if isinstance(model, Sphere):
        return np.concatenate([model.center, [model.radius]]), lambda x: Sphere(x[:3], x[3])
    return model.to_vector(), TwoSphereEye.from_vector


def _model_ok(model):
    if isinstance(model, Sphere):
        return model.radius > 0
    return model.is_valid()


def loss_gradient(model, data: RayData, h: float = 1e-4):
    """Central-difference gradient of :func:`angular_loss` over the model parameters."""
    x, build = _vector_model(model)
    g = np.zeros(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        g[i] = (angular_loss(build(x + e), data) - angular_loss(build(x - e), data)) / (2 * h)
    return g


@dataclass
class OptimizationResult:
    model: object
    loss: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def optimize_two_sphere(
    init,
    data: RayData,
    h: float = 1e-4,
    max_iter: int = 500,
    tol: float = 1e-7,
    max_pixels: Optional[int] = 40000,
) -> OptimizationResult:
    """Minimise the mean normal angle over the model parameters.

    Region labels stay fixed.  The gradient is a central finite difference
    (step ``h`` mm); the step direction preconditions it with the
    reweighted Gauss-Newton matrix of the per-pixel normal mismatch, and a
    backtracking line search accepts only steps that lower the loss and
    keep the model valid.  Stops when an accepted step gains less than
    ``tol`` rad.  ``max_pixels`` thins the data on a fixed stride.
    """
    if max_pixels is not None and len(data) > max_pixels:
        data = data.subset(np.linspace(0, len(data) - 1, max_pixels).astype(int))
    x, build = _vector_model(init)
    if not _model_ok(init):
        raise ValueError("initial model violates its invariants")
    k = len(x)
    f, _ = _residuals(build(x), data)
    loss = float(np.mean(f))
    history = [loss]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac_a = np.empty((len(data), k))
        jac_r = np.empty((len(data), 3, k))
        for i in range(k):
            e = np.zeros(k)
            e[i] = h
            ap, rp = _residuals(build(x + e), data)
            am, rm = _residuals(build(x - e), data)
            jac_a[:, i] = (ap - am) / (2 * h)
            jac_r[:, :, i] = (rp - rm) / (2 * h)
        grad = jac_a.mean(axis=0)
        w = 1.0 / np.maximum(f, 1e-6)
        jr = jac_r.reshape(-1, k)
        hess = (jr * np.repeat(w, 3)[:, None]).T @ jr / len(data)
        try:
            step = -np.linalg.solve(hess + 1e-12 * np.trace(hess) * np.eye(k), grad)
        except np.linalg.LinAlgError:
            step = -grad
        if step @ grad >= 0:
            step = -grad
        alpha = 1.0
        accepted = False
        for _ in range(40):
            cand = x + alpha * step
            m = build(cand)
            if _model_ok(m):
                fc, _ = _residuals(m, data)
                lc = float(np.mean(fc))
                if lc < loss:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            converged = True
            break
        gain = loss - lc
        x, f, loss = cand, fc, lc
        history.append(loss)
        if gain < tol:
            converged = True
            break
    return OptimizationResult(build(x), loss, it, converged, history)


# ---------------------------------------------------------------- integration


@dataclass
class HeightField:
    """Depth (mm) along each camera ray; NaN off the valid mask."""

    depth: np.ndarray
    valid: np.ndarray
    camera_id: int = 0


def _bilinear(arr, valid, u, v):
    h, w = arr.shape
    ok = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uu = np.clip(np.where(ok, u, 0), 0, w - 1.000001)
    vv = np.clip(np.where(ok, v, 0), 0, h - 1.000001)
    u0 = np.floor(uu).astype(int)
    v0 = np.floor(vv).astype(int)
    fu, fv = uu - u0, vv - v0
    taps = [(v0, u0), (v0, u0 + 1), (v0 + 1, u0), (v0 + 1, u0 + 1)]
    for r, c in taps:
        ok &= valid[r, c]
    a = np.where(valid, arr, 0.0)
    val = (1 - fv) * ((1 - fu) * a[v0, u0] + fu * a[v0, u0 + 1]) + fv * ((1 - fu) * a[v0 + 1, u0] + fu * a[v0 + 1, u0 + 1])
    return np.where(ok, val, np.nan)


def _integrate_log_depth(log_t, normals, dirs, comp_index, shape, reg=1e-6):
    """One zonal least-squares pass on log depth.

    Neighbouring points ``P = t r`` on a surface with normal ``n`` satisfy
    ``(P_q - P_p) . n_mid = 0``, i.e. ``log t_q - log t_p = log|r_p . n_mid| -
    log|r_q . n_mid|`` with ``n_mid`` the normalised mean of the two
    normals (exact for spheres).  A weak pull toward the current depths
    fixes each piece's constant, which is re-anchored afterwards.
    """
    n_px = len(log_t)
    rows, cols, vals, rhs = [], [], [], []
    eq = 0
    for dv, du in ((0, 1), (1, 0)):
        q = comp_index[dv:, du:]
        p = comp_index[: shape[0] - dv, : shape[1] - du]
        both = (p >= 0) & (q >= 0)
        ip, iq = p[both], q[both]
        nm = normalize(normals[ip] + normals[iq])
        b = np.log(np.abs(np.einsum("ij,ij->i", dirs[ip], nm))) - np.log(np.abs(np.einsum("ij,ij->i", dirs[iq], nm)))
        m = len(ip)
        r = np.arange(eq, eq + m)
        rows += [r, r]
        cols += [iq, ip]
        vals += [np.ones(m), -np.ones(m)]
        rhs.append(b)
        eq += m
    a = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(eq, n_px))
    rhs = np.concatenate(rhs)
    lhs = (a.T @ a + reg * sparse.identity(n_px)).tocsc()
    return spsolve(lhs, a.T @ rhs + reg * log_t)


@dataclass
class RefineResult:
    heights: list
    samples: SampleSet
    changes: list
    iterations: int


# relative depth disagreement beyond which an anchor is ignored for scaling
ANCHOR_GATE = 0.01


def integrate_refine(
    model,
    views: Sequence[View],
    scene,
    anchors: Optional[SampleSet] = None,
    max_outer: int = 3,
    tol: float = 1e-4,
) -> RefineResult:
    """Iterative slope integration started from the fitted model.

    Per camera, depths start at the ray-model intersections.  Each outer
    pass recomputes the deflectometry normals at the current points,
    integrates them (per connected region piece, the limbus excluded) and
    rescales each piece by the median anchor-to-surface depth ratio, using
    anchors within :data:`ANCHOR_GATE` of the surface (pieces without such
    anchors keep the model's mean depth).  Stops
    when the RMS depth change drops below ``tol`` mm or after
    ``max_outer`` passes; raises :class:`DivergenceError` when the change
    grows twice in a row.
    """
    per_cam = []
    for view in views:
        cam = scene.cameras[view.camera_id]
        data = ray_data([view], scene)
        t = model_depths(model, data)
        shape = view.corr.valid.shape
        sel = np.zeros(shape, bool)
        sel[data.v, data.u] = True
        comp = np.zeros(shape, int)
        for region in (CORNEA, SCLERA):
            lab, n = ndimage.label(sel & (view.regions.labels == region))
            comp = np.where(lab > 0, lab + comp.max(), comp)
        index = np.full(shape, -1)
        index[data.v, data.u] = np.arange(len(data))
        anchor_px = None
        if anchors is not None and len(anchors):
            uv = cam.project_many(anchors.point)
            a_depth = np.linalg.norm(anchors.point - cam.center, axis=1)
            anchor_px = (uv, a_depth)
        per_cam.append(dict(view=view, cam=cam, data=data, t=t, t_model=t.copy(), comp=comp[data.v, data.u], index=index, anchors=anchor_px))

    changes = []
    it = 0
    for it in range(1, max_outer + 1):
        sq, cnt = 0.0, 0
        for pc in per_cam:
            data, t = pc["data"], pc["t"]
            p = data.origin + t[:, None] * data.direction
            n = deflectometry_normal(p, data.origin, data.target)
            new_log = _integrate_log_depth(np.log(t), n, data.direction, pc["index"], pc["index"].shape)
            new_t = np.exp(new_log)
            shape = pc["index"].shape
            depth_img = np.full(shape, np.nan)
            depth_img[data.v, data.u] = new_t
            for c in np.unique(pc["comp"]):
                members = pc["comp"] == c
                scale = None
                if pc["anchors"] is not None:
                    uv, a_depth = pc["anchors"]
                    comp_img = np.zeros(shape, bool)
                    comp_img[data.v[members], data.u[members]] = True
                    at = _bilinear(depth_img, comp_img, uv[:, 0], uv[:, 1])
                    ratio = a_depth / at
                    # stray anchors (a wrong stereo minimum) must not drag a whole piece
                    ok = np.isfinite(ratio) & (np.abs(ratio - 1) < ANCHOR_GATE)
                    if ok.sum() >= 1:
                        scale = float(np.median(ratio[ok]))
                if scale is None:
                    scale = np.mean(pc["t_model"][members]) / np.mean(new_t[members])
                new_t[members] *= scale
            sq += float(np.sum((new_t - t) ** 2))
            cnt += len(t)
            pc["t"] = new_t
        change = np.sqrt(sq / max(cnt, 1))
        changes.append(change)
        log.debug("integration pass %d: rms depth change %.3g mm", it, change)
        if change < tol:
            break
        if len(changes) >= 3 and changes[-1] > changes[-2] > changes[-3]:
            raise DivergenceError(f"integration diverging: changes {changes}")

    heights, sets = [], []
    for pc in per_cam:
        data, t, view = pc["data"], pc["t"], pc["view"]
        shape = view.corr.valid.shape
        depth = np.full(shape, np.nan)
        depth[data.v, data.u] = t
        valid = np.isfinite(depth)
        heights.append(HeightField(depth, valid, view.camera_id))
        p = data.origin + t[:, None] * data.direction
        n_r = deflectometry_normal(p, data.origin, data.target)
        p0 = data.origin + pc["t_model"][:, None] * data.direction
        n0 = deflectometry_normal(p0, data.origin, data.target)
        centers, _ = _centers_radii(model, data.region)
        sets.append(SampleSet(data.camera_id, data.u, data.v, p, n0, data.region, normalize(p - centers), n_r))
    return RefineResult(heights, SampleSet.concatenate(sets), changes, it)
