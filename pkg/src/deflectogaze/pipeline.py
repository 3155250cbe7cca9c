"""End-to-end reconstruction of one single-shot stereo capture."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fringes import decode_view
from .gaze import GazeEstimate, estimate_axis
from .geometry import Sphere, normalize
from .reconstruction import (
    OptimizationResult,
    RefineResult,
    SampleSet,
    SphereFit,
    anchors_both_ways,
    classify_pieces,
    fit_sphere_from_normals,
    initial_two_sphere,
    integrate_refine,
    optimize_two_sphere,
    ray_data,
)

STAGES = ("decode", "anchors", "initial_fit", "optimize", "integrate", "gaze", "final_fit")


class PipelineStageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it, ``cause`` is the original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineOptions:
    period: float = 80.0  # display fringe period, px
    anchors: int = 500
    edge_erosion: int = 3
    max_pixels: int = 40000  # optimizer data budget
    max_outer: int = 3
    seed: int = 0


@dataclass
class PipelineResult:
    mode: str  # "two_sphere" or "sphere"
    views: list
    anchors: SampleSet
    initial: object
    model: object
    optimization: Optional[OptimizationResult]
    refine: RefineResult
    gaze: Optional[GazeEstimate] = None
    sphere_fit: Optional[SphereFit] = None
    timings: dict = field(default_factory=dict)

    @property
    def samples(self) -> SampleSet:
        return self.refine.samples


class _Stages:
    def __init__(self):
        self.timings = {}

    def run(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except PipelineStageError:
            raise
        except Exception as e:  # surfaced with the stage name
            raise PipelineStageError(name, e) from e
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def reconstruct(images, scene, seed_fn, mode: str = "two_sphere", options: Optional[PipelineOptions] = None, views=None):
    """Images of a crossed-fringe capture -> surface, model and (two-sphere) optical axis.

    ``mode="sphere"`` treats the surface as one sphere (bearing ball):
    anchors, sphere fit, integration.  ``mode="two_sphere"`` adds limbus
    segmentation, the two-sphere fit and the axis estimate.  Pass ``views``
    to skip decoding (e.g. oracle correspondences).
    """
    if mode not in ("two_sphere", "sphere"):
        raise ValueError(f"unknown mode {mode!r}")
    opt = options or PipelineOptions()
    st = _Stages()
    if views is None:
        views = [
            st.run(
                "decode",
                decode_view,
                images[ci],
                scene,
                ci,
                opt.period,
                seed_fn,
                find_limbus=mode == "two_sphere",
                edge_erosion=opt.edge_erosion,
            )
            for ci in range(len(scene.cameras))
        ]
    anchors = st.run("anchors", anchors_both_ways, views, scene, opt.anchors, opt.seed)
    if mode == "sphere":
        fit = st.run("initial_fit", fit_sphere_from_normals, anchors.point, anchors.n, 3.0)
        init = fit.sphere
        opt_res = None
        model = init
    else:
        views, anchors = st.run("initial_fit", classify_pieces, views, anchors)
        data = ray_data(views, scene)
        init = st.run("initial_fit", initial_two_sphere, anchors, 3.0, scene.nominal_eye_center, data)
        opt_res = st.run("optimize", optimize_two_sphere, init, data, max_pixels=opt.max_pixels)
        model = opt_res.model
    ref = st.run("integrate", integrate_refine, model, views, scene, anchors, opt.max_outer)
    result = PipelineResult(mode, views, anchors, init, model, opt_res, ref, timings=st.timings)
    if mode == "sphere":
        s = ref.samples
        result.sphere_fit = st.run("final_fit", fit_sphere_from_normals, s.point, s.n_r)
    else:
        result.gaze = st.run("gaze", estimate_axis, ref.samples, model)
    return result


def apply_point_noise(samples: SampleSet, sigma_deg: float, rng) -> SampleSet:
    """Copy of ``samples`` with each refined normal tilted by an independent
    isotropic Gaussian angle (``sigma_deg`` per tangent component).

    Models per-point measurement error that the image-noise path cannot
    produce at these magnitudes; see the noise-regime notes.
    """
    out = samples.subset(np.arange(len(samples)))
    if sigma_deg <= 0:
        return out
    n = normalize(samples.n_r)
    helper = np.where(np.abs(n[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = normalize(np.cross(n, helper))
    t2 = np.cross(n, t1)
    a = np.tan(np.radians(sigma_deg) * rng.standard_normal((len(n), 2)))
    out.n_r = normalize(n + a[:, :1] * t1 + a[:, 1:] * t2)
    return out


def sphere_from(model) -> Sphere:
    return model if isinstance(model, Sphere) else model.sclera
