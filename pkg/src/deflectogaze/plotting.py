"""Matplotlib figures drawn from a Report's tables."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=110, metadata={"Software": None})
    _plt().close(fig)
    return path


def plot_ball(report, out: Path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    d = report.extra.get("line_distances_um")
    if d is not None and len(d):
        ax.hist(d, bins=60, color="0.4")
    row = report.rows[0]
    ax.set_xlabel("back-traced normal to centre distance (um)")
    ax.set_ylabel("count")
    ax.set_title(f"R = {row['radius_mm']:.4f} mm, scatter {row['scatter_um']:.2f} um, {row['points']} points")
    return [_save(fig, out / "ball.png")]


def plot_rotation(report, out: Path):
    plt = _plt()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    pos = np.array([r["position_deg"] for r in report.rows])
    rel = np.array([r["mean_theta_deg"] for r in report.rows])
    ref = rel[np.argmin(np.abs(pos))]
    sig = np.array([r["sigma_deg"] for r in report.rows])
    a1.errorbar(pos, rel - ref, yerr=sig, fmt="o", capsize=3, label="measured")
    a1.plot(pos, pos, "k--", lw=0.8, label="stage")
    a1.set_xlabel("stage position (deg)")
    a1.set_ylabel("relative gaze angle (deg)")
    a1.legend()
    w = 0.35
    eps = [r["epsilon_deg"] for r in report.rows]
    a2.bar(pos - w / 2, eps, w, label="synthetic")
    if report.fixture:
        a2.bar([f["position_deg"] + w / 2 for f in report.fixture], [f["epsilon_deg"] for f in report.fixture], w, label="published")
    a2.set_xlabel("stage position (deg)")
    a2.set_ylabel("mean relative error (deg)")
    a2.legend()
    return [_save(fig, out / "rotation.png")]


def plot_thinning(report, out: Path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    dens = [r["density"] for r in report.rows]
    ax.plot(dens, [r["mean_precision_deg"] for r in report.rows], "o-", label="precision (synthetic)")
    ax.plot(dens, [r["mean_accuracy_deg"] for r in report.rows], "s-", label="accuracy (synthetic)")
    if report.fixture:
        fd = [f["density"] for f in report.fixture]
        ax.plot(fd, [f["mean_precision_deg"] for f in report.fixture], "o--", color="0.5", label="precision (published)")
        ax.plot(fd, [f["mean_accuracy_deg"] for f in report.fixture], "s--", color="0.7", label="accuracy (published)")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("point cloud density")
    ax.set_ylabel("deg")
    ax.legend(fontsize=7)
    return [_save(fig, out / "thinning.png")]


def plot_grid(report, out: Path):
    plt = _plt()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, key, title in ((a1, "accuracy_deg", "accuracy"), (a2, "precision_deg", "precision")):
        for r in report.rows:
            mark = "s" if r["role"] == "calibration" else "o"
            ax.scatter(r["eye_yaw_deg"], r["eye_pitch_deg"], s=600, marker=mark, c="0.85", edgecolors="k")
            ax.annotate(f"{r[key]:.2f}", (r["eye_yaw_deg"], r["eye_pitch_deg"]), ha="center", va="center", fontsize=7)
        ax.set_xlabel("eye yaw (deg)")
        ax.set_ylabel("eye pitch (deg)")
        ax.set_title(f"{title} (deg); squares calibrate")
        ax.invert_yaxis()
        ax.margins(0.25)
    return [_save(fig, out / "grid.png")]


def plot_calibration(report, out: Path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["translation_error_mm"] for r in report.rows], "o-", label="translation (mm)")
    ax.plot([r["rotation_error_deg"] for r in report.rows], "s-", label="rotation (deg)")
    ax.set_xlabel("repeat")
    ax.set_ylabel("display pose error")
    ax.legend()
    return [_save(fig, out / "calibration.png")]


PLOTTERS = {
    "ball": plot_ball,
    "rotation": plot_rotation,
    "thinning": plot_thinning,
    "grid": plot_grid,
    "calibration": plot_calibration,
}


def plot_report(report, out) -> list:
    fn = PLOTTERS.get(report.kind)
    return fn(report, Path(out)) if fn else []
