import csv

import numpy as np
import pytest

from deflectogaze.config import ExperimentConfig
from deflectogaze.experiments import clear_capture_cache, kappa_rotation, run_experiment, trial_seed
from deflectogaze.geometry import rotation_angle

RESULT_FILES = ("thinning.csv", "thinning_trials.csv", "thinning_fixture.csv", "thinning_summary.csv")


def small_thinning(**kw):
    return ExperimentConfig(kind="thinning", noise=0.01, point_noise_deg=0.5, captures=2, draws=3, **kw)


@pytest.fixture(scope="module")
def thinning_runs(tmp_path_factory):
    out = []
    for threads in (1, 2):
        clear_capture_cache()
        d = tmp_path_factory.mktemp(f"t{threads}")
        rep = run_experiment(small_thinning(threads=threads))
        paths = rep.write(d)
        out.append((rep, d, paths))
    return out


def test_runs_are_byte_identical_across_thread_counts(thinning_runs):
    (_, a, _), (_, b, _) = thinning_runs
    for name in RESULT_FILES:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_every_row_carries_the_config_hash(thinning_runs):
    rep, d, _ = thinning_runs[0]
    assert rep.config_hash == small_thinning().hash() == small_thinning(threads=4).hash()
    assert rep.config_hash != small_thinning(seed=1).hash()
    for name in RESULT_FILES + ("timings.csv",):
        with open(d / name, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and all(r["config_hash"] == rep.config_hash for r in rows)


def test_report_writes_figures_next_to_tables(thinning_runs):
    _, d, paths = thinning_runs[0]
    pngs = [p for p in paths if p.suffix == ".png"]
    assert pngs and all(p.parent == d and p.stat().st_size > 0 for p in pngs)


def test_thinning_rows_are_ordered_by_density(thinning_runs):
    rep = thinning_runs[0][0]
    assert [r["density"] for r in rep.rows] == [1.0, 0.5, 0.25, 0.125, 0.0625]
    assert rep.rows[0]["draws"] == 1 and rep.rows[1]["draws"] == 3


def test_trial_seed_is_stable_and_index_sensitive():
    assert trial_seed(0, 1, 2) == trial_seed(0, 1, 2)
    assert len({trial_seed(0, i, j) for i in range(10) for j in range(10)}) == 100


def test_kappa_rotation_angle():
    r = kappa_rotation([5.0, 0.0])
    assert np.degrees(rotation_angle(r)) == pytest.approx(5.0)
