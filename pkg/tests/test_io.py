import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from deflectogaze.io import (
    HEADER_BYTES,
    MAGIC_PHASE,
    FormatError,
    read_channels,
    read_correspondence,
    read_csv,
    read_ground_truth,
    read_pgm,
    read_phase,
    read_ply,
    to_uint16,
    write_channels,
    write_correspondence,
    write_csv,
    write_ground_truth,
    write_pgm,
    write_phase,
    write_ply,
)
from deflectogaze.phase import CorrespondenceMap, PhaseMap
from deflectogaze.simulator.render import GroundTruth

images = hnp.arrays(float, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=20), elements=st.floats(0, 1))


@given(images)
def test_pgm_round_trip_is_exact_in_counts(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("pgm") / "a.pgm"
    write_pgm(p, img)
    back = read_pgm(p)
    assert back.shape == img.shape
    assert np.array_equal(to_uint16(back), to_uint16(img))
    assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-12


def test_pgm_is_16_bit_big_endian(tmp_path):
    p = tmp_path / "b.pgm"
    write_pgm(p, np.array([[0.0, 1.0], [1 / 65535, 256 / 65535]]))
    data = p.read_bytes()
    head = b"P5\n2 2\n65535\n"
    assert data.startswith(head)
    assert data[len(head) :] == bytes([0, 0, 255, 255, 0, 1, 1, 0])


def test_pgm_clips_and_zeroes_nan(tmp_path):
    p = tmp_path / "c.pgm"
    write_pgm(p, np.array([[np.nan, -1.0, 2.0]]))
    assert np.array_equal(read_pgm(p), [[0.0, 0.0, 1.0]])


def test_read_pgm_rejects_other_formats(tmp_path):
    p = tmp_path / "d.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(FormatError):
        read_pgm(p)


def test_channel_container_layout(tmp_path):
    p = tmp_path / "x.dpm"
    a = np.arange(6.0).reshape(2, 3)
    write_channels(p, MAGIC_PHASE, {"a": a, "b": -a})
    data = p.read_bytes()
    assert data[:4] == b"DPM1"
    assert len(data) == HEADER_BYTES + 2 * a.size * 8
    assert np.array_equal(np.frombuffer(data[HEADER_BYTES : HEADER_BYTES + 48], "<f8").reshape(2, 3), a)
    magic, ch = read_channels(p)
    assert magic == b"DPM1" and list(ch) == ["a", "b"] and np.array_equal(ch["b"], -a)


def test_channel_container_errors(tmp_path):
    p = tmp_path / "x.bin"
    write_channels(p, MAGIC_PHASE, {"a": np.zeros((2, 2))})
    with pytest.raises(FormatError):
        read_channels(p, b"DGT1")
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError):
        read_channels(p)
    with pytest.raises((FormatError, ValueError)):
        write_channels(p, b"TOOLONG", {"a": np.zeros((2, 2))})


def test_ground_truth_round_trip(tmp_path, rng):
    h, w = 4, 5
    valid = rng.random((h, w)) > 0.3
    gt = GroundTruth(
        np.where(valid[..., None], rng.normal(size=(h, w, 3)), np.nan),
        np.where(valid[..., None], rng.normal(size=(h, w, 3)), np.nan),
        np.where(valid[..., None], rng.uniform(0, 2000, (h, w, 2)), np.nan),
        np.where(valid, rng.integers(1, 3, (h, w)), 0).astype(np.int8),
        valid,
    )
    write_ground_truth(tmp_path / "g.dgt", gt)
    back = read_ground_truth(tmp_path / "g.dgt")
    for name in ("point", "normal", "display", "region", "valid"):
        assert np.array_equal(getattr(back, name), getattr(gt, name), equal_nan=name not in ("region", "valid"))


def test_phase_and_correspondence_round_trip(tmp_path, rng):
    valid = rng.random((3, 4)) > 0.2
    px = PhaseMap(np.where(valid, rng.uniform(-3, 3, valid.shape), np.nan), rng.random(valid.shape), valid, "x")
    py = PhaseMap(np.where(valid, rng.uniform(-3, 3, valid.shape), np.nan), rng.random(valid.shape), valid, "y")
    write_phase(tmp_path / "c.dpm", px, py)
    bx, by = read_phase(tmp_path / "c.dpm")
    assert np.array_equal(bx.phase, px.phase, equal_nan=True) and np.array_equal(by.valid, valid)
    corr = CorrespondenceMap(rng.uniform(0, 99, valid.shape), rng.uniform(0, 99, valid.shape), valid, 1)
    region = np.where(valid, 2, 0)
    write_correspondence(tmp_path / "c.dcm", corr, region)
    back, reg = read_correspondence(tmp_path / "c.dcm", camera_id=1)
    assert np.array_equal(back.xd, corr.xd) and np.array_equal(reg, region) and back.camera_id == 1


def test_ply_round_trip_drops_non_finite(tmp_path, rng):
    p = rng.normal(size=(50, 3)) * 10
    n = rng.normal(size=(50, 3))
    p[3] = np.nan
    write_ply(tmp_path / "s.ply", p, n)
    text = (tmp_path / "s.ply").read_text(encoding="ascii")
    assert text.startswith("ply\nformat ascii 1.0\nelement vertex 49\n")
    bp, bn = read_ply(tmp_path / "s.ply")
    keep = np.ones(50, bool)
    keep[3] = False
    assert np.allclose(bp, p[keep], rtol=1e-8) and np.allclose(bn, n[keep], rtol=1e-8)


def test_csv_format(tmp_path):
    rows = [{"name": "a", "value": 0.1 + 0.2, "count": 3}, {"name": "b", "value": -1e-12, "count": 4}]
    write_csv(tmp_path / "t.csv", rows)
    raw = (tmp_path / "t.csv").read_bytes()
    assert raw.decode("utf-8").splitlines() == ["name,value,count", "a,0.3,3", "b,-1e-12,4"]
    assert read_csv(tmp_path / "t.csv")[1] == {"name": "b", "value": "-1e-12", "count": "4"}
