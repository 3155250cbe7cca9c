"""File formats: PGM/PNG images, multi-channel binary maps, PLY, CSV."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

HEADER_BYTES = 64
_NAMES_BYTES = HEADER_BYTES - 16
MAGIC_GROUND_TRUTH = b"DGT1"
MAGIC_PHASE = b"DPM1"
MAGIC_CORRESPONDENCE = b"DCM1"


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- images


def to_uint16(image):
    """Intensities in [0, 1] -> 16-bit counts (NaN -> 0, clipped)."""
    img = np.clip(np.nan_to_num(np.asarray(image, dtype=float)), 0.0, 1.0)
    return np.round(img * 65535).astype(np.uint16)


def write_pgm(path, image):
    """Binary PGM (P5), 16-bit big-endian, maxval 65535."""
    counts = to_uint16(image)
    h, w = counts.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(counts.astype(">u2").tobytes())


def read_pgm(path):
    """Read a binary PGM; returns intensities scaled to [0, 1]."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    raster = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return raster.astype(float) / maxval


def write_png(path, image):
    """8-bit grayscale PNG for inspection only (lossy in depth)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.imsave(path, np.clip(np.nan_to_num(image), 0, 1), cmap="gray", vmin=0, vmax=1)


# ---------------------------------------------------------------- containers


def write_channels(path, magic: bytes, channels: dict):
    """Multi-channel float64 map with a 64-byte header.

    Header: magic (4 bytes), width, height, channel count (uint32 LE), then
    the comma-separated channel names, NUL padded to 48 bytes.  Planes
    follow in header order, float64 little-endian, row-major.
    """
    if len(magic) != 4:
        raise FormatError("magic must be 4 bytes")
    names = list(channels)
    planes = [np.asarray(channels[k], dtype="<f8") for k in names]
    shape = planes[0].shape
    if any(p.shape != shape for p in planes) or len(shape) != 2:
        raise FormatError("channels must be 2D arrays of one shape")
    blob = ",".join(names).encode("ascii")
    if len(blob) > _NAMES_BYTES:
        raise FormatError("channel names do not fit the header")
    h, w = shape
    header = magic + struct.pack("<III", w, h, len(names)) + blob.ljust(_NAMES_BYTES, b"\0")
    with open(path, "wb") as f:
        f.write(header)
        for p in planes:
            f.write(p.tobytes())


def read_channels(path, magic: bytes | None = None):
    """Returns ``(magic, {name: (H, W) array})``."""
    data = Path(path).read_bytes()
    if len(data) < HEADER_BYTES:
        raise FormatError("truncated header")
    got = data[:4]
    if magic is not None and got != magic:
        raise FormatError(f"expected magic {magic!r}, found {got!r}")
    w, h, n = struct.unpack("<III", data[4:16])
    names = data[16:HEADER_BYTES].rstrip(b"\0").decode("ascii").split(",")
    if len(names) != n:
        raise FormatError("channel count does not match names")
    if len(data) != HEADER_BYTES + 8 * w * h * n:
        raise FormatError("payload size does not match header")
    arr = np.frombuffer(data, dtype="<f8", offset=HEADER_BYTES).reshape(n, h, w)
    return got, {k: arr[i].copy() for i, k in enumerate(names)}


def write_ground_truth(path, gt):
    ch = {
        "px": gt.point[..., 0],
        "py": gt.point[..., 1],
        "pz": gt.point[..., 2],
        "nx": gt.normal[..., 0],
        "ny": gt.normal[..., 1],
        "nz": gt.normal[..., 2],
        "xd": gt.display[..., 0],
        "yd": gt.display[..., 1],
        "region": gt.region.astype(float),
        "valid": gt.valid.astype(float),
    }
    write_channels(path, MAGIC_GROUND_TRUTH, ch)


def read_ground_truth(path):
    from .simulator.render import GroundTruth

    _, ch = read_channels(path, MAGIC_GROUND_TRUTH)
    return GroundTruth(
        np.stack([ch["px"], ch["py"], ch["pz"]], axis=-1),
        np.stack([ch["nx"], ch["ny"], ch["nz"]], axis=-1),
        np.stack([ch["xd"], ch["yd"]], axis=-1),
        ch["region"].astype(np.int8),
        ch["valid"] > 0.5,
    )


def write_phase(path, phase_x, phase_y):
    write_channels(
        path,
        MAGIC_PHASE,
        {
            "phx": phase_x.phase,
            "cfx": phase_x.confidence,
            "vx": phase_x.valid.astype(float),
            "phy": phase_y.phase,
            "cfy": phase_y.confidence,
            "vy": phase_y.valid.astype(float),
        },
    )


def read_phase(path):
    from .phase import PhaseMap

    _, ch = read_channels(path, MAGIC_PHASE)
    return (
        PhaseMap(ch["phx"], ch["cfx"], ch["vx"] > 0.5, "x"),
        PhaseMap(ch["phy"], ch["cfy"], ch["vy"] > 0.5, "y"),
    )


def write_correspondence(path, corr, region=None):
    ch = {"xd": corr.xd, "yd": corr.yd, "valid": corr.valid.astype(float)}
    if region is not None:
        ch["region"] = np.asarray(region, dtype=float)
    write_channels(path, MAGIC_CORRESPONDENCE, ch)


def read_correspondence(path, camera_id=0):
    from .phase import CorrespondenceMap

    _, ch = read_channels(path, MAGIC_CORRESPONDENCE)
    corr = CorrespondenceMap(ch["xd"], ch["yd"], ch["valid"] > 0.5, camera_id)
    region = ch["region"].astype(np.int8) if "region" in ch else None
    return corr, region


# ---------------------------------------------------------------- PLY / CSV


def write_ply(path, points, normals):
    """ASCII PLY with one ``x y z nx ny nz`` vertex per line."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    n = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(p) != len(n):
        raise FormatError("points and normals differ in length")
    ok = np.all(np.isfinite(p), axis=1) & np.all(np.isfinite(n), axis=1)
    p, n = p[ok], n[ok]
    head = "\n".join(
        [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(p)}",
            "property float x",
            "property float y",
            "property float z",
            "property float nx",
            "property float ny",
            "property float nz",
            "end_header",
        ]
    )
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(head + "\n")
        np.savetxt(f, np.column_stack([p, n]), fmt="%.9g")


def read_ply(path):
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "ply":
        raise FormatError("not a PLY file")
    count = None
    end = None
    for i, line in enumerate(lines):
        if line.startswith("element vertex"):
            count = int(line.split()[2])
        if line == "end_header":
            end = i
            break
    if count is None or end is None:
        raise FormatError("malformed PLY header")
    if count == 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    arr = np.loadtxt(lines[end + 1 : end + 1 + count], ndmin=2)
    return arr[:, :3], arr[:, 3:6]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def write_csv(path, rows, columns=None):
    """UTF-8 CSV with a header row; floats printed with '.' and 10 significant digits."""
    rows = list(rows)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
