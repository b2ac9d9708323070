"""File formats: 8-bit PGM, float CSV grids, packed QISB bit cubes, threshold maps."""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .forward import BitCube, ThresholdMap

QISB_MAGIC = b"QISB"


class FormatError(ValueError):
    """Malformed input file."""


# ---------------------------------------------------------------------------
# PGM (binary P5, maxval 255)
# ---------------------------------------------------------------------------
def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte ends the header


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM with maxval 255 as floats in [0, 1]."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset)
    return pixels.reshape(h, w).astype(float) / 255.0


def write_pgm(path, image) -> None:
    """Write an image in [0, 1] (clipped) as 8-bit P5."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    h, w = img.shape
    body = np.round(img * 255.0).astype(np.uint8).tobytes()
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + body)


# ---------------------------------------------------------------------------
# CSV grids
# ---------------------------------------------------------------------------
def read_csv_image(path) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return arr


def format_float(x: float) -> str:
    return repr(float(x))


def write_csv_image(path, image) -> None:
    img = np.asarray(image, dtype=float)
    lines = [",".join(format_float(v) for v in row) for row in img]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def write_table(path, header: list[str], rows) -> None:
    """CSV with one header line, '.' decimals and '\\n' line endings."""
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_cell(v) for v in row) + "\n")
    Path(path).write_text(buf.getvalue(), newline="\n")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


# ---------------------------------------------------------------------------
# QISB bit cubes: b"QISB", u32 M, u32 T (little endian), then T planes, each
# the M bits of one frame in row-major jot order, packed MSB-first and padded
# to a whole byte.
# ---------------------------------------------------------------------------
def write_qisb(path, cube: BitCube) -> None:
    header = QISB_MAGIC + struct.pack("<II", cube.M, cube.T)
    planes = [np.packbits(cube.bits[t].reshape(-1)).tobytes() for t in range(cube.T)]
    Path(path).write_bytes(header + b"".join(planes))


def read_qisb(path, jot_shape) -> BitCube:
    """Read a QISB file; the jot grid shape comes from the sidecar metadata."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != QISB_MAGIC:
        raise FormatError(f"{path}: missing QISB magic")
    M, T = struct.unpack("<II", data[4:12])
    hj, wj = jot_shape
    if hj * wj != M:
        raise FormatError(f"{path}: M={M} does not match jot grid {hj}x{wj}")
    plane_bytes = (M + 7) // 8
    if len(data) != 12 + T * plane_bytes:
        raise FormatError(f"{path}: expected {T} planes of {plane_bytes} bytes")
    raw = np.frombuffer(data, dtype=np.uint8, offset=12).reshape(T, plane_bytes)
    bits = np.unpackbits(raw, axis=1, count=M).reshape(T, hj, wj)
    return BitCube(bits)


# ---------------------------------------------------------------------------
# Threshold maps: "blockw,blockh" header, the two sizes, then the q grid.
# ---------------------------------------------------------------------------
def write_threshold_map(path, qmap: ThresholdMap) -> None:
    lines = ["blockw,blockh", f"{qmap.block_w},{qmap.block_h}"]
    lines += [",".join(str(int(q)) for q in row) for row in qmap.q_values]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_threshold_map(path) -> ThresholdMap:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) < 3 or lines[0].replace(" ", "") != "blockw,blockh":
        raise FormatError(f"{path}: expected 'blockw,blockh' header")
    try:
        bw, bh = (int(v) for v in lines[1].split(","))
        grid = np.array([[int(v) for v in ln.split(",")] for ln in lines[2:]])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return ThresholdMap(bw, bh, grid)
