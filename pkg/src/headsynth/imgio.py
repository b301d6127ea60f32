"""Image and point-sample file formats.

PNG (via Pillow) carries 8-bit RGB previews.  Float maps use the portable
float map (PFM) format: "PF"/"Pf" magic, "W H", a scale line whose sign
encodes endianness (written little-endian, scale -1.0), then float32 rows
ordered bottom-to-top per the PFM convention.

Multi-channel feature maps do not fit PFM's 1/3-channel palette, so a
C-channel map is written as one grayscale PFM of height C*H with channel c
occupying the c-th H-row band (top-to-bottom in the logical image).

Point features use a "PTS1" block: magic, uint32 count, uint32 channels,
then per point 3 coordinates followed by the channel values, all little-endian
float64 so stored samples survive a round trip at computation precision.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

from .errors import ContractViolation, ParseError

PTS_MAGIC = b"PTS1"


# ---------------------------------------------------------------------------
# PNG

def write_png(path, rgb: np.ndarray) -> None:
    """8-bit PNG from floats in [0, 1] (values clipped, rounded to nearest)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ContractViolation("write_png expects an (H, W, 3) array")
    quant = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quant, mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


# ---------------------------------------------------------------------------
# PFM

def write_pfm(path, data: np.ndarray) -> None:
    """Grayscale (H, W) or color (H, W, 3) float32 PFM, little-endian."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 3:
        magic = b"PF"
    elif data.ndim == 2:
        magic = b"Pf"
    else:
        raise ContractViolation("write_pfm expects (H, W) or (H, W, 3)")
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(data[::-1].astype("<f4").tobytes())  # rows bottom to top


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        magic, size, scale, rest = data.split(b"\n", 3)
    except ValueError as exc:
        raise ParseError("truncated PFM header") from exc
    if magic not in (b"PF", b"Pf"):
        raise ParseError("not a PFM file")
    try:
        w, h = (int(t) for t in size.split())
        scale = float(scale)
    except ValueError as exc:
        raise ParseError("malformed PFM header") from exc
    channels = 3 if magic == b"PF" else 1
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    if len(rest) < 4 * count:
        raise ParseError("truncated PFM payload")
    flat = np.frombuffer(rest[:4 * count], dtype=dtype).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return flat.reshape(shape)[::-1].copy()


def write_feature_pfm(path, features: np.ndarray) -> None:
    """(H, W, C) feature map as one stacked (C*H, W) grayscale PFM."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 3:
        raise ContractViolation("write_feature_pfm expects (H, W, C)")
    h, w, c = features.shape
    stacked = features.transpose(2, 0, 1).reshape(c * h, w)
    write_pfm(path, stacked)


def read_feature_pfm(path, channels: int) -> np.ndarray:
    stacked = read_pfm(path)
    if stacked.ndim != 2 or stacked.shape[0] % channels:
        raise ParseError("stacked PFM height is not a channel multiple")
    h = stacked.shape[0] // channels
    return stacked.reshape(channels, h, stacked.shape[1]).transpose(1, 2, 0)


# ---------------------------------------------------------------------------
# PTS1

def save_points(path, points: np.ndarray, features: np.ndarray) -> None:
    """Point/feature block; full-precision floats so reads recompute exactly."""
    points = np.asarray(points, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or features.ndim != 2 \
            or len(points) != len(features):
        raise ContractViolation("save_points expects (N, 3) points, (N, C) features")
    payload = np.hstack([points, features]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(PTS_MAGIC)
        fh.write(struct.pack("<II", len(points), features.shape[1]))
        fh.write(payload.tobytes())


def load_points(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != PTS_MAGIC:
        raise ParseError("not a PTS1 file")
    if len(data) < 12:
        raise ParseError("truncated PTS1 header")
    count, channels = struct.unpack_from("<II", data, 4)
    need = 8 * count * (3 + channels)
    body = data[12:]
    if len(body) != need:
        raise ParseError("PTS1 payload size mismatch")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    rows = flat.reshape(count, 3 + channels)
    return rows[:, :3].copy(), rows[:, 3:].copy()
