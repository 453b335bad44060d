"""Image containers and file I/O.

Images are kept in linear radiance internally; the sRGB transfer curve is
applied only when writing 8-bit previews. 16-bit PNGs store linear values.
Depth maps are written as little-endian PFM.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import DomainError
from .optics import BAYER_PATTERNS


@dataclass
class LinearImage:
    """Linear-light image, values in [0, 1], 1 or 3 channels."""

    values: np.ndarray  # (H, W) or (H, W, 3) float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 3 and v.shape[2] not in (1, 3):
            raise DomainError("channels must be 1 or 3")
        if v.ndim not in (2, 3):
            raise DomainError("image must be 2D or 3D")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DomainError("values must be finite and >= 0")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.values.ndim == 2 else self.values.shape[2]

    def luminance(self) -> np.ndarray:
        if self.values.ndim == 2:
            return self.values
        v = self.values
        return 0.2126 * v[..., 0] + 0.7152 * v[..., 1] + 0.0722 * v[..., 2]


@dataclass
class RawImage:
    """Single-channel Bayer mosaic, values in [0, 1]."""

    values: np.ndarray  # (H, W) float
    bayer_pattern: str = "RGGB"
    bit_depth: int = 10

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DomainError("raw image must be single-channel")
        if v.shape[0] % 2 or v.shape[1] % 2:
            raise DomainError("raw dimensions must be even")
        if np.any(v < 0) or np.any(v > 1):
            raise DomainError("raw values must lie in [0, 1]")
        if self.bayer_pattern not in BAYER_PATTERNS:
            raise DomainError(f"bayer_pattern must be one of {BAYER_PATTERNS}")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def bayer_channel_masks(pattern: str, shape) -> dict:
    """Boolean masks per channel for a Bayer pattern on the given shape."""
    layout = {
        "RGGB": (("R", "G"), ("G", "B")),
        "BGGR": (("B", "G"), ("G", "R")),
        "GRBG": (("G", "R"), ("B", "G")),
        "GBRG": (("G", "B"), ("R", "G")),
    }[pattern]
    h, w = shape
    rows = np.arange(h)[:, None] % 2
    cols = np.arange(w)[None, :] % 2
    masks = {"R": np.zeros((h, w), bool), "G": np.zeros((h, w), bool),
             "B": np.zeros((h, w), bool)}
    for r in (0, 1):
        for c in (0, 1):
            masks[layout[r][c]] |= (rows == r) & (cols == c)
    return masks


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    x = np.clip(linear, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    x = np.clip(encoded, 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def write_png16(path, image: LinearImage | RawImage, metadata: dict | None = None) -> None:
    """Write linear values as 16-bit PNG, with an optional JSON sidecar."""
    v = np.clip(image.values, 0.0, 1.0)
    u16 = np.round(v * 65535.0).astype(np.uint16)
    if u16.ndim == 3:
        u16 = u16[..., ::-1]  # cv2 expects BGR
    if not cv2.imwrite(str(path), u16):
        raise IOError(f"failed to write {path}")
    meta = dict(metadata or {})
    if isinstance(image, RawImage):
        meta.setdefault("bayer_pattern", image.bayer_pattern)
        meta.setdefault("bit_depth", image.bit_depth)
        meta.setdefault("kind", "raw")
    else:
        meta.setdefault("kind", "linear")
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_png16(path, raw: bool = False):
    """Read a 16-bit (or 8-bit) PNG back into linear [0, 1]."""
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise IOError(f"cannot read {path}")
    scale = 65535.0 if data.dtype == np.uint16 else 255.0
    v = data.astype(np.float64) / scale
    if v.ndim == 3:
        v = v[..., ::-1]
    meta_path = Path(str(path) + ".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    if raw or meta.get("kind") == "raw":
        return RawImage(v, bayer_pattern=meta.get("bayer_pattern", "RGGB"),
                        bit_depth=meta.get("bit_depth", 16))
    return LinearImage(v)


def write_preview_png(path, image: LinearImage) -> None:
    """8-bit sRGB preview for quick inspection."""
    u8 = np.round(srgb_encode(image.values) * 255.0).astype(np.uint8)
    if u8.ndim == 3:
        u8 = u8[..., ::-1]
    if not cv2.imwrite(str(path), u8):
        raise IOError(f"failed to write {path}")


def write_pfm(path, data: np.ndarray) -> None:
    """Little-endian single-channel PFM (rows bottom-to-top per the format)."""
    a = np.asarray(data, dtype=np.float32)
    if a.ndim != 2:
        raise DomainError("PFM writer handles single-channel images")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{a.shape[1]} {a.shape[0]}\n".encode())
        fh.write(b"-1.0\n")  # negative scale marks little-endian
        fh.write(a[::-1].tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise DomainError("not a single-channel PFM file")
        w, h = map(int, fh.readline().split())
        scale = float(fh.readline())
        count = w * h
        fmt = "<" if scale < 0 else ">"
        data = np.array(struct.unpack(f"{fmt}{count}f", fh.read(4 * count)),
                        dtype=np.float32).reshape(h, w)
    return data[::-1]
