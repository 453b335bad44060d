"""Capture degradation: spatially varying PSF blur, Bayer mosaicking,
signal-dependent noise synthesis, mean/variance noise-model fitting, and
noise transfer between gain settings.

Noise is Gaussian with Poisson-matched variance on [0, 1]-normalized
signal: y ~ N(x, lambda_read + lambda_shot * x). Synthesis uses the
counter-based Philox generator so output is a pure function of
(seed, frame index, pixel index), independent of processing order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import ConfigError, DomainError
from .image import LinearImage, RawImage, bayer_channel_masks

CHANNELS = ("R", "G", "B")


@dataclass(frozen=True)
class PsfGrid:
    """Grid of local PSF kernels covering the field of view."""

    kernels: tuple        # rows of tuples of 2D arrays, normalized to sum 1
    kernel_pitch: float = 1.0e-6  # meters per kernel pixel

    def __post_init__(self):
        kernels = tuple(tuple(np.asarray(k, dtype=np.float64) for k in row)
                        for row in self.kernels)
        ncols = {len(row) for row in kernels}
        if len(kernels) == 0 or len(ncols) != 1:
            raise ConfigError("kernel grid must be rectangular and non-empty")
        for row in kernels:
            for k in row:
                if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
                    raise ConfigError("kernels must be 2D with odd dimensions")
                if abs(float(k.sum()) - 1.0) > 1e-6:
                    raise ConfigError("kernels must be normalized to sum 1")
                if np.any(k < 0):
                    raise ConfigError("kernels must be non-negative")
        object.__setattr__(self, "kernels", kernels)

    @property
    def shape(self) -> tuple:
        return (len(self.kernels), len(self.kernels[0]))


def delta_kernel(size: int = 1) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def gaussian_kernel(sigma: float, size: int | None = None) -> np.ndarray:
    if size is None:
        size = 2 * int(math.ceil(3.0 * max(sigma, 0.3))) + 1
    ax = np.arange(size) - size // 2
    g = np.exp(-0.5 * (ax / max(sigma, 1e-9)) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_mixture_kernel(sigmas, weights, offsets=None, size: int = 21) -> np.ndarray:
    """Sum of offset Gaussians; stands in for simulated lens PSFs."""
    offsets = offsets or [(0.0, 0.0)] * len(sigmas)
    yy, xx = np.mgrid[0:size, 0:size] - size // 2
    k = np.zeros((size, size))
    for s, w, (dy, dx) in zip(sigmas, weights, offsets):
        k += w * np.exp(-0.5 * (((xx - dx) ** 2 + (yy - dy) ** 2) / max(s, 1e-9) ** 2))
    return k / k.sum()


def psf_grid_preset(name: str) -> PsfGrid:
    """Named PSF grids: ``desk-7x7`` and ``head-6x8``.

    Parametric Gaussian-mixture kernels that sharpen on axis and grow a
    mild off-center tail toward the field corners.
    """
    shapes = {"desk-7x7": (7, 7), "head-6x8": (6, 8)}
    if name not in shapes:
        raise ConfigError(f"unknown PSF preset {name!r}; choose from {sorted(shapes)}")
    rows, cols = shapes[name]
    base = 0.7 if name == "desk-7x7" else 0.9
    grid = []
    for r in range(rows):
        row = []
        for c in range(cols):
            # normalized field radius in [0, 1]
            fr = math.hypot((r - (rows - 1) / 2) / max(rows - 1, 1),
                            (c - (cols - 1) / 2) / max(cols - 1, 1)) * 2 / math.sqrt(2)
            sigma = base * (1.0 + 0.8 * fr * fr)
            tail = 0.15 * fr
            row.append(gaussian_mixture_kernel(
                [sigma, 2.5 * sigma], [1.0 - tail, tail],
                offsets=[(0.0, 0.0), (1.5 * fr, 1.5 * fr)], size=15))
        grid.append(tuple(row))
    return PsfGrid(tuple(grid))


def save_psf_grid(grid: PsfGrid, directory) -> None:
    """Kernel files (32-bit float .npy) plus a manifest JSON."""
    from pathlib import Path
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows, cols = grid.shape
    for r in range(rows):
        for c in range(cols):
            np.save(d / f"kernel_{r}_{c}.npy", grid.kernels[r][c].astype(np.float32))
    (d / "manifest.json").write_text(json.dumps({
        "rows": rows, "cols": cols, "kernel_pitch_m": grid.kernel_pitch,
        "files": [[f"kernel_{r}_{c}.npy" for c in range(cols)] for r in range(rows)],
    }, indent=2))


def load_psf_grid(directory) -> PsfGrid:
    from pathlib import Path
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    kernels = tuple(
        tuple(np.load(d / name).astype(np.float64) for name in row)
        for row in manifest["files"])
    return PsfGrid(kernels, kernel_pitch=manifest.get("kernel_pitch_m", 1.0e-6))


def _cell_weights(length: int, cells: int) -> np.ndarray:
    """(cells, length) partition-of-unity weights: linear interpolation
    between cell centers, clamped beyond the outermost centers."""
    centers = (np.arange(cells) + 0.5) * length / cells
    x = np.arange(length) + 0.0
    idx = np.interp(x, centers, np.arange(cells))
    w = np.maximum(0.0, 1.0 - np.abs(idx[None, :] - np.arange(cells)[:, None]))
    return w


def apply_psf_grid(image: LinearImage, grid: PsfGrid) -> LinearImage:
    """Spatially varying blur: each grid cell's kernel is applied over its
    (50%-overlapping) region and results are blended with bilinear
    partition-of-unity weights. Replicate edge handling."""
    rows, cols = grid.shape
    v = image.values
    h, w = v.shape[:2]
    ksizes = [k.shape for row in grid.kernels for k in row]
    if max(s[0] for s in ksizes) > h or max(s[1] for s in ksizes) > w:
        raise ConfigError("kernel larger than image region")
    wy = _cell_weights(h, rows)
    wx = _cell_weights(w, cols)
    src = v if v.ndim == 3 else v[..., None]
    out = np.zeros_like(src)
    for r in range(rows):
        ys = np.flatnonzero(wy[r] > 0)
        y0, y1 = ys[0], ys[-1] + 1
        for c in range(cols):
            xs = np.flatnonzero(wx[c] > 0)
            x0, x1 = xs[0], xs[-1] + 1
            kernel = grid.kernels[r][c]
            pad_y, pad_x = kernel.shape[0] // 2, kernel.shape[1] // 2
            py0, py1 = max(0, y0 - pad_y), min(h, y1 + pad_y)
            px0, px1 = max(0, x0 - pad_x), min(w, x1 + pad_x)
            region = src[py0:py1, px0:px1]
            # filter2D correlates; flip for true convolution
            blurred = cv2.filter2D(region, -1, kernel[::-1, ::-1],
                                   borderType=cv2.BORDER_REPLICATE)
            if blurred.ndim == 2:
                blurred = blurred[..., None]
            blurred = blurred[y0 - py0:y0 - py0 + (y1 - y0),
                              x0 - px0:x0 - px0 + (x1 - x0)]
            weight = (wy[r][y0:y1, None] * wx[c][None, x0:x1])[..., None]
            out[y0:y1, x0:x1] += weight * blurred
    if v.ndim == 2:
        out = out[..., 0]
    return LinearImage(np.clip(out, 0.0, None))


def mosaic(image: LinearImage, pattern: str = "RGGB") -> RawImage:
    """Select one color sample per pixel following the 2x2 Bayer pattern."""
    if image.channels != 3:
        raise DomainError("mosaic needs a 3-channel image")
    if image.height % 2 or image.width % 2:
        raise DomainError("mosaic needs even dimensions")
    masks = bayer_channel_masks(pattern, (image.height, image.width))
    v = np.clip(image.values, 0.0, 1.0)
    raw = np.zeros((image.height, image.width))
    for ci, ch in enumerate(CHANNELS):
        raw[masks[ch]] = v[..., ci][masks[ch]]
    return RawImage(raw, bayer_pattern=pattern)


@dataclass(frozen=True)
class NoiseModel:
    """Per-channel heteroscedastic Gaussian noise parameters."""

    lambda_shot: dict   # channel -> slope vs signal
    lambda_read: dict   # channel -> variance floor
    gain: str = ""

    def __post_init__(self):
        for ch in CHANNELS:
            if self.lambda_shot.get(ch, 0.0) < 0 or self.lambda_read.get(ch, 0.0) < 0:
                raise DomainError("noise parameters must be >= 0")

    @staticmethod
    def uniform(lambda_shot: float, lambda_read: float, gain: str = "") -> "NoiseModel":
        return NoiseModel({ch: lambda_shot for ch in CHANNELS},
                          {ch: lambda_read for ch in CHANNELS}, gain=gain)

    def variance(self, signal: np.ndarray, channel: str) -> np.ndarray:
        return self.lambda_read[channel] + self.lambda_shot[channel] * signal

    def to_json(self) -> str:
        return json.dumps([
            {"channel": ch, "lambda_shot": self.lambda_shot[ch],
             "lambda_read": self.lambda_read[ch], "gain": self.gain}
            for ch in CHANNELS], indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NoiseModel":
        rows = json.loads(text)
        shot = {r["channel"]: r["lambda_shot"] for r in rows}
        read = {r["channel"]: r["lambda_read"] for r in rows}
        gain = rows[0].get("gain", "") if rows else ""
        return cls(shot, read, gain=gain)


# Appendix-style measured parameters for the two prototype classes.
NOISE_PRESETS = {
    "desk-gain1": NoiseModel.uniform(2.4e-4, 1.5e-6, gain="1"),
    "head-gain1": NoiseModel({"R": 1.1e-4, "G": 1.2e-4, "B": 1.2e-4},
                             {ch: 2.9e-6 for ch in CHANNELS}, gain="1"),
    "head-gain22": NoiseModel({"R": 2.1e-3, "G": 2.2e-3, "B": 2.1e-3},
                              {ch: 1.7e-5 for ch in CHANNELS}, gain="22"),
}


def _variance_map(raw: RawImage, model: NoiseModel) -> np.ndarray:
    masks = bayer_channel_masks(raw.bayer_pattern, raw.values.shape)
    var = np.zeros_like(raw.values)
    for ch in CHANNELS:
        var[masks[ch]] = model.variance(raw.values[masks[ch]], ch)
    return var


def _normal_field(shape, seed: int, frame_index: int) -> np.ndarray:
    bitgen = np.random.Philox(key=np.array([seed, frame_index], dtype=np.uint64))
    return np.random.Generator(bitgen).standard_normal(shape)


def add_noise(raw: RawImage, model: NoiseModel, seed: int,
              frame_index: int = 0) -> RawImage:
    """Add signal-dependent Gaussian noise; clamp to [0, 1].

    Deterministic per (seed, frame_index, pixel index) through the
    counter-based Philox generator, independent of threading.
    """
    var = _variance_map(raw, model)
    noise = np.sqrt(var) * _normal_field(raw.values.shape, seed, frame_index)
    return RawImage(np.clip(raw.values + noise, 0.0, 1.0),
                    bayer_pattern=raw.bayer_pattern, bit_depth=raw.bit_depth)


@dataclass(frozen=True)
class NoiseFit:
    model: NoiseModel
    stderr_shot: dict = field(default_factory=dict)
    stderr_read: dict = field(default_factory=dict)
    n_frames: int = 0


def fit_noise_model(stack: list, gain: str = "") -> NoiseFit:
    """Fit the mean/variance line per channel from a static capture stack.

    Per pixel, computes the temporal mean and (unbiased) variance, then
    least-squares fits variance = lambda_read + lambda_shot * mean.
    """
    if len(stack) < 16:
        raise DomainError("need at least 16 frames")
    pattern = stack[0].bayer_pattern
    data = np.stack([r.values for r in stack])
    mean = data.mean(axis=0)
    var = data.var(axis=0, ddof=1)
    masks = bayer_channel_masks(pattern, mean.shape)
    shot, read, se_shot, se_read = {}, {}, {}, {}
    for ch in CHANNELS:
        m = mean[masks[ch]].ravel()
        v = var[masks[ch]].ravel()
        if np.ptp(m) < 1e-4 or np.all(v < 1e-14):
            raise DomainError(
                f"channel {ch}: stack is degenerate (constant mean or zero "
                "variance); cannot fit a line")
        coef, cov = np.polyfit(m, v, 1, cov=True)
        shot[ch] = max(0.0, float(coef[0]))
        read[ch] = max(0.0, float(coef[1]))
        se_shot[ch] = float(np.sqrt(cov[0, 0]))
        se_read[ch] = float(np.sqrt(cov[1, 1]))
    return NoiseFit(NoiseModel(shot, read, gain=gain), se_shot, se_read, len(stack))


def noise_transfer(raw: RawImage, source: NoiseModel, target: NoiseModel,
                   seed: int, frame_index: int = 0) -> RawImage:
    """Re-noise a capture from a cleaner model to a noisier one by adding
    the variance difference. Refuses to 'remove' noise."""
    for ch in CHANNELS:
        if (target.lambda_read[ch] < source.lambda_read[ch] - 1e-18
                or target.lambda_shot[ch] < source.lambda_shot[ch] - 1e-18):
            raise DomainError("cannot remove noise by transfer: target model "
                              f"is cleaner than source in channel {ch}")
    masks = bayer_channel_masks(raw.bayer_pattern, raw.values.shape)
    var = np.zeros_like(raw.values)
    for ch in CHANNELS:
        d_read = target.lambda_read[ch] - source.lambda_read[ch]
        d_shot = target.lambda_shot[ch] - source.lambda_shot[ch]
        var[masks[ch]] = d_read + d_shot * raw.values[masks[ch]]
    noise = np.sqrt(np.maximum(var, 0.0)) * _normal_field(raw.values.shape, seed, frame_index)
    return RawImage(np.clip(raw.values + noise, 0.0, 1.0),
                    bayer_pattern=raw.bayer_pattern, bit_depth=raw.bit_depth)


def box_downsample(image: LinearImage, factor: int) -> LinearImage:
    if factor < 1:
        raise DomainError("factor must be >= 1")
    v = image.values
    if v.shape[0] % factor or v.shape[1] % factor:
        raise DomainError("dimensions must be divisible by the downsample factor")
    if factor == 1:
        return LinearImage(v.copy())
    h, w = v.shape[0] // factor, v.shape[1] // factor
    if v.ndim == 3:
        out = v.reshape(h, factor, w, factor, v.shape[2]).mean(axis=(1, 3))
    else:
        out = v.reshape(h, factor, w, factor).mean(axis=(1, 3))
    return LinearImage(out)


def bin2_bayer(raw: RawImage) -> RawImage:
    """2x2 same-color binning that keeps the Bayer pattern."""
    v = raw.values
    if v.shape[0] % 4 or v.shape[1] % 4:
        raise DomainError("binning needs dimensions divisible by 4")
    out = np.zeros((v.shape[0] // 2, v.shape[1] // 2))
    for r in (0, 1):
        for c in (0, 1):
            sites = v[r::2, c::2]
            binned = sites.reshape(sites.shape[0] // 2, 2,
                                   sites.shape[1] // 2, 2).mean(axis=(1, 3))
            out[r::2, c::2] = binned
    return RawImage(out, bayer_pattern=raw.bayer_pattern, bit_depth=raw.bit_depth)


def degrade_guide(image: LinearImage, factor: int, grid: PsfGrid,
                  model: NoiseModel, seed: int, pattern: str = "RGGB",
                  binning: bool = False, frame_index: int = 0) -> RawImage:
    """Full guide-camera degradation: aggressive box downsample (existing
    blur/noise treated as negligible afterwards), spatially varying PSF,
    Bayer mosaic, then noise synthesis."""
    small = box_downsample(image, factor)
    blurred = apply_psf_grid(small, grid)
    raw = mosaic(LinearImage(np.clip(blurred.values, 0.0, 1.0)), pattern)
    if binning:
        raw = bin2_bayer(raw)
    return add_noise(raw, model, seed, frame_index=frame_index)
