"""Image-quality and task metrics: PSNR, SSIM, flat-patch noise estimation,
slanted-edge MTF50, and the QR modules-per-degree measure."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DomainError
from .image import LinearImage

PSNR_CAP_DB = 99.0


def _values(image) -> np.ndarray:
    if isinstance(image, LinearImage):
        return image.values
    return np.asarray(image, dtype=np.float64)


def _luminance(image) -> np.ndarray:
    if isinstance(image, LinearImage):
        return image.luminance()
    v = np.asarray(image, dtype=np.float64)
    if v.ndim == 3:
        return 0.2126 * v[..., 0] + 0.7152 * v[..., 1] + 0.0722 * v[..., 2]
    return v


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 99 dB for identical inputs."""
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape:
        raise DomainError("image dimensions differ")
    mse = float(np.mean((va - vb) ** 2))
    if mse <= 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / mse))


def ssim(a, b, window: int = 8, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean local SSIM on luminance over uniform sliding windows."""
    x, y = _luminance(a), _luminance(b)
    if x.shape != y.shape:
        raise DomainError("image dimensions differ")
    if min(x.shape) < window:
        raise DomainError("image smaller than the SSIM window")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    n = window * window
    cov_norm = n / (n - 1)  # sample covariance
    ux = uniform_filter(x, window)
    uy = uniform_filter(y, window)
    uxx = uniform_filter(x * x, window)
    uyy = uniform_filter(y * y, window)
    uxy = uniform_filter(x * y, window)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)
         / ((ux * ux + uy * uy + c1) * (vx + vy + c2)))
    pad = (window - 1) // 2
    return float(s[pad:s.shape[0] - pad, pad:s.shape[1] - pad].mean())


@dataclass(frozen=True)
class QrTarget:
    """QR code of p x p modules, physical width w, viewed from distance d."""

    module_count: int
    physical_width: float   # meters
    viewing_distance: float  # meters

    def __post_init__(self):
        if self.module_count <= 0 or self.physical_width <= 0 \
                or self.viewing_distance <= 0:
            raise DomainError("QR target parameters must be > 0")


def ppd_qr(target: QrTarget) -> float:
    """Modules per degree of visual angle: p / (2*arctan(w/2d)), degrees."""
    half_angle_deg = math.degrees(math.atan(
        target.physical_width / (2.0 * target.viewing_distance)))
    return target.module_count / (2.0 * half_angle_deg)


def noise_std(patch) -> np.ndarray:
    """Per-channel sample std of a flat patch after removing a planar trend."""
    v = _values(patch)
    if v.ndim == 2:
        v = v[..., None]
    h, w = v.shape[:2]
    if h < 16 or w < 16:
        raise DomainError("patch must be at least 16x16")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    basis = np.stack([np.ones(h * w), xx.ravel(), yy.ravel()], axis=1)
    out = np.empty(v.shape[2])
    for c in range(v.shape[2]):
        coef, *_ = np.linalg.lstsq(basis, v[..., c].ravel(), rcond=None)
        resid = v[..., c].ravel() - basis @ coef
        out[c] = resid.std(ddof=3)  # 3 fitted parameters
    return out


def mtf50_slanted_edge(image, edge_roi: tuple, bin_width: float = 0.25) -> float:
    """MTF50 (cycles/pixel) from a near-vertical slanted edge.

    Standard ESF -> LSF -> FFT estimation: per-row edge locations from
    gradient centroids, a straight-line edge fit, projection of all ROI
    pixels onto the edge normal, binned into an oversampled edge-spread
    function, differentiated, windowed, and Fourier-transformed.
    """
    x0, y0, x1, y1 = edge_roi
    lum = _luminance(image)[y0:y1, x0:x1]
    h, w = lum.shape
    if h < 16 or w < 16:
        raise DomainError("edge ROI too small")
    grad = np.abs(np.diff(lum, axis=1))
    strength = grad.max(axis=1)
    span = float(lum.max() - lum.min())
    good = strength > 0.05 * span if span > 1e-6 else np.zeros(h, bool)
    if span < 1e-6 or np.count_nonzero(good) < 8:
        raise DomainError("no edge detected in ROI")
    xs = np.arange(w - 1) + 0.5
    centroids = (grad * xs).sum(axis=1) / np.maximum(grad.sum(axis=1), 1e-12)
    rows = np.arange(h, dtype=np.float64)[good]
    coef = np.polyfit(rows, centroids[good], 1)
    slope, intercept = coef
    # signed distance from the fitted edge line, in pixels along the normal
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dist = (xx - (slope * yy + intercept)) / math.hypot(1.0, slope)

    half = min(20.0, (w / 2.0) * 0.8)
    sel = np.abs(dist) <= half
    d = dist[sel]
    v = lum[sel]
    edges = np.arange(-half, half + bin_width, bin_width)
    idx = np.clip(np.digitize(d, edges) - 1, 0, len(edges) - 2)
    sums = np.bincount(idx, weights=v, minlength=len(edges) - 1)
    counts = np.bincount(idx, minlength=len(edges) - 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    filled = counts > 0
    if np.count_nonzero(filled) < 8:
        raise DomainError("no edge detected in ROI")
    esf = np.interp(centers, centers[filled], sums[filled] / counts[filled])
    lsf = np.gradient(esf, bin_width)
    peak = int(np.argmax(np.abs(lsf)))
    win = np.hanning(len(lsf))
    win = np.roll(win, peak - len(lsf) // 2)
    mtf = np.abs(np.fft.rfft(lsf * win))
    if mtf[0] <= 1e-12:
        raise DomainError("no edge detected in ROI")
    mtf /= mtf[0]
    freqs = np.fft.rfftfreq(len(lsf), d=bin_width)  # cycles per pixel
    below = np.flatnonzero(mtf < 0.5)
    if len(below) == 0:
        return float(freqs[-1])
    j = below[0]
    if j == 0:
        return 0.0
    f0, f1 = freqs[j - 1], freqs[j]
    m0, m1 = mtf[j - 1], mtf[j]
    return float(f0 + (0.5 - m0) / (m1 - m0) * (f1 - f0))
