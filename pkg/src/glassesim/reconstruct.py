"""Classical reconstruction pipeline: demosaic, burst merge, epipolar
plane-sweep matching, warping, confidence fusion with guide fallback, and
triangulated depth.

Matching is normalized cross-correlation over a plane sweep: the detail
image is warped to the target view through plane homographies at
inverse-depth-uniform distances, block NCC is scored per target pixel,
and the best sample is refined by a parabola fit along the sweep (plus an
optional soft-epipolar perpendicular step).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import cv2
import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import ConfigError, DomainError, GeometryError
from .image import LinearImage, RawImage, bayer_channel_masks
from .rig import (RigSpec, intrinsics, pixel_rays, plane_homography,
                  prewarp_homography, project, relative_motion)


@dataclass(frozen=True)
class FusionConfig:
    confidence_threshold: float = 0.5      # tau
    epipolar_tolerance_px: float = 3.0
    block_radius: int = 4                  # NCC window = 2r+1
    depth_range: tuple = (0.5, 20.0)       # meters (near, far)
    depth_samples: int = 96                # sweep steps, inverse-depth uniform
    tile_size: int = 256
    tile_overlap: int = 32
    guide_floor: float = 1e-6              # epsilon_g fallback weight
    min_parallax_rad: float = 5e-4         # triangulation conditioning
    refine_perpendicular: bool = True
    score_scale: int = 0                   # NCC scoring downsample; 0 = auto
    prefilter_sigma: float = 1.0           # candidate blur (scoring px) before NCC
    depth_edge_fraction: float = 0.2       # occlusion veto sensitivity; 0 = off

    def __post_init__(self):
        near, far = self.depth_range
        if not 0 < near < far:
            raise ConfigError("depth range must satisfy 0 < near < far")
        if self.tile_overlap < 8:
            raise ConfigError("tile overlap must be >= 8 px")
        if self.depth_samples < 2 or self.block_radius < 1:
            raise ConfigError("need >= 2 depth samples and block radius >= 1")
        if self.score_scale < 0:
            raise ConfigError("score_scale must be >= 0")
        if self.prefilter_sigma < 0:
            raise ConfigError("prefilter_sigma must be >= 0")
        if self.depth_edge_fraction < 0:
            raise ConfigError("depth_edge_fraction must be >= 0")

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["depth_range"] = list(self.depth_range)
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FusionConfig":
        d = json.loads(text)
        if "depth_range" in d:
            d["depth_range"] = tuple(d["depth_range"])
        return cls(**d)


@dataclass
class CorrespondenceField:
    """Per-target-pixel match into one detail image, over a target rect."""

    dx: np.ndarray          # displacement: detail_x = target_x + dx
    dy: np.ndarray
    confidence: np.ndarray  # [0, 1]
    valid: np.ndarray       # bool
    detail_shape: tuple     # (H, W) of the detail image
    origin: tuple = (0, 0)  # (x0, y0) of the rect in target coords
    target_shape: tuple | None = None

    def __post_init__(self):
        shp = self.dx.shape
        if not (self.dy.shape == self.confidence.shape == self.valid.shape == shp):
            raise DomainError("field component shapes disagree")
        if self.confidence.size and (self.confidence.min() < 0 or self.confidence.max() > 1):
            raise DomainError("confidence must lie in [0, 1]")
        if np.any(self.valid):
            h, w = shp
            x0, y0 = self.origin
            xs = x0 + np.arange(w)[None, :] + self.dx
            ys = y0 + np.arange(h)[:, None] + self.dy
            dh, dw = self.detail_shape
            if (xs[self.valid].min() < -0.5 or xs[self.valid].max() > dw - 0.5
                    or ys[self.valid].min() < -0.5 or ys[self.valid].max() > dh - 0.5):
                raise DomainError("valid correspondences must land inside the detail")

    @property
    def shape(self) -> tuple:
        return self.dx.shape


# --- demosaic ------------------------------------------------------------

# Gradient-corrected bilinear kernels (Malvar-He-Cutler), scaled by 1/8.
_K_G_AT_RB = np.array([[0, 0, -1, 0, 0], [0, 0, 2, 0, 0], [-1, 2, 4, 2, -1],
                       [0, 0, 2, 0, 0], [0, 0, -1, 0, 0]]) / 8.0
_K_RB_ROW = np.array([[0, 0, 0.5, 0, 0], [0, -1, 0, -1, 0], [-1, 4, 5, 4, -1],
                      [0, -1, 0, -1, 0], [0, 0, 0.5, 0, 0]]) / 8.0
_K_RB_COL = _K_RB_ROW.T
_K_RB_DIAG = np.array([[0, 0, -1.5, 0, 0], [0, 2, 0, 2, 0], [-1.5, 0, 6, 0, -1.5],
                       [0, 2, 0, 2, 0], [0, 0, -1.5, 0, 0]]) / 8.0

_SITE_LAYOUT = {
    "RGGB": (("R", "Gr"), ("Gb", "B")),
    "BGGR": (("B", "Gb"), ("Gr", "R")),
    "GRBG": (("Gr", "R"), ("B", "Gb")),
    "GBRG": (("Gb", "B"), ("R", "Gr")),
}


def _site_masks(pattern: str, shape) -> dict:
    layout = _SITE_LAYOUT[pattern]
    h, w = shape
    rows = np.arange(h)[:, None] % 2
    cols = np.arange(w)[None, :] % 2
    masks = {}
    for r in (0, 1):
        for c in (0, 1):
            masks[layout[r][c]] = (rows == r) & (cols == c)
    return masks


def demosaic(raw: RawImage) -> LinearImage:
    """Gradient-corrected linear interpolation to full RGB."""
    v = raw.values
    sites = _site_masks(raw.bayer_pattern, v.shape)
    conv = {name: cv2.filter2D(v, -1, k[::-1, ::-1], borderType=cv2.BORDER_REFLECT_101)
            for name, k in (("g", _K_G_AT_RB), ("row", _K_RB_ROW),
                            ("col", _K_RB_COL), ("diag", _K_RB_DIAG))}
    out = np.empty(v.shape + (3,))
    r, g, b = out[..., 0], out[..., 1], out[..., 2]
    # red: measured at R; horizontal neighbors at Gr sites; vertical at Gb;
    # diagonal at B. Blue is the mirror image.
    r[:] = np.select([sites["R"], sites["Gr"], sites["Gb"]],
                     [v, conv["row"], conv["col"]], conv["diag"])
    b[:] = np.select([sites["B"], sites["Gb"], sites["Gr"]],
                     [v, conv["row"], conv["col"]], conv["diag"])
    g[:] = np.where(sites["Gr"] | sites["Gb"], v, conv["g"])
    return LinearImage(np.clip(out, 0.0, 1.0))


# --- burst merge ---------------------------------------------------------

def _quarter_luma(raw: RawImage) -> np.ndarray:
    v = raw.values
    return v.reshape(v.shape[0] // 2, 2, v.shape[1] // 2, 2).mean(axis=(1, 3))


def _rigid_matrix(dx: float, dy: float, theta: float, center) -> np.ndarray:
    """2x3 affine for rotation about ``center`` followed by translation."""
    c, s = math.cos(theta), math.sin(theta)
    cx, cy = center
    return np.array([[c, -s, dx + cx - c * cx + s * cy],
                     [s, c, dy + cy - s * cx - c * cy]])


def estimate_alignment(frames: list, response_threshold: float = 0.03) -> list:
    """Per-frame rigid motion to the middle reference frame.

    Returns a list of dicts with dx, dy (full-res pixels), theta (radians)
    and the phase-correlation response; ``ok`` is False for frames whose
    correlation peak falls below ``response_threshold``.
    """
    if len(frames) < 2:
        raise DomainError("burst needs at least 2 frames")
    shapes = {f.values.shape for f in frames}
    if len(shapes) != 1:
        raise DomainError("burst frames must share dimensions")
    ref_i = len(frames) // 2
    # window applied by hand: cv2.phaseCorrelate mutates windowed inputs
    win = cv2.createHanningWindow(_quarter_luma(frames[0]).shape[::-1], cv2.CV_32F)
    quarters = [np.float32(_quarter_luma(f)) * win for f in frames]
    h, w = frames[0].values.shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    ref_full = np.float32(demosaic(frames[ref_i]).luminance())
    gy, gx = np.gradient(np.float64(ref_full))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    jr = -gx * (yy - center[1]) + gy * (xx - center[0])
    # borders see replicated content after the warp; keep them out of the fit
    mrg = min(8, h // 8, w // 8)
    core = (slice(mrg, h - mrg), slice(mrg, w - mrg))
    results = []
    for i, frame in enumerate(frames):
        if i == ref_i:
            results.append({"dx": 0.0, "dy": 0.0, "theta": 0.0,
                            "response": 1.0, "ok": True})
            continue
        (sx, sy), response = cv2.phaseCorrelate(quarters[i], quarters[ref_i])
        if response < response_threshold:
            results.append({"dx": 0.0, "dy": 0.0, "theta": 0.0,
                            "response": float(response), "ok": False})
            continue
        dx, dy, theta = 2.0 * sx, 2.0 * sy, 0.0
        # one least-squares gradient refinement of (dx, dy, theta)
        cur = np.float32(demosaic(frame).luminance())
        moved = cv2.warpAffine(cur, _rigid_matrix(dx, dy, theta, center), (w, h),
                               flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
        resid = (moved - ref_full).astype(np.float64)[core]
        a = np.stack([gx[core].ravel(), gy[core].ravel(), jr[core].ravel()], axis=1)
        upd, *_ = np.linalg.lstsq(a, resid.ravel(), rcond=1e-6)
        if abs(upd[0]) < 5 and abs(upd[1]) < 5 and abs(upd[2]) < 0.05:
            dx, dy, theta = dx + upd[0], dy + upd[1], theta + upd[2]
        results.append({"dx": float(dx), "dy": float(dy), "theta": float(theta),
                        "response": float(response), "ok": True})
    return results


def burst_merge(frames: list, clip_sigma: float = 2.5,
                report: dict | None = None) -> LinearImage:
    """Align a burst of raw frames and merge with a sigma-clipped mean.

    Alignment is global translation+rotation to the middle frame (phase
    correlation on quarter-resolution luma plus one gradient refinement).
    Frames whose correlation peak is too low are dropped; dropping all
    frames is an error.
    """
    align = estimate_alignment(frames)
    kept = [i for i, a in enumerate(align) if a["ok"]]
    if report is not None:
        report["alignment"] = align
        report["kept"] = kept
    if not kept:
        raise DomainError("all burst frames failed alignment")
    h, w = frames[0].values.shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    stack = np.empty((len(kept), h, w, 3))
    masks = np.empty((len(kept), h, w), bool)
    ones = np.ones((h, w), np.float32)
    for si, i in enumerate(kept):
        rgb = demosaic(frames[i]).values.astype(np.float32)
        a = align[i]
        m = _rigid_matrix(a["dx"], a["dy"], a["theta"], center)
        stack[si] = cv2.warpAffine(rgb, m, (w, h), flags=cv2.INTER_CUBIC,
                                   borderMode=cv2.BORDER_REPLICATE)
        masks[si] = cv2.warpAffine(ones, m, (w, h), flags=cv2.INTER_NEAREST,
                                   borderMode=cv2.BORDER_CONSTANT) > 0.5
    weight = masks[..., None].astype(np.float64)
    wsum = weight.sum(axis=0)
    mean = (stack * weight).sum(axis=0) / np.maximum(wsum, 1)
    if len(kept) >= 3:
        var = ((stack - mean) ** 2 * weight).sum(axis=0) / np.maximum(wsum, 1)
        keep = weight * (np.abs(stack - mean) <= clip_sigma * np.sqrt(var) + 1e-12)
        ksum = keep.sum(axis=0)
        mean = np.where(ksum > 0, (stack * keep).sum(axis=0) / np.maximum(ksum, 1), mean)
    mean = np.where(wsum > 0, mean, stack[0])
    return LinearImage(np.clip(mean, 0.0, 1.0))


# --- epipolar matching ---------------------------------------------------

def upsample_guide(guide: LinearImage, factor: int) -> LinearImage:
    h, w = guide.values.shape[:2]
    up = cv2.resize(guide.values, (w * factor, h * factor),
                    interpolation=cv2.INTER_CUBIC)
    return LinearImage(np.clip(up, 0.0, None))


def _apply_h(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = np.hstack([pts, np.ones((len(pts), 1))]) @ h.T
    return p[:, :2] / p[:, 2:3]


def _visibility_rect(rig: RigSpec, detail_index: int, depth_range: tuple,
                     pad: int) -> tuple | None:
    """Target-image bounding rect where the detail can contribute."""
    s = rig.details[detail_index].camera.sensor
    corners = np.array([[0, 0], [s.width_px - 1, 0], [0, s.height_px - 1],
                        [s.width_px - 1, s.height_px - 1]], dtype=np.float64)
    pts = []
    for d in depth_range:
        try:
            pts.append(_apply_h(prewarp_homography(rig, detail_index, d), corners))
        except GeometryError:
            continue
    if not pts:
        return None
    pts = np.concatenate(pts)
    th, tw = rig.target_shape
    x0 = max(0, int(math.floor(pts[:, 0].min())) - pad)
    y0 = max(0, int(math.floor(pts[:, 1].min())) - pad)
    x1 = min(tw, int(math.ceil(pts[:, 0].max())) + pad + 1)
    y1 = min(th, int(math.ceil(pts[:, 1].max())) + pad + 1)
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1, y1)


def _box(img: np.ndarray, radius: int) -> np.ndarray:
    size = 2 * radius + 1
    return cv2.boxFilter(img, -1, (size, size), normalize=True,
                         borderType=cv2.BORDER_REFLECT_101)


def _ncc(guide: np.ndarray, cand: np.ndarray, radius: int,
         mg: np.ndarray, vg: np.ndarray) -> np.ndarray:
    mc = _box(cand, radius)
    vc = np.maximum(_box(cand * cand, radius) - mc * mc, 0.0)
    cov = _box(guide * cand, radius) - mg * mc
    denom = np.sqrt(vg * vc)
    return np.where(denom > 1e-10, cov / np.maximum(denom, 1e-10), 0.0)


def _empty_field(rig: RigSpec, detail_index: int) -> CorrespondenceField:
    s = rig.details[detail_index].camera.sensor
    z = np.zeros((0, 0), np.float32)
    return CorrespondenceField(z, z.copy(), z.copy(), np.zeros((0, 0), bool),
                               detail_shape=(s.height_px, s.width_px),
                               origin=(0, 0), target_shape=rig.target_shape)


def match_epipolar(guide_up: LinearImage, detail: LinearImage, rig: RigSpec,
                   detail_index: int, cfg: FusionConfig) -> CorrespondenceField:
    """Plane-sweep NCC matching of one detail against the upsampled guide.

    Sweeps ``cfg.depth_samples`` fronto-parallel planes at inverse-depth-
    uniform distances, warping the detail to the target view through each
    plane homography and scoring block NCC on luminance. The best sample
    is refined by a parabola fit along the sweep; an optional off-segment
    step perpendicular to the epipolar direction uses the soft weight
    w = 1 / (1 + (dist / epsilon)^2).

    Scoring runs on a grid coarsened by ``cfg.score_scale`` (default: the
    rig's upsample factor, i.e. guide resolution). The guide carries no
    content above its native band, so scoring there matches the two
    images' frequency content and averages noise over real structure.
    """
    if guide_up.values.shape[:2] != rig.target_shape:
        raise DomainError("guide_up must be at target resolution")
    near, far = cfg.depth_range
    sc = cfg.score_scale or rig.upsample_factor
    rect = _visibility_rect(rig, detail_index, cfg.depth_range,
                            pad=sc * (cfg.block_radius + 2))
    if rect is None:
        return _empty_field(rig, detail_index)
    x0, y0, x1, y1 = rect
    # shrink to a whole number of scoring cells
    x1 -= (x1 - x0) % sc
    y1 -= (y1 - y0) % sc
    rh, rw = y1 - y0, x1 - x0
    if rh < sc or rw < sc:
        return _empty_field(rig, detail_index)
    rhs, rws = rh // sc, rw // sc
    g = np.float32(guide_up.luminance()[y0:y1, x0:x1])
    g_s = cv2.resize(g, (rws, rhs), interpolation=cv2.INTER_AREA) if sc > 1 else g
    d_lum = np.float32(detail.luminance())
    mg = _box(g_s, cfg.block_radius)
    vg = np.maximum(_box(g_s * g_s, cfg.block_radius) - mg * mg, 0.0)

    # scoring-grid pixel (u, v) sits at target ((s-1)/2 + x0 + s*u, ...)
    to_full = np.array([[sc, 0.0, x0 + (sc - 1) / 2.0],
                        [0.0, sc, y0 + (sc - 1) / 2.0], [0.0, 0.0, 1.0]])
    n_s = cfg.depth_samples
    inv_depths = 1.0 / near + np.arange(n_s) / (n_s - 1) * (1.0 / far - 1.0 / near)

    best = np.full((rhs, rws), -np.inf, np.float32)
    best_k = np.zeros((rhs, rws), np.int32)
    s_bm1 = np.full((rhs, rws), np.nan, np.float32)
    s_bp1 = np.full((rhs, rws), np.nan, np.float32)
    prev = None
    for k, inv_d in enumerate(inv_depths):
        h_k = plane_homography(rig, detail_index, 1.0 / inv_d) @ to_full
        cand = cv2.warpPerspective(d_lum, h_k, (rws, rhs),
                                   flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                                   borderMode=cv2.BORDER_REPLICATE)
        if cfg.prefilter_sigma > 0:
            # approximate the guide's extra optical blur so NCC compares
            # matching frequency bands
            cand = cv2.GaussianBlur(cand, (0, 0), cfg.prefilter_sigma)
        score = np.float32(_ncc(g_s, cand, cfg.block_radius, mg, vg))
        take = score > best
        succ = (best_k == k - 1) & ~take if k else np.zeros_like(take)
        s_bp1[succ] = score[succ]
        if prev is not None:
            s_bm1[take] = prev[take]
        best[take] = score[take]
        best_k[take] = k
        s_bp1[take] = np.nan
        prev = score

    denom = s_bm1 - 2.0 * best + s_bp1
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = 0.5 * (s_bm1 - s_bp1) / denom
    delta = np.where(np.isfinite(delta) & (denom < -1e-9),
                     np.clip(delta, -0.5, 0.5), 0.0)
    refined = np.clip(best_k + delta, 0, n_s - 1)
    inv_d_s = np.float32(1.0 / near + refined / (n_s - 1) * (1.0 / far - 1.0 / near))
    if min(rhs, rws) >= 3:
        # reject isolated sweep outliers before interpolating
        inv_d_s = cv2.medianBlur(inv_d_s, 3)
    if sc > 1:
        inv_d_map = cv2.resize(inv_d_s, (rw, rh), interpolation=cv2.INTER_LINEAR)
        best = cv2.resize(best, (rw, rh), interpolation=cv2.INTER_LINEAR)
    else:
        inv_d_map = inv_d_s

    cols, rows = np.meshgrid(np.arange(x0, x1, dtype=np.float64),
                             np.arange(y0, y1, dtype=np.float64))
    px = np.stack([cols.ravel(), rows.ravel()], axis=1)
    origin, dirs = pixel_rays(rig.guide, px, scale=rig.upsample_factor)
    pts = origin + (1.0 / inv_d_map.ravel())[:, None] * dirs
    det_pc = rig.details[detail_index]
    uv, z = project(det_pc, pts)
    pos = uv.reshape(rh, rw, 2)

    if cfg.refine_perpendicular:
        uv_n, _ = project(det_pc, origin + near * dirs)
        uv_f, _ = project(det_pc, origin + far * dirs)
        tang = (uv_f - uv_n).reshape(rh, rw, 2)
        norm = np.linalg.norm(tang, axis=2, keepdims=True)
        tang = np.divide(tang, norm, out=np.zeros_like(tang), where=norm > 1e-9)
        perp = np.stack([-tang[..., 1], tang[..., 0]], axis=2)
        w_soft = 1.0 / (1.0 + (1.0 / cfg.epipolar_tolerance_px) ** 2)
        rp = cfg.block_radius * sc  # same physical context at full res
        mg_f = _box(g, rp)
        vg_f = np.maximum(_box(g * g, rp) - mg_f * mg_f, 0.0)
        scores = []
        for off in (-1.0, 0.0, 1.0):
            p = np.float32(pos + off * perp)
            cand = cv2.remap(d_lum, p[..., 0], p[..., 1], cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_REPLICATE)
            s = _ncc(g, cand, rp, mg_f, vg_f)
            scores.append(s * (w_soft if off else 1.0))
        sm, s0, sp = scores
        den_p = sm - 2.0 * s0 + sp
        with np.errstate(invalid="ignore", divide="ignore"):
            dperp = 0.5 * (sm - sp) / den_p
        dperp = np.where(np.isfinite(dperp) & (den_p < -1e-9),
                         np.clip(dperp, -1.0, 1.0), 0.0)
        pos = pos + dperp[..., None] * perp

    dh, dw = d_lum.shape
    in_bounds = ((pos[..., 0] >= -0.5) & (pos[..., 0] <= dw - 0.5)
                 & (pos[..., 1] >= -0.5) & (pos[..., 1] <= dh - 0.5)
                 & (z.reshape(rh, rw) > 0))
    valid = in_bounds & (best > 0) & np.isfinite(best)
    confidence = np.clip(np.where(np.isfinite(best), best, 0.0), 0.0, 1.0) ** 2
    dx = np.float32(pos[..., 0] - cols)
    dy = np.float32(pos[..., 1] - rows)
    dx[~valid] = 0.0
    dy[~valid] = 0.0
    return CorrespondenceField(dx, dy, np.float32(confidence), valid,
                               detail_shape=(dh, dw), origin=(x0, y0),
                               target_shape=rig.target_shape)


def warp_detail(detail: LinearImage, fld: CorrespondenceField):
    """Backward-warp the detail onto the field's target rect (bicubic).

    Returns (image over the rect, mask = valid and in-bounds).
    """
    h, w = fld.shape
    if h == 0 or w == 0:
        return LinearImage(np.zeros((0, 0, 3))), np.zeros((0, 0), bool)
    x0, y0 = fld.origin
    map_x = np.float32(x0 + np.arange(w)[None, :] + fld.dx)
    map_y = np.float32(y0 + np.arange(h)[:, None] + fld.dy)
    src = np.float32(detail.values)
    out = cv2.remap(src, map_x, map_y, cv2.INTER_CUBIC,
                    borderMode=cv2.BORDER_REPLICATE)
    dh, dw = fld.detail_shape
    mask = (fld.valid & (map_x >= 0) & (map_x <= dw - 1)
            & (map_y >= 0) & (map_y <= dh - 1))
    return LinearImage(np.clip(np.float64(out), 0.0, None)), mask


def occlusion_veto(fields: list, rig: RigSpec, cfg: FusionConfig) -> list:
    """Invalidate matches inside likely occluded strips, in place.

    Block scoring cannot detect thin occlusions on its own: the scoring
    window straddling an occluder silhouette is dominated by its correct
    neighbors, so the hidden strip gets confidently warped wrong content.
    The silhouettes do show up as depth discontinuities in the pooled
    confidently-matched depth map, and the strip a given detail cannot
    see hugs a silhouette with width at most
    baseline * f_target * inverse-depth-gap. So: find discontinuities
    exceeding ``cfg.depth_edge_fraction`` of the inverse-depth span in
    the pooled map, and per detail drop a strip of that worst-case width
    around them (the guide takes over there).

    ``fields[i]`` pairs with ``rig.details[i]``; entries may be None.
    Returns the per-field veto masks (None where nothing was vetoed).
    """
    th, tw = rig.target_shape
    near, far = cfg.depth_range
    span = 1.0 / near - 1.0 / far
    sc = cfg.score_scale or rig.upsample_factor
    r = cfg.block_radius
    isum = np.zeros((th, tw), np.float32)
    wsum = np.zeros((th, tw), np.float32)
    for i, fld in enumerate(fields):
        if fld is None or fld.shape[0] == 0:
            continue
        depth, ok = _triangulate_field(fld, rig, i, cfg)
        trust = ok & fld.valid & (fld.confidence >= cfg.confidence_threshold)
        x0, y0 = fld.origin
        h, w = fld.shape
        sl = (slice(y0, y0 + h), slice(x0, x0 + w))
        isum[sl] += np.where(trust, 1.0 / np.maximum(depth, 1e-9), 0.0)
        wsum[sl] += trust
    hs, ws = max(1, th // sc), max(1, tw // sc)
    if min(hs, ws) < 5 or not np.any(wsum):
        return [None] * len(fields)
    invs = cv2.resize(isum, (ws, hs), interpolation=cv2.INTER_AREA)
    ts = cv2.resize(wsum, (ws, hs), interpolation=cv2.INTER_AREA)
    have = ts > 0.25
    mean = np.where(have, invs / np.maximum(ts, 1e-6), 0.5 * span)
    med = cv2.medianBlur(np.float32(mean), 5)
    kern = np.ones((2 * r + 1,) * 2, np.uint8)
    mx = cv2.dilate(np.float32(np.where(have, med, -1e9)), kern)
    mn = -cv2.dilate(np.float32(np.where(have, -med, -1e9)), kern)
    rng = np.where((mx > -1e8) & (mn < 1e8), mx - mn, 0.0)
    jump = np.float32(rng > cfg.depth_edge_fraction * span)
    if not np.any(jump):
        return [None] * len(fields)
    fx_t = intrinsics(rig.guide.camera, rig.upsample_factor)[0, 0]
    vetos = []
    for i, fld in enumerate(fields):
        if fld is None or fld.shape[0] == 0:
            vetos.append(None)
            continue
        _, t_rel = relative_motion(rig, i)
        strip = int(math.ceil(float(np.linalg.norm(t_rel)) * fx_t * span / sc / 2.0))
        grown = cv2.dilate(jump, np.ones((2 * (strip + r) + 1,) * 2, np.uint8))
        full = cv2.resize(grown, (tw, th), interpolation=cv2.INTER_LINEAR) > 0
        x0, y0 = fld.origin
        h, w = fld.shape
        veto = full[y0:y0 + h, x0:x0 + w]
        fld.valid &= ~veto
        fld.confidence = np.where(veto, 0.0, fld.confidence)
        fld.dx = np.where(veto, 0.0, fld.dx)
        fld.dy = np.where(veto, 0.0, fld.dy)
        vetos.append(veto)
    return vetos


# --- fusion --------------------------------------------------------------

@dataclass
class WarpedSource:
    """One warped detail over a rect of the target image."""

    image: np.ndarray       # (h, w, 3)
    mask: np.ndarray        # (h, w) bool
    confidence: np.ndarray  # (h, w)
    origin: tuple = (0, 0)

    @property
    def rect(self) -> tuple:
        x0, y0 = self.origin
        return (x0, y0, x0 + self.image.shape[1], y0 + self.image.shape[0])


def _source_gain(guide_up: np.ndarray, src: WarpedSource, tau: float) -> float:
    x0, y0, x1, y1 = src.rect
    if x1 <= x0 or y1 <= y0:
        return 1.0
    g = guide_up[y0:y1, x0:x1]
    g_lum = g.mean(axis=2)
    s_lum = src.image.mean(axis=2)
    ok = src.mask & (src.confidence >= tau) & (g_lum > 0.01) & (s_lum > 0.01)
    if np.count_nonzero(ok) < 64:
        return 1.0
    ratio = np.median(g_lum[ok] / s_lum[ok])
    return float(np.clip(ratio, 0.2, 5.0))


def _cosine_ramp(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(np.pi * (np.arange(n) + 0.5) / n)


def _tile_window(length: int, t0: int, t1: int, overlap: int, total: int) -> np.ndarray:
    w = np.ones(t1 - t0)
    ramp = _cosine_ramp(min(overlap, t1 - t0))
    if t0 > 0:
        w[:len(ramp)] = np.minimum(w[:len(ramp)], ramp)
    if t1 < total:
        w[-len(ramp):] = np.minimum(w[-len(ramp):], ramp[::-1])
    return w


def _tile_starts(total: int, tile: int, overlap: int) -> list:
    if total <= tile:
        return [0]
    stride = tile - overlap
    starts = list(range(0, total - tile, stride))
    starts.append(total - tile)
    return starts


def fuse(guide_up: LinearImage, sources: list, cfg: FusionConfig,
         detail_weight_out: np.ndarray | None = None) -> LinearImage:
    """Confidence-weighted blend of warped details with guide fallback.

    Per pixel, each source contributes weight confidence*mask (zeroed
    below the threshold); the guide always keeps at least the floor weight
    and takes over fully where no source is trusted. Each source is gain-
    corrected by the median luminance ratio to the guide first. Processing
    runs in overlapping tiles blended with a raised-cosine window.

    ``detail_weight_out``, if given, receives the per-pixel maximum detail
    weight (provenance diagnostic).
    """
    gv = guide_up.values
    if gv.ndim == 2:
        gv = np.repeat(gv[..., None], 3, axis=2)
    th, tw = gv.shape[:2]
    gains = [_source_gain(gv, s, cfg.confidence_threshold) for s in sources]
    num = np.zeros((th, tw, 3))
    den = np.zeros((th, tw, 1))
    max_w_full = np.zeros((th, tw)) if detail_weight_out is not None else None
    for ty in _tile_starts(th, cfg.tile_size, cfg.tile_overlap):
        ty1 = min(th, ty + cfg.tile_size)
        wy = _tile_window(th, ty, ty1, cfg.tile_overlap, th)
        for tx in _tile_starts(tw, cfg.tile_size, cfg.tile_overlap):
            tx1 = min(tw, tx + cfg.tile_size)
            wx = _tile_window(tw, tx, tx1, cfg.tile_overlap, tw)
            window = (wy[:, None] * wx[None, :])[..., None]
            g_tile = gv[ty:ty1, tx:tx1]
            wsum = np.zeros((ty1 - ty, tx1 - tx, 1))
            acc = np.zeros((ty1 - ty, tx1 - tx, 3))
            max_w = np.zeros((ty1 - ty, tx1 - tx))
            for src, gain in zip(sources, gains):
                sx0, sy0, sx1, sy1 = src.rect
                ix0, iy0 = max(tx, sx0), max(ty, sy0)
                ix1, iy1 = min(tx1, sx1), min(ty1, sy1)
                if ix1 <= ix0 or iy1 <= iy0:
                    continue
                sub = (slice(iy0 - sy0, iy1 - sy0), slice(ix0 - sx0, ix1 - sx0))
                conf = src.confidence[sub]
                w = np.where((conf >= cfg.confidence_threshold) & src.mask[sub],
                             conf, 0.0)
                tsl = (slice(iy0 - ty, iy1 - ty), slice(ix0 - tx, ix1 - tx))
                acc[tsl] += w[..., None] * (gain * src.image[sub])
                wsum[tsl] += w[..., None]
                max_w[tsl] = np.maximum(max_w[tsl], w)
            w_g = np.maximum(cfg.guide_floor, 1.0 - max_w)[..., None]
            tile_out = (w_g * g_tile + acc) / (w_g + wsum)
            num[ty:ty1, tx:tx1] += window * tile_out
            den[ty:ty1, tx:tx1] += window
            if max_w_full is not None:
                max_w_full[ty:ty1, tx:tx1] = np.maximum(
                    max_w_full[ty:ty1, tx:tx1], max_w)
    if detail_weight_out is not None:
        detail_weight_out[:] = max_w_full
    return LinearImage(np.clip(num / den, 0.0, None))


# --- depth ---------------------------------------------------------------

def _triangulate_field(fld: CorrespondenceField, rig: RigSpec,
                       detail_index: int, cfg: FusionConfig):
    """Midpoint triangulation per valid pixel; returns (depth, ok) over the
    field's rect. Depth is z in the guide camera frame."""
    h, w = fld.shape
    depth = np.full((h, w), np.inf)
    ok = np.zeros((h, w), bool)
    if not np.any(fld.valid):
        return depth, ok
    x0, y0 = fld.origin
    sel = np.flatnonzero(fld.valid.ravel())
    cols, rows = np.meshgrid(np.arange(x0, x0 + w, dtype=np.float64),
                             np.arange(y0, y0 + h, dtype=np.float64))
    g_px = np.stack([cols.ravel()[sel], rows.ravel()[sel]], axis=1)
    d_px = g_px + np.stack([fld.dx.ravel()[sel], fld.dy.ravel()[sel]], axis=1)
    o1, r1 = pixel_rays(rig.guide, g_px, scale=rig.upsample_factor)
    o2, r2 = pixel_rays(rig.details[detail_index], d_px)
    d1 = r1 / np.linalg.norm(r1, axis=1, keepdims=True)
    d2 = r2 / np.linalg.norm(r2, axis=1, keepdims=True)
    cross = np.cross(d1, d2)
    sin_ang = np.linalg.norm(cross, axis=1)
    b = o2 - o1
    d12 = np.einsum("ij,ij->i", d1, d2)
    det = 1.0 - d12 * d12
    bd1 = d1 @ b
    bd2 = d2 @ b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (bd1 - d12 * bd2) / det
        u = (d12 * bd1 - bd2) / det
    mid = 0.5 * (o1 + s[:, None] * d1 + o2 + u[:, None] * d2)
    g_pose = rig.guide.pose
    z = (mid - g_pose.translation) @ g_pose.rotation[:, 2]
    near, far = cfg.depth_range
    good = (sin_ang > math.sin(cfg.min_parallax_rad)) & np.isfinite(z) \
        & (z >= near * 0.99) & (z <= far * 1.01) & (s > 0) & (u > 0)
    flat_d = depth.ravel()
    flat_o = ok.ravel()
    flat_d[sel[good]] = z[good]
    flat_o[sel[good]] = True
    return depth, ok


def _contour_weight(ok: np.ndarray) -> np.ndarray:
    """Linear distance-transform weight; zero on the mask contour."""
    if not np.any(ok):
        return np.zeros(ok.shape)
    if np.all(ok):
        return np.ones(ok.shape)
    w = distance_transform_edt(ok) - 1.0
    return np.maximum(w, 0.0)


def triangulate_depth(fields: list, rig: RigSpec, cfg: FusionConfig,
                      blend: str = "distance") -> np.ndarray:
    """Fused depth map from per-detail correspondence fields.

    ``fields[i]`` pairs with ``rig.details[i]`` (entries may be None).
    Partial depth maps are averaged with weights from a distance transform
    of each validity mask (``blend="uniform"`` averages valid pixels
    equally, for comparison). Pixels with no valid source are +inf.
    """
    if blend not in ("distance", "uniform"):
        raise ConfigError("blend must be 'distance' or 'uniform'")
    if not any(f is not None for f in fields):
        raise DomainError("need at least one correspondence field")
    th, tw = rig.target_shape
    wsum = np.zeros((th, tw))
    dsum = np.zeros((th, tw))
    vsum = np.zeros((th, tw))
    vcount = np.zeros((th, tw))
    for i, fld in enumerate(fields):
        if fld is None or fld.shape[0] == 0:
            continue
        depth, ok = _triangulate_field(fld, rig, i, cfg)
        weight = _contour_weight(ok) if blend == "distance" else ok.astype(float)
        x0, y0 = fld.origin
        h, w = fld.shape
        sl = (slice(y0, y0 + h), slice(x0, x0 + w))
        d_safe = np.where(ok, depth, 0.0)
        wsum[sl] += weight
        dsum[sl] += weight * d_safe
        vsum[sl] += ok * d_safe
        vcount[sl] += ok
    out = np.full((th, tw), np.inf)
    have_w = wsum > 0
    out[have_w] = dsum[have_w] / wsum[have_w]
    # contour pixels (weight 0 everywhere) fall back to a plain average
    fallback = ~have_w & (vcount > 0)
    out[fallback] = vsum[fallback] / vcount[fallback]
    return out


# --- orchestration -------------------------------------------------------

@dataclass
class CaptureSet:
    """Raw inputs for one reconstruction: guide and per-detail captures,
    each a single RawImage or a burst (list of RawImage)."""

    guide: object
    details: list = field(default_factory=list)


def _to_linear(capture) -> LinearImage:
    if isinstance(capture, RawImage):
        return demosaic(capture)
    if isinstance(capture, LinearImage):
        return capture
    return burst_merge(list(capture))


def reconstruct_frame(captures: CaptureSet, rig: RigSpec, cfg: FusionConfig):
    """End-to-end reconstruction.

    Returns (fused image, depth map, diagnostics). Diagnostics carry the
    per-detail valid fraction and mean confidence plus per-stage runtimes.
    """
    if len(captures.details) != len(rig.details):
        raise ConfigError("capture count must match the rig's detail count")
    diag = {"details": [], "stages_s": {}}
    t0 = time.perf_counter()
    guide = _to_linear(captures.guide)
    gs = rig.guide.camera.sensor
    if guide.values.shape[:2] != (gs.height_px, gs.width_px):
        raise ConfigError("guide capture does not match the rig's guide sensor")
    guide_up = upsample_guide(guide, rig.upsample_factor)
    diag["stages_s"]["demosaic_upsample"] = time.perf_counter() - t0

    details_lin = []
    fields = []
    t1 = time.perf_counter()
    for i, cap in enumerate(captures.details):
        detail = _to_linear(cap)
        details_lin.append(detail)
        fields.append(match_epipolar(guide_up, detail, rig, i, cfg))
    diag["stages_s"]["match"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    if cfg.depth_edge_fraction > 0:
        occlusion_veto(fields, rig, cfg)
    diag["stages_s"]["occlusion_veto"] = time.perf_counter() - t2

    sources = []
    t3 = time.perf_counter()
    for detail, fld in zip(details_lin, fields):
        warped, mask = warp_detail(detail, fld)
        n = fld.valid.size
        diag["details"].append({
            "valid_fraction": float(fld.valid.mean()) if n else 0.0,
            "mean_confidence": float(fld.confidence.mean()) if n else 0.0,
        })
        if n:
            sources.append(WarpedSource(np.float32(warped.values), mask,
                                        fld.confidence, origin=fld.origin))
    diag["stages_s"]["warp"] = time.perf_counter() - t3

    t4 = time.perf_counter()
    fused = fuse(guide_up, sources, cfg)
    diag["stages_s"]["fuse"] = time.perf_counter() - t4
    t5 = time.perf_counter()
    depth = triangulate_depth(fields, rig, cfg)
    diag["stages_s"]["depth"] = time.perf_counter() - t5
    return fused, depth, diag
