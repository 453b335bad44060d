"""Synthetic ground-truth scenes: textured planar quads rendered through
pinhole cameras, plus true z-depth maps.

Deliberately minimal: planes are enough to create occlusion and depth
variation while keeping analytic oracles exact. Rendering is deterministic
ray casting with optional supersampling and bilinear texture lookup.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .image import LinearImage, read_png16, write_png16
from .optics import CameraSpec
from .rig import PlacedCamera, Pose, intrinsics

_ROW_CHUNK = 128


@dataclass(frozen=True)
class Quad:
    """Textured rectangle. The pose maps quad coords (u right, v down,
    normal forward) into the rig frame; translation is the quad center."""

    pose: Pose
    width: float    # meters
    height: float   # meters
    texture: np.ndarray  # (th, tw, 3) linear values
    albedo_scale: float = 1.0
    specular_strength: float = 0.0   # Phong lobe, off by default
    specular_shininess: float = 32.0
    texture_ref: str = ""

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DomainError("quad extents must be > 0")
        tex = np.asarray(self.texture, dtype=np.float64)
        if tex.ndim != 3 or tex.shape[2] != 3 or tex.size == 0:
            raise ConfigError("texture must be a non-empty (H, W, 3) array")
        object.__setattr__(self, "texture", tex)


@dataclass(frozen=True)
class SceneSpec:
    quads: tuple
    background_radiance: np.ndarray = field(
        default_factory=lambda: np.zeros(3))
    light_direction: np.ndarray = field(
        default_factory=lambda: np.array([0.0, -0.5, -1.0]))

    def __post_init__(self):
        object.__setattr__(self, "quads", tuple(self.quads))
        bg = np.asarray(self.background_radiance, dtype=np.float64)
        light = np.asarray(self.light_direction, dtype=np.float64)
        object.__setattr__(self, "background_radiance", bg)
        object.__setattr__(self, "light_direction", light / np.linalg.norm(light))


def _bilinear(texture: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    th, tw = texture.shape[:2]
    x = np.clip(x, 0.0, tw - 1.0)
    y = np.clip(y, 0.0, th - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, tw - 2) if tw > 1 else np.zeros_like(x, np.int64)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, th - 2) if th > 1 else np.zeros_like(y, np.int64)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x1 = np.minimum(x0 + 1, tw - 1)
    y1 = np.minimum(y0 + 1, th - 1)
    return ((1 - fy) * ((1 - fx) * texture[y0, x0] + fx * texture[y0, x1])
            + fy * ((1 - fx) * texture[y1, x0] + fx * texture[y1, x1]))


def _shade_rays(scene: SceneSpec, origin: np.ndarray, dirs: np.ndarray):
    """Color and z-depth for rays with camera-z-normalized directions.

    ``dirs`` is (N, 3) in the rig frame with unit camera-frame z, so the
    plane-intersection parameter equals the camera z-depth.
    """
    n_rays = len(dirs)
    color = np.broadcast_to(scene.background_radiance, (n_rays, 3)).copy()
    depth = np.full(n_rays, np.inf)
    light = scene.light_direction
    for quad in scene.quads:
        rot = quad.pose.rotation
        center = quad.pose.translation
        normal = rot[:, 2]
        denom = dirs @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((center - origin) @ normal) / denom
        hit = np.isfinite(t) & (t > 1e-9)
        if not np.any(hit):
            continue
        p = origin + t[hit, None] * dirs[hit]
        rel = p - center
        u = rel @ rot[:, 0]
        v = rel @ rot[:, 1]
        inside = (np.abs(u) <= quad.width / 2) & (np.abs(v) <= quad.height / 2)
        if not np.any(inside):
            continue
        idx = np.flatnonzero(hit)[inside]
        closer = t[idx] < depth[idx]
        idx = idx[closer]
        if idx.size == 0:
            continue
        uu, vv = u[inside][closer], v[inside][closer]
        tex = quad.texture
        tx = (uu / quad.width + 0.5) * tex.shape[1] - 0.5
        ty = (vv / quad.height + 0.5) * tex.shape[0] - 0.5
        shade = quad.albedo_scale * _bilinear(tex, tx, ty)
        if quad.specular_strength > 0:
            view = dirs[idx] / np.linalg.norm(dirs[idx], axis=1, keepdims=True)
            refl = light - 2.0 * (light @ normal) * normal
            lobe = np.maximum(0.0, -(view @ refl)) ** quad.specular_shininess
            shade = shade + quad.specular_strength * lobe[:, None]
        color[idx] = shade
        depth[idx] = t[idx]
    return color, depth


def _camera_dirs(camera: CameraSpec, pose: Pose, rows: np.ndarray,
                 cols: np.ndarray) -> np.ndarray:
    k_inv = np.linalg.inv(intrinsics(camera))
    px = np.stack([cols, rows, np.ones_like(cols)], axis=-1)
    dirs_cam = px @ k_inv.T
    return dirs_cam @ pose.rotation.T


def render(scene: SceneSpec, camera: CameraSpec, pose: Pose | None = None,
           supersample: int = 1) -> LinearImage:
    """Ray-cast the scene; nearest quad wins, bilinear texture lookup,
    ``supersample``^2 jitter-free sub-rays averaged per pixel."""
    if not 1 <= supersample <= 8:
        raise DomainError("supersample must be in [1, 8]")
    pose = pose or Pose.identity()
    s = camera.sensor
    w, h = s.width_px, s.height_px
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    out = np.zeros((h, w, 3))
    for y0 in range(0, h, _ROW_CHUNK):
        y1 = min(h, y0 + _ROW_CHUNK)
        acc = np.zeros((y1 - y0, w, 3))
        for oy in offsets:
            for ox in offsets:
                rr, cc = np.meshgrid(np.arange(y0, y1) + oy, np.arange(w) + ox,
                                     indexing="ij")
                dirs = _camera_dirs(camera, pose, rr, cc).reshape(-1, 3)
                color, _ = _shade_rays(scene, pose.translation, dirs)
                acc += color.reshape(y1 - y0, w, 3)
        out[y0:y1] = acc / (supersample * supersample)
    return LinearImage(np.clip(out, 0.0, None))


def ground_truth_depth(scene: SceneSpec, camera: CameraSpec,
                       pose: Pose | None = None) -> np.ndarray:
    """Per-pixel z-depth of the nearest hit [m]; +inf on background."""
    pose = pose or Pose.identity()
    s = camera.sensor
    w, h = s.width_px, s.height_px
    depth = np.empty((h, w))
    for y0 in range(0, h, _ROW_CHUNK):
        y1 = min(h, y0 + _ROW_CHUNK)
        rr, cc = np.meshgrid(np.arange(y0, y1, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        dirs = _camera_dirs(camera, pose, rr, cc).reshape(-1, 3)
        _, d = _shade_rays(scene, pose.translation, dirs)
        depth[y0:y1] = d.reshape(y1 - y0, w)
    return depth


# --- procedural textures -------------------------------------------------

def checkerboard_texture(size: int = 512, squares: int = 16,
                         lo: float = 0.1, hi: float = 0.9) -> np.ndarray:
    ij = np.add.outer(np.arange(size) * squares // size,
                      np.arange(size) * squares // size)
    v = np.where(ij % 2 == 0, hi, lo)
    return np.repeat(v[..., None], 3, axis=2).astype(np.float64)


def noise_texture(size: int = 512, seed: int = 0, smooth_px: float = 2.0,
                  lo: float = 0.05, hi: float = 0.95) -> np.ndarray:
    """Band-limited random texture with strong local contrast."""
    from scipy.ndimage import gaussian_filter
    rng = np.random.default_rng(seed)
    tex = rng.random((size, size, 3))
    if smooth_px > 0:
        tex = gaussian_filter(tex, sigma=(smooth_px, smooth_px, 0))
    tex -= tex.min()
    tex /= max(tex.max(), 1e-12)
    return lo + (hi - lo) * tex


def slanted_edge_texture(size: int = 512, angle_deg: float = 5.0,
                         lo: float = 0.15, hi: float = 0.85) -> np.ndarray:
    """Near-vertical light/dark edge target used for MTF measurement."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    boundary = size / 2.0 + (yy - size / 2.0) * math.tan(math.radians(angle_deg))
    v = np.where(xx < boundary, lo, hi)
    return np.repeat(v[..., None], 3, axis=2)


# --- scene JSON I/O ------------------------------------------------------

def save_scene(scene: SceneSpec, path, texture_dir=None) -> None:
    path = Path(path)
    tex_dir = Path(texture_dir) if texture_dir else path.parent
    tex_dir.mkdir(parents=True, exist_ok=True)
    quads = []
    for i, q in enumerate(scene.quads):
        ref = q.texture_ref or f"texture_{i:02d}.png"
        write_png16(tex_dir / ref, LinearImage(np.clip(q.texture, 0.0, 1.0)))
        quads.append({
            "pose": {"rotation": q.pose.rotation.tolist(),
                     "translation": q.pose.translation.tolist()},
            "width_m": q.width, "height_m": q.height,
            "texture": ref, "albedo_scale": q.albedo_scale,
            "specular_strength": q.specular_strength,
            "specular_shininess": q.specular_shininess,
        })
    doc = {"quads": quads,
           "background_radiance": scene.background_radiance.tolist(),
           "light_direction": scene.light_direction.tolist()}
    path.write_text(json.dumps(doc, indent=2))


def load_scene(path) -> SceneSpec:
    path = Path(path)
    doc = json.loads(path.read_text())
    quads = []
    for q in doc["quads"]:
        tex = read_png16(path.parent / q["texture"]).values
        quads.append(Quad(
            pose=Pose(np.asarray(q["pose"]["rotation"]),
                      np.asarray(q["pose"]["translation"])),
            width=q["width_m"], height=q["height_m"], texture=tex,
            albedo_scale=q.get("albedo_scale", 1.0),
            specular_strength=q.get("specular_strength", 0.0),
            specular_shininess=q.get("specular_shininess", 32.0),
            texture_ref=q["texture"],
        ))
    return SceneSpec(quads=tuple(quads),
                     background_radiance=np.asarray(doc.get("background_radiance", [0, 0, 0])),
                     light_direction=np.asarray(doc.get("light_direction", [0, -0.5, -1])))


def standard_scene(seed: int = 7) -> SceneSpec:
    """Pinned three-plane scene: textured background, a slanted-edge
    midground board, and a small foreground occluder."""
    # texture scale: features must stay below the detail cameras' Nyquist
    # rate (a few mm at 4 m) while the coarse guide cannot resolve them
    bg = Quad(pose=Pose(np.eye(3), np.array([0.0, 0.0, 4.0])),
              width=6.0, height=6.0,
              texture=noise_texture(2048, seed=seed, smooth_px=1.2))
    edge_tex = slanted_edge_texture(768, angle_deg=5.0)
    board = Quad(pose=Pose(np.eye(3), np.array([0.45, 0.1, 2.0])),
                 width=1.1, height=1.1, texture=edge_tex)
    occluder = Quad(pose=Pose(np.eye(3), np.array([-0.35, -0.12, 1.2])),
                    width=0.28, height=0.28,
                    texture=checkerboard_texture(384, squares=12, lo=0.2, hi=0.8))
    return SceneSpec(quads=(bg, board, occluder),
                     background_radiance=np.array([0.02, 0.02, 0.02]))
