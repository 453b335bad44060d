"""Guide + detail camera rig geometry.

One wide-FOV guide camera plus a grid of narrow-FOV detail cameras that
jointly tile the guide's field of view. Provides tiling planning,
plane-induced prewarp homographies, epipolar segments for bounded depth
ranges, closest-covered-distance analysis, and ROI packing.

Conventions: pinhole cameras without distortion; camera frames are
x-right, y-down, z-forward; poses store camera-to-rig rotation and the
camera center in the rig frame; pixel centers sit on integer coordinates
with the principal point at ((W-1)/2, (H-1)/2).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, GeometryError
from .optics import CameraSpec, LensSpec, SensorSpec

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray     # (3, 3) camera-to-rig
    translation: np.ndarray  # (3,) camera center in rig frame, meters

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise GeometryError("pose needs a 3x3 rotation and a 3-vector translation")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMAL_TOL:
            raise GeometryError("rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise GeometryError("rotation must be proper (det +1)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity(translation=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(np.eye(3), np.asarray(translation, dtype=np.float64))

    @staticmethod
    def from_yaw_pitch(yaw: float, pitch: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Yaw about the rig y-axis, then pitch about the rotated x-axis.

        Positive yaw turns the boresight toward +x; positive pitch
        toward +y (downward in image terms).
        """
        cy, sy = math.cos(yaw), math.sin(yaw)
        cp, sp = math.cos(pitch), math.sin(pitch)
        ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
        return Pose(ry @ rx, np.asarray(translation, dtype=np.float64))


@dataclass(frozen=True)
class PlacedCamera:
    camera: CameraSpec
    pose: Pose


@dataclass(frozen=True)
class RigSpec:
    guide: PlacedCamera
    details: tuple  # of PlacedCamera, row-major over the tile grid
    grid: tuple     # (rows, cols)
    angular_overlap: float          # radians between adjacent detail FOVs
    reference_plane_distance: float = 100.0  # meters, prewarp default
    upsample_factor: int = 4        # target resolution / guide resolution
    epipolar_tolerance_px: float = 3.0

    def __post_init__(self):
        rows, cols = self.grid
        if len(self.details) != rows * cols:
            raise ConfigError("details length must equal rows*cols")
        if self.angular_overlap < 0:
            raise ConfigError("angular_overlap must be >= 0")
        if self.reference_plane_distance <= 0:
            raise ConfigError("reference_plane_distance must be > 0")
        if self.upsample_factor < 1:
            raise ConfigError("upsample_factor must be >= 1")
        object.__setattr__(self, "details", tuple(self.details))
        g = self.guide
        for i, det in enumerate(self.details):
            if not _cones_intersect(g, det):
                raise ConfigError(f"detail {i} FOV cone misses the guide FOV cone")

    @property
    def target_shape(self) -> tuple:
        s = self.guide.camera.sensor
        return (s.height_px * self.upsample_factor, s.width_px * self.upsample_factor)

    def to_dict(self) -> dict:
        def placed(pc):
            return {"camera": pc.camera.to_dict(),
                    "pose": {"rotation": pc.pose.rotation.tolist(),
                             "translation": pc.pose.translation.tolist()}}
        return {
            "guide": placed(self.guide),
            "details": [placed(d) for d in self.details],
            "grid": list(self.grid),
            "angular_overlap_rad": self.angular_overlap,
            "reference_plane_distance_m": self.reference_plane_distance,
            "upsample_factor": self.upsample_factor,
            "epipolar_tolerance_px": self.epipolar_tolerance_px,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RigSpec":
        def placed(e):
            return PlacedCamera(
                CameraSpec.from_dict(e["camera"]),
                Pose(np.asarray(e["pose"]["rotation"]),
                     np.asarray(e["pose"]["translation"])))
        return cls(
            guide=placed(d["guide"]),
            details=tuple(placed(e) for e in d["details"]),
            grid=tuple(d["grid"]),
            angular_overlap=d["angular_overlap_rad"],
            reference_plane_distance=d.get("reference_plane_distance_m", 100.0),
            upsample_factor=d.get("upsample_factor", 4),
            epipolar_tolerance_px=d.get("epipolar_tolerance_px", 3.0),
        )

    @classmethod
    def from_json(cls, text: str) -> "RigSpec":
        return cls.from_dict(json.loads(text))


def _boresight(pc: PlacedCamera) -> np.ndarray:
    return pc.pose.rotation[:, 2]


def _half_diagonal_fov(camera: CameraSpec) -> float:
    s = camera.sensor
    half_diag = 0.5 * math.hypot(s.width_px, s.height_px) * s.pixel_pitch
    return math.atan(half_diag / camera.lens.focal_length)


def _cones_intersect(a: PlacedCamera, b: PlacedCamera) -> bool:
    ang = math.acos(float(np.clip(np.dot(_boresight(a), _boresight(b)), -1.0, 1.0)))
    return ang <= _half_diagonal_fov(a.camera) + _half_diagonal_fov(b.camera) + 1e-12


def intrinsics(camera: CameraSpec, scale: int = 1) -> np.ndarray:
    """Pinhole intrinsic matrix; ``scale`` models an upsampled pixel grid."""
    s = camera.sensor
    fpx = camera.lens.focal_length / s.pixel_pitch * scale
    cx = (s.width_px * scale - 1) / 2.0
    cy = (s.height_px * scale - 1) / 2.0
    return np.array([[fpx, 0.0, cx], [0.0, fpx, cy], [0.0, 0.0, 1.0]])


def project(pc: PlacedCamera, points_rig: np.ndarray, scale: int = 1):
    """Project rig-frame points; returns (pixels (N,2), depths (N,))."""
    pts = np.atleast_2d(np.asarray(points_rig, dtype=np.float64))
    cam_pts = (pts - pc.pose.translation) @ pc.pose.rotation  # == R^T (X - t)
    k = intrinsics(pc.camera, scale)
    z = cam_pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = (cam_pts @ k.T)[:, :2] / z[:, None]
    return uv, z


def pixel_rays(pc: PlacedCamera, pixels: np.ndarray, scale: int = 1):
    """Rays through pixel centers; returns (origin (3,), directions (N,3)).

    Directions are normalized so the camera-frame z component is 1, i.e.
    origin + depth*direction lies at that z-depth.
    """
    px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    k_inv = np.linalg.inv(intrinsics(pc.camera, scale))
    ones = np.ones((len(px), 1))
    dirs_cam = np.hstack([px, ones]) @ k_inv.T
    dirs_rig = dirs_cam @ pc.pose.rotation.T
    return pc.pose.translation, dirs_rig


def in_fov(pc: PlacedCamera, points_rig: np.ndarray, scale: int = 1) -> np.ndarray:
    """True where rig-frame points project inside the image with z > 0."""
    uv, z = project(pc, points_rig, scale)
    s = pc.camera.sensor
    w, h = s.width_px * scale, s.height_px * scale
    return (z > 0) & (uv[:, 0] >= -0.5) & (uv[:, 0] <= w - 0.5) \
        & (uv[:, 1] >= -0.5) & (uv[:, 1] <= h - 0.5)


DEFAULT_DETAIL_SENSOR = SensorSpec(pixel_pitch=1.25e-6, width_px=1200, height_px=1200)


def plan_tiling(guide: CameraSpec,
                grid: tuple,
                angular_overlap: float,
                detail_positions,
                detail_sensor: SensorSpec = DEFAULT_DETAIL_SENSOR,
                guide_pose: Pose | None = None,
                detail_pupil_diameter: float = 1.1e-3,
                upsample_factor: int = 4,
                coc_angle: float | None = None) -> RigSpec:
    """Plan detail orientations that tile the guide FOV in a uniform grid.

    Tile centers partition the guide FOV per axis; each detail's FOV per
    axis is the tile extent plus ``angular_overlap``. Detail focal length
    is set from the horizontal FOV requirement; the sensor aspect must
    give at least the required vertical FOV.
    """
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise ConfigError("grid must be at least (1, 1)")
    positions = [np.asarray(p, dtype=np.float64) for p in detail_positions]
    if len(positions) != rows * cols:
        raise ConfigError("need one detail position per grid cell")
    for i, a in enumerate(positions):
        for b in positions[i + 1:]:
            if np.allclose(a, b):
                raise ConfigError("detail positions must be distinct")
    guide_pose = guide_pose or Pose.identity()

    g_spec = PlacedCamera(guide, guide_pose)
    hfov, vfov = guide.hfov, guide.vfov
    det_hfov = hfov / cols + angular_overlap
    det_vfov = vfov / rows + angular_overlap
    if det_hfov >= hfov and cols > 1 or det_vfov >= vfov and rows > 1:
        raise ConfigError("angular_overlap too large: tiles exceed the guide FOV")

    focal = detail_sensor.width_px * detail_sensor.pixel_pitch / (2.0 * math.tan(det_hfov / 2.0))
    actual_vfov = 2.0 * math.atan(detail_sensor.height_px * detail_sensor.pixel_pitch
                                  / (2.0 * focal))
    if actual_vfov + 1e-9 < det_vfov:
        raise ConfigError("detail sensor aspect cannot reach the required vertical FOV")

    if coc_angle is None:
        coc_angle = detail_sensor.pixel_pitch / focal  # 1 px worth of defocus
    det_cam = CameraSpec(
        lens=LensSpec(focal_length=focal, entrance_pupil_diameter=detail_pupil_diameter),
        sensor=detail_sensor,
        coc_diameter=2.0 * focal * coc_angle,
    )

    details = []
    idx = 0
    for r in range(rows):
        pitch = -vfov / 2.0 + (r + 0.5) * vfov / rows
        for c in range(cols):
            yaw = -hfov / 2.0 + (c + 0.5) * hfov / cols
            local = Pose.from_yaw_pitch(yaw, pitch)
            rot = guide_pose.rotation @ local.rotation
            details.append(PlacedCamera(det_cam, Pose(rot, positions[idx])))
            idx += 1

    return RigSpec(guide=g_spec, details=tuple(details), grid=(rows, cols),
                   angular_overlap=angular_overlap, upsample_factor=upsample_factor)


def desk_rig(guide_px: int = 768, detail_sensor: SensorSpec = DEFAULT_DETAIL_SENSOR,
             grid: tuple = (3, 3), overlap_deg: float = 2.0,
             guide_hfov_deg: float = 60.0, upsample_factor: int = 4) -> RigSpec:
    """Desk-prototype rig: one wide guide plus 3x3 details whose centers
    sit on a horizontal line below the guide (9 cameras, 10 mm spacing)."""
    pitch = detail_sensor.pixel_pitch
    f_g = guide_px * pitch / (2.0 * math.tan(math.radians(guide_hfov_deg) / 2.0))
    guide = CameraSpec(
        lens=LensSpec(focal_length=f_g, entrance_pupil_diameter=1.0e-3),
        sensor=SensorSpec(pixel_pitch=pitch, width_px=guide_px, height_px=guide_px),
        coc_diameter=2.0 * f_g * (pitch / f_g))
    rows, cols = grid
    n = rows * cols
    xs = np.linspace(-0.04, 0.04, n) if n > 1 else [0.0]
    positions = [np.array([x, -0.015, 0.0]) for x in xs]
    return plan_tiling(guide, grid, math.radians(overlap_deg), positions,
                       detail_sensor=detail_sensor, upsample_factor=upsample_factor)


def min_covered_distance(rig: RigSpec) -> float:
    """Closest distance at which the detail FOVs jointly cover the guide FOV.

    For each pair of grid-adjacent details the coverage seam closes at
    b / (2 tan(alpha/2)) where b is the baseline component along the
    tiling direction and alpha the angular overlap. Returns the maximum
    over pairs; +inf (with a warning) when the overlap is zero.
    """
    if rig.angular_overlap <= 0:
        warnings.warn("angular_overlap is zero: coverage never closes", stacklevel=2)
        return math.inf
    rows, cols = rig.grid
    rot_g = rig.guide.pose.rotation
    x_axis, y_axis = rot_g[:, 0], rot_g[:, 1]
    tan_half = math.tan(rig.angular_overlap / 2.0)

    def center(r, c):
        return rig.details[r * cols + c].pose.translation

    worst = 0.0
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                b = abs(float(np.dot(center(r, c + 1) - center(r, c), x_axis)))
                worst = max(worst, b / (2.0 * tan_half))
            if r + 1 < rows:
                b = abs(float(np.dot(center(r + 1, c) - center(r, c), y_axis)))
                worst = max(worst, b / (2.0 * tan_half))
    return worst


def coverage_fraction(rig: RigSpec, distance: float, n_rays: int = 10000,
                      seed: int = 0, border_margin_px: int = 0) -> float:
    """Fraction of random guide-FOV rays covered by >= 1 detail at ``distance``.

    ``border_margin_px`` shrinks the sampled guide region; the outer FOV
    boundary closes at a larger distance than the inter-detail seams that
    min_covered_distance measures, so seam checks should exclude it.
    """
    rng = np.random.default_rng(seed)
    s = rig.guide.camera.sensor
    m = border_margin_px
    if not 0 <= 2 * m < min(s.width_px, s.height_px):
        raise ConfigError("border margin leaves no pixels to sample")
    px = rng.uniform([m - 0.5, m - 0.5],
                     [s.width_px - m - 0.5, s.height_px - m - 0.5],
                     size=(n_rays, 2))
    origin, dirs = pixel_rays(rig.guide, px)
    pts = origin + distance * dirs
    covered = np.zeros(n_rays, dtype=bool)
    for det in rig.details:
        covered |= in_fov(det, pts)
    return float(np.mean(covered))


def relative_motion(rig: RigSpec, detail_index: int):
    """Rotation/translation taking guide-camera coordinates to detail coordinates."""
    g, d = rig.guide.pose, rig.details[detail_index].pose
    r_rel = d.rotation.T @ g.rotation
    t_rel = d.rotation.T @ (g.translation - d.translation)
    return r_rel, t_rel


def plane_homography(rig: RigSpec, detail_index: int, plane_distance: float) -> np.ndarray:
    """Homography (upsampled-guide pixels -> detail pixels) induced by the
    fronto-parallel plane at ``plane_distance`` in the guide frame."""
    if plane_distance <= 0:
        raise GeometryError("plane must be in front of the guide camera")
    r_rel, t_rel = relative_motion(rig, detail_index)
    n = np.array([0.0, 0.0, 1.0])
    k_d = intrinsics(rig.details[detail_index].camera)
    k_g = np.linalg.inv(intrinsics(rig.guide.camera, rig.upsample_factor))
    h = k_d @ (r_rel + np.outer(t_rel, n) / plane_distance) @ k_g
    # plane point on the guide boresight must sit in front of the detail
    probe = r_rel @ np.array([0.0, 0.0, plane_distance]) + t_rel
    if probe[2] <= 0:
        raise GeometryError("plane lies behind the detail camera")
    return h / h[2, 2]


def prewarp_homography(rig: RigSpec, detail_index: int,
                       plane_distance: float | None = None) -> np.ndarray:
    """Homography mapping detail pixels to upsampled-guide pixels via the
    reference plane (default: the rig's reference_plane_distance)."""
    d = rig.reference_plane_distance if plane_distance is None else plane_distance
    h = np.linalg.inv(plane_homography(rig, detail_index, d))
    return h / h[2, 2]


@dataclass(frozen=True)
class EpipolarSegment:
    near_px: np.ndarray   # detail-image projection at the near depth
    far_px: np.ndarray    # detail-image projection at the far depth
    half_width_px: float  # soft-constraint tolerance band
    empty: bool = False

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.near_px - self.far_px))

    def point_at(self, fraction: float) -> np.ndarray:
        return self.near_px + fraction * (self.far_px - self.near_px)


def epipolar_segment(rig: RigSpec, detail_index: int, target_pixel,
                     depth_range: tuple) -> EpipolarSegment:
    """Detail-image segment of possible matches for a target pixel.

    Endpoints are the projections of the target ray at the near and far
    depths. ``empty`` is set when the segment cannot intersect the detail
    image over the whole range.
    """
    near, far = depth_range
    if not (0 < near < far):
        raise DomainError("depth range must satisfy 0 < near < far")
    origin, dirs = pixel_rays(rig.guide, np.asarray(target_pixel, dtype=np.float64),
                              scale=rig.upsample_factor)
    det = rig.details[detail_index]
    pts = origin + np.array([[near], [far]]) * dirs[0]
    uv, z = project(det, pts)
    if np.any(z <= 0):
        return EpipolarSegment(uv[0], uv[1], rig.epipolar_tolerance_px, empty=True)
    s = det.camera.sensor
    lo = np.minimum(uv[0], uv[1])
    hi = np.maximum(uv[0], uv[1])
    margin = rig.epipolar_tolerance_px
    outside = (hi[0] < -0.5 - margin or lo[0] > s.width_px - 0.5 + margin
               or hi[1] < -0.5 - margin or lo[1] > s.height_px - 0.5 + margin)
    return EpipolarSegment(uv[0], uv[1], rig.epipolar_tolerance_px, empty=outside)


@dataclass(frozen=True)
class RoiPack:
    """Per-detail source rectangles and their placements on a packed canvas.

    Rectangles are (x0, y0, x1, y1) in pixels, half-open. ``sources[i]``
    crops detail i; ``placements[i]`` is its location on the canvas, or
    None when the detail contributes nothing to the tile.
    """

    tile: tuple                 # target-image rect this pack serves
    sources: tuple              # per-detail rect or None
    placements: tuple           # per-detail rect or None
    canvas_shape: tuple         # (height, width)

    def __post_init__(self):
        rects = [p for p in self.placements if p is not None]
        for i, a in enumerate(rects):
            sx0, sy0, sx1, sy1 = a
            if not (0 <= sx0 < sx1 <= self.canvas_shape[1]
                    and 0 <= sy0 < sy1 <= self.canvas_shape[0]):
                raise ConfigError("placement outside canvas")
            for b in rects[i + 1:]:
                if not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1]):
                    raise ConfigError("placements overlap")
        for src, plc in zip(self.sources, self.placements):
            if (src is None) != (plc is None):
                raise ConfigError("source/placement mismatch")
            if src is not None:
                if (src[2] - src[0], src[3] - src[1]) != (plc[2] - plc[0], plc[3] - plc[1]):
                    raise ConfigError("placement not congruent to its source")


def _shelf_pack(rects: list) -> tuple:
    """First-fit decreasing-height shelf packing.

    ``rects`` holds (w, h, key); returns ({key: (x0, y0, x1, y1)}, (H, W)).
    """
    if not rects:
        return {}, (0, 0)
    order = sorted(rects, key=lambda r: -r[1])
    canvas_w = max(max(r[0] for r in rects),
                   int(math.ceil(math.sqrt(sum(r[0] * r[1] for r in rects)))))
    placements = {}
    shelf_y = 0
    shelf_h = 0
    cursor_x = 0
    for w, h, key in order:
        if cursor_x + w > canvas_w:
            shelf_y += shelf_h
            cursor_x = 0
            shelf_h = 0
        placements[key] = (cursor_x, shelf_y, cursor_x + w, shelf_y + h)
        cursor_x += w
        shelf_h = max(shelf_h, h)
    total_h = shelf_y + shelf_h
    return placements, (total_h, canvas_w)


def roi_for_tiles(rig: RigSpec, tile_grid: tuple, margin_px: int = 16,
                  depth_range: tuple = (0.3, 100.0),
                  tile_overlap_px: int = 32) -> list:
    """ROI crop-and-pack plan for every target tile.

    For each tile of the upsampled guide, maps the tile corners into each
    detail through the reference-plane homography, pads by the epipolar
    extent over ``depth_range`` plus ``margin_px``, clips to the detail
    frame, and shelf-packs the surviving rectangles into one canvas.
    """
    trows, tcols = tile_grid
    th, tw = rig.target_shape
    packs = []
    for tr in range(trows):
        for tc in range(tcols):
            x0 = max(0, tc * tw // tcols - tile_overlap_px // 2)
            x1 = min(tw, (tc + 1) * tw // tcols + tile_overlap_px // 2)
            y0 = max(0, tr * th // trows - tile_overlap_px // 2)
            y1 = min(th, (tr + 1) * th // trows + tile_overlap_px // 2)
            corners = np.array([[x0, y0], [x1 - 1, y0], [x0, y1 - 1], [x1 - 1, y1 - 1]],
                               dtype=np.float64)
            origin, dirs = pixel_rays(rig.guide, corners, scale=rig.upsample_factor)
            world = np.concatenate([origin + depth * dirs for depth in depth_range])
            sources = []
            rects = []
            for di, det in enumerate(rig.details):
                uv, z = project(det, world)
                ok = bool(np.all(z > 0))
                s = det.camera.sensor
                if ok:
                    pts = uv
                    rx0 = int(math.floor(pts[:, 0].min())) - margin_px
                    ry0 = int(math.floor(pts[:, 1].min())) - margin_px
                    rx1 = int(math.ceil(pts[:, 0].max())) + margin_px + 1
                    ry1 = int(math.ceil(pts[:, 1].max())) + margin_px + 1
                    rx0, ry0 = max(0, rx0), max(0, ry0)
                    rx1, ry1 = min(s.width_px, rx1), min(s.height_px, ry1)
                    if rx1 > rx0 and ry1 > ry0:
                        sources.append((rx0, ry0, rx1, ry1))
                        rects.append((rx1 - rx0, ry1 - ry0, di))
                        continue
                sources.append(None)
            placed, canvas = _shelf_pack(rects)
            placements = [placed.get(di) for di in range(len(rig.details))]
            packs.append(RoiPack(tile=(x0, y0, x1, y1), sources=tuple(sources),
                                 placements=tuple(placements), canvas_shape=canvas))
    return packs
