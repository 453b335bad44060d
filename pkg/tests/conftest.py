"""Shared fixtures: small camera rigs and rendered views sized for fast tests."""

import math

import numpy as np
import pytest

from glassesim.optics import CameraSpec, LensSpec, SensorSpec
from glassesim.rig import PlacedCamera, Pose, RigSpec
from glassesim.scene import SceneSpec, Quad, noise_texture, render


def small_camera(width_px=96, height_px=96, pitch=2.5e-6, hfov_deg=30.0):
    f = width_px * pitch / (2.0 * math.tan(math.radians(hfov_deg) / 2.0))
    return CameraSpec(
        lens=LensSpec(focal_length=f, entrance_pupil_diameter=1.0e-3),
        sensor=SensorSpec(pixel_pitch=pitch, width_px=width_px, height_px=height_px),
        coc_diameter=2.0 * pitch)


@pytest.fixture(scope="session")
def identity_rig():
    """Guide and single detail share the camera and pose; no upsampling."""
    cam = small_camera()
    return RigSpec(guide=PlacedCamera(cam, Pose.identity()),
                   details=(PlacedCamera(cam, Pose.identity()),),
                   grid=(1, 1), angular_overlap=0.0, upsample_factor=1)


def baseline_rig(baselines=(0.01,), guide_px=96, detail_px=192):
    """Boresight-aligned guide plus detail(s) offset along x, same FOV,
    detail at twice the guide resolution (upsample factor 2)."""
    guide = small_camera(guide_px, guide_px, pitch=2.5e-6)
    det = small_camera(detail_px, detail_px, pitch=1.25e-6)
    details = tuple(PlacedCamera(det, Pose.identity((b, 0.0, 0.0)))
                    for b in baselines)
    return RigSpec(guide=PlacedCamera(guide, Pose.identity()), details=details,
                   grid=(1, len(details)), angular_overlap=0.0, upsample_factor=2)


def exact_plane_field(rig, detail_index, plane_z):
    """Analytically exact correspondence field for a fronto-parallel plane:
    target rays intersected with the plane and reprojected into the detail."""
    from glassesim.reconstruct import CorrespondenceField
    from glassesim.rig import pixel_rays, project

    th, tw = rig.target_shape
    cols, rows = np.meshgrid(np.arange(tw, dtype=np.float64),
                             np.arange(th, dtype=np.float64))
    px = np.stack([cols.ravel(), rows.ravel()], axis=1)
    origin, dirs = pixel_rays(rig.guide, px, scale=rig.upsample_factor)
    uv, z = project(rig.details[detail_index], origin + plane_z * dirs)
    s = rig.details[detail_index].camera.sensor
    valid = ((z > 0) & (uv[:, 0] >= -0.5) & (uv[:, 0] <= s.width_px - 0.5)
             & (uv[:, 1] >= -0.5) & (uv[:, 1] <= s.height_px - 0.5))
    dx = (uv[:, 0] - px[:, 0]).reshape(th, tw)
    dy = (uv[:, 1] - px[:, 1]).reshape(th, tw)
    valid = valid.reshape(th, tw)
    dx = np.where(valid, dx, 0.0)
    dy = np.where(valid, dy, 0.0)
    return CorrespondenceField(dx, dy, valid.astype(np.float64), valid,
                               detail_shape=(s.height_px, s.width_px),
                               origin=(0, 0), target_shape=rig.target_shape)


@pytest.fixture(scope="session")
def plane_rig():
    return baseline_rig((0.01,))


@pytest.fixture(scope="session")
def plane_scene():
    """Single textured fronto-parallel plane at 2 m filling the small FOVs."""
    quad = Quad(pose=Pose(np.eye(3), np.array([0.0, 0.0, 2.0])),
                width=2.5, height=2.5,
                texture=noise_texture(1024, seed=5, smooth_px=2.0))
    return SceneSpec(quads=(quad,))


@pytest.fixture(scope="session")
def plane_views(plane_rig, plane_scene):
    g = render(plane_scene, plane_rig.guide.camera, plane_rig.guide.pose,
               supersample=2)
    d = render(plane_scene, plane_rig.details[0].camera,
               plane_rig.details[0].pose, supersample=2)
    return g, d
