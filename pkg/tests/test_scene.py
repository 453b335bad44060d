import math

import numpy as np
import pytest

from glassesim.errors import ConfigError, DomainError
from glassesim.rig import Pose, intrinsics
from glassesim.scene import (Quad, SceneSpec, _bilinear, checkerboard_texture,
                             ground_truth_depth, load_scene, noise_texture,
                             render, save_scene, slanted_edge_texture,
                             standard_scene)
from tests.conftest import small_camera


def flat_quad(z, width=2.5, texture=None, center=(0.0, 0.0)):
    tex = noise_texture(256, seed=1) if texture is None else texture
    return Quad(pose=Pose(np.eye(3), np.array([center[0], center[1], z])),
                width=width, height=width, texture=tex)


def oracle_render_flat(quad, camera, supersample):
    """Independent render of a single fronto-parallel quad: affine
    pixel-to-plane mapping plus direct bilinear texture lookups."""
    s = camera.sensor
    k = intrinsics(camera)
    fpx, cx, cy = k[0, 0], k[0, 2], k[1, 2]
    z = quad.pose.translation[2]
    x0, y0 = quad.pose.translation[:2]
    th, tw = quad.texture.shape[:2]
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    out = np.zeros((s.height_px, s.width_px, 3))
    for oy in offsets:
        for ox in offsets:
            vv, uu = np.meshgrid(np.arange(s.height_px) + oy,
                                 np.arange(s.width_px) + ox, indexing="ij")
            qu = z * (uu - cx) / fpx - x0
            qv = z * (vv - cy) / fpx - y0
            inside = (np.abs(qu) <= quad.width / 2) & (np.abs(qv) <= quad.height / 2)
            tx = (qu / quad.width + 0.5) * tw - 0.5
            ty = (qv / quad.height + 0.5) * th - 0.5
            col = _bilinear(quad.texture, tx, ty)
            out += np.where(inside[..., None], col, 0.0)
    return out / (supersample * supersample)


def test_render_matches_affine_oracle():
    cam = small_camera(48, 48)
    quad = flat_quad(2.0)
    img = render(SceneSpec(quads=(quad,)), cam, supersample=2)
    want = oracle_render_flat(quad, cam, supersample=2)
    assert np.max(np.abs(img.values - want)) < 1e-9


def test_render_background_radiance():
    cam = small_camera(32, 32)
    scene = SceneSpec(quads=(), background_radiance=np.array([0.1, 0.2, 0.3]))
    img = render(scene, cam)
    assert np.allclose(img.values, [0.1, 0.2, 0.3])


def test_render_albedo_scale_is_linear():
    cam = small_camera(32, 32)
    q1 = flat_quad(2.0)
    q2 = Quad(pose=q1.pose, width=q1.width, height=q1.height,
              texture=q1.texture, albedo_scale=2.0)
    a = render(SceneSpec(quads=(q1,)), cam).values
    b = render(SceneSpec(quads=(q2,)), cam).values
    assert np.allclose(b, 2.0 * a)


def test_render_supersample_validation():
    cam = small_camera(16, 16)
    scene = SceneSpec(quads=())
    with pytest.raises(DomainError):
        render(scene, cam, supersample=0)
    with pytest.raises(DomainError):
        render(scene, cam, supersample=9)


def test_depth_flat_plane_exact():
    cam = small_camera(48, 48)
    d = ground_truth_depth(SceneSpec(quads=(flat_quad(3.0),)), cam)
    assert np.allclose(d, 3.0)


def test_depth_background_is_inf():
    cam = small_camera(48, 48)
    # small quad covers only the image center
    d = ground_truth_depth(SceneSpec(quads=(flat_quad(2.0, width=0.2),)), cam)
    assert d[24, 24] == 2.0
    assert d[0, 0] == math.inf


def test_nearest_quad_wins():
    cam = small_camera(48, 48)
    far_tex = np.full((8, 8, 3), 0.9)
    near_tex = np.full((8, 8, 3), 0.1)
    scene = SceneSpec(quads=(flat_quad(4.0, texture=far_tex),
                             flat_quad(1.0, width=0.1, texture=near_tex)))
    img = render(scene, cam)
    d = ground_truth_depth(scene, cam)
    assert img.values[24, 24, 0] == pytest.approx(0.1)
    assert d[24, 24] == pytest.approx(1.0)
    assert img.values[2, 2, 0] == pytest.approx(0.9)
    assert d[2, 2] == pytest.approx(4.0)


def test_bilinear_texel_centers_and_midpoints():
    tex = np.zeros((2, 2, 3))
    tex[0, 0] = 1.0
    tex[1, 1] = 3.0
    assert _bilinear(tex, np.array([0.0]), np.array([0.0]))[0, 0] == 1.0
    assert _bilinear(tex, np.array([1.0]), np.array([1.0]))[0, 0] == 3.0
    assert _bilinear(tex, np.array([0.5]), np.array([0.5]))[0, 0] == 1.0


def test_checkerboard_texture_values():
    tex = checkerboard_texture(64, squares=8, lo=0.1, hi=0.9)
    assert tex.shape == (64, 64, 3)
    assert set(np.unique(tex)) == {0.1, 0.9}
    assert tex[0, 0, 0] == 0.9
    assert tex[0, 8, 0] == 0.1  # adjacent squares alternate


def test_noise_texture_range_and_determinism():
    a = noise_texture(64, seed=3, lo=0.2, hi=0.8)
    b = noise_texture(64, seed=3, lo=0.2, hi=0.8)
    c = noise_texture(64, seed=4, lo=0.2, hi=0.8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.min() == pytest.approx(0.2)
    assert a.max() == pytest.approx(0.8)


def test_slanted_edge_texture_sides():
    tex = slanted_edge_texture(64, angle_deg=5.0, lo=0.15, hi=0.85)
    assert np.all(tex[:, 0] == 0.15)
    assert np.all(tex[:, -1] == 0.85)
    # boundary column drifts with the slant
    mid_top = np.argmax(tex[0, :, 0] > 0.5)
    mid_bot = np.argmax(tex[-1, :, 0] > 0.5)
    assert mid_bot != mid_top


def test_quad_validation():
    with pytest.raises(DomainError):
        flat_quad(1.0, width=0.0)
    with pytest.raises(ConfigError):
        Quad(pose=Pose.identity(), width=1.0, height=1.0,
             texture=np.zeros((4, 4)))


def test_scene_io_round_trip(tmp_path):
    scene = SceneSpec(
        quads=(flat_quad(2.0, texture=noise_texture(32, seed=2)),
               Quad(pose=Pose.from_yaw_pitch(0.1, 0.05, (0.2, -0.1, 1.5)),
                    width=0.5, height=0.7,
                    texture=checkerboard_texture(16, squares=4),
                    albedo_scale=0.8, specular_strength=0.1)),
        background_radiance=np.array([0.02, 0.03, 0.04]))
    save_scene(scene, tmp_path / "scene.json")
    back = load_scene(tmp_path / "scene.json")
    assert len(back.quads) == 2
    assert np.allclose(back.background_radiance, scene.background_radiance)
    for qa, qb in zip(back.quads, scene.quads):
        assert qa.width == qb.width and qa.height == qb.height
        assert qa.albedo_scale == qb.albedo_scale
        assert qa.specular_strength == qb.specular_strength
        assert np.allclose(qa.pose.rotation, qb.pose.rotation)
        assert np.allclose(qa.pose.translation, qb.pose.translation)
        # textures pass through 16-bit PNG quantization
        assert np.max(np.abs(qa.texture - qb.texture)) <= 1.0 / 65535 + 1e-9


def test_standard_scene_layout():
    scene = standard_scene()
    assert len(scene.quads) == 3
    assert [q.pose.translation[2] for q in scene.quads] == [4.0, 2.0, 1.2]
    assert np.allclose(scene.background_radiance, 0.02)
    # occluder sits in front of the board along its viewing ray
    cam = small_camera(96, 96, hfov_deg=60.0)
    d = ground_truth_depth(scene, cam)
    assert d.min() == pytest.approx(1.2, abs=1e-9)
