"""Acceptance suite: ten numbered criteria, each printing one pass/fail line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
summary lines. Criterion 1 is expected to fail: the pinned radiometric
constants cannot be reproduced by the documented derivation chain (see the
assertion message for the measured values).
"""

import json
import math
import os
import time

import cv2
import numpy as np
import pytest

from glassesim.cli import main as cli_main
from glassesim.degrade import (NOISE_PRESETS, NoiseModel, PsfGrid, add_noise,
                               apply_psf_grid, fit_noise_model,
                               gaussian_kernel, mosaic, noise_transfer,
                               psf_grid_preset)
from glassesim.image import LinearImage, RawImage, bayer_channel_masks, write_png16
from glassesim.metrics import mtf50_slanted_edge, psnr
from glassesim.motion import (GyroTrace, blur_free_cdf, blur_free_fraction,
                              head_still_segments, load_gyro_csv, motion_trace)
from glassesim.optics import (ARCMIN, camera_for_angular_resolution,
                              diffraction_limited_angle, hyperfocal_distance,
                              tradespace_curve)
from glassesim.radiometry import derive_k_constants, required_illuminance
from glassesim.reconstruct import (FusionConfig, WarpedSource, burst_merge,
                                   demosaic, estimate_alignment, fuse,
                                   match_epipolar, occlusion_veto,
                                   triangulate_depth, upsample_guide,
                                   warp_detail)
from glassesim.rig import (coverage_fraction, desk_rig, epipolar_segment,
                           intrinsics, min_covered_distance, pixel_rays,
                           prewarp_homography, project, relative_motion)
from glassesim.scene import (ground_truth_depth, noise_texture, render,
                             standard_scene)
from tests.conftest import baseline_rig, exact_plane_field

from glassesim.optics import CameraSpec, LensSpec, SensorSpec


def report(number: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    line = f"criterion {number:2d} ({name}): {status}"
    if detail:
        line += f" - {detail}"
    print(line)


def test_criterion_01_radiometric_constants():
    expected = {"R": 0.6262e14, "G": 1.654e14, "B": 1.271e14}
    t0 = time.perf_counter()
    k = derive_k_constants()
    dt = time.perf_counter() - t0
    errors = {ch: k[ch] / expected[ch] - 1.0 for ch in expected}
    ok = all(abs(e) <= 0.03 for e in errors.values()) and dt < 1.0
    detail = ", ".join(f"{ch} {k[ch]:.4g} ({errors[ch]:+.1%})" for ch in "RGB")
    report(1, "radiometric constants", ok, detail)
    assert ok, (
        "derived constants do not reproduce the pinned values "
        "(0.6262, 1.654, 1.271)e14 within 3%: " + detail
        + "; the documented derivation (CIE V(lambda), Illuminant A, "
        "3-band partition of 420-680 nm) does not yield those numbers")


def test_criterion_02_diffraction_dof_anchors():
    t0 = time.perf_counter()
    hi, lo = tradespace_curve([ARCMIN], [2.097e-3 * 1.005, 2.097e-3 * 0.995])
    boundary_ok = hi.feasible and not lo.feasible
    h_2mm = hyperfocal_distance(camera_for_angular_resolution(ARCMIN, 2.0e-3))
    dtheta_1mm = diffraction_limited_angle(1.0e-3) / ARCMIN
    red_star = tradespace_curve([2.10 * ARCMIN], [1.0e-3])[0]
    dt = time.perf_counter() - t0
    ok = (boundary_ok and 1.5 <= h_2mm <= 2.1
          and abs(dtheta_1mm - 2.1) < 0.02
          and red_star.feasible and 0.38 <= red_star.hyperfocal <= 0.45
          and dt < 1.0)
    report(2, "diffraction/DOF anchors", ok,
           f"H(2mm)={h_2mm:.2f}m, 1mm->{dtheta_1mm:.2f}arcmin, "
           f"H(1mm)={red_star.hyperfocal:.2f}m")
    assert ok


def test_criterion_03_snr_scenario():
    f = 1.0e-6 / (2 * ARCMIN)
    cam = CameraSpec(lens=LensSpec(f, f / 1.8),
                     sensor=SensorSpec(1.0e-6, 64, 64),
                     coc_diameter=2.0 * f * 2 * ARCMIN)
    t0 = time.perf_counter()
    lux = required_illuminance(cam, 2.6e-3, 10.0, channel="G")
    dt = time.perf_counter() - t0
    ok = 700.0 <= lux <= 900.0 and dt < 1.0
    report(3, "SNR scenario anchor", ok, f"required {lux:.1f} lux")
    assert ok


def test_criterion_04_motion_properties():
    rng = np.random.default_rng(0)
    n = 10_000_000
    ts = (np.arange(n, dtype=np.int64) * 1_000_000)
    w = np.zeros((n, 3))
    w[:, 0] = rng.gamma(2.0, 0.25, size=n)
    t0 = time.perf_counter()
    trace = GyroTrace(ts, w)
    exposures = np.linspace(0.0, 0.05, 50)
    cdf = blur_free_cdf(trace, 2 * ARCMIN, exposures)
    dt = time.perf_counter() - t0
    monotone = bool(np.all(np.diff(cdf) <= 0))

    small = GyroTrace(ts[:4000], w[:4000])
    scale_ok = all(
        blur_free_fraction(small, d, t) == blur_free_fraction(small, 2 * d, 2 * t)
        for d in (1e-4, 2e-4, 1e-3) for t in (1e-3, 5e-3, 2e-2))

    block = np.concatenate([np.full(1000, math.radians(1.0)),
                            np.full(1000, math.radians(10.0))] * 3)
    wb = np.zeros((len(block), 3))
    wb[:, 0] = block
    segs = head_still_segments(
        GyroTrace((np.arange(len(block), dtype=np.int64) * 1_000_000), wb),
        math.radians(3.0), min_duration=0.5)
    seg_ok = len(segs) == 3 and all(
        s.peak_speed == pytest.approx(math.radians(1.0)) for s in segs)

    nl = 26
    tl = (np.arange(nl, dtype=np.int64) * 1_000_000)
    wl = np.zeros((nl, 3))
    wl[:, 1] = 2.0 * tl * 1e-9
    poly = motion_trace(GyroTrace(tl, wl), 0, float(tl[-1] * 1e-9))
    integ_ok = poly[-1, 1] == pytest.approx((tl[-1] * 1e-9) ** 2, rel=1e-12)

    aria_path = os.environ.get("GLASSESIM_ARIA_GYRO")
    if aria_path:
        aria = load_gyro_csv(aria_path)
        frac = blur_free_fraction(aria, 2 * ARCMIN, 5e-3)
        aria_ok = frac < 0.35
        aria_note = f"dataset sub-check frac={frac:.3f}"
    else:
        aria_ok = True
        aria_note = "dataset sub-check SKIPPED (set GLASSESIM_ARIA_GYRO)"

    ok = monotone and scale_ok and seg_ok and integ_ok and aria_ok and dt < 10.0
    report(4, "motion property suite", ok,
           f"1e7-sample cdf in {dt:.1f}s; {aria_note}")
    assert ok


def test_criterion_05_noise_round_trip():
    t0 = time.perf_counter()
    ramp = np.linspace(0.01, 0.2, 256)[:, None] * np.ones(256)[None, :]
    raw = mosaic(LinearImage(np.repeat(ramp[..., None], 3, axis=2)))
    worst_shot = worst_read = 0.0
    for name, model in NOISE_PRESETS.items():
        stack = [add_noise(raw, model, seed=100, frame_index=i)
                 for i in range(100)]
        fit = fit_noise_model(stack, gain=model.gain)
        for ch in "RGB":
            worst_shot = max(worst_shot, abs(
                fit.model.lambda_shot[ch] / model.lambda_shot[ch] - 1.0))
            worst_read = max(worst_read, abs(
                fit.model.lambda_read[ch] / model.lambda_read[ch] - 1.0))

    # composition law: synthesize at the clean gain, transfer to the noisy
    # gain, and compare the empirical variance to the target model
    src, tgt = NOISE_PRESETS["head-gain1"], NOISE_PRESETS["head-gain22"]
    flat = mosaic(LinearImage(np.full((128, 128, 3), 0.5)))
    frames = np.stack([
        noise_transfer(add_noise(flat, src, seed=7, frame_index=i), src, tgt,
                       seed=8, frame_index=i).values for i in range(300)])
    var_emp = frames.var(axis=0, ddof=1)
    masks = bayer_channel_masks("RGGB", (128, 128))
    worst_var = max(
        abs(var_emp[masks[ch]].mean()
            / (tgt.lambda_read[ch] + tgt.lambda_shot[ch] * 0.5) - 1.0)
        for ch in "RGB")
    dt = time.perf_counter() - t0
    ok = worst_shot <= 0.05 and worst_read <= 0.05 and worst_var <= 0.03 \
        and dt < 60.0
    report(5, "noise round trip", ok,
           f"shot {worst_shot:.2%}, read {worst_read:.2%}, "
           f"transfer var {worst_var:.2%}")
    assert ok


def test_criterion_06_geometry_suite():
    t0 = time.perf_counter()
    rig = desk_rig()
    rng = np.random.default_rng(0)
    n = 10000
    s = rig.guide.camera.sensor
    up = rig.upsample_factor
    px = rng.uniform([0.0, 0.0], [s.width_px * up - 1, s.height_px * up - 1],
                     size=(n, 2))
    depths = 1.0 / rng.uniform(1 / 100.0, 1 / 0.3, size=n)
    dets = rng.integers(0, len(rig.details), size=n)
    origin, dirs = pixel_rays(rig.guide, px, scale=up)
    pts = origin + depths[:, None] * dirs
    worst = 0.0
    for i in range(n):
        di = int(dets[i])
        seg = epipolar_segment(rig, di, px[i], (0.3, 100.0))
        uv, z = project(rig.details[di], pts[i])
        if z[0] <= 0:
            continue
        ab = seg.far_px - seg.near_px
        l2 = float(ab @ ab)
        t = 0.0 if l2 == 0 else float(np.clip((uv[0] - seg.near_px) @ ab / l2,
                                              0.0, 1.0))
        worst = max(worst, float(np.linalg.norm(uv[0] - (seg.near_px + t * ab))))

    h_pre = prewarp_homography(rig, 4, 1e6)
    r_rel, _ = relative_motion(rig, 4)
    k_d = intrinsics(rig.details[4].camera)
    k_g = intrinsics(rig.guide.camera, up)
    h_rot = np.linalg.inv(k_d @ r_rel @ np.linalg.inv(k_g))
    h_rot /= h_rot[2, 2]
    rot_diff = float(np.max(np.abs(h_pre - h_rot)))

    d_min = min_covered_distance(rig)
    cov_hi = coverage_fraction(rig, 1.05 * d_min, border_margin_px=100)
    cov_lo = coverage_fraction(rig, 0.95 * d_min, border_margin_px=100)
    dt = time.perf_counter() - t0
    ok = (worst < 0.5 and rot_diff < 1e-3
          and abs(d_min - 0.286) < 0.002 and cov_hi == 1.0 and cov_lo < 1.0
          and dt < 30.0)
    report(6, "geometry suite", ok,
           f"containment {worst:.2g}px, rot diff {rot_diff:.2g}, "
           f"d_min {d_min:.4f}m, coverage {cov_hi:.4f}/{cov_lo:.4f}")
    assert ok


@pytest.fixture(scope="module")
def full_scale():
    """Pinned 3-plane scene captured through the full degradation chain
    with the default 3x3 rig, plus ground truth and an occlusion mask."""
    rig = desk_rig()
    scene = standard_scene()
    g = rig.guide.camera
    s = g.sensor
    up = rig.upsample_factor
    target_cam = CameraSpec(
        lens=g.lens,
        sensor=SensorSpec(pixel_pitch=s.pixel_pitch / up,
                          width_px=s.width_px * up, height_px=s.height_px * up),
        coc_diameter=g.coc_diameter)
    gt = render(scene, target_cam, rig.guide.pose, supersample=2).values
    gt_depth = ground_truth_depth(scene, target_cam, rig.guide.pose)

    guide_clean = render(scene, g, rig.guide.pose, supersample=3)
    guide_blur = apply_psf_grid(guide_clean, psf_grid_preset("desk-7x7"))
    guide_raw = add_noise(mosaic(guide_blur), NOISE_PRESETS["desk-gain1"],
                          seed=11)

    det_psf = PsfGrid(((gaussian_kernel(0.6, 7),),))
    det_raws = []
    covered = np.zeros(gt_depth.size, bool)
    th, tw = gt_depth.shape
    cols, rows = np.meshgrid(np.arange(tw, dtype=np.float64),
                             np.arange(th, dtype=np.float64))
    px = np.stack([cols.ravel(), rows.ravel()], axis=1)
    origin, dirs = pixel_rays(rig.guide, px, scale=up)
    fin = np.isfinite(gt_depth.ravel())
    pts = origin + np.where(fin, gt_depth.ravel(), 1.0)[:, None] * dirs
    for i, det in enumerate(rig.details):
        img = render(scene, det.camera, det.pose, supersample=2)
        blurred = apply_psf_grid(img, det_psf)
        det_raws.append(add_noise(mosaic(blurred), NOISE_PRESETS["head-gain1"],
                                  seed=21, frame_index=i))
        # occlusion ground truth: a target pixel is covered when some detail
        # sees the same surface point (z-test against that detail's depth)
        det_depth = ground_truth_depth(scene, det.camera, det.pose)
        uv, z = project(det, pts)
        xi = np.round(uv[:, 0]).astype(np.int64)
        yi = np.round(uv[:, 1]).astype(np.int64)
        dh, dw = det_depth.shape
        inb = (xi >= 0) & (xi < dw) & (yi >= 0) & (yi < dh) & (z > 0) & fin
        dsamp = np.where(np.isfinite(det_depth), det_depth, 1e9)[yi[inb], xi[inb]]
        vis = np.abs(dsamp - z[inb]) < 0.01 * z[inb]
        covered[np.flatnonzero(inb)[vis]] = True
    occluded = ~covered.reshape(th, tw) & np.isfinite(gt_depth)
    return {"rig": rig, "gt": gt, "gt_depth": gt_depth,
            "guide_raw": guide_raw, "det_raws": det_raws, "occluded": occluded}


def test_criterion_07_reconstruction_end_to_end(full_scale):
    rig = full_scale["rig"]
    gt = full_scale["gt"]
    gt_depth = full_scale["gt_depth"]
    cfg = FusionConfig(depth_range=(1.0, 6.0), depth_samples=96,
                       depth_edge_fraction=0.15)
    old_threads = cv2.getNumThreads()
    cv2.setNumThreads(1)
    try:
        t0 = time.perf_counter()
        guide_up = upsample_guide(demosaic(full_scale["guide_raw"]),
                                  rig.upsample_factor)
        dets_lin, fields = [], []
        for i, raw in enumerate(full_scale["det_raws"]):
            det = demosaic(raw)
            dets_lin.append(det)
            fields.append(match_epipolar(guide_up, det, rig, i, cfg))
        occlusion_veto(fields, rig, cfg)
        sources = []
        for det, fld in zip(dets_lin, fields):
            warped, mask = warp_detail(det, fld)
            if fld.valid.size:
                sources.append(WarpedSource(np.float32(warped.values), mask,
                                            fld.confidence, origin=fld.origin))
        w_out = np.zeros(rig.target_shape)
        fused = fuse(guide_up, sources, cfg, detail_weight_out=w_out)
        depth = triangulate_depth(fields, rig, cfg)
        runtime = time.perf_counter() - t0
    finally:
        cv2.setNumThreads(old_threads)

    lum = gt.mean(axis=2)
    gy, gx = np.gradient(lum)
    textured = cv2.boxFilter(np.hypot(gx, gy), -1, (31, 31)) > 0.02

    def masked_psnr(a, b, m):
        return 10.0 * math.log10(1.0 / float(np.mean((a[m] - b[m]) ** 2)))

    p_guide = masked_psnr(gt, guide_up.values, textured)
    p_fused = masked_psnr(gt, fused.values, textured)

    occ = full_scale["occluded"]
    leak = float((w_out[occ] > 0).mean())

    k = intrinsics(rig.guide.camera, rig.upsample_factor)
    u = k[0, 0] * 0.45 / 2.0 + k[0, 2]
    v = k[1, 1] * 0.1 / 2.0 + k[1, 2]
    roi = (int(u) - 80, int(v) - 100, int(u) + 80, int(v) + 100)
    mtf_ratio = (mtf50_slanted_edge(fused, roi)
                 / mtf50_slanted_edge(guide_up, roi))

    ok = (p_fused >= p_guide + 3.0 and mtf_ratio >= 1.8 and leak == 0.0
          and runtime < 300.0)
    report(7, "reconstruction end-to-end", ok,
           f"textured PSNR {p_guide:.2f}->{p_fused:.2f}dB "
           f"(+{p_fused - p_guide:.2f}), MTF50 ratio {mtf_ratio:.2f}, "
           f"occlusion leak {leak:.4f}, runtime {runtime:.0f}s")
    assert ok


def test_criterion_08_burst_law():
    t0 = time.perf_counter()
    big = noise_texture(256, seed=9, smooth_px=3.0)

    def crop(dx, dy):
        return mosaic(LinearImage(big[40 - dy:200 - dy, 40 - dx:200 - dx]))

    shifts = [(0, 0), (2, -3), (-4, 1), (5, 4), (-1, -2)]
    align = estimate_alignment([crop(dx, dy) for dx, dy in shifts])
    ref = shifts[len(shifts) // 2]
    shift_err = max(max(abs(a["dx"] - (ref[0] - dx)), abs(a["dy"] - (ref[1] - dy)))
                    for (dx, dy), a in zip(shifts, align))

    clean = crop(0, 0)
    truth = demosaic(clean).values
    model = NoiseModel.uniform(0.0, 4.0e-4)

    def residual_std(n):
        frames = [add_noise(clean, model, seed=7, frame_index=i)
                  for i in range(n)]
        merged = burst_merge(frames) if n > 1 else demosaic(frames[0])
        return float(np.std(merged.values[8:-8, 8:-8] - truth[8:-8, 8:-8]))

    base = residual_std(1)
    ratios = {n: base / residual_std(n) for n in (2, 4, 8)}
    ratio_ok = all(abs(ratios[n] / math.sqrt(n) - 1.0) <= 0.20
                   for n in ratios)
    dt = time.perf_counter() - t0
    ok = shift_err <= 0.1 and ratio_ok and dt < 60.0
    report(8, "burst law", ok,
           "std ratios " + ", ".join(f"N={n}: {ratios[n]:.2f}" for n in ratios)
           + f"; worst shift error {shift_err:.3f}px")
    assert ok


def test_criterion_09_depth():
    t0 = time.perf_counter()
    cfg = FusionConfig(depth_range=(1.0, 6.0), depth_samples=96,
                       score_scale=1, prefilter_sigma=0.0,
                       depth_edge_fraction=0.0)
    rig1 = baseline_rig((0.01,))
    fld = exact_plane_field(rig1, 0, 2.0)
    depth = triangulate_depth([fld], rig1, cfg)
    sel = np.isfinite(depth)
    tri_err = float(np.max(np.abs(depth[sel] - 2.0) / 2.0))

    rig2 = baseline_rig((0.01, 0.01))
    fa = exact_plane_field(rig2, 0, 2.0)
    fb = exact_plane_field(rig2, 1, 2.0)
    fa.valid[:, 130:] = False
    fb.valid[:, :62] = False
    fb.dx = fb.dx + 0.8

    def max_seam_gradient(blend):
        import copy
        d = triangulate_depth([copy.deepcopy(fa), copy.deepcopy(fb)], rig2,
                              cfg, blend=blend)
        row = d[96, 40:150]
        row = row[np.isfinite(row)]
        return float(np.max(np.abs(np.diff(row))))

    g_dist = max_seam_gradient("distance")
    g_unif = max_seam_gradient("uniform")
    dt = time.perf_counter() - t0
    ok = tri_err < 1e-3 and g_dist < g_unif and dt < 60.0
    report(9, "depth", ok,
           f"plane rel err {tri_err:.2g}, seam gradient "
           f"{g_dist:.4f} (blended) vs {g_unif:.4f} (uniform)")
    assert ok


def test_criterion_10_determinism(tmp_path):
    from glassesim.rig import Pose
    from glassesim.scene import Quad, SceneSpec

    rig = baseline_rig((0.01,))
    rig_path = tmp_path / "rig.json"
    rig_path.write_text(rig.to_json())
    quad = Quad(pose=Pose(np.eye(3), np.array([0.0, 0.0, 2.0])),
                width=2.5, height=2.5,
                texture=noise_texture(512, seed=5, smooth_px=2.0))
    scene = SceneSpec(quads=(quad,))
    caps = tmp_path / "caps"
    caps.mkdir()
    g = render(scene, rig.guide.camera, rig.guide.pose)
    d = render(scene, rig.details[0].camera, rig.details[0].pose)
    write_png16(caps / "guide.png", mosaic(g))
    write_png16(caps / "detail_00.png", mosaic(d))
    lin_path = tmp_path / "lin.png"
    write_png16(lin_path, g)
    cfg = FusionConfig(depth_range=(1.0, 6.0), depth_samples=32,
                       score_scale=1, prefilter_sigma=0.0,
                       depth_edge_fraction=0.0)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(cfg.to_json())

    recon_outputs = []
    for label, threads in (("a", "1"), ("b", "1"), ("c", "4")):
        out_dir = tmp_path / f"recon_{label}"
        assert cli_main(["reconstruct", "--rig", str(rig_path),
                         "--captures", str(caps), "--config", str(cfg_path),
                         "--threads", threads, "--out-dir", str(out_dir)]) == 0
        recon_outputs.append({name: (out_dir / name).read_bytes()
                              for name in ("out.png", "depth.pfm",
                                           "diagnostics.json")})
    recon_ok = all(o == recon_outputs[0] for o in recon_outputs[1:])

    degrade_outputs = []
    for label, threads in (("a", "1"), ("b", "1"), ("c", "4")):
        out = tmp_path / f"deg_{label}.png"
        assert cli_main(["degrade", "--input", str(lin_path), "--factor", "1",
                         "--psf", "desk-7x7", "--noise", "desk-gain1",
                         "--seed", "3", "--threads", threads,
                         "--out", str(out)]) == 0
        degrade_outputs.append(out.read_bytes())
    degrade_ok = all(o == degrade_outputs[0] for o in degrade_outputs[1:])

    ok = recon_ok and degrade_ok
    report(10, "determinism", ok,
           f"reconstruct identical={recon_ok}, degrade identical={degrade_ok} "
           "across repeat runs and threads {1,4}")
    assert ok
