"""Command-line interface: one executable, one subcommand per pipeline."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import cv2
import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, GlassesimError
from .image import (LinearImage, RawImage, read_pfm, read_png16, write_pfm,
                    write_png16, write_preview_png)
from .optics import (ARCMIN, CameraSpec, LensSpec, SensorSpec,
                     camera_for_angular_resolution, tradespace_csv,
                     tradespace_curve)
from .radiometry import required_illuminance, snr_grid_csv
from .motion import (blur_free_cdf, cdf_csv, head_still_segments, load_gyro_csv,
                     motion_trace, motion_trace_csv)
from .rig import (RigSpec, coverage_fraction, desk_rig, min_covered_distance,
                  plan_tiling, Pose)
from .scene import (SceneSpec, ground_truth_depth, load_scene, render,
                    standard_scene)
from .degrade import (NOISE_PRESETS, NoiseModel, degrade_guide, load_psf_grid,
                      psf_grid_preset, fit_noise_model)
from .reconstruct import (CaptureSet, FusionConfig, burst_merge,
                          reconstruct_frame)
from .metrics import QrTarget, mtf50_slanted_edge, ppd_qr, psnr, ssim
from .svgplot import svg_line_plot


def parse_range(text: str) -> list:
    """Sweep values: 'start:stop:step' (inclusive of stop within half a
    step), a comma list, or a single number."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ConfigError("range needs step > 0 and stop >= start")
        return [float(v) for v in np.arange(start, stop + step / 2.0, step)]
    return [float(p) for p in text.split(",") if p.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="global RNG seed")
    p.add_argument("--threads", type=int, default=None,
                   help="cap worker threads (default: GLASSESIM_THREADS or all cores)")
    p.add_argument("--json-errors", action="store_true",
                   help="emit machine-readable errors on stderr")
    p.add_argument("--verbose", action="store_true", help="chatty progress output")


def _apply_threads(args) -> None:
    n = args.threads
    if n is None:
        env = os.environ.get("GLASSESIM_THREADS")
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise ConfigError("--threads must be >= 1")
        cv2.setNumThreads(n)


def _load_raw(path) -> RawImage:
    img = read_png16(path, raw=True)
    if not isinstance(img, RawImage):
        raise ConfigError(f"{path} is not a raw capture")
    return img


def _load_noise_model(spec: str) -> NoiseModel:
    if spec in NOISE_PRESETS:
        return NOISE_PRESETS[spec]
    return NoiseModel.from_json(Path(spec).read_text())


def _load_psf(spec: str):
    try:
        return psf_grid_preset(spec)
    except ConfigError:
        if Path(spec).is_dir():
            return load_psf_grid(spec)
        raise


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# --- subcommands ----------------------------------------------------------

def cmd_tradespace(args) -> int:
    dthetas = [v * ARCMIN for v in parse_range(args.dtheta_arcmin)]
    pupils = [v * 1e-3 for v in parse_range(args.pupil_mm)]
    rows = tradespace_curve(dthetas, pupils, wavelength=args.wavelength_nm * 1e-9)
    _write_text(args.out, tradespace_csv(rows))
    if args.svg:
        series = []
        for dt in dthetas:
            sub = [r for r in rows if r.delta_theta == dt and r.feasible]
            if sub:
                series.append((f"{dt / ARCMIN:g} arcmin",
                               [r.pupil_diameter * 1e3 for r in sub],
                               [r.hyperfocal for r in sub]))
        svg_line_plot(args.svg, series, xlabel="entrance pupil [mm]",
                      ylabel="hyperfocal distance [m]",
                      title="resolution / depth-of-field trade space")
    return 0


def cmd_photon_budget(args) -> int:
    ifov = args.ifov_arcmin * ARCMIN
    pitch = args.pixel_pitch_um * 1e-6
    f = pitch / ifov
    camera = CameraSpec(
        lens=LensSpec(focal_length=f, entrance_pupil_diameter=f / args.f_number,
                      transmission=args.transmission),
        sensor=SensorSpec(pixel_pitch=pitch, width_px=64, height_px=64),
        coc_diameter=2.0 * f * ifov)
    illum = parse_range(args.illuminance_lux)
    expos = [v * 1e-3 for v in parse_range(args.exposure_ms)]
    _write_text(args.out, snr_grid_csv(camera, illum, expos,
                                       reflectance=args.reflectance))
    if args.target_snr is not None:
        req = required_illuminance(camera, expos[0], args.target_snr,
                                   channel=args.channel)
        print(json.dumps({"required_lux": req, "exposure_s": expos[0],
                          "channel": args.channel}))
    return 0


def cmd_motion_analyze(args) -> int:
    trace = load_gyro_csv(args.gyro)
    expos = np.array([v * 1e-3 for v in parse_range(args.exposures_ms)])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series = []
    for dt_arcmin in parse_range(args.dtheta_arcmin):
        frac = blur_free_cdf(trace, dt_arcmin * ARCMIN, expos)
        name = f"cdf_{dt_arcmin:g}arcmin.csv"
        (out_dir / name).write_text(cdf_csv(expos, frac))
        series.append((f"{dt_arcmin:g} arcmin", [e * 1e3 for e in expos],
                       list(frac)))
    if args.svg:
        svg_line_plot(args.svg, series, xlabel="exposure [ms]",
                      ylabel="blur-free fraction", title="motion blur budget")
    segs = head_still_segments(trace, math.radians(args.still_threshold_deg_s))
    if args.trace_window_ms > 0:
        poly = motion_trace(trace, int(trace.timestamps_ns[0]),
                            args.trace_window_ms * 1e-3)
        (out_dir / "trace.csv").write_text(motion_trace_csv(poly))
    print(json.dumps({
        "samples": int(len(trace.timestamps_ns)),
        "duration_s": trace.duration_s,
        "still_segments": len(segs),
        "still_time_s": sum((s.end_ns - s.start_ns) * 1e-9 for s in segs),
    }, indent=2))
    return 0


def cmd_rig_plan(args) -> int:
    if args.preset:
        if args.preset != "desk":
            raise ConfigError(f"unknown rig preset {args.preset!r}")
        rig = desk_rig()
    else:
        if not (args.guide_camera and args.grid and args.positions):
            raise ConfigError("need --guide-camera, --grid and --positions "
                              "(or --preset desk)")
        guide = CameraSpec.from_json(Path(args.guide_camera).read_text())
        rows, cols = (int(v) for v in args.grid.lower().split("x"))
        positions = [np.array([float(x) for x in triple.split(",")])
                     for triple in args.positions.split(";") if triple.strip()]
        rig = plan_tiling(guide, (rows, cols),
                          math.radians(args.overlap_deg), positions,
                          upsample_factor=args.upsample_factor)
    Path(args.out).write_text(rig.to_json())
    d_min = min_covered_distance(rig)
    summary = {"min_covered_distance_m": d_min,
               "grid": list(rig.grid),
               "detail_focal_mm": rig.details[0].camera.lens.focal_length * 1e3}
    if math.isfinite(d_min):
        summary["coverage_at_1.05x"] = coverage_fraction(rig, 1.05 * d_min)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_render(args) -> int:
    scene = standard_scene(seed=args.seed) if args.scene == "standard" \
        else load_scene(args.scene)
    rig = RigSpec.from_json(Path(args.rig).read_text())
    view = args.view
    if view == "guide":
        placed = rig.guide
        camera, pose = placed.camera, placed.pose
    elif view == "target":
        g = rig.guide.camera
        u = rig.upsample_factor
        camera = CameraSpec(
            lens=g.lens,
            sensor=SensorSpec(pixel_pitch=g.sensor.pixel_pitch / u,
                              width_px=g.sensor.width_px * u,
                              height_px=g.sensor.height_px * u,
                              bayer_pattern=g.sensor.bayer_pattern,
                              bit_depth=g.sensor.bit_depth),
            coc_diameter=g.coc_diameter)
        pose = rig.guide.pose
    elif view.startswith("detail:"):
        placed = rig.details[int(view.split(":")[1])]
        camera, pose = placed.camera, placed.pose
    else:
        raise ConfigError("--view must be guide, target, or detail:N")
    img = render(scene, camera, pose, supersample=args.supersample)
    write_png16(args.out, LinearImage(np.clip(img.values, 0.0, 1.0)))
    if args.preview:
        write_preview_png(args.preview, LinearImage(np.clip(img.values, 0.0, 1.0)))
    if args.depth:
        write_pfm(args.depth, ground_truth_depth(scene, camera, pose))
    return 0


def cmd_degrade(args) -> int:
    src = read_png16(args.input)
    if isinstance(src, RawImage):
        raise ConfigError("degrade expects a linear RGB input")
    grid = _load_psf(args.psf)
    model = _load_noise_model(args.noise)
    raw = degrade_guide(src, args.factor, grid, model, seed=args.seed,
                        pattern=args.pattern, binning=args.binning,
                        frame_index=args.frame_index)
    write_png16(args.out, raw)
    return 0


def cmd_noise_fit(args) -> int:
    paths = sorted(Path(args.frames).glob("*.png"))
    if not paths:
        raise ConfigError(f"no frames found in {args.frames}")
    stack = [_load_raw(p) for p in paths]
    fit = fit_noise_model(stack, gain=args.gain)
    Path(args.out).write_text(fit.model.to_json())
    print(json.dumps({"frames": fit.n_frames,
                      "stderr_shot": fit.stderr_shot,
                      "stderr_read": fit.stderr_read}, indent=2))
    return 0


def cmd_burst_merge(args) -> int:
    paths = sorted(Path(args.frames).glob("*.png"))
    if len(paths) < 2:
        raise ConfigError(f"need at least 2 frames in {args.frames}")
    report: dict = {}
    merged = burst_merge([_load_raw(p) for p in paths], report=report)
    write_png16(args.out, LinearImage(np.clip(merged.values, 0.0, 1.0)))
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _load_capture(directory: Path, stem: str):
    single = directory / f"{stem}.png"
    burst_dir = directory / f"{stem}_burst"
    if single.exists():
        return _load_raw(single)
    if burst_dir.is_dir():
        paths = sorted(burst_dir.glob("*.png"))
        if len(paths) >= 2:
            return [_load_raw(p) for p in paths]
    raise ConfigError(f"missing capture {stem}.png (or {stem}_burst/) in {directory}")


def cmd_reconstruct(args) -> int:
    rig = RigSpec.from_json(Path(args.rig).read_text())
    cfg = FusionConfig.from_json(Path(args.config).read_text()) if args.config \
        else FusionConfig()
    cap_dir = Path(args.captures)
    captures = CaptureSet(
        guide=_load_capture(cap_dir, "guide"),
        details=[_load_capture(cap_dir, f"detail_{i:02d}")
                 for i in range(len(rig.details))])
    fused, depth, diag = reconstruct_frame(captures, rig, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_png16(out_dir / "out.png", LinearImage(np.clip(fused.values, 0.0, 1.0)))
    write_pfm(out_dir / "depth.pfm", np.where(np.isfinite(depth), depth, 0.0))
    # timings are run-dependent; keep the on-disk diagnostics reproducible
    timings = diag.pop("stages_s", {})
    (out_dir / "diagnostics.json").write_text(
        json.dumps(diag, indent=2, sort_keys=True))
    if args.verbose:
        print(json.dumps({"stages_s": timings}, indent=2), file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    a = read_png16(args.a)
    b = read_png16(args.b)
    va, vb = a.values, b.values
    mask_applied = False
    if args.mask:
        m = read_png16(args.mask).luminance() > 0.5
        va = np.where(m[..., None] if va.ndim == 3 else m, va, 0.0)
        vb = np.where(m[..., None] if vb.ndim == 3 else m, vb, 0.0)
        mask_applied = True
    result = {"psnr_db": psnr(va, vb), "ssim": ssim(va, vb),
              "mask_applied": mask_applied}
    if args.edge_roi:
        roi = tuple(int(v) for v in args.edge_roi.split(","))
        result["mtf50_a"] = mtf50_slanted_edge(a.values, roi)
        result["mtf50_b"] = mtf50_slanted_edge(b.values, roi)
    if args.qr:
        p, w, d = args.qr.split(",")
        result["ppd_qr"] = ppd_qr(QrTarget(int(p), float(w), float(d)))
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glassesim",
        description="Design and simulation toolkit for guide+detail "
                    "multi-camera imaging rigs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tradespace",
                       help="resolution vs depth-of-field trade space sweep")
    p.add_argument("--dtheta-arcmin", required=True,
                   help="angular resolutions, start:stop:step or comma list")
    p.add_argument("--pupil-mm", required=True,
                   help="entrance pupil diameters [mm], range or list")
    p.add_argument("--wavelength-nm", type=float, default=500.0,
                   help="design wavelength [nm]")
    p.add_argument("--out", default="-", help="CSV output path (- = stdout)")
    p.add_argument("--svg", help="optional SVG plot path")
    _add_common(p)
    p.set_defaults(func=cmd_tradespace)

    p = sub.add_parser("photon-budget", help="photon/SNR budget sweep")
    p.add_argument("--ifov-arcmin", type=float, required=True,
                   help="per-pixel field of view [arcmin]")
    p.add_argument("--pixel-pitch-um", type=float, default=1.0,
                   help="sensor pixel pitch [um]")
    p.add_argument("--f-number", type=float, default=1.8, help="lens f-number")
    p.add_argument("--transmission", type=float, default=1.0,
                   help="lens transmission factor")
    p.add_argument("--reflectance", type=float, default=0.18,
                   help="scene reflectance")
    p.add_argument("--illuminance-lux", required=True,
                   help="illuminance sweep [lux], range or list")
    p.add_argument("--exposure-ms", required=True,
                   help="exposure sweep [ms], range or list")
    p.add_argument("--target-snr", type=float,
                   help="also print illuminance required for this SNR")
    p.add_argument("--channel", default="G", choices=("R", "G", "B"),
                   help="channel for --target-snr")
    p.add_argument("--out", default="-", help="CSV output path (- = stdout)")
    _add_common(p)
    p.set_defaults(func=cmd_photon_budget)

    p = sub.add_parser("motion-analyze", help="gyro-trace blur analysis")
    p.add_argument("--gyro", required=True, help="gyro CSV path")
    p.add_argument("--dtheta-arcmin", default="1,2",
                   help="blur thresholds [arcmin], comma list")
    p.add_argument("--exposures-ms", default="1:50:1",
                   help="exposure sweep [ms], range or list")
    p.add_argument("--still-threshold-deg-s", type=float, default=3.0,
                   help="head-still speed threshold [deg/s]")
    p.add_argument("--trace-window-ms", type=float, default=0.0,
                   help="also integrate a yaw/pitch trace over this window")
    p.add_argument("--out-dir", default=".", help="directory for CDF CSV files")
    p.add_argument("--svg", help="optional SVG plot path")
    _add_common(p)
    p.set_defaults(func=cmd_motion_analyze)

    p = sub.add_parser("rig-plan", help="plan a guide+detail rig")
    p.add_argument("--preset", help="named rig preset (desk)")
    p.add_argument("--guide-camera", help="guide CameraSpec JSON path")
    p.add_argument("--grid", help="detail grid, e.g. 3x3")
    p.add_argument("--overlap-deg", type=float, default=2.0,
                   help="angular overlap between adjacent detail FOVs [deg]")
    p.add_argument("--positions",
                   help="detail centers 'x,y,z;x,y,z;...' in meters")
    p.add_argument("--upsample-factor", type=int, default=4,
                   help="target resolution / guide resolution")
    p.add_argument("--out", required=True, help="rig JSON output path")
    _add_common(p)
    p.set_defaults(func=cmd_rig_plan)

    p = sub.add_parser("render", help="render ground-truth views of a scene")
    p.add_argument("--scene", default="standard",
                   help="scene JSON path or 'standard'")
    p.add_argument("--rig", required=True, help="rig JSON path")
    p.add_argument("--view", required=True,
                   help="guide | target | detail:N")
    p.add_argument("--supersample", type=int, default=2,
                   help="sub-rays per pixel axis (1..8)")
    p.add_argument("--out", required=True, help="16-bit PNG output")
    p.add_argument("--preview", help="optional 8-bit sRGB preview PNG")
    p.add_argument("--depth", help="optional ground-truth depth PFM")
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("degrade", help="simulate a degraded raw capture")
    p.add_argument("--input", required=True, help="linear RGB 16-bit PNG")
    p.add_argument("--factor", type=int, default=1,
                   help="box-downsample factor before blur")
    p.add_argument("--psf", default="desk-7x7",
                   help="PSF grid preset name or directory")
    p.add_argument("--noise", default="desk-gain1",
                   help="noise model preset name or JSON path")
    p.add_argument("--pattern", default="RGGB", help="Bayer pattern")
    p.add_argument("--binning", action="store_true",
                   help="apply 2x2 same-color binning")
    p.add_argument("--frame-index", type=int, default=0,
                   help="burst frame index for the noise stream")
    p.add_argument("--out", required=True, help="raw 16-bit PNG output")
    _add_common(p)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("noise-fit", help="fit a noise model from a flat stack")
    p.add_argument("--frames", required=True,
                   help="directory of raw PNG frames (same scene/settings)")
    p.add_argument("--gain", default="", help="gain tag stored in the model")
    p.add_argument("--out", required=True, help="noise model JSON output")
    _add_common(p)
    p.set_defaults(func=cmd_noise_fit)

    p = sub.add_parser("burst-merge", help="align and merge a raw burst")
    p.add_argument("--frames", required=True, help="directory of raw PNG frames")
    p.add_argument("--out", required=True, help="merged linear PNG output")
    p.add_argument("--report", help="optional alignment report JSON path")
    _add_common(p)
    p.set_defaults(func=cmd_burst_merge)

    p = sub.add_parser("reconstruct", help="full guide+detail reconstruction")
    p.add_argument("--rig", required=True, help="rig JSON path")
    p.add_argument("--captures", required=True,
                   help="directory with guide.png and detail_XX.png "
                        "(or *_burst/ subdirectories)")
    p.add_argument("--config", help="FusionConfig JSON path")
    p.add_argument("--out-dir", required=True,
                   help="output directory (out.png, depth.pfm, diagnostics.json)")
    _add_common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="image-quality metrics between two images")
    p.add_argument("--a", required=True, help="first image (16-bit PNG)")
    p.add_argument("--b", required=True, help="second image (16-bit PNG)")
    p.add_argument("--mask", help="optional mask PNG (luminance > 0.5)")
    p.add_argument("--edge-roi", help="slanted-edge ROI x0,y0,x1,y1 for MTF50")
    p.add_argument("--qr", help="QR target 'modules,width_m,distance_m'")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args)
        return args.func(args)
    except (GlassesimError, OSError, ValueError) as exc:
        if getattr(args, "json_errors", False):
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                  file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
