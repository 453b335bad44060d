import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glassesim.errors import DomainError, ParseError
from glassesim.motion import (GyroTrace, StillSegment, blur_free_cdf,
                              blur_free_fraction, head_still_segments,
                              load_gyro_csv, max_exposure, motion_trace)
from glassesim.optics import ARCMIN

DEG_S = math.pi / 180.0


def make_trace(speeds_rad_s, rate_hz=1000.0, axis=0):
    n = len(speeds_rad_s)
    ts = (np.arange(n) * 1e9 / rate_hz).astype(np.int64)
    w = np.zeros((n, 3))
    w[:, axis] = speeds_rad_s
    return GyroTrace(ts, w)


def test_load_two_row_file(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("t_ns,wx_rad_s,wy_rad_s,wz_rad_s\n0,0.1,0,0\n1000000,0.2,0,0\n")
    trace = load_gyro_csv(p)
    assert len(trace.timestamps_ns) == 2
    assert trace.speeds[1] == pytest.approx(0.2)


def test_load_reports_bad_line(tmp_path):
    p = tmp_path / "g.csv"
    rows = ["t_ns,wx_rad_s,wy_rad_s,wz_rad_s"]
    rows += [f"{i * 1000000},0.1,0,0" for i in range(3)]
    rows.append("1500000,0.1,0,0")  # goes backwards at file line 5
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(ParseError) as exc:
        load_gyro_csv(p)
    assert "line 5" in str(exc.value)


def test_load_constant_rate_fixture(tmp_path):
    p = tmp_path / "g.csv"
    lines = ["t_ns,wx_rad_s,wy_rad_s,wz_rad_s"]
    lines += [f"{i * 1000000},0.1,0.0,0.0" for i in range(1000)]
    p.write_text("\n".join(lines) + "\n")
    trace = load_gyro_csv(p)
    assert len(trace.timestamps_ns) == 1000
    assert np.allclose(trace.speeds, 0.1)


def test_trace_rejects_sparse_sampling():
    with pytest.raises(DomainError):
        GyroTrace(np.array([0, 50_000_000], dtype=np.int64), np.zeros((2, 3)))


def test_max_exposure_example():
    t = max_exposure(2 * ARCMIN, 60 * DEG_S)
    assert t == pytest.approx(5.556e-4, rel=1e-3)
    assert max_exposure(4 * ARCMIN, 60 * DEG_S) == pytest.approx(2 * t)
    assert max_exposure(1 * ARCMIN, 60 * DEG_S) == pytest.approx(t / 2)
    assert max_exposure(2 * ARCMIN, 0.0) == math.inf


def test_blur_free_fraction_zero_exposure():
    trace = make_trace(np.linspace(0.01, 1.0, 50))
    assert blur_free_fraction(trace, 2 * ARCMIN, 0.0) == 1.0


def test_blur_free_fraction_threshold_is_inclusive():
    # power-of-two speed keeps speed * (dtheta / speed) exact
    speed = 0.25
    trace = make_trace(np.full(100, speed))
    t_crit = 2 * ARCMIN / speed
    assert blur_free_fraction(trace, 2 * ARCMIN, t_crit) == 1.0
    assert blur_free_fraction(trace, 2 * ARCMIN, t_crit * 1.001) == 0.0


@given(st.floats(1e-5, 1e-2), st.floats(1e-4, 0.1))
def test_blur_free_scale_invariance(dtheta, exposure):
    trace = make_trace(np.geomspace(1e-3, 3.0, 64))
    a = blur_free_fraction(trace, dtheta, exposure)
    b = blur_free_fraction(trace, 2 * dtheta, 2 * exposure)
    assert a == b


def test_blur_free_cdf_matches_scalar_and_is_monotone():
    rng = np.random.default_rng(0)
    trace = make_trace(rng.gamma(2.0, 0.3, size=5000))
    exposures = np.linspace(0.0, 0.05, 50)
    cdf = blur_free_cdf(trace, 2 * ARCMIN, exposures)
    for e, f in zip(exposures[::7], cdf[::7]):
        assert f == blur_free_fraction(trace, 2 * ARCMIN, float(e))
    assert np.all(np.diff(cdf) <= 0)
    # and non-decreasing in the blur budget
    cdf2 = blur_free_cdf(trace, 4 * ARCMIN, exposures)
    assert np.all(cdf2 >= cdf)


def test_still_segments_all_still():
    trace = make_trace(np.full(500, 1 * DEG_S))
    segs = head_still_segments(trace, 3 * DEG_S)
    assert len(segs) == 1
    assert segs[0].start_ns == trace.timestamps_ns[0]
    assert segs[0].end_ns == trace.timestamps_ns[-1]


def test_still_segments_alternating_fixture():
    # 1 deg/s for 1 s, 10 deg/s for 1 s, repeated
    block = 1000
    speeds = np.concatenate([np.full(block, 1 * DEG_S), np.full(block, 10 * DEG_S)] * 3)
    trace = make_trace(speeds)
    segs = head_still_segments(trace, 3 * DEG_S, min_duration=0.5)
    assert len(segs) == 3
    for s in segs:
        assert s.peak_speed == pytest.approx(1 * DEG_S)
        assert (s.end_ns - s.start_ns) * 1e-9 == pytest.approx(0.999, rel=1e-6)


def test_still_segments_tiny_threshold():
    trace = make_trace(np.full(100, 0.5))
    assert head_still_segments(trace, 1e-12) == []


def test_still_segments_contract():
    rng = np.random.default_rng(3)
    trace = make_trace(rng.gamma(1.5, 0.04, size=4000))
    thr = 3 * DEG_S
    segs = head_still_segments(trace, thr, min_duration=0.01)
    ts = trace.timestamps_ns
    for a, b in zip(segs, segs[1:]):
        assert a.end_ns < b.start_ns  # disjoint, ordered
    for s in segs:
        inside = (ts >= s.start_ns) & (ts <= s.end_ns)
        assert np.all(trace.speeds[inside] < thr)
        # maximal: neighbors just outside are fast
        i0 = int(np.flatnonzero(ts == s.start_ns)[0])
        i1 = int(np.flatnonzero(ts == s.end_ns)[0])
        if i0 > 0:
            assert trace.speeds[i0 - 1] >= thr
        if i1 + 1 < len(ts):
            assert trace.speeds[i1 + 1] >= thr


def test_motion_trace_zero_rate():
    trace = make_trace(np.zeros(100))
    poly = motion_trace(trace, 0, 0.05)
    assert np.allclose(poly, 0.0)


def test_motion_trace_constant_yaw():
    trace = make_trace(np.full(100, 1 * DEG_S), axis=0)
    poly = motion_trace(trace, 0, 0.025)
    assert poly[0] == pytest.approx([0.0, 0.0])
    assert poly[-1, 0] == pytest.approx(math.radians(0.025), rel=1e-9)
    assert poly[-1, 1] == 0.0


def test_motion_trace_sign_mirror():
    rng = np.random.default_rng(1)
    w = rng.normal(0, 0.5, size=(200, 3))
    ts = (np.arange(200) * 1e6).astype(np.int64)
    a = motion_trace(GyroTrace(ts, w), 0, 0.1)
    b = motion_trace(GyroTrace(ts, -w), 0, 0.1)
    assert np.allclose(a, -b)


def test_motion_trace_exact_for_linear_rate():
    # trapezoid integration is exact for a linearly varying rate
    n = 26
    ts = (np.arange(n) * 1e6).astype(np.int64)
    w = np.zeros((n, 3))
    t_s = ts * 1e-9
    w[:, 1] = 2.0 * t_s  # pitch rate ramps linearly
    poly = motion_trace(GyroTrace(ts, w), 0, float(t_s[-1]))
    assert poly[-1, 1] == pytest.approx(t_s[-1] ** 2, rel=1e-12)


def test_motion_trace_window_bounds():
    trace = make_trace(np.zeros(10))
    with pytest.raises(DomainError):
        motion_trace(trace, 0, 1.0)


def test_still_segment_validation():
    with pytest.raises(DomainError):
        StillSegment(10, 10, 0.0)
