"""Head-motion analysis from gyroscope traces.

Works on timestamped 3-axis angular-velocity samples: maximum blur-free
exposure times, the fraction of data below a blur threshold, head-still
segmentation, and short-window integration for rendering blur traces.

Speed is the Euclidean norm of the 3-axis rate vector throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParseError

GYRO_CSV_HEADER = ("t_ns", "wx_rad_s", "wy_rad_s", "wz_rad_s")
MAX_SAMPLE_SPACING_NS = 20_000_000  # 20 ms; coarser spacing breaks integration


@dataclass(frozen=True)
class GyroTrace:
    timestamps_ns: np.ndarray     # int64, strictly increasing
    angular_velocity: np.ndarray  # (N, 3) rad/s
    source_id: str = ""

    def __post_init__(self):
        ts = np.asarray(self.timestamps_ns)
        w = np.asarray(self.angular_velocity)
        if ts.ndim != 1 or len(ts) < 2:
            raise DomainError("trace needs at least 2 samples")
        if w.shape != (len(ts), 3):
            raise DomainError("angular_velocity must be (N, 3)")
        dt = np.diff(ts)
        if np.any(dt <= 0):
            raise DomainError("timestamps must be strictly increasing")
        if np.any(dt > MAX_SAMPLE_SPACING_NS):
            raise DomainError("sample spacing exceeds 20 ms")

    @property
    def speeds(self) -> np.ndarray:
        """Rotation-rate magnitude per sample [rad/s]."""
        return np.linalg.norm(self.angular_velocity, axis=1)

    @property
    def duration_s(self) -> float:
        return float(self.timestamps_ns[-1] - self.timestamps_ns[0]) * 1e-9


@dataclass(frozen=True)
class StillSegment:
    start_ns: int
    end_ns: int
    peak_speed: float  # rad/s

    def __post_init__(self):
        if self.end_ns <= self.start_ns:
            raise DomainError("segment end must be after start")


def load_gyro_csv(path) -> GyroTrace:
    """Parse a gyro CSV with columns t_ns,wx_rad_s,wy_rad_s,wz_rad_s."""
    ts, w = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if tuple(c.strip() for c in row) != GYRO_CSV_HEADER:
                    raise ParseError(f"expected header {','.join(GYRO_CSV_HEADER)}", line=1)
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise ParseError("expected 4 columns", line=lineno)
            try:
                t = int(row[0])
                vec = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if ts and t <= ts[-1]:
                raise ParseError("non-monotonic timestamp", line=lineno)
            ts.append(t)
            w.append(vec)
    if len(ts) < 2:
        raise ParseError("need at least 2 samples")
    return GyroTrace(np.asarray(ts, dtype=np.int64), np.asarray(w, dtype=np.float64),
                     source_id=str(path))


def max_exposure(delta_theta: float, speed: float) -> float:
    """Longest exposure keeping motion blur below delta_theta: t = dtheta/omega.

    Returns +inf for zero speed (no motion, no blur limit).
    """
    if delta_theta <= 0:
        raise DomainError("delta_theta must be > 0")
    if speed < 0:
        raise DomainError("speed must be >= 0")
    if speed == 0:
        return math.inf
    return delta_theta / speed


def blur_free_fraction(trace: GyroTrace, delta_theta: float, exposure: float) -> float:
    """Fraction of samples with blur extent omega*t <= delta_theta.

    Assumes locally linear rotational velocity over the exposure.
    Non-increasing in exposure; depends only on omega*t/dtheta.
    """
    if delta_theta <= 0:
        raise DomainError("delta_theta must be > 0")
    if exposure < 0:
        raise DomainError("exposure must be >= 0")
    if exposure == 0:
        return 1.0
    return float(np.mean(trace.speeds * exposure <= delta_theta))


def blur_free_cdf(trace: GyroTrace, delta_theta: float,
                  exposures: np.ndarray) -> np.ndarray:
    """blur_free_fraction evaluated over many exposures at once."""
    speeds = trace.speeds
    exposures = np.asarray(exposures, dtype=np.float64)
    # fraction of speeds <= dtheta/t, via a single sort
    s = np.sort(speeds)
    with np.errstate(divide="ignore"):
        limits = np.where(exposures > 0, delta_theta / exposures, np.inf)
    return np.searchsorted(s, limits, side="right") / len(s)


def head_still_segments(trace: GyroTrace, threshold: float,
                        min_duration: float = 0.1) -> list[StillSegment]:
    """Maximal runs where the speed stays below threshold for >= min_duration."""
    if threshold <= 0:
        raise DomainError("threshold must be > 0")
    still = trace.speeds < threshold
    ts = trace.timestamps_ns
    segments = []
    n = len(still)
    i = 0
    while i < n:
        if not still[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and still[j + 1]:
            j += 1
        if j > i and (ts[j] - ts[i]) * 1e-9 >= min_duration:
            peak = float(np.max(trace.speeds[i:j + 1]))
            segments.append(StillSegment(int(ts[i]), int(ts[j]), peak))
        i = j + 1
    return segments


def motion_trace(trace: GyroTrace, start_ns: int, duration: float) -> np.ndarray:
    """Cumulative (yaw, pitch) offsets over a window, trapezoid-integrated.

    Returns an (M, 2) polyline in radians starting at the origin. Yaw and
    pitch are the first two gyro components. Sample timestamps inside the
    window are used directly; window edges are handled by linear
    interpolation of the rate.
    """
    ts = trace.timestamps_ns.astype(np.float64) * 1e-9
    t0 = start_ns * 1e-9
    t1 = t0 + duration
    if t0 < ts[0] - 1e-12 or t1 > ts[-1] + 1e-12:
        raise DomainError("window outside trace extent")
    w = trace.angular_velocity[:, :2]
    inner = (ts > t0) & (ts < t1)
    knots = np.concatenate(([t0], ts[inner], [t1]))
    rates = np.empty((len(knots), 2))
    for k in range(2):
        rates[:, k] = np.interp(knots, ts, w[:, k])
    if duration == 0:
        return np.zeros((1, 2))
    dt = np.diff(knots)[:, None]
    increments = 0.5 * (rates[1:] + rates[:-1]) * dt
    poly = np.vstack([np.zeros((1, 2)), np.cumsum(increments, axis=0)])
    return poly


def cdf_csv(exposures: np.ndarray, fractions: np.ndarray) -> str:
    lines = ["exposure_s,fraction"]
    for e, f in zip(exposures, fractions):
        lines.append(f"{e:.9g},{f:.9g}")
    return "\n".join(lines) + "\n"


def motion_trace_csv(poly: np.ndarray) -> str:
    lines = ["yaw_rad,pitch_rad"]
    for yaw, pitch in poly:
        lines.append(f"{yaw:.12g},{pitch:.12g}")
    return "\n".join(lines) + "\n"
