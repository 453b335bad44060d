"""Closed-form trade-space calculator for small fixed-focus camera modules.

Everything here is driven by three angular resolution limits:

* diffraction through the entrance pupil,
* the accepted circle of confusion (depth of field), and
* the angle subtended by a single sensor pixel (IFOV).

Small-angle forms are used throughout; exact ``atan`` is only used to derive
full fields of view. All angles are radians internally -- arcmin only appears
at CLI boundaries (1 arcmin = pi/10800 rad).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DomainError

ARCMIN = math.pi / 10800.0
DEFAULT_WAVELENGTH = 500e-9

BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")


@dataclass(frozen=True)
class LensSpec:
    """Thin-lens description: focal length, entrance pupil, transmission."""

    focal_length: float          # meters
    entrance_pupil_diameter: float  # meters
    transmission: float = 1.0    # unitless fraction

    def __post_init__(self):
        if self.focal_length <= 0:
            raise DomainError("focal_length must be > 0")
        if self.entrance_pupil_diameter <= 0:
            raise DomainError("entrance_pupil_diameter must be > 0")
        if not 0 < self.transmission <= 1:
            raise DomainError("transmission must be in (0, 1]")

    @property
    def f_number(self) -> float:
        return self.focal_length / self.entrance_pupil_diameter


@dataclass(frozen=True)
class SensorSpec:
    pixel_pitch: float   # meters
    width_px: int
    height_px: int
    bayer_pattern: str = "RGGB"
    bit_depth: int = 10

    def __post_init__(self):
        if self.pixel_pitch <= 0:
            raise DomainError("pixel_pitch must be > 0")
        if self.width_px < 2 or self.height_px < 2:
            raise DomainError("sensor must be at least 2x2 pixels")
        if self.bayer_pattern not in BAYER_PATTERNS:
            raise DomainError(f"bayer_pattern must be one of {BAYER_PATTERNS}")
        if self.bit_depth not in (8, 10, 12, 16):
            raise DomainError("bit_depth must be 8, 10, 12 or 16")


@dataclass(frozen=True)
class CameraSpec:
    lens: LensSpec
    sensor: SensorSpec
    coc_diameter: float  # meters, accepted circle of confusion on the sensor

    def __post_init__(self):
        if self.coc_diameter <= 0:
            raise DomainError("coc_diameter must be > 0")

    @property
    def ifov(self) -> float:
        """Angle subtended by a single pixel, p/f [rad]."""
        return self.sensor.pixel_pitch / self.lens.focal_length

    @property
    def hfov(self) -> float:
        s = self.sensor
        return 2.0 * math.atan(s.width_px * s.pixel_pitch / (2.0 * self.lens.focal_length))

    @property
    def vfov(self) -> float:
        s = self.sensor
        return 2.0 * math.atan(s.height_px * s.pixel_pitch / (2.0 * self.lens.focal_length))

    @property
    def geometric_angle(self) -> float:
        """Angular resolution set by the accepted circle of confusion [rad]."""
        return self.coc_diameter / (2.0 * self.lens.focal_length)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_dict(self) -> dict:
        return {
            "focal_length_m": self.lens.focal_length,
            "entrance_pupil_diameter_m": self.lens.entrance_pupil_diameter,
            "transmission": self.lens.transmission,
            "pixel_pitch_m": self.sensor.pixel_pitch,
            "width_px": self.sensor.width_px,
            "height_px": self.sensor.height_px,
            "bayer_pattern": self.sensor.bayer_pattern,
            "bit_depth": self.sensor.bit_depth,
            "coc_diameter_m": self.coc_diameter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraSpec":
        return cls(
            lens=LensSpec(
                focal_length=d["focal_length_m"],
                entrance_pupil_diameter=d["entrance_pupil_diameter_m"],
                transmission=d.get("transmission", 1.0),
            ),
            sensor=SensorSpec(
                pixel_pitch=d["pixel_pitch_m"],
                width_px=d["width_px"],
                height_px=d["height_px"],
                bayer_pattern=d.get("bayer_pattern", "RGGB"),
                bit_depth=d.get("bit_depth", 10),
            ),
            coc_diameter=d["coc_diameter_m"],
        )

    @classmethod
    def from_json(cls, text: str) -> "CameraSpec":
        return cls.from_dict(json.loads(text))


def camera_for_angular_resolution(delta_theta: float,
                                  pupil_diameter: float,
                                  pixel_pitch: float = 1.0e-6,
                                  width_px: int = 1024,
                                  height_px: int = 1024,
                                  focal_length: float | None = None) -> CameraSpec:
    """Build a CameraSpec whose circle of confusion matches delta_theta.

    The circle of confusion is set to 2*f*delta_theta so that the
    geometric angular resolution equals the requested value. When no
    focal length is given, it is chosen so the IFOV equals delta_theta.
    """
    if delta_theta <= 0:
        raise DomainError("delta_theta must be > 0")
    f = focal_length if focal_length is not None else pixel_pitch / delta_theta
    return CameraSpec(
        lens=LensSpec(focal_length=f, entrance_pupil_diameter=pupil_diameter),
        sensor=SensorSpec(pixel_pitch=pixel_pitch, width_px=width_px, height_px=height_px),
        coc_diameter=2.0 * f * delta_theta,
    )


def diffraction_limited_angle(entrance_pupil_diameter: float,
                              wavelength: float = DEFAULT_WAVELENGTH) -> float:
    """Diffraction-limited angular resolution 1.22*lambda/D [rad]."""
    if entrance_pupil_diameter <= 0 or wavelength <= 0:
        raise DomainError("entrance pupil diameter and wavelength must be > 0")
    return 1.22 * wavelength / entrance_pupil_diameter


def hyperfocal_distance(camera: CameraSpec) -> float:
    """Distance beyond which all content is acceptably sharp, f*D/(2*coc) [m]."""
    lens = camera.lens
    return lens.focal_length * lens.entrance_pupil_diameter / (2.0 * camera.coc_diameter)


def overall_angular_resolution(camera: CameraSpec,
                               wavelength: float = DEFAULT_WAVELENGTH) -> float:
    """max(geometric, diffraction, IFOV) angular resolution [rad]."""
    d_diff = diffraction_limited_angle(camera.lens.entrance_pupil_diameter, wavelength)
    return max(camera.geometric_angle, d_diff, camera.ifov)


@dataclass(frozen=True)
class TradespaceRow:
    delta_theta: float  # rad
    pupil_diameter: float  # m
    hyperfocal: float  # m
    feasible: bool


def tradespace_curve(delta_theta_values: Sequence[float],
                     pupil_values: Sequence[float],
                     wavelength: float = DEFAULT_WAVELENGTH) -> list[TradespaceRow]:
    """Hyperfocal distance H = D/(4*dtheta) over a (dtheta, D) grid.

    A design is feasible iff diffraction permits the requested resolution,
    i.e. D >= 1.22*lambda/dtheta. Rows are emitted in row-major order
    (outer loop over delta_theta).
    """
    if not delta_theta_values or not pupil_values:
        raise DomainError("value lists must be non-empty")
    if min(delta_theta_values) <= 0 or min(pupil_values) <= 0:
        raise DomainError("all values must be > 0")
    rows = []
    for dt in delta_theta_values:
        d_min = 1.22 * wavelength / dt
        for dp in pupil_values:
            rows.append(TradespaceRow(
                delta_theta=dt,
                pupil_diameter=dp,
                hyperfocal=dp / (4.0 * dt),
                feasible=dp >= d_min,
            ))
    return rows


def tradespace_csv(rows: Iterable[TradespaceRow]) -> str:
    lines = ["delta_theta_rad,pupil_m,hyperfocal_m,feasible"]
    for r in rows:
        lines.append(f"{r.delta_theta:.9e},{r.pupil_diameter:.9e},"
                     f"{r.hyperfocal:.9e},{int(r.feasible)}")
    return "\n".join(lines) + "\n"
