"""Photon-budget and best-case SNR model.

Connects scene illuminance (lux) to expected photon counts per sensor pixel
and the resulting shot-noise-limited SNR. Quantum efficiency is taken as 1
and read noise as 0 here; realistic sensor noise lives in ``degrade``.

The spectral chain is: CIE Standard Illuminant A as the light source,
the CIE 1926 photopic luminosity function V(lambda) for the lux
normalization, and three ideal box color filters
(R: 600-680 nm, G: 500-600 nm, B: 420-500 nm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .optics import CameraSpec

PLANCK_H = 6.62607015e-34   # J s
LIGHT_C = 2.99792458e8      # m/s
LUMENS_PER_WATT = 683.0

CHANNELS = ("R", "G", "B")

# Ideal box filter bands, meters.
FILTER_BANDS = {
    "R": (600e-9, 680e-9),
    "G": (500e-9, 600e-9),
    "B": (420e-9, 500e-9),
}

# CIE 1926 photopic luminosity function V(lambda), 380-780 nm at 5 nm.
_V_LAMBDA = np.array([
    0.000039, 0.000064, 0.000120, 0.000217, 0.000396, 0.000640,
    0.001210, 0.002180, 0.004000, 0.007300, 0.011600, 0.016840,
    0.023000, 0.029800, 0.038000, 0.048000, 0.060000, 0.073900,
    0.090980, 0.112600, 0.139020, 0.169300, 0.208020, 0.258600,
    0.323000, 0.407300, 0.503000, 0.608200, 0.710000, 0.793200,
    0.862000, 0.914850, 0.954000, 0.980300, 0.994950, 1.000000,
    0.995000, 0.978600, 0.952000, 0.915400, 0.870000, 0.816300,
    0.757000, 0.694900, 0.631000, 0.566800, 0.503000, 0.441200,
    0.381000, 0.321000, 0.265000, 0.217000, 0.175000, 0.138200,
    0.107000, 0.081600, 0.061000, 0.044580, 0.032000, 0.023200,
    0.017000, 0.011920, 0.008210, 0.005723, 0.004102, 0.002929,
    0.002091, 0.001484, 0.001047, 0.000740, 0.000520, 0.000361,
    0.000249, 0.000172, 0.000120, 0.000085, 0.000060, 0.000042,
    0.000030, 0.000021, 0.000015,
])


def _illuminant_a(wavelength_m: np.ndarray) -> np.ndarray:
    """CIE Standard Illuminant A relative spectral power (100 at 560 nm).

    Defined by the CIE as a Planckian radiator at 2856 K with the
    second radiation constant c2 = 1.435e-2 m K.
    """
    c2 = 1.435e-2
    t = 2856.0
    ref = 560e-9
    return 100.0 * (ref / wavelength_m) ** 5 * (
        np.expm1(c2 / (t * ref)) / np.expm1(c2 / (t * wavelength_m))
    )


def _default_wavelengths() -> np.ndarray:
    return np.arange(380.0, 780.0 + 2.5, 5.0) * 1e-9


@dataclass(frozen=True)
class SpectralTables:
    """Tabulated V(lambda) and illuminant spectrum plus filter bands."""

    wavelengths: np.ndarray = field(default_factory=_default_wavelengths)  # m
    luminosity_v: np.ndarray = field(default_factory=lambda: _V_LAMBDA.copy())
    illuminant_s: np.ndarray = None  # relative spectral power
    filter_bands: dict = field(default_factory=lambda: dict(FILTER_BANDS))

    def __post_init__(self):
        if self.illuminant_s is None:
            object.__setattr__(self, "illuminant_s", _illuminant_a(self.wavelengths))
        if len(self.wavelengths) == 0:
            raise ConfigError("spectral tables are empty")
        if not (len(self.wavelengths) == len(self.luminosity_v) == len(self.illuminant_s)):
            raise ConfigError("spectral table lengths disagree")
        if np.any(self.luminosity_v < 0):
            raise ConfigError("V(lambda) must be non-negative")

    @property
    def sv_norm(self) -> float:
        """Normalization integral of s(lambda)*V(lambda) [relative * m]."""
        return float(np.trapezoid(self.illuminant_s * self.luminosity_v, self.wavelengths))


@dataclass(frozen=True)
class SceneAssumptions:
    reflectance: float = 0.18
    illuminance: float = 0.0  # lux

    def __post_init__(self):
        if not 0 < self.reflectance <= 1:
            raise DomainError("reflectance must be in (0, 1]")
        if self.illuminance < 0:
            raise DomainError("illuminance must be >= 0")


@dataclass(frozen=True)
class PhotonBudget:
    """Expected photon counts per pixel and channel for one exposure."""

    counts: dict  # channel -> expected photons
    exposure: float  # s

    def __post_init__(self):
        if any(v < 0 for v in self.counts.values()):
            raise DomainError("photon counts must be >= 0")


def scene_photon_rate(tables: SpectralTables, illuminance: float) -> np.ndarray:
    """Spectral photon rate onto a scene surface [photons / (s m^2 m)].

    Sampled at ``tables.wavelengths``. Linear in illuminance.
    """
    if illuminance < 0:
        raise DomainError("illuminance must be >= 0")
    lam = tables.wavelengths
    return (1.0 / LUMENS_PER_WATT) * (tables.illuminant_s / tables.sv_norm) \
        * (lam * illuminance / (PLANCK_H * LIGHT_C))


def _band_integral(tables: SpectralTables, spectral: np.ndarray, channel: str) -> float:
    lo, hi = tables.filter_bands[channel]
    lam = tables.wavelengths
    m = (lam >= lo - 1e-15) & (lam <= hi + 1e-15)
    return float(np.trapezoid(spectral[m], lam[m]))


def derive_k_constants(tables: SpectralTables | None = None,
                       assumptions: SceneAssumptions | None = None) -> dict:
    """Per-channel constants k with N_ph = k * D^2 * IFOV^2 * t * E.

    Units: 1 / (s m^2 lux). Derived by folding the spectral photon rate
    at E = 1 lux through each ideal filter band with the R*T/4 prefactor
    (T is taken as 1 here; lens transmission is applied separately).
    """
    tables = tables or SpectralTables()
    assumptions = assumptions or SceneAssumptions(reflectance=0.18)
    rate = scene_photon_rate(tables, 1.0)
    pref = assumptions.reflectance / 4.0
    return {ch: pref * _band_integral(tables, rate, ch) for ch in CHANNELS}


def photons_per_pixel(camera: CameraSpec,
                      assumptions: SceneAssumptions,
                      exposure: float,
                      tables: SpectralTables | None = None) -> PhotonBudget:
    """Expected photons per pixel and channel for one exposure.

    Full spectral path: R*T/4 * D^2 p^2 t / f^2 * integral of the scene
    photon rate over each filter band.
    """
    if exposure < 0:
        raise DomainError("exposure must be >= 0")
    tables = tables or SpectralTables()
    rate = scene_photon_rate(tables, assumptions.illuminance)
    lens = camera.lens
    geom = (lens.entrance_pupil_diameter ** 2 * camera.sensor.pixel_pitch ** 2
            * exposure / lens.focal_length ** 2)
    pref = assumptions.reflectance * lens.transmission / 4.0
    counts = {ch: pref * geom * _band_integral(tables, rate, ch) for ch in CHANNELS}
    return PhotonBudget(counts=counts, exposure=exposure)


def snr_upper_bound(budget: PhotonBudget) -> dict:
    """Shot-noise-limited SNR = sqrt(N_ph) per channel."""
    return {ch: math.sqrt(n) for ch, n in budget.counts.items()}


def required_illuminance(camera: CameraSpec,
                         exposure: float,
                         target_snr: float,
                         channel: str = "G",
                         tables: SpectralTables | None = None) -> float:
    """Illuminance in lux needed to reach target_snr in the given channel.

    Exact algebraic inverse of photons_per_pixel composed with
    snr_upper_bound: E = snr^2 / (k * T * D^2 * IFOV^2 * t).
    """
    if exposure <= 0:
        raise DomainError("exposure must be > 0")
    if target_snr <= 0:
        raise DomainError("target_snr must be > 0")
    if channel not in CHANNELS:
        raise DomainError(f"channel must be one of {CHANNELS}")
    k = derive_k_constants(tables)[channel]
    lens = camera.lens
    denom = (k * lens.transmission * lens.entrance_pupil_diameter ** 2
             * camera.ifov ** 2 * exposure)
    return target_snr ** 2 / denom


def snr_grid_csv(camera: CameraSpec,
                 illuminances: list[float],
                 exposures: list[float],
                 reflectance: float = 0.18,
                 tables: SpectralTables | None = None) -> str:
    """CSV grid of per-channel SNR over (E, t) pairs."""
    tables = tables or SpectralTables()
    lines = ["illuminance_lux,exposure_s,snr_r,snr_g,snr_b"]
    for e_lux in illuminances:
        for t in exposures:
            budget = photons_per_pixel(
                camera, SceneAssumptions(reflectance=reflectance, illuminance=e_lux),
                t, tables)
            snr = snr_upper_bound(budget)
            lines.append(f"{e_lux:.6g},{t:.6g},{snr['R']:.6g},{snr['G']:.6g},{snr['B']:.6g}")
    return "\n".join(lines) + "\n"
