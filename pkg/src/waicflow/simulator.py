"""Synthetic multispectral tissue spectra.

A spectrum is generated from an 8-valued tissue-property vector: per layer
(1..3) a blood volume fraction v and an oxygenation s, plus shared scattering
amplitude a and scattering power b. Absorption mixes two analytic extinction
curves (Gaussian bumps standing in for oxy/deoxy hemoglobin tables), layers
attenuate independently with fixed thicknesses, and virtual cameras integrate
the spectrum through Gaussian filter banks under a switchable illuminant.

Everything is closed-form so test values can be derived by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .errors import DegenerateDataError, ShapeError, UsageError

# wavelength grid: 450..720 nm in 2 nm steps (136 points)
GRID_START = 450.0
GRID_STOP = 720.0
GRID_STEP = 2.0
WAVELENGTH_GRID = np.arange(GRID_START, GRID_STOP + GRID_STEP, GRID_STEP)

LAYER_THICKNESS_CM = np.array([0.05, 0.1, 0.2])
LAYER_WEIGHTS = np.array([0.5, 0.3, 0.2])

# uniform sampling ranges: (v1, s1, v2, s2, v3, s3, a, b)
PARAM_LOW = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.3])
PARAM_HIGH = np.array([0.3, 1.0, 0.3, 1.0, 0.3, 1.0, 50.0, 3.0])
PARAM_NAMES = ("v1", "s1", "v2", "s2", "v3", "s3", "a", "b")

REFLECTANCE_FLOOR = 1e-6


def gaussian_bump(lam, center: float, width: float):
    """Unit-height Gaussian in nm: exp(-(lam-center)^2 / (2 width^2))."""
    lam = np.asarray(lam, dtype=np.float64)
    return np.exp(-0.5 * ((lam - center) / width) ** 2)


def extinction_oxygenated(lam):
    """Analytic oxygenated-blood extinction stand-in (1/cm)."""
    return 20.0 * gaussian_bump(lam, 545.0, 18.0) + 18.0 * gaussian_bump(lam, 577.0, 16.0) + 2.0


def extinction_deoxygenated(lam):
    """Analytic deoxygenated-blood extinction stand-in (1/cm)."""
    return 30.0 * gaussian_bump(lam, 557.0, 25.0) + 2.0


@dataclass(frozen=True)
class TissueParams:
    """Three (volume fraction, oxygenation) pairs plus shared scattering."""

    blood_volume: tuple[float, float, float]
    oxygenation: tuple[float, float, float]
    scatter_amplitude: float
    scatter_power: float

    def __post_init__(self):
        vec = self.to_vector()
        if np.any(vec < PARAM_LOW) or np.any(vec > PARAM_HIGH):
            bad = int(np.argmax((vec < PARAM_LOW) | (vec > PARAM_HIGH)))
            raise UsageError(f"tissue parameter {PARAM_NAMES[bad]}={vec[bad]} "
                             f"outside [{PARAM_LOW[bad]}, {PARAM_HIGH[bad]}]")

    def to_vector(self) -> np.ndarray:
        v, s = self.blood_volume, self.oxygenation
        return np.array([v[0], s[0], v[1], s[1], v[2], s[2],
                         self.scatter_amplitude, self.scatter_power])

    @classmethod
    def from_vector(cls, vec) -> "TissueParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (8,):
            raise ShapeError(f"tissue parameter vector must have length 8, got {vec.shape}")
        return cls((vec[0], vec[2], vec[4]), (vec[1], vec[3], vec[5]),
                   float(vec[6]), float(vec[7]))


def sample_tissue_params(rng: np.random.Generator) -> TissueParams:
    """Each field uniform over its range, independent."""
    vec = np.array([rng.uniform(lo, hi) for lo, hi in zip(PARAM_LOW, PARAM_HIGH)])
    return TissueParams.from_vector(vec)


def _require_in_range(lam) -> np.ndarray:
    # the extinction stand-ins are only modeled on the grid's 450-720 nm span;
    # extrapolation outside it is refused
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    ok = (lam >= GRID_START) & (lam <= GRID_STOP)
    if not np.all(ok):
        raise UsageError(f"wavelength {lam[~ok][0]} nm is outside the modeled "
                         f"{GRID_START:.0f}-{GRID_STOP:.0f} nm range")
    return lam


def absorption_coefficient(params: TissueParams, lam) -> np.ndarray:
    """Per-layer absorption (1/cm); shape (3,) for scalar lam, else (3, len(lam))."""
    lam = _require_in_range(lam)
    eo = extinction_oxygenated(lam)
    ed = extinction_deoxygenated(lam)
    v = np.asarray(params.blood_volume)[:, None]
    s = np.asarray(params.oxygenation)[:, None]
    mua = v * (s * eo[None, :] + (1.0 - s) * ed[None, :])
    return mua[:, 0] if lam.size == 1 else mua


@dataclass(frozen=True)
class HighResSpectrum:
    wavelengths: np.ndarray
    reflectance: np.ndarray

    def __post_init__(self):
        if self.wavelengths.shape != self.reflectance.shape:
            raise ShapeError("wavelength and reflectance grids differ in length")
        if np.any(self.reflectance <= 0) or np.any(self.reflectance > 1.0):
            raise UsageError("reflectance values must lie in (0, 1]")


def reflectance_matrix(param_matrix: np.ndarray) -> np.ndarray:
    """(n, 8) parameter rows -> (n, grid) reflectance; vectorized core."""
    lam = WAVELENGTH_GRID
    eo = extinction_oxygenated(lam)
    ed = extinction_deoxygenated(lam)
    a = param_matrix[:, 6:7]
    b = param_matrix[:, 7:8]
    mus = a * (lam[None, :] / 500.0) ** (-b)
    r = np.zeros((param_matrix.shape[0], lam.size))
    for layer in range(3):
        v = param_matrix[:, 2 * layer:2 * layer + 1]
        s = param_matrix[:, 2 * layer + 1:2 * layer + 2]
        mua = v * (s * eo[None, :] + (1.0 - s) * ed[None, :])
        attenuation = np.exp(-2.0 * (mua + mus / 10.0) * LAYER_THICKNESS_CM[layer])
        r += LAYER_WEIGHTS[layer] * attenuation * (mus / (mus + mua))
    return np.clip(r, REFLECTANCE_FLOOR, 1.0)


def reflectance_spectrum(params: TissueParams) -> HighResSpectrum:
    """Three-layer reflectance on the fixed grid, clipped into (1e-6, 1]."""
    r = reflectance_matrix(params.to_vector()[None, :])[0]
    return HighResSpectrum(WAVELENGTH_GRID.copy(), r)


@dataclass(frozen=True)
class CameraModel:
    """Gaussian filter bank plus illuminant on the fixed wavelength grid."""

    name: str
    illuminant_name: str
    band_centers: np.ndarray
    band_fwhm: float
    responses: np.ndarray    # (n_bands, grid)
    illuminant: np.ndarray   # (grid,)

    def __post_init__(self):
        if self.responses.shape != (self.band_centers.size, WAVELENGTH_GRID.size):
            raise ShapeError("filter bank shape does not match band centers and grid")
        if np.any(self.responses.sum(axis=1) <= 0):
            raise UsageError("every band response must integrate to a positive value")

    @property
    def n_bands(self) -> int:
        return self.band_centers.size


CAMERA_KINDS = {
    # kind: (band centers, FWHM in nm)
    "spectrocam8": (np.linspace(470.0, 700.0, 8), 30.0),
    "ximea16": (np.linspace(465.0, 630.0, 16), 15.0),
}

ILLUMINANTS = ("xenon", "led")


def illuminant_spectrum(name: str) -> np.ndarray:
    if name == "xenon":
        return np.ones_like(WAVELENGTH_GRID)
    if name == "led":
        lam = WAVELENGTH_GRID
        return 0.3 + gaussian_bump(lam, 460.0, 12.0) + 0.8 * gaussian_bump(lam, 560.0, 50.0)
    raise UsageError(f"unknown illuminant '{name}'; choose from {ILLUMINANTS}")


def make_camera(kind: str, illuminant: str = "xenon") -> CameraModel:
    """Construct one of the built-in virtual cameras; deterministic."""
    if kind not in CAMERA_KINDS:
        raise UsageError(f"unknown camera kind '{kind}'; choose from {sorted(CAMERA_KINDS)}")
    centers, fwhm = CAMERA_KINDS[kind]
    sigma = fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    responses = np.stack([gaussian_bump(WAVELENGTH_GRID, c, sigma) for c in centers])
    return CameraModel(kind, illuminant, centers.copy(), fwhm, responses,
                       illuminant_spectrum(illuminant))


def camera_table(camera: CameraModel) -> str:
    """Plain-text table of the filter bank and illuminant, for inspection."""
    header = "wavelength_nm," + ",".join(
        f"band_{i}" for i in range(camera.n_bands)) + ",illuminant"
    lines = [header]
    for j, lam in enumerate(WAVELENGTH_GRID):
        vals = [format(camera.responses[i, j], ".6g") for i in range(camera.n_bands)]
        lines.append(f"{lam:.1f}," + ",".join(vals) + f",{camera.illuminant[j]:.6g}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BandMeasurement:
    """L1-normalized band vector with provenance."""

    bands: np.ndarray
    camera: str
    illuminant: str
    noise_sigma: float = 0.0

    def __post_init__(self):
        if np.any(self.bands < 0):
            raise UsageError("band values must be non-negative")
        if abs(self.bands.sum() - 1.0) > 1e-12:
            raise UsageError(f"band vector sums to {self.bands.sum()!r}, expected 1")


def band_matrix(reflectance_rows: np.ndarray, camera: CameraModel) -> np.ndarray:
    """Integrate reflectance rows through the camera; rows L1-normalized."""
    weighted = camera.responses * camera.illuminant[None, :] * GRID_STEP
    raw = np.einsum('nl,bl->nb', reflectance_rows, weighted)
    sums = raw.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise DegenerateDataError("camera integration produced an all-zero band vector")
    return raw / sums


def apply_camera(spectrum: HighResSpectrum, camera: CameraModel) -> BandMeasurement:
    """Band integration raw_b = sum_lambda F_b * L * r * dlambda, then L1 norm."""
    if spectrum.wavelengths.shape != WAVELENGTH_GRID.shape or \
            np.any(spectrum.wavelengths != WAVELENGTH_GRID):
        raise UsageError("spectrum is not on the camera's wavelength grid")
    bands = band_matrix(spectrum.reflectance[None, :], camera)[0]
    return BandMeasurement(bands, camera.name, camera.illuminant_name)


def noisy_band_matrix(band_rows: np.ndarray, relative_sigma: float,
                     rng: np.random.Generator) -> np.ndarray:
    if relative_sigma < 0:
        raise UsageError(f"relative_sigma must be >= 0, got {relative_sigma}")
    if relative_sigma == 0:
        return band_rows
    noisy = band_rows * (1.0 + relative_sigma * rng.standard_normal(band_rows.shape))
    noisy = np.clip(noisy, 0.0, None)
    sums = noisy.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise DegenerateDataError("noise wiped out every band of a measurement")
    return noisy / sums


def add_noise(measurement: BandMeasurement, relative_sigma: float,
              rng: np.random.Generator) -> BandMeasurement:
    """Multiplicative Gaussian noise per band, clipped at 0, renormalized."""
    bands = noisy_band_matrix(measurement.bands[None, :], relative_sigma, rng)[0]
    return BandMeasurement(bands, measurement.camera, measurement.illuminant,
                           relative_sigma)


def simulate_dataset(n: int, camera: CameraModel,
                     rng: int | np.random.Generator,
                     noise_sigma: float = 0.0) -> Dataset:
    """n labeled rows of band measurements, reproducible from the seed.

    `rng` may be an integer seed (recorded in the dataset meta) or a
    Generator. Parameter columns are drawn first, then one noise matrix, so
    the output is a fixed function of the stream.
    """
    if n < 1:
        raise UsageError(f"dataset size must be >= 1, got {n}")
    seed_label = ""
    if isinstance(rng, (int, np.integer)):
        seed_label = str(int(rng))
        rng = np.random.Generator(np.random.PCG64(int(rng)))
    labels = np.column_stack([rng.uniform(lo, hi, size=n)
                              for lo, hi in zip(PARAM_LOW, PARAM_HIGH)])
    measurements = np.empty((n, camera.n_bands))
    chunk = 8192
    for lo in range(0, n, chunk):
        r = reflectance_matrix(labels[lo:lo + chunk])
        measurements[lo:lo + chunk] = band_matrix(r, camera)
    measurements = noisy_band_matrix(measurements, noise_sigma, rng)
    meta = {
        "camera": camera.name,
        "illuminant": camera.illuminant_name,
        "noise_sigma": format(noise_sigma, ".17g"),
    }
    if seed_label:
        meta["seed"] = seed_label
    return Dataset(measurements=measurements, labels=labels,
                   split_tags=np.full(n, "none", dtype=object), meta=meta)
