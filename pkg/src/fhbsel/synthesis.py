"""Synthetic mild/serious FHB scenes from a two-endmember linear mixing model.

The serious endmember equals the mild one except for smooth depressions
inside planted wavelength windows, so every band-selection result can be
checked against a known answer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .hsi_core import ClassLabel, Dataset, HsiCube, trim_bands
from .preprocess import spatial_mean

N_BANDS = 125
START_NM = 450.0
STEP_NM = 4.0
DEFAULT_WINDOWS = ((700.0, 750.0), (800.0, 875.0))
DEFAULT_TRIM = (10, 14)
# |mild - serious| bound outside the planted windows
OUTSIDE_TOLERANCE = 0.01


def sensor_wavelengths() -> np.ndarray:
    return START_NM + STEP_NM * np.arange(N_BANDS)


@dataclass(frozen=True, eq=False)
class EndmemberLibrary:
    wavelengths_nm: np.ndarray
    mild_spectrum: np.ndarray
    serious_spectrum: np.ndarray
    planted_windows: tuple
    min_gap: float
    seed: int

    def endmember(self, label: ClassLabel) -> np.ndarray:
        return self.mild_spectrum if ClassLabel(label) is ClassLabel.MILD else self.serious_spectrum


@dataclass(frozen=True)
class SceneSpec:
    """Generation settings.

    ``samples_per_class`` is ``(mild, serious)``; the default keeps a roughly
    3:2 imbalance toward mild samples.  Pixel dominance of the own-class
    endmember is drawn from a symmetric Beta with ``abundance_alpha``
    truncated to ``[dominance_floor, 1]``.  ``capture_sigma`` adds one
    per-band offset per cube, which spatial averaging cannot remove.
    """

    samples_per_class: tuple = (101, 69)
    cube_edge: int = 32
    noise_sigma: float = 0.02
    abundance_alpha: float = 2.0
    min_gap: float = 0.05
    seed: int = 0
    dominance_floor: float = 0.6
    capture_sigma: float = 0.004
    expression_floor: float = 1.0
    windows: tuple = DEFAULT_WINDOWS

    def __post_init__(self) -> None:
        mild, serious = self.samples_per_class
        if mild < 1 or serious < 1 or self.cube_edge < 1:
            raise ValueError("sample counts and cube_edge must be >= 1")
        if self.noise_sigma < 0 or self.capture_sigma < 0:
            raise ValueError("noise_sigma and capture_sigma must be >= 0")
        if self.abundance_alpha <= 0:
            raise ValueError("abundance_alpha must be > 0")
        if not 0.5 <= self.dominance_floor <= 1.0:
            raise ValueError("dominance_floor must lie in [0.5, 1]")
        if not 0 < self.min_gap <= 0.5:
            raise ValueError("min_gap must lie in (0, 0.5]")
        if not 0 <= self.expression_floor <= 1:
            raise ValueError("expression_floor must lie in [0, 1]")

    @classmethod
    def heterogeneous(cls, seed: int = 0, **overrides) -> "SceneSpec":
        """Scene where each serious capture expresses its windows unevenly.

        A few top bands then cover only part of the signal, so accuracy keeps
        climbing as more bands are added.
        """
        base = dict(capture_sigma=0.003, expression_floor=0.0, abundance_alpha=1.0, seed=seed)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["samples_per_class"] = list(self.samples_per_class)
        d["windows"] = [list(w) for w in self.windows]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "samples_per_class" in d:
            d["samples_per_class"] = tuple(d["samples_per_class"])
        if "windows" in d:
            d["windows"] = tuple(tuple(float(v) for v in w) for w in d["windows"])
        return cls(**d)


def _gauss(wl, center, width, amp):
    return amp * np.exp(-0.5 * ((wl - center) / width) ** 2)


def _depression(wl, lo, hi, depth):
    inside = (wl >= lo) & (wl <= hi)
    return np.where(inside, depth * np.sin(np.pi * (wl - lo) / (hi - lo)) ** 2, 0.0)


def make_endmembers(min_gap: float = 0.05, seed: int = 0,
                    windows=DEFAULT_WINDOWS) -> EndmemberLibrary:
    """Random smooth vegetation-like mild spectrum and its window-depressed serious twin.

    The mild spectrum is a sum of 3-5 Gaussian bumps: a green peak, a broad
    red-edge shoulder and a near-infrared rise peaking beyond the last window,
    plus up to two small extra bumps.  Each depression is a raised-cosine dip
    whose center third is at least ``min_gap`` deep.
    """
    if not 0 < min_gap <= 0.5:
        raise ValueError("min_gap must lie in (0, 0.5]")
    windows = tuple((float(lo), float(hi)) for lo, hi in windows)
    rng = np.random.default_rng([seed, 0xE5])
    wl = sensor_wavelengths()
    mild = (
        _gauss(wl, rng.uniform(540, 560), rng.uniform(20, 35), rng.uniform(0.04, 0.08))
        + _gauss(wl, rng.uniform(650, 750), rng.uniform(200, 300), rng.uniform(0.05, 0.10))
        + _gauss(wl, rng.uniform(900, 940), rng.uniform(90, 120), rng.uniform(0.45, 0.60))
    )
    for _ in range(int(rng.integers(0, 3))):
        mild += _gauss(wl, rng.uniform(450, 946), rng.uniform(15, 40), rng.uniform(0.005, 0.03))

    # sin^2 >= 3/4 over the center third of a window
    depth = min_gap / 0.75 * (1 + 1e-9)
    dip = sum(_depression(wl, lo, hi, depth) for lo, hi in windows)
    deficit = np.max(dip + 0.02 - mild)
    if deficit > 0:
        # lift both spectra so the dip never clips at zero
        mild = mild + deficit
    mild = np.clip(mild, 0.0, 1.0)
    serious = np.clip(mild - dip, 0.0, 1.0)
    return EndmemberLibrary(wl, mild, serious, windows, float(min_gap), seed)


def truncated_beta(rng: np.random.Generator, alpha: float, floor: float, size: int) -> np.ndarray:
    """Symmetric Beta(alpha, alpha) conditioned on ``>= floor``, by rejection."""
    if floor >= 1.0:
        return np.ones(size)
    out = np.empty(0)
    while out.size < size:
        draw = rng.beta(alpha, alpha, size=2 * (size - out.size) + 16)
        out = np.concatenate([out, draw[draw >= floor]])
    return out[:size]


def _expressed_serious(library: EndmemberLibrary, floor: float, rng) -> np.ndarray:
    """Serious endmember of one capture: one window fully expressed, the others scaled by U(floor, 1)."""
    if floor >= 1.0 or len(library.planted_windows) < 2:
        return library.serious_spectrum
    wl = library.wavelengths_nm
    dip = library.mild_spectrum - library.serious_spectrum
    scale = np.ones_like(wl)
    dominant = int(rng.integers(len(library.planted_windows)))
    for j, (lo, hi) in enumerate(library.planted_windows):
        if j != dominant:
            scale[(wl >= lo) & (wl <= hi)] = rng.uniform(floor, 1.0)
    return library.mild_spectrum - scale * dip


def synth_cube(library: EndmemberLibrary, label: ClassLabel, spec: SceneSpec,
               sample_seed) -> HsiCube:
    """One untrimmed cube: per-pixel mix of own and other endmember plus Gaussian noise."""
    label = ClassLabel(label)
    rng = np.random.default_rng(sample_seed)
    serious = _expressed_serious(library, spec.expression_floor, rng)
    own, other = (library.mild_spectrum, serious)
    if label is ClassLabel.SERIOUS:
        own, other = other, own
    e = spec.cube_edge
    a = truncated_beta(rng, spec.abundance_alpha, spec.dominance_floor, e * e)
    a = a.astype(np.float32).reshape(e, e, 1)
    own32, other32 = own.astype(np.float32), other.astype(np.float32)
    pixels = a * own32 + (1.0 - a) * other32
    if spec.capture_sigma > 0:
        pixels += (spec.capture_sigma * rng.standard_normal(own.size)).astype(np.float32)
    if spec.noise_sigma > 0:
        noise = rng.standard_normal(pixels.shape, dtype=np.float32)
        noise *= np.float32(spec.noise_sigma)
        pixels += noise
    np.maximum(pixels, 0.0, out=pixels)
    return HsiCube(pixels, library.wavelengths_nm)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    cubes: tuple
    labels: tuple
    sample_ids: tuple
    dataset: Dataset             # spatial-mean spectra of the cubes, labeled
    windows: tuple
    library: EndmemberLibrary
    spec: SceneSpec
    trim: Optional[tuple] = field(default=DEFAULT_TRIM)


def sample_labels(spec: SceneSpec) -> list:
    mild, serious = spec.samples_per_class
    return [ClassLabel.MILD] * mild + [ClassLabel.SERIOUS] * serious


def synth_dataset(library: EndmemberLibrary, spec: SceneSpec,
                  trim: Optional[tuple] = DEFAULT_TRIM) -> SyntheticScene:
    """Generate every sample of ``spec``; sample ``i`` is seeded by ``(spec.seed, i)``.

    Cubes are band-trimmed by ``trim`` (None keeps all 125 bands).
    """
    labels = sample_labels(spec)
    cubes, ids = [], []
    for i, label in enumerate(labels):
        cube = synth_cube(library, label, spec, [spec.seed, i])
        if trim is not None:
            cube = trim_bands(cube, *trim)
        cubes.append(cube)
        ids.append(f"{label.value}_{i:05d}")
    spectra = np.stack([spatial_mean(c).values for c in cubes])
    dataset = Dataset(spectra, tuple(labels), cubes[0].wavelengths_nm, tuple(ids))
    return SyntheticScene(tuple(cubes), tuple(labels), tuple(ids), dataset,
                          tuple(spec.windows), library, spec, trim)


def make_scene(spec: SceneSpec = SceneSpec(), trim: Optional[tuple] = DEFAULT_TRIM) -> SyntheticScene:
    """Endmembers and samples from one master seed."""
    library = make_endmembers(spec.min_gap, spec.seed, spec.windows)
    return synth_dataset(library, spec, trim)
