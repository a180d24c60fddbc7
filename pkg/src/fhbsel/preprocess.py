"""Turn cubes into image-level feature rows: spatial averaging, normalization, augmentation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .hsi_core import Dataset, HsiCube, Spectrum

DEGENERATE_RANGE = 1e-12


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Processed spectra, one row per sample."""

    values: np.ndarray
    sample_ids: tuple
    wavelengths_nm: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        x = np.array(self.values, dtype=np.float64, copy=True)
        if x.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("feature matrix must be finite")
        ids = tuple(str(s) for s in self.sample_ids)
        if len(ids) != x.shape[0]:
            raise ValueError(f"{x.shape[0]} rows but {len(ids)} sample ids")
        x.setflags(write=False)
        object.__setattr__(self, "values", x)
        object.__setattr__(self, "sample_ids", ids)
        if self.wavelengths_nm is not None:
            wl = np.array(self.wavelengths_nm, dtype=np.float64, copy=True)
            if wl.shape != (x.shape[1],):
                raise ValueError("wavelength count does not match column count")
            wl.setflags(write=False)
            object.__setattr__(self, "wavelengths_nm", wl)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(cls, values, wavelengths_nm=None) -> "FeatureMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, tuple(f"s{i:05d}" for i in range(values.shape[0])), wavelengths_nm)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "FeatureMatrix":
        return cls(dataset.spectra, dataset.sample_ids, dataset.wavelengths_nm)

    def take(self, rows: Sequence[int]) -> "FeatureMatrix":
        idx = list(rows)
        return FeatureMatrix(self.values[idx], tuple(self.sample_ids[i] for i in idx),
                             self.wavelengths_nm)

    def to_dataset(self, labels=()) -> Dataset:
        return Dataset(self.values, tuple(labels), self.wavelengths_nm, self.sample_ids)


def spatial_mean(cube: HsiCube) -> Spectrum:
    """Per-band mean over all pixels, accumulated in float64."""
    mean = cube.data.astype(np.float64).mean(axis=(0, 1))
    return Spectrum(mean, cube.wavelengths_nm)


def _minmax_rows(x: np.ndarray) -> np.ndarray:
    lo = x.min(axis=1, keepdims=True)
    span = x.max(axis=1, keepdims=True) - lo
    flat = span[:, 0] < DEGENERATE_RANGE
    span[flat] = 1.0
    out = (x - lo) / span
    out[flat] = 0.0
    return out


def minmax_normalize(spectrum: Spectrum) -> Spectrum:
    """Rescale a spectrum to [0, 1] by its own min and max.

    Spectra whose range is below 1e-12 map to all zeros.
    """
    out = _minmax_rows(spectrum.values[None, :])[0]
    return Spectrum(out, spectrum.wavelengths_nm)


def zscore_columns(x: np.ndarray) -> np.ndarray:
    """Per-band standardization; zero-variance bands become 0."""
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(axis=0)
    sd[sd < DEGENERATE_RANGE] = 1.0
    return (x - x.mean(axis=0)) / sd


NORMALIZERS = ("none", "minmax", "zscore")


def build_features(cubes: Sequence[HsiCube], normalize=True,
                   sample_ids: Optional[Sequence[str]] = None) -> FeatureMatrix:
    """Stack spatial-mean spectra of ``cubes`` into a feature matrix.

    ``normalize`` is a flag (``True`` means per-sample min-max) or one of
    ``"none"``, ``"minmax"``, ``"zscore"`` (per band, across samples).
    """
    if not cubes:
        raise ValueError("no cubes given")
    mode = {True: "minmax", False: "none"}.get(normalize, normalize)
    if mode not in NORMALIZERS:
        raise ValueError(f"unknown normalization {normalize!r}")
    wl = cubes[0].wavelengths_nm
    for i, c in enumerate(cubes):
        if c.bands != cubes[0].bands or not np.array_equal(c.wavelengths_nm, wl):
            raise ValueError(f"cube {i} does not share band layout with cube 0")
    rows = np.stack([spatial_mean(c).values for c in cubes])
    if mode == "minmax":
        rows = _minmax_rows(rows)
    elif mode == "zscore":
        rows = zscore_columns(rows)
    if sample_ids is None:
        sample_ids = tuple(f"s{i:05d}" for i in range(len(cubes)))
    return FeatureMatrix(rows, tuple(sample_ids), wl)


def augment_rotate(cube: HsiCube, quarter_turns: int) -> HsiCube:
    """Rotate the spatial grid by 90 degrees ``quarter_turns`` times (counter-clockwise)."""
    t = quarter_turns % 4
    if t == 0:
        return cube
    return HsiCube(np.rot90(cube.data, k=t, axes=(0, 1)), cube.wavelengths_nm)


def crop_offset(cube: HsiCube, size: int, seed) -> tuple[int, int]:
    if size < 1 or size > min(cube.width, cube.height):
        raise ValueError(f"crop size {size} invalid for a {cube.height}x{cube.width} cube")
    rng = np.random.default_rng(seed)
    row = int(rng.integers(0, cube.height - size + 1))
    col = int(rng.integers(0, cube.width - size + 1))
    return row, col


def augment_crop(cube: HsiCube, size: int, seed) -> HsiCube:
    """Seeded random ``size`` x ``size`` crop; see ``crop_offset`` for the offset draw."""
    row, col = crop_offset(cube, size, seed)
    return HsiCube(cube.data[row:row + size, col:col + size, :], cube.wavelengths_nm)


def augment_cubes(cubes: Sequence[HsiCube], crop_size: int, seed: int) -> list[HsiCube]:
    """One rotated and cropped copy per cube, each from its own derived seed."""
    out = []
    for i, cube in enumerate(cubes):
        rng = np.random.default_rng([seed, i])
        turns = int(rng.integers(0, 4))
        size = min(crop_size, cube.width, cube.height)
        out.append(augment_crop(augment_rotate(cube, turns), size, rng))
    return out


class MinMaxSpectrumScaler(TransformerMixin, BaseEstimator):
    """Stateless per-row min-max scaling of spectra, usable inside a Pipeline."""

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        return _minmax_rows(check_array(X, dtype=np.float64, copy=True))
