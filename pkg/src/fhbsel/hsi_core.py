"""Core hyperspectral types, the HSIC cube container, and dataset CSV exchange.

A cube holds reflectance on a ``(row, column, band)`` grid together with the
wavelength of every band.  Values are kept at float32, the container's storage
precision, so a cube survives a save/load cycle unchanged; numerical routines
upcast to float64 before doing arithmetic.
"""

from __future__ import annotations

import csv
import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

PathLike = Union[str, Path]

MAGIC = b"HSIC"
VERSION = 1
HEADER_SIZE = 20
_HEADER = struct.Struct("<4sB3sIII")


class ClassLabel(str, enum.Enum):
    MILD = "mild"
    SERIOUS = "serious"

    @classmethod
    def parse(cls, text: str) -> "ClassLabel":
        try:
            return cls(text)
        except ValueError:
            raise UnknownLabelError(f"unknown label {text!r}; expected 'mild' or 'serious'") from None


# --------------------------------------------------------------------------
# errors


class CubeError(ValueError):
    """A cube violates one of its structural invariants."""


class HsicFormatError(ValueError):
    """Base class for malformed HSIC containers.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagicError(HsicFormatError):
    pass


class UnsupportedVersionError(HsicFormatError):
    pass


class TruncatedPayloadError(HsicFormatError):
    pass


class DimensionMismatchError(HsicFormatError):
    pass


class WavelengthOrderError(HsicFormatError):
    pass


class InvalidReflectanceError(HsicFormatError):
    pass


class DatasetFormatError(ValueError):
    """Base class for malformed dataset CSV files."""


class RaggedRowError(DatasetFormatError):
    pass


class UnknownLabelError(DatasetFormatError):
    pass


class NonNumericCellError(DatasetFormatError):
    pass


# --------------------------------------------------------------------------
# types


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_wavelengths(wl: np.ndarray, bands: int) -> None:
    if wl.ndim != 1 or wl.shape[0] != bands:
        raise CubeError(f"expected {bands} wavelengths, got shape {wl.shape}")
    if not np.all(np.isfinite(wl)):
        raise CubeError("wavelengths must be finite")
    if bands > 1 and not np.all(np.diff(wl) > 0):
        raise CubeError("wavelengths must be strictly increasing")


@dataclass(frozen=True, eq=False)
class HsiCube:
    """Reflectance cube of shape ``(height, width, bands)``.

    Both arrays are copied and frozen on construction.
    """

    data: np.ndarray
    wavelengths_nm: np.ndarray

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float32, copy=True)
        wl = np.array(self.wavelengths_nm, dtype=np.float64, copy=True)
        if data.ndim != 3 or 0 in data.shape:
            raise CubeError(f"cube data must be a nonempty 3-D array, got shape {data.shape}")
        _check_wavelengths(wl, data.shape[2])
        if not np.all(np.isfinite(data)):
            raise CubeError("reflectance values must be finite")
        if np.any(data < 0):
            raise CubeError("reflectance values must be >= 0")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "wavelengths_nm", _frozen(wl))

    @classmethod
    def from_flat(cls, width: int, height: int, bands: int,
                  wavelengths_nm: Sequence[float], values: Sequence[float]) -> "HsiCube":
        """Build a cube from row-major ``(row, column, band)`` flat values."""
        flat = np.asarray(values, dtype=np.float32).ravel()
        expected = width * height * bands
        if flat.size != expected:
            raise CubeError(
                f"data length {flat.size} != width*height*bands = {width}*{height}*{bands} = {expected}"
            )
        return cls(flat.reshape(height, width, bands), wavelengths_nm)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def equals(self, other: "HsiCube") -> bool:
        return (
            self.data.shape == other.data.shape
            and np.array_equal(self.wavelengths_nm, other.wavelengths_nm)
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class Spectrum:
    values: np.ndarray
    wavelengths_nm: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if v.size == 0:
            raise ValueError("spectrum must be nonempty")
        if not np.all(np.isfinite(v)):
            raise ValueError("spectrum values must be finite")
        object.__setattr__(self, "values", _frozen(v))
        if self.wavelengths_nm is not None:
            wl = np.array(self.wavelengths_nm, dtype=np.float64, copy=True).ravel()
            if wl.size != v.size:
                raise ValueError(f"{v.size} values but {wl.size} wavelengths")
            object.__setattr__(self, "wavelengths_nm", _frozen(wl))

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class Dataset:
    """Image-level spectra, one row per sample, with optional labels.

    ``spectra`` has shape ``(n_samples, band_count)``; ``labels[i]`` is None
    for unlabeled rows.
    """

    spectra: np.ndarray
    labels: tuple = ()
    wavelengths_nm: Optional[np.ndarray] = None
    sample_ids: tuple = field(default=())

    def __post_init__(self) -> None:
        x = np.array(self.spectra, dtype=np.float64, copy=True)
        if x.ndim != 2:
            raise ValueError(f"spectra must be 2-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("spectra must be finite")
        n = x.shape[0]
        labels = tuple(self.labels) if len(self.labels) else (None,) * n
        if len(labels) != n:
            raise ValueError(f"{n} spectra but {len(labels)} labels")
        labels = tuple(None if lab is None else ClassLabel(lab) for lab in labels)
        ids = tuple(self.sample_ids) if len(self.sample_ids) else tuple(f"s{i:05d}" for i in range(n))
        if len(ids) != n:
            raise ValueError(f"{n} spectra but {len(ids)} sample ids")
        object.__setattr__(self, "spectra", _frozen(x))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in ids))
        if self.wavelengths_nm is not None:
            wl = np.array(self.wavelengths_nm, dtype=np.float64, copy=True)
            _check_wavelengths(wl, x.shape[1])
            object.__setattr__(self, "wavelengths_nm", _frozen(wl))

    @property
    def band_count(self) -> int:
        return self.spectra.shape[1]

    def __len__(self) -> int:
        return self.spectra.shape[0]

    @property
    def samples(self) -> Iterator[tuple]:
        for row, lab in zip(self.spectra, self.labels):
            yield Spectrum(row, self.wavelengths_nm), lab

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = list(indices)
        return Dataset(
            self.spectra[idx],
            tuple(self.labels[i] for i in idx),
            self.wavelengths_nm,
            tuple(self.sample_ids[i] for i in idx),
        )


# --------------------------------------------------------------------------
# HSIC container


def _encode_cube(cube: HsiCube) -> bytes:
    h, w, b = cube.data.shape
    if cube.wavelengths_nm.shape != (b,):
        raise CubeError("wavelength count does not match band count")
    header = _HEADER.pack(MAGIC, VERSION, b"\0\0\0", w, h, b)
    return (
        header
        + cube.wavelengths_nm.astype("<f8").tobytes()
        + np.ascontiguousarray(cube.data).astype("<f4").tobytes()
    )


def save_cube(cube: HsiCube, path: PathLike) -> None:
    """Write ``cube`` as an HSIC container."""
    payload = _encode_cube(cube)
    with open(path, "wb") as fh:
        fh.write(payload)


def decode_cube(buf: bytes) -> HsiCube:
    """Parse an in-memory HSIC container; raises an ``HsicFormatError`` subclass."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", 0)
    if len(buf) < HEADER_SIZE:
        raise TruncatedPayloadError(
            f"header needs {HEADER_SIZE} bytes, file has {len(buf)}", len(buf))
    _, version, reserved, width, height, bands = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", 4)
    if reserved != b"\0\0\0":
        raise HsicFormatError("reserved header bytes must be zero", 5)
    if width == 0 or height == 0 or bands == 0:
        raise DimensionMismatchError(
            f"zero dimension in header (width={width}, height={height}, bands={bands})", 8)

    wl_end = HEADER_SIZE + 8 * bands
    expected = wl_end + 4 * width * height * bands
    if len(buf) < expected:
        raise TruncatedPayloadError(
            f"expected {expected} bytes for {width}x{height}x{bands}, got {len(buf)}", len(buf))
    if len(buf) > expected:
        raise DimensionMismatchError(
            f"{len(buf) - expected} trailing bytes after {width}x{height}x{bands} payload", expected)

    wl = np.frombuffer(buf, dtype="<f8", count=bands, offset=HEADER_SIZE).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(wl))
    if bad.size:
        raise WavelengthOrderError("non-finite wavelength", HEADER_SIZE + 8 * int(bad[0]))
    steps = np.flatnonzero(np.diff(wl) <= 0)
    if steps.size:
        raise WavelengthOrderError(
            f"wavelengths not strictly increasing at band {int(steps[0]) + 1}",
            HEADER_SIZE + 8 * (int(steps[0]) + 1))

    data = np.frombuffer(buf, dtype="<f4", count=width * height * bands, offset=wl_end)
    bad = np.flatnonzero(~np.isfinite(data) | (data < 0))
    if bad.size:
        raise InvalidReflectanceError(
            f"reflectance {float(data[bad[0]])!r} is negative or non-finite", wl_end + 4 * int(bad[0]))
    return HsiCube(data.reshape(height, width, bands), wl)


def load_cube(path: PathLike) -> HsiCube:
    return decode_cube(Path(path).read_bytes())


# --------------------------------------------------------------------------
# band and spatial manipulation


def trim_bands(cube: HsiCube, leading: int, trailing: int) -> HsiCube:
    """Drop ``leading`` bands from the start and ``trailing`` from the end."""
    if leading < 0 or trailing < 0:
        raise ValueError("trim counts must be non-negative")
    if leading + trailing >= cube.bands:
        raise ValueError(
            f"cannot trim {leading}+{trailing} bands from a {cube.bands}-band cube")
    stop = cube.bands - trailing
    return HsiCube(cube.data[:, :, leading:stop], cube.wavelengths_nm[leading:stop])


def wavelength_of(cube: HsiCube, band_index: int) -> float:
    if not 0 <= band_index < cube.bands:
        raise IndexError(f"band {band_index} out of range for {cube.bands}-band cube")
    return float(cube.wavelengths_nm[band_index])


def nearest_band(wavelengths_nm: np.ndarray, target_nm: float) -> int:
    """Index of the band closest to ``target_nm``; ties go to the lower index."""
    return int(np.argmin(np.abs(np.asarray(wavelengths_nm) - target_nm)))


def block_split(cube: HsiCube, block: int) -> list[HsiCube]:
    """Non-overlapping ``block`` x ``block`` tiles, row-major; partial edge tiles are dropped."""
    if block < 1:
        raise ValueError("block edge must be >= 1")
    tiles = []
    for r in range(cube.height // block):
        for c in range(cube.width // block):
            sub = cube.data[r * block:(r + 1) * block, c * block:(c + 1) * block, :]
            tiles.append(HsiCube(sub, cube.wavelengths_nm))
    return tiles


# --------------------------------------------------------------------------
# dataset CSV


def format_value(x: float) -> str:
    return f"{x:.9g}"


def save_dataset_csv(dataset: Dataset, path: PathLike, with_ids: bool = False) -> None:
    """Write ``label,b0,...`` rows; ``with_ids`` prepends a ``sample_id`` column."""
    header = ["label"] + [f"b{i}" for i in range(dataset.band_count)]
    if with_ids:
        header = ["sample_id"] + header
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for sid, row, lab in zip(dataset.sample_ids, dataset.spectra, dataset.labels):
            cells = ["" if lab is None else lab.value] + [format_value(v) for v in row]
            writer.writerow([sid] + cells if with_ids else cells)


def load_dataset_csv(path: PathLike, wavelengths_nm: Optional[Sequence[float]] = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header = rows[0]
    with_ids = bool(header) and header[0] == "sample_id"
    lead = 2 if with_ids else 1
    if len(header) < lead + 1 or header[lead - 1] != "label":
        raise DatasetFormatError(f"{path}: header must start with 'label' (optionally after 'sample_id')")
    n_bands = len(header) - lead
    if header[lead:] != [f"b{i}" for i in range(n_bands)]:
        raise DatasetFormatError(f"{path}: band columns must be named b0..b{n_bands - 1}")

    values, labels, ids = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise RaggedRowError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        lab = row[lead - 1]
        labels.append(None if lab == "" else ClassLabel.parse(lab))
        try:
            vals = [float(c) for c in row[lead:]]
        except ValueError as exc:
            raise NonNumericCellError(f"{path}:{lineno}: {exc}") from None
        if not all(np.isfinite(vals)):
            raise NonNumericCellError(f"{path}:{lineno}: non-finite value")
        values.append(vals)
        ids.append(row[0] if with_ids else f"s{lineno - 2:05d}")
    spectra = np.array(values, dtype=np.float64).reshape(len(values), n_bands)
    return Dataset(spectra, tuple(labels), wavelengths_nm, tuple(ids))
