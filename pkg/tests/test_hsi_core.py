import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhbsel.hsi_core import (
    BadMagicError,
    ClassLabel,
    CubeError,
    Dataset,
    DimensionMismatchError,
    HsiCube,
    HsicFormatError,
    InvalidReflectanceError,
    NonNumericCellError,
    RaggedRowError,
    TruncatedPayloadError,
    UnknownLabelError,
    UnsupportedVersionError,
    WavelengthOrderError,
    block_split,
    decode_cube,
    load_cube,
    load_dataset_csv,
    save_cube,
    save_dataset_csv,
    trim_bands,
    wavelength_of,
)
from fhbsel.synthesis import SceneSpec, make_endmembers, sensor_wavelengths, synth_cube


def random_cube(rng, h=None, w=None, b=None):
    h = h or int(rng.integers(1, 7))
    w = w or int(rng.integers(1, 7))
    b = b or int(rng.integers(1, 9))
    wl = np.cumsum(rng.uniform(0.5, 10, size=b)) + 400
    return HsiCube(rng.uniform(0, 1, size=(h, w, b)), wl)


def hsic_bytes(width, height, bands, wavelengths, values):
    head = b"HSIC" + bytes([1, 0, 0, 0]) + struct.pack("<III", width, height, bands)
    return head + struct.pack(f"<{bands}d", *wavelengths) + struct.pack(f"<{len(values)}f", *values)


class TestContainer:
    def test_smallest_cube(self, tmp_path):
        vals = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 2.75]
        f = tmp_path / "c.hsic"
        f.write_bytes(hsic_bytes(2, 2, 3, [450, 454, 458], vals))
        cube = load_cube(f)
        assert (cube.width, cube.height, cube.bands) == (2, 2, 3)
        assert cube.data.size == 12
        # row-major (row, column, band)
        assert cube.data[0, 1, 2] == vals[(0 * 2 + 1) * 3 + 2]

    def test_single_element_layout(self, tmp_path):
        f = tmp_path / "one.hsic"
        save_cube(HsiCube(np.full((1, 1, 1), 0.5), [450.0]), f)
        raw = f.read_bytes()
        assert raw[:4] == b"HSIC" and raw[4] == 1 and raw[5:8] == b"\0\0\0"
        assert struct.unpack("<III", raw[8:20]) == (1, 1, 1)
        assert struct.unpack("<d", raw[20:28]) == (450.0,)
        assert raw[28:] == struct.pack("<f", 0.5)

    def test_truncated_by_one_value(self):
        buf = hsic_bytes(2, 2, 3, [450, 454, 458], [0.1] * 12)[:-4]
        with pytest.raises(TruncatedPayloadError) as exc:
            decode_cube(buf)
        assert exc.value.offset == len(buf)

    @pytest.mark.parametrize(
        "mutate, error",
        [
            (lambda b: b"HSIX" + b[4:], BadMagicError),
            (lambda b: b[:4] + bytes([2]) + b[5:], UnsupportedVersionError),
            (lambda b: b + b"\0\0\0\0", DimensionMismatchError),
            (lambda b: b[:10], TruncatedPayloadError),
            (lambda b: b"", BadMagicError),
        ],
    )
    def test_corruptions_are_typed(self, mutate, error):
        good = hsic_bytes(2, 1, 2, [500, 510], [0.1, 0.2, 0.3, 0.4])
        with pytest.raises(error):
            decode_cube(mutate(good))

    def test_non_increasing_wavelengths(self):
        buf = hsic_bytes(1, 1, 3, [500, 510, 505], [0.1, 0.2, 0.3])
        with pytest.raises(WavelengthOrderError) as exc:
            decode_cube(buf)
        assert exc.value.offset == 20 + 2 * 8

    def test_negative_reflectance(self):
        with pytest.raises(InvalidReflectanceError) as exc:
            decode_cube(hsic_bytes(1, 1, 2, [500, 510], [0.1, -0.2]))
        assert exc.value.offset == 20 + 16 + 4

    def test_invalid_cube_rejected_before_write(self, tmp_path):
        with pytest.raises(CubeError):
            HsiCube.from_flat(2, 2, 3, [1, 2, 3], [0.0] * 11)
        assert not (tmp_path / "never.hsic").exists()

    def test_round_trip_bytes_random(self, tmp_path):
        rng = np.random.default_rng(7)
        for i in range(25):
            f = tmp_path / f"{i}.hsic"
            save_cube(random_cube(rng), f)
            raw = f.read_bytes()
            g = tmp_path / f"{i}b.hsic"
            save_cube(load_cube(f), g)
            assert g.read_bytes() == raw

    def test_round_trip_synthetic_scene_cube(self, tmp_path):
        lib = make_endmembers(0.05, seed=3)
        cube = synth_cube(lib, ClassLabel.MILD, SceneSpec(cube_edge=50), [3, 0])
        assert (cube.height, cube.width, cube.bands) == (50, 50, 125)
        save_cube(cube, tmp_path / "s.hsic")
        back = load_cube(tmp_path / "s.hsic")
        assert back.equals(cube)
        assert np.array_equal(back.wavelengths_nm, cube.wavelengths_nm)

    @settings(max_examples=60, deadline=None)
    @given(st.binary(max_size=200))
    def test_fuzz_never_crashes_untyped(self, blob):
        try:
            decode_cube(b"HSIC\x01\0\0\0" + blob)
        except HsicFormatError:
            pass
        except CubeError:
            pass


class TestBandOps:
    def test_trim_to_101(self):
        cube = HsiCube(np.ones((2, 2, 125)), sensor_wavelengths())
        out = trim_bands(cube, 10, 14)
        assert out.bands == 101
        assert wavelength_of(out, 0) == 490.0
        assert np.array_equal(out.data, cube.data[:, :, 10:111])

    def test_trim_identity_and_composition(self):
        rng = np.random.default_rng(1)
        cube = random_cube(rng, b=12)
        assert trim_bands(cube, 0, 0).equals(cube)
        assert trim_bands(trim_bands(cube, 3, 0), 4, 0).equals(trim_bands(cube, 7, 0))

    def test_trim_too_much(self):
        cube = HsiCube(np.ones((1, 1, 5)), [1, 2, 3, 4, 5])
        with pytest.raises(ValueError):
            trim_bands(cube, 3, 2)

    def test_wavelength_of_sensor_grid(self):
        cube = HsiCube(np.ones((1, 1, 125)), sensor_wavelengths())
        assert wavelength_of(cube, 0) == 450.0
        assert wavelength_of(cube, 124) == 946.0
        with pytest.raises(IndexError):
            wavelength_of(cube, 125)

    @pytest.mark.parametrize("edge, block, expected", [(64, 32, 4), (50, 32, 1), (32, 32, 1), (7, 3, 4)])
    def test_block_counts(self, edge, block, expected):
        cube = HsiCube(np.zeros((edge, edge, 2)), [1.0, 2.0])
        assert len(block_split(cube, block)) == expected

    def test_block_identity_tile(self):
        cube = random_cube(np.random.default_rng(2), h=4, w=4)
        (tile,) = block_split(cube, 4)
        assert tile.equals(cube)

    def test_block_zero(self):
        with pytest.raises(ValueError):
            block_split(HsiCube(np.zeros((2, 2, 1)), [1.0]), 0)

    def test_tiles_are_verbatim_subgrids(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            h, w, blk = int(rng.integers(1, 12)), int(rng.integers(1, 12)), int(rng.integers(1, 5))
            cube = random_cube(rng, h=h, w=w, b=3)
            tiles = block_split(cube, blk)
            assert len(tiles) == (h // blk) * (w // blk)
            per_row = w // blk
            for t, tile in enumerate(tiles):
                r0, c0 = (t // per_row) * blk, (t % per_row) * blk
                for r in range(blk):
                    for c in range(blk):
                        for b in range(3):
                            assert tile.data[r, c, b] == cube.data[r0 + r, c0 + c, b]


class TestDatasetCsv:
    def test_small_labeled(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("label,b0,b1,b2\nmild,0.1,0.2,0.3\nserious,1,2,3\n")
        ds = load_dataset_csv(f)
        assert ds.band_count == 3 and len(ds) == 2
        assert ds.labels == (ClassLabel.MILD, ClassLabel.SERIOUS)

    def test_unlabeled_rows(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("label,b0\n,0.5\n")
        assert load_dataset_csv(f).labels == (None,)

    @pytest.mark.parametrize(
        "body, error",
        [
            ("label,b0,b1\nsevere,1,2\n", UnknownLabelError),
            ("label,b0,b1\nmild,1\n", RaggedRowError),
            ("label,b0,b1\nmild,1,abc\n", NonNumericCellError),
        ],
    )
    def test_schema_errors(self, tmp_path, body, error):
        f = tmp_path / "d.csv"
        f.write_text(body)
        with pytest.raises(error):
            load_dataset_csv(f)

    def test_round_trip_nine_digits(self, tmp_path):
        rng = np.random.default_rng(11)
        for i in range(20):
            n, b = int(rng.integers(1, 8)), int(rng.integers(1, 10))
            x = rng.uniform(0, 2, size=(n, b)) * 10.0 ** rng.integers(-5, 5)
            labels = [rng.choice([None, ClassLabel.MILD, ClassLabel.SERIOUS]) for _ in range(n)]
            f = tmp_path / f"{i}.csv"
            save_dataset_csv(Dataset(x, tuple(labels)), f)
            back = load_dataset_csv(f)
            assert back.labels == tuple(labels)
            np.testing.assert_allclose(back.spectra, x, rtol=5e-9, atol=0)
            g = tmp_path / f"{i}b.csv"
            save_dataset_csv(back, g)
            assert g.read_bytes() == f.read_bytes()

    def test_sample_id_column(self, tmp_path):
        ds = Dataset(np.eye(2), (ClassLabel.MILD, None), sample_ids=("a", "b"))
        save_dataset_csv(ds, tmp_path / "x.csv", with_ids=True)
        back = load_dataset_csv(tmp_path / "x.csv")
        assert back.sample_ids == ("a", "b")
        assert back.labels == (ClassLabel.MILD, None)
