"""File format round trips and malformed-input handling."""

import numpy as np
import pytest

from twolmm import (
    AbundanceMatrix,
    EndmemberMatrix,
    FormatError,
    HsiImage,
    ScalingState,
    load_abundances,
    load_endmembers,
    load_image,
    load_scaling_state,
    save_abundances,
    save_endmembers,
    save_image,
    save_scaling_state,
)


@pytest.fixture
def image():
    rng = np.random.default_rng(17)
    return HsiImage(rng.uniform(0.0, 2.5, size=(4, 6)), width=3, height=2)


class TestRawFormat:
    def test_image_round_trip_bit_identical(self, image, tmp_path):
        path = tmp_path / "img.hsi"
        save_image(image, path, fmt="raw-f64")
        back = load_image(path)
        np.testing.assert_array_equal(back.data, image.data)
        assert (back.width, back.height) == (image.width, image.height)

    def test_header_is_sixteen_bytes(self, image, tmp_path):
        path = tmp_path / "img.hsi"
        save_image(image, path)
        blob = path.read_bytes()
        assert blob[:4] == b"HSI0"
        assert len(blob) == 16 + image.data.size * 8

    def test_bad_magic_rejected(self, image, tmp_path):
        path = tmp_path / "img.hsi"
        save_image(image, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            load_image(path, fmt="raw-f64")
        with pytest.raises(FormatError):
            load_image(path)  # sniffed path also fails cleanly

    def test_truncated_payload_rejected(self, image, tmp_path):
        path = tmp_path / "img.hsi"
        save_image(image, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="payload"):
            load_image(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.hsi"
        path.write_bytes(b"")
        with pytest.raises(FormatError, match="empty"):
            load_image(path)

    def test_endmembers_round_trip(self, tmp_path):
        em = EndmemberMatrix(np.random.default_rng(3).uniform(0.1, 1.0, (5, 3)))
        path = tmp_path / "em.emm"
        save_endmembers(em, path)
        np.testing.assert_array_equal(load_endmembers(path).data, em.data)

    def test_abundances_round_trip_with_flag(self, tmp_path):
        a = AbundanceMatrix(
            np.random.default_rng(4).dirichlet([1, 1, 1], size=5).T, normalized=True
        )
        path = tmp_path / "a.abn"
        save_abundances(a, path)
        back = load_abundances(path)
        np.testing.assert_array_equal(back.data, a.data)
        assert back.normalized


class TestCsvFormat:
    def test_round_trip_exact(self, image, tmp_path):
        path = tmp_path / "img.csv"
        save_image(image, path, fmt="csv")
        back = load_image(path)
        np.testing.assert_array_equal(back.data, image.data)
        assert (back.width, back.height) == (image.width, image.height)

    def test_wrong_column_count_names_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("2,3\n1,2,3\n4,5\n")
        with pytest.raises(FormatError, match="row 2"):
            load_image(path)

    def test_wrong_row_count_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("3,2\n1,2\n3,4\n")
        with pytest.raises(FormatError, match="rows"):
            load_image(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(FormatError, match="empty"):
            load_image(path)

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("width,height\n")
        with pytest.raises(FormatError, match="header"):
            load_image(path)

    def test_non_numeric_value_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n1.0,oops\n")
        with pytest.raises(FormatError, match="row 1"):
            load_image(path)

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n1.0,nan\n")
        with pytest.raises(FormatError, match="finite"):
            load_image(path)


class TestFormatSniffing:
    def test_sniff_raw_vs_csv(self, image, tmp_path):
        raw = tmp_path / "a.hsi"
        csv = tmp_path / "a.csv"
        save_image(image, raw, fmt="raw-f64")
        save_image(image, csv, fmt="csv")
        np.testing.assert_array_equal(load_image(raw).data, load_image(csv).data)

    def test_unknown_format_rejected(self, image, tmp_path):
        with pytest.raises(FormatError, match="unsupported"):
            save_image(image, tmp_path / "x", fmt="npz")


class TestScalingStateFile:
    def test_round_trip(self, tmp_path):
        state = ScalingState(
            s_e=np.array([0.5, 2.0]), s_x=np.array([1.0, 0.7, 3.0]), lower=0.2, upper=5.0
        )
        path = tmp_path / "scalings.txt"
        save_scaling_state(state, path)
        back = load_scaling_state(path)
        np.testing.assert_array_equal(back.s_e, state.s_e)
        np.testing.assert_array_equal(back.s_x, state.s_x)
        assert (back.lower, back.upper) == (state.lower, state.upper)

    def test_missing_entries_rejected(self, tmp_path):
        path = tmp_path / "scalings.txt"
        path.write_text("bounds = 0.2,5\n")
        with pytest.raises(FormatError, match="malformed"):
            load_scaling_state(path)
