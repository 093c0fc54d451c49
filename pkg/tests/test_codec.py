"""Tests for the descriptor record and CSV formats."""

from pathlib import Path

import numpy as np
import pytest

from scan_context_pp.codec import (
    RECORD_HEADER,
    decode_descriptor,
    descriptor_to_csv,
    encode_descriptor,
    read_descriptor_binary,
    read_descriptor_csv,
    write_descriptor_binary,
    write_descriptor_csv,
)
from scan_context_pp.descriptor import (
    Augmentation,
    ScanContextDescriptor,
    default_params,
    double_flip,
)
from scan_context_pp.errors import CorruptFileError, FormatError, ParseError

POLAR = default_params("polar")
CART = default_params("cart")


@pytest.fixture
def polar_descriptor() -> ScanContextDescriptor:
    """Random float32-exact Polar descriptor."""
    rng = np.random.default_rng(12)
    matrix = rng.uniform(0.0, 7.0, size=(20, 60)).astype(np.float32).astype(np.float64)
    return ScanContextDescriptor(matrix, POLAR)


class TestBinaryRecord:
    """Test cases for the binary descriptor record."""

    def test_record_size(self, polar_descriptor: ScanContextDescriptor) -> None:
        """Test that a record is header plus float32 matrix."""
        data = encode_descriptor(polar_descriptor)
        assert len(data) == RECORD_HEADER.size + 4 * 20 * 60
        assert RECORD_HEADER.unpack_from(data)[:2] == (20, 60)

    def test_decode_restores_matrix_and_tag(self) -> None:
        """Test that a tagged Cartesian record decodes losslessly."""
        rng = np.random.default_rng(13)
        matrix = rng.uniform(0.0, 5.0, size=(40, 40)).astype(np.float32).astype(np.float64)
        flipped = double_flip(ScanContextDescriptor(matrix, CART))

        record = decode_descriptor(encode_descriptor(flipped))

        np.testing.assert_array_equal(record.descriptor.matrix, flipped.matrix)
        assert record.descriptor.augmentation == flipped.augmentation
        assert record.descriptor.params == CART

    def test_root_shift_offset_kept(self) -> None:
        """Test that the root-shift offset survives encoding."""
        scd = ScanContextDescriptor(
            np.zeros((20, 60)),
            POLAR,
            Augmentation.root_shift(-2.0),
        )
        decoded = decode_descriptor(encode_descriptor(scd)).descriptor
        assert decoded.augmentation == Augmentation.root_shift(-2.0)

    def test_consecutive_records(self, polar_descriptor: ScanContextDescriptor) -> None:
        """Test that decoding resumes at the returned end offset."""
        data = encode_descriptor(polar_descriptor) * 2
        first = decode_descriptor(data, 0, POLAR)
        second = decode_descriptor(data, first.end, POLAR)
        assert second.end == len(data)
        np.testing.assert_array_equal(second.descriptor.matrix, polar_descriptor.matrix)

    def test_truncated_header(self) -> None:
        """Test that a short buffer is reported as corrupt."""
        with pytest.raises(CorruptFileError):
            decode_descriptor(b"\x00" * (RECORD_HEADER.size - 1))

    def test_truncated_matrix(self, polar_descriptor: ScanContextDescriptor) -> None:
        """Test that a record cut inside its matrix is reported as corrupt."""
        with pytest.raises(CorruptFileError):
            decode_descriptor(encode_descriptor(polar_descriptor)[:-1])

    def test_unknown_kind_code(self, polar_descriptor: ScanContextDescriptor) -> None:
        """Test that an unknown kind byte is a format error."""
        data = bytearray(encode_descriptor(polar_descriptor))
        data[8] = 9
        with pytest.raises(FormatError):
            decode_descriptor(bytes(data))

    def test_params_mismatch(self, polar_descriptor: ScanContextDescriptor) -> None:
        """Test that a Polar record cannot be read as Cartesian."""
        with pytest.raises(FormatError):
            decode_descriptor(encode_descriptor(polar_descriptor), 0, CART)


class TestDescriptorFiles:
    """Test cases for descriptor files on disk."""

    def test_binary_file(self, tmp_path: Path, polar_descriptor: ScanContextDescriptor) -> None:
        """Test writing and reading a binary descriptor file."""
        path = tmp_path / "scan.scd.bin"
        write_descriptor_binary(path, polar_descriptor)
        restored = read_descriptor_binary(path)
        np.testing.assert_array_equal(restored.matrix, polar_descriptor.matrix)

    def test_binary_trailing_bytes(
        self,
        tmp_path: Path,
        polar_descriptor: ScanContextDescriptor,
    ) -> None:
        """Test that extra bytes after the record are rejected."""
        path = tmp_path / "scan.scd.bin"
        path.write_bytes(encode_descriptor(polar_descriptor) + b"\x00")
        with pytest.raises(CorruptFileError):
            read_descriptor_binary(path)

    def test_csv_layout(self, polar_descriptor: ScanContextDescriptor) -> None:
        """Test that CSV output has one line per row and n_a cells per line."""
        lines = descriptor_to_csv(polar_descriptor).splitlines()
        assert len(lines) == 20
        assert all(len(line.split(",")) == 60 for line in lines)

    def test_csv_file(self, tmp_path: Path, polar_descriptor: ScanContextDescriptor) -> None:
        """Test that CSV values survive to six significant digits."""
        path = tmp_path / "scan.scd.csv"
        write_descriptor_csv(path, polar_descriptor)
        restored = read_descriptor_csv(path, POLAR)
        np.testing.assert_allclose(restored.matrix, polar_descriptor.matrix, rtol=1e-5)

    def test_csv_wrong_width(self, tmp_path: Path) -> None:
        """Test that a short row is reported with its line number."""
        path = tmp_path / "bad.csv"
        path.write_text("0,0,0\n", encoding="utf-8")
        with pytest.raises(ParseError) as excinfo:
            read_descriptor_csv(path, POLAR)
        assert excinfo.value.line == 1

    def test_csv_non_numeric(self, tmp_path: Path) -> None:
        """Test that a non-numeric cell is a parse error."""
        path = tmp_path / "bad.csv"
        path.write_text(",".join(["0"] * 59 + ["x"]) + "\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_descriptor_csv(path, POLAR)

    def test_csv_wrong_row_count(self, tmp_path: Path) -> None:
        """Test that a missing row is a format error."""
        path = tmp_path / "short.csv"
        path.write_text((",".join(["0"] * 60) + "\n") * 19, encoding="utf-8")
        with pytest.raises(FormatError):
            read_descriptor_csv(path, POLAR)
