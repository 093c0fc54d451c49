#
# Scan Context PP - Descriptor Codecs
#
# Copyright (C) 2024 The scan-context-pp contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.
#
"""Binary and CSV encodings of scan context descriptors.

Binary record layout (little-endian)::

    u32 n_r | u32 n_a | u8 kind | u8 tag | f32 offset | n_r * n_a f32 (row-major)

``offset`` is the augmentation offset (lateral root shift in meters, 0 otherwise).
Partition ranges are not part of the record; the enclosing container supplies them.
"""

import csv
import io
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .descriptor import (
    Augmentation,
    AugmentationKind,
    DescriptorKind,
    DescriptorParams,
    ScanContextDescriptor,
    default_params,
)
from .errors import CorruptFileError, FormatError, ParseError

logger = logging.getLogger(__name__)

RECORD_HEADER = struct.Struct("<IIBBf")

_KIND_CODES = {DescriptorKind.POLAR: 0, DescriptorKind.CARTESIAN: 1}
_TAG_CODES = {
    AugmentationKind.ORIGINAL: 0,
    AugmentationKind.ROOT_SHIFT: 1,
    AugmentationKind.DOUBLE_FLIP: 2,
}
_KINDS = {code: kind for kind, code in _KIND_CODES.items()}
_TAGS = {code: tag for tag, code in _TAG_CODES.items()}


@dataclass(frozen=True)
class DecodedRecord:
    """A descriptor decoded from a buffer plus the offset just past it."""

    descriptor: ScanContextDescriptor
    end: int


def encode_descriptor(scd: ScanContextDescriptor) -> bytes:
    """Serialize one descriptor record."""
    header = RECORD_HEADER.pack(
        scd.params.n_r,
        scd.params.n_a,
        _KIND_CODES[scd.kind],
        _TAG_CODES[scd.augmentation.kind],
        scd.augmentation.offset,
    )
    return header + scd.matrix.astype("<f4").tobytes(order="C")


def decode_descriptor(
    data: bytes,
    offset: int = 0,
    params: DescriptorParams | None = None,
) -> DecodedRecord:
    """Decode the record starting at ``offset``.

    Without ``params`` the reference partition of the record's kind is used, resized to
    the stored dimensions.

    Raises:
        CorruptFileError: If the buffer ends inside the record
        FormatError: If codes are unknown or dimensions disagree with ``params``
    """
    header_end = offset + RECORD_HEADER.size
    if header_end > len(data):
        msg = f"descriptor record truncated at byte {offset}"
        raise CorruptFileError(msg)
    n_r, n_a, kind_code, tag_code, tag_offset = RECORD_HEADER.unpack_from(data, offset)
    if kind_code not in _KINDS or tag_code not in _TAGS:
        msg = f"unknown descriptor kind/tag code {kind_code}/{tag_code} at byte {offset}"
        raise FormatError(msg)

    kind = _KINDS[kind_code]
    if params is None:
        params = replace(default_params(kind), n_r=n_r, n_a=n_a)
    if params.kind is not kind or params.shape != (n_r, n_a):
        msg = (
            f"record is {kind.value} {n_r}x{n_a} but container expects "
            f"{params.kind.value} {params.n_r}x{params.n_a}"
        )
        raise FormatError(msg)

    matrix_end = header_end + 4 * n_r * n_a
    if matrix_end > len(data):
        msg = f"descriptor matrix truncated at byte {header_end}"
        raise CorruptFileError(msg)
    matrix = np.frombuffer(data, dtype="<f4", count=n_r * n_a, offset=header_end)
    augmentation = Augmentation(_TAGS[tag_code], float(tag_offset))
    descriptor = ScanContextDescriptor(
        matrix.astype(np.float64).reshape(n_r, n_a),
        params,
        augmentation,
    )
    return DecodedRecord(descriptor, matrix_end)


def write_descriptor_binary(path: str | Path, scd: ScanContextDescriptor) -> None:
    """Write a single-record binary descriptor file."""
    Path(path).write_bytes(encode_descriptor(scd))


def read_descriptor_binary(
    path: str | Path,
    params: DescriptorParams | None = None,
) -> ScanContextDescriptor:
    """Read a single-record binary descriptor file."""
    data = Path(path).read_bytes()
    record = decode_descriptor(data, 0, params)
    if record.end != len(data):
        msg = f"{path}: {len(data) - record.end} trailing bytes after descriptor record"
        raise CorruptFileError(msg)
    return record.descriptor


def descriptor_to_csv(scd: ScanContextDescriptor) -> str:
    """Row-major CSV text, one descriptor row per line."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    for row in scd.matrix:
        writer.writerow(f"{value:.6g}" for value in row)
    return buffer.getvalue()


def write_descriptor_csv(path: str | Path, scd: ScanContextDescriptor) -> None:
    """Write the matrix as row-major CSV."""
    Path(path).write_text(descriptor_to_csv(scd), encoding="utf-8")


def read_descriptor_csv(path: str | Path, params: DescriptorParams) -> ScanContextDescriptor:
    """Read a CSV matrix written by :func:`write_descriptor_csv`.

    Raises:
        ParseError: On a non-numeric cell or a row of the wrong width
        FormatError: If the row count disagrees with ``params``
    """
    rows: list[list[float]] = []
    with Path(path).open(encoding="utf-8", newline="") as handle:
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row:
                continue
            if len(row) != params.n_a:
                msg = f"expected {params.n_a} columns, got {len(row)}"
                raise ParseError(msg, line=line_no, path=path)
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as e:
                msg = "non-numeric cell"
                raise ParseError(msg, line=line_no, path=path) from e
    if len(rows) != params.n_r:
        msg = f"{path}: expected {params.n_r} rows, got {len(rows)}"
        raise FormatError(msg)
    return ScanContextDescriptor(np.array(rows), params)
