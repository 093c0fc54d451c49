#
# Scan Context PP - Descriptor Construction
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
"""Bird's-eye-view scan context descriptors and their sub-descriptors.

A descriptor partitions the ground plane into ``n_r`` rows along the retrieval axis
(range for Polar, longitudinal x for Cartesian) and ``n_a`` columns along the aligning
axis (azimuth for Polar, lateral y for Cartesian). Each bin holds the encoded value of
the points that fall into it; 0 marks an empty bin.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import numpy.typing as npt

from .errors import InvalidParamError, KindError, ShapeError
from .pointcloud import FloatArray, PointCloud, RigidTransform, transform

logger = logging.getLogger(__name__)

IntArray = npt.NDArray[np.int64]

FULL_TURN_DEG = 360.0
DEFAULT_HEIGHT_OFFSET = 2.0
DEFAULT_ROOT_SHIFTS: tuple[float, ...] = (2.0, -2.0)


class DescriptorKind(Enum):
    """Coordinate system of the descriptor partition."""

    POLAR = "polar"
    CARTESIAN = "cartesian"

    @classmethod
    def parse(cls, value: "str | DescriptorKind") -> "DescriptorKind":
        """Accept enum members, full names, and the ``pc``/``cart``/``cc`` shorthands."""
        if isinstance(value, DescriptorKind):
            return value
        aliases = {"polar": cls.POLAR, "pc": cls.POLAR, "cartesian": cls.CARTESIAN}
        aliases |= {"cart": cls.CARTESIAN, "cc": cls.CARTESIAN}
        try:
            return aliases[value.strip().lower()]
        except KeyError as e:
            msg = f"unknown descriptor kind {value!r} (expected polar or cart)"
            raise InvalidParamError(msg) from e


class AugmentationKind(Enum):
    """How an entry was derived from its original scan."""

    ORIGINAL = "original"
    ROOT_SHIFT = "root_shift"
    DOUBLE_FLIP = "double_flip"


@dataclass(frozen=True)
class Augmentation:
    """Augmentation tag; ``offset`` is the lateral root shift in meters."""

    kind: AugmentationKind = AugmentationKind.ORIGINAL
    offset: float = 0.0

    @classmethod
    def root_shift(cls, offset: float) -> "Augmentation":
        """Tag for a descriptor built from a laterally root-shifted cloud."""
        return cls(AugmentationKind.ROOT_SHIFT, float(offset))

    @property
    def is_original(self) -> bool:
        """Whether this is an unaugmented entry."""
        return self.kind is AugmentationKind.ORIGINAL

    def __str__(self) -> str:
        """Short label used in logs and CSV output."""
        if self.kind is AugmentationKind.ROOT_SHIFT:
            return f"root_shift({self.offset:+g}m)"
        return self.kind.value


ORIGINAL = Augmentation()
DOUBLE_FLIP = Augmentation(AugmentationKind.DOUBLE_FLIP)


@dataclass(frozen=True)
class DescriptorParams:
    """Partition parameters: kind, axis ranges, resolutions and height offset.

    ``r_range`` is in meters for both kinds. ``a_range`` is in degrees for Polar and in
    meters (lateral) for Cartesian.
    """

    kind: DescriptorKind
    r_range: tuple[float, float]
    a_range: tuple[float, float]
    n_r: int
    n_a: int
    height_offset: float = DEFAULT_HEIGHT_OFFSET

    def __post_init__(self) -> None:
        """Validate the partition."""
        r_min, r_max = (float(v) for v in self.r_range)
        a_min, a_max = (float(v) for v in self.a_range)
        object.__setattr__(self, "r_range", (r_min, r_max))
        object.__setattr__(self, "a_range", (a_min, a_max))

        values = (r_min, r_max, a_min, a_max, float(self.height_offset))
        if not all(np.isfinite(values)):
            msg = "descriptor ranges and height offset must be finite"
            raise InvalidParamError(msg)
        if r_min >= r_max:
            msg = f"r_range must satisfy R_min < R_max, got [{r_min}, {r_max}]"
            raise InvalidParamError(msg)
        if a_min >= a_max:
            msg = f"a_range must satisfy A_min < A_max, got [{a_min}, {a_max}]"
            raise InvalidParamError(msg)
        if self.n_r < 1 or self.n_a < 1:
            msg = f"n_r and n_a must be >= 1, got {self.n_r}x{self.n_a}"
            raise InvalidParamError(msg)
        if self.kind is DescriptorKind.POLAR:
            if (a_min, a_max) != (0.0, FULL_TURN_DEG):
                msg = f"Polar descriptors require a_range [0, 360], got [{a_min}, {a_max}]"
                raise InvalidParamError(msg)
            if r_min < 0:
                msg = f"Polar R_min must be non-negative, got {r_min}"
                raise InvalidParamError(msg)

    @property
    def delta_r(self) -> float:
        """Row resolution (meters)."""
        return (self.r_range[1] - self.r_range[0]) / self.n_r

    @property
    def delta_a(self) -> float:
        """Column resolution (degrees for Polar, meters for Cartesian)."""
        return (self.a_range[1] - self.a_range[0]) / self.n_a

    @property
    def shape(self) -> tuple[int, int]:
        """Matrix shape ``(n_r, n_a)``."""
        return (self.n_r, self.n_a)


def default_params(kind: DescriptorKind | str) -> DescriptorParams:
    """Reference partition for each descriptor kind.

    Polar is 20x60 over [0, 80] m and [0, 360] degrees (4 m, 6 degrees). Cartesian is
    40x40 over [-100, 100] m longitudinal and [-40, 40] m lateral (5 m, 2 m).
    """
    kind = DescriptorKind.parse(kind)
    if kind is DescriptorKind.POLAR:
        return DescriptorParams(kind, (0.0, 80.0), (0.0, FULL_TURN_DEG), 20, 60)
    return DescriptorParams(kind, (-100.0, 100.0), (-40.0, 40.0), 40, 40)


# A bin encoder maps (flat bin index, member points, params) to a matrix of bin values.
BinEncoder = Callable[[IntArray, FloatArray, DescriptorParams], FloatArray]


def max_height_encoder(
    flat_index: IntArray,
    points: FloatArray,
    params: DescriptorParams,
) -> FloatArray:
    """Maximum of ``max(z + height_offset, 0)`` over the members of each bin."""
    values = np.maximum(points[:, 2] + params.height_offset, 0.0)
    bins = np.zeros(params.n_r * params.n_a)
    np.maximum.at(bins, flat_index, values)
    return bins.reshape(params.shape)


@dataclass(frozen=True)
class ScanContextDescriptor:
    """An ``n_r x n_a`` matrix of non-negative bin values."""

    matrix: FloatArray
    params: DescriptorParams
    augmentation: Augmentation = field(default=ORIGINAL)

    def __post_init__(self) -> None:
        """Validate dimensions and sign, then freeze the matrix."""
        matrix = np.array(self.matrix, dtype=np.float64, order="C")
        if matrix.shape != self.params.shape:
            msg = f"matrix shape {matrix.shape} does not match params {self.params.shape}"
            raise ShapeError(msg)
        if not np.isfinite(matrix).all() or (matrix < 0).any():
            msg = "descriptor entries must be finite and non-negative"
            raise InvalidParamError(msg)
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def kind(self) -> DescriptorKind:
        """Descriptor kind, taken from the params."""
        return self.params.kind

    @property
    def shape(self) -> tuple[int, int]:
        """Matrix shape."""
        return self.params.shape

    def with_matrix(
        self,
        matrix: FloatArray,
        augmentation: Augmentation | None = None,
    ) -> "ScanContextDescriptor":
        """Copy with a new matrix (and optionally a new tag)."""
        return replace(
            self,
            matrix=matrix,
            augmentation=self.augmentation if augmentation is None else augmentation,
        )


@dataclass(frozen=True)
class RetrievalKey:
    """Per-row summary (length ``n_r``), invariant to column order."""

    values: FloatArray


@dataclass(frozen=True)
class AligningKey:
    """Per-column summary (length ``n_a``) used to pre-estimate the column shift."""

    values: FloatArray


def _bin_coordinates(
    points: FloatArray,
    params: DescriptorParams,
) -> tuple[FloatArray, FloatArray]:
    x, y = points[:, 0], points[:, 1]
    if params.kind is DescriptorKind.POLAR:
        radius = np.hypot(x, y)
        azimuth = np.degrees(np.arctan2(y, x)) % FULL_TURN_DEG
        return radius, azimuth
    return x, y


def make_descriptor(
    cloud: PointCloud,
    params: DescriptorParams,
    *,
    augmentation: Augmentation = ORIGINAL,
    encoder: BinEncoder = max_height_encoder,
) -> ScanContextDescriptor:
    """Project a cloud onto the ground plane and encode every bin.

    Bins are half-open: a coordinate equal to the range maximum falls outside, except
    that Polar azimuth wraps, so 360 degrees lands in column 0.
    """
    if cloud.is_empty:
        return ScanContextDescriptor(np.zeros(params.shape), params, augmentation)

    r_coord, a_coord = _bin_coordinates(cloud.points, params)
    (r_min, r_max), (a_min, a_max) = params.r_range, params.a_range
    inside = (r_coord >= r_min) & (r_coord < r_max)
    if params.kind is DescriptorKind.CARTESIAN:
        inside &= (a_coord >= a_min) & (a_coord < a_max)

    rows = np.floor((r_coord[inside] - r_min) / params.delta_r).astype(np.int64)
    cols = np.floor((a_coord[inside] - a_min) / params.delta_a).astype(np.int64)
    rows = np.clip(rows, 0, params.n_r - 1)
    if params.kind is DescriptorKind.POLAR:
        cols %= params.n_a
    else:
        cols = np.clip(cols, 0, params.n_a - 1)

    matrix = encoder(rows * params.n_a + cols, cloud.points[inside], params)
    # float32 precision, so the binary record round-trips losslessly
    matrix = matrix.astype(np.float32).astype(np.float64)
    logger.debug(
        "Described %d/%d points into %s %dx%d",
        int(inside.sum()),
        len(cloud),
        params.kind.value,
        params.n_r,
        params.n_a,
    )
    return ScanContextDescriptor(matrix, params, augmentation)


def retrieval_key(scd: ScanContextDescriptor) -> RetrievalKey:
    """Row-wise L1 norm divided by ``n_a``.

    Each row is sorted before summation so the key is bit-identical under any column
    permutation.
    """
    rows = np.sort(np.abs(scd.matrix), axis=1)
    return RetrievalKey(rows.sum(axis=1) / scd.params.n_a)


def aligning_key(scd: ScanContextDescriptor) -> AligningKey:
    """Column-wise L1 norm divided by ``n_r``."""
    return AligningKey(np.abs(scd.matrix).sum(axis=0) / scd.params.n_r)


def double_flip(cc: ScanContextDescriptor) -> ScanContextDescriptor:
    """Reverse both axes of a Cartesian descriptor.

    The matrix flip is an involution. The result is always tagged as a double flip.

    Raises:
        KindError: If applied to a Polar descriptor
    """
    if cc.kind is not DescriptorKind.CARTESIAN:
        msg = "double flip is only defined for Cartesian descriptors"
        raise KindError(msg)
    return cc.with_matrix(cc.matrix[::-1, ::-1], DOUBLE_FLIP)


def root_shift_clouds(
    cloud: PointCloud,
    lateral_offsets: Sequence[float] = DEFAULT_ROOT_SHIFTS,
) -> list[PointCloud]:
    """Re-express a cloud from virtual origins displaced laterally by each offset.

    A positive offset moves the virtual origin toward +y, so points appear at ``y - offset``.
    """
    if not all(np.isfinite(lateral_offsets)):
        msg = f"lateral offsets must be finite, got {list(lateral_offsets)}"
        raise InvalidParamError(msg)
    return [
        transform(cloud, RigidTransform.from_translation((0.0, -float(offset), 0.0)))
        for offset in lateral_offsets
    ]
