#
# Scan Context PP - Descriptor Distance and Alignment
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
"""Column-wise cosine distance, column-shift alignment and 1-DOF pose recovery.

Shift convention: ``shift_columns(f, n)`` rolls the columns right by ``n``. Alignment
returns the ``n`` for which the shifted query best matches the map descriptor, so
``brute_force_align(f, shift_columns(f, 5)).shift == 5``. Converted to a pose, the shift
is the query sensor's heading (Polar) or lateral position (Cartesian) relative to the
map place.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
import numpy.typing as npt

from .descriptor import (
    AligningKey,
    DescriptorKind,
    DescriptorParams,
    ScanContextDescriptor,
    aligning_key,
)
from .errors import RangeError, ShapeError
from .pointcloud import FloatArray

logger = logging.getLogger(__name__)

HALF_TURN_DEG = 180.0
FULL_TURN_DEG = 360.0


@dataclass(frozen=True)
class AlignedDistance:
    """Normalized descriptor distance at the best column shift."""

    distance: float
    shift: int


class PoseKind(Enum):
    """Which degree of freedom a descriptor kind can resolve."""

    YAW = "yaw"
    LATERAL = "lateral"


@dataclass(frozen=True)
class SemiMetricPose:
    """1-DOF relative pose of the query sensor with respect to the map place.

    ``kind`` names the degree of freedom recovered from the column shift. The other
    field carries what augmentation implies (root-shift lateral offset, or the 180
    degree turn of a double-flipped entry) and is 0 otherwise.
    """

    kind: PoseKind
    yaw_deg: float = 0.0
    lateral_m: float = 0.0

    @property
    def value(self) -> float:
        """The estimated quantity (degrees for yaw, meters for lateral)."""
        return self.yaw_deg if self.kind is PoseKind.YAW else self.lateral_m


def wrap_degrees(angle: float) -> float:
    """Wrap an angle into ``(-180, 180]`` degrees."""
    return -((-angle + HALF_TURN_DEG) % FULL_TURN_DEG - HALF_TURN_DEG) + 0.0


def _check_pair(f_q: ScanContextDescriptor, f_m: ScanContextDescriptor) -> None:
    if f_q.kind is not f_m.kind or f_q.shape != f_m.shape:
        msg = (
            f"cannot compare {f_q.kind.value} {f_q.shape} with "
            f"{f_m.kind.value} {f_m.shape} descriptors"
        )
        raise ShapeError(msg)


def _column_distance(query: FloatArray, target: FloatArray) -> float:
    norms_q = np.linalg.norm(query, axis=0)
    norms_m = np.linalg.norm(target, axis=0)
    valid = (norms_q > 0) & (norms_m > 0)
    if not valid.any():
        return 1.0
    dots = np.einsum("ij,ij->j", query[:, valid], target[:, valid])
    cosine = dots / (norms_q[valid] * norms_m[valid])
    return float(np.clip(1.0 - cosine, 0.0, 1.0).mean())


def _distances_at(query: FloatArray, target: FloatArray, shifts: npt.ArrayLike) -> FloatArray:
    # Brute-force and reduced searches share this loop so their results agree bit for bit.
    return np.array(
        [_column_distance(np.roll(query, int(n), axis=1), target) for n in np.asarray(shifts)],
    )


def column_cosine_distance(f_q: ScanContextDescriptor, f_m: ScanContextDescriptor) -> float:
    """Mean cosine distance over column pairs where both columns are non-empty.

    Returns 1.0 (farthest) when no column pair has two non-zero columns.

    Raises:
        ShapeError: If kinds or dimensions differ
    """
    _check_pair(f_q, f_m)
    return _column_distance(f_q.matrix, f_m.matrix)


def shift_columns(f: ScanContextDescriptor, n: int) -> ScanContextDescriptor:
    """Circularly shift columns: output column ``j`` is input column ``(j - n) mod n_a``.

    Raises:
        RangeError: Unless ``0 <= n < n_a``
    """
    if not 0 <= n < f.params.n_a:
        msg = f"column shift {n} outside [0, {f.params.n_a})"
        raise RangeError(msg)
    return f.with_matrix(np.roll(f.matrix, n, axis=1))


def brute_force_align(f_q: ScanContextDescriptor, f_m: ScanContextDescriptor) -> AlignedDistance:
    """Minimum distance over every column shift of the query; ties go to the smallest shift."""
    _check_pair(f_q, f_m)
    distances = _distances_at(f_q.matrix, f_m.matrix, np.arange(f_q.params.n_a))
    best = int(np.argmin(distances))
    return AlignedDistance(float(distances[best]), best)


@lru_cache(maxsize=16)
def _roll_index(n: int) -> npt.NDArray[np.intp]:
    # Row s gathers the key rolled by s: out[s, j] = w[(j - s) mod n].
    columns = np.arange(n)
    return (columns[None, :] - columns[:, None]) % n


def _key_values(key: AligningKey | npt.ArrayLike) -> FloatArray:
    if isinstance(key, AligningKey):
        return np.asarray(key.values, dtype=np.float64)
    return np.asarray(key, dtype=np.float64).reshape(-1)


def align_keys(w_q: AligningKey | npt.ArrayLike, w_m: AligningKey | npt.ArrayLike) -> int:
    """Shift minimizing the L2 distance between the rolled query key and the map key.

    Raises:
        ShapeError: If the keys differ in length
    """
    query, target = _key_values(w_q), _key_values(w_m)
    if query.shape != target.shape or query.size == 0:
        msg = f"aligning keys differ in length: {query.size} vs {target.size}"
        raise ShapeError(msg)
    rolled = query[_roll_index(query.size)]
    residuals = np.linalg.norm(rolled - target, axis=1)
    return int(np.argmin(residuals))


def fast_align(
    f_q: ScanContextDescriptor,
    f_m: ScanContextDescriptor,
    half_width: int = 0,
) -> AlignedDistance:
    """Full-descriptor distance searched only around the aligning-key shift.

    ``half_width = n_a // 2`` covers every shift and reproduces
    :func:`brute_force_align` exactly.

    Raises:
        ShapeError: If kinds or dimensions differ
        RangeError: Unless ``0 <= half_width <= n_a // 2``
    """
    _check_pair(f_q, f_m)
    n_a = f_q.params.n_a
    if not 0 <= half_width <= n_a // 2:
        msg = f"half_width {half_width} outside [0, {n_a // 2}]"
        raise RangeError(msg)

    center = align_keys(aligning_key(f_q), aligning_key(f_m))
    shifts = np.unique((center + np.arange(-half_width, half_width + 1)) % n_a)
    distances = _distances_at(f_q.matrix, f_m.matrix, shifts)
    best = int(np.argmin(distances))
    return AlignedDistance(float(distances[best]), int(shifts[best]))


def shift_to_pose(shift: int, params: DescriptorParams) -> SemiMetricPose:
    """Convert a column shift into yaw (Polar) or lateral offset (Cartesian).

    Raises:
        RangeError: Unless ``0 <= shift < n_a``
    """
    if not 0 <= shift < params.n_a:
        msg = f"column shift {shift} outside [0, {params.n_a})"
        raise RangeError(msg)
    if params.kind is DescriptorKind.POLAR:
        return SemiMetricPose(PoseKind.YAW, yaw_deg=wrap_degrees(shift * params.delta_a))
    signed = shift if shift <= params.n_a / 2 else shift - params.n_a
    return SemiMetricPose(PoseKind.LATERAL, lateral_m=signed * params.delta_a)
