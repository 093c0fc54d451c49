#
# Scan Context PP - Point Cloud Model
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
"""Point cloud data model, ingestion and geometric primitives.

Clouds are stored as ``(N, 3)`` float64 arrays in the sensor frame (x forward, y left,
z up, meters). Arrays handed out by this module are read-only so a cloud can be shared
between threads without copying.
"""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
from scipy.spatial.transform import Rotation

from .errors import FormatError, InvalidParamError, ParseError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

# Orthonormality / determinant tolerance for rotation matrices.
ROTATION_TOLERANCE = 1e-9

KITTI_RECORD_BYTES = 16
CSV_FIELDS_WITH_INTENSITY = 4


class Point3(NamedTuple):
    """A single measurement in the sensor frame (meters)."""

    x: float
    y: float
    z: float


def _readonly(array: npt.NDArray[np.float64]) -> FloatArray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of finite 3D points with optional per-point intensity."""

    points: FloatArray = field(default_factory=lambda: np.empty((0, 3)))
    intensity: FloatArray | None = None

    def __post_init__(self) -> None:
        """Validate shapes and finiteness, then freeze the arrays."""
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(points).all():
            msg = "point cloud contains non-finite coordinates"
            raise InvalidParamError(msg)
        object.__setattr__(self, "points", _readonly(points))

        if self.intensity is not None:
            intensity = np.array(self.intensity, dtype=np.float64).reshape(-1)
            if intensity.shape[0] != points.shape[0]:
                msg = (
                    f"intensity length {intensity.shape[0]} does not match "
                    f"point count {points.shape[0]}"
                )
                raise InvalidParamError(msg)
            object.__setattr__(self, "intensity", _readonly(intensity))

    @classmethod
    def from_points(
        cls,
        points: Iterable[Point3 | Sequence[float]],
        intensity: Iterable[float] | None = None,
    ) -> "PointCloud":
        """Build a cloud from an iterable of ``(x, y, z)`` triples."""
        rows = [tuple(p) for p in points]
        array = np.array(rows, dtype=np.float64).reshape(-1, 3)
        values = None if intensity is None else np.fromiter(intensity, dtype=np.float64)
        return cls(points=array, intensity=values)

    def __len__(self) -> int:
        """Return the number of points."""
        return int(self.points.shape[0])

    def point(self, index: int) -> Point3:
        """Return point ``index`` as a :class:`Point3`."""
        x, y, z = self.points[index]
        return Point3(float(x), float(y), float(z))

    @property
    def is_empty(self) -> bool:
        """Whether the cloud has no points."""
        return len(self) == 0


@dataclass(frozen=True)
class RigidTransform:
    """A proper rigid motion ``p' = R p + t``."""

    rotation: FloatArray = field(default_factory=lambda: np.eye(3))
    translation: FloatArray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        """Check that the rotation is orthonormal with determinant +1."""
        rotation = np.array(self.rotation, dtype=np.float64)
        translation = np.array(self.translation, dtype=np.float64).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            msg = "rigid transform needs a 3x3 rotation and a 3-vector translation"
            raise InvalidParamError(msg)
        if not (np.isfinite(rotation).all() and np.isfinite(translation).all()):
            msg = "rigid transform contains non-finite values"
            raise InvalidParamError(msg)
        orthogonality = np.abs(rotation @ rotation.T - np.eye(3)).max()
        determinant = float(np.linalg.det(rotation))
        if orthogonality > ROTATION_TOLERANCE or abs(determinant - 1.0) > ROTATION_TOLERANCE:
            msg = (
                "rotation is not a proper orthonormal matrix "
                f"(|RR^T - I| = {orthogonality:.3g}, det = {determinant:.12g})"
            )
            raise InvalidParamError(msg)
        object.__setattr__(self, "rotation", _readonly(rotation))
        object.__setattr__(self, "translation", _readonly(translation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        """Return the identity transform."""
        return cls()

    @classmethod
    def from_translation(cls, translation: Sequence[float]) -> "RigidTransform":
        """Pure translation in meters."""
        return cls(translation=np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_yaw(
        cls,
        yaw_deg: float,
        translation: Sequence[float] = (0.0, 0.0, 0.0),
    ) -> "RigidTransform":
        """Rotation about +z by ``yaw_deg`` degrees (counter-clockwise seen from above)."""
        theta = np.radians(yaw_deg)
        c, s = np.cos(theta), np.sin(theta)
        rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rotation=rotation, translation=np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_rpy(
        cls,
        roll_deg: float,
        pitch_deg: float,
        yaw_deg: float,
        translation: Sequence[float] = (0.0, 0.0, 0.0),
    ) -> "RigidTransform":
        """Extrinsic x-y-z (roll, pitch, yaw) rotation in degrees."""
        rotation = Rotation.from_euler("xyz", [roll_deg, pitch_deg, yaw_deg], degrees=True)
        return cls(
            rotation=rotation.as_matrix(),
            translation=np.asarray(translation, dtype=np.float64),
        )

    def inverse(self) -> "RigidTransform":
        """Return ``T^-1``."""
        rotation_t = self.rotation.T.copy()
        return RigidTransform(rotation=rotation_t, translation=-(rotation_t @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self * other`` (apply ``other`` first)."""
        return RigidTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def as_matrix(self) -> FloatArray:
        """Homogeneous 4x4 matrix."""
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix


def load_kitti_bin(path: str | Path) -> PointCloud:
    """Load a KITTI velodyne scan (packed little-endian float32 x, y, z, intensity).

    Args:
        path: Path to the ``.bin`` file

    Returns:
        The decoded cloud, intensity retained

    Raises:
        OSError: If the file cannot be read
        FormatError: If the length is not a multiple of 16 bytes or values are non-finite
    """
    data = Path(path).read_bytes()
    if len(data) % KITTI_RECORD_BYTES:
        msg = (
            f"{path}: {len(data)} bytes is not a multiple of the "
            f"{KITTI_RECORD_BYTES}-byte point record"
        )
        raise FormatError(msg)

    records = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    if not np.isfinite(records).all():
        bad = int(np.flatnonzero(~np.isfinite(records).all(axis=1))[0])
        msg = f"{path}: non-finite value in point record {bad}"
        raise FormatError(msg)

    logger.debug("Loaded %d points from %s", records.shape[0], path)
    return PointCloud(points=records[:, :3], intensity=records[:, 3])


def load_csv(path: str | Path) -> PointCloud:
    """Load a text cloud with one ``x,y,z[,i]`` point per line.

    Blank lines and lines starting with ``#`` are skipped. Intensity is kept only when
    every point carries one.

    Raises:
        OSError: If the file cannot be read
        ParseError: On the first malformed line (1-based line number)
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        msg = f"{path}: not valid UTF-8 text"
        raise FormatError(msg) from e

    points: list[tuple[float, float, float]] = []
    intensities: list[float] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [part.strip() for part in line.split(",")]
        if len(fields) not in (3, 4):
            msg = f"expected 3 or 4 comma-separated values, got {len(fields)}"
            raise ParseError(msg, line=line_no, path=path)
        try:
            values = [float(part) for part in fields]
        except ValueError as e:
            msg = f"not a number in {line!r}"
            raise ParseError(msg, line=line_no, path=path) from e
        if not all(np.isfinite(values)):
            msg = f"non-finite value in {line!r}"
            raise ParseError(msg, line=line_no, path=path)
        points.append((values[0], values[1], values[2]))
        if len(values) == CSV_FIELDS_WITH_INTENSITY:
            intensities.append(values[3])

    intensity = np.array(intensities) if points and len(intensities) == len(points) else None
    logger.debug("Loaded %d points from %s", len(points), path)
    return PointCloud(points=np.array(points, dtype=np.float64).reshape(-1, 3), intensity=intensity)


def load_scan(path: str | Path) -> PointCloud:
    """Dispatch on file suffix: ``.bin`` is KITTI binary, anything else is CSV."""
    if Path(path).suffix.lower() == ".bin":
        return load_kitti_bin(path)
    return load_csv(path)


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """Replace the points of every occupied voxel by their centroid.

    Voxels are half-open cells indexed by ``floor(p / leaf)`` per axis, so a point on a
    cell boundary belongs to the higher-index voxel. Output order follows the sorted
    voxel index, which makes the result independent of input order.

    Raises:
        InvalidParamError: If ``leaf`` is not a positive finite number
    """
    if not (np.isfinite(leaf) and leaf > 0):
        msg = f"voxel leaf size must be positive, got {leaf}"
        raise InvalidParamError(msg)
    if cloud.is_empty:
        return cloud

    keys = np.floor(cloud.points / leaf).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    n_voxels = counts.shape[0]

    centroids = np.empty((n_voxels, 3))
    for axis in range(3):
        sums = np.bincount(inverse, weights=cloud.points[:, axis], minlength=n_voxels)
        centroids[:, axis] = sums / counts

    intensity = None
    if cloud.intensity is not None:
        intensity = np.bincount(inverse, weights=cloud.intensity, minlength=n_voxels) / counts

    return PointCloud(points=centroids, intensity=intensity)


def transform(cloud: PointCloud, rigid: RigidTransform) -> PointCloud:
    """Map every point through ``p' = R p + t``, preserving order and intensity."""
    moved = cloud.points @ rigid.rotation.T + rigid.translation
    return PointCloud(points=moved, intensity=cloud.intensity)


def perturb_roll_pitch(
    cloud: PointCloud,
    max_deg: float,
    rng: np.random.Generator,
) -> tuple[PointCloud, RigidTransform]:
    """Pre-rotate a cloud by a random roll and pitch in ``[-max_deg, max_deg]``.

    Returns:
        The perturbed cloud and the transform that was applied
    """
    if not (np.isfinite(max_deg) and max_deg >= 0):
        msg = f"max_deg must be non-negative, got {max_deg}"
        raise InvalidParamError(msg)
    roll, pitch = rng.uniform(-max_deg, max_deg, size=2)
    rigid = RigidTransform.from_rpy(float(roll), float(pitch), 0.0)
    return transform(cloud, rigid), rigid
