"""Shared fixtures: synthetic scans placed away from descriptor bin boundaries."""

from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from scan_context_pp.pointcloud import PointCloud, RigidTransform, transform

CloudFactory = Callable[..., PointCloud]


def _polar_points(
    rng: np.random.Generator,
    rows: np.ndarray,
    cols: np.ndarray,
    radial_frac: np.ndarray,
    angular_frac: np.ndarray,
) -> np.ndarray:
    radius = (rows + radial_frac) * 4.0
    azimuth = np.radians((cols + angular_frac) * 6.0)
    z = rng.uniform(-1.5, 5.0, size=len(rows))
    return np.column_stack([radius * np.cos(azimuth), radius * np.sin(azimuth), z])


@pytest.fixture
def make_polar_cloud() -> CloudFactory:
    """Dense random cloud with every point at least 10% of a bin away from its edges."""

    def _make(rng: np.random.Generator, n_points: int = 500) -> PointCloud:
        rows = rng.integers(0, 20, size=n_points)
        cols = rng.integers(0, 60, size=n_points)
        radial = rng.uniform(0.1, 0.9, size=n_points)
        angular = rng.uniform(0.1, 0.9, size=n_points)
        return PointCloud.from_points(_polar_points(rng, rows, cols, radial, angular))

    return _make


@pytest.fixture
def make_place() -> CloudFactory:
    """Sparse scan with one point per occupied Polar bin, all farther than 10 m out.

    Points are more than a voxel apart, so 0.5 m downsampling leaves them untouched and
    a yaw by a multiple of 6 degrees reproduces the column-shifted descriptor exactly.
    """

    def _make(rng: np.random.Generator, n_bins: int = 300) -> PointCloud:
        flat = rng.choice(np.arange(2 * 60, 20 * 60), size=n_bins, replace=False)
        rows, cols = np.divmod(flat, 60)
        half = np.full(n_bins, 0.5)
        return PointCloud.from_points(_polar_points(rng, rows, cols, half, half))

    return _make


@pytest.fixture
def make_cart_cloud() -> CloudFactory:
    """Random cloud inside the Cartesian partition, keeping ``margin`` columns empty per side."""

    def _make(rng: np.random.Generator, n_points: int = 500, margin: int = 5) -> PointCloud:
        rows = rng.integers(0, 40, size=n_points)
        cols = rng.integers(margin, 40 - margin, size=n_points)
        x = -100.0 + (rows + rng.uniform(0.1, 0.9, size=n_points)) * 5.0
        y = -40.0 + (cols + rng.uniform(0.1, 0.9, size=n_points)) * 2.0
        z = rng.uniform(-1.5, 5.0, size=n_points)
        return PointCloud.from_points(np.column_stack([x, y, z]))

    return _make


def _kitti_line(x: float, yaw_deg: float) -> str:
    c, s = np.cos(np.radians(yaw_deg)), np.sin(np.radians(yaw_deg))
    values = [c, -s, 0.0, x, s, c, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
    return " ".join(f"{v:.9e}" for v in values)


def _write_kitti_scan(path: Path, cloud: PointCloud) -> None:
    records = np.column_stack([cloud.points, np.zeros(len(cloud))]).astype("<f4")
    path.write_bytes(records.tobytes())


@pytest.fixture
def sequence(tmp_path: Path, make_place: CloudFactory) -> tuple[Path, Path]:
    """Ten scans: five places 10 m apart, then the same places revisited with a 12 degree yaw.

    Poses are in the sensor frame (z up). The revisits are the stored scans rotated by
    -12 degrees, which is what a sensor yawed by +12 degrees observes.
    """
    rng = np.random.default_rng(77)
    places = [make_place(rng) for _ in range(5)]
    revisits = [transform(p, RigidTransform.from_yaw(-12.0)) for p in places]
    scan_dir = tmp_path / "velodyne"
    scan_dir.mkdir()
    for index, cloud in enumerate(places + revisits):
        _write_kitti_scan(scan_dir / f"{index:06d}.bin", cloud)
    lines = [_kitti_line(10.0 * i, 0.0) for i in range(5)]
    lines += [_kitti_line(10.0 * i, 12.0) for i in range(5)]
    pose_file = tmp_path / "poses.txt"
    pose_file.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return scan_dir, pose_file
