#
# Scan Context PP - Evaluation Harness
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
"""Ground truth, place-recognition metrics and the benchmark driver.

A revisit is a (query, map) pair closer than the correctness radius and further apart in
the sampled sequence than the exclusion window. Place ids are positions in the
equidistantly sampled sequence, so the database exclusion window and the revisit
window use the same unit.
"""

import logging
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
from rich.progress import Progress
from scipy.spatial import KDTree
from scipy.spatial.transform import Rotation

from .database import DatabaseStats, MatchResult, NoMatch, PlaceDatabase, QueryResult, StageTiming
from .descriptor import DescriptorKind, ScanContextDescriptor
from .distance import wrap_degrees
from .errors import (
    AlignmentError,
    EmptyDatabaseError,
    InvalidParamError,
    ParseError,
    RangeError,
    ShapeError,
)
from .pointcloud import FloatArray, PointCloud, load_scan

if TYPE_CHECKING:
    from .config_loader import RunConfig

logger = logging.getLogger(__name__)

KITTI_POSE_FIELDS = 12
KL_EPSILON = 1e-9
POSE_TOLERANCE = 1e-6
SCAN_SUFFIXES = (".bin", ".csv")

# KITTI ground truth is given for the left camera (x right, y down, z forward).
_CAMERA_TO_SENSOR = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class Pose:
    """Sensor pose in the world frame."""

    rotation: FloatArray
    translation: FloatArray
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        """Validate shapes and orthonormality."""
        rotation = np.array(self.rotation, dtype=np.float64)
        translation = np.array(self.translation, dtype=np.float64).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            msg = "pose needs a 3x3 rotation and a 3-vector translation"
            raise InvalidParamError(msg)
        if np.abs(rotation @ rotation.T - np.eye(3)).max() > POSE_TOLERANCE:
            msg = "pose rotation is not orthonormal"
            raise InvalidParamError(msg)
        rotation.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def from_xy_yaw(
        cls,
        x: float,
        y: float,
        yaw_deg: float = 0.0,
        timestamp: float = 0.0,
    ) -> "Pose":
        """Planar pose in a z-up frame."""
        rotation = Rotation.from_euler("z", yaw_deg, degrees=True).as_matrix()
        return cls(rotation, np.array([x, y, 0.0]), timestamp)

    def relative_to(self, reference: "Pose") -> tuple[FloatArray, FloatArray]:
        """Rotation and translation of this pose expressed in ``reference``'s frame."""
        rotation = reference.rotation.T @ self.rotation
        translation = reference.rotation.T @ (self.translation - reference.translation)
        return rotation, translation


class QueryOutcome(NamedTuple):
    """Best candidate of one query: its distance (inf if none) and place id."""

    distance: float
    match_id: int | None


@dataclass(frozen=True)
class RevisitEvent:
    """A (query, map) revisit with its translational and rotational offsets."""

    query_id: int
    nearest_map_id: int
    translation_m: float
    rotation_deg: float

    def __post_init__(self) -> None:
        """Offsets are magnitudes."""
        if self.translation_m < 0 or self.rotation_deg < 0:
            msg = "revisit offsets must be non-negative"
            raise RangeError(msg)


@dataclass(frozen=True)
class CurveRow:
    """Metrics at one threshold."""

    tau: float
    precision: float
    recall: float
    f1: float
    kld: float
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass(frozen=True)
class EvalCurve:
    """Precision/recall/F1/KL-D rows ordered by increasing threshold."""

    rows: tuple[CurveRow, ...]

    def __len__(self) -> int:
        """Number of thresholds."""
        return len(self.rows)

    def auc(self) -> float:
        """Area under the PR curve, summed as (recall step) x precision."""
        area = 0.0
        previous = 0.0
        for row in self.rows:
            area += (row.recall - previous) * row.precision
            previous = row.recall
        return area

    def best(self) -> CurveRow:
        """Row with maximum F1 (smallest threshold on ties)."""
        if not self.rows:
            msg = "empty curve has no best row"
            raise ShapeError(msg)
        return max(self.rows, key=lambda row: (row.f1, -row.tau))

    @property
    def max_f1(self) -> float:
        """Maximum F1 over thresholds."""
        return self.best().f1


def load_kitti_poses(path: str | Path, times_path: str | Path | None = None) -> list[Pose]:
    """Read KITTI odometry ground truth (row-major 3x4 per line).

    Rotations are snapped to the nearest orthonormal matrix, since the files carry
    only a few significant digits. Timestamps come from ``times_path`` if given,
    otherwise the frame index.

    Raises:
        ParseError: If a line does not hold 12 numbers
    """
    poses: list[Pose] = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            fields = text.split()
            if len(fields) != KITTI_POSE_FIELDS:
                msg = f"expected {KITTI_POSE_FIELDS} values, got {len(fields)}"
                raise ParseError(msg, line=line_no, path=path)
            try:
                matrix = np.array([float(value) for value in fields]).reshape(3, 4)
            except ValueError as e:
                msg = "non-numeric pose value"
                raise ParseError(msg, line=line_no, path=path) from e
            if not np.isfinite(matrix).all():
                msg = "non-finite pose value"
                raise ParseError(msg, line=line_no, path=path)
            rotation = Rotation.from_matrix(matrix[:, :3]).as_matrix()
            poses.append(Pose(rotation, matrix[:, 3], float(len(poses))))

    if times_path is not None:
        times = np.loadtxt(times_path, dtype=np.float64, ndmin=1)
        if len(times) != len(poses):
            msg = f"{times_path}: {len(times)} timestamps for {len(poses)} poses"
            raise AlignmentError(msg)
        poses = [
            Pose(p.rotation, p.translation, float(t))
            for p, t in zip(poses, times, strict=True)
        ]
    logger.debug("Loaded %d poses from %s", len(poses), path)
    return poses


def to_sensor_frame(poses: Sequence[Pose]) -> list[Pose]:
    """Conjugate camera-frame poses into the z-up sensor convention (x forward, y left)."""
    c = _CAMERA_TO_SENSOR
    return [Pose(c @ p.rotation @ c.T, c @ p.translation, p.timestamp) for p in poses]


def equidistant_sample(poses: Sequence[Pose], spacing: float = 1.0) -> list[int]:
    """Greedy sampling: keep a pose once the travel since the last kept one reaches ``spacing``.

    Raises:
        InvalidParamError: If ``spacing`` is not positive
    """
    if not spacing > 0:
        msg = f"spacing must be positive, got {spacing}"
        raise InvalidParamError(msg)
    if not poses:
        return []
    kept = [0]
    travelled = 0.0
    for index in range(1, len(poses)):
        travelled += float(np.linalg.norm(poses[index].translation - poses[index - 1].translation))
        if travelled >= spacing:
            kept.append(index)
            travelled = 0.0
    return kept


def is_revisit(
    poses: Sequence[Pose],
    query_id: int,
    map_id: int,
    radius: float = 8.0,
    window: int = 50,
) -> bool:
    """Whether two places are closer than ``radius`` and more than ``window`` ids apart.

    Raises:
        RangeError: If either id is outside ``poses``
    """
    for place_id in (query_id, map_id):
        if not 0 <= place_id < len(poses):
            msg = f"place id {place_id} outside [0, {len(poses)})"
            raise RangeError(msg)
    gap = float(np.linalg.norm(poses[query_id].translation - poses[map_id].translation))
    return gap < radius and abs(query_id - map_id) > window


def rotation_offset_deg(first: Pose, second: Pose) -> float:
    """Angle of the relative rotation between two poses, in degrees."""
    relative, _ = second.relative_to(first)
    return float(np.degrees(Rotation.from_matrix(relative).magnitude()))


def revisit_event(query_pose: Pose, map_pose: Pose, query_id: int, map_id: int) -> RevisitEvent:
    """Offsets between a query and a map place."""
    return RevisitEvent(
        query_id=query_id,
        nearest_map_id=map_id,
        translation_m=float(np.linalg.norm(query_pose.translation - map_pose.translation)),
        rotation_deg=rotation_offset_deg(map_pose, query_pose),
    )


class _GroundTruth:
    """Revisit lookups for one evaluation, online or against a separate map."""

    def __init__(
        self,
        poses: Sequence[Pose],
        radius: float,
        window: int,
        map_poses: Sequence[Pose] | None,
    ) -> None:
        self.poses = poses
        self.map_poses = map_poses if map_poses is not None else poses
        self.radius = radius
        self.window = window
        self.online = map_poses is None
        self.tree: KDTree | None = None
        if self.map_poses:
            self.tree = KDTree(np.vstack([p.translation for p in self.map_poses]))
        self.nearest: list[int | None] = [self._nearest_revisit(q) for q in range(len(poses))]

    def _eligible(self, query_id: int, map_id: int) -> bool:
        return not self.online or abs(query_id - map_id) > self.window

    def _nearest_revisit(self, query_id: int) -> int | None:
        if self.tree is None:
            return None
        query = self.poses[query_id].translation
        best: tuple[float, int] | None = None
        for map_id in sorted(self.tree.query_ball_point(query, self.radius)):
            if self.online and map_id >= query_id:
                continue
            if not self._eligible(query_id, map_id):
                continue
            gap = float(np.linalg.norm(query - self.map_poses[map_id].translation))
            if gap < self.radius and (best is None or (gap, map_id) < best):
                best = (gap, map_id)
        return None if best is None else best[1]

    def is_correct(self, query_id: int, map_id: int) -> bool:
        if not 0 <= map_id < len(self.map_poses):
            msg = f"matched place id {map_id} outside [0, {len(self.map_poses)})"
            raise RangeError(msg)
        gap = np.linalg.norm(self.poses[query_id].translation - self.map_poses[map_id].translation)
        return bool(gap < self.radius) and self._eligible(query_id, map_id)

    def event(self, query_id: int, map_id: int) -> RevisitEvent:
        return revisit_event(self.poses[query_id], self.map_poses[map_id], query_id, map_id)

    def reference_events(self) -> list[RevisitEvent]:
        return [self.event(q, m) for q, m in enumerate(self.nearest) if m is not None]


def recall_histogram(
    events: Sequence[RevisitEvent],
    grid: tuple[float, float] = (0.5, 10.0),
    extent: tuple[float, float] = (8.0, 180.0),
) -> FloatArray:
    """Normalized 2D histogram of (translation, rotation) offsets.

    Offsets beyond ``extent`` fall into the last bin. No events give an all-zero grid.

    Raises:
        InvalidParamError: If a grid size or extent is not positive
    """
    if not (grid[0] > 0 and grid[1] > 0 and extent[0] > 0 and extent[1] > 0):
        msg = f"histogram grid and extent must be positive, got {grid} over {extent}"
        raise InvalidParamError(msg)
    shape = (math.ceil(extent[0] / grid[0]), math.ceil(extent[1] / grid[1]))
    histogram = np.zeros(shape)
    if not events:
        return histogram
    offsets = np.array([(e.translation_m, e.rotation_deg) for e in events])
    rows = np.minimum((offsets[:, 0] // grid[0]).astype(np.intp), shape[0] - 1)
    cols = np.minimum((offsets[:, 1] // grid[1]).astype(np.intp), shape[1] - 1)
    np.add.at(histogram, (rows, cols), 1.0)
    return histogram / histogram.sum()


def kl_divergence(p_ref: FloatArray, q: FloatArray) -> float:
    """KL(p_ref || q) after adding 1e-9 to every cell of both and renormalizing.

    Raises:
        ShapeError: If the histograms differ in shape
    """
    p_arr = np.asarray(p_ref, dtype=np.float64)
    q_arr = np.asarray(q, dtype=np.float64)
    if p_arr.shape != q_arr.shape:
        msg = f"histogram shapes differ: {p_arr.shape} vs {q_arr.shape}"
        raise ShapeError(msg)
    p_smooth = p_arr + KL_EPSILON
    q_smooth = q_arr + KL_EPSILON
    p_smooth /= p_smooth.sum()
    q_smooth /= q_smooth.sum()
    return max(float(np.sum(p_smooth * np.log(p_smooth / q_smooth))), 0.0)


def pr_curve(
    results: Sequence[QueryOutcome | tuple[float, int | None]],
    poses: Sequence[Pose],
    taus: Sequence[float],
    *,
    radius: float = 8.0,
    window: int = 50,
    map_poses: Sequence[Pose] | None = None,
    grid: tuple[float, float] = (0.5, 10.0),
) -> EvalCurve:
    """Sweep the acceptance threshold over per-query best candidates.

    ``results[i]`` belongs to query ``i`` (pose ``poses[i]``). Online, matches and
    revisits refer to earlier places of ``poses``; with ``map_poses`` they refer to
    the separate map and the window is not applied.

    Raises:
        ShapeError: If there is not exactly one result per pose
    """
    if len(results) != len(poses):
        msg = f"{len(results)} results for {len(poses)} query poses"
        raise ShapeError(msg)
    truth = _GroundTruth(poses, radius, window, map_poses)
    outcomes = [QueryOutcome(*row) for row in results]
    correct = [
        outcome.match_id is not None and truth.is_correct(query_id, outcome.match_id)
        for query_id, outcome in enumerate(outcomes)
    ]
    extent = (radius, 180.0)
    reference = recall_histogram(truth.reference_events(), grid, extent)

    rows: list[CurveRow] = []
    for tau in sorted(float(t) for t in taus):
        tp = fp = fn = 0
        detected: list[RevisitEvent] = []
        for query_id, outcome in enumerate(outcomes):
            accepted = outcome.match_id is not None and outcome.distance < tau
            if accepted and correct[query_id]:
                tp += 1
                detected.append(truth.event(query_id, outcome.match_id))  # type: ignore[arg-type]
            elif accepted:
                fp += 1
            elif truth.nearest[query_id] is not None:
                fn += 1
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        kld = kl_divergence(reference, recall_histogram(detected, grid, extent))
        rows.append(CurveRow(tau, precision, recall, f1, kld, tp, fp, fn))
    return EvalCurve(tuple(rows))


@dataclass(frozen=True)
class MatchRow:
    """Best candidate of one sampled query, judged against ground truth."""

    query_id: int
    match_id: int | None
    distance: float
    shift: int | None
    pose: float | None
    correct: bool
    matched: bool
    yaw_error_deg: float | None = None
    lateral_error_m: float | None = None


@dataclass(frozen=True)
class TimingRow:
    """Per-stage query latency in milliseconds."""

    query_id: int
    describe_ms: float
    tree_ms: float
    align_ms: float

    @property
    def total_ms(self) -> float:
        """Sum of all stages."""
        return self.describe_ms + self.tree_ms + self.align_ms


@dataclass
class Report:
    """Everything a benchmark run produces."""

    curve: EvalCurve
    matches: list[MatchRow]
    timings: list[TimingRow]
    kind: DescriptorKind
    mode: str = "online"
    sampled: int = 0
    stats: DatabaseStats = field(default_factory=DatabaseStats)
    wall_seconds: float = 0.0

    @property
    def auc(self) -> float:
        """Area under the PR curve."""
        return self.curve.auc()

    @property
    def rebuild_share(self) -> float:
        """Fraction of wall time spent rebuilding the k-d tree."""
        return self.stats.rebuild_seconds / self.wall_seconds if self.wall_seconds else 0.0

    def timing_summary(self) -> dict[str, dict[str, float]]:
        """Mean and max of every stage."""
        summary: dict[str, dict[str, float]] = {}
        for stage in ("describe_ms", "tree_ms", "align_ms", "total_ms"):
            values = [getattr(row, stage) for row in self.timings]
            summary[stage] = {
                "mean": float(np.mean(values)) if values else 0.0,
                "max": float(np.max(values)) if values else 0.0,
            }
        return summary

    def pose_error_means(self) -> dict[str, float | None]:
        """Mean absolute yaw and lateral errors over correct accepted matches."""
        scored = [r for r in self.matches if r.matched and r.correct]
        yaw = [r.yaw_error_deg for r in scored if r.yaw_error_deg is not None]
        lateral = [r.lateral_error_m for r in scored if r.lateral_error_m is not None]
        return {
            "yaw_deg": float(np.mean(yaw)) if yaw else None,
            "lateral_m": float(np.mean(lateral)) if lateral else None,
        }


def list_scans(scan_dir: str | Path) -> list[Path]:
    """Scan files of a directory in lexicographic (temporal) order."""
    directory = Path(scan_dir)
    if not directory.is_dir():
        msg = f"scan directory not found: {directory}"
        raise FileNotFoundError(msg)
    return sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in SCAN_SUFFIXES
    )


def _load_sequence(
    scan_dir: str | Path,
    pose_file: str | Path,
    pose_frame: str,
) -> tuple[list[Path], list[Pose]]:
    scans = list_scans(scan_dir)
    poses = load_kitti_poses(pose_file)
    if len(scans) != len(poses):
        msg = f"{len(scans)} scans in {scan_dir} but {len(poses)} poses in {pose_file}"
        raise AlignmentError(msg)
    if pose_frame == "kitti":
        poses = to_sensor_frame(poses)
    return scans, poses


def _pose_errors(
    result: MatchResult,
    query_pose: Pose,
    map_pose: Pose,
    kind: DescriptorKind,
) -> tuple[float | None, float | None]:
    rotation, translation = query_pose.relative_to(map_pose)
    if kind is DescriptorKind.POLAR:
        true_yaw = math.degrees(math.atan2(rotation[1, 0], rotation[0, 0]))
        return abs(wrap_degrees(result.pose.yaw_deg - true_yaw)), None
    return None, abs(result.pose.lateral_m - float(translation[1]))


def _query(
    database: PlaceDatabase,
    cloud: PointCloud,
    query_id: int | None,
) -> tuple[QueryResult, ScanContextDescriptor]:
    started = time.perf_counter()
    descriptor = database.describe(cloud)
    describe_ms = (time.perf_counter() - started) * 1e3
    try:
        result = database.query_descriptor(descriptor, query_id, describe_ms=describe_ms)
    except EmptyDatabaseError:
        result = NoMatch(timing=StageTiming(describe_ms=describe_ms))
    return result, descriptor


def run_benchmark(
    scan_dir: str | Path,
    pose_file: str | Path,
    config: "RunConfig",
    *,
    map_dir: str | Path | None = None,
    map_pose_file: str | Path | None = None,
    show_progress: bool = False,
) -> Report:
    """Stream a sequence through a place database and score it.

    Online mode queries each sampled scan before adding it. Multi-session mode indexes
    ``map_dir`` first and then queries every sampled scan of ``scan_dir`` against it.

    Raises:
        OSError: If inputs cannot be read
        AlignmentError: If a scan directory and its pose file disagree in length
    """
    config.validate()
    db_config = config.to_database_config()
    multi_session = config.mode == "multi-session"
    if multi_session and (map_dir is None or map_pose_file is None):
        msg = "multi-session mode needs a map scan directory and pose file"
        raise InvalidParamError(msg)

    started = time.perf_counter()
    scans, poses = _load_sequence(scan_dir, pose_file, config.pose_frame)
    sampled = equidistant_sample(poses, config.spacing)
    query_poses = [poses[i] for i in sampled]
    logger.info(
        "Sampled %d of %d scans at %.2f m spacing", len(sampled), len(scans), config.spacing
    )

    database = PlaceDatabase(db_config)
    map_poses: list[Pose] | None = None
    if map_dir is not None and map_pose_file is not None and multi_session:
        map_scans, all_map_poses = _load_sequence(map_dir, map_pose_file, config.pose_frame)
        map_sampled = equidistant_sample(all_map_poses, config.spacing)
        map_poses = [all_map_poses[i] for i in map_sampled]
        for place_id, index in enumerate(map_sampled):
            database.add_place(load_scan(map_scans[index]), place_id)
        database.rebuild_index()
        logger.info("Indexed %d map places (%d entries)", len(map_sampled), len(database))

    results: list[QueryResult] = []
    with Progress(transient=True, disable=not show_progress) as progress:
        task = progress.add_task("Querying", total=len(sampled))
        for query_id, index in enumerate(sampled):
            cloud = load_scan(scans[index])
            if multi_session:
                result, _ = _query(database, cloud, None)
            else:
                result, descriptor = _query(database, cloud, query_id)
                database.add_place(cloud, query_id, descriptor=descriptor)
            results.append(result)
            progress.advance(task)
    wall_seconds = time.perf_counter() - started

    outcomes = [_outcome(result) for result in results]
    curve = pr_curve(
        outcomes,
        query_poses,
        config.sweep.taus(),
        radius=config.radius,
        window=config.exclude,
        map_poses=map_poses,
        grid=(config.histogram_grid_m, config.histogram_grid_deg),
    )
    truth_map = map_poses if map_poses is not None else query_poses
    truth = _GroundTruth(query_poses, config.radius, config.exclude, map_poses)
    kind = db_config.params.kind
    matches = [
        _match_row(query_id, result, truth, query_poses, truth_map, kind)
        for query_id, result in enumerate(results)
    ]
    timings = [_timing_row(query_id, result.timing) for query_id, result in enumerate(results)]
    report = Report(
        curve=curve,
        matches=matches,
        timings=timings,
        kind=kind,
        mode=config.mode,
        sampled=len(sampled),
        stats=database.stats,
        wall_seconds=wall_seconds,
    )
    logger.info("AUC %.4f, max F1 %.4f over %d queries", report.auc, curve.max_f1, len(sampled))
    return report


def _best(result: QueryResult) -> MatchResult | None:
    return result if isinstance(result, MatchResult) else result.closest


def _outcome(result: QueryResult) -> QueryOutcome:
    best = _best(result)
    if best is None:
        return QueryOutcome(float("inf"), None)
    return QueryOutcome(best.distance, best.place_id)


def _match_row(
    query_id: int,
    result: QueryResult,
    truth: _GroundTruth,
    query_poses: Sequence[Pose],
    map_poses: Sequence[Pose],
    kind: DescriptorKind,
) -> MatchRow:
    best = _best(result)
    if best is None:
        return MatchRow(query_id, None, float("inf"), None, None, correct=False, matched=False)
    correct = truth.is_correct(query_id, best.place_id)
    yaw_error, lateral_error = (None, None)
    if correct:
        yaw_error, lateral_error = _pose_errors(
            best, query_poses[query_id], map_poses[best.place_id], kind
        )
    return MatchRow(
        query_id=query_id,
        match_id=best.place_id,
        distance=best.distance,
        shift=best.shift,
        pose=best.pose.value,
        correct=correct,
        matched=result.matched,
        yaw_error_deg=yaw_error,
        lateral_error_m=lateral_error,
    )


def _timing_row(query_id: int, timing: StageTiming) -> TimingRow:
    return TimingRow(query_id, timing.describe_ms, timing.tree_ms, timing.align_ms)
