#
# Scan Context PP - Place Database
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
"""Place database and the three-stage recognition pipeline.

Adding a place stores its descriptor (plus augmented variants under the same place id)
and retrieval key. A query retrieves the nearest retrieval keys from a k-d tree,
pre-aligns each candidate with the aligning key, verifies it with the full descriptor
distance and accepts the best candidate below the threshold.

The tree is rebuilt in batches. Entries added since the last rebuild are pending and
are scanned linearly, so nothing is invisible between rebuilds.
"""

import json
import logging
import struct
import threading
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from scipy.spatial import KDTree

from .codec import decode_descriptor, encode_descriptor
from .descriptor import (
    DEFAULT_ROOT_SHIFTS,
    AligningKey,
    Augmentation,
    AugmentationKind,
    DescriptorKind,
    DescriptorParams,
    RetrievalKey,
    ScanContextDescriptor,
    aligning_key,
    default_params,
    double_flip,
    make_descriptor,
    retrieval_key,
    root_shift_clouds,
)
from .distance import (
    AlignedDistance,
    SemiMetricPose,
    fast_align,
    shift_to_pose,
    wrap_degrees,
)
from .errors import (
    CorruptFileError,
    EmptyDatabaseError,
    FormatError,
    InvalidParamError,
    OrderError,
    VersionError,
)
from .pointcloud import FloatArray, PointCloud, voxel_downsample

logger = logging.getLogger(__name__)

DATABASE_MAGIC = b"SCPPDB\x00\x00"
DATABASE_VERSION = 1
_FILE_HEADER = struct.Struct("<8sII")
_ENTRY_COUNT = struct.Struct("<Q")
_PLACE_ID = struct.Struct("<q")


class AugmentationMode(Enum):
    """Which augmentation ``add_place`` applies."""

    NONE = "none"
    ROOT_SHIFT = "root_shift"
    DOUBLE_FLIP = "double_flip"

    @classmethod
    def for_kind(cls, kind: DescriptorKind, *, enabled: bool) -> "AugmentationMode":
        """The augmentation that fits a descriptor kind (A-PC or A-CC)."""
        if not enabled:
            return cls.NONE
        return cls.ROOT_SHIFT if kind is DescriptorKind.POLAR else cls.DOUBLE_FLIP


class RebuildPolicy(Enum):
    """When pending entries are folded into the k-d tree."""

    COUNT = "count"
    TIME = "time"


@dataclass(frozen=True)
class DatabaseConfig:
    """Recognition parameters.

    ``exclusion_window`` is a count of place ids: entries whose id is within that many
    ids of the query are never returned. ``rebuild_every`` counts inserted places.
    """

    params: DescriptorParams = field(default_factory=lambda: default_params("polar"))
    k: int = 1
    tau: float = 0.15
    exclusion_window: int = 50
    augmentation: AugmentationMode = AugmentationMode.NONE
    half_width: int = 0
    leaf: float = 0.5
    rebuild_policy: RebuildPolicy = RebuildPolicy.COUNT
    rebuild_every: int = 10
    rebuild_interval: float = 10.0
    root_shifts: tuple[float, ...] = DEFAULT_ROOT_SHIFTS

    def __post_init__(self) -> None:
        """Validate ranges and kind/augmentation compatibility."""
        problems: list[str] = []
        if self.k < 1:
            problems.append(f"k must be >= 1, got {self.k}")
        if not 0 < self.tau < 1:
            problems.append(f"tau must be in (0, 1), got {self.tau}")
        if self.exclusion_window < 0:
            problems.append(f"exclusion_window must be >= 0, got {self.exclusion_window}")
        if not 0 <= self.half_width <= self.params.n_a // 2:
            problems.append(f"half_width must be in [0, {self.params.n_a // 2}]")
        if not self.leaf > 0:
            problems.append(f"leaf must be positive, got {self.leaf}")
        if self.rebuild_every < 1:
            problems.append(f"rebuild_every must be >= 1, got {self.rebuild_every}")
        if not self.rebuild_interval > 0:
            problems.append(f"rebuild_interval must be positive, got {self.rebuild_interval}")
        kind = self.params.kind
        if self.augmentation is AugmentationMode.ROOT_SHIFT and kind is not DescriptorKind.POLAR:
            problems.append("root-shift augmentation requires Polar descriptors")
        if (
            self.augmentation is AugmentationMode.DOUBLE_FLIP
            and kind is not DescriptorKind.CARTESIAN
        ):
            problems.append("double-flip augmentation requires Cartesian descriptors")
        if problems:
            raise InvalidParamError("; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly representation (enums by value)."""
        data = asdict(self)
        data["params"]["kind"] = self.params.kind.value
        data["augmentation"] = self.augmentation.value
        data["rebuild_policy"] = self.rebuild_policy.value
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DatabaseConfig":
        """Inverse of :meth:`to_dict`."""
        raw = dict(data)
        params = dict(raw.pop("params"))
        params["kind"] = DescriptorKind(params["kind"])
        params["r_range"] = tuple(params["r_range"])
        params["a_range"] = tuple(params["a_range"])
        return cls(
            params=DescriptorParams(**params),
            augmentation=AugmentationMode(raw.pop("augmentation")),
            rebuild_policy=RebuildPolicy(raw.pop("rebuild_policy")),
            root_shifts=tuple(raw.pop("root_shifts")),
            **raw,
        )


@dataclass(frozen=True)
class PlaceEntry:
    """One indexed descriptor; augmented entries share their original's place id."""

    place_id: int
    descriptor: ScanContextDescriptor
    retrieval_key: RetrievalKey
    aligning_key: AligningKey

    @classmethod
    def from_descriptor(cls, place_id: int, descriptor: ScanContextDescriptor) -> "PlaceEntry":
        """Derive both sub-keys from the descriptor."""
        return cls(place_id, descriptor, retrieval_key(descriptor), aligning_key(descriptor))

    @property
    def augmentation(self) -> Augmentation:
        """Augmentation tag of the descriptor."""
        return self.descriptor.augmentation


@dataclass(frozen=True)
class StageTiming:
    """Per-stage wall time of a query in milliseconds."""

    describe_ms: float = 0.0
    tree_ms: float = 0.0
    align_ms: float = 0.0

    @property
    def total_ms(self) -> float:
        """Sum of all stages."""
        return self.describe_ms + self.tree_ms + self.align_ms


@dataclass(frozen=True)
class Candidate:
    """A retrieval-key neighbor proposed to the verification stage."""

    entry_index: int
    place_id: int
    key_distance: float
    augmentation: Augmentation


@dataclass(frozen=True)
class MatchResult:
    """An accepted recognition."""

    place_id: int
    distance: float
    shift: int
    pose: SemiMetricPose
    augmentation: Augmentation
    candidates: tuple[Candidate, ...] = ()
    timing: StageTiming = field(default_factory=StageTiming)

    matched = True


@dataclass(frozen=True)
class NoMatch:
    """No candidate passed the threshold; ``closest`` is the best rejected one, if any."""

    closest: MatchResult | None = None
    candidates: tuple[Candidate, ...] = ()
    timing: StageTiming = field(default_factory=StageTiming)

    matched = False

    @property
    def distance(self) -> float:
        """Distance of the closest rejected candidate (inf if none was retrieved)."""
        return self.closest.distance if self.closest is not None else float("inf")


QueryResult = MatchResult | NoMatch


@dataclass(frozen=True)
class _IndexSnapshot:
    # Immutable so readers can hold it while a rebuild swaps in a new one.
    tree: KDTree | None = None
    place_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    size: int = 0


@dataclass
class DatabaseStats:
    """Counters reported after indexing and benchmarking."""

    places: int = 0
    original_entries: int = 0
    augmented_entries: int = 0
    rebuilds: int = 0
    rebuild_seconds: float = 0.0


def describe(cloud: PointCloud, config: DatabaseConfig) -> ScanContextDescriptor:
    """Downsample a cloud and build its descriptor with the configured partition."""
    return make_descriptor(voxel_downsample(cloud, config.leaf), config.params)


def build_entries(
    cloud: PointCloud,
    place_id: int,
    config: DatabaseConfig,
    *,
    original: ScanContextDescriptor | None = None,
) -> list[PlaceEntry]:
    """Build the original entry and any augmented entries for one place.

    Pure function of its inputs; ``cmd_index`` fans it out across worker threads.
    ``original`` reuses a descriptor already computed from ``cloud`` with ``config``.
    """
    downsampled: PointCloud | None = None
    if original is None:
        downsampled = voxel_downsample(cloud, config.leaf)
        original = make_descriptor(downsampled, config.params)
    descriptors = [original]
    if config.augmentation is AugmentationMode.ROOT_SHIFT:
        if downsampled is None:
            downsampled = voxel_downsample(cloud, config.leaf)
        shifted = root_shift_clouds(downsampled, config.root_shifts)
        descriptors += [
            make_descriptor(moved, config.params, augmentation=Augmentation.root_shift(offset))
            for moved, offset in zip(shifted, config.root_shifts, strict=True)
        ]
    elif config.augmentation is AugmentationMode.DOUBLE_FLIP:
        descriptors.append(double_flip(original))
    return [PlaceEntry.from_descriptor(place_id, scd) for scd in descriptors]


def _with_siblings(
    candidates: Sequence[Candidate],
    entries: Sequence[PlaceEntry],
    key: FloatArray,
) -> list[Candidate]:
    """Retrieved candidates followed by the other entries of their places.

    Augmented entries can share a retrieval key with their original exactly, so the
    tree alone cannot tell which of them aligns. Entries of one place are contiguous.
    """
    chosen = {candidate.entry_index: candidate for candidate in candidates}
    for candidate in candidates:
        for step in (-1, 1):
            index = candidate.entry_index + step
            while 0 <= index < len(entries) and entries[index].place_id == candidate.place_id:
                if index not in chosen:
                    entry = entries[index]
                    chosen[index] = Candidate(
                        entry_index=index,
                        place_id=entry.place_id,
                        key_distance=float(np.linalg.norm(entry.retrieval_key.values - key)),
                        augmentation=entry.augmentation,
                    )
                index += step
    return list(chosen.values())


def augmented_pose(pose: SemiMetricPose, augmentation: Augmentation) -> SemiMetricPose:
    """Express a pose estimated against an augmented entry in the original map frame.

    A root-shifted entry was seen from a virtual origin ``offset`` meters to the left,
    so that offset is the query's lateral position. A double-flipped entry is the map
    turned by 180 degrees, which also mirrors the lateral estimate.
    """
    if augmentation.kind is AugmentationKind.ROOT_SHIFT:
        return replace(pose, lateral_m=pose.lateral_m + augmentation.offset)
    if augmentation.kind is AugmentationKind.DOUBLE_FLIP:
        return replace(pose, yaw_deg=wrap_degrees(pose.yaw_deg + 180.0), lateral_m=-pose.lateral_m)
    return pose


class PlaceDatabase:
    """Append-only place store with a batch-rebuilt k-d tree over retrieval keys.

    One writer (``add_place``, ``rebuild_index``) and any number of concurrent readers
    (``query``) are supported.
    """

    def __init__(self, config: DatabaseConfig | None = None) -> None:
        """Create an empty database."""
        self.config = config or DatabaseConfig()
        self._entries: list[PlaceEntry] = []
        self._keys: list[FloatArray] = []
        self._snapshot = _IndexSnapshot()
        self._lock = threading.Lock()
        self._last_place_id: int | None = None
        self._places_since_rebuild = 0
        self._last_rebuild = time.monotonic()
        self.stats = DatabaseStats()

    def __len__(self) -> int:
        """Number of entries, originals and augmentations together."""
        return len(self._entries)

    @property
    def entries(self) -> tuple[PlaceEntry, ...]:
        """All entries in insertion order."""
        with self._lock:
            return tuple(self._entries)

    @property
    def pending(self) -> tuple[PlaceEntry, ...]:
        """Entries not yet covered by the k-d tree."""
        with self._lock:
            return tuple(self._entries[self._snapshot.size :])

    def add_place(
        self,
        cloud: PointCloud,
        place_id: int,
        *,
        descriptor: ScanContextDescriptor | None = None,
    ) -> list[PlaceEntry]:
        """Describe a cloud and append it (with augmentations) under ``place_id``.

        ``descriptor`` skips describing the cloud again when the caller already has
        its descriptor, e.g. from querying the same scan.

        Raises:
            OrderError: If ``place_id`` does not exceed every stored id
        """
        self._check_order(place_id)
        entries = build_entries(cloud, place_id, self.config, original=descriptor)
        self.insert_entries(place_id, entries)
        return entries

    def insert_entries(
        self,
        place_id: int,
        entries: Sequence[PlaceEntry],
        *,
        rebuild: bool = True,
    ) -> None:
        """Append prebuilt entries of one place, then rebuild if the policy says so.

        ``rebuild=False`` skips the policy check; bulk loaders rebuild once at the end.

        Raises:
            OrderError: If ``place_id`` does not exceed every stored id or an entry
                carries a different id
        """
        if any(entry.place_id != place_id for entry in entries):
            msg = f"all entries of place {place_id} must carry that place id"
            raise OrderError(msg)
        with self._lock:
            self._check_order(place_id)
            self._append(entries)
            self._last_place_id = place_id
            self._places_since_rebuild += 1
            self.stats.places += 1
        logger.debug("Added place %d (%d entries)", place_id, len(entries))
        if rebuild and self._rebuild_due():
            self.rebuild_index()

    def _check_order(self, place_id: int) -> None:
        if self._last_place_id is not None and place_id <= self._last_place_id:
            msg = f"place id {place_id} is not greater than previous id {self._last_place_id}"
            raise OrderError(msg)

    def _append(self, entries: Sequence[PlaceEntry]) -> None:
        for entry in entries:
            self._entries.append(entry)
            self._keys.append(entry.retrieval_key.values)
            if entry.augmentation.is_original:
                self.stats.original_entries += 1
            else:
                self.stats.augmented_entries += 1

    def _rebuild_due(self) -> bool:
        if self.config.rebuild_policy is RebuildPolicy.TIME:
            return time.monotonic() - self._last_rebuild >= self.config.rebuild_interval
        return self._places_since_rebuild >= self.config.rebuild_every

    def rebuild_index(self) -> None:
        """Rebuild the tree over every entry and clear the pending set."""
        started = time.perf_counter()
        with self._lock:
            size = len(self._entries)
            if size == self._snapshot.size:
                self._places_since_rebuild = 0
                self._last_rebuild = time.monotonic()
                return
            keys = np.vstack(self._keys[:size])
            place_ids = np.fromiter((e.place_id for e in self._entries[:size]), dtype=np.int64)
        tree = KDTree(keys)
        with self._lock:
            self._snapshot = _IndexSnapshot(tree=tree, place_ids=place_ids, size=size)
            self._places_since_rebuild = 0
            self._last_rebuild = time.monotonic()
            elapsed = time.perf_counter() - started
            self.stats.rebuilds += 1
            self.stats.rebuild_seconds += elapsed
        logger.debug("Rebuilt k-d tree over %d entries in %.2f ms", size, elapsed * 1e3)

    def describe(self, cloud: PointCloud) -> ScanContextDescriptor:
        """Descriptor of a cloud under this database's configuration."""
        return describe(cloud, self.config)

    def query(
        self,
        cloud: PointCloud,
        query_id: int | None = None,
        *,
        tau: float | None = None,
    ) -> QueryResult:
        """Recognize the place a cloud was captured at.

        Args:
            cloud: Raw query scan
            query_id: Id of the query in the same sequence; entries within the
                exclusion window of it are skipped. ``None`` disables exclusion.
            tau: Acceptance threshold override, in ``[0, 1]``

        Raises:
            EmptyDatabaseError: If nothing has been added yet
        """
        if not self._entries:
            msg = "cannot query an empty place database"
            raise EmptyDatabaseError(msg)
        started = time.perf_counter()
        descriptor = self.describe(cloud)
        describe_ms = (time.perf_counter() - started) * 1e3
        return self.query_descriptor(descriptor, query_id, tau=tau, describe_ms=describe_ms)

    def query_descriptor(
        self,
        descriptor: ScanContextDescriptor,
        query_id: int | None = None,
        *,
        tau: float | None = None,
        describe_ms: float = 0.0,
    ) -> QueryResult:
        """Run retrieval, pre-alignment and verification for a ready descriptor."""
        threshold = self.config.tau if tau is None else tau
        if not 0 <= threshold <= 1:
            msg = f"tau must be in [0, 1], got {threshold}"
            raise InvalidParamError(msg)
        with self._lock:
            snapshot = self._snapshot
            entries = self._entries[: len(self._entries)]
            pending_keys = self._keys[snapshot.size : len(entries)]
        if not entries:
            msg = "cannot query an empty place database"
            raise EmptyDatabaseError(msg)

        started = time.perf_counter()
        key = retrieval_key(descriptor).values
        candidates = self._retrieve(key, query_id, snapshot, entries, pending_keys)
        tree_ms = (time.perf_counter() - started) * 1e3

        started = time.perf_counter()
        best: tuple[AlignedDistance, Candidate] | None = None
        for candidate in _with_siblings(candidates, entries, key):
            entry = entries[candidate.entry_index]
            aligned = fast_align(descriptor, entry.descriptor, self.config.half_width)
            if best is None or aligned.distance < best[0].distance:
                best = (aligned, candidate)
        align_ms = (time.perf_counter() - started) * 1e3

        timing = StageTiming(describe_ms, tree_ms, align_ms)
        if best is None:
            logger.debug("Query %s: every entry is inside the exclusion window", query_id)
            return NoMatch(candidates=tuple(candidates), timing=timing)

        aligned, winner = best
        pose = augmented_pose(shift_to_pose(aligned.shift, self.config.params), winner.augmentation)
        result = MatchResult(
            place_id=winner.place_id,
            distance=aligned.distance,
            shift=aligned.shift,
            pose=pose,
            augmentation=winner.augmentation,
            candidates=tuple(candidates),
            timing=timing,
        )
        if aligned.distance < threshold:
            logger.debug(
                "Query %s matched place %d (D=%.4f, shift=%d, %s)",
                query_id,
                winner.place_id,
                aligned.distance,
                aligned.shift,
                winner.augmentation,
            )
            return result
        return NoMatch(closest=result, candidates=tuple(candidates), timing=timing)

    def _retrieve(
        self,
        key: FloatArray,
        query_id: int | None,
        snapshot: _IndexSnapshot,
        entries: Sequence[PlaceEntry],
        pending_keys: Sequence[FloatArray],
    ) -> list[Candidate]:
        window = self.config.exclusion_window
        k = self.config.k

        def excluded(place_id: int) -> bool:
            return query_id is not None and abs(place_id - query_id) <= window

        found: list[tuple[float, int]] = []
        if snapshot.tree is not None and snapshot.size:
            n_excluded = 0
            if query_id is not None:
                n_excluded = int((np.abs(snapshot.place_ids - query_id) <= window).sum())
            k_search = min(k + n_excluded, snapshot.size)
            if k_search > n_excluded:
                distances, indices = snapshot.tree.query(key, k=k_search)
                for distance, index in zip(
                    np.atleast_1d(distances),
                    np.atleast_1d(indices),
                    strict=True,
                ):
                    if not excluded(int(snapshot.place_ids[index])):
                        found.append((float(distance), int(index)))

        if pending_keys:
            pending_distances = np.linalg.norm(np.vstack(pending_keys) - key, axis=1)
            for offset, distance in enumerate(pending_distances):
                index = snapshot.size + offset
                if not excluded(entries[index].place_id):
                    found.append((float(distance), index))

        found.sort()
        return [
            Candidate(
                entry_index=index,
                place_id=entries[index].place_id,
                key_distance=distance,
                augmentation=entries[index].augmentation,
            )
            for distance, index in found[:k]
        ]

    def save(self, path: str | Path) -> None:
        """Write the database to ``path`` atomically (temp file, then rename)."""
        target = Path(path)
        with self._lock:
            entries = list(self._entries)
        config_blob = json.dumps(self.config.to_dict(), sort_keys=True).encode("utf-8")
        chunks = [
            _FILE_HEADER.pack(DATABASE_MAGIC, DATABASE_VERSION, len(config_blob)),
            config_blob,
            _ENTRY_COUNT.pack(len(entries)),
        ]
        for entry in entries:
            chunks.append(_PLACE_ID.pack(entry.place_id))
            chunks.append(encode_descriptor(entry.descriptor))
        temporary = target.with_name(target.name + ".tmp")
        temporary.write_bytes(b"".join(chunks))
        temporary.replace(target)
        logger.info("Saved %d entries to %s", len(entries), target)

    @classmethod
    def load(cls, path: str | Path) -> "PlaceDatabase":
        """Read a database written by :meth:`save` and rebuild its index.

        Raises:
            OSError: If the file cannot be read
            VersionError: On a foreign magic number or unsupported version
            CorruptFileError: If the file is truncated or inconsistent
        """
        data = Path(path).read_bytes()
        if len(data) < _FILE_HEADER.size:
            msg = f"{path}: file too short for a database header"
            raise CorruptFileError(msg)
        magic, version, config_size = _FILE_HEADER.unpack_from(data, 0)
        if magic != DATABASE_MAGIC:
            msg = f"{path}: not a scan-context-pp database"
            raise VersionError(msg)
        if version != DATABASE_VERSION:
            msg = f"{path}: unsupported database version {version}"
            raise VersionError(msg)

        offset = _FILE_HEADER.size
        try:
            config_data = json.loads(data[offset : offset + config_size].decode("utf-8"))
            config = DatabaseConfig.from_dict(config_data)
        except (
            UnicodeDecodeError,
            json.JSONDecodeError,
            KeyError,
            TypeError,
            ValueError,
        ) as e:
            msg = f"{path}: unreadable configuration record"
            raise CorruptFileError(msg) from e
        offset += config_size
        if offset + _ENTRY_COUNT.size > len(data):
            msg = f"{path}: truncated before the entry count"
            raise CorruptFileError(msg)
        (count,) = _ENTRY_COUNT.unpack_from(data, offset)
        offset += _ENTRY_COUNT.size

        groups: list[tuple[int, list[PlaceEntry]]] = []
        for _ in range(count):
            if offset + _PLACE_ID.size > len(data):
                msg = f"{path}: truncated inside the entry table"
                raise CorruptFileError(msg)
            (place_id,) = _PLACE_ID.unpack_from(data, offset)
            try:
                record = decode_descriptor(data, offset + _PLACE_ID.size, config.params)
            except FormatError as e:
                msg = f"{path}: {e}"
                raise CorruptFileError(msg) from e
            offset = record.end
            entry = PlaceEntry.from_descriptor(place_id, record.descriptor)
            if groups and groups[-1][0] == place_id:
                groups[-1][1].append(entry)
            else:
                groups.append((place_id, [entry]))
        if offset != len(data):
            msg = f"{path}: {len(data) - offset} trailing bytes after the entry table"
            raise CorruptFileError(msg)

        database = cls(config)
        try:
            for place_id, entries in groups:
                database.insert_entries(place_id, entries, rebuild=False)
        except OrderError as e:
            msg = f"{path}: place ids are not increasing"
            raise CorruptFileError(msg) from e
        database.rebuild_index()
        logger.info("Loaded %d entries (%d places) from %s", len(database), len(groups), path)
        return database
