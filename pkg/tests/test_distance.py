"""Tests for column cosine distance, alignment and pose conversion."""

import statistics
import time
from collections.abc import Callable

import numpy as np
import pytest

from scan_context_pp.descriptor import (
    DescriptorKind,
    DescriptorParams,
    ScanContextDescriptor,
    aligning_key,
    default_params,
)
from scan_context_pp.distance import (
    PoseKind,
    align_keys,
    brute_force_align,
    column_cosine_distance,
    fast_align,
    shift_columns,
    shift_to_pose,
    wrap_degrees,
)
from scan_context_pp.errors import RangeError, ShapeError

POLAR = default_params("polar")
CART = default_params("cart")

Pair = tuple[ScanContextDescriptor, ScanContextDescriptor]
Aligner = Callable[[ScanContextDescriptor, ScanContextDescriptor], object]


def _random_descriptor(
    rng: np.random.Generator,
    params: DescriptorParams = POLAR,
) -> ScanContextDescriptor:
    occupied = rng.random(params.shape) < 0.3
    return ScanContextDescriptor(rng.uniform(0.0, 7.0, size=params.shape) * occupied, params)


class TestColumnCosineDistance:
    """Test cases for the column-wise cosine distance."""

    def test_self_distance_is_zero(self) -> None:
        """Test that a descriptor is at distance zero from itself."""
        scd = _random_descriptor(np.random.default_rng(0))
        assert column_cosine_distance(scd, scd) == pytest.approx(0.0, abs=1e-12)

    def test_distance_in_unit_interval(self) -> None:
        """Test that random pairs stay within [0, 1]."""
        rng = np.random.default_rng(1)
        for _ in range(200):
            d = column_cosine_distance(_random_descriptor(rng), _random_descriptor(rng))
            assert 0.0 <= d <= 1.0

    def test_all_zero_is_farthest(self) -> None:
        """Test that empty descriptors compare as farthest."""
        empty = ScanContextDescriptor(np.zeros((20, 60)), POLAR)
        assert column_cosine_distance(empty, empty) == 1.0
        full = _random_descriptor(np.random.default_rng(2))
        assert column_cosine_distance(empty, full) == 1.0

    def test_only_shared_columns_count(self) -> None:
        """Test that columns empty on either side are skipped."""
        query = np.zeros((20, 60))
        target = np.zeros((20, 60))
        query[:, 0] = 1.0
        target[:, 0] = 1.0
        query[0, 1] = 5.0
        target[:, 2] = 3.0
        d = column_cosine_distance(
            ScanContextDescriptor(query, POLAR),
            ScanContextDescriptor(target, POLAR),
        )
        assert d == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_columns(self) -> None:
        """Test that orthogonal columns are at distance one."""
        query = np.zeros((20, 60))
        target = np.zeros((20, 60))
        query[0, :] = 1.0
        target[1, :] = 1.0
        d = column_cosine_distance(
            ScanContextDescriptor(query, POLAR),
            ScanContextDescriptor(target, POLAR),
        )
        assert d == pytest.approx(1.0)

    def test_kind_mismatch(self) -> None:
        """Test that Polar and Cartesian descriptors cannot be compared."""
        rng = np.random.default_rng(3)
        with pytest.raises(ShapeError):
            column_cosine_distance(_random_descriptor(rng), _random_descriptor(rng, CART))


class TestShiftColumns:
    """Test cases for circular column shifts."""

    def test_column_moves_right(self) -> None:
        """Test that column j moves to column j + n."""
        matrix = np.zeros((20, 60))
        matrix[:, 59] = 1.0
        shifted = shift_columns(ScanContextDescriptor(matrix, POLAR), 2)
        assert shifted.matrix[:, 1].all()
        assert np.count_nonzero(shifted.matrix) == 20

    @pytest.mark.parametrize("shift", [-1, 60])
    def test_out_of_range(self, shift: int) -> None:
        """Test that shifts outside [0, n_a) are rejected."""
        with pytest.raises(RangeError):
            shift_columns(ScanContextDescriptor(np.zeros((20, 60)), POLAR), shift)


class TestAlignment:
    """Test cases for brute-force and key-guided alignment."""

    def test_brute_force_recovers_shift(self) -> None:
        """Test that brute force finds the shift that was applied."""
        rng = np.random.default_rng(4)
        scd = _random_descriptor(rng)
        for k in (0, 1, 17, 59):
            result = brute_force_align(scd, shift_columns(scd, k))
            assert result.shift == k
            assert result.distance == pytest.approx(0.0, abs=1e-12)

    def test_ties_take_smallest_shift(self) -> None:
        """Test that equal distances resolve to the smallest shift."""
        empty = ScanContextDescriptor(np.zeros((20, 60)), POLAR)
        result = brute_force_align(empty, empty)
        assert result.shift == 0
        assert result.distance == 1.0

    def test_fast_align_full_width_matches_brute_force(self) -> None:
        """Test 1000 random pairs with a half width covering every shift."""
        rng = np.random.default_rng(5)
        for _ in range(1000):
            f_q, f_m = _random_descriptor(rng), _random_descriptor(rng)
            fast = fast_align(f_q, f_m, half_width=30)
            brute = brute_force_align(f_q, f_m)
            assert fast.shift == brute.shift
            assert fast.distance == pytest.approx(brute.distance, abs=1e-12)

    def test_fast_align_narrow_window_on_shifted_copy(self) -> None:
        """Test that the key estimate alone recovers a pure shift."""
        rng = np.random.default_rng(6)
        scd = _random_descriptor(rng)
        result = fast_align(scd, shift_columns(scd, 23), half_width=0)
        assert result.shift == 23
        assert result.distance == pytest.approx(0.0, abs=1e-12)

    def test_fast_align_never_beats_brute_force(self) -> None:
        """Test that a reduced search is an upper bound on the exhaustive minimum."""
        rng = np.random.default_rng(7)
        for _ in range(100):
            f_q, f_m = _random_descriptor(rng), _random_descriptor(rng)
            assert fast_align(f_q, f_m, 3).distance >= brute_force_align(f_q, f_m).distance

    @pytest.mark.parametrize("half_width", [-1, 31])
    def test_half_width_range(self, half_width: int) -> None:
        """Test that the half width must lie in [0, n_a // 2]."""
        scd = _random_descriptor(np.random.default_rng(8))
        with pytest.raises(RangeError):
            fast_align(scd, scd, half_width)

    def test_align_keys_matches_loop(self) -> None:
        """Test the vectorized key alignment against a direct loop over 1000 pairs."""
        rng = np.random.default_rng(9)
        for _ in range(1000):
            w_q, w_m = rng.uniform(0.0, 5.0, size=60), rng.uniform(0.0, 5.0, size=60)
            residuals = [np.linalg.norm(np.roll(w_q, n) - w_m) for n in range(60)]
            assert align_keys(w_q, w_m) == int(np.argmin(residuals))

    def test_align_keys_on_descriptor_keys(self) -> None:
        """Test that aligning keys of a shifted copy give the shift."""
        scd = _random_descriptor(np.random.default_rng(10))
        assert align_keys(aligning_key(scd), aligning_key(shift_columns(scd, 11))) == 11

    def test_align_keys_length_mismatch(self) -> None:
        """Test that keys of different length are rejected."""
        with pytest.raises(ShapeError):
            align_keys(np.zeros(60), np.zeros(40))

    def test_brute_force_symmetric(self) -> None:
        """Test that swapping query and map leaves the minimum distance unchanged."""
        rng = np.random.default_rng(11)
        for _ in range(200):
            f_a, f_b = _random_descriptor(rng), _random_descriptor(rng)
            forward = brute_force_align(f_a, f_b).distance
            backward = brute_force_align(f_b, f_a).distance
            assert abs(forward - backward) <= 1e-12

    @pytest.mark.parametrize("scale", [0.25, 2.0, 3.7])
    def test_shift_scale_invariant(self, scale: float) -> None:
        """Test that scaling one descriptor keeps the chosen shift."""
        rng = np.random.default_rng(12)
        for _ in range(100):
            f_q, f_m = _random_descriptor(rng), _random_descriptor(rng)
            scaled = f_q.with_matrix(f_q.matrix * scale)
            reference = brute_force_align(f_q, f_m)
            result = brute_force_align(scaled, f_m)
            assert result.shift == reference.shift
            assert result.distance == pytest.approx(reference.distance, abs=1e-12)


class TestPose:
    """Test cases for shift to pose conversion."""

    @pytest.mark.parametrize(
        ("shift", "yaw"),
        [(0, 0.0), (2, 12.0), (30, 180.0), (31, -174.0), (58, -12.0)],
    )
    def test_polar_yaw(self, shift: int, yaw: float) -> None:
        """Test that Polar shifts become yaw wrapped into (-180, 180]."""
        pose = shift_to_pose(shift, POLAR)
        assert pose.kind is PoseKind.YAW
        assert pose.yaw_deg == pytest.approx(yaw)
        assert pose.value == pytest.approx(yaw)

    @pytest.mark.parametrize(
        ("shift", "lateral"),
        [(0, 0.0), (3, 6.0), (20, 40.0), (21, -38.0), (37, -6.0)],
    )
    def test_cartesian_lateral(self, shift: int, lateral: float) -> None:
        """Test that Cartesian shifts become signed lateral offsets."""
        pose = shift_to_pose(shift, CART)
        assert pose.kind is PoseKind.LATERAL
        assert pose.lateral_m == pytest.approx(lateral)

    def test_pose_shift_range(self) -> None:
        """Test that an out-of-range shift is rejected."""
        with pytest.raises(RangeError):
            shift_to_pose(60, POLAR)

    @pytest.mark.parametrize(
        ("angle", "wrapped"),
        [
            (0.0, 0.0),
            (180.0, 180.0),
            (-180.0, 180.0),
            (190.0, -170.0),
            (-190.0, 170.0),
            (720.0, 0.0),
        ],
    )
    def test_wrap_degrees(self, angle: float, wrapped: float) -> None:
        """Test wrapping into (-180, 180]."""
        assert wrap_degrees(angle) == pytest.approx(wrapped)


def _median_ms(align: Aligner, pairs: list[Pair]) -> float:
    samples = []
    for _ in range(5):
        started = time.perf_counter()
        for f_q, f_m in pairs:
            align(f_q, f_m)
        samples.append((time.perf_counter() - started) * 1e3)
    return statistics.median(samples)


@pytest.mark.slow
def test_fast_align_scales_better_than_brute_force() -> None:
    """Test that the exhaustive search slows down faster with the column count."""
    ratios = []
    for n_a in (60, 120, 240):
        params = DescriptorParams(DescriptorKind.POLAR, (0.0, 80.0), (0.0, 360.0), 20, n_a)
        rng = np.random.default_rng(n_a)
        pairs = [
            (_random_descriptor(rng, params), _random_descriptor(rng, params)) for _ in range(20)
        ]
        fast = _median_ms(lambda a, b: fast_align(a, b, 0), pairs)
        brute = _median_ms(brute_force_align, pairs)
        assert fast < brute
        ratios.append(brute / fast)
    assert ratios[-1] > ratios[0]
