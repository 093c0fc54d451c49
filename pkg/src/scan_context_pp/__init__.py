#
# Scan Context PP - Package
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
"""LiDAR place recognition with bird's-eye-view scan descriptors."""

from .database import DatabaseConfig, MatchResult, NoMatch, PlaceDatabase
from .descriptor import DescriptorKind, DescriptorParams, default_params, make_descriptor
from .distance import brute_force_align, fast_align
from .pointcloud import PointCloud, RigidTransform, load_scan

__all__ = [
    "DatabaseConfig",
    "DescriptorKind",
    "DescriptorParams",
    "MatchResult",
    "NoMatch",
    "PlaceDatabase",
    "PointCloud",
    "RigidTransform",
    "brute_force_align",
    "default_params",
    "fast_align",
    "load_scan",
    "make_descriptor",
]
