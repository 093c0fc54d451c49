#
# Scan Context PP - Errors
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
"""Exception hierarchy shared by every scan-context-pp module.

Plain I/O failures surface as the builtin ``OSError`` family. Everything the library
decides to reject is a subclass of :class:`ScanContextError` so callers (and the CLI's
exit-code mapping) can catch by category.
"""

from pathlib import Path


class ScanContextError(Exception):
    """Base class for all library errors."""


class InvalidParamError(ScanContextError, ValueError):
    """A parameter violates its documented range or invariant."""


class FormatError(ScanContextError, ValueError):
    """Input bytes or text do not follow the expected format."""


class ParseError(FormatError):
    """A text input could not be parsed at a specific line."""

    def __init__(self, message: str, *, line: int, path: str | Path | None = None) -> None:
        """Initialize the parse error.

        Args:
            message: Human readable description of the problem
            line: 1-based line number of the offending line
            path: Optional source file
        """
        self.line = line
        self.path = str(path) if path is not None else None
        location = f"{self.path}:{line}" if self.path else f"line {line}"
        super().__init__(f"{location}: {message}")


class VersionError(FormatError):
    """A persisted file has an unknown magic number or version."""


class CorruptFileError(ScanContextError, OSError):
    """A persisted file ended early or is internally inconsistent."""


class KindError(ScanContextError, ValueError):
    """An operation was applied to the wrong descriptor kind."""


class ShapeError(ScanContextError, ValueError):
    """Two arrays that must agree in shape do not."""


class RangeError(ScanContextError, ValueError):
    """An index-like argument is outside its valid range."""


class OrderError(ScanContextError, ValueError):
    """Place identifiers were not strictly increasing."""


class EmptyDatabaseError(ScanContextError, LookupError):
    """A query was issued against a database with no entries."""


class AlignmentError(ScanContextError, ValueError):
    """Scan and pose sequences do not line up."""
