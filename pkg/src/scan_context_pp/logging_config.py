#
# Scan Context PP - Logging Configuration
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
"""Rich console logging for the command-line tools."""

import logging

from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.text import Text

PACKAGE_LOGGER = "scan_context_pp"


class ScanContextRichHandler(RichHandler):
    """Rich handler that tags package records with their module name."""

    def __init__(self, **kwargs: object) -> None:
        """Initialize with a stderr console unless one is given."""
        if "console" not in kwargs:
            kwargs["console"] = Console(
                stderr=True,  # stdout carries query JSON
                force_terminal=True,
                width=120,
            )

        kwargs.setdefault("show_time", True)
        kwargs.setdefault("show_level", True)
        kwargs.setdefault("show_path", False)
        kwargs.setdefault("rich_tracebacks", True)
        kwargs.setdefault("tracebacks_show_locals", False)

        super().__init__(**kwargs)  # type: ignore[arg-type]

    def get_level_text(self, record: logging.LogRecord) -> Text:
        """Level name centered in seven characters."""
        level_name = record.levelname
        return Text.styled(
            f"{level_name:^7}",
            f"logging.level.{level_name.lower()}",
        )

    def render_message(self, record: logging.LogRecord, message: str) -> Text:
        """Prefix records from package modules with a highlighted ``[module]`` tag."""
        prefix = PACKAGE_LOGGER + "."
        if record.name.startswith(prefix):
            module = record.name.removeprefix(prefix).split(".")[0]
            return Text.from_markup(f"[bold cyan]\\[{module}][/bold cyan] {escape(message)}")
        return Text(message)


def setup_rich_logging(*, debug: bool = False) -> logging.Logger:
    """Install the Rich handler on the root logger.

    Args:
        debug: Whether to enable debug logging level

    Returns:
        The package logger
    """
    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    level = logging.DEBUG if debug else logging.INFO
    rich_handler = ScanContextRichHandler(level=level, markup=False)
    rich_handler.setFormatter(logging.Formatter(fmt="%(message)s", datefmt="[%X]"))

    root_logger.setLevel(level)
    root_logger.addHandler(rich_handler)

    return logging.getLogger(PACKAGE_LOGGER)
