#
# Scan Context PP - Config Loader
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
"""Run configuration for the command-line tools.

Configuration files are flat ``key = value`` text with ``#`` comments. Values may
reference environment variables as ``${VAR}`` or ``${VAR:default}``. Settings resolve
in this order, highest first: command-line flag, configuration file, environment
(``SC_THREADS``), built-in default.
"""

import logging
import os
import re
from collections.abc import Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .database import AugmentationMode, DatabaseConfig, RebuildPolicy
from .descriptor import DescriptorKind, DescriptorParams, default_params
from .errors import InvalidParamError, ParseError

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "SC_THREADS"
DEFAULT_TAU = 0.15
_TRUE_WORDS = frozenset({"on", "true", "yes", "1"})
_FALSE_WORDS = frozenset({"off", "false", "no", "0"})

RUN_CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"type": "string", "enum": ["polar", "cart"]},
        "augment": {"type": "boolean"},
        "tau": {"type": "number", "minimum": 0, "maximum": 1},
        "k": {"type": "integer", "minimum": 1},
        "half_width": {"type": "integer", "minimum": 0},
        "exclude": {"type": "integer", "minimum": 0},
        "rebuild_every": {"type": "integer", "minimum": 1},
        "rebuild_policy": {"type": "string", "enum": ["count", "time"]},
        "rebuild_interval": {"type": "number", "exclusiveMinimum": 0},
        "leaf": {"type": "number", "exclusiveMinimum": 0},
        "spacing": {"type": "number", "exclusiveMinimum": 0},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "tau_min": {"type": "number", "minimum": 0, "maximum": 1},
        "tau_max": {"type": "number", "minimum": 0, "maximum": 1},
        "tau_steps": {"type": "integer", "minimum": 1},
        "n_r": {"type": "integer", "minimum": 1},
        "n_a": {"type": "integer", "minimum": 1},
        "r_min": {"type": "number"},
        "r_max": {"type": "number"},
        "a_min": {"type": "number"},
        "a_max": {"type": "number"},
        "height_offset": {"type": "number"},
        "threads": {"type": "integer", "minimum": 1},
        "mode": {"type": "string", "enum": ["online", "multi-session"]},
        "pose_frame": {"type": "string", "enum": ["kitti", "sensor"]},
        "histogram_grid_m": {"type": "number", "exclusiveMinimum": 0},
        "histogram_grid_deg": {"type": "number", "exclusiveMinimum": 0},
    },
}

DESCRIPTOR_KEYS = ("n_r", "n_a", "r_min", "r_max", "a_min", "a_max", "height_offset")
SWEEP_KEYS = ("tau_min", "tau_max", "tau_steps")


def expand_env_vars(value: object) -> object:
    """Recursively expand ``${VAR}`` and ``${VAR:default}`` in configuration values.

    Args:
        value: The configuration value to expand (can be str, dict, list, or other)

    Returns:
        The value with environment variables expanded
    """
    if isinstance(value, str):
        env_pattern = r"\$\{([^}:]+)(?::([^}]*))?\}"

        def replace_env_var(match: re.Match[str]) -> str:
            var_name = match.group(1)
            default_value = match.group(2) if match.group(2) is not None else ""
            env_value = os.getenv(var_name, default_value)

            if env_value == "" and match.group(2) is None:
                logger.warning(
                    "Environment variable '%s' not found and no default provided",
                    var_name,
                )

            return env_value

        return re.sub(env_pattern, replace_env_var, value)

    if isinstance(value, dict):
        return {k: expand_env_vars(v) for k, v in value.items()}

    if isinstance(value, list):
        return [expand_env_vars(item) for item in value]

    return value


@dataclass
class DescriptorOverrides:
    """Partition settings that replace the reference partition of the chosen kind."""

    n_r: int | None = None
    n_a: int | None = None
    r_min: float | None = None
    r_max: float | None = None
    a_min: float | None = None
    a_max: float | None = None
    height_offset: float | None = None

    def apply(self, params: DescriptorParams) -> DescriptorParams:
        """Return ``params`` with every set override applied (validated)."""
        r_min, r_max = params.r_range
        a_min, a_max = params.a_range
        return replace(
            params,
            n_r=self.n_r if self.n_r is not None else params.n_r,
            n_a=self.n_a if self.n_a is not None else params.n_a,
            r_range=(
                self.r_min if self.r_min is not None else r_min,
                self.r_max if self.r_max is not None else r_max,
            ),
            a_range=(
                self.a_min if self.a_min is not None else a_min,
                self.a_max if self.a_max is not None else a_max,
            ),
            height_offset=(
                self.height_offset if self.height_offset is not None else params.height_offset
            ),
        )


@dataclass
class SweepConfig:
    """Acceptance thresholds swept for the PR curve."""

    tau_min: float = 0.0
    tau_max: float = 1.0
    tau_steps: int = 101

    def taus(self) -> list[float]:
        """Evenly spaced thresholds from ``tau_min`` to ``tau_max`` inclusive."""
        return [float(t) for t in np.linspace(self.tau_min, self.tau_max, self.tau_steps)]


def _default_threads() -> int:
    return os.cpu_count() or 1


@dataclass
class RunConfig:
    """Everything a ``scpp`` subcommand needs, after precedence resolution."""

    kind: str = "polar"
    augment: bool = False
    tau: float = DEFAULT_TAU
    k: int = 1
    half_width: int = 0
    exclude: int = 50
    rebuild_every: int = 10
    rebuild_policy: str = "count"
    rebuild_interval: float = 10.0
    leaf: float = 0.5
    spacing: float = 1.0
    radius: float = 8.0
    threads: int = field(default_factory=_default_threads)
    mode: str = "online"
    pose_frame: str = "kitti"
    histogram_grid_m: float = 0.5
    histogram_grid_deg: float = 10.0
    descriptor: DescriptorOverrides | None = None
    sweep: SweepConfig | None = None
    explicit: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        """Initialize nested sections."""
        if self.descriptor is None:
            self.descriptor = DescriptorOverrides()
        if self.sweep is None:
            self.sweep = SweepConfig()

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "RunConfig":
        """Build from validated flat key/value settings; the keys become ``explicit``."""
        top = {f.name for f in fields(cls)} - {"descriptor", "sweep", "explicit"}
        return cls(
            **{key: value for key, value in values.items() if key in top},
            descriptor=DescriptorOverrides(
                **{key: values[key] for key in DESCRIPTOR_KEYS if key in values},
            ),
            sweep=SweepConfig(**{key: values[key] for key in SWEEP_KEYS if key in values}),
            explicit=frozenset(values),
        )

    def descriptor_params(self) -> DescriptorParams:
        """Reference partition of ``kind`` with overrides applied."""
        assert self.descriptor is not None  # noqa: S101
        return self.descriptor.apply(default_params(self.kind))

    def to_database_config(self) -> DatabaseConfig:
        """Database settings; a threshold of exactly 0 or 1 is passed per query instead."""
        params = self.descriptor_params()
        return DatabaseConfig(
            params=params,
            k=self.k,
            tau=self.tau if 0 < self.tau < 1 else DEFAULT_TAU,
            exclusion_window=self.exclude,
            augmentation=AugmentationMode.for_kind(params.kind, enabled=self.augment),
            half_width=self.half_width,
            leaf=self.leaf,
            rebuild_policy=RebuildPolicy(self.rebuild_policy),
            rebuild_every=self.rebuild_every,
            rebuild_interval=self.rebuild_interval,
        )

    def validate(self) -> None:
        """Check cross-field invariants before any work starts.

        Raises:
            InvalidParamError: If any setting is out of range or inconsistent
        """
        validate_run_config(self.as_flat_dict())
        assert self.sweep is not None  # noqa: S101
        if self.sweep.tau_min > self.sweep.tau_max:
            msg = f"tau_min {self.sweep.tau_min} exceeds tau_max {self.sweep.tau_max}"
            raise InvalidParamError(msg)
        self.to_database_config()

    def as_flat_dict(self) -> dict[str, Any]:
        """Flat key/value view matching the configuration file keys."""
        assert self.descriptor is not None  # noqa: S101
        assert self.sweep is not None  # noqa: S101
        flat: dict[str, Any] = {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name not in {"descriptor", "sweep", "explicit"}
        }
        for key in DESCRIPTOR_KEYS:
            value = getattr(self.descriptor, key)
            if value is not None:
                flat[key] = value
        for key in SWEEP_KEYS:
            flat[key] = getattr(self.sweep, key)
        return flat


def validate_run_config(config_data: Mapping[str, Any]) -> None:
    """Validate flat settings against the configuration schema.

    Raises:
        InvalidParamError: If the settings are invalid
    """
    try:
        jsonschema.validate(dict(config_data), RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        location = ".".join(str(part) for part in e.absolute_path)
        msg = f"Invalid configuration{f' ({location})' if location else ''}: {e.message}"
        raise InvalidParamError(msg) from e


def coerce_value(key: str, raw: str) -> Any:  # noqa: ANN401
    """Convert a raw text value to the type the schema declares for ``key``.

    Raises:
        ValueError: If the text is not a valid value of that type
        KeyError: If ``key`` is not a known setting
    """
    expected = RUN_CONFIG_SCHEMA["properties"][key]["type"]
    text = raw.strip()
    if expected == "integer":
        return int(text)
    if expected == "number":
        return float(text)
    if expected == "boolean":
        word = text.lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
        msg = f"expected on/off, got {raw!r}"
        raise ValueError(msg)
    if key == "kind":
        return "polar" if DescriptorKind.parse(text) is DescriptorKind.POLAR else "cart"
    return text


def parse_config_text(text: str, path: str | Path | None = None) -> dict[str, Any]:
    """Parse ``key = value`` lines into typed settings (not yet schema-validated).

    Raises:
        ParseError: On a malformed line, an unknown key or an unconvertible value
    """
    values: dict[str, Any] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, raw = stripped.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            msg = f"expected 'key = value', got {stripped!r}"
            raise ParseError(msg, line=line_no, path=path)
        if key not in RUN_CONFIG_SCHEMA["properties"]:
            msg = f"unknown setting {key!r}"
            raise ParseError(msg, line=line_no, path=path)
        expanded = expand_env_vars(raw.split(" #", 1)[0])
        try:
            values[key] = coerce_value(key, str(expanded))
        except (ValueError, InvalidParamError) as e:
            msg = f"invalid value for {key}: {e}"
            raise ParseError(msg, line=line_no, path=path) from e
    return values


def load_run_config_from_file(config_file_path: str | Path) -> dict[str, Any]:
    """Load and validate a configuration file.

    Args:
        config_file_path: Path to the ``key = value`` file

    Returns:
        The typed settings found in the file

    Raises:
        FileNotFoundError: If the config file is not found
        ParseError: If a line cannot be parsed
        InvalidParamError: If the settings fail validation
    """
    logger.info("Loading run configuration from: %s", config_file_path)
    try:
        text = Path(config_file_path).read_text(encoding="utf-8")
    except FileNotFoundError:
        logger.debug("Configuration file not found: %s", config_file_path)
        raise

    values = parse_config_text(text, config_file_path)
    validate_run_config(values)
    logger.debug("Configuration %s sets: %s", config_file_path, ", ".join(sorted(values)))
    return values


def build_run_config(
    cli_values: Mapping[str, Any] | None = None,
    config_file_path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Resolve settings by precedence: CLI flag, config file, environment, default.

    Args:
        cli_values: Settings given on the command line (``None`` values are ignored)
        config_file_path: Optional configuration file
        env: Environment to read ``SC_THREADS`` from (defaults to ``os.environ``)

    Returns:
        A validated RunConfig
    """
    environment = os.environ if env is None else env
    values: dict[str, Any] = {}

    threads_text = environment.get(THREADS_ENV_VAR)
    if threads_text:
        try:
            values["threads"] = int(threads_text)
        except ValueError as e:
            msg = f"{THREADS_ENV_VAR} must be an integer, got {threads_text!r}"
            raise InvalidParamError(msg) from e

    if config_file_path is not None:
        values.update(load_run_config_from_file(config_file_path))

    values.update({key: value for key, value in (cli_values or {}).items() if value is not None})
    validate_run_config(values)
    config = RunConfig.from_mapping(values)
    config.validate()
    return config


def worker_count(config: RunConfig, env: Mapping[str, str] | None = None) -> int:
    """Threads for descriptor fan-out, capped by ``SC_THREADS`` when it is set."""
    environment = os.environ if env is None else env
    cap_text = environment.get(THREADS_ENV_VAR)
    cap = int(cap_text) if cap_text and cap_text.isdigit() and int(cap_text) > 0 else config.threads
    return max(1, min(config.threads, cap))
