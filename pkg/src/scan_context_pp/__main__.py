#
# Scan Context PP - Main Entry Point
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
"""The entry point for the ``scpp`` command.

Two ways to run the application:
1. Run the application as a module `uv run -m scan_context_pp`
2. Run the application as a package `uv run scpp`

Exit codes: 0 success, 2 input/output or file format errors, 3 invalid parameters or
input sets, 4 scan/pose count mismatch.
"""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, NoReturn

import jsonschema

from .codec import write_descriptor_binary, write_descriptor_csv
from .config_loader import RunConfig, build_run_config, worker_count
from .database import MatchResult, PlaceDatabase, PlaceEntry, QueryResult, build_entries
from .descriptor import DescriptorKind, aligning_key, retrieval_key
from .errors import (
    AlignmentError,
    EmptyDatabaseError,
    FormatError,
    InvalidParamError,
    KindError,
    OrderError,
    RangeError,
    ShapeError,
)
from .evaluation import list_scans, run_benchmark
from .logging_config import setup_rich_logging
from .pointcloud import load_scan
from .report import render_summary, write_report

PROG = "scpp"
EXIT_OK = 0
EXIT_IO = 2
EXIT_PARAM = 3
EXIT_ALIGNMENT = 4

# Flag destinations that map onto RunConfig keys.
_CONFIG_FLAGS = (
    "kind",
    "augment",
    "tau",
    "k",
    "half_width",
    "spacing",
    "radius",
    "exclude",
    "threads",
    "mode",
    "tau_steps",
)


class _ScppArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors are one stderr line and exit code 3."""

    def error(self, message: str) -> NoReturn:
        """Report a usage error."""
        sys.stderr.write(f"{PROG}: error: {message}\n")
        sys.exit(EXIT_PARAM)


def _package_version() -> str:
    try:
        return version("scan-context-pp")
    except PackageNotFoundError:
        version_file = Path(__file__).parent.parent.parent / "VERSION"
        if version_file.exists():
            return version_file.read_text(encoding="utf-8").strip()
        return "unknown"


def _setup_argument_parser() -> argparse.ArgumentParser:
    """Set up and return the argument parser for all subcommands."""
    parser = _ScppArgumentParser(
        prog=PROG,
        description="Scan Context++ place recognition: descriptors, indexing and evaluation.",
        epilog=(
            "Examples:\n"
            "  scpp describe 000000.bin --out descriptors/\n"
            "  scpp index velodyne/ --out map.scdb --augment on\n"
            "  scpp query map.scdb 004500.bin --tau 0.2\n"
            "  scpp eval velodyne/ poses/00.txt --out results/ --config pc.conf\n"
        ),
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {_package_version()}",
        help="Show the version and exit",
    )
    _add_arguments_to_parser(parser)
    return parser


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags shared by every subcommand; unset flags leave the config file in charge."""
    group = parser.add_argument_group("recognition options")
    group.add_argument("--config", default=None, metavar="FILE_PATH", help="key = value file")
    group.add_argument("--kind", choices=["polar", "cart"], default=None, help="Descriptor kind")
    group.add_argument(
        "--augment",
        choices=["off", "on"],
        default=None,
        help="Root shifting (polar) or double flip (cart)",
    )
    group.add_argument("--tau", type=float, default=None, help="Acceptance threshold")
    group.add_argument("--k", type=int, default=None, help="Retrieval candidates")
    group.add_argument("--half-width", type=int, default=None, help="Shift search half-width")
    group.add_argument("--spacing", type=float, default=None, help="Sampling spacing (m)")
    group.add_argument("--radius", type=float, default=None, help="Correctness radius (m)")
    group.add_argument("--exclude", type=int, default=None, help="Exclusion window (places)")
    group.add_argument("--threads", type=int, default=None, help="Descriptor worker threads")
    group.add_argument(
        "--debug",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="Enable debug mode with detailed logging output.",
    )


def _add_arguments_to_parser(parser: argparse.ArgumentParser) -> None:
    """Add the subcommands and their arguments."""
    common = argparse.ArgumentParser(add_help=False)
    _add_common_arguments(common)
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    describe = subparsers.add_parser(
        "describe",
        parents=[common],
        help="Write the descriptor and sub-keys of one scan",
    )
    describe.add_argument("scan", help="Scan file (.bin or .csv)")
    describe.add_argument("--out", default=".", help="Output directory (default: .)")
    describe.set_defaults(handler=cmd_describe)

    index = subparsers.add_parser("index", parents=[common], help="Build a place database")
    index.add_argument("scan_dir", help="Directory of scans in temporal (lexicographic) order")
    index.add_argument("--out", required=True, help="Database file to write")
    index.set_defaults(handler=cmd_index)

    query = subparsers.add_parser("query", parents=[common], help="Recognize one scan")
    query.add_argument("database", help="Database file written by 'index'")
    query.add_argument("scan", help="Scan file (.bin or .csv)")
    query.add_argument(
        "--query-id",
        type=int,
        default=None,
        help="Place id of the query, enabling the exclusion window",
    )
    query.set_defaults(handler=cmd_query)

    evaluate = subparsers.add_parser("eval", parents=[common], help="Run a benchmark")
    evaluate.add_argument("scan_dir", help="Directory of scans")
    evaluate.add_argument("poses", help="KITTI pose file aligned with the scans")
    evaluate.add_argument("--out", default="results", help="Report directory")
    evaluate.add_argument("--mode", choices=["online", "multi-session"], default=None)
    evaluate.add_argument("--tau-steps", type=int, default=None, help="Thresholds swept")
    evaluate.add_argument("--map-dir", default=None, help="Map scans (multi-session)")
    evaluate.add_argument("--map-poses", default=None, help="Map poses (multi-session)")
    evaluate.set_defaults(handler=cmd_eval)


def _setup_logging(*, debug: bool) -> logging.Logger:
    """Set up Rich-based logging configuration and return the logger."""
    return setup_rich_logging(debug=debug)


def _run_config(args: argparse.Namespace) -> RunConfig:
    cli_values: dict[str, Any] = {
        name: getattr(args, name) for name in _CONFIG_FLAGS if hasattr(args, name)
    }
    if cli_values.get("augment") is not None:
        cli_values["augment"] = cli_values["augment"] == "on"
    return build_run_config(cli_values, args.config)


def cmd_describe(args: argparse.Namespace, config: RunConfig, logger: logging.Logger) -> int:
    """Write ``<stem>.scd.csv``, ``<stem>.scd.bin`` and ``<stem>.keys.json`` for one scan."""
    database_config = config.to_database_config()
    scan_path = Path(args.scan)
    descriptor = PlaceDatabase(database_config).describe(load_scan(scan_path))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = scan_path.stem
    write_descriptor_csv(out_dir / f"{stem}.scd.csv", descriptor)
    write_descriptor_binary(out_dir / f"{stem}.scd.bin", descriptor)
    params = asdict(descriptor.params)
    params["kind"] = descriptor.kind.value
    keys = {
        "params": params,
        "retrieval_key": retrieval_key(descriptor).values.tolist(),
        "aligning_key": aligning_key(descriptor).values.tolist(),
    }
    (out_dir / f"{stem}.keys.json").write_text(json.dumps(keys, indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote descriptor files for %s to %s", scan_path.name, out_dir)

    n_r, n_a = descriptor.shape
    sys.stdout.write(f"{n_r}x{n_a}\n")
    return EXIT_OK


def _describe_place(path: Path, place_id: int, config: RunConfig) -> list[PlaceEntry]:
    return build_entries(load_scan(path), place_id, config.to_database_config())


def cmd_index(args: argparse.Namespace, config: RunConfig, logger: logging.Logger) -> int:
    """Describe every scan of a directory (fanned out over threads) and save the database."""
    scans = list_scans(args.scan_dir)
    if not scans:
        msg = f"no .bin or .csv scans in {args.scan_dir}"
        raise InvalidParamError(msg)

    database = PlaceDatabase(config.to_database_config())
    workers = worker_count(config)
    logger.info("Describing %d scans with %d worker threads", len(scans), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        described = pool.map(
            _describe_place,
            scans,
            range(len(scans)),
            [config] * len(scans),
        )
        for place_id, entries in enumerate(described):
            database.insert_entries(place_id, entries)
    database.rebuild_index()
    database.save(args.out)

    stats = database.stats
    logger.info(
        "Indexed %d places: %d entries (%d original, %d augmented)",
        stats.places,
        len(database),
        stats.original_entries,
        stats.augmented_entries,
    )
    return EXIT_OK


def _result_json(result: QueryResult, kind: DescriptorKind) -> dict[str, Any]:
    best = result if isinstance(result, MatchResult) else result.closest
    pose_key = "pose_deg" if kind is DescriptorKind.POLAR else "pose_m"
    if best is None:
        return {
            "matched": False,
            "place_id": None,
            "distance": None,
            "shift": None,
            pose_key: None,
        }
    return {
        "matched": result.matched,
        "place_id": best.place_id,
        "distance": best.distance,
        "shift": best.shift,
        pose_key: best.pose.value,
        "yaw_deg": best.pose.yaw_deg,
        "lateral_m": best.pose.lateral_m,
        "augmentation": str(best.augmentation),
    }


def cmd_query(args: argparse.Namespace, config: RunConfig, logger: logging.Logger) -> int:
    """Print the recognition result of one scan as JSON on stdout."""
    database = PlaceDatabase.load(args.database)
    overrides = {"k": "k", "half_width": "half_width", "exclude": "exclusion_window"}
    changes = {
        target: getattr(config, source)
        for source, target in overrides.items()
        if source in config.explicit
    }
    if changes:
        database.config = replace(database.config, **changes)
        logger.debug("Query overrides: %s", changes)

    tau = config.tau if "tau" in config.explicit else None
    result = database.query(load_scan(args.scan), args.query_id, tau=tau)
    payload = _result_json(result, database.config.params.kind)
    sys.stdout.write(json.dumps(payload) + "\n")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: RunConfig, logger: logging.Logger) -> int:
    """Run the benchmark and write the four report files into ``--out``."""
    report = run_benchmark(
        args.scan_dir,
        args.poses,
        config,
        map_dir=args.map_dir,
        map_pose_file=args.map_poses,
        show_progress=sys.stderr.isatty(),
    )
    paths = write_report(report, args.out)
    logger.info("Report: %s", paths["report"])
    render_summary(report)
    return EXIT_OK


def _exit_code(error: BaseException) -> int:
    if isinstance(error, AlignmentError):
        return EXIT_ALIGNMENT
    if isinstance(
        error,
        InvalidParamError
        | KindError
        | ShapeError
        | RangeError
        | OrderError
        | EmptyDatabaseError
        | jsonschema.ValidationError,
    ):
        return EXIT_PARAM
    if isinstance(error, OSError | FormatError):
        return EXIT_IO
    return 1


def run(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run one subcommand and return its exit code."""
    parser = _setup_argument_parser()
    args_parsed = parser.parse_args(argv)
    logger = _setup_logging(debug=args_parsed.debug)

    try:
        config = _run_config(args_parsed)
        return int(args_parsed.handler(args_parsed, config, logger))
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130
    except Exception as e:
        code = _exit_code(e)
        if code == 1:
            logger.exception("Unexpected error")
        else:
            logger.debug("Command failed", exc_info=True)
        message = " ".join(str(e).split()) or type(e).__name__
        sys.stderr.write(f"{PROG}: error: {message}\n")
        return code


def main() -> None:
    """Console-script entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
