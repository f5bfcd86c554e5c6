#!/usr/bin/env python3
"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication.

This module provides the command-line tool: generate matrices, report the
imbalance of both partitionings and run the SpMV-SpVTM benchmark.
"""

from __future__ import annotations

import argparse
import csv
import importlib.util
import io
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from nzpart._config import (
    RunConfig,
    gen_params_from_options,
    load_config,
    merge_options,
)
from nzpart._engine import run_benchmark, verify_products
from nzpart._matgen import gen_random, sort_columns_descending
from nzpart._matio import (
    import_matrix_market,
    read_triple_stream,
    read_triple_text,
    write_triple_stream,
    write_triple_text,
)
from nzpart._partition import (
    build_cover,
    chunk_bounds,
    column_partition,
    imbalance,
    zones_oracle,
)
from nzpart._sparse import CooMatrix
from nzpart._version import __version__
from nzpart.definitions import (
    DEFAULT_WRAPS,
    REPORT_CSV_COLUMNS,
    RUN_CSV_COLUMNS,
    VALID_MODES,
)
from nzpart.utils import (
    ConsistencyError,
    FormatError,
    HarnessError,
    InputValidationError,
    UnsupportedConfigurationError,
    get_package_version,
    warn,
)

try:  # pragma: no cover
    from rich_argparse import RichHelpFormatter

    class _HelpFormatter(RichHelpFormatter):
        def _get_help_string(self, action: argparse.Action) -> str | None:
            # escapes "[" in text, otherwise e.g., [l, u] is removed
            if action.help is not None:
                return action.help.replace("[", r"\[")
            return None
except ImportError:  # pragma: no cover
    from argparse import HelpFormatter as _HelpFormatter  # type: ignore[assignment]

_MATRIX_FORMATS = "a triple stream, a `.txt` triple text file or a `.mtx` Matrix Market file"
_USER_ERRORS = (
    InputValidationError,
    FormatError,
    UnsupportedConfigurationError,
    ConsistencyError,
    HarnessError,
)


def _add_generator_args(sub_parser: argparse.ArgumentParser) -> None:
    group = sub_parser.add_argument_group("generator options")
    group.add_argument("--m", type=int, help="Number of rows.")
    group.add_argument("--n", type=int, help="Number of columns, at least m.")
    group.add_argument(
        "--rho",
        type=float,
        help="Target density of a column as a fraction of m.",
    )
    group.add_argument(
        "--iminus",
        type=int,
        help="Per-column counts go down to l = floor(rho*m) - iminus.",
    )
    group.add_argument(
        "--iplus",
        type=int,
        help="Per-column counts go up to u = ceil(rho*m) + iplus.",
    )
    group.add_argument(
        "--n-dense",
        type=int,
        help="Number of dense columns to plant in the matrix.",
    )
    group.add_argument(
        "--dense-density",
        type=float,
        help="Fraction of m filled in each dense column (default 0.5).",
    )
    group.add_argument(
        "--sort-desc",
        action="store_true",
        default=None,
        help="Order the columns by nonincreasing number of nonzeros.",
    )


def _add_common_args(sub_parser: argparse.ArgumentParser) -> None:
    sub_parser.add_argument(
        "--config",
        type=Path,
        help="YAML file or `pyproject.toml` with a `[tool.nzpart]` table holding"
        " default values for the options of this command.",
    )
    sub_parser.add_argument(
        "--seed",
        type=int,
        help="Seed of the matrix generator and of the benchmark vectors.",
    )
    sub_parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Print progress and enable debug logging.",
    )


def _parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Nonzero-partitioned sparse matrix-vector multiplication.",
        formatter_class=_HelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", help="Subcommands")

    gen_help = "Generate a random sparse matrix and write it as a triple stream."
    gen_example = (
        " Example usage: `nzpart gen --m 100 --n 5000 --rho 0.05 --iminus 2"
        " --iplus 3 --seed 1 --out a.nzp`."
    )
    parser_gen = subparsers.add_parser(
        "gen",
        help=gen_help,
        description=gen_help + gen_example,
        formatter_class=_HelpFormatter,
    )
    _add_generator_args(parser_gen)
    _add_common_args(parser_gen)
    parser_gen.add_argument(
        "--out",
        type=Path,
        required=True,
        help="Output file; a `.txt` suffix writes the triple text variant.",
    )

    report_help = (
        "Print the nonzero imbalance of column partitioning and the number of"
        " overlap zones of nonzero partitioning for each P."
    )
    parser_report = subparsers.add_parser(
        "report",
        help=report_help,
        description=report_help
        + " Example usage: `nzpart report --in a.nzp --P 2 4 8 16`.",
        formatter_class=_HelpFormatter,
    )
    parser_report.add_argument(
        "--in",
        dest="input",
        type=Path,
        required=True,
        help=f"The matrix, {_MATRIX_FORMATS}.",
    )
    parser_report.add_argument(
        "--P",
        type=int,
        nargs="+",
        required=True,
        help="One or more numbers of ranks.",
    )
    parser_report.add_argument(
        "--csv",
        type=Path,
        help="Also write the table as CSV to this file.",
    )
    parser_report.add_argument(
        "--sort-desc",
        action="store_true",
        help="Order the columns by nonincreasing density before partitioning.",
    )

    run_help = (
        "Run SpMV-SpVTM wraps on P logical ranks of the in-process harness"
        " and write timing and traffic as CSV."
    )
    parser_run = subparsers.add_parser(
        "run",
        help=run_help,
        description=run_help
        + " Example usage: `nzpart run --mode nzp --P 8 --wraps 100 --in a.nzp`.",
        formatter_class=_HelpFormatter,
    )
    parser_run.add_argument(
        "--mode",
        choices=VALID_MODES,
        help="Nonzero partitioning (`nzp`, default) or the column partitioning"
        " baseline (`colp`).",
    )
    parser_run.add_argument(
        "--P",
        type=int,
        help="Number of logical ranks (threads, not processes or cores).",
    )
    parser_run.add_argument(
        "--wraps",
        type=int,
        help=f"Number of SpMV-SpVTM pairs (default {DEFAULT_WRAPS}).",
    )
    parser_run.add_argument(
        "--in",
        dest="input",
        type=Path,
        help=f"The matrix, {_MATRIX_FORMATS}. Without it, the matrix is"
        " generated from the generator options.",
    )
    parser_run.add_argument(
        "--out",
        dest="output",
        type=Path,
        help="CSV output file; printed to standard output if omitted.",
    )
    parser_run.add_argument(
        "--verify",
        action="store_true",
        default=None,
        help="Check one SpMV and one SpVTM against a dense reference first.",
    )
    _add_generator_args(parser_run)
    _add_common_args(parser_run)

    subparsers.add_parser(
        "version",
        help="Print version information of nzpart and its dependencies.",
        formatter_class=_HelpFormatter,
    )

    args = parser.parse_args(argv)
    if args.command is None:  # pragma: no cover
        parser.print_help()
        sys.exit(1)
    return args


def _is_triple_stream(path: Path) -> bool:
    return path.suffix not in (".mtx", ".txt")


def _load_matrix(path: Path) -> CooMatrix:
    if not path.exists():
        msg = f"Matrix file `{path}` not found"
        raise InputValidationError(msg)
    if path.suffix == ".mtx":
        return import_matrix_market(path)
    if path.suffix == ".txt":
        return read_triple_text(path)
    return read_triple_stream(path)


def _options(args: argparse.Namespace, keys: Sequence[str]) -> dict[str, Any]:
    file_options = {} if args.config is None else load_config(args.config)
    cli_options = {key: getattr(args, key, None) for key in keys}
    return merge_options(file_options, cli_options)


_GEN_KEYS = (
    "m",
    "n",
    "rho",
    "iminus",
    "iplus",
    "seed",
    "n_dense",
    "dense_density",
    "sort_desc",
)


def _gen_command(args: argparse.Namespace) -> None:
    options = _options(args, _GEN_KEYS)
    params = gen_params_from_options(options)
    if args.verbose:
        print(f"🔍 Generating with l={params.lower}, u={params.upper}")
    A = gen_random(params)
    if options.get("sort_desc"):
        A = sort_columns_descending(A)
    out: Path = args.out
    if out.suffix == ".txt":
        write_triple_text(A, out)
    else:
        write_triple_stream(A, out)
    print(f"📦 Generated a {A.m}x{A.n} matrix with {A.nnz} nonzeros")
    print(f"✅ Wrote `{out}`")


def _report_rows(A: CooMatrix, Ps: Sequence[int]) -> list[dict[str, Any]]:
    rows = []
    for P in Ps:
        if P < 1:
            msg = f"The number of ranks must be at least 1, got {P}"
            raise InputValidationError(msg)
        row: dict[str, Any] = {"P": P}
        if P <= A.n:
            counts = column_partition(A, P).counts
            row["colp_delta_percent"] = f"{imbalance(counts).percent:.2f}"
        else:
            warn(f"P={P} exceeds n={A.n}; column partitioning is undefined")
            row["colp_delta_percent"] = "n/a"
        if P <= A.nnz:
            bounds = chunk_bounds(A.nnz, P)
            row["nzp_zones"] = len(zones_oracle(build_cover(A, bounds)))
            row["nzp_delta_percent"] = f"{imbalance(bounds.sizes()).percent:.2f}"
        else:
            warn(
                f"P={P} exceeds Z={A.nnz}; nonzero partitioning would leave"
                " ranks without nonzeros",
            )
            row["nzp_zones"] = "n/a"
            row["nzp_delta_percent"] = "n/a"
        rows.append(row)
    return rows


def _write_csv(
    rows: Sequence[dict[str, Any]],
    columns: Sequence[str],
    path: Path | None,
) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    text = buffer.getvalue()
    if path is not None:
        with path.open("w", encoding="utf-8", newline="") as f:
            f.write(text)
    return text


def _report_command(args: argparse.Namespace) -> None:
    A = _load_matrix(args.input)
    if args.sort_desc:
        A = sort_columns_descending(A)
    print(f"📦 {args.input}: {A.m}x{A.n} with {A.nnz} nonzeros")
    rows = _report_rows(A, args.P)
    headers = ["P", "ColP Δ (%)", "NzP zones", "NzP Δ (%)"]
    table = [[str(row[c]) for c in REPORT_CSV_COLUMNS] for row in rows]
    if importlib.util.find_spec("rich") is not None:
        _print_with_rich(table, headers)
    else:  # pragma: no cover
        print("\t".join(headers))
        for line in table:
            print("\t".join(line))
    if args.csv is not None:
        _write_csv(rows, REPORT_CSV_COLUMNS, args.csv)
        print(f"✅ Wrote `{args.csv}`")


_RUN_KEYS = (
    "mode",
    "P",
    "wraps",
    "input",
    "output",
    "verify",
    *_GEN_KEYS,
)


def _run_command(args: argparse.Namespace) -> None:
    options = _options(args, _RUN_KEYS)
    config = RunConfig.from_options(options)
    if config.input is not None:
        source: CooMatrix | Path
        if _is_triple_stream(config.input) and not options.get("sort_desc"):
            if not config.input.exists():
                msg = f"Matrix file `{config.input}` not found"
                raise InputValidationError(msg)
            source = config.input
        else:
            source = _load_matrix(config.input)
    else:
        assert config.generator is not None
        source = gen_random(config.generator)
    if isinstance(source, CooMatrix) and options.get("sort_desc"):
        source = sort_columns_descending(source)

    if config.verify:
        A = source if isinstance(source, CooMatrix) else read_triple_stream(source)
        print(f"🔍 Verifying {config.mode} on {config.P} ranks against the dense oracle")
        check = verify_products(A, config.P, config.mode, config.seed)
        if not check.ok:
            print(
                f"❌ Verification failed: SpMV error {check.spmv_error:.3e},"
                f" SpVTM error {check.spvtm_error:.3e},"
                f" replicas identical: {check.replicas_identical}",
                file=sys.stderr,
            )
            sys.exit(1)
        print(
            f"✅ Verified: SpMV error {check.spmv_error:.3e},"
            f" SpVTM error {check.spvtm_error:.3e}",
        )

    if args.verbose:
        print(f"🔍 Running {config.wraps} wraps in {config.mode} mode on {config.P} ranks")
    report = run_benchmark(source, config.P, config.mode, config.wraps, config.seed)
    text = _write_csv([report.csv_row()], RUN_CSV_COLUMNS, config.output)
    if config.output is None:
        print(text, end="")
    else:
        print(f"✅ Wrote `{config.output}`")
    if args.verbose:
        print(
            f"📦 {report.zones} overlap zones, setup took {report.setup_rounds} rounds,"
            f" {report.elapsed_seconds:.3f}s for {report.wraps} wraps",
        )


def _print_versions() -> None:  # pragma: no cover
    """Print version information."""
    path = Path(__file__).parent
    txt = [
        f"nzpart version: {__version__}",
        f"nzpart location: {path}",
        f"Python version: {sys.version}",
        f"Python executable: {sys.executable}",
    ]
    extra_packages = [
        "numpy",
        "scipy",
        "ruamel.yaml",
        "rich_argparse",
        "rich",
        "tomli",
    ]
    for package in extra_packages:
        version = get_package_version(package)
        if version is not None:
            txt.append(f"{package} version: {version}")

    if importlib.util.find_spec("rich") is not None:
        _print_with_rich([line.split(":", 1) for line in txt])
    else:
        print("\n".join(txt))


def _print_with_rich(rows: list, headers: list[str] | None = None) -> None:
    """Print rows as a table using rich, if it's installed."""
    from rich.console import Console
    from rich.table import Table

    console = Console()
    table = Table(show_header=headers is not None)
    for i, header in enumerate(headers or ["Property", "Value"]):
        table.add_column(header, style="cyan" if i == 0 else "magenta")
    for row in rows:
        table.add_row(*(str(cell).strip() for cell in row))
    console.print(table)


def main(argv: Sequence[str] | None = None) -> None:
    """Main entry point for the command-line tool."""
    args = _parse_args(argv)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.DEBUG)

    try:
        if args.command == "gen":
            _gen_command(args)
        elif args.command == "report":
            _report_command(args)
        elif args.command == "run":
            _run_command(args)
        elif args.command == "version":  # pragma: no cover
            _print_versions()
    except _USER_ERRORS as e:
        print(f"❌ {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
