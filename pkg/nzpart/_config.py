"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication.

Run configuration files.

Options can be stored in a YAML file or in the ``[tool.nzpart]`` table of a
``pyproject.toml``. The keys are the long command-line options with dashes
replaced by underscores, for example::

    mode: nzp
    P: 8
    wraps: 100
    input: matrix.nzp

Values given on the command line take precedence.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Mapping, NamedTuple

from ruamel.yaml import YAML

from nzpart._matgen import GenParams
from nzpart.definitions import DEFAULT_WRAPS, VALID_MODES, Mode
from nzpart.utils import InputValidationError

try:  # pragma: no cover
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    HAS_TOML = True
except ImportError:  # pragma: no cover
    HAS_TOML = False

CONFIG_KEYS: dict[str, type] = {
    "mode": str,
    "P": int,
    "wraps": int,
    "seed": int,
    "input": Path,
    "output": Path,
    "verify": bool,
    "m": int,
    "n": int,
    "rho": float,
    "iminus": int,
    "iplus": int,
    "n_dense": int,
    "dense_density": float,
    "sort_desc": bool,
}
GENERATOR_KEYS = ("m", "n", "rho", "iminus", "iplus")


def _coerce(key: str, value: Any, source: Path) -> Any:
    kind = CONFIG_KEYS[key]
    ok = (
        (kind is bool and isinstance(value, bool))
        or (kind is int and isinstance(value, int) and not isinstance(value, bool))
        or (
            kind is float
            and isinstance(value, (int, float))
            and not isinstance(value, bool)
        )
        or (kind in (str, Path) and isinstance(value, str))
    )
    if not ok:
        msg = f"`{key}` in {source} must be of type {kind.__name__}, got {value!r}"
        raise InputValidationError(msg)
    if kind is Path:
        path = Path(value)
        return path if path.is_absolute() else source.parent / path
    if kind is float:
        return float(value)
    return value


def _read_table(path: Path) -> Any:
    if path.suffix == ".toml":
        if not HAS_TOML:  # pragma: no cover
            msg = (
                "❌ No toml support found in your Python installation."
                " Please install it with `pip install tomli`."
            )
            raise ImportError(msg)
        with path.open("rb") as f:
            data = tomllib.load(f)
        try:
            return data["tool"]["nzpart"]
        except KeyError:
            msg = f"{path} has no `[tool.nzpart]` table"
            raise InputValidationError(msg) from None
    if path.suffix in (".yaml", ".yml"):
        yaml = YAML(typ="safe")
        with path.open() as f:
            data = yaml.load(f)
        return {} if data is None else data
    msg = f"Unsupported configuration file `{path}`, use `.yaml`, `.yml` or `.toml`"
    raise InputValidationError(msg)


def load_config(path: str | Path) -> dict[str, Any]:
    """Read and type-check a configuration file.

    Relative paths inside the file are taken relative to the file itself.
    """
    path = Path(path)
    if not path.exists():
        msg = f"Configuration file `{path}` not found"
        raise InputValidationError(msg)
    table = _read_table(path)
    if not isinstance(table, Mapping):
        msg = f"{path} must contain a mapping of options, got {type(table).__name__}"
        raise InputValidationError(msg)
    unknown = sorted(set(table) - set(CONFIG_KEYS))
    if unknown:
        msg = f"Unknown keys in {path}: {unknown}; valid keys are {list(CONFIG_KEYS)}"
        raise InputValidationError(msg)
    return {key: _coerce(key, value, path) for key, value in table.items()}


def merge_options(
    file_options: Mapping[str, Any],
    cli_options: Mapping[str, Any],
) -> dict[str, Any]:
    """Overlay the options given on the command line (None means not given)."""
    merged = dict(file_options)
    merged.update({k: v for k, v in cli_options.items() if v is not None})
    return merged


def _option(options: Mapping[str, Any], key: str, default: Any) -> Any:
    value = options.get(key)
    return default if value is None else value


def gen_params_from_options(options: Mapping[str, Any]) -> GenParams:
    """Build generator parameters, raising if one is missing."""
    missing = [key for key in GENERATOR_KEYS if options.get(key) is None]
    if missing:
        msg = f"Missing generator options: {', '.join('--' + k for k in missing)}"
        raise InputValidationError(msg)
    params = GenParams(
        m=options["m"],
        n=options["n"],
        rho=options["rho"],
        iminus=options["iminus"],
        iplus=options["iplus"],
        seed=_option(options, "seed", 0),
        n_dense=_option(options, "n_dense", 0),
        dense_density=_option(options, "dense_density", 0.5),
    )
    params.validate()
    return params


class RunConfig(NamedTuple):
    """Everything `nzpart run` needs."""

    mode: Mode
    P: int
    wraps: int = DEFAULT_WRAPS
    seed: int = 0
    input: Path | None = None
    generator: GenParams | None = None
    output: Path | None = None
    verify: bool = False

    @classmethod
    def from_options(cls, options: Mapping[str, Any]) -> RunConfig:
        """Validate merged options."""
        mode = options.get("mode") or "nzp"
        if mode not in VALID_MODES:
            msg = f"Unknown mode `{mode}`, expected one of {VALID_MODES}"
            raise InputValidationError(msg)
        P = options.get("P")
        if P is None or P < 1:
            msg = f"The number of ranks `--P` must be at least 1, got {P}"
            raise InputValidationError(msg)
        wraps = options.get("wraps")
        wraps = DEFAULT_WRAPS if wraps is None else wraps
        if wraps < 0:
            msg = f"The number of wraps must be nonnegative, got {wraps}"
            raise InputValidationError(msg)
        source = options.get("input")
        has_generator = any(options.get(key) is not None for key in GENERATOR_KEYS)
        if source is not None and has_generator:
            msg = "Give either an input matrix or generator options, not both"
            raise InputValidationError(msg)
        if source is None and not has_generator:
            msg = "No matrix: give `--in` or the generator options"
            raise InputValidationError(msg)
        return cls(
            mode=mode,
            P=P,
            wraps=wraps,
            seed=_option(options, "seed", 0),
            input=None if source is None else Path(source),
            generator=None if source is not None else gen_params_from_options(options),
            output=None if options.get("output") is None else Path(options["output"]),
            verify=bool(options.get("verify")),
        )
