"""Observation streams on disk and flat key-value config files.

Stream formats (one observation per line):

* CSV: comma-separated decimal floats, no header unless requested.
* NDJSON: one JSON array of numbers per line.

Config grammar: one ``key = value`` pair per line, where ``value`` is a JSON
literal (number, ``"string"``, ``[array]``, ``true``/``false``) or a bare
word taken as a string. ``#`` starts a comment; blank lines are ignored.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import IO, Any, Iterator

import numpy as np

from kcusum.errors import ConfigError, InputError

FORMATS = ("csv", "ndjson")
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.-]*$")


def infer_format(path: str | None, explicit: str | None = None) -> str:
    if explicit:
        if explicit not in FORMATS:
            raise ConfigError(f"unknown stream format {explicit!r}")
        return explicit
    if path and Path(path).suffix.lower() in (".ndjson", ".jsonl"):
        return "ndjson"
    return "csv"


def _parse_line(line: str, fmt: str, lineno: int) -> np.ndarray:
    try:
        if fmt == "ndjson":
            values = json.loads(line)
            if not isinstance(values, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
            ):
                raise ValueError("expected a JSON array of numbers")
        else:
            values = [float(cell) for cell in line.split(",")]
    except ValueError as exc:
        raise InputError(f"line {lineno}: {exc}") from None
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InputError(f"line {lineno}: empty record")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"line {lineno}: non-finite value")
    return arr


def read_observations(f: IO[str], fmt: str = "csv", header: bool = False) -> Iterator[np.ndarray]:
    """Yield observations lazily; the dimension is fixed by the first record.

    Raises:
        InputError: with the offending line number on any malformed record.
    """
    dim = None
    for lineno, raw in enumerate(f, start=1):
        if header and lineno == 1:
            continue
        line = raw.strip()
        if not line:
            continue
        obs = _parse_line(line, fmt, lineno)
        if dim is None:
            dim = obs.size
        elif obs.size != dim:
            raise InputError(f"line {lineno}: expected {dim} values, got {obs.size}")
        yield obs


def format_observation(obs: np.ndarray, fmt: str = "csv") -> str:
    cells = [format(float(v), ".17g") for v in obs]
    if fmt == "ndjson":
        return "[" + ", ".join(cells) + "]"
    return ",".join(cells)


def write_observations(f: IO[str], data: np.ndarray, fmt: str = "csv") -> None:
    for obs in np.atleast_2d(data):
        f.write(format_observation(obs, fmt) + "\n")


_DECODER = json.JSONDecoder()


def _parse_value(value: str, lineno: int) -> Any:
    try:
        parsed, end = _DECODER.raw_decode(value)
    except ValueError:
        parsed, end = None, 0
    rest = value[end:].strip() if end else value
    if end and (not rest or rest.startswith("#")):
        return parsed
    bare = value.split("#", 1)[0].strip()
    if _KEY.match(bare):
        return bare
    raise ConfigError(f"config line {lineno}: cannot parse value {value!r}")


def parse_config(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not _KEY.match(key):
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        if key in out:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = _parse_value(value, lineno)
    return out


def load_config(path: str | Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
