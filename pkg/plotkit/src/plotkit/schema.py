"""Strict reader for the sharpkit experiment CSV schema.

The schema is the interchange contract with the experiment driver:

    experiment,d,n_queries,trials,successes,success_rate,mean,stderr,seed,backend,elapsed_ms

Malformed input is rejected with the offending row, never silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

HEADER = ("experiment", "d", "n_queries", "trials", "successes",
          "success_rate", "mean", "stderr", "seed", "backend", "elapsed_ms")

_INT_FIELDS = {"d", "n_queries", "trials", "successes", "seed", "elapsed_ms"}
_FLOAT_FIELDS = {"success_rate", "mean", "stderr"}


class SchemaError(ValueError):
    """The CSV does not match the experiment schema."""


class EmptyInputError(ValueError):
    """The CSV parses but holds no data rows for the requested plot."""


@dataclass(frozen=True)
class Row:
    experiment: str
    d: int
    n_queries: int
    trials: int
    successes: int
    success_rate: float
    mean: float
    stderr: float
    seed: int
    backend: str
    elapsed_ms: int


def parse_line(line: str, lineno: int) -> Row:
    parts = line.split(",")
    if len(parts) != len(HEADER):
        raise SchemaError(
            f"line {lineno}: expected {len(HEADER)} fields, got {len(parts)}: {line!r}")
    kwargs = {}
    for name, raw in zip(HEADER, parts):
        try:
            if name in _INT_FIELDS:
                kwargs[name] = int(raw)
            elif name in _FLOAT_FIELDS:
                kwargs[name] = float(raw)
            else:
                kwargs[name] = raw
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: bad {name} value {raw!r}") from exc
    return Row(**kwargs)


def read_csv(path: str) -> list[Row]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty file, expected the experiment header")
    if tuple(lines[0].split(",")) != HEADER:
        raise SchemaError(f"{path}: unexpected header {lines[0]!r}")
    return [parse_line(ln, i + 2) for i, ln in enumerate(lines[1:])]
