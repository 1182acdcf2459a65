"""Deterministic CSV/JSON writers shared by the library and the CLI.

Replaying a run with the same config and seed must produce byte-identical
files, so: no timestamps, LF line endings, '.' decimal separator, and float
cells rendered with repr (shortest round-trip form). Every file carries a
metadata block (config echo, seed, version) as '#' comment lines in CSV or
a "meta" object in JSON.
"""

from __future__ import annotations

import json
import numbers

import numpy as np

from ._version import __version__

__all__ = ["format_cell", "write_csv", "write_json", "make_meta"]


def make_meta(command, seed, config):
    """Metadata mapping recorded in every output file."""
    meta = {"version": __version__, "command": command, "seed": seed}
    for key, value in config.items():
        if key not in meta:
            meta[key] = value
    return meta


def format_cell(value):
    # numbers.* so numpy scalars format like their Python counterparts
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        return repr(float(value))
    return str(value)


def _meta_value(value):
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_cell(v) for v in value) + "]"
    return format_cell(value)


def write_csv(path, fieldnames, rows, meta=None):
    """Write a table with an optional '#'-prefixed metadata header block."""
    with open(path, "w", newline="") as fh:
        if meta:
            for key, value in meta.items():
                fh.write(f"# {key} = {_meta_value(value)}\n")
        fh.write(",".join(fieldnames) + "\n")
        for row in rows:
            fh.write(",".join(format_cell(v) for v in row) + "\n")


def write_json(path, payload, meta=None):
    """Write a JSON document, prefixing a "meta" object when given."""
    if meta is not None:
        payload = {"meta": meta, **payload}
    with open(path, "w", newline="") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
