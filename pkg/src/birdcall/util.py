"""Small shared helpers."""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np


def round_half_up(x):
    """Round to nearest integer with halves away from zero (for non-negative input).

    numpy's default rounding is half-to-even, which disagrees with the
    pixel-quantization and resize-geometry contracts on exact .5 values.
    Works on scalars and arrays; returns the same kind.
    """
    r = np.floor(np.asarray(x, dtype=np.float64) + 0.5)
    if np.isscalar(x) or np.ndim(x) == 0:
        return int(r)
    return r


def atomic_write_bytes(path, data: bytes) -> None:
    """Write a file via temp-and-rename so readers never observe partial content."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj, path) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))
