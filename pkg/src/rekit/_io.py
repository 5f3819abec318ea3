"""File and RNG helpers shared by the pipeline stages."""

from __future__ import annotations

import csv
import io
import os
import tempfile
import zlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write ``data`` to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Atomic CSV write; floats are emitted with ``repr`` (full precision)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named pipeline stage.

    The same ``(seed, name, *extra)`` always yields the same stream, so
    stages can be rerun on their own and parallel runs agree with serial ones.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng([int(seed), key, *map(int, extra)])
