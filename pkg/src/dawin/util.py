"""Seeded substreams and atomic file writes."""

from __future__ import annotations

import os
import tempfile
import zlib

import numpy as np


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Independent generator derived from one root seed and a stream name.

    The name is folded in through crc32, which is stable across platforms
    and Python processes (unlike hash()).
    """
    if root_seed < 0:
        raise ValueError("root seed must be non-negative")
    return np.random.default_rng(
        np.random.SeedSequence([int(root_seed), zlib.crc32(name.encode("utf-8"))])
    )


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    """Write a file via temp-file-plus-rename so readers never see partial output."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix="." + os.path.basename(path) + ".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
