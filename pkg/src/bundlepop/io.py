"""Small file and seeding helpers shared by the pipeline stages."""

from __future__ import annotations

import os
import tempfile
import zlib
from pathlib import Path

import numpy as np


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def derive_seed(seed: int, *names: object) -> int:
    """Stable 63-bit sub-seed for a named stream, e.g. ``derive_seed(7, "optimize", 3)``."""
    key = [zlib.crc32(str(n).encode()) for n in names]
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, *key])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_for(seed: int, *names: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))
