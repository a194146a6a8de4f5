"""Binary and CSV persistence of :class:`Draws`.

Binary layout: the 8-byte magic ``MSFPDRW1``, a little-endian uint32 header
length, a UTF-8 JSON header (format version, dim, chains, iters, coordinate
names, dtype) and then the arrays in header order as little-endian
float64 / int64 / uint8 C-ordered blocks.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .core import Draws

MAGIC = b"MSFPDRW1"
FORMAT_VERSION = 1

_ARRAYS = (
    ("samples", "<f8"),
    ("logp", "<f8"),
    ("accept_stat", "<f8"),
    ("n_leapfrog", "<i8"),
    ("tree_depth", "<i8"),
    ("divergent", "u1"),
    ("step_size", "<f8"),
    ("inv_mass", "<f8"),
)


def save_draws(draws: Draws, path: str | Path, extra: dict | None = None) -> None:
    header = {
        "version": FORMAT_VERSION,
        "dim": draws.dim,
        "chains": draws.n_chains,
        "iters": draws.n_iters,
        "layout": draws.names,
        "arrays": [[name, dt, list(getattr(draws, name).shape)] for name, dt in _ARRAYS],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, dt in _ARRAYS:
            fh.write(np.ascontiguousarray(getattr(draws, name), dtype=dt).tobytes())


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a draws file")
        (n,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(n).decode("utf-8"))


def load_draws(path: str | Path) -> Draws:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a draws file")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
        if header["version"] != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported draws format version {header['version']}")
        arrays = {}
        for name, dt, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * np.dtype(dt).itemsize)
            arrays[name] = np.frombuffer(buf, dtype=dt).reshape(shape).copy()
    arrays["divergent"] = arrays["divergent"].astype(bool)
    return Draws(names=header["layout"], **arrays)


def write_draws_csv(draws: Draws, path: str | Path) -> None:
    """One row per draw: chain, iteration, log density, then coordinates."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iter", "lp__", *draws.names])
        for c in range(draws.n_chains):
            for s in range(draws.n_iters):
                w.writerow([c, s, repr(float(draws.logp[c, s])), *(repr(float(v)) for v in draws.samples[c, s])])
