"""Multi-block longitudinal data: ingestion, validation and standardization.

A dataset holds, for every subject and every block (outcome variable), an
irregular series of ``(time, value)`` pairs.  Subjects may have no
observations at all in some block.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateTimeRange,
    DuplicateObservation,
    EmptyInput,
    NonFiniteValue,
    ZeroVariance,
)

CSV_HEADER = ("subject_id", "block_id", "time", "value")


@dataclass(frozen=True)
class ObservationRecord:
    subject_id: str
    block_id: str
    time: float
    value: float


@dataclass(frozen=True)
class MultiBlockDataset:
    """Immutable container of per-subject, per-block series.

    Attributes
    ----------
    blocks : tuple of str
        Block identifiers, length P.
    subjects : tuple of str
        Subject identifiers, length N.
    times, values : tuple of tuple of ndarray
        ``times[i][p]`` and ``values[i][p]`` are the sorted observation
        times and values of subject ``i`` in block ``p`` (possibly empty).
    means, sds : ndarray or None
        Per-block standardization constants, set once standardized.
    time_range : (float, float)
        Original ``(min, max)`` of the time axis over all blocks.
    rescaled : bool
        Whether ``times`` have been mapped onto ``[0, 1]``.
    """

    blocks: tuple[str, ...]
    subjects: tuple[str, ...]
    times: tuple[tuple[np.ndarray, ...], ...]
    values: tuple[tuple[np.ndarray, ...], ...]
    time_range: tuple[float, float]
    means: np.ndarray | None = None
    sds: np.ndarray | None = None
    rescaled: bool = False

    def __post_init__(self):
        for row in self.times + self.values:
            for arr in row:
                arr.setflags(write=False)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def standardized(self) -> bool:
        return self.means is not None

    def counts(self) -> np.ndarray:
        """``(N, P)`` integer array of observation counts V_ip."""
        return np.array([[len(t) for t in row] for row in self.times], dtype=int).reshape(
            self.n_subjects, self.n_blocks
        )

    def block_values(self, p: int) -> np.ndarray:
        """All values of block ``p`` pooled over subjects."""
        return np.concatenate([row[p] for row in self.values])

    def records(self) -> list[ObservationRecord]:
        out = []
        for i, sid in enumerate(self.subjects):
            for p, bid in enumerate(self.blocks):
                for t, v in zip(self.times[i][p], self.values[i][p]):
                    out.append(ObservationRecord(sid, bid, float(t), float(v)))
        return out

    def select_subjects(self, keep: Sequence[int]) -> MultiBlockDataset:
        """Dataset restricted to the subjects at positions ``keep``."""
        keep = list(keep)
        return MultiBlockDataset(
            blocks=self.blocks,
            subjects=tuple(self.subjects[i] for i in keep),
            times=tuple(self.times[i] for i in keep),
            values=tuple(self.values[i] for i in keep),
            time_range=self.time_range,
            means=self.means,
            sds=self.sds,
            rescaled=self.rescaled,
        )

    def with_values(self, values) -> MultiBlockDataset:
        """Same design (subjects, blocks, times) with replaced values."""
        values = tuple(tuple(np.asarray(v, dtype=float).copy() for v in row) for row in values)
        return MultiBlockDataset(
            blocks=self.blocks,
            subjects=self.subjects,
            times=self.times,
            values=values,
            time_range=self.time_range,
            means=self.means,
            sds=self.sds,
            rescaled=self.rescaled,
        )

    def unstandardize(self) -> MultiBlockDataset:
        """Map values and times back to their original units."""
        lo, hi = self.time_range
        span = hi - lo
        times, values = [], []
        for row_t, row_v in zip(self.times, self.values):
            times.append(tuple((t * span + lo) if self.rescaled else t.copy() for t in row_t))
            values.append(
                tuple(
                    v * self.sds[p] + self.means[p] if self.standardized else v.copy()
                    for p, v in enumerate(row_v)
                )
            )
        return MultiBlockDataset(
            blocks=self.blocks,
            subjects=self.subjects,
            times=tuple(times),
            values=tuple(values),
            time_range=self.time_range,
        )


def load_long_records(rows: Iterable[ObservationRecord]) -> MultiBlockDataset:
    """Group long-format records into an (unstandardized) dataset.

    Blocks and subjects are ordered by first appearance; each series is
    sorted by time.

    Raises
    ------
    EmptyInput
        If ``rows`` is empty.
    NonFiniteValue
        If a time or value is NaN or infinite.
    DuplicateObservation
        If a ``(subject, block, time)`` triple occurs twice.
    """
    rows = list(rows)
    if not rows:
        raise EmptyInput("no observation records")

    blocks: dict[str, int] = {}
    subjects: dict[str, int] = {}
    cells: dict[tuple[str, str], dict[float, float]] = {}
    for r in rows:
        t, v = float(r.time), float(r.value)
        if not (math.isfinite(t) and math.isfinite(v)):
            raise NonFiniteValue(f"non-finite observation for subject {r.subject_id!r}, block {r.block_id!r}")
        blocks.setdefault(r.block_id, len(blocks))
        subjects.setdefault(r.subject_id, len(subjects))
        cell = cells.setdefault((r.subject_id, r.block_id), {})
        if t in cell:
            raise DuplicateObservation(f"duplicate observation ({r.subject_id!r}, {r.block_id!r}, {t})")
        cell[t] = v

    all_t = [t for cell in cells.values() for t in cell]
    times, values = [], []
    for sid in subjects:
        row_t, row_v = [], []
        for bid in blocks:
            cell = cells.get((sid, bid), {})
            ts = np.array(sorted(cell), dtype=float)
            row_t.append(ts)
            row_v.append(np.array([cell[t] for t in ts], dtype=float))
        times.append(tuple(row_t))
        values.append(tuple(row_v))

    return MultiBlockDataset(
        blocks=tuple(blocks),
        subjects=tuple(subjects),
        times=tuple(times),
        values=tuple(values),
        time_range=(min(all_t), max(all_t)),
    )


def standardize_and_rescale(dataset: MultiBlockDataset) -> MultiBlockDataset:
    """Standardize values per block and map times onto ``[0, 1]``.

    Values of each block are centred by the pooled block mean and scaled by
    the pooled sample sd (denominator ``n - 1``).  Times are mapped affinely
    using the global time range shared by all blocks.
    """
    lo, hi = dataset.time_range
    if not hi > lo:
        raise DegenerateTimeRange(f"time range [{lo}, {hi}] has zero width")

    means = np.empty(dataset.n_blocks)
    sds = np.empty(dataset.n_blocks)
    for p, bid in enumerate(dataset.blocks):
        pooled = dataset.block_values(p)
        sd = pooled.std(ddof=1) if pooled.size > 1 else 0.0
        if not sd > 0:
            raise ZeroVariance(f"block {bid!r} has zero variance")
        means[p] = pooled.mean()
        sds[p] = sd

    span = hi - lo
    times = tuple(tuple((t - lo) / span for t in row) for row in dataset.times)
    values = tuple(tuple((v - means[p]) / sds[p] for p, v in enumerate(row)) for row in dataset.values)
    return MultiBlockDataset(
        blocks=dataset.blocks,
        subjects=dataset.subjects,
        times=times,
        values=values,
        time_range=dataset.time_range,
        means=means,
        sds=sds,
        rescaled=True,
    )


def read_csv(path: str | Path) -> MultiBlockDataset:
    """Read a long-format ``subject_id,block_id,time,value`` CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if line.strip())
        missing = set(CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = [
            ObservationRecord(r["subject_id"], r["block_id"], float(r["time"]), float(r["value"]))
            for r in reader
        ]
    return load_long_records(rows)


def write_csv(dataset: MultiBlockDataset, path: str | Path) -> None:
    """Write the dataset's records (in their current units) as long-format CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in dataset.records():
            w.writerow([r.subject_id, r.block_id, repr(r.time), repr(r.value)])


def save_json(dataset: MultiBlockDataset, path: str | Path) -> None:
    """Exact serialization, including empty series and standardization
    constants (``read_csv`` cannot represent subjects without records)."""
    doc = {
        "blocks": list(dataset.blocks),
        "subjects": list(dataset.subjects),
        "times": [[t.tolist() for t in row] for row in dataset.times],
        "values": [[v.tolist() for v in row] for row in dataset.values],
        "time_range": list(dataset.time_range),
        "means": None if dataset.means is None else dataset.means.tolist(),
        "sds": None if dataset.sds is None else dataset.sds.tolist(),
        "rescaled": dataset.rescaled,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_json(path: str | Path) -> MultiBlockDataset:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    arr = lambda x: None if x is None else np.array(x, dtype=float)  # noqa: E731
    return MultiBlockDataset(
        blocks=tuple(doc["blocks"]),
        subjects=tuple(doc["subjects"]),
        times=tuple(tuple(np.array(t, dtype=float) for t in row) for row in doc["times"]),
        values=tuple(tuple(np.array(v, dtype=float) for v in row) for row in doc["values"]),
        time_range=tuple(doc["time_range"]),
        means=arr(doc["means"]),
        sds=arr(doc["sds"]),
        rescaled=bool(doc["rescaled"]),
    )
