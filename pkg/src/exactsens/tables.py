"""Contingency-table data model, fixed-margin enumeration, and level-merging transforms.

A table is an I x J matrix of non-negative counts cross-classifying treatment
level (rows) by outcome level (columns).  Inference under the sharp null only
ever touches tables through their fixed-margin reference set, so the central
operation here is a deterministic stream over every non-negative integer
matrix with given row and column sums.  The stream fills cells row-major with
per-cell feasibility bounds, forcing the last column of each row and the whole
last row, so only feasible prefixes are ever visited and the output order is
lexicographic in the flattened cell vector.

``collapse`` and ``crosscut`` are the table transforms used when comparing a
full I x J test against coarsened variants: collapsing merges adjacent levels
by summation, cross-cutting keeps only extreme levels and drops the subjects
in between.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "ContingencyTable",
    "Margins",
    "enumerate_fixed_margin_tables",
    "enumerate_fixed_margin_array",
    "collapse",
    "crosscut",
]


@dataclass(frozen=True)
class Margins:
    """Row (treatment) and column (outcome) totals of a table.

    Every treatment level must be occupied (``rows[i] >= 1``); outcome levels
    may be empty.  Row and column sums must agree.
    """

    rows: tuple[int, ...]
    cols: tuple[int, ...]

    def __post_init__(self) -> None:
        rows = tuple(int(v) for v in self.rows)
        cols = tuple(int(v) for v in self.cols)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        if len(rows) < 1 or len(cols) < 1:
            raise ValueError("margins need at least one row and one column")
        if any(v < 1 for v in rows):
            raise ValueError("every treatment margin must be positive")
        if any(v < 0 for v in cols):
            raise ValueError("column margins must be non-negative")
        if sum(rows) != sum(cols):
            raise ValueError(f"margin sums disagree: {sum(rows)} != {sum(cols)}")

    @property
    def N(self) -> int:
        return sum(self.rows)

    @property
    def I(self) -> int:
        return len(self.rows)

    @property
    def J(self) -> int:
        return len(self.cols)


@dataclass(frozen=True)
class ContingencyTable:
    """Immutable I x J matrix of non-negative integer counts."""

    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        counts = tuple(tuple(int(v) for v in row) for row in self.counts)
        object.__setattr__(self, "counts", counts)
        if len(counts) < 2 or len(counts[0]) < 2:
            raise ValueError("a contingency table needs at least 2 rows and 2 columns")
        width = len(counts[0])
        if any(len(row) != width for row in counts):
            raise ValueError("ragged rows")
        if any(v < 0 for row in counts for v in row):
            raise ValueError("negative cell count")
        if sum(v for row in counts for v in row) < 1:
            raise ValueError("table must contain at least one subject")

    @classmethod
    def from_array(cls, arr: Sequence[Sequence[int]] | np.ndarray) -> "ContingencyTable":
        return cls(tuple(tuple(int(v) for v in row) for row in np.asarray(arr)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    @property
    def I(self) -> int:
        return len(self.counts)

    @property
    def J(self) -> int:
        return len(self.counts[0])

    @property
    def N(self) -> int:
        return sum(v for row in self.counts for v in row)

    def row_margins(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.counts)

    def col_margins(self) -> tuple[int, ...]:
        return tuple(sum(col) for col in zip(*self.counts))

    def margins(self) -> Margins:
        return Margins(self.row_margins(), self.col_margins())

    # --- serialization -------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({"counts": [list(row) for row in self.counts]})

    @classmethod
    def from_json(cls, text: str) -> "ContingencyTable":
        data = json.loads(text)
        if not isinstance(data, dict) or "counts" not in data:
            raise ValueError('table JSON must be {"counts": [[...], ...]}')
        return cls.from_array(data["counts"])

    def to_csv(self) -> str:
        return "\n".join(",".join(str(v) for v in row) for row in self.counts) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ContingencyTable":
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([int(tok) for tok in line.split(",")])
        if not rows:
            raise ValueError("no table rows found")
        return cls.from_array(rows)


def enumerate_fixed_margin_tables(m: Margins) -> Iterator[ContingencyTable]:
    """Yield every non-negative integer table with the given margins exactly once.

    Cells are filled row-major; cell (i, j) ranges over
    ``max(0, rrem - rest) <= v <= min(rrem, crem_j)`` where ``rrem`` is what is
    left of row i and ``rest`` is the capacity of the columns after j, so each
    prefix extends to at least one complete table.  The last column of each
    row and the entire last row are forced.  Output order is lexicographic in
    the flattened cell vector.
    """
    for flat in _enumerate_rec(m.rows, m.cols):
        yield ContingencyTable.from_array(np.asarray(flat).reshape(m.I, m.J))


def _enumerate_rec(rows: tuple[int, ...], cols: tuple[int, ...]) -> Iterator[list[int]]:
    I, J = len(rows), len(cols)
    cells: list[int] = [0] * (I * J)
    crem = list(cols)

    def fill_row(i: int, j: int, rrem: int) -> Iterator[list[int]]:
        if i == I - 1:
            # whole last row forced by the column remainders
            for jj in range(J):
                cells[i * J + jj] = crem[jj]
            yield cells
            return
        if j == J - 1:
            cells[i * J + j] = rrem
            crem[j] -= rrem
            yield from fill_row(i + 1, 0, rows[i + 1])
            crem[j] += rrem
            return
        rest = sum(crem[j + 1 :])
        lo = max(0, rrem - rest)
        hi = min(rrem, crem[j])
        for v in range(lo, hi + 1):
            cells[i * J + j] = v
            crem[j] -= v
            yield from fill_row(i, j + 1, rrem - v)
            crem[j] += v

    yield from fill_row(0, 0, rows[0])


def enumerate_fixed_margin_array(m: Margins, dtype=np.int32) -> np.ndarray:
    """All fixed-margin tables as one (ntables, I, J) array, in stream order.

    Batched version of :func:`enumerate_fixed_margin_tables` used by the exact
    engine; materializes the reference set, so intended for table counts that
    fit in memory.
    """
    I, J = m.I, m.J
    rows = np.asarray(m.rows, dtype=dtype)
    cols = np.asarray(m.cols, dtype=dtype)

    filled = np.zeros((1, 0), dtype=dtype)
    rrem = np.array([rows[0]], dtype=dtype)
    crem = cols[None, :].copy()

    for i in range(I - 1):
        for j in range(J):
            if j == J - 1:
                v = rrem
                filled = np.concatenate([filled, v[:, None]], axis=1)
                crem = crem.copy()
                crem[:, j] -= v
                rrem = np.full(len(filled), rows[i + 1], dtype=dtype)
                continue
            rest = crem[:, j + 1 :].sum(axis=1)
            lo = np.maximum(0, rrem - rest).astype(dtype)
            hi = np.minimum(rrem, crem[:, j]).astype(dtype)
            counts = (hi - lo + 1).astype(np.int64)
            idx = np.repeat(np.arange(len(filled)), counts)
            starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
            v = (np.arange(counts.sum()) - np.repeat(starts, counts)).astype(dtype)
            v += np.repeat(lo, counts)
            filled = np.concatenate([filled[idx], v[:, None]], axis=1)
            crem = crem[idx].copy()
            crem[:, j] -= v
            rrem = rrem[idx] - v
    # last row forced
    filled = np.concatenate([filled, crem], axis=1)
    return filled.reshape(-1, I, J)


def _check_partition(groups: Sequence[Sequence[int]], n: int, what: str) -> list[list[int]]:
    seen: list[int] = []
    out = []
    for g in groups:
        block = [int(v) for v in g]
        if not block:
            raise ValueError(f"empty {what} block")
        if block != list(range(block[0], block[0] + len(block))):
            raise ValueError(f"{what} blocks must be contiguous index runs")
        seen.extend(block)
        out.append(block)
    if sorted(seen) != list(range(n)):
        raise ValueError(f"{what} blocks must partition 0..{n - 1}")
    return out


def collapse(
    t: ContingencyTable,
    row_groups: Sequence[Sequence[int]],
    col_groups: Sequence[Sequence[int]],
) -> ContingencyTable:
    """Merge adjacent levels: cell (g, h) sums counts over the given blocks."""
    rg = _check_partition(row_groups, t.I, "row")
    cg = _check_partition(col_groups, t.J, "column")
    arr = t.as_array()
    out = np.zeros((len(rg), len(cg)), dtype=np.int64)
    for a, rr in enumerate(rg):
        for b, cc in enumerate(cg):
            out[a, b] = arr[np.ix_(rr, cc)].sum()
    return ContingencyTable.from_array(out)


def crosscut(
    t: ContingencyTable, keep_rows: Sequence[int], keep_cols: Sequence[int]
) -> ContingencyTable:
    """Keep only the selected rows and columns; subjects elsewhere are dropped."""
    kr = sorted(int(v) for v in keep_rows)
    kc = sorted(int(v) for v in keep_cols)
    if len(set(kr)) < 2 or len(set(kc)) < 2:
        raise ValueError("cross-cut must retain at least 2 rows and 2 columns")
    if kr[0] < 0 or kr[-1] >= t.I or kc[0] < 0 or kc[-1] >= t.J:
        raise ValueError("cross-cut index out of range")
    arr = t.as_array()[np.ix_(kr, kc)]
    return ContingencyTable.from_array(arr)
