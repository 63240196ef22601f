"""
Missingness-pattern bookkeeping for blockwise incomplete matrices.

All indices are 0-based. When a fully observed pattern exists it is always
pattern 0; the remaining patterns follow in order of first row occurrence.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

MISSING_TOKENS = frozenset({"", "NA"})


@dataclass(frozen=True)
class IncompleteMatrix:
    """An n x p real matrix with a boolean observedness mask (True = observed).

    Missing cells hold NaN, but nothing downstream relies on that: every
    read of ``values`` goes through ``mask``.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DataError(
                f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        values[~mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_nan(cls, values) -> "IncompleteMatrix":
        values = np.asarray(values, dtype=float)
        return cls(values, ~np.isnan(values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Writable copy of the values with missing cells set to ``fill``."""
        out = np.where(self.mask, self.values, fill)
        return out


@dataclass(frozen=True)
class PatternPartition:
    """Row groups sharing one observed/missing column split."""

    n: int
    p: int
    row_sets: tuple[np.ndarray, ...]
    obs_sets: tuple[np.ndarray, ...]
    mis_sets: tuple[np.ndarray, ...]
    mask_vectors: tuple[np.ndarray, ...]
    complete_pattern_index: Optional[int]
    row_pattern: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.row_sets)

    @property
    def complete_rows(self) -> np.ndarray:
        if self.complete_pattern_index is None:
            return np.empty(0, dtype=np.intp)
        return self.row_sets[self.complete_pattern_index]

    def incomplete_patterns(self) -> list[int]:
        """Indices of the patterns that need imputing."""
        return [k for k in range(self.K) if k != self.complete_pattern_index]

    def usable(self, k: int) -> bool:
        """A pattern with no observed column cannot condition a generator."""
        return self.obs_sets[k].size > 0


@dataclass(frozen=True)
class CommonSets:
    common_obs: np.ndarray
    union_mis: np.ndarray


def partition_patterns(data: IncompleteMatrix,
                       min_pattern_size: Optional[int] = None) -> PatternPartition:
    """Group the rows of ``data`` by their exact mask row.

    Parameters
    ----------
    data : IncompleteMatrix
    min_pattern_size : int, optional
        Emit a ``UserWarning`` for every pattern with fewer rows than this.
        Patterns are never merged.

    Returns
    -------
    PatternPartition
        The complete pattern (if any) first, then first-occurrence order.
    """
    mask = data.mask
    n, p = mask.shape
    if n < 1 or p < 1:
        raise DataError("need at least one row and one column")

    _, first, inverse = np.unique(mask, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = list(np.argsort(first, kind="stable"))
    complete_idx = None
    for pos, u in enumerate(order):
        if mask[first[u]].all():
            complete_idx = 0
            order.insert(0, order.pop(pos))
            break

    relabel = np.empty(len(order), dtype=np.intp)
    relabel[order] = np.arange(len(order))
    row_pattern = relabel[inverse]
    row_pattern.setflags(write=False)

    cols = np.arange(p)
    row_sets, obs_sets, mis_sets, mvecs = [], [], [], []
    for k, u in enumerate(order):
        m = mask[first[u]]
        rows = np.flatnonzero(row_pattern == k)
        mvec = m.astype(float)
        for a in (rows, cols[m], cols[~m], mvec):
            a.setflags(write=False)
        row_sets.append(rows)
        obs_sets.append(cols[m])
        mis_sets.append(cols[~m])
        mvecs.append(mvec)

    part = PatternPartition(n, p, tuple(row_sets), tuple(obs_sets), tuple(mis_sets),
                            tuple(mvecs), complete_idx, row_pattern)
    if min_pattern_size is not None:
        for k, rows in enumerate(part.row_sets):
            if rows.size < min_pattern_size:
                warnings.warn(f"pattern {k} has only {rows.size} rows "
                              f"(floor {min_pattern_size})", UserWarning, stacklevel=2)
    return part


def complement_rows(part: PatternPartition, k: int) -> np.ndarray:
    """Row indices outside pattern ``k``, ascending."""
    if not 0 <= k < part.K:
        raise IndexError(f"pattern index {k} out of range for K={part.K}")
    keep = part.row_pattern != k
    return np.flatnonzero(keep)


def common_sets(part: PatternPartition) -> CommonSets:
    always = np.ones(part.p, dtype=bool)
    for m in part.mask_vectors:
        always &= m.astype(bool)
    cols = np.arange(part.p)
    return CommonSets(cols[always], cols[~always])


def read_csv(path, header: bool = True) -> tuple[IncompleteMatrix, Optional[list[str]]]:
    """Load a numeric CSV; empty fields and ``NA`` are missing."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    names = None
    if header:
        if not rows:
            raise DataError(f"{path}: empty file")
        names, rows = rows[0], rows[1:]
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    if names is not None and len(names) != width:
        raise DataError(f"{path}: header has {len(names)} fields, data rows have {width}")
    values = np.empty((len(rows), width))
    mask = np.ones((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
        for j, tok in enumerate(r):
            tok = tok.strip()
            if tok in MISSING_TOKENS:
                mask[i, j] = False
                values[i, j] = np.nan
                continue
            try:
                values[i, j] = float(tok)
            except ValueError:
                raise DataError(f"{path}: non-numeric field {tok!r} at row {i + 1}") from None
    return IncompleteMatrix(values, mask), names


def write_csv(path, values: np.ndarray, mask: Optional[np.ndarray] = None,
              names: Optional[Sequence[str]] = None) -> None:
    """Write ``values`` with ``repr`` round-trip precision; masked-out cells as ``NA``."""
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if names is not None:
            w.writerow(names)
        for row, mrow in zip(values.tolist(), mask.tolist()):
            w.writerow([repr(v) if ok else "NA" for v, ok in zip(row, mrow)])
