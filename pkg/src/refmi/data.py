"""Trial dataset model: monotone-missingness validation, CSV ingestion, resampling.

Outcomes are held as a dense (n, J+1) float matrix with NaN marking missing
entries; the dropout index D_i of each patient is the last observed visit.
Datasets are immutable after construction and safe to share across threads.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyArm,
    MalformedRow,
    MissingBaseline,
    NonMonotoneMissingness,
)


@dataclass(frozen=True)
class PatientRecord:
    """Record-level view of one patient's row."""

    id: str
    arm: int
    outcomes: tuple  # floats with None for missing entries

    @property
    def dropout(self) -> int:
        d = -1
        for j, y in enumerate(self.outcomes):
            if y is None:
                break
            d = j
        return d


class TrialDataset:
    """Two-arm longitudinal trial data with monotone missingness.

    Attributes:
        ids: patient identifiers (unique strings).
        arm: (n,) int array, 0 = reference, 1 = active.
        outcomes: (n, J+1) float array, NaN beyond each patient's dropout.
        dropout: (n,) int array of last observed visit indices.
    """

    __slots__ = ("ids", "arm", "outcomes", "dropout")

    def __init__(self, ids, arm, outcomes, validate: bool = True):
        self.ids = tuple(str(i) for i in ids)
        self.arm = np.asarray(arm, dtype=np.int64)
        self.outcomes = np.asarray(outcomes, dtype=float)
        if self.outcomes.ndim != 2 or self.outcomes.shape[1] < 1:
            raise ValueError("outcomes must be (n, J+1) with J+1 >= 1")
        if len(self.ids) != self.outcomes.shape[0] or self.arm.shape[0] != self.outcomes.shape[0]:
            raise ValueError("ids, arm and outcomes must agree in length")
        observed = ~np.isnan(self.outcomes)
        prefix = np.cumprod(observed, axis=1).astype(bool)
        self.dropout = prefix.sum(axis=1) - 1
        if validate:
            self._validate(observed, prefix)

    def _validate(self, observed, prefix):
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("patient ids must be unique")
        if not np.isin(self.arm, (0, 1)).all():
            raise ValueError("arm indicator must be 0 or 1")
        no_baseline = ~observed[:, 0]
        if no_baseline.any():
            raise MissingBaseline([self.ids[i] for i in np.flatnonzero(no_baseline)])
        gaps = (observed & ~prefix).any(axis=1)
        if gaps.any():
            raise NonMonotoneMissingness([self.ids[i] for i in np.flatnonzero(gaps)])
        finite = np.isfinite(self.outcomes) | np.isnan(self.outcomes)
        if not finite.all():
            raise ValueError("outcomes must be finite or missing")

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def J(self) -> int:
        return self.outcomes.shape[1] - 1

    @property
    def n_active(self) -> int:
        return int((self.arm == 1).sum())

    @property
    def n_reference(self) -> int:
        return int((self.arm == 0).sum())

    def records(self):
        for i, pid in enumerate(self.ids):
            row = tuple(None if np.isnan(y) else float(y) for y in self.outcomes[i])
            yield PatientRecord(pid, int(self.arm[i]), row)

    def is_complete(self) -> bool:
        return bool((self.dropout == self.J).all())

    def __eq__(self, other):
        if not isinstance(other, TrialDataset):
            return NotImplemented
        if self.ids != other.ids or not np.array_equal(self.arm, other.arm):
            return False
        a, b = self.outcomes, other.outcomes
        return bool(((a == b) | (np.isnan(a) & np.isnan(b))).all())

    def __hash__(self):  # identity hashing; content equality above is for tests
        return id(self)


def load_csv(source) -> TrialDataset:
    """Read a dataset from a path or text stream.

    Expected header: ``id,arm,y0,y1,...,yJ``; blank cells are missing values.
    """
    if hasattr(source, "read"):
        return _parse(csv.reader(source))
    with open(source, newline="", encoding="utf-8") as fh:
        return _parse(csv.reader(fh))


def _parse(reader) -> TrialDataset:
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow("empty input") from None
    header = [h.strip() for h in header]
    if len(header) < 3 or header[0] != "id" or header[1] != "arm":
        raise MalformedRow(f"bad header: {header!r}")
    expected = ["y" + str(j) for j in range(len(header) - 2)]
    if header[2:] != expected:
        raise MalformedRow(f"outcome columns must be {expected}, got {header[2:]!r}")
    width = len(header)
    ids, arms, rows = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != width:
            raise MalformedRow(f"line {lineno}: expected {width} cells, got {len(row)}")
        ids.append(row[0].strip())
        try:
            arm = int(row[1])
        except ValueError:
            raise MalformedRow(f"line {lineno}: arm must be 0 or 1, got {row[1]!r}") from None
        arms.append(arm)
        vals = []
        for cell in row[2:]:
            cell = cell.strip()
            if cell == "":
                vals.append(np.nan)
            else:
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise MalformedRow(f"line {lineno}: bad outcome value {cell!r}") from None
        rows.append(vals)
    if not rows:
        raise MalformedRow("no data rows")
    return TrialDataset(ids, arms, np.array(rows, dtype=float))


def write_csv(data: TrialDataset, target) -> None:
    """Write the dataset in the same schema load_csv reads (blank = missing)."""
    if hasattr(target, "write"):
        _emit(data, target)
    else:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            _emit(data, fh)


def _emit(data: TrialDataset, fh) -> None:
    w = csv.writer(fh)
    w.writerow(["id", "arm"] + ["y" + str(j) for j in range(data.J + 1)])
    for i, pid in enumerate(data.ids):
        cells = ["" if np.isnan(y) else repr(float(y)) for y in data.outcomes[i]]
        w.writerow([pid, int(data.arm[i])] + cells)


def to_csv_string(data: TrialDataset) -> str:
    buf = io.StringIO()
    _emit(data, buf)
    return buf.getvalue()


def resample(data: TrialDataset, rng: np.random.Generator) -> TrialDataset:
    """Nonparametric bootstrap resample, stratified within arm.

    Per-arm sample sizes are preserved exactly; fresh unique ids are assigned.
    """
    idx_parts = []
    for arm in (0, 1):
        members = np.flatnonzero(data.arm == arm)
        if members.size:
            idx_parts.append(members[rng.integers(0, members.size, size=members.size)])
    idx = np.concatenate(idx_parts) if idx_parts else np.empty(0, dtype=int)
    ids = [f"b{k}_{data.ids[i]}" for k, i in enumerate(idx)]
    return TrialDataset(ids, data.arm[idx], data.outcomes[idx], validate=False)


def split_by_arm(data: TrialDataset) -> tuple[TrialDataset, TrialDataset]:
    """Partition into (reference, active) subsets; errors if either is empty."""
    ref = np.flatnonzero(data.arm == 0)
    act = np.flatnonzero(data.arm == 1)
    if ref.size == 0:
        raise EmptyArm("no reference-arm patients")
    if act.size == 0:
        raise EmptyArm("no active-arm patients")
    take = lambda idx: TrialDataset(
        [data.ids[i] for i in idx], data.arm[idx], data.outcomes[idx], validate=False
    )
    return take(ref), take(act)
