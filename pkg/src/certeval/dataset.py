"""Test pools with lazily revealed losses.

A :class:`TestPool` stores every loss but only hands one out through
:meth:`TestPool.reveal`, which is also the single place evaluation cost is
counted. Pools are read from and written to JSONL or CSV.

JSONL records look like ``{"id": "a", "features": [0.1, 2.0], "loss": 0.5, "group": 1}``;
CSV files have the header ``id,f0,...,f{d-1},loss[,group]``.
"""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "LossRecord",
    "RevealReceipt",
    "TestPool",
    "GroupSampler",
    "PoolFormatError",
    "LossRangeError",
    "RaggedFeaturesError",
    "DoubleRevealError",
    "UnknownIdError",
    "ExhaustedGroupError",
    "load_pool",
    "save_pool",
    "unrevealed_in_group",
]


class PoolFormatError(ValueError):
    """A pool file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LossRangeError(ValueError):
    """A record's loss lies outside [0, 1]."""

    def __init__(self, record_id, loss):
        self.record_id = record_id
        super().__init__(f"record {record_id!r} has loss {loss!r} outside [0, 1]")


class RaggedFeaturesError(ValueError):
    """Feature vectors of a pool do not share one length."""


class DoubleRevealError(RuntimeError):
    """A record was revealed a second time."""


class UnknownIdError(KeyError):
    """A record id does not belong to the pool."""


class ExhaustedGroupError(LookupError):
    """Sampling was requested from a group with no unrevealed records."""


@dataclass(frozen=True)
class LossRecord:
    id: str
    features: tuple
    loss: float
    true_group: Optional[int] = None


@dataclass(frozen=True)
class RevealReceipt:
    id: str
    loss: float
    sequence_index: int


class TestPool:
    """An ordered collection of test items whose losses are paid for one at a time.

    Parameters
    ----------
    ids : sequence of str
    features : array-like of shape (n, d)
    losses : array-like of shape (n,)
        Values in [0, 1]. Kept private until revealed.
    groups : array-like of shape (n,), optional
        True group labels, used only by the oracle partition.
    """

    # not a pytest test class despite the name
    __test__ = False

    def __init__(self, ids, features, losses, groups=None):
        ids = [str(i) for i in ids]
        feats = np.asarray(features, dtype=np.float64)
        losses = np.asarray(losses, dtype=np.float64)
        n = len(ids)
        if feats.ndim == 1 and n > 0 and feats.size == 0:
            feats = feats.reshape(n, 0)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise RaggedFeaturesError(f"features must have shape (n, d) with n={n}, got {feats.shape}")
        if losses.shape != (n,):
            raise ValueError(f"losses must have shape ({n},), got {losses.shape}")
        for rid, z in zip(ids, losses):
            if not 0.0 <= z <= 1.0:
                raise LossRangeError(rid, float(z))
        index = {rid: i for i, rid in enumerate(ids)}
        if len(index) != n:
            raise ValueError("record ids must be unique")
        if groups is not None:
            groups = np.asarray(groups)
            if groups.shape != (n,) or groups.dtype.kind not in "iu":
                raise ValueError("groups must be an integer array aligned with ids")
            groups = groups.astype(np.int64)

        self.ids = ids
        self.features = feats
        self.groups = groups
        self._losses = losses
        self._index = index
        self.revealed_mask = np.zeros(n, dtype=bool)
        self.reveal_order = []

    @classmethod
    def from_records(cls, records: Sequence[LossRecord]):
        if not records:
            return cls([], np.zeros((0, 0)), [])
        lengths = {len(r.features) for r in records}
        if len(lengths) > 1:
            raise RaggedFeaturesError(f"feature lengths differ across records: {sorted(lengths)}")
        has_group = [r.true_group is not None for r in records]
        groups = [r.true_group for r in records] if all(has_group) else None
        return cls(
            [r.id for r in records],
            [list(r.features) for r in records],
            [r.loss for r in records],
            groups,
        )

    def __len__(self):
        return len(self.ids)

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def reveal_count(self):
        return len(self.reveal_order)

    @property
    def revealed(self):
        return {self.ids[i] for i in self.reveal_order}

    def index_of(self, record_id):
        try:
            return self._index[record_id]
        except KeyError:
            raise UnknownIdError(record_id) from None

    def records(self):
        """All records, losses included. For export and testing, not for evaluators."""
        out = []
        for i, rid in enumerate(self.ids):
            g = None if self.groups is None else int(self.groups[i])
            out.append(LossRecord(rid, tuple(self.features[i].tolist()), float(self._losses[i]), g))
        return out

    def reveal(self, record_id):
        return self.reveal_at(self.index_of(record_id))

    def reveal_at(self, i):
        """Reveal the record at position ``i`` and charge one evaluation."""
        i = int(i)
        if not 0 <= i < len(self):
            raise UnknownIdError(i)
        if self.revealed_mask[i]:
            raise DoubleRevealError(f"record {self.ids[i]!r} was already revealed")
        self.revealed_mask[i] = True
        self.reveal_order.append(i)
        return RevealReceipt(self.ids[i], float(self._losses[i]), len(self.reveal_order) - 1)

    def revealed_loss(self, i):
        if not self.revealed_mask[i]:
            raise PermissionError(f"loss of record {self.ids[i]!r} has not been revealed")
        return float(self._losses[i])

    def full_mean(self):
        """Mean loss over the entire pool; the target every reported interval must cover."""
        return float(np.mean(self._losses))

    def permuted(self, order):
        """A fresh, unrevealed pool with records rearranged by ``order``."""
        order = np.asarray(order)
        groups = None if self.groups is None else self.groups[order]
        return TestPool([self.ids[i] for i in order], self.features[order], self._losses[order], groups)

    def shuffled(self, seed):
        rng = np.random.default_rng(seed)
        return self.permuted(rng.permutation(len(self)))

    def fresh_copy(self):
        return self.permuted(np.arange(len(self)))

    def same_records(self, other):
        return self.records() == other.records()


class GroupSampler:
    """Unrevealed members of one group, in pool order.

    :meth:`sample` draws uniformly with a seeded generator; :meth:`first`
    takes the earliest in pool order, which is itself uniform when the pool
    order is a seeded shuffle.
    """

    def __init__(self, positions, seed=None):
        self.positions = np.asarray(positions, dtype=np.int64)
        self._rng = np.random.default_rng(seed)

    @property
    def count(self):
        return len(self.positions)

    def first(self):
        if self.count == 0:
            raise ExhaustedGroupError("group has no unrevealed records")
        return int(self.positions[0])

    def sample(self):
        if self.count == 0:
            raise ExhaustedGroupError("group has no unrevealed records")
        return int(self.positions[self._rng.integers(self.count)])


def unrevealed_in_group(pool, assignment, k, seed=None):
    """Count and sampler over the unrevealed records whose label equals ``k``."""
    assignment = np.asarray(assignment)
    if assignment.shape != (len(pool),):
        raise ValueError(f"assignment must label all {len(pool)} records")
    positions = np.flatnonzero((assignment == k) & ~pool.revealed_mask)
    return GroupSampler(positions, seed)


def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = Path(path).suffix.lstrip(".").lower()
    if fmt not in ("jsonl", "csv"):
        raise ValueError(f"unsupported pool format {fmt!r}; use 'jsonl' or 'csv'")
    return fmt


def _parse_group(value, line):
    if value is None or value == "":
        return None
    try:
        g = float(value)
    except (TypeError, ValueError):
        raise PoolFormatError(f"group {value!r} is not an integer", line) from None
    if not g.is_integer():
        raise PoolFormatError(f"group {value!r} is not an integer", line)
    return int(g)


def _checked_record(rid, features, loss, group, line):
    try:
        loss = float(loss)
        features = tuple(float(x) for x in features)
    except (TypeError, ValueError) as exc:
        raise PoolFormatError(str(exc), line) from None
    if not (math.isfinite(loss) and 0.0 <= loss <= 1.0):
        raise LossRangeError(rid, loss)
    return LossRecord(rid, features, loss, group)


def _read_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PoolFormatError(exc.msg, line_no) from None
            if not isinstance(obj, dict):
                raise PoolFormatError("expected a JSON object", line_no)
            missing = {"id", "features", "loss"} - obj.keys()
            if missing:
                raise PoolFormatError(f"missing keys {sorted(missing)}", line_no)
            if not isinstance(obj["features"], list):
                raise PoolFormatError("features must be an array", line_no)
            group = _parse_group(obj.get("group"), line_no)
            records.append(_checked_record(str(obj["id"]), obj["features"], obj["loss"], group, line_no))
    return records


def _read_csv(path):
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PoolFormatError("empty file", 1) from None
        if not header or header[0] != "id" or "loss" not in header:
            raise PoolFormatError("header must start with 'id' and contain 'loss'", 1)
        loss_col = header.index("loss")
        feat_cols = header[1:loss_col]
        if feat_cols != [f"f{j}" for j in range(len(feat_cols))]:
            raise PoolFormatError("feature columns must be named f0..f{d-1}", 1)
        tail = header[loss_col + 1:]
        if tail not in ([], ["group"]):
            raise PoolFormatError(f"unexpected columns after loss: {tail}", 1)
        has_group = bool(tail)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PoolFormatError(f"expected {len(header)} fields, got {len(row)}", line_no)
            group = _parse_group(row[-1], line_no) if has_group else None
            records.append(_checked_record(row[0], row[1:loss_col], row[loss_col], group, line_no))
    return records


def load_pool(path, format=None):
    """Read a pool file; record order is file order and nothing is revealed."""
    fmt = _infer_format(path, format)
    records = _read_jsonl(path) if fmt == "jsonl" else _read_csv(path)
    return TestPool.from_records(records)


def save_pool(pool, path, format=None):
    """Write every record of ``pool``, hidden losses included."""
    fmt = _infer_format(path, format)
    records = pool.records()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for r in records:
                obj = {"id": r.id, "features": list(r.features), "loss": r.loss}
                if r.true_group is not None:
                    obj["group"] = r.true_group
                fh.write(json.dumps(obj) + "\n")
        else:
            writer = csv.writer(fh, lineterminator="\n")
            d = pool.n_features
            has_group = pool.groups is not None
            writer.writerow(["id", *[f"f{j}" for j in range(d)], "loss", *(["group"] if has_group else [])])
            for r in records:
                row = [r.id, *[repr(x) for x in r.features], repr(r.loss)]
                if has_group:
                    row.append(str(r.true_group))
                writer.writerow(row)
    return Path(path)
