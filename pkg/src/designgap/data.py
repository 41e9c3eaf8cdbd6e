"""Market data: variable schemas, on-disk tables, splits with induced gaps, normalization.

On-disk layout
--------------
A dataset is a manifest plus three comma-separated tables with header rows.
The manifest is an INI file::

    [manifest]
    format_version = 1
    n_designs = 20
    n_consumers = 2000
    n_events = 2000
    designs = designs.csv
    consumers = consumers.csv
    events = events.csv

    [design_schema]
    # <block name> = <kind> <cardinality> <channel>
    wheelbase = real 1 objective
    sporty = binary 1 subjective
    body = categorical 4 objective

    [consumer_schema]
    income = real 1 objective

``designs.csv`` has columns ``design_id`` followed by one column per design
block in schema order; ``consumers.csv`` has ``consumer_id`` then one column per
consumer block; ``events.csv`` has ``consumer_id,design_id``. Categorical
values are zero-based indices. Reals are written with ``repr`` so a
save/load round trip is exact. Table paths are relative to the manifest.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

FORMAT_VERSION = 1
KINDS = ("real", "binary", "categorical")
CHANNELS = ("objective", "subjective")


class LoadError(ValueError):
    """A manifest or data table failed validation."""


@dataclass(frozen=True)
class Block:
    name: str
    kind: str
    cardinality: int = 1
    channel: str = "objective"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"block {self.name!r}: unknown kind {self.kind!r}")
        if self.channel not in CHANNELS:
            raise ValueError(f"block {self.name!r}: unknown channel {self.channel!r}")
        if self.kind == "categorical" and self.cardinality < 2:
            raise ValueError(f"block {self.name!r}: categorical cardinality must be >= 2")
        if self.kind != "categorical" and self.cardinality != 1:
            raise ValueError(f"block {self.name!r}: {self.kind} blocks have cardinality 1")

    @property
    def width(self) -> int:
        return self.cardinality if self.kind == "categorical" else 1


@dataclass(frozen=True)
class VariableSchema:
    """Ordered typed blocks. Every block holds one scalar per row."""

    blocks: Tuple[Block, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError("block names must be unique")

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def names(self) -> list:
        return [b.name for b in self.blocks]

    def indices(self, kind: str) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.blocks) if b.kind == kind], dtype=np.intp)

    @property
    def categorical(self) -> list:
        """(column index, cardinality) for every categorical block."""
        return [(i, b.cardinality) for i, b in enumerate(self.blocks) if b.kind == "categorical"]

    @property
    def encoded_width(self) -> int:
        return sum(b.width for b in self.blocks)

    def categories(self) -> set:
        return {(b.kind, b.channel) for b in self.blocks}

    def encode(self, values: np.ndarray) -> np.ndarray:
        """Expand categorical columns to one-hot; real and binary pass through."""
        values = np.asarray(values, dtype=np.float64)
        out = np.zeros((values.shape[0], self.encoded_width))
        col = 0
        for j, b in enumerate(self.blocks):
            if b.kind == "categorical":
                out[np.arange(values.shape[0]), col + values[:, j].astype(np.intp)] = 1.0
            else:
                out[:, col] = values[:, j]
            col += b.width
        return out

    def validate(self, values: np.ndarray, row_labels: Optional[Sequence] = None,
                 what: str = "row") -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.blocks):
            raise LoadError(f"expected {len(self.blocks)} block columns, got shape {values.shape}")
        labels = row_labels if row_labels is not None else range(values.shape[0])
        for j, b in enumerate(self.blocks):
            col = values[:, j]
            bad = ~np.isfinite(col)
            if b.kind == "binary":
                bad |= ~np.isin(col, (0.0, 1.0))
            elif b.kind == "categorical":
                ok = np.isfinite(col)
                bad |= ok & ((col != np.round(col)) | (col < 0) | (col >= b.cardinality))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                if b.kind == "categorical" and np.isfinite(col[i]):
                    problem = f"index out of range ({col[i]:g} not in 0..{b.cardinality - 1})"
                elif b.kind == "binary" and np.isfinite(col[i]):
                    problem = f"binary value {col[i]:g} not in {{0,1}}"
                else:
                    problem = "non-finite value"
                raise LoadError(f"{what} {list(labels)[i]}, block {b.name!r}: {problem}")

    def digest(self) -> str:
        text = ";".join(f"{b.name}:{b.kind}:{b.cardinality}:{b.channel}" for b in self.blocks)
        return hashlib.sha256(text.encode()).hexdigest()


def _readonly(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Designs, consumers and purchase events.

    ``designs`` and ``consumer_values`` hold one column per schema block
    (categoricals as indices). ``X_c`` is the consumer matrix with categorical
    blocks one-hot encoded; it is derived at construction. ``events`` rows are
    ``(consumer_id, design_id)``.
    """

    design_schema: VariableSchema
    consumer_schema: VariableSchema
    design_ids: np.ndarray
    designs: np.ndarray
    consumer_ids: np.ndarray
    consumer_values: np.ndarray
    events: np.ndarray
    X_c: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("design_ids", _readonly(self.design_ids, np.int64))
        set_("designs", _readonly(np.reshape(self.designs, (len(self.design_ids), len(self.design_schema))), np.float64))
        set_("consumer_ids", _readonly(self.consumer_ids, np.int64))
        set_("consumer_values", _readonly(
            np.reshape(self.consumer_values, (len(self.consumer_ids), len(self.consumer_schema))), np.float64))
        set_("events", _readonly(np.reshape(self.events, (-1, 2)), np.int64))
        if len(np.unique(self.design_ids)) != len(self.design_ids):
            raise LoadError("duplicate design_id")
        if len(np.unique(self.consumer_ids)) != len(self.consumer_ids):
            raise LoadError("duplicate consumer_id")
        self.design_schema.validate(self.designs, self.design_ids, "design")
        self.consumer_schema.validate(self.consumer_values, self.consumer_ids, "consumer")
        unknown_d = ~np.isin(self.events[:, 1], self.design_ids)
        if unknown_d.any():
            i = int(np.flatnonzero(unknown_d)[0])
            raise LoadError(f"event {i}: unknown design {self.events[i, 1]}")
        unknown_c = ~np.isin(self.events[:, 0], self.consumer_ids)
        if unknown_c.any():
            i = int(np.flatnonzero(unknown_c)[0])
            raise LoadError(f"event {i}: unknown consumer {self.events[i, 0]}")
        set_("X_c", _readonly(self.consumer_schema.encode(self.consumer_values), np.float64))

    @property
    def n_designs(self) -> int:
        return len(self.design_ids)

    @property
    def n_consumers(self) -> int:
        return len(self.consumer_ids)

    @property
    def X_d(self) -> np.ndarray:
        """Design matrix with categoricals one-hot encoded."""
        return self.design_schema.encode(self.designs)

    def design_rows(self, ids) -> np.ndarray:
        """Row positions of ``ids`` in the design table."""
        return _positions(self.design_ids, ids, "design")

    def consumer_rows(self, ids) -> np.ndarray:
        return _positions(self.consumer_ids, ids, "consumer")

    def purchasers(self, design_ids: Iterable[int]) -> np.ndarray:
        """Sorted ids of consumers with at least one event on any of ``design_ids``."""
        mask = np.isin(self.events[:, 1], np.asarray(list(design_ids), dtype=np.int64))
        return np.unique(self.events[mask, 0])

    def subset(self, consumer_ids=None, design_ids=None) -> "Dataset":
        """Restrict to the given consumers and designs, keeping their events.

        Events of retained consumers on dropped designs raise, since they would
        silently change what those consumers chose.
        """
        cids = self.consumer_ids if consumer_ids is None else np.asarray(consumer_ids, np.int64)
        dids = self.design_ids if design_ids is None else np.asarray(design_ids, np.int64)
        crow = self.consumer_rows(cids)
        drow = self.design_rows(dids)
        ev = self.events[np.isin(self.events[:, 0], cids)]
        if not np.isin(ev[:, 1], dids).all():
            raise ValueError("subset drops a design that retained consumers purchased")
        return replace(self, design_ids=self.design_ids[drow], designs=self.designs[drow],
                       consumer_ids=self.consumer_ids[crow],
                       consumer_values=self.consumer_values[crow], events=ev)

    def event_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Events as (consumer row, design row) position arrays."""
        return self.consumer_rows(self.events[:, 0]), self.design_rows(self.events[:, 1])


def _positions(ids: np.ndarray, wanted, what: str) -> np.ndarray:
    wanted = np.atleast_1d(np.asarray(wanted, dtype=np.int64))
    if wanted.size == 0:
        return np.zeros(0, dtype=np.intp)
    order = np.argsort(ids, kind="stable")
    pos = np.searchsorted(ids, wanted, sorter=order)
    pos = np.clip(pos, 0, len(ids) - 1)
    rows = order[pos] if len(ids) else pos
    if len(ids) == 0 or (ids[rows] != wanted).any():
        missing = wanted[ids[rows] != wanted] if len(ids) else wanted
        raise KeyError(f"unknown {what} id(s): {missing[:5].tolist()}")
    return rows


# -- serialization ---------------------------------------------------------------------

def _schema_lines(schema: VariableSchema) -> dict:
    return {b.name: f"{b.kind} {b.cardinality} {b.channel}" for b in schema.blocks}


def _parse_schema(section) -> VariableSchema:
    blocks = []
    for name, spec in section.items():
        parts = spec.split()
        if len(parts) != 3:
            raise LoadError(f"schema entry {name!r}: expected '<kind> <cardinality> <channel>'")
        try:
            blocks.append(Block(name, parts[0], int(parts[1]), parts[2]))
        except ValueError as exc:
            raise LoadError(str(exc)) from exc
    return VariableSchema(tuple(blocks))


def _fmt(x: float, block: Block) -> str:
    return repr(float(x)) if block.kind == "real" else str(int(x))


def save_dataset(ds: Dataset, out_dir, stem: str = "") -> Path:
    """Write manifest and tables into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = {k: f"{stem}{k}.csv" for k in ("designs", "consumers", "events")}

    with open(out / names["designs"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["design_id"] + ds.design_schema.names)
        for did, row in zip(ds.design_ids, ds.designs):
            w.writerow([int(did)] + [_fmt(v, b) for v, b in zip(row, ds.design_schema.blocks)])
    with open(out / names["consumers"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["consumer_id"] + ds.consumer_schema.names)
        for cid, row in zip(ds.consumer_ids, ds.consumer_values):
            w.writerow([int(cid)] + [_fmt(v, b) for v, b in zip(row, ds.consumer_schema.blocks)])
    with open(out / names["events"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["consumer_id", "design_id"])
        w.writerows(ds.events.tolist())

    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["manifest"] = {
        "format_version": str(FORMAT_VERSION),
        "n_designs": str(ds.n_designs),
        "n_consumers": str(ds.n_consumers),
        "n_events": str(len(ds.events)),
        **names,
    }
    cp["design_schema"] = _schema_lines(ds.design_schema)
    cp["consumer_schema"] = _schema_lines(ds.consumer_schema)
    path = out / f"{stem}manifest.ini"
    with open(path, "w") as fh:
        cp.write(fh)
    return path


def _read_table(path: Path, id_col: str, schema: VariableSchema):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    header = rows[0] if rows else []
    expected = [id_col] + schema.names
    if header != expected:
        raise LoadError(f"{path.name}: header {header} does not match schema {expected}")
    ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(expected):
            raise LoadError(f"{path.name} line {lineno}: expected {len(expected)} fields")
        try:
            ids.append(int(row[0]))
            values.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise LoadError(f"{path.name} line {lineno}: {exc}") from exc
    return np.array(ids, dtype=np.int64), np.array(values, dtype=np.float64).reshape(
        len(ids), len(schema))


def load_dataset(manifest_path) -> Dataset:
    """Load and validate a dataset from its manifest.

    Raises
    ------
    LoadError
        On a missing file, a malformed manifest, a schema violation (the
        message names the offending row and block), an event referencing an
        unknown design or consumer, or counts that disagree with the header.
    """
    path = Path(manifest_path)
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise LoadError(f"cannot read manifest {path}: {exc}") from exc
    for sec in ("manifest", "design_schema", "consumer_schema"):
        if sec not in cp:
            raise LoadError(f"manifest missing [{sec}] section")
    head = cp["manifest"]
    if head.get("format_version") != str(FORMAT_VERSION):
        raise LoadError(f"unsupported format_version {head.get('format_version')!r}")

    dschema = _parse_schema(cp["design_schema"])
    cschema = _parse_schema(cp["consumer_schema"])
    base = path.parent
    try:
        did, dvals = _read_table(base / head["designs"], "design_id", dschema)
        cid, cvals = _read_table(base / head["consumers"], "consumer_id", cschema)
        evpath = base / head["events"]
    except KeyError as exc:
        raise LoadError(f"manifest missing key {exc}") from exc
    try:
        with open(evpath, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise LoadError(f"cannot read {evpath}: {exc}") from exc
    if not rows or rows[0] != ["consumer_id", "design_id"]:
        raise LoadError(f"{evpath.name}: bad header")
    try:
        events = np.array([[int(a), int(b)] for a, b in rows[1:]], dtype=np.int64).reshape(-1, 2)
    except ValueError as exc:
        raise LoadError(f"{evpath.name}: {exc}") from exc

    ds = Dataset(dschema, cschema, did, dvals, cid, cvals, events)
    for key, got in (("n_designs", ds.n_designs), ("n_consumers", ds.n_consumers),
                     ("n_events", len(ds.events))):
        if key in head and int(head[key]) != got:
            raise LoadError(f"manifest says {key}={head[key]} but tables hold {got}")
    return ds


# -- splitting --------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """How to partition consumers and which designs to hold out as induced gaps."""

    seed: int = 0
    train: float = 0.7
    val: float = 0.15
    test: float = 0.15
    val_gap_ids: Tuple[int, ...] = ()
    test_gap_ids: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "val_gap_ids", tuple(int(i) for i in self.val_gap_ids))
        object.__setattr__(self, "test_gap_ids", tuple(int(i) for i in self.test_gap_ids))
        if min(self.train, self.val, self.test) < 0 or not math.isclose(
                self.train + self.val + self.test, 1.0, abs_tol=1e-9):
            raise ValueError("split fractions must be non-negative and sum to 1")
        if set(self.val_gap_ids) & set(self.test_gap_ids):
            raise ValueError("validation and test gap designs must be disjoint")

    @property
    def held_out_ids(self) -> Tuple[int, ...]:
        return self.val_gap_ids + self.test_gap_ids


@dataclass(frozen=True)
class Splits:
    """Consumer partition. ``train``/``val``/``test`` carry only held-in designs;
    the two gap pools carry the full catalog."""

    spec: SplitSpec
    full: Dataset
    train: Dataset
    val: Dataset
    test: Dataset
    gap_val: Dataset
    gap_test: Dataset

    @property
    def held_in_ids(self) -> np.ndarray:
        return self.train.design_ids


def split_dataset(ds: Dataset, spec: SplitSpec) -> Splits:
    """Partition consumers into train/val/test plus the two induced-gap pools.

    Every purchaser of a held-out design is removed from the ordinary pools.
    A consumer who bought both a validation-gap and a test-gap design goes to
    the test-gap pool so the pools stay disjoint.
    """
    unknown = set(spec.held_out_ids) - set(ds.design_ids.tolist())
    if unknown:
        raise KeyError(f"held-out design id(s) not in catalog: {sorted(unknown)}")
    gap_test = ds.purchasers(spec.test_gap_ids)
    gap_val = np.setdiff1d(ds.purchasers(spec.val_gap_ids), gap_test)
    rest = np.setdiff1d(ds.consumer_ids, np.union1d(gap_test, gap_val))

    rng = np.random.default_rng(spec.seed)
    rest = rest[rng.permutation(len(rest))]
    n_train = int(round(spec.train * len(rest)))
    n_val = int(round(spec.val * len(rest)))
    n_val = min(n_val, len(rest) - n_train)
    tr, va, te = rest[:n_train], rest[n_train:n_train + n_val], rest[n_train + n_val:]

    held_in = np.setdiff1d(ds.design_ids, np.asarray(spec.held_out_ids, dtype=np.int64))
    held_in = ds.design_ids[np.isin(ds.design_ids, held_in)]
    sub = lambda c, d: ds.subset(np.sort(c), d)  # noqa: E731
    return Splits(spec, ds, sub(tr, held_in), sub(va, held_in), sub(te, held_in),
                  sub(gap_val, None), sub(gap_test, None))


# -- normalization ------------------------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    """Per-block standardization statistics for real blocks.

    ``clamped`` names real blocks whose training variance was zero; their
    scale was set to 1.
    """

    design_cols: np.ndarray
    design_mean: np.ndarray
    design_std: np.ndarray
    consumer_cols: np.ndarray
    consumer_mean: np.ndarray
    consumer_std: np.ndarray
    clamped: Tuple[str, ...] = ()


def _stats(values: np.ndarray, cols: np.ndarray, names: list, prefix: str):
    sub = values[:, cols]
    mean = sub.mean(axis=0) if len(sub) else np.zeros(len(cols))
    std = sub.std(axis=0) if len(sub) else np.ones(len(cols))
    flat = std < 1e-12
    std = np.where(flat, 1.0, std)
    return mean, std, [f"{prefix}.{names[c]}" for c in cols[flat]]


def fit_normalizer(train: Dataset) -> Normalizer:
    """Population mean/std of every real block over the training split.

    Design statistics are taken once per catalog design; consumer statistics
    once per consumer.
    """
    dcols = train.design_schema.indices("real")
    ccols = train.consumer_schema.indices("real")
    dm, dsd, dflat = _stats(train.designs, dcols, train.design_schema.names, "design")
    cm, csd, cflat = _stats(train.consumer_values, ccols, train.consumer_schema.names, "consumer")
    clamped = tuple(dflat + cflat)
    if clamped:
        warnings.warn(f"zero-variance real blocks, scale clamped to 1: {', '.join(clamped)}",
                      RuntimeWarning, stacklevel=2)
    return Normalizer(dcols, dm, dsd, ccols, cm, csd, clamped)


def normalize_designs(nrm: Normalizer, designs: np.ndarray) -> np.ndarray:
    """Standardize raw design block rows that are not part of a dataset."""
    designs = np.array(np.atleast_2d(designs), dtype=np.float64)
    designs[:, nrm.design_cols] = (designs[:, nrm.design_cols] - nrm.design_mean) / nrm.design_std
    return designs


def apply_normalizer(nrm: Normalizer, ds: Dataset) -> Dataset:
    designs = normalize_designs(nrm, ds.designs)
    cons = np.array(ds.consumer_values)
    cons[:, nrm.consumer_cols] = (cons[:, nrm.consumer_cols] - nrm.consumer_mean) / nrm.consumer_std
    return replace(ds, designs=designs, consumer_values=cons)


def normalize_splits(splits: Splits) -> Tuple[Splits, Normalizer]:
    """Fit on ``splits.train`` and transform every part with those statistics."""
    nrm = fit_normalizer(splits.train)
    f = lambda d: apply_normalizer(nrm, d)  # noqa: E731
    return Splits(splits.spec, f(splits.full), f(splits.train), f(splits.val), f(splits.test),
                  f(splits.gap_val), f(splits.gap_test)), nrm
