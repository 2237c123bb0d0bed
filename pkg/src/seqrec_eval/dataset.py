"""Interaction logs, 5-core preprocessing, leave-one-out splits and item counts."""
from __future__ import annotations

import gzip
import io
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

BUNDLE_VERSION = 1


class DatasetError(ValueError):
    pass


class IngestError(DatasetError):
    pass


class EmptyInputError(IngestError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class SplitError(DatasetError):
    pass


class PreprocessWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: int

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")


@dataclass(frozen=True)
class ColumnFormat:
    """Where to find user, item and timestamp in a delimited text file."""

    sep: str = "\t"
    user_col: int = 0
    item_col: int = 1
    time_col: int = 2
    header: bool = False

    @classmethod
    def preset(cls, name: str) -> "ColumnFormat":
        presets = {
            "tsv": cls("\t", 0, 1, 2, False),
            "csv": cls(",", 0, 1, 2, True),
            # MovieLens 1M ratings.dat: UserID::MovieID::Rating::Timestamp
            "ml1m": cls("::", 0, 1, 3, False),
            # MovieLens 20M ratings.csv: userId,movieId,rating,timestamp
            "ml20m": cls(",", 0, 1, 3, True),
        }
        try:
            return presets[name]
        except KeyError:
            raise DatasetError(f"unknown format preset {name!r}; known: {sorted(presets)}") from None


class InteractionLog:
    """Column-oriented list of interactions in file order."""

    def __init__(self, users: Sequence[str], items: Sequence[str], timestamps):
        self.users = list(users)
        self.items = list(items)
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        if not (len(self.users) == len(self.items) == len(self.timestamps)):
            raise ValueError("column lengths differ")

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self) -> Iterator[Interaction]:
        for u, i, t in zip(self.users, self.items, self.timestamps.tolist()):
            yield Interaction(u, i, t)

    @classmethod
    def from_records(cls, records) -> "InteractionLog":
        records = [r if isinstance(r, Interaction) else Interaction(*r) for r in records]
        return cls([r.user for r in records], [r.item for r in records],
                   [r.timestamp for r in records])


def _parse_timestamp(raw: str) -> int:
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        value = float(raw)  # may raise; caller reports the line
        if not math.isfinite(value) or value != int(value):
            raise ValueError(f"timestamp {raw!r} is not an integer") from None
        return int(value)


def ingest(path: str | Path, fmt: ColumnFormat | str = "tsv") -> InteractionLog:
    """Parse a delimited (optionally gzipped) interaction file, preserving row order."""
    if isinstance(fmt, str):
        fmt = ColumnFormat.preset(fmt)
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    users: list[str] = []
    items: list[str] = []
    times: list[int] = []
    need = max(fmt.user_col, fmt.item_col, fmt.time_col) + 1
    with opener(path, "rb") as raw:
        stream = io.TextIOWrapper(raw, encoding="utf-8", errors="replace", newline="")
        for lineno, line in enumerate(stream, start=1):
            if fmt.header and lineno == 1:
                continue
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(fmt.sep)
            if len(parts) < need:
                raise IngestError(f"line {lineno}: expected at least {need} columns, got {len(parts)}")
            try:
                ts = _parse_timestamp(parts[fmt.time_col])
            except ValueError:
                raise IngestError(
                    f"line {lineno}: non-numeric timestamp {parts[fmt.time_col]!r}") from None
            if ts < 0:
                raise IngestError(f"line {lineno}: negative timestamp {ts}")
            users.append(parts[fmt.user_col].strip())
            items.append(parts[fmt.item_col].strip())
            times.append(ts)
    if not users:
        raise EmptyInputError(f"{path}: no interactions found")
    return InteractionLog(users, items, times)


@dataclass
class SequenceDataset:
    """Per-user item-index sequences over a dense catalog.

    ``popularity[i]`` counts every occurrence of item ``i`` in ``sequences``.
    """

    catalog: list[str]
    users: list[str]
    sequences: list[np.ndarray]
    popularity: np.ndarray = field(default=None)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sequences = [np.asarray(s, dtype=np.int64) for s in self.sequences]
        n = len(self.catalog)
        for u, s in zip(self.users, self.sequences):
            if s.size and (s.min() < 0 or s.max() >= n):
                raise DatasetError(f"user {u}: item index outside catalog of size {n}")
        if self.popularity is None:
            self.popularity = count_items(self.sequences, n)
        self.popularity = np.asarray(self.popularity, dtype=np.int64)

    @property
    def n_items(self) -> int:
        return len(self.catalog)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_interactions(self) -> int:
        return int(sum(len(s) for s in self.sequences))

    def stats(self) -> dict:
        n_int = self.n_interactions
        return {
            "users": self.n_users,
            "items": self.n_items,
            "actions": n_int,
            "avg_length": n_int / self.n_users,
            "density": n_int / (self.n_users * self.n_items),
        }

    def to_log(self) -> InteractionLog:
        """Rebuild an interaction log; timestamps are sequence positions."""
        users, items, times = [], [], []
        for u, s in zip(self.users, self.sequences):
            for t, i in enumerate(s.tolist()):
                users.append(u)
                items.append(self.catalog[i])
                times.append(t)
        return InteractionLog(users, items, times)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SequenceDataset):
            return NotImplemented
        return (self.catalog == other.catalog and self.users == other.users
                and len(self.sequences) == len(other.sequences)
                and all(np.array_equal(a, b) for a, b in zip(self.sequences, other.sequences))
                and np.array_equal(self.popularity, other.popularity))


def count_items(sequences: Sequence[np.ndarray], n_items: int) -> np.ndarray:
    counts = np.zeros(n_items, dtype=np.int64)
    for s in sequences:
        if len(s):
            counts += np.bincount(s, minlength=n_items)
    return counts


def preprocess(log: InteractionLog, min_count: int = 5, skip_filtering: bool = False,
               one_pass: bool = False) -> SequenceDataset:
    """Group by user, order by time, then drop rare items and short users.

    Default filtering is two passes: items with fewer than ``min_count``
    occurrences go first, then users left with fewer than ``min_count``
    interactions.  ``one_pass`` computes both statistics on the raw log and
    removes in a single step instead.  The two-pass result is not always a
    fixed point; a :class:`PreprocessWarning` is emitted when the output
    still contains items below the threshold.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    n = len(log)
    # stable sort: user first appearance, then timestamp, then file order
    user_order: dict[str, int] = {}
    for u in log.users:
        if u not in user_order:
            user_order[u] = len(user_order)
    user_key = np.fromiter((user_order[u] for u in log.users), dtype=np.int64, count=n)
    order = np.lexsort((np.arange(n), log.timestamps, user_key))
    keep = np.ones(n, dtype=bool)

    if not skip_filtering:
        item_counts = Counter(log.items)
        item_ok = np.fromiter((item_counts[i] >= min_count for i in log.items), dtype=bool, count=n)
        if one_pass:
            user_counts = Counter(log.users)
            user_ok = np.fromiter((user_counts[u] >= min_count for u in log.users), dtype=bool, count=n)
            keep = item_ok & user_ok
        else:
            keep = item_ok
            user_counts = Counter(u for u, k in zip(log.users, keep.tolist()) if k)
            user_ok = np.fromiter((user_counts[u] >= min_count for u in log.users), dtype=bool, count=n)
            keep = keep & user_ok

    item_index: dict[str, int] = {}
    catalog: list[str] = []
    users: list[str] = []
    sequences: list[list[int]] = []
    current_user = None
    for row in order.tolist():
        if not keep[row]:
            continue
        u, it = log.users[row], log.items[row]
        if u != current_user:
            current_user = u
            users.append(u)
            sequences.append([])
        idx = item_index.get(it)
        if idx is None:
            idx = item_index[it] = len(catalog)
            catalog.append(it)
        sequences[-1].append(idx)

    if not sequences:
        raise EmptyDatasetError("preprocessing removed every user")
    ds = SequenceDataset(catalog, users, sequences,
                         metadata={"min_count": min_count, "skip_filtering": bool(skip_filtering),
                                   "one_pass": bool(one_pass)})
    if not skip_filtering and not is_core(ds, min_count):
        warnings.warn(
            f"filtered dataset is not a {min_count}-core: some items fell below the threshold "
            "after user removal; preprocessing again would change it", PreprocessWarning,
            stacklevel=2)
    return ds


def is_core(ds: SequenceDataset, min_count: int) -> bool:
    return bool(ds.popularity.min() >= min_count) and all(len(s) >= min_count for s in ds.sequences)


# ---------------------------------------------------------------- splitting

@dataclass(frozen=True)
class EvaluationInstance:
    """One prediction case: score ``relevant`` given ``prefix``."""

    user: int
    prefix: tuple
    relevant: int

    @property
    def seen(self) -> frozenset:
        return frozenset(self.prefix)


@dataclass
class LeaveOneOutSplit:
    train_sequences: list[np.ndarray]
    validation_instances: list[EvaluationInstance]
    test_instances: list[EvaluationInstance]
    n_items: int


def split(ds: SequenceDataset) -> LeaveOneOutSplit:
    """Last item is the test target, the penultimate one the validation target."""
    train, val, test = [], [], []
    for u, s in enumerate(ds.sequences):
        n = len(s)
        if n < 3:
            raise SplitError(f"user {ds.users[u]!r} has a sequence of length {n}; need at least 3")
        items = tuple(int(i) for i in s)
        train.append(np.asarray(items[: n - 2], dtype=np.int64))
        val.append(EvaluationInstance(u, items[: n - 2], items[n - 2]))
        test.append(EvaluationInstance(u, items[: n - 1], items[n - 1]))
    return LeaveOneOutSplit(train, val, test, ds.n_items)


def popularity_counts(ds: SequenceDataset, source: str = "train") -> np.ndarray:
    """Item occurrence counts over training prefixes (``"train"``) or whole sequences (``"all"``)."""
    if ds.n_users == 0:
        raise EmptyDatasetError("dataset has no sequences")
    if source == "all":
        return ds.popularity.copy()
    if source == "train":
        return count_items([s[: max(len(s) - 2, 0)] for s in ds.sequences], ds.n_items)
    raise ValueError(f"unknown popularity source {source!r}; use 'train' or 'all'")


# ---------------------------------------------------------------- on-disk bundle

def save_dataset(ds: SequenceDataset, directory: str | Path) -> Path:
    """Write the plain-text dataset bundle.

    Files: ``catalog.tsv`` (index, item id), ``users.tsv`` (index, user id),
    ``sequences.tsv`` (user index, space-separated item indices),
    ``counts.tsv`` (item index, count over all, count over train prefixes),
    ``metadata.json``.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "catalog.tsv", "w", encoding="utf-8", newline="\n") as f:
        f.write("index\titem\n")
        for i, it in enumerate(ds.catalog):
            f.write(f"{i}\t{it}\n")
    with open(d / "users.tsv", "w", encoding="utf-8", newline="\n") as f:
        f.write("index\tuser\n")
        for i, u in enumerate(ds.users):
            f.write(f"{i}\t{u}\n")
    with open(d / "sequences.tsv", "w", encoding="utf-8", newline="\n") as f:
        f.write("user\titems\n")
        for i, s in enumerate(ds.sequences):
            f.write(f"{i}\t{' '.join(map(str, s.tolist()))}\n")
    train = popularity_counts(ds, "train")
    with open(d / "counts.tsv", "w", encoding="utf-8", newline="\n") as f:
        f.write("index\tall\ttrain\n")
        for i, (a, t) in enumerate(zip(ds.popularity.tolist(), train.tolist())):
            f.write(f"{i}\t{a}\t{t}\n")
    meta = {"format_version": BUNDLE_VERSION, **ds.metadata, **ds.stats()}
    (d / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d


def _read_rows(path: Path) -> list[list[str]]:
    lines = path.read_text(encoding="utf-8").split("\n")[1:]
    return [ln.split("\t") for ln in lines if ln]


def load_dataset(directory: str | Path) -> SequenceDataset:
    d = Path(directory)
    meta = json.loads((d / "metadata.json").read_text(encoding="utf-8"))
    if meta.get("format_version") != BUNDLE_VERSION:
        raise DatasetError(f"unsupported dataset bundle version {meta.get('format_version')}")
    catalog = [r[1] for r in _read_rows(d / "catalog.tsv")]
    users = [r[1] for r in _read_rows(d / "users.tsv")]
    sequences = [np.array([int(x) for x in r[1].split()], dtype=np.int64)
                 for r in _read_rows(d / "sequences.tsv")]
    popularity = np.array([int(r[1]) for r in _read_rows(d / "counts.tsv")], dtype=np.int64)
    flags = {k: meta[k] for k in ("min_count", "skip_filtering", "one_pass", "source") if k in meta}
    return SequenceDataset(catalog, users, sequences, popularity, metadata=flags)
