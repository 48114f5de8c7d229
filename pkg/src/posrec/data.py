"""Interaction logs: parsing, re-indexing, splits, subsets, statistics.

A dataset is a list of per-user item sequences, time-ordered, with users and
items re-indexed to contiguous ids. The original ids are kept so the
bijection can be inverted and files can be written back out. Users with
fewer than min_interactions rows after filtering are dropped (and counted).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, UserError
from .numeric import Rng

DEFAULT_MIN_INTERACTIONS = 2
CACHE_FORMAT_VERSION = 1


@dataclass
class SubsetInfo:
    user_budget: int
    item_budget: int


@dataclass
class EvalRow:
    user: int
    context: np.ndarray
    target: int


@dataclass
class Split:
    """Leave-one-out views: last item is the test target, the one before it
    the validation target (users of length 2 have no validation row)."""

    train_sequences: list[np.ndarray]
    valid: list[EvalRow]
    test: list[EvalRow]


@dataclass
class InteractionDataset:
    sequences: list[np.ndarray]
    times: list[np.ndarray]
    num_items: int
    user_ids: list[str]
    item_ids: list[str]
    attributes: np.ndarray | None = None
    source: str = ""
    dropped_users: int = 0
    min_interactions: int = DEFAULT_MIN_INTERACTIONS
    subset_info: SubsetInfo | None = field(default=None)

    @property
    def num_users(self) -> int:
        return len(self.sequences)

    @property
    def num_interactions(self) -> int:
        return int(sum(len(s) for s in self.sequences))

    @property
    def density(self) -> float:
        return self.num_interactions / (self.num_users * self.num_items)

    @property
    def attribute_dim(self) -> int:
        return 0 if self.attributes is None else int(self.attributes.shape[1])

    def history_set(self, user: int) -> set[int]:
        return set(self.sequences[user].tolist())


def _sniff_delimiter(line: str) -> str:
    return "\t" if "\t" in line else ","


def _is_header(fields: list[str]) -> bool:
    try:
        float(fields[2])
        return False
    except ValueError:
        return True


def _parse_rows(path: str, text: str):
    rows = []
    delim = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if delim is None:
            delim = _sniff_delimiter(line)
        fields = [f.strip() for f in line.split(delim)]
        if len(fields) != 3:
            raise DataFormatError(path, line_no, f"expected 3 columns, got {len(fields)}")
        if line_no == 1 and _is_header(fields):
            continue
        try:
            ts = float(fields[2])
        except ValueError:
            raise DataFormatError(path, line_no, f"bad timestamp '{fields[2]}'") from None
        rows.append((fields[0], fields[1], ts))
    return rows


def _assemble(rows, min_interactions: int, source: str) -> InteractionDataset:
    """Group by user, stable-sort by timestamp, re-index users and items."""
    by_user: dict[str, list[tuple[float, int, str]]] = {}
    for order, (u, i, ts) in enumerate(rows):
        by_user.setdefault(u, []).append((ts, order, i))

    sequences, times, user_ids = [], [], []
    item_index: dict[str, int] = {}
    item_ids: list[str] = []
    dropped = 0
    for u, events in by_user.items():
        if len(events) < min_interactions:
            dropped += 1
            continue
        events.sort(key=lambda e: (e[0], e[1]))  # timestamp, ties by input order
        seq = np.empty(len(events), dtype=np.int64)
        tvals = np.empty(len(events), dtype=np.float64)
        for pos, (ts, _, item) in enumerate(events):
            if item not in item_index:
                item_index[item] = len(item_ids)
                item_ids.append(item)
            seq[pos] = item_index[item]
            tvals[pos] = ts
        sequences.append(seq)
        times.append(tvals)
        user_ids.append(u)

    if not sequences:
        raise UserError(f"no users with >= {min_interactions} interactions in {source or 'input'}")
    return InteractionDataset(
        sequences=sequences,
        times=times,
        num_items=len(item_ids),
        user_ids=user_ids,
        item_ids=item_ids,
        source=source,
        dropped_users=dropped,
        min_interactions=min_interactions,
    )


def load_interactions(path: str, min_interactions: int = DEFAULT_MIN_INTERACTIONS) -> InteractionDataset:
    """Read (user, item, timestamp) rows from TSV/CSV, or a saved .npz cache."""
    path = str(path)
    if path.endswith(".npz"):
        return load_cache(path)
    try:
        with io.open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise UserError(f"cannot read {path}: {e}") from None
    rows = _parse_rows(path, text)
    if not rows:
        raise UserError(f"{path} contains no interaction rows")
    return _assemble(rows, min_interactions, source=path)


def save_interactions(ds: InteractionDataset, path: str) -> None:
    """Write the dataset back out as a TSV using the original ids."""
    with io.open(path, "w", encoding="utf-8") as fh:
        for u, (seq, tvals) in enumerate(zip(ds.sequences, ds.times)):
            uid = ds.user_ids[u]
            for item, ts in zip(seq, tvals):
                fh.write(f"{uid}\t{ds.item_ids[int(item)]}\t{ts:g}\n")


def save_cache(ds: InteractionDataset, path: str) -> None:
    lengths = np.array([len(s) for s in ds.sequences], dtype=np.int64)
    payload = {
        "format_version": np.array([CACHE_FORMAT_VERSION]),
        "lengths": lengths,
        "items_flat": np.concatenate(ds.sequences) if ds.sequences else np.empty(0, np.int64),
        "times_flat": np.concatenate(ds.times) if ds.times else np.empty(0, np.float64),
        "user_ids": np.array(ds.user_ids, dtype=str),
        "item_ids": np.array(ds.item_ids, dtype=str),
        "num_items": np.array([ds.num_items]),
        "dropped_users": np.array([ds.dropped_users]),
        "min_interactions": np.array([ds.min_interactions]),
        "source": np.array([ds.source], dtype=str),
    }
    if ds.attributes is not None:
        payload["attributes"] = ds.attributes
    if ds.subset_info is not None:
        payload["subset_budgets"] = np.array(
            [ds.subset_info.user_budget, ds.subset_info.item_budget]
        )
    np.savez(path, **payload)


def load_cache(path: str) -> InteractionDataset:
    try:
        blob = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise UserError(f"cannot read cache {path}: {e}") from None
    if int(blob["format_version"][0]) != CACHE_FORMAT_VERSION:
        raise UserError(f"cache {path} has unsupported format version")
    lengths = blob["lengths"]
    bounds = np.cumsum(lengths)[:-1]
    sequences = [s.copy() for s in np.split(blob["items_flat"], bounds)]
    times = [t.copy() for t in np.split(blob["times_flat"], bounds)]
    return InteractionDataset(
        sequences=sequences,
        times=times,
        num_items=int(blob["num_items"][0]),
        user_ids=[str(u) for u in blob["user_ids"]],
        item_ids=[str(i) for i in blob["item_ids"]],
        attributes=blob["attributes"] if "attributes" in blob else None,
        source=str(blob["source"][0]),
        dropped_users=int(blob["dropped_users"][0]),
        min_interactions=int(blob["min_interactions"][0]),
        subset_info=(
            SubsetInfo(int(blob["subset_budgets"][0]), int(blob["subset_budgets"][1]))
            if "subset_budgets" in blob
            else None
        ),
    )


def load_attributes(path: str, ds: InteractionDataset) -> np.ndarray:
    """Attach a dense attribute matrix from a sidecar with header item_id,a_0,...

    Rows for unknown items are ignored; dataset items missing from the
    sidecar get zero vectors.
    """
    path = str(path)
    with io.open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise UserError(f"{path} is empty")
    delim = _sniff_delimiter(lines[0])
    header = [f.strip() for f in lines[0].split(delim)]
    if header[0] != "item_id" or len(header) < 2:
        raise DataFormatError(path, 1, "attribute header must start with item_id")
    width = len(header) - 1
    index = {orig: i for i, orig in enumerate(ds.item_ids)}
    attrs = np.zeros((ds.num_items, width), dtype=np.float64)
    for line_no, line in enumerate(lines[1:], start=2):
        fields = [f.strip() for f in line.split(delim)]
        if len(fields) != width + 1:
            raise DataFormatError(path, line_no, f"expected {width + 1} columns, got {len(fields)}")
        iid = index.get(fields[0])
        if iid is None:
            continue
        try:
            attrs[iid] = [float(f) for f in fields[1:]]
        except ValueError:
            raise DataFormatError(path, line_no, "bad attribute value") from None
    ds.attributes = attrs
    return attrs


# ---------------------------------------------------------------------------
# splits, subsets, statistics


def leave_one_out(ds: InteractionDataset) -> Split:
    train, valid, test = [], [], []
    for u, seq in enumerate(ds.sequences):
        train.append(seq[:-2].copy())
        test.append(EvalRow(u, seq[:-1].copy(), int(seq[-1])))
        if len(seq) >= 3:
            valid.append(EvalRow(u, seq[:-2].copy(), int(seq[-2])))
    return Split(train_sequences=train, valid=valid, test=test)


def subset(ds: InteractionDataset, user_budget: int, item_budget: int, rng: Rng) -> InteractionDataset:
    """Keep the item_budget most popular items (ties by contiguous id) and a
    uniform sample of user_budget users, then re-filter and re-index."""
    if not 1 <= user_budget <= ds.num_users:
        raise UserError(f"user budget {user_budget} outside [1, {ds.num_users}]")
    if not 1 <= item_budget <= ds.num_items:
        raise UserError(f"item budget {item_budget} outside [1, {ds.num_items}]")

    counts = np.zeros(ds.num_items, dtype=np.int64)
    for seq in ds.sequences:
        np.add.at(counts, seq, 1)
    order = np.lexsort((np.arange(ds.num_items), -counts))  # by count desc, id asc
    kept_items = set(order[:item_budget].tolist())

    kept_users = sorted(rng.choice(np.arange(ds.num_users), size=user_budget, replace=False).tolist())

    rows = []
    for u in kept_users:
        seq, tvals = ds.sequences[u], ds.times[u]
        for item, ts in zip(seq, tvals):
            if int(item) in kept_items:
                rows.append((ds.user_ids[u], ds.item_ids[int(item)], float(ts)))
    if not rows:
        raise UserError("subset is empty: budgets removed every interaction")
    out = _assemble(rows, ds.min_interactions, source=ds.source)
    out.subset_info = SubsetInfo(user_budget=user_budget, item_budget=item_budget)
    if ds.attributes is not None:
        back = {orig: i for i, orig in enumerate(ds.item_ids)}
        out.attributes = np.stack([ds.attributes[back[i]] for i in out.item_ids])
    return out


def stats(ds: InteractionDataset) -> dict:
    """Counts and densities; subset datasets also report the budget-based
    density since the post-filter and budget views disagree in general."""
    out = {
        "users": ds.num_users,
        "items": ds.num_items,
        "interactions": ds.num_interactions,
        "density": ds.density,
        "attribute_dim": ds.attribute_dim,
        "dropped_users": ds.dropped_users,
        "source": ds.source or "-",
    }
    if ds.subset_info is not None:
        out["budget_users"] = ds.subset_info.user_budget
        out["budget_items"] = ds.subset_info.item_budget
        out["budget_density"] = ds.num_interactions / (
            ds.subset_info.user_budget * ds.subset_info.item_budget
        )
    return out


_STATS_TYPES = {
    "users": int, "items": int, "interactions": int, "density": float,
    "attribute_dim": int, "dropped_users": int, "source": str,
    "budget_users": int, "budget_items": int, "budget_density": float,
}


def write_stats_tsv(values: dict, path: str) -> None:
    keys = list(values)
    with io.open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(keys) + "\n")
        fh.write("\t".join(_fmt_stat(values[k]) for k in keys) + "\n")


def _fmt_stat(v) -> str:
    if isinstance(v, float):
        return f"{v:.6e}"
    return str(v)


def read_stats_tsv(path: str) -> dict:
    with io.open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(lines) != 2:
        raise DataFormatError(path, 1, "stats file must have a header and one row")
    keys = lines[0].split("\t")
    vals = lines[1].split("\t")
    if len(keys) != len(vals):
        raise DataFormatError(path, 2, "column count mismatch")
    return {k: _STATS_TYPES.get(k, str)(v) for k, v in zip(keys, vals)}


def format_stats_table(values: dict) -> str:
    width = max(len(k) for k in values)
    lines = [f"{k.ljust(width)}  {_fmt_stat(v)}" for k, v in values.items()]
    return "\n".join(lines)
