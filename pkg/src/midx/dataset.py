"""Implicit-feedback interaction data: loading, filtering, holdout split, popularity."""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

POP_FUNCTIONS = ("raw", "log1p", "pow075")

_CACHE_MAGIC = b"MIDXDS"
_CACHE_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Binary user-item interactions with an optional train/holdout split.

    ``interactions[u]`` is the sorted item-id array of user ``u``. Before
    splitting, ``train`` equals ``interactions`` and ``holdout`` is empty
    per user.
    """

    num_users: int
    num_items: int
    interactions: tuple
    train: tuple
    holdout: tuple
    user_ids: tuple = field(default=(), compare=False)
    item_ids: tuple = field(default=(), compare=False)

    @classmethod
    def from_lists(cls, num_users, num_items, lists, user_ids=(), item_ids=()):
        inter = tuple(np.unique(np.asarray(x, dtype=np.int64)) for x in lists)
        empty = tuple(np.zeros(0, dtype=np.int64) for _ in inter)
        return cls(num_users, num_items, inter, inter, empty, tuple(user_ids), tuple(item_ids))

    def __eq__(self, other):
        if not isinstance(other, InteractionDataset):
            return NotImplemented
        if (self.num_users, self.num_items) != (other.num_users, other.num_items):
            return False
        return all(
            len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))
            for a, b in ((self.interactions, other.interactions), (self.train, other.train),
                         (self.holdout, other.holdout))
        )

    __hash__ = None

    @property
    def num_interactions(self) -> int:
        return int(sum(len(x) for x in self.interactions))

    def train_matrix(self) -> np.ndarray:
        """Dense ``num_users x num_items`` 0/1 matrix of train interactions."""
        y = np.zeros((self.num_users, self.num_items), dtype=np.float64)
        for u, items in enumerate(self.train):
            y[u, items] = 1.0
        return y

    def item_counts(self, split: str = "train") -> np.ndarray:
        lists = self.train if split == "train" else self.interactions
        if not lists:
            return np.zeros(self.num_items, dtype=np.int64)
        return np.bincount(np.concatenate(lists), minlength=self.num_items)


@dataclass(frozen=True)
class PopularityVector:
    counts: np.ndarray
    weights: np.ndarray
    func: str


def _parse_lines(path: Path, threshold):
    users, items = [], []
    splitter = re.compile(r"::|[,\s]+")
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p for p in splitter.split(line) if p]
            if len(parts) < 2:
                raise DatasetError(f"{path}:{lineno}: expected 'user item [value]', got {line!r}")
            if len(parts) >= 3:
                try:
                    value = float(parts[2])
                except ValueError:
                    raise DatasetError(f"{path}:{lineno}: non-numeric value {parts[2]!r}") from None
                if threshold is not None and value < threshold:
                    continue
            users.append(parts[0])
            items.append(parts[1])
    return users, items


def filter_min_interactions(pairs: np.ndarray, min_interactions: int) -> np.ndarray:
    """Drop users and items with fewer than ``min_interactions`` until stable.

    ``pairs`` is an ``(n, 2)`` array of unique (user, item) codes.
    """
    while len(pairs):
        u_cnt = np.bincount(pairs[:, 0])
        i_cnt = np.bincount(pairs[:, 1])
        keep = (u_cnt[pairs[:, 0]] >= min_interactions) & (i_cnt[pairs[:, 1]] >= min_interactions)
        if keep.all():
            break
        pairs = pairs[keep]
    return pairs


def build_dataset(user_keys, item_keys, min_interactions: int = 10) -> InteractionDataset:
    """Dense-reindex raw (user, item) keys, dedupe and apply the iterative filter."""
    u_names, u_codes = np.unique(np.asarray(user_keys), return_inverse=True)
    i_names, i_codes = np.unique(np.asarray(item_keys), return_inverse=True)
    pairs = np.unique(np.stack([u_codes, i_codes], axis=1).reshape(-1, 2), axis=0)
    pairs = filter_min_interactions(pairs, min_interactions)
    if len(pairs) == 0:
        raise DatasetError(f"no interactions left after filtering with min_interactions={min_interactions}")
    kept_u, new_u = np.unique(pairs[:, 0], return_inverse=True)
    kept_i, new_i = np.unique(pairs[:, 1], return_inverse=True)
    order = np.lexsort((new_i, new_u))
    new_u, new_i = new_u[order], new_i[order]
    bounds = np.searchsorted(new_u, np.arange(len(kept_u) + 1))
    lists = [new_i[bounds[u]:bounds[u + 1]] for u in range(len(kept_u))]
    return InteractionDataset.from_lists(
        len(kept_u), len(kept_i), lists,
        user_ids=tuple(u_names[kept_u].tolist()),
        item_ids=tuple(i_names[kept_i].tolist()),
    )


def load_interactions(path, min_interactions: int = 10, threshold=None) -> InteractionDataset:
    """Read ``user item [value]`` lines (whitespace, comma or ``::`` separated).

    Records whose value is below ``threshold`` are dropped; with
    ``threshold=None`` every record counts as an interaction. Raw ids are
    treated as opaque strings and densely reindexed in sorted order.
    """
    path = Path(path)
    users, items = _parse_lines(path, threshold)
    if not users:
        raise DatasetError(f"{path}: no interactions found")
    return build_dataset(users, items, min_interactions)


def split_holdout(ds: InteractionDataset, ratio: float = 0.8, seed: int = 0) -> InteractionDataset:
    """Per user, keep ``ceil(ratio * n_u)`` random items for training."""
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    train, holdout = [], []
    for u, items in enumerate(ds.interactions):
        n = len(items)
        if n < 2:
            raise DatasetError(f"user {u} has {n} interaction(s); at least 2 are needed to split")
        n_train = min(math.ceil(ratio * n), n - 1)
        perm = rng.permutation(n)
        train.append(np.sort(items[perm[:n_train]]))
        holdout.append(np.sort(items[perm[n_train:]]))
    return InteractionDataset(
        ds.num_users, ds.num_items, ds.interactions, tuple(train), tuple(holdout),
        ds.user_ids, ds.item_ids,
    )


def popularity_weights(counts, func: str) -> np.ndarray:
    c = np.asarray(counts, dtype=np.float64)
    if func == "raw":
        return c.copy()
    if func == "log1p":
        return np.log1p(c)
    if func == "pow075":
        return c ** 0.75
    raise ValueError(f"unknown popularity function {func!r}; choose from {POP_FUNCTIONS}")


def popularity_vector(ds_or_counts, func: str = "log1p") -> PopularityVector:
    """Popularity from train-split counts. Items never seen get weight 0."""
    if isinstance(ds_or_counts, InteractionDataset):
        counts = ds_or_counts.item_counts("train")
    else:
        counts = np.asarray(ds_or_counts)
        if np.any(counts < 0):
            raise DatasetError("popularity counts must be non-negative")
    if counts.size == 0 or counts.sum() == 0:
        raise DatasetError("popularity of an empty dataset is undefined")
    return PopularityVector(counts=counts, weights=popularity_weights(counts, func), func=func)


def _write_csr(fh, lists):
    lengths = np.array([len(x) for x in lists], dtype="<u8")
    indptr = np.concatenate([[0], np.cumsum(lengths)]).astype("<u8")
    flat = np.concatenate(lists).astype("<u4") if lists else np.zeros(0, "<u4")
    fh.write(indptr.tobytes())
    fh.write(flat.tobytes())


def _read_csr(buf, pos, n):
    indptr = np.frombuffer(buf, dtype="<u8", count=n + 1, offset=pos)
    pos += 8 * (n + 1)
    nnz = int(indptr[-1])
    flat = np.frombuffer(buf, dtype="<u4", count=nnz, offset=pos).astype(np.int64)
    pos += 4 * nnz
    return tuple(flat[indptr[u]:indptr[u + 1]] for u in range(n)), pos


def save_dataset(ds: InteractionDataset, path) -> None:
    """Binary cache: magic, u32 version, u64 counts, then CSR train and holdout."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<IQQ", _CACHE_VERSION, ds.num_users, ds.num_items))
        _write_csr(fh, ds.train)
        _write_csr(fh, ds.holdout)


def load_dataset(path) -> InteractionDataset:
    buf = Path(path).read_bytes()
    if buf[:len(_CACHE_MAGIC)] != _CACHE_MAGIC:
        raise DatasetError(f"{path}: not a dataset cache")
    pos = len(_CACHE_MAGIC)
    version, n_users, n_items = struct.unpack_from("<IQQ", buf, pos)
    if version != _CACHE_VERSION:
        raise DatasetError(f"{path}: unsupported cache version {version}")
    pos += struct.calcsize("<IQQ")
    train, pos = _read_csr(buf, pos, n_users)
    holdout, pos = _read_csr(buf, pos, n_users)
    inter = tuple(np.union1d(a, b) for a, b in zip(train, holdout))
    return InteractionDataset(int(n_users), int(n_items), inter, train, holdout)
