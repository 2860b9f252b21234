"""Dataset container, pair bookkeeping, file ingestion and minibatch sampling.

Node pairs are always unordered and stored as ``(i, j)`` with ``i < j``.  The
set of all pairs is never materialised for sampling: a pair is addressed by its
row-major position ("code") in the strict upper triangle of an ``n x n`` matrix,

    code(i, j) = i * (2n - i - 1) / 2 + (j - i - 1),

which runs over ``0 .. n(n-1)/2 - 1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

__all__ = [
    "Dataset",
    "PairBatch",
    "pair_count",
    "pair_to_code",
    "code_to_pair",
    "positive_pairs",
    "sample_batch",
    "load_dataset",
    "save_dataset",
]


def pair_count(n):
    """Number of unordered node pairs, n(n-1)/2."""
    if n < 0:
        raise ValidationError(f"node count must be non-negative, got {n}")
    return n * (n - 1) // 2


def pair_to_code(i, j, n):
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


def code_to_pair(codes, n):
    """Invert :func:`pair_to_code` by triangular-number inversion."""
    k = np.asarray(codes, dtype=np.int64)
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(np.maximum(b * b - 8.0 * k, 0.0))) / 2).astype(np.int64)
    # float sqrt can land one row off in either direction
    start = i * (2 * n - i - 1) // 2
    i = np.where(start > k, i - 1, i)
    nxt = (i + 1) * (2 * n - i - 2) // 2
    i = np.where(nxt <= k, i + 1, i)
    start = i * (2 * n - i - 1) // 2
    j = k - start + i + 1
    return i, j


@dataclass(frozen=True, eq=False)
class Dataset:
    """Data vectors, view tags and sparse symmetric link weights.

    ``blocks[d]`` holds the feature rows of view ``d``; node ``i`` is row
    ``rows[i]`` of ``blocks[views[i]]``.  View ids are 0-based in memory and
    1-based in files.  ``pairs`` is sorted lexicographically and only holds
    pairs with positive weight.
    """

    blocks: tuple
    views: np.ndarray
    rows: np.ndarray
    pairs: np.ndarray
    weights: np.ndarray
    load_stats: dict = field(default_factory=dict)

    @classmethod
    def build(cls, features, pairs=(), weights=None, views=None, load_stats=None):
        """Validate inputs and return a Dataset.

        ``features`` is an ``(n, p)`` array, or a sequence of 1-D rows when the
        views have different dimensions.  ``views`` are 0-based view ids.
        Pairs may be given in any orientation; they must be unique after
        orienting to ``i < j`` (use :func:`load_dataset` for merging).
        """
        if isinstance(features, np.ndarray) and features.ndim == 2:
            row_list = None
            n = features.shape[0]
        else:
            row_list = [np.asarray(r, dtype=float).ravel() for r in features]
            n = len(row_list)
        if views is None:
            views = np.zeros(n, dtype=np.int64)
        views = np.asarray(views, dtype=np.int64).ravel()
        if views.shape != (n,):
            raise ValidationError(f"expected {n} view tags, got {views.shape[0]}")
        if n and views.min() < 0:
            raise ValidationError("view ids must be non-negative")
        n_views = int(views.max()) + 1 if n else 1
        rows = np.zeros(n, dtype=np.int64)
        blocks = []
        for d in range(n_views):
            idx = np.flatnonzero(views == d)
            rows[idx] = np.arange(idx.size)
            if row_list is None:
                blk = np.array(features[idx], dtype=float)
            else:
                dims = {row_list[i].size for i in idx}
                if len(dims) > 1:
                    raise ValidationError(
                        f"view {d + 1} rows have differing dimensions {sorted(dims)}"
                    )
                p = dims.pop() if dims else 0
                blk = np.array([row_list[i] for i in idx], dtype=float).reshape(idx.size, p)
            if not np.all(np.isfinite(blk)):
                raise ValidationError(f"view {d + 1} features contain non-finite values")
            blk.setflags(write=False)
            blocks.append(blk)

        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(len(pairs), dtype=np.int64)
        weights = np.asarray(weights).ravel()
        if weights.shape[0] != pairs.shape[0]:
            raise ValidationError("pairs and weights differ in length")
        if weights.size and not np.all(weights == np.round(weights)):
            raise ValidationError("link weights must be integers")
        weights = weights.astype(np.int64)
        if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
            raise ValidationError(f"pair index out of range [0, {n})")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ValidationError("self-loops are not allowed")
        if np.any(weights < 0):
            raise ValidationError("link weights must be non-negative")
        keep = weights > 0
        pairs, weights = pairs[keep], weights[keep]
        pairs = np.sort(pairs, axis=1)
        codes = pair_to_code(pairs[:, 0], pairs[:, 1], n)
        order = np.argsort(codes, kind="stable")
        codes = codes[order]
        if np.any(np.diff(codes) == 0):
            raise ValidationError("duplicate pairs")
        pairs = np.ascontiguousarray(pairs[order])
        weights = weights[order]
        for arr in (views, rows, pairs, weights):
            arr.setflags(write=False)
        ds = cls(tuple(blocks), views, rows, pairs, weights, dict(load_stats or {}))
        object.__setattr__(ds, "_codes", codes)
        return ds

    # -- shape --------------------------------------------------------------
    @property
    def n(self):
        return int(self.views.shape[0])

    @property
    def n_views(self):
        return len(self.blocks)

    @property
    def dims(self):
        return tuple(b.shape[1] for b in self.blocks)

    @property
    def features(self):
        """The ``(n, p)`` feature matrix of a single-view dataset."""
        if self.n_views != 1:
            raise ValidationError("features matrix is only defined for single-view data")
        return self.blocks[0]

    def x(self, i):
        return self.blocks[self.views[i]][self.rows[i]]

    @property
    def num_pairs(self):
        return pair_count(self.n)

    @property
    def num_positive(self):
        return int(self.pairs.shape[0])

    # -- weights ------------------------------------------------------------
    def weight_of(self, i, j):
        """Vectorised weight lookup for pairs ``(i, j)`` (either orientation)."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        codes = pair_to_code(lo, hi, self.n)
        pos = np.searchsorted(self._codes, codes)
        pos = np.minimum(pos, max(len(self._codes) - 1, 0))
        if len(self._codes) == 0:
            return np.zeros(codes.shape, dtype=np.int64)
        hit = (self._codes[pos] == codes) & (lo != hi)
        return np.where(hit, self.weights[pos], 0)

    def all_pairs(self):
        """All pairs ``i < j`` in code order, as two read-only index arrays."""
        cache = self.__dict__.setdefault("_cache", {})
        if "all_pairs" not in cache:
            i, j = np.triu_indices(self.n, k=1)
            i.setflags(write=False)
            j.setflags(write=False)
            cache["all_pairs"] = (i, j)
        return cache["all_pairs"]

    def dense_weights(self):
        """Weight of every pair in code order (read-only)."""
        cache = self.__dict__.setdefault("_cache", {})
        if "dense_weights" not in cache:
            w = np.zeros(pair_count(self.n))
            w[self._codes] = self.weights
            w.setflags(write=False)
            cache["dense_weights"] = w
        return cache["dense_weights"]

    def positive_codes(self):
        return self._codes

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_views == other.n_views
            and all(np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks))
            and np.array_equal(self.views, other.views)
            and np.array_equal(self.pairs, other.pairs)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"Dataset(n={self.n}, dims={self.dims}, "
            f"positive_pairs={self.num_positive})"
        )


@dataclass(frozen=True)
class PairBatch:
    positive_pairs: np.ndarray  # (m1, 2), drawn from the positive-weight pairs
    contrast_pairs: np.ndarray  # (m2, 2), drawn from all pairs

    @property
    def m1(self):
        return int(self.positive_pairs.shape[0])

    @property
    def m2(self):
        return int(self.contrast_pairs.shape[0])


def positive_pairs(d):
    """Sorted list of all pairs with positive weight."""
    return [(int(i), int(j)) for i, j in d.pairs]


def _sample_codes(total, m, rng):
    """Uniform sample of ``m`` distinct integers from ``[0, total)`` by rejection."""
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    if 2 * m > total:
        # dense regime: total is small enough to permute
        return rng.permutation(total)[:m].astype(np.int64)
    chosen = np.zeros(0, dtype=np.int64)
    while chosen.size < m:
        draw = rng.integers(0, total, size=m - chosen.size, dtype=np.int64)
        _, first = np.unique(draw, return_index=True)
        draw = draw[np.sort(first)]
        draw = draw[~np.isin(draw, chosen)]
        chosen = np.concatenate([chosen, draw])
    return chosen


def sample_batch(d, m1, m2, rng):
    """Draw positive and contrast pairs uniformly without replacement."""
    n_pos, n_all = d.num_positive, d.num_pairs
    if m1 < 0 or m2 < 0:
        raise ValidationError("batch sizes must be non-negative")
    if m1 > n_pos:
        raise ValidationError(f"m1={m1} exceeds the {n_pos} positive pairs")
    if m2 > n_all:
        raise ValidationError(f"m2={m2} exceeds the {n_all} node pairs")
    pos = d.pairs[rng.choice(n_pos, size=m1, replace=False)] if m1 else np.zeros((0, 2), np.int64)
    codes = _sample_codes(n_all, m2, rng)
    ci, cj = code_to_pair(codes, d.n)
    return PairBatch(np.asarray(pos, dtype=np.int64).reshape(-1, 2), np.stack([ci, cj], axis=1))


# -- file I/O ----------------------------------------------------------------

def _content_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def _read_features(path):
    rows = []
    sep = None
    for lineno, line in _content_lines(path):
        if sep is None:
            sep = "\t" if "\t" in line else ("," if "," in line else "")
        parts = line.split(sep) if sep else line.split()
        try:
            rows.append(np.array([float(v) for v in parts], dtype=float))
        except ValueError:
            raise ParseError("non-numeric feature value", path, lineno) from None
    return rows


def _read_edges(path, n):
    best = {}
    self_loops = duplicates = 0
    for lineno, line in _content_lines(path):
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ParseError(f"expected 'i j [w]', got {len(parts)} fields", path, lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
            w = int(parts[2]) if len(parts) == 3 else 1
        except ValueError:
            raise ParseError("edge fields must be integers", path, lineno) from None
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"{path}:{lineno}: node index out of range [0, {n})")
        if w < 0:
            raise ValidationError(f"{path}:{lineno}: negative link weight {w}")
        if i == j:
            self_loops += 1
            continue
        key = (i, j) if i < j else (j, i)
        if key in best:
            duplicates += 1
            best[key] = max(best[key], w)
        else:
            best[key] = w
    return best, self_loops, duplicates


def _read_views(path):
    tags = []
    for lineno, line in _content_lines(path):
        try:
            tag = int(line)
        except ValueError:
            raise ParseError("view tag must be an integer", path, lineno) from None
        if tag < 1:
            raise ValidationError(f"{path}:{lineno}: view tags start at 1, got {tag}")
        tags.append(tag - 1)
    return np.array(tags, dtype=np.int64)


def load_dataset(features_path, edges_path=None, views_path=None):
    """Read a dataset from text files.

    Features: one row of floats per node, tab- or comma-separated
    (auto-detected from the first row).  Edges: ``i j [w]`` per line with
    0-based node indices and ``w`` defaulting to 1.  Views: one 1-based tag
    per line.  ``#`` starts a comment in every format.  Without an edges file
    the dataset has no links.

    Edges given in both directions are merged with ``w = max``; self-loops
    are dropped.  Both events are counted in ``Dataset.load_stats``.
    """
    rows = _read_features(features_path)
    n = len(rows)
    views = _read_views(views_path) if views_path is not None else None
    if views is not None and views.size != n:
        raise ValidationError(f"{views_path}: {views.size} view tags for {n} feature rows")
    if views is None:
        dims = {r.size for r in rows}
        if len(dims) > 1:
            raise ValidationError(f"{features_path}: rows have differing dimensions {sorted(dims)}")
        features = np.array(rows, dtype=float).reshape(n, dims.pop() if dims else 0)
    else:
        features = rows
    if edges_path is None:
        best, self_loops, duplicates = {}, 0, 0
    else:
        best, self_loops, duplicates = _read_edges(edges_path, n)
    if self_loops:
        log.warning("%s: dropped %d self-loop(s)", edges_path, self_loops)
    if duplicates:
        log.warning("%s: merged %d duplicate edge(s) with max weight", edges_path, duplicates)
    keys = sorted(best)
    pairs = np.array(keys, dtype=np.int64).reshape(-1, 2)
    weights = np.array([best[k] for k in keys], dtype=np.int64)
    stats = {"self_loops": self_loops, "duplicates": duplicates}
    return Dataset.build(features, pairs, weights, views=views, load_stats=stats)


def save_dataset(d, features_path, edges_path, views_path=None):
    """Write ``d`` in the formats read by :func:`load_dataset`.

    Floats use 17 significant digits so a reload is bit-identical.
    """
    with open(features_path, "w") as fh:
        for i in range(d.n):
            fh.write("\t".join(f"{v:.17g}" for v in d.x(i)) + "\n")
    with open(edges_path, "w") as fh:
        for (i, j), w in zip(d.pairs, d.weights):
            fh.write(f"{i}\t{j}\t{w}\n")
    if views_path is not None:
        with open(views_path, "w") as fh:
            fh.writelines(f"{v + 1}\n" for v in d.views)
    elif d.n_views > 1:
        raise ValidationError("multi-view dataset needs a views file")
    return Path(features_path), Path(edges_path)
