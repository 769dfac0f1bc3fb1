"""Embedding storage, L2 normalization, cosine similarity and top-k selection.

Everything here works in float64. Similarity matrices are dense: rows are
queries, columns are items.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, InsufficientCandidates, ZeroVector

ZERO_NORM = 1e-12
UNIT_TOL = 1e-9

RAW = "raw"
INVERTED_SOFTMAX = "inverted_softmax"
CSLS = "csls"
PROVENANCES = (RAW, INVERTED_SOFTMAX, CSLS)


@dataclass(frozen=True)
class EmbeddingSet:
    """A labeled stack of d-dimensional vectors for one modality.

    ``data`` is stored as a read-only float64 array of shape (n, d).
    """

    data: np.ndarray
    ids: tuple[str, ...]
    normalized: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"embedding data must be a non-empty 2-D matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("embedding data contains non-finite entries")
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != data.shape[0]:
            raise ValueError(f"{len(ids)} ids for {data.shape[0]} rows")
        if len(set(ids)) != len(ids):
            raise ValueError("embedding ids must be unique")
        if self.normalized:
            norms = np.linalg.norm(data, axis=1)
            if np.max(np.abs(norms - 1.0)) > UNIT_TOL:
                raise ValueError("normalized=True but some row norms differ from 1")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_array(cls, data, ids: Iterable | None = None, normalized: bool = False) -> "EmbeddingSet":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 1:
            data = data[None, :]
        if ids is None:
            ids = [str(i) for i in range(data.shape[0])]
        return cls(data, tuple(ids), normalized)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SimilarityMatrix:
    """Dense query x item score matrix.

    When built by :func:`cosine_similarity` the raw (pre-normalization)
    embedding sets are kept in ``queries``/``items`` so that losses can
    backpropagate to them.
    """

    scores: np.ndarray
    provenance: str = RAW
    params: Mapping[str, float] = field(default_factory=dict)
    queries: EmbeddingSet | None = None
    items: EmbeddingSet | None = None

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64, copy=True)
        if scores.ndim != 2:
            raise ValueError(f"scores must be 2-D, got shape {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise ValueError("similarity scores contain non-finite entries")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.queries is not None and self.queries.n != scores.shape[0]:
            raise DimensionMismatch("query set does not match score rows")
        if self.items is not None and self.items.n != scores.shape[1]:
            raise DimensionMismatch("item set does not match score columns")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape

    def transpose(self) -> "SimilarityMatrix":
        """Swap the roles of queries and items."""
        return SimilarityMatrix(self.scores.T, self.provenance, self.params, self.items, self.queries)


class PairIndex:
    """Ground-truth correspondence from query indices to sets of item indices.

    One query may have several positives and one item may be the positive of
    several queries (five captions per image). ``inverse()`` gives the
    item -> queries view.
    """

    def __init__(self, positives: Mapping[int, Iterable[int]], n_queries: int, n_items: int):
        pos = {}
        for q, its in positives.items():
            q = int(q)
            its = frozenset(int(i) for i in its)
            if not 0 <= q < n_queries:
                raise IndexError(f"query index {q} out of range [0, {n_queries})")
            if not its:
                raise ValueError(f"query {q} has an empty positive set")
            bad = [i for i in its if not 0 <= i < n_items]
            if bad:
                raise IndexError(f"item index {bad[0]} out of range [0, {n_items})")
            pos[q] = its
        self.positives: dict[int, frozenset[int]] = dict(sorted(pos.items()))
        self.n_queries = int(n_queries)
        self.n_items = int(n_items)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], n_queries: int, n_items: int) -> "PairIndex":
        pos: dict[int, set[int]] = {}
        for q, i in pairs:
            pos.setdefault(int(q), set()).add(int(i))
        return cls(pos, n_queries, n_items)

    @classmethod
    def diagonal(cls, n: int) -> "PairIndex":
        return cls({i: (i,) for i in range(n)}, n, n)

    def __getitem__(self, q: int) -> frozenset[int]:
        return self.positives.get(q, frozenset())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PairIndex):
            return NotImplemented
        return (self.positives, self.n_queries, self.n_items) == (
            other.positives,
            other.n_queries,
            other.n_items,
        )

    def __repr__(self) -> str:
        return f"PairIndex(n_queries={self.n_queries}, n_items={self.n_items}, edges={len(self.edges())})"

    def edges(self) -> list[tuple[int, int]]:
        return [(q, i) for q, its in self.positives.items() for i in sorted(its)]

    def inverse(self) -> "PairIndex":
        return PairIndex.from_pairs(((i, q) for q, i in self.edges()), self.n_items, self.n_queries)

    def covers_all_queries(self) -> bool:
        return len(self.positives) == self.n_queries

    def permutation(self) -> np.ndarray | None:
        """Return ``perm`` with ``perm[q]`` the unique positive of q, or None.

        Only defined when the index is a bijection between a square set of
        queries and items.
        """
        if self.n_queries != self.n_items or not self.covers_all_queries():
            return None
        if any(len(its) != 1 for its in self.positives.values()):
            return None
        perm = np.array([next(iter(self.positives[q])) for q in range(self.n_queries)], dtype=np.intp)
        if len(np.unique(perm)) != len(perm):
            return None
        return perm

    def restrict(self, queries: Sequence[int], items: Sequence[int]) -> "PairIndex":
        """Sub-index on the given query/item subsets, reindexed to 0..len-1."""
        qmap = {q: k for k, q in enumerate(queries)}
        imap = {i: k for k, i in enumerate(items)}
        pos = {}
        for q in queries:
            its = [imap[i] for i in self[q] if i in imap]
            if its:
                pos[qmap[q]] = its
        return PairIndex(pos, len(queries), len(items))


def normalize(e: EmbeddingSet) -> EmbeddingSet:
    """Scale every row to unit L2 norm."""
    norms = np.linalg.norm(e.data, axis=1)
    small = np.flatnonzero(norms < ZERO_NORM)
    if small.size:
        raise ZeroVector(int(small[0]))
    if e.normalized:
        return e
    return EmbeddingSet(e.data / norms[:, None], e.ids, normalized=True)


def cosine_similarity(queries: EmbeddingSet, items: EmbeddingSet) -> SimilarityMatrix:
    if queries.dim != items.dim:
        raise DimensionMismatch(f"query dim {queries.dim} != item dim {items.dim}")
    qn = normalize(queries)
    itn = normalize(items)
    scores = qn.data @ itn.data.T
    return SimilarityMatrix(scores, RAW, {}, queries, items)


def knn_select(anchor_scores, exclude: Iterable[int] = (), k: int = 1) -> list[int]:
    """Indices of the k highest scores outside ``exclude``.

    Sorted by descending score; equal scores go to the lower index first.
    """
    scores = np.asarray(anchor_scores, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    mask = np.ones(scores.shape[0], dtype=bool)
    excl = [int(j) for j in exclude]
    if excl:
        mask[excl] = False
    candidates = np.flatnonzero(mask)
    if k > candidates.size:
        raise InsufficientCandidates(f"need {k} candidates, only {candidates.size} remain after exclusion")
    order = np.argsort(-scores[candidates], kind="stable")
    return [int(j) for j in candidates[order[:k]]]


def topk_mean(scores: np.ndarray, k: int, axis: int = 1) -> np.ndarray:
    """Mean of the k largest entries along ``axis``."""
    n = scores.shape[axis]
    if not 1 <= k <= n:
        raise InsufficientCandidates(f"k={k} outside [1, {n}]")
    part = np.partition(scores, n - k, axis=axis)
    top = np.take(part, np.arange(n - k, n), axis=axis)
    return top.mean(axis=axis)


def normalize_backward(raw: np.ndarray, grad_normalized: np.ndarray) -> np.ndarray:
    """Chain rule through x -> x / ||x|| for every row."""
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    unit = raw / norms
    radial = np.sum(unit * grad_normalized, axis=1, keepdims=True)
    return (grad_normalized - unit * radial) / norms
