"""Matching strategies over a raw query x item similarity matrix.

``rank_naive`` is plain nearest-neighbour ranking. ``rank_inverted_softmax``
and ``rank_csls`` rescale the scores to penalise hub items before ranking.
``match_hungarian`` drops ranking altogether and returns a maximum weight
bipartite matching.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .embedcore import CSLS, INVERTED_SOFTMAX, RAW, SimilarityMatrix, topk_mean
from .errors import InsufficientCandidates, NotRawSimilarity, TooFewQueries

NAIVE = "naive"
HUNGARIAN = "hungarian"
STRATEGIES = (NAIVE, INVERTED_SOFTMAX, CSLS, HUNGARIAN)


@dataclass(frozen=True)
class InferenceConfig:
    strategy: str = NAIVE
    beta: float = 30.0
    csls_k: int = 10

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if self.csls_k < 1:
            raise ValueError("csls_k must be >= 1")


@dataclass
class RankingResult:
    ranked_items: np.ndarray  # (nq, ni), row q is a permutation of item indices
    adjusted: SimilarityMatrix


@dataclass
class Matching:
    edges: list[tuple[int, int]]
    total_weight: float


def _require_raw(sim: SimilarityMatrix):
    if sim.provenance != RAW:
        raise NotRawSimilarity(f"expected raw similarity, got {sim.provenance!r}")


def rank_rows(scores: np.ndarray) -> np.ndarray:
    """Per-row item order by descending score, ties to the lower index."""
    return np.argsort(-scores, axis=1, kind="stable")


def rank_naive(sim: SimilarityMatrix) -> RankingResult:
    _require_raw(sim)
    return RankingResult(rank_rows(sim.scores), sim)


def inverted_softmax_scores(scores: np.ndarray, beta: float) -> np.ndarray:
    """exp(beta*s[q,t]) / sum over the other queries r != q of exp(beta*s[r,t]).

    The leave-one-out denominator is shifted by the largest of the *other*
    exponents, so no term overflows and the column maximum never cancels
    against itself.
    """
    nq = scores.shape[0]
    if nq < 2:
        raise TooFewQueries("inverted softmax needs at least two queries")
    z = beta * scores
    cols = np.arange(z.shape[1])
    top = np.argmax(z, axis=0)
    m1 = z[top, cols]
    rest = z.copy()
    rest[top, cols] = -np.inf
    m2 = rest.max(axis=0)

    # non-argmax rows: the others include the column max, so the sum is >= 1
    # and subtracting the own term is well conditioned
    e1 = np.exp(z - m1)
    loo = e1.sum(axis=0)[None, :] - e1
    with np.errstate(divide="ignore", over="ignore"):
        # the argmax entries of loo may cancel to 0; they are replaced below
        log_den = m1[None, :] + np.log(loo)
        den_top = np.exp(rest - m2).sum(axis=0)
        log_den[top, cols] = m2 + np.log(den_top)
        # only overflows when the ratio itself exceeds float64 range (huge beta)
        return np.exp(z - log_den)


def rank_inverted_softmax(sim: SimilarityMatrix, cfg: InferenceConfig = InferenceConfig(INVERTED_SOFTMAX)) -> RankingResult:
    _require_raw(sim)
    adjusted = SimilarityMatrix(inverted_softmax_scores(sim.scores, cfg.beta), INVERTED_SOFTMAX, {"beta": cfg.beta})
    return RankingResult(rank_rows(adjusted.scores), adjusted)


def csls_scores(scores: np.ndarray, k: int) -> np.ndarray:
    """2 s[q,t] - mean of the k best queries for t - mean of the k best items for q."""
    nq, ni = scores.shape
    if k > min(nq, ni):
        raise InsufficientCandidates(f"csls_k={k} exceeds min(n_queries, n_items) = {min(nq, ni)}")
    item_density = topk_mean(scores, k, axis=0)
    query_density = topk_mean(scores, k, axis=1)
    return 2.0 * scores - item_density[None, :] - query_density[:, None]


def rank_csls(sim: SimilarityMatrix, cfg: InferenceConfig = InferenceConfig(CSLS)) -> RankingResult:
    _require_raw(sim)
    adjusted = SimilarityMatrix(csls_scores(sim.scores, cfg.csls_k), CSLS, {"k": cfg.csls_k})
    return RankingResult(rank_rows(adjusted.scores), adjusted)


def rank(sim: SimilarityMatrix, cfg: InferenceConfig) -> RankingResult:
    if cfg.strategy == NAIVE:
        return rank_naive(sim)
    if cfg.strategy == INVERTED_SOFTMAX:
        return rank_inverted_softmax(sim, cfg)
    if cfg.strategy == CSLS:
        return rank_csls(sim, cfg)
    raise ValueError(f"strategy {cfg.strategy!r} does not produce a ranking")


# ---------------------------------------------------------------------------
# Hungarian matching


def _min_cost_assignment(cost: np.ndarray):
    """Shortest augmenting path Hungarian method on a square cost matrix.

    Returns (row_to_col, u, v) where u, v are dual potentials with
    cost[i, j] - u[i] - v[j] >= 0 everywhere and == 0 on the assignment.
    Inner column scans are vectorised; O(n^3) overall.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)  # p[j]: row (1-based) assigned to column j
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.intp)
    row_to_col[p[1:] - 1] = np.arange(n)
    return row_to_col, u[1:], v[1:]


def _lexicographic_refine(tight: np.ndarray, row_to_col: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching inside the tight-edge graph.

    Rows are fixed in order; for each, the smallest column that still admits
    a perfect matching is found by an alternating-cycle search.
    """
    n = tight.shape[0]
    r2c = row_to_col.copy()
    c2r = np.empty(n, dtype=np.intp)
    c2r[r2c] = np.arange(n)
    fixed = np.zeros(n, dtype=bool)
    adj = [np.flatnonzero(tight[r]) for r in range(n)]
    for q in range(n):
        target = r2c[q]
        for j in adj[q]:
            if j >= target:
                break
            r = c2r[j]
            if fixed[r]:
                continue
            # free column `target` must be reachable from row r along
            # tight edges -> matched edges, avoiding fixed rows and q
            parent = {r: -1}
            queue = deque([r])
            found = None
            while queue and found is None:
                a = queue.popleft()
                for c in adj[a]:
                    if c == target:
                        found = a
                        via_last = c
                        break
                    b = c2r[c]
                    if b == q or fixed[b] or b in parent:
                        continue
                    parent[b] = a
                    queue.append(b)
            if found is None:
                continue
            # shift each row on the path to the column it reached through
            a, c = found, via_last
            while a != -1:
                prev_col = r2c[a]
                r2c[a] = c
                c2r[c] = a
                c = prev_col
                a = parent[a]
            r2c[q] = j
            c2r[j] = q
            break
        fixed[q] = True
    return r2c


def match_hungarian(sim: SimilarityMatrix) -> Matching:
    """Maximum total-similarity bipartite matching.

    Rectangular inputs are padded with dummy rows or columns of constant
    weight; edges touching a dummy are dropped from the result. Among
    optimal matchings, the one whose item sequence (in query order) is
    lexicographically smallest is returned.
    """
    _require_raw(sim)
    w = sim.scores
    nq, ni = w.shape
    n = max(nq, ni)
    cost = np.zeros((n, n))
    cost[:nq, :ni] = -w
    row_to_col, u, v = _min_cost_assignment(cost)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    tight = (cost - u[:, None] - v[None, :]) <= 1e-11 * scale * n
    tight[np.arange(n), row_to_col] = True
    row_to_col = _lexicographic_refine(tight, row_to_col)
    edges = [(q, int(row_to_col[q])) for q in range(nq) if row_to_col[q] < ni]
    total = math.fsum(w[q, i] for q, i in edges)
    return Matching(edges, total)


def greedy_assignment(sim: SimilarityMatrix) -> Matching:
    """Row-by-row greedy matching: each query takes its best unused item."""
    w = sim.scores
    used = np.zeros(w.shape[1], dtype=bool)
    edges = []
    for q in range(w.shape[0]):
        if used.all():
            break
        row = np.where(used, -np.inf, w[q])
        i = int(np.argmax(row))
        used[i] = True
        edges.append((q, i))
    return Matching(edges, math.fsum(w[q, i] for q, i in edges))
