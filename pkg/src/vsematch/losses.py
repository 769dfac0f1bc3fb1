"""Margin-based triplet ranking losses over a mini-batch similarity matrix.

Rows of the similarity matrix are one modality, columns the other. Every
row anchor is compared against negative columns, and every column anchor
against negative rows:

    sum_margin   all negatives per anchor
    max_margin   the single hardest negative per anchor
    knn_margin   the k hardest negatives per anchor

Values are batch sums. Gradients are returned with respect to the similarity
scores and, when the matrix carries its source embeddings, with respect to
the raw (un-normalized) embedding rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedcore import RAW, PairIndex, SimilarityMatrix, knn_select, normalize_backward
from .errors import InsufficientCandidates, NotBijective, NotRawSimilarity

SUM_MARGIN = "sum_margin"
MAX_MARGIN = "max_margin"
KNN_MARGIN = "knn_margin"
LOSS_KINDS = (SUM_MARGIN, MAX_MARGIN, KNN_MARGIN)


@dataclass(frozen=True)
class LossConfig:
    kind: str = KNN_MARGIN
    margin_alpha: float = 0.2
    knn_k: int = 3

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if not self.margin_alpha > 0:
            raise ValueError("margin_alpha must be > 0")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")


@dataclass
class LossReport:
    value: float
    grad_scores: np.ndarray
    grad_queries: np.ndarray | None
    grad_items: np.ndarray | None
    active_triplets: int


def _check_inputs(sim: SimilarityMatrix, pairs: PairIndex) -> np.ndarray:
    if sim.provenance != RAW:
        raise NotRawSimilarity(f"losses need raw cosine scores, got {sim.provenance!r}")
    if (pairs.n_queries, pairs.n_items) != sim.shape:
        raise ValueError(f"pair index shape {(pairs.n_queries, pairs.n_items)} != similarity shape {sim.shape}")
    perm = pairs.permutation()
    if perm is None:
        raise NotBijective("batch pairing must be a bijection between rows and columns")
    return perm


def _hinge_matrices(scores: np.ndarray, perm: np.ndarray, alpha: float):
    """Hinge arguments for both directions.

    row[q, j] = alpha - s(q, perm[q]) + s(q, j)      (row anchor q, negative column j)
    col[r, t] = alpha - s(inv[t], t) + s(r, t)       (column anchor t, negative row r)
    Positive entries are meaningless and masked by the caller.
    """
    n = scores.shape[0]
    inv = np.empty_like(perm)
    inv[perm] = np.arange(n)
    pos_row = scores[np.arange(n), perm]
    pos_col = scores[inv, np.arange(n)]
    row = alpha - pos_row[:, None] + scores
    col = alpha - pos_col[None, :] + scores
    return row, col, inv


def _selection_masks(scores: np.ndarray, perm: np.ndarray, inv: np.ndarray, kind: str, k: int):
    n = scores.shape[0]
    row_sel = np.zeros((n, n), dtype=bool)
    col_sel = np.zeros((n, n), dtype=bool)
    if kind == SUM_MARGIN:
        row_sel[:] = True
        col_sel[:] = True
        row_sel[np.arange(n), perm] = False
        col_sel[inv, np.arange(n)] = False
    elif kind == MAX_MARGIN:
        # argmax returns the first maximum, i.e. the lower index on ties
        masked = scores.copy()
        masked[np.arange(n), perm] = -np.inf
        row_sel[np.arange(n), np.argmax(masked, axis=1)] = True
        masked = scores.copy()
        masked[inv, np.arange(n)] = -np.inf
        col_sel[np.argmax(masked, axis=0), np.arange(n)] = True
    else:
        if k > n - 1:
            raise InsufficientCandidates(f"knn_k={k} exceeds batch size - 1 = {n - 1}")
        for q in range(n):
            row_sel[q, knn_select(scores[q], (perm[q],), k)] = True
        for t in range(n):
            col_sel[knn_select(scores[:, t], (inv[t],), k), t] = True
    return row_sel, col_sel


def _margin_loss(sim: SimilarityMatrix, pairs: PairIndex, cfg: LossConfig, kind: str) -> LossReport:
    perm = _check_inputs(sim, pairs)
    scores = sim.scores
    n = scores.shape[0]
    row, col, inv = _hinge_matrices(scores, perm, cfg.margin_alpha)
    row_sel, col_sel = _selection_masks(scores, perm, inv, kind, cfg.knn_k)

    row_active = row_sel & (row > 0)
    col_active = col_sel & (col > 0)
    value = float(np.sum(np.where(row_active, row, 0.0)) + np.sum(np.where(col_active, col, 0.0)))

    # d/ds of each active hinge: +1 on the negative, -1 on the anchor's positive
    grad = row_active.astype(np.float64) + col_active.astype(np.float64)
    grad[np.arange(n), perm] -= row_active.sum(axis=1)
    grad[inv, np.arange(n)] -= col_active.sum(axis=0)

    gq = gi = None
    if sim.queries is not None and sim.items is not None:
        qraw, iraw = sim.queries.data, sim.items.data
        qn = qraw / np.linalg.norm(qraw, axis=1, keepdims=True)
        itn = iraw / np.linalg.norm(iraw, axis=1, keepdims=True)
        gq = normalize_backward(qraw, grad @ itn)
        gi = normalize_backward(iraw, grad.T @ qn)

    return LossReport(
        value=value,
        grad_scores=grad,
        grad_queries=gq,
        grad_items=gi,
        active_triplets=int(row_active.sum() + col_active.sum()),
    )


def sum_margin_loss(sim: SimilarityMatrix, pairs: PairIndex, cfg: LossConfig = LossConfig(SUM_MARGIN)) -> LossReport:
    """Hinge terms summed over every negative of every anchor."""
    return _margin_loss(sim, pairs, cfg, SUM_MARGIN)


def max_margin_loss(sim: SimilarityMatrix, pairs: PairIndex, cfg: LossConfig = LossConfig(MAX_MARGIN)) -> LossReport:
    """Hinge term of the hardest negative only (lowest index on ties)."""
    return _margin_loss(sim, pairs, cfg, MAX_MARGIN)


def knn_margin_loss(sim: SimilarityMatrix, pairs: PairIndex, cfg: LossConfig = LossConfig(KNN_MARGIN)) -> LossReport:
    """Hinge terms summed over the ``cfg.knn_k`` hardest negatives of each anchor.

    k = 1 reproduces :func:`max_margin_loss` and k = B - 1 reproduces
    :func:`sum_margin_loss`, bit for bit.
    """
    return _margin_loss(sim, pairs, cfg, KNN_MARGIN)


def compute_loss(sim: SimilarityMatrix, pairs: PairIndex, cfg: LossConfig) -> LossReport:
    return _margin_loss(sim, pairs, cfg, cfg.kind)
