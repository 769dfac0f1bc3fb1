"""Bidirectional retrieval metrics and hubness diagnostics."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedcore import PairIndex, SimilarityMatrix
from .errors import MissingGroundTruth
from .inference import HUNGARIAN, InferenceConfig, RankingResult, match_hungarian, rank

IMAGE_TO_TEXT = "image_to_text"
TEXT_TO_IMAGE = "text_to_image"
RECALL_KS = (1, 5, 10)


@dataclass
class RetrievalReport:
    direction: str
    r_at: dict[int, float]
    med_r: float | None
    mean_r: float | None
    n_queries: int
    extra: dict = field(default_factory=dict)

    @property
    def rsum(self) -> float:
        return sum(self.r_at.get(k, 0.0) for k in RECALL_KS)


@dataclass
class HubHistogram:
    counts: dict[int, int]
    n_items: int
    n_queries: int

    def max_hub(self) -> int:
        return max((k for k, c in self.counts.items() if c), default=0)


def ground_truth_ranks(ranked_items: np.ndarray, pairs: PairIndex) -> np.ndarray:
    """1-based rank of the best-placed positive item for every query."""
    nq, ni = ranked_items.shape
    position = np.empty_like(ranked_items)
    position[np.arange(nq)[:, None], ranked_items] = np.arange(ni)[None, :]
    ranks = np.empty(nq, dtype=np.int64)
    for q in range(nq):
        pos = pairs[q]
        if not pos:
            raise MissingGroundTruth(q)
        ranks[q] = position[q, sorted(pos)].min() + 1
    return ranks


def report_from_ranks(ranks: np.ndarray, direction: str, ks: Sequence[int] = RECALL_KS) -> RetrievalReport:
    ranks = np.asarray(ranks)
    n = ranks.size
    r_at = {k: 100.0 * np.count_nonzero(ranks <= k) / n for k in ks}
    return RetrievalReport(direction, r_at, float(np.median(ranks)), float(np.mean(ranks)), n)


def compute_report(ranking: RankingResult, pairs: PairIndex, direction: str = TEXT_TO_IMAGE) -> RetrievalReport:
    """R@1/5/10 (percent), median and mean rank of the ground truth."""
    return report_from_ranks(ground_truth_ranks(ranking.ranked_items, pairs), direction)


def hub_histogram(sim: SimilarityMatrix) -> HubHistogram:
    """For every item, count the queries whose top-scored item it is."""
    nn = np.argmax(sim.scores, axis=1)
    per_item = np.bincount(nn, minlength=sim.shape[1])
    counts = Counter(per_item.tolist())
    return HubHistogram(dict(sorted(counts.items())), sim.shape[1], sim.shape[0])


def hub_summary(h: HubHistogram, thresholds: Sequence[int] = (2, 5, 10)) -> list[tuple[str, int, float]]:
    """Rows of (label, #items, percent of items): k=0, k=1 and k>=tau per threshold."""
    if not thresholds:
        raise ValueError("thresholds must be nonempty")
    rows = []
    for k in (0, 1):
        c = h.counts.get(k, 0)
        rows.append((f"k={k}", c, 100.0 * c / h.n_items))
    for tau in thresholds:
        c = sum(v for k, v in h.counts.items() if k >= tau)
        rows.append((f"k>={tau}", c, 100.0 * c / h.n_items))
    return rows


def evaluate_direction(sim: SimilarityMatrix, pairs: PairIndex, cfg: InferenceConfig, direction: str) -> RetrievalReport:
    """Rank (or match) the items of every query and score against ``pairs``.

    Under Hungarian matching there is no ranking: a query scores rank 1 when
    its matched item is a positive and counts as a miss otherwise, so only
    R@1 and the matching weight are reported.
    """
    if cfg.strategy == HUNGARIAN:
        m = match_hungarian(sim)
        hits = sum(1 for q, i in m.edges if i in pairs[q])
        for q in range(sim.shape[0]):
            if not pairs[q]:
                raise MissingGroundTruth(q)
        r1 = 100.0 * hits / sim.shape[0]
        return RetrievalReport(direction, {1: r1}, None, None, sim.shape[0], {"matching_weight": m.total_weight})
    return compute_report(rank(sim, cfg), pairs, direction)


def evaluate_bidirectional(sim: SimilarityMatrix, pairs: PairIndex, cfg: InferenceConfig) -> list[RetrievalReport]:
    """Reports for both directions.

    ``sim`` is text x image (captions are the queries of ``pairs``). The
    image->text direction runs the same strategy on the transposed matrix
    with the inverted pair index.
    """
    t2i = evaluate_direction(sim, pairs, cfg, TEXT_TO_IMAGE)
    i2t = evaluate_direction(sim.transpose(), pairs.inverse(), cfg, IMAGE_TO_TEXT)
    return [i2t, t2i]


def _average(reports: list[RetrievalReport]) -> RetrievalReport:
    first = reports[0]

    def avg(vals):
        return None if any(v is None for v in vals) else float(np.mean(vals))

    extra = {}
    for key in first.extra:
        extra[key] = avg([r.extra[key] for r in reports])
    return RetrievalReport(
        first.direction,
        {k: float(np.mean([r.r_at[k] for r in reports])) for k in first.r_at},
        avg([r.med_r for r in reports]),
        avg([r.mean_r for r in reports]),
        sum(r.n_queries for r in reports),
        extra,
    )


def evaluate_folds(sim: SimilarityMatrix, pairs: PairIndex, cfg: InferenceConfig, n_folds: int = 5) -> list[RetrievalReport]:
    """Average of per-fold bidirectional reports over contiguous query folds.

    Each fold keeps its queries and the items they point to, so with
    captions grouped by image a fold is a self-contained image/caption subset.
    """
    nq = sim.shape[0]
    if not 1 <= n_folds <= nq:
        raise ValueError(f"n_folds must lie in [1, {nq}]")
    bounds = np.linspace(0, nq, n_folds + 1).round().astype(int)
    per_fold = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        qs = list(range(lo, hi))
        its = sorted({i for q in qs for i in pairs[q]})
        sub = SimilarityMatrix(sim.scores[np.ix_(qs, its)])
        per_fold.append(evaluate_bidirectional(sub, pairs.restrict(qs, its), cfg))
    return [_average([f[d] for f in per_fold]) for d in range(2)]
