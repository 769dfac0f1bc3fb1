"""Triplet ranking losses, hubness-aware inference and retrieval metrics
for text-image matching over dense embeddings."""

from .embedcore import (
    EmbeddingSet,
    PairIndex,
    SimilarityMatrix,
    cosine_similarity,
    knn_select,
    normalize,
)
from .evalmetrics import (
    HubHistogram,
    RetrievalReport,
    compute_report,
    evaluate_bidirectional,
    evaluate_folds,
    hub_histogram,
    hub_summary,
)
from .inference import (
    InferenceConfig,
    Matching,
    RankingResult,
    greedy_assignment,
    match_hungarian,
    rank,
    rank_csls,
    rank_inverted_softmax,
    rank_naive,
)
from .losses import LossConfig, LossReport, compute_loss, knn_margin_loss, max_margin_loss, sum_margin_loss
from .toytrain import SyntheticSpec, ToyEncoder, TrainConfig, generate_synthetic, lr_at_epoch, model_select, train

__version__ = "0.1.0"
