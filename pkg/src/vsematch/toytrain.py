"""Desk-scale training of two linear encoders into a joint embedding space.

Synthetic data stands in for captioned images: every class owns a latent
unit vector, one item (image) and ``samples_per_class`` queries (captions),
each a noisy copy of the latent.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedcore import EmbeddingSet, PairIndex, cosine_similarity
from .errors import DivergedLoss, InvalidSpec
from .losses import LossConfig, compute_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 10
    samples_per_class: int = 5
    d_raw_query: int = 32
    d_raw_item: int = 32
    noise_sigma: float = 0.0
    hub_fraction: float = 0.0
    hub_strength: float = 0.0
    seed: int = 0
    anisotropy: float = 0.0

    def validate(self):
        if self.n_classes < 2:
            raise InvalidSpec("n_classes must be >= 2")
        if self.samples_per_class < 1:
            raise InvalidSpec("samples_per_class must be >= 1")
        if self.d_raw_query < 1 or self.d_raw_item < 1:
            raise InvalidSpec("raw dimensions must be >= 1")
        if not self.noise_sigma >= 0:
            raise InvalidSpec("noise_sigma must be >= 0")
        if not 0.0 <= self.hub_fraction <= 1.0:
            raise InvalidSpec("hub_fraction must lie in [0, 1]")
        if not self.hub_strength >= 0:
            raise InvalidSpec("hub_strength must be >= 0")
        if self.seed < 0:
            raise InvalidSpec("seed must be unsigned")
        if not self.anisotropy >= 0:
            raise InvalidSpec("anisotropy must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> tuple[EmbeddingSet, EmbeddingSet, PairIndex]:
    """Draw (queries, items, pairs) deterministically from ``spec.seed``.

    Latents live in the first min(d_raw_query, d_raw_item) coordinates of
    both raw spaces and are unit vectors ``normalize(g + anisotropy * b)``
    with ``g`` isotropic Gaussian and ``b`` a shared random unit direction.
    Query ``c * samples_per_class + s`` is paired with item ``c``.

    Hub injection picks ``round(hub_fraction * n_classes)`` items and adds
    ``hub_strength * u * b`` to each, ``u ~ U(0, 1)`` drawn per item. Items
    pushed towards the direction every query leans to become nearest
    neighbours of many queries; with ``anisotropy = 0`` no query leans
    anywhere and hubs hardly form.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d_lat = min(spec.d_raw_query, spec.d_raw_item)
    shared = rng.standard_normal(d_lat)
    shared /= np.linalg.norm(shared)
    latents = rng.standard_normal((spec.n_classes, d_lat)) / math.sqrt(d_lat)
    latents += spec.anisotropy * shared[None, :]
    latents /= np.linalg.norm(latents, axis=1, keepdims=True)

    n_q = spec.n_classes * spec.samples_per_class
    queries = np.zeros((n_q, spec.d_raw_query))
    queries[:, :d_lat] = np.repeat(latents, spec.samples_per_class, axis=0)
    queries += spec.noise_sigma * rng.standard_normal(queries.shape)

    items = np.zeros((spec.n_classes, spec.d_raw_item))
    items[:, :d_lat] = latents
    items += spec.noise_sigma * rng.standard_normal(items.shape)

    n_hubs = int(round(spec.hub_fraction * spec.n_classes))
    if n_hubs and spec.hub_strength > 0:
        bias = np.zeros(spec.d_raw_item)
        bias[:d_lat] = shared
        hubs = np.sort(rng.choice(spec.n_classes, size=n_hubs, replace=False))
        weights = rng.uniform(0.0, 1.0, size=n_hubs)
        items[hubs] += spec.hub_strength * weights[:, None] * bias[None, :]

    pairs = PairIndex(
        {q: (q // spec.samples_per_class,) for q in range(n_q)},
        n_q,
        spec.n_classes,
    )
    return EmbeddingSet.from_array(queries), EmbeddingSet.from_array(items), pairs


@dataclass
class ToyEncoder:
    """Affine map ``x @ weight + bias`` from raw features to the joint space."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def xavier(cls, d_in: int, d_out: int, rng: np.random.Generator) -> "ToyEncoder":
        limit = math.sqrt(6.0 / (d_in + d_out))
        return cls(rng.uniform(-limit, limit, size=(d_in, d_out)), np.zeros(d_out))

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight + self.bias

    def encode(self, e: EmbeddingSet) -> EmbeddingSet:
        return EmbeddingSet(self(e.data), e.ids)

    def to_matrix(self) -> np.ndarray:
        """Weight rows stacked over a final bias row, shape (d_in + 1, d_out)."""
        return np.vstack([self.weight, self.bias[None, :]])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "ToyEncoder":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:-1].copy(), m[-1].copy())

    def copy(self) -> "ToyEncoder":
        return ToyEncoder(self.weight.copy(), self.bias.copy())


class Adam:
    """Adam over a list of arrays, updated in place."""

    def __init__(self, params: Sequence[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray], lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.001
    lr_decay_every: int = 10
    lr_decay_factor: float = 10.0
    seed: int = 0
    d_joint: int = 32
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_decay_every < 1 or not self.lr_decay_factor > 0:
            raise ValueError("lr_decay_every must be >= 1 and lr_decay_factor > 0")
        if self.d_joint < 1:
            raise ValueError("d_joint must be >= 1")


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: divide by ``lr_decay_factor`` every ``lr_decay_every`` epochs (0-indexed)."""
    return cfg.lr / cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def expand_pairs(pairs: PairIndex) -> np.ndarray:
    """(query, item) index rows, one per ground-truth edge, in query order."""
    return np.array(pairs.edges(), dtype=np.intp).reshape(-1, 2)


def batch_loss(enc_q: ToyEncoder, enc_i: ToyEncoder, xq: np.ndarray, xi: np.ndarray, loss_cfg: LossConfig):
    """Loss report of one index-aligned batch (the batch pairing is the diagonal)."""
    sim = cosine_similarity(EmbeddingSet.from_array(enc_q(xq)), EmbeddingSet.from_array(enc_i(xi)))
    return compute_loss(sim, PairIndex.diagonal(xq.shape[0]), loss_cfg)


def batches(n: int, batch_size: int, order: np.ndarray) -> list[np.ndarray]:
    out = [order[s : s + batch_size] for s in range(0, n, batch_size)]
    if out and len(out[-1]) < 2:
        out.pop()
    return out


def dataset_loss(enc_q, enc_i, xq, xi, rows, cfg: TrainConfig) -> float:
    """Summed raw loss over the fixed, unshuffled batch partition of ``rows``."""
    total = 0.0
    for b in batches(len(rows), cfg.batch_size, np.arange(len(rows))):
        total += batch_loss(enc_q, enc_i, xq[rows[b, 0]], xi[rows[b, 1]], cfg.loss).value
    return total


def adam_step(enc_q: ToyEncoder, enc_i: ToyEncoder, opt: Adam, xq, xi, loss_cfg: LossConfig, lr: float) -> float:
    """One optimizer step on a batch; returns the batch's pre-step raw loss."""
    rep = batch_loss(enc_q, enc_i, xq, xi, loss_cfg)
    if not math.isfinite(rep.value):
        raise DivergedLoss(f"non-finite batch loss {rep.value}")
    scale = 1.0 / xq.shape[0]
    gq = rep.grad_queries * scale
    gi = rep.grad_items * scale
    opt.step([xq.T @ gq, gq.sum(axis=0), xi.T @ gi, gi.sum(axis=0)], lr)
    return rep.value


@dataclass
class TrainResult:
    query_encoder: ToyEncoder
    item_encoder: ToyEncoder
    history: list[float]
    lrs: list[float]


def train(data: tuple[EmbeddingSet, EmbeddingSet, PairIndex], cfg: TrainConfig) -> TrainResult:
    """Train both encoders with Adam on index-aligned (query, item) batches.

    Each epoch reshuffles the ground-truth pairs with a generator seeded from
    ``cfg.seed`` and steps once per batch, with gradients of the summed loss
    divided by the batch size. ``history[e]`` is the summed loss over the
    fixed-order batch partition after epoch ``e``, so it depends only on the
    parameters.
    """
    queries, items, pairs = data
    rows = expand_pairs(pairs)
    if len(rows) < cfg.batch_size:
        raise ValueError(f"{len(rows)} training pairs < batch_size {cfg.batch_size}")
    rng = np.random.default_rng(cfg.seed)
    enc_q = ToyEncoder.xavier(queries.dim, cfg.d_joint, rng)
    enc_i = ToyEncoder.xavier(items.dim, cfg.d_joint, rng)
    opt = Adam([enc_q.weight, enc_q.bias, enc_i.weight, enc_i.bias])
    xq, xi = queries.data, items.data

    history, lrs = [], []
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(len(rows))
        for b in batches(len(rows), cfg.batch_size, order):
            adam_step(enc_q, enc_i, opt, xq[rows[b, 0]], xi[rows[b, 1]], cfg.loss, lr)
        value = dataset_loss(enc_q, enc_i, xq, xi, rows, cfg)
        if not math.isfinite(value):
            raise DivergedLoss(f"non-finite loss {value} after epoch {epoch}")
        history.append(value)
        lrs.append(lr)
        log.debug("epoch %d lr %.3g loss %.6f", epoch, lr, value)
    return TrainResult(enc_q, enc_i, history, lrs)


def model_select(candidates: Sequence[tuple[object, Sequence]]) -> int:
    """Index of the candidate whose validation R@1+R@5+R@10, summed over
    both directions, is largest. The first candidate wins ties."""
    if not candidates:
        raise ValueError("no candidates to select from")
    scores = [sum(r.rsum for r in reports) for _, reports in candidates]
    return int(np.argmax(scores))
