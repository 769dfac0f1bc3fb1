"""Command line entry point: synth -> train -> eval.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 numeric divergence, 5 shape mismatch.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import formats
from .embedcore import PairIndex, SimilarityMatrix, cosine_similarity
from .errors import DimensionMismatch, DivergedLoss, InvalidSpec
from .evalmetrics import (
    TEXT_TO_IMAGE,
    RetrievalReport,
    evaluate_bidirectional,
    evaluate_folds,
    hub_histogram,
    hub_summary,
)
from .inference import CSLS, HUNGARIAN, INVERTED_SOFTMAX, NAIVE, InferenceConfig, rank
from .losses import KNN_MARGIN, MAX_MARGIN, SUM_MARGIN, LossConfig
from .toytrain import SyntheticSpec, ToyEncoder, TrainConfig, generate_synthetic, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED, EXIT_SHAPE = 0, 2, 3, 4, 5

LOSS_NAMES = {"sum": SUM_MARGIN, "max": MAX_MARGIN, "knn": KNN_MARGIN}
INFERENCE_NAMES = {"naive": NAIVE, "is": INVERTED_SOFTMAX, "csls": CSLS, "hungarian": HUNGARIAN}
REPORT_COLUMNS = ("direction", "r_at_1", "r_at_5", "r_at_10", "med_r", "mean_r", "strategy", "params")
HUB_THRESHOLDS = (2, 5, 10)

log = logging.getLogger("vsematch")


class UsageError(Exception):
    pass


def _require(cond: bool, msg: str):
    if not cond:
        raise UsageError(msg)


# --------------------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_classes=args.classes,
        samples_per_class=args.per_class,
        d_raw_query=args.dim_query or args.dim,
        d_raw_item=args.dim_item or args.dim,
        noise_sigma=args.noise,
        hub_fraction=args.hub_fraction,
        hub_strength=args.hub_strength,
        seed=args.seed,
        anisotropy=args.anisotropy,
    )
    _require(0.0 <= spec.hub_fraction <= 1.0, f"--hub-fraction must lie in [0, 1], got {spec.hub_fraction}")
    _require(spec.n_classes >= 2, "--classes must be >= 2")
    _require(spec.samples_per_class >= 1, "--per-class must be >= 1")
    _require(spec.noise_sigma >= 0, "--noise must be >= 0")
    _require(spec.hub_strength >= 0, "--hub-strength must be >= 0")
    _require(spec.anisotropy >= 0, "--anisotropy must be >= 0")
    _require(spec.seed >= 0, "--seed must be >= 0")
    _require(spec.d_raw_query >= 1 and spec.d_raw_item >= 1, "--dim/--dim-query/--dim-item must be >= 1")
    queries, items, pairs = generate_synthetic(spec)
    out = Path(args.out_dir)
    formats.write_embeddings(out / "queries.emb", queries, args.dtype)
    formats.write_embeddings(out / "items.emb", items, args.dtype)
    formats.write_pairs(out / "pairs.tsv", pairs)
    print(json.dumps(dataclasses.asdict(spec)))
    return EXIT_OK


# --------------------------------------------------------------------------- train


def _load_triplet(args):
    queries = formats.read_embeddings(args.queries)
    items = formats.read_embeddings(args.items)
    if args.pairs:
        pairs = formats.read_pairs(args.pairs, queries, items)
    else:
        if queries.n != items.n:
            raise DimensionMismatch(f"no pairs file and {queries.n} queries != {items.n} items")
        pairs = PairIndex.diagonal(queries.n)
    return queries, items, pairs


def cmd_train(args) -> int:
    _require(args.batch_size >= 2, "--batch-size must be >= 2")
    _require(args.epochs >= 1, "--epochs must be >= 1")
    _require(args.lr >= 0, "--lr must be >= 0")
    _require(args.margin > 0, "--margin must be > 0")
    _require(args.knn_k >= 1, "--knn-k must be >= 1")
    _require(args.knn_k <= args.batch_size - 1, "--knn-k must be <= --batch-size - 1")
    _require(args.dim >= 1, "--dim must be >= 1")
    _require(args.lr_decay_every >= 1, "--lr-decay-every must be >= 1")
    _require(args.lr_decay_factor > 0, "--lr-decay-factor must be > 0")
    queries, items, pairs = _load_triplet(args)
    n_pairs = len(pairs.edges())
    _require(n_pairs >= args.batch_size, f"--batch-size {args.batch_size} exceeds the {n_pairs} training pairs")
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        lr_decay_every=args.lr_decay_every,
        lr_decay_factor=args.lr_decay_factor,
        seed=args.seed,
        d_joint=args.dim,
        loss=LossConfig(LOSS_NAMES[args.loss], args.margin, args.knn_k),
    )
    result = train((queries, items, pairs), cfg)
    out = Path(args.out_dir)
    formats.write_matrix(out / "query_encoder.emb", result.query_encoder.to_matrix(), "f64")
    formats.write_matrix(out / "item_encoder.emb", result.item_encoder.to_matrix(), "f64")
    formats.atomic_write(out / "history.tsv", formats.encode_history(result.history, result.lrs))
    formats.write_embeddings(out / "queries.emb", result.query_encoder.encode(queries), args.dtype)
    formats.write_embeddings(out / "items.emb", result.item_encoder.encode(items), args.dtype)
    log.info("final loss %r", result.history[-1])
    return EXIT_OK


def cmd_embed(args) -> int:
    enc = ToyEncoder.from_matrix(formats.read_matrix(args.encoder))
    raw = formats.read_embeddings(args.input)
    if raw.dim != enc.weight.shape[0]:
        raise DimensionMismatch(f"encoder expects dim {enc.weight.shape[0]}, input has {raw.dim}")
    formats.write_embeddings(args.output, enc.encode(raw), args.dtype)
    return EXIT_OK


# --------------------------------------------------------------------------- eval


def _report_row(rep: RetrievalReport, cfg: InferenceConfig) -> dict:
    params = {}
    if cfg.strategy == INVERTED_SOFTMAX:
        params["beta"] = cfg.beta
    elif cfg.strategy == CSLS:
        params["k"] = cfg.csls_k
    params.update(rep.extra)
    return {
        "direction": rep.direction,
        "r_at_1": rep.r_at.get(1),
        "r_at_5": rep.r_at.get(5),
        "r_at_10": rep.r_at.get(10),
        "med_r": rep.med_r,
        "mean_r": rep.mean_r,
        "strategy": cfg.strategy,
        "params": params,
    }


def _hub_block(sim: SimilarityMatrix, cfg: InferenceConfig) -> dict:
    # text->image direction, on the scores the strategy actually ranks by
    scores = sim if cfg.strategy == HUNGARIAN else rank(sim, cfg).adjusted
    h = hub_histogram(scores)
    return {
        "direction": TEXT_TO_IMAGE,
        "n_items": h.n_items,
        "n_queries": h.n_queries,
        "max_hub": h.max_hub(),
        "buckets": [{"bucket": b, "count": c, "percentage": p} for b, c, p in hub_summary(h, HUB_THRESHOLDS)],
    }


def _tsv_value(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_report(rows: list[dict], hubs: dict | None, fmt: str) -> str:
    if fmt == "json":
        doc = {"reports": rows}
        if hubs is not None:
            doc["hubs"] = hubs
        return json.dumps(doc, indent=2) + "\n"
    if fmt == "tsv":
        lines = ["\t".join(REPORT_COLUMNS)]
        lines += ["\t".join(_tsv_value(r[c]) for c in REPORT_COLUMNS) for r in rows]
        if hubs is not None:
            lines += ["", "bucket\tcount\tpercentage"]
            lines += [f"{b['bucket']}\t{b['count']}\t{b['percentage']!r}" for b in hubs["buckets"]]
            lines += [f"max_hub\t{hubs['max_hub']}\t"]
        return "\n".join(lines) + "\n"
    # human readable
    def fmt1(v):
        return "-" if v is None else f"{v:.1f}"

    lines = [f"{'direction':<14} {'R@1':>6} {'R@5':>6} {'R@10':>6} {'Med r':>6} {'Mean r':>7}  strategy"]
    for r in rows:
        lines.append(
            f"{r['direction']:<14} {fmt1(r['r_at_1']):>6} {fmt1(r['r_at_5']):>6} {fmt1(r['r_at_10']):>6} "
            f"{fmt1(r['med_r']):>6} {fmt1(r['mean_r']):>7}  {r['strategy']}"
        )
    if hubs is not None:
        lines.append("")
        lines.append(f"items being NN to k queries ({hubs['n_items']} items, {hubs['n_queries']} queries)")
        for b in hubs["buckets"]:
            lines.append(f"  {b['bucket']:<6} {b['count']:>7} {b['percentage']:6.1f}%")
        lines.append(f"  most popular item is NN to {hubs['max_hub']} queries")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    _require(args.beta > 0, "--beta must be > 0")
    _require(args.csls_k >= 1, "--csls-k must be >= 1")
    _require(args.folds >= 1, "--folds must be >= 1")
    queries, items, pairs = _load_triplet(args)
    if queries.dim != items.dim:
        raise DimensionMismatch(f"query dim {queries.dim} != item dim {items.dim}")
    cfg = InferenceConfig(INFERENCE_NAMES[args.inference], args.beta, args.csls_k)
    if cfg.strategy == CSLS:
        smallest = min(queries.n, items.n)
        _require(cfg.csls_k <= smallest, f"--csls-k {cfg.csls_k} exceeds min(#queries, #items) = {smallest}")
    _require(args.folds <= queries.n, f"--folds {args.folds} exceeds the {queries.n} queries")
    sim = cosine_similarity(queries, items)
    if args.folds > 1:
        reports = evaluate_folds(sim, pairs, cfg, args.folds)
    else:
        reports = evaluate_bidirectional(sim, pairs, cfg)
    rows = [_report_row(r, cfg) for r in reports]
    hubs = _hub_block(sim, cfg) if args.diagnose else None
    text = render_report(rows, hubs, args.format)
    if args.output:
        formats.atomic_write(args.output, text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vsematch", description="Triplet-loss embeddings and hubness-aware cross-modal retrieval.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic caption/image embedding set")
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--per-class", type=int, default=5, help="queries (captions) per item")
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--dim-query", type=int, default=None)
    s.add_argument("--dim-item", type=int, default=None)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--hub-fraction", type=float, default=0.0)
    s.add_argument("--hub-strength", type=float, default=0.0)
    s.add_argument("--anisotropy", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dtype", choices=sorted(formats.DTYPES), default="f64")
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train linear encoders with a triplet ranking loss")
    t.add_argument("--queries", required=True)
    t.add_argument("--items", required=True)
    t.add_argument("--pairs", default=None, help="defaults to diagonal pairing")
    t.add_argument("--loss", choices=sorted(LOSS_NAMES), default="knn")
    t.add_argument("--knn-k", type=int, default=3)
    t.add_argument("--margin", type=float, default=0.2)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--lr-decay-every", type=int, default=10)
    t.add_argument("--lr-decay-factor", type=float, default=10.0)
    t.add_argument("--dim", type=int, default=32, help="joint embedding dimension")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dtype", choices=sorted(formats.DTYPES), default="f64")
    t.add_argument("--out-dir", default=".")
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("embed", help="apply a trained encoder to a raw embedding file")
    m.add_argument("--encoder", required=True)
    m.add_argument("--input", required=True)
    m.add_argument("--output", required=True)
    m.add_argument("--dtype", choices=sorted(formats.DTYPES), default="f64")
    m.set_defaults(func=cmd_embed)

    e = sub.add_parser("eval", help="bidirectional retrieval report")
    e.add_argument("--queries", required=True, help="text (caption) embeddings")
    e.add_argument("--items", required=True, help="image embeddings")
    e.add_argument("--pairs", default=None, help="defaults to diagonal pairing")
    e.add_argument("--inference", choices=list(INFERENCE_NAMES), default="naive")
    e.add_argument("--beta", type=float, default=30.0)
    e.add_argument("--csls-k", type=int, default=10)
    e.add_argument("--folds", type=int, default=1, help="average over N contiguous query folds")
    e.add_argument("--diagnose", action="store_true", help="append hub statistics")
    e.add_argument("--format", choices=("json", "tsv", "text"), default="json")
    e.add_argument("--output", default=None, help="write the report here instead of stdout")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidSpec) as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedLoss as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DimensionMismatch, IndexError) as exc:
        print(f"error: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
