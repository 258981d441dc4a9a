"""Command-line interface.

Subcommands cover the full pipeline (stats, ingest, infer, train-pairs, eval)
plus diagnostics (knor, gap-radius, project). Report-producing commands write
delimited or JSON output and can render a matplotlib figure alongside it via
``--figure``.

Exit codes: 0 success, 1 completed with per-item failures, 2 fatal error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .correction import CorrectionMode, GapCorrector, ModalityStats, compute_stats
from .datastore import Datastore
from .diagnostics import export_projection_input, knor
from .errors import EngineError
from .formats import read_embeddings
from .pipeline import (
    PipelineConfig,
    compute_stats_file,
    evaluate_files,
    infer,
    ingest,
    make_training_pairs,
)
from .prompt import OrderingKind

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_FATAL = 2


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """Config file plus per-flag overrides shared by pipeline subcommands."""
    parser.add_argument("--config", help="TOML or JSON pipeline config file")
    parser.add_argument("--k", type=int, help="prompt captions per query")
    parser.add_argument("--k-train", type=int, dest="k_train",
                        help="prompt captions per training pair")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--metric", choices=["l2", "cosine"], help="store distance metric")
    parser.add_argument("--correction-mode", dest="correction_mode",
                        choices=["none", "mean", "meanstd"])
    parser.add_argument("--correction-direction", dest="correction_direction",
                        choices=["image_to_text", "text_to_image"])
    parser.add_argument("--image-stats", dest="image_stats", help="image-side stats JSON")
    parser.add_argument("--text-stats", dest="text_stats", help="text-side stats JSON")
    parser.add_argument("--noise-l", dest="noise_l", type=float,
                        help="retrieval-side noise scale")
    parser.add_argument("--noise-b", dest="noise_b", type=float,
                        help="decoder-side noise scale")
    parser.add_argument("--noise-mode", dest="noise_mode", choices=["fixed", "resampled"])
    parser.add_argument("--order", choices=["decreasing", "increasing", "random"],
                        help="prompt caption ordering")
    parser.add_argument("--order-seed", dest="order_seed", type=int)
    parser.add_argument("--mmr-lambda", dest="mmr_lambda", type=float,
                        help="enable MMR re-ranking with this redundancy penalty")
    parser.add_argument("--mmr-pool", dest="mmr_pool", type=int,
                        help="candidate pool size for MMR")
    parser.add_argument("--decoder", help="decoder endpoint descriptor")
    parser.add_argument("--decoder-timeout", dest="decoder_timeout", type=float)
    parser.add_argument("--workers", type=int, help="concurrent decoder requests")


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file first, then explicit flags override individual fields."""
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.k is not None:
        cfg.k = args.k
    if args.k_train is not None:
        cfg.k_train = args.k_train
    if args.seed is not None:
        cfg.seed = args.seed
    if args.metric is not None:
        cfg.metric = args.metric
    if args.correction_mode is not None:
        cfg.correction_mode = CorrectionMode.parse(args.correction_mode)
    if args.correction_direction is not None:
        cfg.correction_direction = args.correction_direction
    if args.image_stats is not None:
        cfg.image_stats_path = args.image_stats
    if args.text_stats is not None:
        cfg.text_stats_path = args.text_stats
    if args.noise_l is not None:
        cfg.retrieval_noise = args.noise_l
    if args.noise_b is not None:
        cfg.decoder_noise = args.noise_b
    if args.noise_mode is not None:
        from .correction import NoiseMode
        cfg.noise_mode = NoiseMode(args.noise_mode)
    if args.order is not None:
        cfg.ordering_kind = OrderingKind(args.order)
    if args.order_seed is not None:
        cfg.ordering_seed = args.order_seed
    if args.mmr_lambda is not None:
        cfg.rerank_lambda = args.mmr_lambda
    if args.mmr_pool is not None:
        cfg.rerank_pool = args.mmr_pool
    if args.decoder is not None:
        cfg.decoder_endpoint = args.decoder
    if args.decoder_timeout is not None:
        cfg.decoder_timeout = args.decoder_timeout
    if args.workers is not None:
        cfg.workers = args.workers
    cfg.__post_init__()
    return cfg


# --- subcommand handlers -----------------------------------------------------

def cmd_stats(args: argparse.Namespace) -> int:
    stats = compute_stats_file(args.embeddings, args.tag, args.out)
    print(f"wrote {args.tag} stats for {stats.sample_count} rows "
          f"(dim {stats.mean.shape[0]}) to {args.out}")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    store = ingest(args.embeddings, args.captions, args.out, cfg)
    print(f"ingested {len(store)} captions (dim {store.dim}, metric {store.metric}) "
          f"into {args.out}")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    ok, failed = infer(args.store, args.queries, args.out, cfg, ids_path=args.ids)
    print(f"captioned {ok} queries, {failed} failed; wrote {args.out}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_train_pairs(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    count = make_training_pairs(args.store, args.text_embeddings, args.out, cfg,
                                ids_path=args.ids, exclude_self=args.exclude_self)
    print(f"wrote {count} training pairs to {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    report = evaluate_files(args.candidates, args.references, out_path=args.out)
    if args.figure:
        from .figures import render_eval_figure
        render_eval_figure(report, args.figure)
        print(f"figure: {args.figure}")
    print(f"instances {report.instance_count}  BLEU-1 {report.bleu1:.4f}  "
          f"BLEU-4 {report.bleu4:.4f}  CIDEr {report.cider:.4f}")
    return EXIT_OK


def cmd_knor(args: argparse.Namespace) -> int:
    store = Datastore.load(args.store)
    image_queries = read_embeddings(args.image_queries)
    text_queries = read_embeddings(args.text_queries)
    k_values = [int(part) for part in args.k.split(",") if part.strip()]
    report = knor(store, image_queries, text_queries, k_values)
    report.write_csv(args.out)
    if args.figure:
        from .figures import render_knor_figure
        render_knor_figure(report, args.figure)
        print(f"figure: {args.figure}")
    for k, score in zip(report.k_values, report.scores):
        print(f"k={k}: overlap {score:.4f}")
    return EXIT_OK


def cmd_gap_radius(args: argparse.Namespace) -> int:
    image = read_embeddings(args.image_embeddings).astype(np.float64)
    text = read_embeddings(args.text_embeddings).astype(np.float64)
    image_stats = compute_stats(image, "image")
    text_stats = compute_stats(text, "text")
    if args.direction == "image_to_text":
        source, target = image_stats, text_stats
    else:
        source, target = text_stats, image_stats

    from .correction import gap_radius
    labels, radii = [], []
    for mode in (CorrectionMode.NONE, CorrectionMode.MEAN_ONLY, CorrectionMode.MEAN_STD):
        corrector = GapCorrector(source=source, target=target, mode=mode)
        labels.append(mode.value)
        radii.append(gap_radius(image, text, corrector))

    with open(args.out, "w", encoding="utf-8") as f:
        f.write("mode,radius\n")
        for label, radius in zip(labels, radii):
            f.write(f"{label},{radius!r}\n")
    if args.figure:
        from .figures import render_gap_figure
        render_gap_figure(labels, radii, args.figure)
        print(f"figure: {args.figure}")
    for label, radius in zip(labels, radii):
        print(f"{label}: {radius:.6f}")
    return EXIT_OK


def cmd_project(args: argparse.Namespace) -> int:
    matrices = []
    for spec_arg in args.input:
        label, _, path = spec_arg.partition("=")
        if not path:
            raise ValueError(f"--input expects LABEL=PATH, got {spec_arg!r}")
        matrices.append((label, read_embeddings(path).astype(np.float64)))
    export_projection_input(matrices, args.out)
    total = sum(m.shape[0] for _, m in matrices)
    print(f"wrote {total} labeled rows to {args.out}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capgap",
        description="Text-only caption retrieval pipeline with modality gap correction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="compute per-dimension embedding statistics")
    p.add_argument("embeddings", help="embedding file")
    p.add_argument("--tag", required=True, choices=["image", "text"])
    p.add_argument("--out", required=True, help="output stats JSON")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("ingest", help="build a caption datastore")
    p.add_argument("--embeddings", required=True, help="caption embedding file")
    p.add_argument("--captions", required=True, help="caption JSONL file")
    p.add_argument("--out", required=True, help="output store file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("infer", help="caption query embeddings")
    p.add_argument("--store", required=True, help="datastore file")
    p.add_argument("--queries", required=True, help="query embedding file")
    p.add_argument("--out", required=True, help="output captions JSONL")
    p.add_argument("--ids", help="file with one image id per query row")
    _add_config_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train-pairs", help="emit decoder training examples")
    p.add_argument("--store", required=True, help="datastore file")
    p.add_argument("--text-embeddings", required=True, dest="text_embeddings",
                   help="text-side query embedding file")
    p.add_argument("--out", required=True, help="output pairs JSONL")
    p.add_argument("--ids", help="file with one caption id per query row")
    p.add_argument("--exclude-self", action="store_true", dest="exclude_self",
                   help="drop each query's own caption id from retrieval")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_pairs)

    p = sub.add_parser("eval", help="score candidate captions against references")
    p.add_argument("--candidates", required=True, help="candidate JSONL")
    p.add_argument("--references", required=True, help="reference JSONL")
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--figure", help="also render a metrics figure (PNG)")
    p.set_defaults(func=cmd_eval)

    diag = sub.add_parser("diagnose", help="gap diagnostics")
    dsub = diag.add_subparsers(dest="diagnostic", required=True)

    p = dsub.add_parser("knor", help="cross-modal neighborhood overlap")
    p.add_argument("--store", required=True, help="datastore file")
    p.add_argument("--image-queries", required=True, dest="image_queries")
    p.add_argument("--text-queries", required=True, dest="text_queries")
    p.add_argument("--k", default="5,10,15,50,100", help="comma-separated k values")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--figure", help="also render an overlap-vs-k figure (PNG)")
    p.set_defaults(func=cmd_knor)

    p = dsub.add_parser("gap-radius", help="paired distance under each correction mode")
    p.add_argument("--image-embeddings", required=True, dest="image_embeddings")
    p.add_argument("--text-embeddings", required=True, dest="text_embeddings")
    p.add_argument("--direction", default="image_to_text",
                   choices=["image_to_text", "text_to_image"])
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--figure", help="also render a comparison figure (PNG)")
    p.set_defaults(func=cmd_gap_radius)

    p = dsub.add_parser("project", help="export labeled rows for external projection")
    p.add_argument("--input", action="append", required=True, metavar="LABEL=PATH",
                   help="embedding file with a modality label; repeatable")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_project)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EngineError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
