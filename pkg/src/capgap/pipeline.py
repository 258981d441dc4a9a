"""Batch pipeline: ingest, inference, training-pair export, and evaluation.

Wires the engine together behind a declarative config (TOML or JSON):
embedding/caption files are corrected and indexed into a store; query
embeddings flow through correction -> retrieval -> (optional MMR) ->
ordering -> prompt -> decoder; training pairs promote the best neighbor to
the target; evaluation joins candidate and reference files and scores them.

Correction direction is configurable because the two halves of the method
can place the shared space on either side:

* ``image_to_text`` (default): store rows and training queries stay in text
  space; inference image queries are corrected image -> text.
* ``text_to_image``: store rows and training queries are corrected
  text -> image at build/train time; inference image queries pass through.

Noise placement: the retrieval-side scale L always applies to training-pair
queries; flags opt in to noising store rows at ingest and inference queries.
The decoder-side scale B perturbs the conditioning payload (input vector plus
neighbor vectors) just before the decoder call.

Reproducibility: every random draw comes from a generator derived from the
master seed and the item index via ``numpy.random.SeedSequence(master,
spawn_key=(item, stream))``, with stream 0 = query noise, 1 = decoder-payload
noise, 2 = ordering shuffle, 3 = store-row noise. Batch results are therefore
identical for any worker count or processing order. Each run writes a JSON
manifest recording the config, seed, and input checksums.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .correction import (
    CorrectionMode,
    GapCorrector,
    ModalityStats,
    NoiseConfig,
    NoiseMode,
    compute_stats,
    correct_matrix,
    inject_noise,
)
from .datastore import Datastore, RetrievalBundle
from .decoder import build_request, decoder_call, make_decoder
from .errors import BuildError, DecoderError, EngineError
from .formats import read_captions, read_embeddings, write_embeddings
from .metrics import EvalInstance, MetricReport, evaluate
from .prompt import OrderingKind, OrderingPolicy, build_prompt, order_captions
from .rerank import MmrConfig, mmr_rerank

DECODER_ENV_VAR = "CAPGAP_DECODER"

STREAM_QUERY_NOISE = 0
STREAM_DECODER_NOISE = 1
STREAM_ORDERING = 2
STREAM_STORE_NOISE = 3


def item_rng(master_seed: int, item_index: int, stream: int) -> np.random.Generator:
    """Per-item generator; independent of processing order and worker count."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(item_index, stream))
    return np.random.default_rng(ss)


def item_seed(master_seed: int, item_index: int, stream: int) -> int:
    """Derived 64-bit seed for APIs that take a seed rather than a generator."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(item_index, stream))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class PipelineConfig:
    """Declarative run configuration; defaults are the best-known setting
    (K=4, L=0.1, B=0.125, mean+std correction, decreasing order, no MMR)."""

    k: int = 4
    k_train: int | None = None
    seed: int = 0
    metric: str = "l2"

    correction_mode: CorrectionMode = CorrectionMode.MEAN_STD
    correction_direction: str = "image_to_text"
    image_stats_path: str | None = None
    text_stats_path: str | None = None
    epsilon_floor: float = 1e-8

    retrieval_noise: float = 0.1      # L
    decoder_noise: float = 0.125      # B
    noise_mode: NoiseMode = NoiseMode.FIXED
    noise_on_store_rows: bool = False
    noise_on_infer_queries: bool = False

    ordering_kind: OrderingKind = OrderingKind.DECREASING
    ordering_seed: int | None = None

    rerank_lambda: float | None = None
    rerank_pool: int = 16

    decoder_endpoint: str = "top1"
    decoder_timeout: float = 30.0
    workers: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if self.k_train is not None and self.k_train < 1:
            raise ValueError(f"K_train must be >= 1, got {self.k_train}")
        if self.retrieval_noise < 0 or self.decoder_noise < 0:
            raise ValueError("noise scales must be >= 0")
        if self.correction_direction not in ("image_to_text", "text_to_image"):
            raise ValueError(
                f"unknown correction direction {self.correction_direction!r}")
        if self.metric not in ("l2", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.ordering_kind is OrderingKind.RANDOM and self.ordering_seed is None:
            # random ordering without its own seed falls back to the master seed
            self.ordering_seed = self.seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["correction_mode"] = self.correction_mode.value
        d["noise_mode"] = self.noise_mode.value
        d["ordering_kind"] = self.ordering_kind.value
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        cfg = cls()
        top = dict(raw)
        correction = top.pop("correction", {})
        noise = top.pop("noise", {})
        ordering = top.pop("ordering", {})
        rerank = top.pop("rerank", None)
        decoder = top.pop("decoder", {})

        for key in ("k", "k_train", "seed", "metric", "workers"):
            if key in top:
                setattr(cfg, key, top.pop(key))
        if top:
            raise ValueError(f"unknown config keys: {sorted(top)}")

        if "mode" in correction:
            cfg.correction_mode = CorrectionMode.parse(str(correction["mode"]))
        if "direction" in correction:
            cfg.correction_direction = str(correction["direction"])
        cfg.image_stats_path = correction.get("image_stats", cfg.image_stats_path)
        cfg.text_stats_path = correction.get("text_stats", cfg.text_stats_path)
        cfg.epsilon_floor = float(correction.get("epsilon_floor", cfg.epsilon_floor))

        cfg.retrieval_noise = float(noise.get("retrieval_scale", cfg.retrieval_noise))
        cfg.decoder_noise = float(noise.get("decoder_scale", cfg.decoder_noise))
        if "mode" in noise:
            cfg.noise_mode = NoiseMode(str(noise["mode"]).lower())
        cfg.noise_on_store_rows = bool(noise.get("on_store_rows", cfg.noise_on_store_rows))
        cfg.noise_on_infer_queries = bool(
            noise.get("on_infer_queries", cfg.noise_on_infer_queries))

        if "kind" in ordering:
            cfg.ordering_kind = OrderingKind(str(ordering["kind"]).lower())
        if "seed" in ordering:
            cfg.ordering_seed = int(ordering["seed"])

        if rerank is not None and "lambda" in rerank:
            cfg.rerank_lambda = float(rerank["lambda"])
            cfg.rerank_pool = int(rerank.get("pool_size", cfg.rerank_pool))

        if "endpoint" in decoder:
            cfg.decoder_endpoint = str(decoder["endpoint"])
        cfg.decoder_timeout = float(decoder.get("timeout", cfg.decoder_timeout))

        cfg.__post_init__()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        p = Path(path)
        text = p.read_text(encoding="utf-8")
        if p.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            raw = tomllib.loads(text)
        else:
            raw = json.loads(text)
        return cls.from_dict(raw)

    def resolved_decoder(self) -> str:
        return os.environ.get(DECODER_ENV_VAR) or self.decoder_endpoint

    # correction wiring ------------------------------------------------------

    def _load_stats(self) -> tuple[ModalityStats, ModalityStats]:
        if not self.image_stats_path or not self.text_stats_path:
            raise ValueError(
                "correction.mode requires correction.image_stats and correction.text_stats")
        return (ModalityStats.load(self.image_stats_path),
                ModalityStats.load(self.text_stats_path))

    def store_row_corrector(self) -> GapCorrector | None:
        """Correction applied to datastore text rows at ingest time."""
        if self.correction_mode is CorrectionMode.NONE:
            return None
        if self.correction_direction != "text_to_image":
            return None
        image_stats, text_stats = self._load_stats()
        return GapCorrector(source=text_stats, target=image_stats,
                            mode=self.correction_mode, epsilon_floor=self.epsilon_floor)

    def infer_query_corrector(self) -> GapCorrector | None:
        """Correction applied to image queries at inference time."""
        if self.correction_mode is CorrectionMode.NONE:
            return None
        if self.correction_direction != "image_to_text":
            return None
        image_stats, text_stats = self._load_stats()
        return GapCorrector(source=image_stats, target=text_stats,
                            mode=self.correction_mode, epsilon_floor=self.epsilon_floor)

    def training_query_corrector(self) -> GapCorrector | None:
        """Correction applied to text queries when emitting training pairs."""
        if self.correction_mode is CorrectionMode.NONE:
            return None
        if self.correction_direction != "text_to_image":
            return None
        image_stats, text_stats = self._load_stats()
        return GapCorrector(source=text_stats, target=image_stats,
                            mode=self.correction_mode, epsilon_floor=self.epsilon_floor)


# --- shared helpers ----------------------------------------------------------

def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path: str | Path, cfg: PipelineConfig,
                   inputs: dict[str, str | Path], extra: dict | None = None) -> Path:
    manifest = {
        "tool": "capgap",
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": cfg.to_dict(),
        "inputs": {name: {"path": str(p), "sha256": file_sha256(p)}
                   for name, p in inputs.items()},
    }
    if extra:
        manifest.update(extra)
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path


def load_query_ids(ids_path: str | Path | None, count: int) -> list:
    """Ids for query rows: one per line from a file, or the row index."""
    if ids_path is None:
        return list(range(count))
    lines = [ln.strip() for ln in Path(ids_path).read_text(encoding="utf-8").splitlines()
             if ln.strip()]
    if len(lines) != count:
        raise BuildError(f"ids file has {len(lines)} entries but {count} query rows")
    return [int(ln) if ln.lstrip("-").isdigit() else ln for ln in lines]


def _ordering_policy_for_item(cfg: PipelineConfig, item_index: int) -> OrderingPolicy:
    if cfg.ordering_kind is OrderingKind.RANDOM:
        return OrderingPolicy(OrderingKind.RANDOM,
                              seed=item_seed(cfg.ordering_seed, item_index, STREAM_ORDERING))
    return OrderingPolicy(cfg.ordering_kind)


def _noise_cfg(cfg: PipelineConfig, scale: float) -> NoiseConfig:
    return NoiseConfig(scale=scale, mode=cfg.noise_mode, seed=cfg.seed)


# --- stats -------------------------------------------------------------------

def compute_stats_file(embeddings_path: str | Path, tag: str,
                       out_path: str | Path) -> ModalityStats:
    """CLI backend: per-dimension stats of an embedding file, written as JSON."""
    matrix = read_embeddings(embeddings_path)
    stats = compute_stats(matrix, tag)
    stats.save(out_path)
    return stats


# --- ingest ------------------------------------------------------------------

def ingest(embeddings_path: str | Path, captions_path: str | Path,
           out_store_path: str | Path, cfg: PipelineConfig) -> Datastore:
    """Correct (and optionally noise) caption embeddings, then index and save."""
    matrix = read_embeddings(embeddings_path)
    records = read_captions(captions_path)
    if matrix.shape[0] != len(records):
        raise BuildError(
            f"{matrix.shape[0]} embedding rows but {len(records)} caption lines")

    corrector = cfg.store_row_corrector()
    rows = matrix.astype(np.float64)
    if corrector is not None:
        rows = correct_matrix(rows, corrector)
    if cfg.noise_on_store_rows and cfg.retrieval_noise > 0:
        noise = _noise_cfg(cfg, cfg.retrieval_noise)
        rows = np.stack([
            inject_noise(rows[i], noise, rng=item_rng(cfg.seed, i, STREAM_STORE_NOISE))
            for i in range(rows.shape[0])
        ])
    store = Datastore.build(rows.astype(np.float32), records, cfg.metric)
    store.save(out_store_path)
    write_manifest(out_store_path, cfg,
                   {"embeddings": embeddings_path, "captions": captions_path},
                   {"rows": len(store), "dim": store.dim})
    return store


# --- inference ---------------------------------------------------------------

def _retrieve(store: Datastore, q: np.ndarray, cfg: PipelineConfig) -> RetrievalBundle:
    if cfg.rerank_lambda is None:
        return store.retrieve_for_inference(q, cfg.k)
    pool = min(cfg.rerank_pool, len(store))
    results = store.knn_search(q, pool)
    candidates = [(store.record_for(r.id), store.embedding_for(r.id)) for r in results]
    mmr_cfg = MmrConfig(lam=cfg.rerank_lambda, pool_size=pool,
                        select_count=min(cfg.k, len(candidates)))
    selected = mmr_rerank(q, candidates, mmr_cfg)
    return RetrievalBundle(
        prompt_captions=selected,
        raw_results=results,
        neighbor_embeddings=np.stack([store.embedding_for(r.id) for r in selected])
        if selected else np.empty((0, store.dim), dtype=np.float32),
        target=None,
    )


def infer(store_path: str | Path, queries_path: str | Path, out_path: str | Path,
          cfg: PipelineConfig, ids_path: str | Path | None = None) -> tuple[int, int]:
    """Caption every query embedding; returns (ok_count, failed_count).

    Per-item decoder failures are recorded in the output JSONL as error
    records and do not stop the run. Output order equals input order for any
    worker count.
    """
    store = Datastore.load(store_path)
    queries = read_embeddings(queries_path)
    ids = load_query_ids(ids_path, queries.shape[0])
    corrector = cfg.infer_query_corrector()
    decoder = make_decoder(cfg.resolved_decoder(), timeout=cfg.decoder_timeout)

    query_noise = _noise_cfg(cfg, cfg.retrieval_noise)
    payload_noise = _noise_cfg(cfg, cfg.decoder_noise)

    def process(i: int) -> dict:
        q = queries[i].astype(np.float64)
        if corrector is not None:
            q = corrector.apply(q)
        if cfg.noise_on_infer_queries and cfg.retrieval_noise > 0:
            q = inject_noise(q, query_noise, rng=item_rng(cfg.seed, i, STREAM_QUERY_NOISE))
        bundle = _retrieve(store, q, cfg)
        ordered = order_captions(bundle.prompt_captions, _ordering_policy_for_item(cfg, i))
        prompt = build_prompt([c.text for c in ordered])

        input_emb = q
        neighbors = bundle.neighbor_embeddings.astype(np.float64)
        if cfg.decoder_noise > 0:
            rng = item_rng(cfg.seed, i, STREAM_DECODER_NOISE)
            input_emb = inject_noise(input_emb, payload_noise, rng=rng)
            neighbors = np.stack([inject_noise(row, payload_noise, rng=rng)
                                  for row in neighbors]) if neighbors.size else neighbors
        request = build_request(f"q{i}", prompt, input_emb, neighbors)
        try:
            response = decoder_call(decoder, request, bundle)
        except DecoderError as exc:
            return {"image_id": ids[i],
                    "error": {"type": type(exc).__name__, "message": str(exc),
                              "request_id": exc.request_id}}
        return {"image_id": ids[i], "caption": response.caption, "prompt": prompt,
                "neighbor_ids": [c.id for c in ordered]}

    try:
        if cfg.workers == 1:
            records = [process(i) for i in range(queries.shape[0])]
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                records = list(pool.map(process, range(queries.shape[0])))
    finally:
        decoder.close()

    with open(out_path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    failed = sum(1 for r in records if "error" in r)
    write_manifest(out_path, cfg,
                   {"store": store_path, "queries": queries_path},
                   {"items": len(records), "failed": failed,
                    "decoder": cfg.resolved_decoder()})
    return len(records) - failed, failed


# --- training pairs ----------------------------------------------------------

def make_training_pairs(store_path: str | Path, text_embeddings_path: str | Path,
                        out_path: str | Path, cfg: PipelineConfig,
                        ids_path: str | Path | None = None,
                        exclude_self: bool = False) -> int:
    """Emit decoder-training examples: prompt from K captions, nearest as target.

    Queries are raw text-side embeddings; correction (per the configured
    direction) and retrieval-side noise are applied here. Uses K_train when
    configured. With ``exclude_self`` the query's own caption id (from the
    ids file) is dropped from retrieval.
    """
    store = Datastore.load(store_path)
    queries = read_embeddings(text_embeddings_path)
    ids = load_query_ids(ids_path, queries.shape[0])
    if exclude_self and ids_path is None:
        raise ValueError("exclude_self requires an ids file mapping rows to caption ids")
    k = cfg.k_train or cfg.k
    corrector = cfg.training_query_corrector()
    noise = _noise_cfg(cfg, cfg.retrieval_noise)

    with open(out_path, "w", encoding="utf-8") as f:
        for i in range(queries.shape[0]):
            q = queries[i].astype(np.float64)
            if corrector is not None:
                q = corrector.apply(q)
            if cfg.retrieval_noise > 0:
                q = inject_noise(q, noise, rng=item_rng(cfg.seed, i, STREAM_QUERY_NOISE))
            exclude_id = ids[i] if exclude_self else None
            bundle = store.retrieve_for_training(q, k, exclude_id=exclude_id)
            ordered = order_captions(bundle.prompt_captions, _ordering_policy_for_item(cfg, i))
            record = {
                "image_id": ids[i],
                "prompt": build_prompt([c.text for c in ordered]),
                "target": bundle.target.text,
                "target_id": bundle.target.id,
                "neighbor_ids": [c.id for c in ordered],
                "input_embedding_ref": {"path": str(text_embeddings_path), "row": i},
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    write_manifest(out_path, cfg,
                   {"store": store_path, "text_embeddings": text_embeddings_path},
                   {"items": queries.shape[0], "k_train": k})
    return queries.shape[0]


# --- evaluation --------------------------------------------------------------

def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise BuildError(f"{path}:{lineno}: invalid JSON: {exc}")
    return rows


def evaluate_files(candidates_path: str | Path, references_path: str | Path,
                   out_path: str | Path | None = None) -> MetricReport:
    """Join candidate and reference JSONL files on image_id and score them.

    Candidate rows carry ``caption`` (pipeline output) or ``candidate``;
    error records and ids missing from either side are excluded with a
    warning listed in the report.
    """
    candidates = {}
    skipped_errors = 0
    for row in _read_jsonl(candidates_path):
        if "error" in row:
            skipped_errors += 1
            continue
        text = row.get("candidate", row.get("caption"))
        if text is None:
            raise BuildError(f"candidate row for {row.get('image_id')!r} has no caption")
        candidates[row["image_id"]] = text

    references = {}
    for row in _read_jsonl(references_path):
        references[row["image_id"]] = row["references"]

    shared = [i for i in candidates if i in references]
    warnings = []
    if skipped_errors:
        warnings.append(f"excluded {skipped_errors} error records from candidates")
    missing_refs = sorted((i for i in candidates if i not in references), key=str)
    missing_cands = sorted((i for i in references if i not in candidates), key=str)
    if missing_refs:
        warnings.append(f"no references for image_ids {missing_refs}; excluded")
    if missing_cands:
        warnings.append(f"no candidates for image_ids {missing_cands}; excluded")
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not shared:
        raise EngineError("no image_ids shared between candidates and references")

    corpus = [EvalInstance(image_id=i, candidate=candidates[i], references=references[i])
              for i in shared]
    report = evaluate(corpus)
    report.warnings = warnings + report.warnings
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    return report


__all__ = [
    "PipelineConfig", "item_rng", "item_seed", "ingest", "infer",
    "make_training_pairs", "evaluate_files", "compute_stats_file",
    "write_manifest", "file_sha256", "DECODER_ENV_VAR",
]
