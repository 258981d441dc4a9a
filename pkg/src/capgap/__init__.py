"""Text-only image captioning via gap-corrected retrieval.

Builds a caption datastore from text embeddings, corrects the geometric
offset between image and text embedding distributions, retrieves nearby
captions for each query, assembles them into a fixed-grammar prompt, and
hands the prompt to a pluggable decoder. Includes caption metrics and
cross-modal diagnostics.
"""

__version__ = "0.1.0"

from .correction import (
    CorrectionMode,
    GapCorrector,
    ModalityStats,
    NoiseConfig,
    NoiseMode,
    compute_stats,
    correct,
    correct_matrix,
    gap_radius,
    inject_noise,
)
from .datastore import Datastore, RetrievalBundle, SearchResult
from .decoder import (
    DecoderRequest,
    DecoderResponse,
    build_request,
    decoder_call,
    make_decoder,
)
from .diagnostics import KnorReport, export_projection_input, knor
from .errors import (
    BuildError,
    DecoderError,
    DimMismatch,
    DuplicateId,
    EmptyCandidates,
    EmptyPrompt,
    EmptyStore,
    EngineError,
    FormatError,
    InsufficientStore,
    InvalidEmbedding,
    InvalidK,
    IoError,
    NonzeroExit,
    PairMismatch,
    ProtocolError,
    StatsInsufficientData,
    Timeout,
)
from .formats import (
    CaptionRecord,
    read_captions,
    read_embeddings,
    read_store_file,
    write_captions,
    write_embeddings,
    write_store_file,
)
from .metrics import EvalInstance, MetricReport, bleu, cider, evaluate, tokenize
from .pipeline import (
    PipelineConfig,
    evaluate_files,
    infer,
    ingest,
    make_training_pairs,
)
from .prompt import OrderingKind, OrderingPolicy, build_prompt, order_captions
from .rerank import MmrConfig, cosine_similarity, mmr_rerank

__all__ = [
    "__version__",
    "CorrectionMode", "GapCorrector", "ModalityStats", "NoiseConfig", "NoiseMode",
    "compute_stats", "correct", "correct_matrix", "gap_radius", "inject_noise",
    "Datastore", "RetrievalBundle", "SearchResult",
    "DecoderRequest", "DecoderResponse", "build_request", "decoder_call", "make_decoder",
    "KnorReport", "export_projection_input", "knor",
    "EngineError", "BuildError", "DecoderError", "DimMismatch", "DuplicateId",
    "EmptyCandidates", "EmptyPrompt", "EmptyStore", "FormatError", "InsufficientStore",
    "InvalidEmbedding", "InvalidK", "IoError", "NonzeroExit", "PairMismatch",
    "ProtocolError", "StatsInsufficientData", "Timeout",
    "CaptionRecord", "read_captions", "read_embeddings", "read_store_file",
    "write_captions", "write_embeddings", "write_store_file",
    "EvalInstance", "MetricReport", "bleu", "cider", "evaluate", "tokenize",
    "PipelineConfig", "evaluate_files", "infer", "ingest", "make_training_pairs",
    "OrderingKind", "OrderingPolicy", "build_prompt", "order_captions",
    "MmrConfig", "cosine_similarity", "mmr_rerank",
]
