"""Binary and JSONL file formats shared across the engine and exporters.

Embedding file (little-endian throughout):

    offset 0   magic "TOMC" (4 bytes)
    offset 4   format version, u32 (currently 1)
    offset 8   dtype code, u32 (0 = 32-bit float; the only code defined)
    offset 12  dim, u32 (> 0)
    offset 16  count, u64
    offset 24  payload: count * dim float32 values, row-major

Caption file: JSON Lines, one object ``{"id": n, "text": "...", "source": "..."}``
per line, ids aligned with embedding row order.

Store file:

    offset 0   magic "TOMS"
    offset 4   version, u32 (currently 1)
    offset 8   metric code, u32 (0 = L2, 1 = Cosine)
    offset 12  embedding block: a complete embedding file blob
    then       caption block length, u64, followed by that many caption JSONL bytes
    trailer    CRC32 (zlib) of every preceding byte, u32

All parse failures raise :class:`FormatError` carrying the byte offset at
which the problem was detected: the offending header field for bad values,
or the position where the data ran out for truncation.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError

EMBEDDING_MAGIC = b"TOMC"
STORE_MAGIC = b"TOMS"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0

EMBEDDING_HEADER_SIZE = 24

METRIC_CODES = {"l2": 0, "cosine": 1}
METRIC_NAMES = {v: k for k, v in METRIC_CODES.items()}


@dataclass(frozen=True)
class CaptionRecord:
    """One datastore caption: unique 64-bit id, text, and provenance tag."""

    id: int
    text: str
    source_tag: str = ""

    def __post_init__(self):
        if not (0 <= self.id < 2**64):
            raise ValueError(f"id must fit in u64, got {self.id}")
        if not self.text:
            raise ValueError("caption text must be non-empty")


# --- embedding binaries ------------------------------------------------------

def write_embeddings(path: str | Path, matrix: np.ndarray) -> None:
    """Write an (N, dim) array as a float32 embedding file."""
    try:
        with open(path, "wb") as f:
            f.write(embedding_block_bytes(matrix))
    except OSError as exc:
        raise IoError(f"cannot write embedding file {path}: {exc}") from exc


def embedding_block_bytes(matrix: np.ndarray) -> bytes:
    a = np.ascontiguousarray(matrix, dtype="<f4")
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    count, dim = a.shape
    header = EMBEDDING_MAGIC + struct.pack("<III Q", FORMAT_VERSION, DTYPE_FLOAT32, dim, count)
    return header + a.tobytes()


def read_embeddings(path: str | Path) -> np.ndarray:
    """Read an embedding file into a float32 (count, dim) array."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read embedding file {path}: {exc}", 0) from exc
    matrix, end = parse_embedding_block(data, base=0)
    if end != len(data):
        raise FormatError(f"trailing bytes after embedding payload in {path}", end)
    return matrix


def parse_embedding_block(data: bytes, base: int) -> tuple[np.ndarray, int]:
    """Parse one embedding block starting at ``base``; return (matrix, end offset)."""
    if len(data) < base + EMBEDDING_HEADER_SIZE:
        raise FormatError("truncated embedding header", len(data))
    if data[base:base + 4] != EMBEDDING_MAGIC:
        raise FormatError(
            f"bad embedding magic {data[base:base + 4]!r}, expected {EMBEDDING_MAGIC!r}", base
        )
    version, dtype, dim, count = struct.unpack_from("<III Q", data, base + 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported embedding format version {version}", base + 4)
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f"unsupported dtype code {dtype}", base + 8)
    if dim == 0:
        raise FormatError("dim must be positive", base + 12)
    payload_start = base + EMBEDDING_HEADER_SIZE
    payload_len = count * dim * 4
    if len(data) < payload_start + payload_len:
        raise FormatError(
            f"truncated embedding payload: need {payload_len} bytes, have {len(data) - payload_start}",
            len(data),
        )
    flat = np.frombuffer(data, dtype="<f4", count=count * dim, offset=payload_start)
    matrix = flat.reshape(count, dim).copy()
    return matrix, payload_start + payload_len


# --- caption JSONL -----------------------------------------------------------

def write_captions(path: str | Path, records: list[CaptionRecord]) -> None:
    try:
        with open(path, "wb") as f:
            f.write(captions_block_bytes(records))
    except OSError as exc:
        raise IoError(f"cannot write caption file {path}: {exc}") from exc


def captions_block_bytes(records: list[CaptionRecord]) -> bytes:
    lines = []
    for rec in records:
        lines.append(json.dumps(
            {"id": rec.id, "text": rec.text, "source": rec.source_tag},
            ensure_ascii=False,
        ))
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def read_captions(path: str | Path) -> list[CaptionRecord]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read caption file {path}: {exc}", 0) from exc
    return parse_captions_block(data, base_offset=0)


def parse_captions_block(data: bytes, base_offset: int) -> list[CaptionRecord]:
    """Parse caption JSONL bytes; offsets in errors are relative to the file."""
    records = []
    offset = 0
    for lineno, raw in enumerate(data.split(b"\n"), start=1):
        stripped = raw.strip()
        if stripped:
            try:
                obj = json.loads(stripped.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise FormatError(f"caption line {lineno} is not valid JSON: {exc}",
                                  base_offset + offset) from exc
            try:
                records.append(CaptionRecord(
                    id=int(obj["id"]),
                    text=str(obj["text"]),
                    source_tag=str(obj.get("source", "")),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"caption line {lineno} is malformed: {exc}",
                                  base_offset + offset) from exc
        offset += len(raw) + 1
    return records


# --- store files -------------------------------------------------------------

def store_file_bytes(embeddings: np.ndarray, records: list[CaptionRecord], metric: str) -> bytes:
    code = METRIC_CODES[metric]
    buf = io.BytesIO()
    buf.write(STORE_MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, code))
    buf.write(embedding_block_bytes(embeddings))
    captions = captions_block_bytes(records)
    buf.write(struct.pack("<Q", len(captions)))
    buf.write(captions)
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def write_store_file(path: str | Path, embeddings: np.ndarray,
                     records: list[CaptionRecord], metric: str) -> None:
    try:
        with open(path, "wb") as f:
            f.write(store_file_bytes(embeddings, records, metric))
    except OSError as exc:
        raise IoError(f"cannot write store file {path}: {exc}") from exc


def read_store_file(path: str | Path) -> tuple[np.ndarray, list[CaptionRecord], str]:
    """Read a store file; returns (embeddings, records, metric name).

    Verifies the CRC32 trailer before trusting any content.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read store file {path}: {exc}", 0) from exc
    if len(data) < 12:
        raise FormatError("truncated store header", len(data))
    if data[:4] != STORE_MAGIC:
        raise FormatError(f"bad store magic {data[:4]!r}, expected {STORE_MAGIC!r}", 0)
    version, code = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported store format version {version}", 4)
    if code not in METRIC_NAMES:
        raise FormatError(f"unknown metric code {code}", 8)
    if len(data) < 16:
        raise FormatError("store file too short for CRC trailer", len(data))
    body, (stored_crc,) = data[:-4], struct.unpack("<I", data[-4:])
    actual_crc = zlib.crc32(body)
    if actual_crc != stored_crc:
        raise FormatError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}",
            len(data) - 4,
        )
    embeddings, pos = parse_embedding_block(body, base=12)
    if len(body) < pos + 8:
        raise FormatError("truncated caption block length", len(body))
    (caption_len,) = struct.unpack_from("<Q", body, pos)
    pos += 8
    if len(body) < pos + caption_len:
        raise FormatError(
            f"truncated caption block: need {caption_len} bytes, have {len(body) - pos}",
            len(body),
        )
    records = parse_captions_block(body[pos:pos + caption_len], base_offset=pos)
    pos += caption_len
    if pos != len(body):
        raise FormatError("trailing bytes before CRC trailer", pos)
    return embeddings, records, METRIC_NAMES[code]
