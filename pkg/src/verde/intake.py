"""Standalone document intake: read, chunk with overlap, embed, export.

Runs as its own process (`verde-intake`) and hands collections to the
gateway through the line-JSON export format, so document processing never
needs a live gateway.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from .errors import EncodingError, IoError, UnsupportedFormat, ValidationError
from .rag import RagEngine

FORMATS = {".txt": "plain_text", ".md": "markdown"}

_TOKEN_SPAN_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class SourceDocument:
    path: str
    format: str
    text: str


@dataclass(frozen=True)
class ChunkingConfig:
    size_tokens: int = 512
    overlap_tokens: int = 64

    def __post_init__(self) -> None:
        if self.size_tokens <= 0:
            raise ValidationError("size_tokens must be positive")
        if self.overlap_tokens < 0:
            raise ValidationError("overlap_tokens must be non-negative")
        if self.overlap_tokens >= self.size_tokens:
            raise ValidationError("overlap_tokens must be smaller than size_tokens")


def read_document(path: str) -> SourceDocument:
    suffix = Path(path).suffix.lower()
    fmt = FORMATS.get(suffix)
    if fmt is None:
        raise UnsupportedFormat(f"unsupported extension {suffix!r} for {path}")
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"{path} is not valid UTF-8: {exc}") from exc
    # Markdown is kept verbatim; headings and markup stay retrievable.
    return SourceDocument(path=path, format=fmt, text=text)


def chunk(text: str, config: Optional[ChunkingConfig] = None) -> List[str]:
    """Split `text` into overlapping windows of whitespace tokens.

    Window i covers tokens [i*stride, i*stride + size) with
    stride = size - overlap; the final partial window is kept if nonempty.
    Each chunk is the original substring from its first to its last token,
    so internal whitespace is preserved exactly.
    """
    config = config or ChunkingConfig()
    spans = [m.span() for m in _TOKEN_SPAN_RE.finditer(text)]
    if not spans:
        return []
    stride = config.size_tokens - config.overlap_tokens
    chunks = []
    for start in range(0, len(spans), stride):
        end = min(start + config.size_tokens, len(spans))
        chunks.append(text[spans[start][0] : spans[end - 1][1]])
    return chunks


def ingest(
    paths: Iterable[str],
    collection_id: str,
    config: Optional[ChunkingConfig] = None,
    engine: Optional[RagEngine] = None,
    out_path: Optional[str] = None,
) -> Dict[str, int]:
    """Chunk and embed every readable document into `collection_id`.

    Unreadable files are counted as skipped rather than aborting the run;
    the run fails only when no document at all could be read. Re-ingesting
    the same files replaces chunks by (source, seq), so the operation is
    idempotent.
    """
    config = config or ChunkingConfig()
    engine = engine or RagEngine()
    if not engine.has_collection(collection_id):
        engine.create_collection(collection_id)
    stats = {"documents": 0, "chunks": 0, "skipped": 0}
    for path in paths:
        try:
            document = read_document(path)
        except (UnsupportedFormat, IoError, EncodingError) as exc:
            print(f"skipping {path}: {exc}", file=sys.stderr)
            stats["skipped"] += 1
            continue
        for seq, piece in enumerate(chunk(document.text, config)):
            engine.upsert(collection_id, piece, document.path, seq)
            stats["chunks"] += 1
        stats["documents"] += 1
    if stats["documents"] == 0:
        raise ValidationError("no readable documents among the inputs")
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            engine.export_collection(collection_id, fh)
    return stats


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="verde-intake",
        description="Chunk and embed documents into a line-JSON collection export.",
    )
    parser.add_argument("--collection", required=True, help="collection id to build")
    parser.add_argument("--chunk-size", type=int, default=512, help="window size in tokens")
    parser.add_argument("--overlap", type=int, default=64, help="window overlap in tokens")
    parser.add_argument("--out", default=None, help="export path (default: <collection>.jsonl)")
    parser.add_argument("paths", nargs="+", help="input documents (.txt, .md)")
    args = parser.parse_args(argv)

    try:
        config = ChunkingConfig(size_tokens=args.chunk_size, overlap_tokens=args.overlap)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_path = args.out or f"{args.collection}.jsonl"
    try:
        stats = ingest(args.paths, args.collection, config, out_path=out_path)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(stats, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
