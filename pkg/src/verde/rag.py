"""Deterministic embeddings, exact cosine retrieval, and RAG prompt assembly.

The embedder is a 64-dimension feature-hashing scheme (FNV-1a over token
bytes, signed accumulation, L2 normalization). It is deliberately cheap and
fully deterministic so retrieval behavior is reproducible in tests and
across processes; a learned sentence encoder can replace it behind the same
`Embedder` interface without touching the index or the gateway.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, TextIO, Tuple

import numpy as np

from .errors import DimensionMismatch, NotFound, ValidationError
from .store import Store

DIMS = 64

_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1

# Token = maximal run of alphanumeric characters (Unicode letters included,
# underscore excluded).
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

Embedder = Callable[[str], np.ndarray]


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def embed(text: str) -> np.ndarray:
    """Hash-embed `text` into a 64-dim unit vector (zero vector if no tokens).

    Each lowercased token lands in bucket h mod 64 with sign +1/-1 taken
    from bit 6 of its FNV-1a 64-bit hash; the accumulated vector is then
    L2-normalized.
    """
    acc = np.zeros(DIMS, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        h = _fnv1a64(token.encode("utf-8"))
        index = h % DIMS
        sign = 1.0 if (h >> 6) & 1 == 0 else -1.0
        acc[index] += sign
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:
        return acc
    return acc / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare {a.shape} with {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def chunk_id_for(collection_id: str, source: str, seq: int) -> str:
    """Deterministic chunk id: stable across runs and across import/export."""
    raw = f"{collection_id}\x00{source}\x00{seq}".encode("utf-8")
    return hashlib.sha256(raw).hexdigest()[:16]


@dataclass(frozen=True)
class Chunk:
    id: str
    collection_id: str
    text: str
    source: str
    seq: int
    vector: np.ndarray

    def to_json(self) -> Dict:
        return {
            "id": self.id,
            "collection_id": self.collection_id,
            "text": self.text,
            "source": self.source,
            "seq": self.seq,
            "vector": [float(x) for x in self.vector],
        }


@dataclass(frozen=True)
class RetrievalResult:
    chunk: Chunk
    score: float


_CHUNK_KEY_SEP = "\x1f"


def _chunk_store_key(collection_id: str, source: str, seq: int) -> str:
    return _CHUNK_KEY_SEP.join((collection_id, "chunk", source, str(seq)))


class RagEngine:
    """Named chunk collections with exact (non-approximate) cosine top-k.

    Collections live in memory for scanning; when a store is supplied every
    mutation is written through and the engine reloads state on startup.
    Reads take a consistent snapshot under the lock, writes are exclusive.
    """

    def __init__(self, store: Optional[Store] = None, embedder: Embedder = embed):
        self.store = store
        self.embedder = embedder
        self._lock = threading.RLock()
        self._collections: Dict[str, Dict] = {}  # id -> {"name", "chunks": {(source,seq): Chunk}}
        if store is not None:
            self._load()

    def _load(self) -> None:
        assert self.store is not None
        for key in self.store.list_prefix("collections"):
            if _CHUNK_KEY_SEP in key:
                continue
            _, meta = self.store.get("collections", key)
            self._collections[meta["id"]] = {"name": meta["name"], "chunks": {}}
        for key in self.store.list_prefix("collections"):
            if _CHUNK_KEY_SEP not in key:
                continue
            _, body = self.store.get("collections", key)
            chunk = Chunk(
                id=body["id"],
                collection_id=body["collection_id"],
                text=body["text"],
                source=body["source"],
                seq=body["seq"],
                vector=np.array(body["vector"], dtype=np.float64),
            )
            coll = self._collections.get(chunk.collection_id)
            if coll is not None:
                coll["chunks"][(chunk.source, chunk.seq)] = chunk

    # -- collections -------------------------------------------------------

    def create_collection(self, collection_id: str, name: Optional[str] = None) -> Dict:
        with self._lock:
            if collection_id in self._collections:
                return self.collection_info(collection_id)
            self._collections[collection_id] = {"name": name or collection_id, "chunks": {}}
            self._persist_meta(collection_id)
            return self.collection_info(collection_id)

    def has_collection(self, collection_id: str) -> bool:
        with self._lock:
            return collection_id in self._collections

    def collection_info(self, collection_id: str) -> Dict:
        with self._lock:
            coll = self._require(collection_id)
            return {
                "id": collection_id,
                "name": coll["name"],
                "dims": DIMS,
                "chunk_count": len(coll["chunks"]),
            }

    def list_collections(self) -> List[str]:
        with self._lock:
            return sorted(self._collections)

    def _require(self, collection_id: str) -> Dict:
        coll = self._collections.get(collection_id)
        if coll is None:
            raise NotFound(f"collection {collection_id!r}")
        return coll

    def _persist_meta(self, collection_id: str) -> None:
        if self.store is None:
            return
        info = {
            "id": collection_id,
            "name": self._collections[collection_id]["name"],
            "dims": DIMS,
            "chunk_count": len(self._collections[collection_id]["chunks"]),
        }
        from .errors import VersionConflict

        while True:
            try:
                version = self.store.get("collections", collection_id)[0]
            except NotFound:
                version = 0
            try:
                self.store.put_cas("collections", collection_id, version, info)
                return
            except VersionConflict:
                continue

    # -- chunks ------------------------------------------------------------

    def upsert(self, collection_id: str, text: str, source: str, seq: int) -> Chunk:
        with self._lock:
            coll = self._require(collection_id)
            chunk = Chunk(
                id=chunk_id_for(collection_id, source, seq),
                collection_id=collection_id,
                text=text,
                source=source,
                seq=seq,
                vector=self.embedder(text),
            )
            coll["chunks"][(source, seq)] = chunk
            if self.store is not None:
                from .errors import VersionConflict

                key = _chunk_store_key(collection_id, source, seq)
                while True:
                    try:
                        version = self.store.get("collections", key)[0]
                    except NotFound:
                        version = 0
                    try:
                        self.store.put_cas("collections", key, version, chunk.to_json())
                        break
                    except VersionConflict:
                        continue
                self._persist_meta(collection_id)
            return chunk

    def chunks(self, collection_id: str) -> List[Chunk]:
        with self._lock:
            coll = self._require(collection_id)
            return sorted(coll["chunks"].values(), key=lambda c: (c.source, c.seq))

    # -- retrieval ----------------------------------------------------------

    def top_k(
        self, collection_id: str, query_text: str, k: int = 4, threshold: float = 0.0
    ) -> List[RetrievalResult]:
        if k < 1:
            raise ValidationError("k must be >= 1")
        with self._lock:
            chunks = list(self._require(collection_id)["chunks"].values())
        if not chunks:
            return []
        query = self.embedder(query_text)
        matrix = np.stack([c.vector for c in chunks])
        # Chunk and query vectors are unit-or-zero, so the dot product is the
        # cosine score directly (zero vectors score 0 by definition). Ordering
        # quantizes scores at 1e-12 so algebraically-equal scores computed via
        # different float paths still tie, deterministically, on chunk id.
        scores = matrix @ query
        ranked = sorted(
            zip(chunks, scores), key=lambda pair: (-round(pair[1], 12), pair[0].id)
        )
        results = []
        for chunk, score in ranked:
            if score < threshold:
                continue
            results.append(RetrievalResult(chunk=chunk, score=float(score)))
            if len(results) == k:
                break
        return results

    # -- export / import -----------------------------------------------------

    def export_lines(self, collection_id: str) -> Iterable[str]:
        for chunk in self.chunks(collection_id):
            yield json.dumps(chunk.to_json(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    def export_collection(self, collection_id: str, fh: TextIO) -> int:
        count = 0
        for line in self.export_lines(collection_id):
            fh.write(line)
            fh.write("\n")
            count += 1
        return count

    def import_lines(self, lines: Iterable[str]) -> Tuple[Optional[str], int]:
        """Load a line-JSON collection dump; returns (collection_id, chunks)."""
        collection_id: Optional[str] = None
        count = 0
        for line in lines:
            line = line.strip()
            if not line:
                continue
            try:
                body = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"bad collection line: {exc}") from exc
            for field in ("collection_id", "text", "source", "seq", "vector"):
                if field not in body:
                    raise ValidationError(f"collection line missing {field!r}")
            collection_id = body["collection_id"]
            if not self.has_collection(collection_id):
                self.create_collection(collection_id)
            chunk = self.upsert(collection_id, body["text"], body["source"], body["seq"])
            if not np.allclose(chunk.vector, np.array(body["vector"], dtype=np.float64), atol=1e-6):
                raise ValidationError(
                    f"vector for {body['source']}#{body['seq']} does not match its text"
                )
            count += 1
        return collection_id, count


# -- prompt assembly ---------------------------------------------------------

REFERENCE_OPEN = "<Reference>"
REFERENCE_CLOSE = "</Reference>"
_REFERENCE_SLOT = REFERENCE_OPEN + REFERENCE_CLOSE
_ESCAPED_CLOSE = "<⁄Reference>"
_ESCAPED_OPEN = "<Reference⁄>"
CHUNK_JOINER = "\n---\n"

DEFAULT_RAG_TEMPLATE = (
    "You are a teaching assistant.\n"
    "You are having a conversation with a student and the student will ask you a question.\n"
    "To answer the student's question use information only from the reference text below "
    "and from the history of the conversation. When you answer the question, quote the text "
    "that you used to base your answer off. If you can't answer it, then say \"I can't answer "
    "this question\". You will add the URL for the source if it is available.\n"
    "You always answer the question with markdown formatting.\n"
    "You will be penalized if you do not answer with markdown when it would be possible. "
    "The markdown formatting you support: headings, bold, italic, links, tables, lists, "
    "code blocks, and blockquotes. You do not support images and never include images. "
    "You will be penalized if you render images. You will not wrap the output with triple "
    "backticks.\n"
    "Reference text:" + _REFERENCE_SLOT
)


def escape_reference_text(text: str) -> str:
    """Neutralize literal Reference delimiters inside retrieved chunk text."""
    return text.replace(REFERENCE_CLOSE, _ESCAPED_CLOSE).replace(REFERENCE_OPEN, _ESCAPED_OPEN)


def assemble_prompt(
    results: List[RetrievalResult],
    question: str,
    history: Optional[List[Dict[str, str]]] = None,
    template: str = DEFAULT_RAG_TEMPLATE,
) -> List[Dict[str, str]]:
    """Build the upstream message list for a RAG turn.

    The system message is the teaching-assistant template with the retrieved
    chunk texts (escaped, joined by "\\n---\\n") inserted into its Reference
    block; history turns follow, and the student question is the final user
    message. An empty result list leaves the Reference block empty, so the
    template's refusal instruction governs the answer.
    """
    if _REFERENCE_SLOT not in template:
        template = template + "\nReference text:" + _REFERENCE_SLOT
    references = CHUNK_JOINER.join(escape_reference_text(r.chunk.text) for r in results)
    system = template.replace(
        _REFERENCE_SLOT, REFERENCE_OPEN + references + REFERENCE_CLOSE, 1
    )
    messages = [{"role": "system", "content": system}]
    for turn in history or []:
        messages.append({"role": turn["role"], "content": turn["content"]})
    messages.append({"role": "user", "content": question})
    return messages
