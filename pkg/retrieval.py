"""
Chunk-level search over three index kinds, all scored exhaustively:

- single: one pooled vector per chunk, cosine through a flat FAISS inner-product index
- multi: unit token vectors per chunk stored contiguously, MaxSim scoring
- bm25: Okapi BM25 over chunk term statistics (chunks are the BM25 documents)
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import faiss
import numpy as np
import torch
from tqdm import tqdm

from core import ContextEmbError, Corpus
from encoder import EncoderParams, Tokenizer
from pooling import ChunkTokenSet, pool_document, pool_query
from POOLING_MODES import IndexKind, PoolingMode
from SCORERS import Scorer

LOG = logging.getLogger(__name__)

INDEX_MAGIC = b"CTXIDX"
INDEX_VERSION = 1
BM25_K1 = 1.5
BM25_B = 0.75

Entry = Tuple[str, int]


class RetrievalError(ContextEmbError, ValueError):
    module = "retrieval"


@dataclass
class BM25Stats:
    chunk_terms: List[Counter]
    lengths: List[int]
    doc_freq: Dict[str, int]

    @classmethod
    def build(cls, tokenized_chunks: Sequence[List[str]]) -> "BM25Stats":
        chunk_terms = [Counter(tokens) for tokens in tokenized_chunks]
        doc_freq: Counter = Counter()
        for terms in chunk_terms:
            doc_freq.update(terms.keys())
        return cls(chunk_terms, [len(tokens) for tokens in tokenized_chunks], dict(doc_freq))

    @property
    def n_chunks(self) -> int:
        return len(self.chunk_terms)

    @property
    def avg_length(self) -> float:
        return sum(self.lengths) / self.n_chunks if self.n_chunks else 0.0

    def idf(self, term: str) -> float:
        n_t = self.doc_freq.get(term, 0)
        return math.log((self.n_chunks - n_t + 0.5) / (n_t + 0.5) + 1.0)


def bm25_score(query_terms: Sequence[str], chunk_terms: Counter, stats: BM25Stats,
               k1: float = BM25_K1, b: float = BM25_B) -> float:
    """Okapi BM25 of one chunk; repeated query terms count once per occurrence."""
    length = sum(chunk_terms.values())
    avg_length = stats.avg_length or 1.0
    total = 0.0
    for term in query_terms:
        tf = chunk_terms.get(term, 0)
        if tf == 0:
            continue
        total += stats.idf(term) * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * length / avg_length))
    return total


@dataclass(frozen=True)
class Hit:
    doc_id: str
    chunk_index: int
    score: float


@dataclass
class SearchResult:
    hits: List[Hit]

    def __iter__(self):
        return iter(self.hits)

    def __len__(self):
        return len(self.hits)

    @property
    def refs(self) -> List[Entry]:
        return [(h.doc_id, h.chunk_index) for h in self.hits]


@dataclass
class ChunkIndex:
    kind: IndexKind
    entries: List[Entry]
    mode: Optional[str] = None
    vectors: Optional[np.ndarray] = None
    token_vectors: Optional[np.ndarray] = None
    token_offsets: Optional[np.ndarray] = None
    bm25: Optional[BM25Stats] = None
    metadata: dict = field(default_factory=dict)
    _flat: Optional[faiss.IndexFlatIP] = field(default=None, init=False, repr=False, compare=False)

    def __len__(self):
        return len(self.entries)

    @property
    def dim(self) -> Optional[int]:
        if self.vectors is not None:
            return int(self.vectors.shape[1])
        if self.token_vectors is not None:
            return int(self.token_vectors.shape[1])
        return None

    def validate(self) -> "ChunkIndex":
        if len(set(self.entries)) != len(self.entries):
            raise RetrievalError("index entries must be unique by (doc_id, chunk_index)")
        n = len(self.entries)
        if self.kind is IndexKind.SINGLE and (self.vectors is None or self.vectors.shape[0] != n):
            raise RetrievalError("single-vector index needs one vector per entry")
        if self.kind is IndexKind.MULTI and (self.token_offsets is None or len(self.token_offsets) != n + 1):
            raise RetrievalError("multi-vector index needs n+1 token offsets")
        if self.kind is IndexKind.BM25 and (self.bm25 is None or self.bm25.n_chunks != n):
            raise RetrievalError("BM25 index needs term statistics for every entry")
        return self

    def flat_index(self) -> faiss.IndexFlatIP:
        if self._flat is None:
            unit = np.ascontiguousarray(self.vectors, dtype=np.float32).copy()
            norms = np.linalg.norm(unit, axis=1)
            if (norms == 0).any():
                raise RetrievalError("zero-norm chunk vector cannot be scored by cosine")
            faiss.normalize_L2(unit)
            self._flat = faiss.IndexFlatIP(unit.shape[1])
            self._flat.add(unit)
        return self._flat


def build_index(corpus: Corpus, params: EncoderParams, mode, window_tokens: Optional[int] = None,
                overlap_chunks: int = 10, progress: bool = True) -> ChunkIndex:
    """One entry per chunk of the corpus, documents in doc_id order."""
    mode = PoolingMode.get(mode)
    kind = IndexKind.for_mode(mode)
    entries: List[Entry] = []
    rows: List[np.ndarray] = []
    started = time.perf_counter()

    with torch.no_grad():
        for doc_id in tqdm(corpus.doc_ids, desc=f"Indexing ({mode})", disable=not progress):
            try:
                reps = pool_document(corpus.documents[doc_id], params, mode, window_tokens=window_tokens,
                                     overlap_chunks=overlap_chunks)
            except ContextEmbError as e:
                error = RetrievalError(f"document {doc_id}: {e}")
                error.module = e.module
                raise error from e
            for rep in reps:
                entries.append((rep.doc_id, rep.chunk_index))
                tensor = rep.vectors if isinstance(rep, ChunkTokenSet) else rep.vector
                rows.append(tensor.detach().to(torch.float32).numpy())

    elapsed = time.perf_counter() - started
    metadata = {
        "encoder_checksum": params.checksum(),
        "lowercase": params.config.lowercase,
        "build_seconds": elapsed,
        "ms_per_doc": 1000.0 * elapsed / max(len(corpus.documents), 1),
    }
    if kind is IndexKind.SINGLE:
        index = ChunkIndex(kind, entries, mode.value, vectors=np.stack(rows), metadata=metadata)
    else:
        lengths = [r.shape[0] for r in rows]
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        index = ChunkIndex(kind, entries, mode.value, token_vectors=np.concatenate(rows, axis=0),
                           token_offsets=offsets, metadata=metadata)
    LOG.info("Built %s index over %d chunks (%.1f ms/doc)", mode, len(entries), metadata["ms_per_doc"])
    return index.validate()


def build_bm25_index(corpus: Corpus, tokenizer: Tokenizer = Tokenizer()) -> ChunkIndex:
    entries, tokenized = [], []
    for doc_id in corpus.doc_ids:
        doc = corpus.documents[doc_id]
        for chunk in doc.chunks:
            entries.append((doc_id, chunk.chunk_index))
            tokenized.append(tokenizer.tokenize(doc.chunk_text(chunk.chunk_index)))
    return ChunkIndex(IndexKind.BM25, entries, "bm25", bm25=BM25Stats.build(tokenized),
                      metadata={"lowercase": tokenizer.lowercase}).validate()


def score_all(index: ChunkIndex, query_text: str, params: Optional[EncoderParams] = None) -> np.ndarray:
    """Score of the query against every index entry, in entry order."""
    if not len(index):
        raise RetrievalError("cannot search an empty index")

    if index.kind is IndexKind.BM25:
        terms = Tokenizer(lowercase=index.metadata.get("lowercase", True)).tokenize(query_text)
        return np.array([bm25_score(terms, chunk, index.bm25) for chunk in index.bm25.chunk_terms], dtype=np.float64)

    if params is None:
        raise RetrievalError(f"{index.kind} index needs encoder parameters to embed the query")
    checksum = index.metadata.get("encoder_checksum")
    if checksum and checksum != params.checksum():
        LOG.warning("Query encoder differs from the encoder that built the index")

    scorer = Scorer.MAXSIM if index.kind is IndexKind.MULTI else Scorer.COSINE
    with torch.no_grad():
        try:
            query = pool_query(query_text, params, scorer).to(torch.float32).numpy()
        except ContextEmbError as e:
            raise RetrievalError(f"cannot embed query: {e}") from e
    if query.shape[-1] != index.dim:
        raise RetrievalError(f"query dim {query.shape[-1]} does not match index dim {index.dim}")

    if index.kind is IndexKind.SINGLE:
        norm = np.linalg.norm(query)
        if norm == 0:
            raise RetrievalError("zero-norm query vector cannot be scored by cosine")
        unit = (query / norm).astype(np.float32)[None, :]
        scores, ids = index.flat_index().search(unit, len(index))
        result = np.empty(len(index), dtype=np.float64)
        result[ids[0]] = scores[0]
        return result

    sims = query @ index.token_vectors.T
    per_chunk = np.maximum.reduceat(sims, index.token_offsets[:-1], axis=1)
    return per_chunk.sum(axis=0).astype(np.float64)


def rank(scores: np.ndarray, entries: Sequence[Entry], k: int) -> SearchResult:
    """Top-k by descending score, ties broken by (doc_id, chunk_index) ascending."""
    order = sorted(range(len(entries)), key=lambda i: (-scores[i], entries[i]))
    return SearchResult([Hit(entries[i][0], entries[i][1], float(scores[i])) for i in order[:k]])


def search(index: ChunkIndex, query_text: str, params: Optional[EncoderParams] = None, k: int = 10) -> SearchResult:
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    return rank(score_all(index, query_text, params), index.entries, k)


def _array_blob(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.ascontiguousarray(array), allow_pickle=False)
    return buffer.getvalue()


def _index_arrays(index: ChunkIndex) -> Dict[str, np.ndarray]:
    arrays = {
        "entry_doc_ids": np.array([d for d, _ in index.entries], dtype=np.str_),
        "entry_chunk_indices": np.array([i for _, i in index.entries], dtype=np.int64),
    }
    if index.kind is IndexKind.SINGLE:
        arrays["vectors"] = index.vectors.astype(np.float32)
    elif index.kind is IndexKind.MULTI:
        arrays["token_vectors"] = index.token_vectors.astype(np.float32)
        arrays["token_offsets"] = index.token_offsets.astype(np.int64)
    else:
        terms = [term for chunk in index.bm25.chunk_terms for term in sorted(chunk.elements())]
        lengths = [sum(chunk.values()) for chunk in index.bm25.chunk_terms]
        arrays["terms"] = np.array(terms, dtype=np.str_)
        arrays["term_offsets"] = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    return arrays


def save_index(index: ChunkIndex, path) -> Path:
    """Binary index file: magic, version, JSON header, then raw .npy blobs; byte-deterministic."""
    blobs = {name: _array_blob(array) for name, array in _index_arrays(index).items()}
    header = {
        "kind": index.kind.value,
        "mode": index.mode,
        "dim": index.dim,
        "entry_count": len(index),
        "encoder_checksum": index.metadata.get("encoder_checksum"),
        "lowercase": index.metadata.get("lowercase", True),
        "arrays": [{"name": name, "nbytes": len(blob)} for name, blob in blobs.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as file:
        file.write(INDEX_MAGIC)
        file.write(struct.pack("<IQ", INDEX_VERSION, len(header_bytes)))
        file.write(header_bytes)
        for blob in blobs.values():
            file.write(blob)
    return path


def load_index(path) -> ChunkIndex:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise RetrievalError(f"cannot read index {path}: {e}") from e
    if not data.startswith(INDEX_MAGIC):
        raise RetrievalError(f"{path} is not an index file")
    offset = len(INDEX_MAGIC)
    version, header_len = struct.unpack_from("<IQ", data, offset)
    if version != INDEX_VERSION:
        raise RetrievalError(f"{path}: unsupported index version {version}")
    offset += struct.calcsize("<IQ")
    header = json.loads(data[offset:offset + header_len].decode("utf-8"))
    offset += header_len

    arrays = {}
    for entry in header["arrays"]:
        blob = data[offset:offset + entry["nbytes"]]
        arrays[entry["name"]] = np.lib.format.read_array(io.BytesIO(blob), allow_pickle=False)
        offset += entry["nbytes"]

    entries = [(str(d), int(i)) for d, i in zip(arrays["entry_doc_ids"], arrays["entry_chunk_indices"])]
    kind = IndexKind.get(header["kind"])
    metadata = {"encoder_checksum": header.get("encoder_checksum"), "lowercase": header.get("lowercase", True)}
    if kind is IndexKind.SINGLE:
        index = ChunkIndex(kind, entries, header["mode"], vectors=arrays["vectors"], metadata=metadata)
    elif kind is IndexKind.MULTI:
        index = ChunkIndex(kind, entries, header["mode"], token_vectors=arrays["token_vectors"],
                           token_offsets=arrays["token_offsets"], metadata=metadata)
    else:
        terms, offsets = arrays["terms"], arrays["term_offsets"]
        tokenized = [[str(t) for t in terms[offsets[i]:offsets[i + 1]]] for i in range(len(entries))]
        index = ChunkIndex(kind, entries, header["mode"], bm25=BM25Stats.build(tokenized), metadata=metadata)
    if len(index) != header["entry_count"]:
        raise RetrievalError(f"{path}: header says {header['entry_count']} entries, found {len(index)}")
    return index.validate()
