"""
Chunk representations from token hidden states.

- independent: every chunk encoded on its own, mean-pooled
- late chunking: the whole document encoded once, hidden states mean-pooled per chunk
- late interaction: per-chunk token states kept and L2-normalized (ColBERT convention)
- sliding window: late chunking over overlapping chunk-aligned windows for long documents

[DOC] and [SEP] positions never belong to a chunk span, so they are never pooled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Union

import torch

from core import ContextEmbError, Document
from encoder import (
    EncoderConfig,
    EncoderParams,
    TokenSequence,
    chunk_token_ids,
    encode_chunk_sequence,
    encode_document_sequence,
    encode_query_sequence,
    forward,
    sequence_length,
)
from POOLING_MODES import PoolingMode
from SCORERS import Scorer

LOG = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


class PoolingError(ContextEmbError, ValueError):
    module = "pooling"


class EmptyChunkError(PoolingError):
    def __init__(self, owner: str, chunk_index: int):
        self.chunk_index = chunk_index
        super().__init__(f"chunk {chunk_index} of {owner or 'sequence'} has no tokens")


class ZeroNormError(PoolingError):
    pass


@dataclass
class ChunkEmbedding:
    doc_id: str
    chunk_index: int
    vector: torch.Tensor


@dataclass
class ChunkTokenSet:
    doc_id: str
    chunk_index: int
    vectors: torch.Tensor


ChunkRep = Union[ChunkEmbedding, ChunkTokenSet]


def _chunk_rows(hidden: torch.Tensor, seq: TokenSequence, i: int) -> torch.Tensor:
    start, end = seq.chunk_token_spans[i]
    if end <= start:
        raise EmptyChunkError(seq.owner, seq.first_chunk + i)
    return hidden[start:end]


def late_chunk_pool(hidden: torch.Tensor, seq: TokenSequence) -> List[ChunkEmbedding]:
    return [
        ChunkEmbedding(seq.owner, seq.first_chunk + i, _chunk_rows(hidden, seq, i).mean(dim=0))
        for i in range(len(seq.chunk_token_spans))
    ]


def normalize_rows(rows: torch.Tensor, owner: str = "") -> torch.Tensor:
    norms = rows.norm(dim=-1, keepdim=True)
    if bool((norms < NORM_FLOOR).any()):
        raise ZeroNormError(f"zero-norm token state in {owner or 'sequence'}; parameters look degenerate")
    return rows / norms


def late_interaction_group(hidden: torch.Tensor, seq: TokenSequence) -> List[ChunkTokenSet]:
    return [
        ChunkTokenSet(seq.owner, seq.first_chunk + i, normalize_rows(_chunk_rows(hidden, seq, i), seq.owner))
        for i in range(len(seq.chunk_token_spans))
    ]


def encode_chunks_independent(doc: Document, params: EncoderParams, config: Optional[EncoderConfig] = None) -> List[ChunkEmbedding]:
    config = config or params.config
    token_ids = chunk_token_ids(doc, config.tokenizer)
    pooled = []
    for i in range(len(doc.chunks)):
        seq = encode_chunk_sequence(doc, range(i, i + 1), config, token_ids)
        pooled.extend(late_chunk_pool(forward(seq, params, config), seq))
    return pooled


def late_chunk_document(doc: Document, params: EncoderParams, config: Optional[EncoderConfig] = None) -> List[ChunkEmbedding]:
    config = config or params.config
    seq = encode_document_sequence(doc, config)
    return late_chunk_pool(forward(seq, params, config), seq)


def late_interaction_document(doc: Document, params: EncoderParams, config: Optional[EncoderConfig] = None) -> List[ChunkTokenSet]:
    config = config or params.config
    seq = encode_document_sequence(doc, config)
    return late_interaction_group(forward(seq, params, config), seq)


def plan_windows(token_counts: List[int], window_tokens: int, overlap_chunks: int = 10) -> List[range]:
    """Chunk-aligned windows: each is the longest run of chunks that fits `window_tokens`, and starts
    `overlap_chunks` chunks before the previous window ended (fewer when that would not fit or not
    advance)."""
    n = len(token_counts)
    for i, count in enumerate(token_counts):
        if sequence_length([count]) > window_tokens:
            raise PoolingError(f"chunk {i} needs {sequence_length([count])} tokens, more than the {window_tokens}-token window")

    def extend(start: int) -> int:
        end = start + 1
        while end < n and sequence_length(token_counts[start:end + 1]) <= window_tokens:
            end += 1
        return end

    windows = []
    start = 0
    while True:
        end = extend(start)
        windows.append(range(start, end))
        if end >= n:
            return windows
        start = max(end - overlap_chunks, start + 1)
        while sequence_length(token_counts[start:end + 1]) > window_tokens:
            start += 1


def sliding_window_late_chunk(doc: Document, params: EncoderParams, config: Optional[EncoderConfig] = None,
                              window_tokens: Optional[int] = None, overlap_chunks: int = 10) -> List[ChunkEmbedding]:
    """Late chunking in several forward passes; each chunk is taken from the first window in which it
    is not one of the chunks carried over from the previous window."""
    config = config or params.config
    window_tokens = window_tokens or config.max_seq_len
    if window_tokens > config.max_seq_len:
        raise PoolingError(f"window_tokens {window_tokens} exceeds max_seq_len {config.max_seq_len}")
    if overlap_chunks < 0:
        raise PoolingError(f"overlap_chunks must be >= 0, got {overlap_chunks}")

    token_ids = chunk_token_ids(doc, config.tokenizer)
    windows = plan_windows([len(t) for t in token_ids], window_tokens, overlap_chunks)
    pooled: List[ChunkEmbedding] = []
    covered = 0
    for window in windows:
        seq = encode_chunk_sequence(doc, window, config, token_ids)
        for embedding in late_chunk_pool(forward(seq, params, config), seq):
            if embedding.chunk_index >= covered:
                pooled.append(embedding)
        covered = window.stop
    LOG.debug("Document %s pooled in %d windows", doc.doc_id, len(windows))
    return pooled


def pool_document(doc: Document, params: EncoderParams, mode, config: Optional[EncoderConfig] = None,
                  window_tokens: Optional[int] = None, overlap_chunks: int = 10) -> List[ChunkRep]:
    mode = PoolingMode.get(mode)
    if mode is PoolingMode.INDEPENDENT:
        return encode_chunks_independent(doc, params, config)
    if mode is PoolingMode.LATE_CHUNK:
        return late_chunk_document(doc, params, config)
    if mode is PoolingMode.LATE_INTERACTION:
        return late_interaction_document(doc, params, config)
    return sliding_window_late_chunk(doc, params, config, window_tokens, overlap_chunks)


def pool_query(text: str, params: EncoderParams, scorer, config: Optional[EncoderConfig] = None, owner: str = "") -> torch.Tensor:
    """Query representation: a mean-pooled vector for cosine scoring, unit token vectors for MaxSim."""
    config = config or params.config
    seq = encode_query_sequence(text, config, owner)
    hidden = forward(seq, params, config)
    rows = _chunk_rows(hidden, seq, 0)
    if Scorer.get(scorer) is Scorer.MAXSIM:
        return normalize_rows(rows, owner)
    return rows.mean(dim=0)
