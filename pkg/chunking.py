"""
Structure-aware document splitting, plus the controlled re-chunking used by the chunk-size sweep.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from core import ContextEmbError, Corpus, Document, Query

LOG = logging.getLogger(__name__)

Span = Tuple[int, int]
DEFAULT_SEPARATORS = ("\n\n", "\n", ". ", " ")


class ChunkingError(ContextEmbError, ValueError):
    module = "chunking"


@dataclass(frozen=True)
class ChunkerConfig:
    max_chars: int = 1000
    separators: Tuple[str, ...] = field(default=DEFAULT_SEPARATORS)

    def __post_init__(self):
        object.__setattr__(self, "separators", tuple(self.separators))
        if self.max_chars < 1:
            raise ChunkingError(f"max_chars must be >= 1, got {self.max_chars}")
        if not self.separators or any(not s for s in self.separators):
            raise ChunkingError("separators must be a non-empty list of non-empty strings")
        if len(self.separators[-1]) != 1:
            raise ChunkingError(f"the last separator must be a single character, got {self.separators[-1]!r}")


def _content_length(text: str, start: int, end: int, separators: Tuple[str, ...]) -> int:
    # the separator a piece ends on does not count against max_chars
    trailing = max((len(s) for s in separators if text.endswith(s, start, end)), default=0)
    return end - start - trailing


def _is_blank(text: str, start: int, end: int) -> bool:
    return not text[start:end].strip()


def _hard_split(text: str, start: int, end: int, config: ChunkerConfig) -> List[Span]:
    spans = [(i, min(i + config.max_chars, end)) for i in range(start, end, config.max_chars)]
    if len(spans) > 1 and _content_length(text, *spans[-1], config.separators) == 0:
        # a bare trailing separator rides on the previous piece
        spans[-2:] = [(spans[-2][0], end)]
    return spans


def _cuts(text: str, start: int, end: int, separator: str) -> List[int]:
    """Cut positions after each `separator`, skipping cuts that would isolate a blank piece."""
    segment = text[start:end]
    lead = start + len(segment) - len(segment.lstrip())
    core_end = start + len(segment.rstrip())
    cuts = []
    position = text.find(separator, start, core_end)
    while position != -1:
        cut = position + len(separator)
        if lead < cut < core_end:
            cuts.append(cut)
        position = text.find(separator, cut, core_end)
    # a blank run between two cuts stays with the piece before it
    return [cut for cut, following in zip(cuts, cuts[1:] + [end]) if not _is_blank(text, cut, following)]


def _split(text: str, start: int, end: int, level: int, config: ChunkerConfig) -> List[Span]:
    if _content_length(text, start, end, config.separators) <= config.max_chars:
        return [(start, end)]
    if level >= len(config.separators):
        return _hard_split(text, start, end, config)

    cuts = _cuts(text, start, end, config.separators[level])
    if not cuts:
        return _split(text, start, end, level + 1, config)

    bounds = [start, *cuts, end]
    spans: List[Span] = []

    def flush(piece_start: int, piece_end: int):
        spans.extend(_split(text, piece_start, piece_end, level + 1, config))

    acc_start, acc_end = bounds[0], bounds[1]
    for piece_start, piece_end in zip(bounds[1:-1], bounds[2:]):
        if _content_length(text, acc_start, piece_end, config.separators) <= config.max_chars:
            acc_end = piece_end
        else:
            flush(acc_start, acc_end)
            acc_start, acc_end = piece_start, piece_end
    flush(acc_start, acc_end)
    return spans


def merge_blank_spans(text: str, spans: List[Span]) -> List[Span]:
    """Fold whitespace-only spans into the span before them (the first one into the span after it).

    Blank spans hold no tokens and cannot be pooled.
    """
    merged: List[Span] = []
    pending_start = None
    for start, end in spans:
        if _is_blank(text, start, end):
            if merged:
                merged[-1] = (merged[-1][0], end)
            elif pending_start is None:
                pending_start = start
            continue
        if pending_start is not None:
            start, pending_start = pending_start, None
        merged.append((start, end))
    if not merged:
        raise ChunkingError("text has no content outside whitespace")
    return merged


def recursive_split(text: str, config: ChunkerConfig = ChunkerConfig()) -> List[Span]:
    """Partition `text` into ordered, disjoint, non-empty [start, end) spans.

    Every span is at most `max_chars` long once the separator it ends on is discounted. Pieces are
    hard-split when no separator is left to try.
    """
    if not text:
        raise ChunkingError("cannot split empty text")
    return _split(text, 0, len(text), 0, config)


def chunk_document(doc_id: str, text: str, config: ChunkerConfig = ChunkerConfig()) -> Document:
    return Document.from_spans(doc_id, text, merge_blank_spans(text, recursive_split(text, config)))


def subsplit_chunks(doc: Document, target_chars: int, separators=DEFAULT_SEPARATORS) -> Tuple[Document, Dict[int, List[int]]]:
    """Replace every chunk by its own recursive split at `target_chars`.

    Returns the new document and the mapping old chunk_index -> new chunk indices.
    """
    config = ChunkerConfig(max_chars=target_chars, separators=separators)
    spans: List[Span] = []
    mapping: Dict[int, List[int]] = {}
    for chunk in doc.chunks:
        chunk_text = doc.text[chunk.start:chunk.end]
        try:
            pieces = merge_blank_spans(chunk_text, recursive_split(chunk_text, config))
        except ChunkingError as e:
            raise ChunkingError(f"document {doc.doc_id}: chunk {chunk.chunk_index}: {e}") from e
        mapping[chunk.chunk_index] = list(range(len(spans), len(spans) + len(pieces)))
        spans.extend((chunk.start + s, chunk.start + e) for s, e in pieces)
    return Document.from_spans(doc.doc_id, doc.text, spans), mapping


def remap_gold(query: Query, mapping: Dict[int, List[int]], new_doc: Document) -> Query:
    """Move the query's gold references inside `new_doc` onto its sub-chunks.

    With an answer span in this document the gold becomes the single sub-chunk overlapping it most
    (lowest index on ties); otherwise each gold chunk maps to all of its sub-chunks.
    """
    doc_id = new_doc.doc_id
    kept = {ref for ref in query.gold if ref[0] != doc_id}
    span = query.answer_span

    if span is not None and span.doc_id == doc_id:
        overlaps = [
            (min(span.end, c.end) - max(span.start, c.start), c.chunk_index) for c in new_doc.chunks
        ]
        best_overlap, best_index = min(overlaps, key=lambda item: (-item[0], item[1]))
        if best_overlap <= 0:
            raise ChunkingError(
                f"query {query.query_id}: answer span [{span.start},{span.end}) overlaps no sub-chunk of {doc_id}"
            )
        new_gold = kept | {(doc_id, best_index)}
    else:
        new_gold = set(kept)
        for ref_doc, chunk_index in query.gold:
            if ref_doc != doc_id:
                continue
            if chunk_index not in mapping:
                raise ChunkingError(f"query {query.query_id}: gold chunk {chunk_index} of {doc_id} is not in the mapping")
            new_gold.update((doc_id, i) for i in mapping[chunk_index])

    return Query(query.query_id, query.text, frozenset(new_gold), query.answer_span)


def subsplit_corpus(corpus: Corpus, target_chars: int, separators=DEFAULT_SEPARATORS) -> Corpus:
    documents = {}
    mappings = {}
    for doc_id in corpus.doc_ids:
        documents[doc_id], mappings[doc_id] = subsplit_chunks(corpus.documents[doc_id], target_chars, separators)

    queries = []
    for query in corpus.queries:
        touched = set(query.gold_doc_ids)
        if query.answer_span is not None:
            touched.add(query.answer_span.doc_id)
        for doc_id in sorted(touched):
            query = remap_gold(query, mappings[doc_id], documents[doc_id])
        queries.append(query)

    LOG.debug("Sub-split %d documents at %d chars: %d -> %d chunks",
              len(documents), target_chars, corpus.n_chunks, sum(len(d.chunks) for d in documents.values()))
    return Corpus(documents, tuple(queries))
