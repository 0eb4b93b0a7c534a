"""
Domain types shared by every module, and JSONL ingestion of corpora.

Character offsets are Python string indices, i.e. Unicode scalar-value offsets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from utils import read_jsonl, write_jsonl

LOG = logging.getLogger(__name__)

GoldRef = Tuple[str, int]


class ContextEmbError(Exception):
    """Root of every error raised by this code base; `module` tags CLI messages."""

    module = "core"


class CorpusError(ContextEmbError, ValueError):
    module = "core"

    def __init__(self, message: str, line: Optional[int] = None, path=None):
        self.line = line
        self.path = path
        if line is not None:
            message = f"{path}:{line}: {message}" if path else f"line {line}: {message}"
        super().__init__(message)


class DanglingReferenceError(CorpusError):
    pass


class DuplicateIdError(CorpusError):
    pass


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    chunk_index: int
    start: int
    end: int

    @property
    def char_span(self) -> Tuple[int, int]:
        return (self.start, self.end)

    def __len__(self):
        return self.end - self.start


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    chunks: Tuple[Chunk, ...]

    @classmethod
    def from_spans(cls, doc_id: str, text: str, spans: Iterable[Tuple[int, int]]) -> "Document":
        chunks = tuple(Chunk(doc_id, i, start, end) for i, (start, end) in enumerate(spans))
        return cls(doc_id, text, chunks)

    @property
    def spans(self) -> List[Tuple[int, int]]:
        return [chunk.char_span for chunk in self.chunks]

    def chunk_text(self, chunk_index: int) -> str:
        chunk = self.chunks[chunk_index]
        return self.text[chunk.start:chunk.end]

    def validate(self) -> None:
        if not self.doc_id:
            raise CorpusError("document with empty doc_id")
        if not self.chunks:
            raise CorpusError(f"document {self.doc_id} has no chunks")
        previous_end = 0
        for i, chunk in enumerate(self.chunks):
            if chunk.doc_id != self.doc_id or chunk.chunk_index != i:
                raise CorpusError(f"document {self.doc_id}: chunk {i} is mislabeled")
            if chunk.end <= chunk.start:
                raise CorpusError(f"document {self.doc_id}: chunk {i} span [{chunk.start},{chunk.end}) is empty")
            if chunk.start < previous_end:
                raise CorpusError(f"document {self.doc_id}: chunk {i} overlaps or precedes chunk {i - 1}")
            if chunk.end > len(self.text):
                raise CorpusError(f"document {self.doc_id}: chunk {i} ends past the text ({chunk.end} > {len(self.text)})")
            previous_end = chunk.end


@dataclass(frozen=True)
class AnswerSpan:
    doc_id: str
    start: int
    end: int


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    gold: FrozenSet[GoldRef]
    answer_span: Optional[AnswerSpan] = None

    @property
    def gold_doc_ids(self) -> FrozenSet[str]:
        return frozenset(doc_id for doc_id, _ in self.gold)


@dataclass(frozen=True)
class Corpus:
    documents: Dict[str, Document]
    queries: Tuple[Query, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))

    @property
    def doc_ids(self) -> List[str]:
        return sorted(self.documents)

    @property
    def n_chunks(self) -> int:
        return sum(len(doc.chunks) for doc in self.documents.values())

    def validate(self) -> "Corpus":
        for doc_id, doc in self.documents.items():
            if doc_id != doc.doc_id:
                raise CorpusError(f"document stored under {doc_id} has doc_id {doc.doc_id}")
            doc.validate()
        seen = set()
        for query in self.queries:
            if query.query_id in seen:
                raise DuplicateIdError(f"duplicate query_id {query.query_id}")
            seen.add(query.query_id)
            validate_query(query, self.documents)
        return self

    def subset(self, doc_ids: Iterable[str]) -> "Corpus":
        keep = set(doc_ids)
        documents = {doc_id: doc for doc_id, doc in self.documents.items() if doc_id in keep}
        queries = tuple(q for q in self.queries if q.gold_doc_ids <= keep)
        return Corpus(documents, queries)

    def answer_text(self, query: Query) -> Optional[str]:
        span = query.answer_span
        if span is None:
            return None
        return self.documents[span.doc_id].text[span.start:span.end]


def validate_query(query: Query, documents: Dict[str, Document]) -> None:
    if not query.gold:
        raise CorpusError(f"query {query.query_id} has an empty gold set")
    for doc_id, chunk_index in sorted(query.gold):
        doc = documents.get(doc_id)
        if doc is None or not 0 <= chunk_index < len(doc.chunks):
            raise DanglingReferenceError(
                f"query {query.query_id} references missing chunk ({doc_id}, {chunk_index})"
            )
    span = query.answer_span
    if span is not None:
        doc = documents.get(span.doc_id)
        if doc is None:
            raise DanglingReferenceError(f"query {query.query_id} answer_span names missing document {span.doc_id}")
        if not 0 <= span.start < span.end <= len(doc.text):
            raise CorpusError(
                f"query {query.query_id} answer_span [{span.start},{span.end}) is outside document {span.doc_id}"
            )


def _document_from_record(record: dict, line: int, path, chunker_config) -> Document:
    try:
        doc_id = record["doc_id"]
        text = record["text"]
    except (KeyError, TypeError) as e:
        raise CorpusError(f"document record missing field {e}", line=line, path=path) from e
    if not isinstance(doc_id, str) or not isinstance(text, str):
        raise CorpusError("doc_id and text must be strings", line=line, path=path)

    raw_chunks = record.get("chunks")
    if raw_chunks is None:
        from chunking import ChunkerConfig, ChunkingError, chunk_document

        if not text:
            raise CorpusError(f"document {doc_id} has empty text", line=line, path=path)
        try:
            doc = chunk_document(doc_id, text, chunker_config or ChunkerConfig())
        except ChunkingError as e:
            raise CorpusError(f"document {doc_id}: {e}", line=line, path=path) from e
    else:
        try:
            spans = [(int(c["start"]), int(c["end"])) for c in raw_chunks]
        except (KeyError, TypeError, ValueError) as e:
            raise CorpusError(f"document {doc_id} has a malformed chunk entry", line=line, path=path) from e
        doc = Document.from_spans(doc_id, text, spans)

    try:
        doc.validate()
    except CorpusError as e:
        raise CorpusError(str(e), line=line, path=path) from e
    for chunk in doc.chunks:
        if not doc.chunk_text(chunk.chunk_index).strip():
            raise CorpusError(f"document {doc_id}: chunk {chunk.chunk_index} is blank", line=line, path=path)
    return doc


def _query_from_record(record: dict, line: int, path) -> Query:
    try:
        query_id, text = record["query_id"], record["text"]
        gold = frozenset((g["doc_id"], int(g["chunk_index"])) for g in record["gold"])
        answer = record.get("answer_span")
        answer_span = None
        if answer is not None:
            answer_span = AnswerSpan(answer["doc_id"], int(answer["start"]), int(answer["end"]))
    except (KeyError, TypeError, ValueError) as e:
        raise CorpusError(f"malformed query record ({e})", line=line, path=path) from e
    if not isinstance(query_id, str) or not isinstance(text, str):
        raise CorpusError("query_id and text must be strings", line=line, path=path)
    if any(not isinstance(doc_id, str) for doc_id, _ in gold):
        raise CorpusError(f"query {query_id}: gold doc_id must be a string", line=line, path=path)
    if answer_span is not None and not isinstance(answer_span.doc_id, str):
        raise CorpusError(f"query {query_id}: answer_span doc_id must be a string", line=line, path=path)
    return Query(query_id, text, gold, answer_span)


def _read_records(path):
    try:
        yield from read_jsonl(path)
    except ValueError as e:
        # read_jsonl already prefixes path:line
        raise CorpusError(str(e)) from e
    except OSError as e:
        raise CorpusError(f"cannot read {path}: {e}") from e


def load_documents(docs_path, chunker_config=None) -> Dict[str, Document]:
    documents: Dict[str, Document] = {}
    for line, record in _read_records(docs_path):
        doc = _document_from_record(record, line, docs_path, chunker_config)
        if doc.doc_id in documents:
            raise DuplicateIdError(f"duplicate doc_id {doc.doc_id}", line=line, path=docs_path)
        documents[doc.doc_id] = doc
    return documents


def load_queries(queries_path, documents: Dict[str, Document]) -> Tuple[Query, ...]:
    queries: List[Query] = []
    seen = set()
    for line, record in _read_records(queries_path):
        query = _query_from_record(record, line, queries_path)
        if query.query_id in seen:
            raise DuplicateIdError(f"duplicate query_id {query.query_id}", line=line, path=queries_path)
        seen.add(query.query_id)
        try:
            validate_query(query, documents)
        except CorpusError as e:
            raise type(e)(str(e), line=line, path=queries_path) from e
        queries.append(query)
    return tuple(queries)


def load_corpus(docs_path, queries_path=None, chunker_config=None) -> Corpus:
    documents = load_documents(docs_path, chunker_config)
    queries = load_queries(queries_path, documents) if queries_path is not None else ()
    LOG.info("Loaded %d documents and %d queries from %s", len(documents), len(queries), docs_path)
    return Corpus(documents, queries)


def document_record(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "text": doc.text,
        "chunks": [{"start": c.start, "end": c.end} for c in doc.chunks],
    }


def query_record(query: Query) -> dict:
    record = {
        "query_id": query.query_id,
        "text": query.text,
        "gold": [{"doc_id": d, "chunk_index": i} for d, i in sorted(query.gold)],
    }
    if query.answer_span is not None:
        span = query.answer_span
        record["answer_span"] = {"doc_id": span.doc_id, "start": span.start, "end": span.end}
    return record


def save_documents(documents: Dict[str, Document], docs_path) -> None:
    try:
        write_jsonl(docs_path, (document_record(documents[d]) for d in sorted(documents)))
    except OSError as e:
        raise CorpusError(f"cannot write {docs_path}: {e}") from e


def save_corpus(corpus: Corpus, docs_path, queries_path) -> None:
    corpus.validate()
    save_documents(corpus.documents, docs_path)
    try:
        write_jsonl(queries_path, (query_record(q) for q in corpus.queries))
    except OSError as e:
        raise CorpusError(f"cannot write {queries_path}: {e}") from e
    LOG.debug("Saved corpus to %s and %s", Path(docs_path), Path(queries_path))
