#!/usr/bin/env python3
"""
Recursive splitting and the sub-chunk re-mapping used by the chunk-size sweep
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from chunking import (
    DEFAULT_SEPARATORS,
    ChunkerConfig,
    ChunkingError,
    chunk_document,
    merge_blank_spans,
    recursive_split,
    remap_gold,
    subsplit_chunks,
    subsplit_corpus,
)
from core import AnswerSpan, Query
from synthgen import SynthConfig, generate
from tests.helpers import make_document


def discounted_length(piece):
    trailing = max((len(s) for s in DEFAULT_SEPARATORS if piece.endswith(s)), default=0)
    return len(piece) - trailing


def test_split_at_first_separator():
    assert recursive_split("aaa\n\nbbb", ChunkerConfig(max_chars=4)) == [(0, 5), (5, 8)]


def test_short_text_is_one_span():
    assert recursive_split("hello", ChunkerConfig(max_chars=1000)) == [(0, 5)]


def test_hard_split_when_separators_are_exhausted():
    assert recursive_split("abcdef", ChunkerConfig(max_chars=2)) == [(0, 2), (2, 4), (4, 6)]


def test_pieces_are_merged_while_they_fit():
    text = "aa bb cc dd"
    spans = recursive_split(text, ChunkerConfig(max_chars=5))
    assert spans == [(0, 6), (6, 11)]


def test_whitespace_runs_count_against_max_chars():
    text = "a" + " " * 50 + "b"
    spans = recursive_split(text, ChunkerConfig(max_chars=10))
    assert spans == [(0, 10), (10, 20), (20, 30), (30, 40), (40, 51), (51, 52)]
    assert chunk_document("d0", text, ChunkerConfig(max_chars=10)).spans == [(0, 51), (51, 52)]


def test_trailing_blank_line_is_not_its_own_span():
    text = "one two three. four five six.\n\n"
    assert recursive_split(text, ChunkerConfig(max_chars=20)) == [(0, 15), (15, 31)]


def test_leading_blank_line_joins_the_first_span():
    text = "\n\n" + "word " * 300
    spans = recursive_split(text, ChunkerConfig())
    assert spans[0][0] == 0 and text[spans[0][0]:spans[0][1]].strip()
    assert all(text[s:e].strip() for s, e in spans)


def test_merge_blank_spans():
    text = "  ab  cd"
    assert merge_blank_spans(text, [(0, 2), (2, 4), (4, 6), (6, 8)]) == [(0, 6), (6, 8)]
    with pytest.raises(ChunkingError):
        merge_blank_spans(" \n ", [(0, 1), (1, 3)])


@pytest.mark.parametrize("target", [200, 100, 40])
def test_subsplit_synthetic_corpus_has_no_blank_chunks(target):
    corpus = generate(SynthConfig(n_docs=3))
    resplit = subsplit_corpus(corpus, target)
    resplit.validate()
    for doc in resplit.documents.values():
        assert all(doc.chunk_text(i).strip() for i in range(len(doc.chunks)))
    for query in resplit.queries:
        (doc_id, index), = query.gold
        chunk, span = resplit.documents[doc_id].chunks[index], query.answer_span
        assert max(chunk.start, span.start) < min(chunk.end, span.end)


def test_empty_text_rejected():
    with pytest.raises(ChunkingError):
        recursive_split("")


def test_config_validation():
    with pytest.raises(ChunkingError):
        ChunkerConfig(max_chars=0)
    with pytest.raises(ChunkingError):
        ChunkerConfig(separators=("\n\n", ". "))


def test_partition_property_on_random_text():
    rng = np.random.default_rng(11)
    alphabet = list("abc xyz.\n")
    for _ in range(200):
        text = "".join(rng.choice(alphabet, size=int(rng.integers(1, 120))))
        max_chars = int(rng.integers(1, 30))
        spans = recursive_split(text, ChunkerConfig(max_chars=max_chars))
        assert "".join(text[s:e] for s, e in spans) == text
        assert all(e > s for s, e in spans)
        assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
        assert all(discounted_length(text[s:e]) <= max_chars for s, e in spans)
        assert spans == recursive_split(text, ChunkerConfig(max_chars=max_chars))


def test_chunk_document_builds_dense_indices():
    doc = chunk_document("d0", "one two\n\nthree four", ChunkerConfig(max_chars=8))
    assert [c.chunk_index for c in doc.chunks] == list(range(len(doc.chunks)))
    doc.validate()


def test_subsplit_single_chunk():
    doc = make_document("d0", ["abcdef"])
    new_doc, mapping = subsplit_chunks(doc, 2)
    assert new_doc.spans == [(0, 2), (2, 4), (4, 6)]
    assert mapping == {0: [0, 1, 2]}


def test_subsplit_identity_when_target_is_large():
    doc = make_document("d0", ["first chunk. ", "second chunk."])
    new_doc, mapping = subsplit_chunks(doc, 100)
    assert new_doc.spans == doc.spans
    assert mapping == {0: [0], 1: [1]}


def test_subsplit_two_long_chunks():
    sentence = "x" * 99 + " "  # 100 chars
    doc = make_document("d0", [sentence * 10, sentence * 10])
    new_doc, mapping = subsplit_chunks(doc, 400)
    assert mapping == {0: [0, 1, 2], 1: [3, 4, 5]}
    assert [c.chunk_index for c in new_doc.chunks] == list(range(6))


def test_remap_answer_span_tie_goes_to_lower_index():
    doc = make_document("d0", ["ab", "cd", "ef"])
    query = Query("q0", "x", frozenset({("d0", 0)}), AnswerSpan("d0", 3, 5))
    remapped = remap_gold(query, {0: [0, 1, 2]}, doc)
    assert remapped.gold == frozenset({("d0", 1)})


def test_remap_answer_span_inside_one_sub_chunk():
    doc = make_document("d0", ["ab", "cd", "ef"])
    query = Query("q0", "x", frozenset({("d0", 0)}), AnswerSpan("d0", 4, 6))
    assert remap_gold(query, {0: [0, 1, 2]}, doc).gold == frozenset({("d0", 2)})


def test_remap_without_span_uses_all_sub_chunks():
    doc = make_document("d0", ["a", "b", "c", "d", "e", "f", "g"])
    query = Query("q0", "x", frozenset({("d0", 3)}))
    remapped = remap_gold(query, {3: [4, 5, 6]}, doc)
    assert remapped.gold == frozenset({("d0", 4), ("d0", 5), ("d0", 6)})


def test_subsplit_corpus_keeps_answer_inside_gold(tiny_corpus):
    for target in (40, 10, 5, 2):
        resplit = subsplit_corpus(tiny_corpus, target)
        resplit.validate()
        for query in resplit.queries:
            if query.answer_span is None:
                continue
            (doc_id, index), = query.gold
            chunk = resplit.documents[doc_id].chunks[index]
            span = query.answer_span
            assert max(chunk.start, span.start) < min(chunk.end, span.end)


def test_subsplit_corpus_preserves_text(tiny_corpus):
    resplit = subsplit_corpus(tiny_corpus, 7)
    for doc_id, doc in resplit.documents.items():
        assert doc.text == tiny_corpus.documents[doc_id].text
        assert "".join(doc.chunk_text(i) for i in range(len(doc.chunks))) == doc.text


if __name__ == "__main__":
    print("Testing chunking")
    print("=" * 40)
    sys.exit(pytest.main([__file__, "-v"]))
