#!/usr/bin/env python3
"""
Sabotaged corpus generation and artificial long documents
"""

import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent.parent))

from core import save_corpus
from synthgen import (
    SynthConfig,
    SynthError,
    artificial_long_documents,
    entity_name,
    generate,
    sabotage_sweep_corpora,
)


def test_generation_is_deterministic(tmp_path):
    config = SynthConfig(n_docs=5, chunks_per_doc=4)
    save_corpus(generate(config), tmp_path / "a_docs.jsonl", tmp_path / "a_queries.jsonl")
    save_corpus(generate(config), tmp_path / "b_docs.jsonl", tmp_path / "b_queries.jsonl")
    assert (tmp_path / "a_docs.jsonl").read_bytes() == (tmp_path / "b_docs.jsonl").read_bytes()
    assert (tmp_path / "a_queries.jsonl").read_bytes() == (tmp_path / "b_queries.jsonl").read_bytes()


def test_seed_changes_the_corpus():
    a = generate(SynthConfig(n_docs=3, chunks_per_doc=3, seed=1))
    b = generate(SynthConfig(n_docs=3, chunks_per_doc=3, seed=2))
    assert a.documents["doc-0000"].text != b.documents["doc-0000"].text


def test_shape_and_ids():
    corpus = generate(SynthConfig(n_docs=4, chunks_per_doc=3, id_offset=10))
    assert corpus.doc_ids == ["doc-0010", "doc-0011", "doc-0012", "doc-0013"]
    assert all(len(doc.chunks) == 3 for doc in corpus.documents.values())
    assert len(corpus.queries) == 12
    assert corpus.queries[0].query_id == "q-0010-00-0"


def test_full_sabotage_names_entity_only_in_first_chunk():
    corpus = generate(SynthConfig(n_docs=6, chunks_per_doc=5, sabotage_rate=1.0))
    for number, (doc_id, doc) in enumerate(sorted(corpus.documents.items())):
        entity = entity_name(number)
        assert entity in doc.chunk_text(0)
        for i in range(1, 5):
            assert entity not in doc.chunk_text(i)


def test_no_sabotage_names_entity_everywhere():
    corpus = generate(SynthConfig(n_docs=4, chunks_per_doc=4, sabotage_rate=0.0))
    for number, doc_id in enumerate(corpus.doc_ids):
        doc = corpus.documents[doc_id]
        assert all(entity_name(number) in doc.chunk_text(i) for i in range(4))


def test_queries_name_the_entity_and_point_at_the_answer():
    corpus = generate(SynthConfig(n_docs=5, chunks_per_doc=6, facts_per_chunk=2, queries_per_chunk=2))
    for query in corpus.queries:
        (doc_id, index), = query.gold
        number = int(doc_id.split("-")[1])
        assert entity_name(number) in query.text
        answer = corpus.answer_text(query)
        assert answer and answer in corpus.documents[doc_id].chunk_text(index)
        chunk = corpus.documents[doc_id].chunks[index]
        assert chunk.start <= query.answer_span.start and query.answer_span.end <= chunk.end


def test_sabotage_rates_share_facts():
    clean, partial, full = sabotage_sweep_corpora(SynthConfig(n_docs=4, chunks_per_doc=4), [0.0, 0.5, 1.0])
    for a, b in ((clean, partial), (clean, full)):
        assert [q.query_id for q in a.queries] == [q.query_id for q in b.queries]
        assert [a.answer_text(q) for q in a.queries] == [b.answer_text(q) for q in b.queries]
        assert [q.text for q in a.queries] == [q.text for q in b.queries]


def test_config_validation():
    with pytest.raises(SynthError):
        SynthConfig(n_docs=1)
    with pytest.raises(SynthError):
        SynthConfig(sabotage_rate=1.5)
    with pytest.raises(SynthError):
        SynthConfig(chunks_per_doc=9, facts_per_chunk=2)
    with pytest.raises(SynthError):
        SynthConfig(queries_per_chunk=2, facts_per_chunk=1)
    with pytest.raises(SynthError):
        SynthConfig(n_docs=10, id_offset=9995)


def test_artificial_documents_mix_unrelated_chunks():
    corpus = generate(SynthConfig(n_docs=6, chunks_per_doc=4, sabotage_rate=0.0))
    artificial = artificial_long_documents(corpus, seed=1)
    assert len(artificial.documents) == 6
    assert artificial.n_chunks == corpus.n_chunks
    for doc in artificial.documents.values():
        entities = [text.split(" ")[0] for text in (doc.chunk_text(i) for i in range(len(doc.chunks)))]
        assert len(set(entities)) == len(entities)


def test_artificial_documents_keep_gold_and_answers():
    corpus = generate(SynthConfig(n_docs=5, chunks_per_doc=3))
    artificial = artificial_long_documents(corpus, seed=2)
    original = {q.query_id: q for q in corpus.queries}
    for query in artificial.queries:
        before = original[query.query_id]
        (doc_id, index), = query.gold
        (old_doc, old_index), = before.gold
        assert artificial.documents[doc_id].chunk_text(index).rstrip() == corpus.documents[old_doc].chunk_text(old_index).rstrip()
        assert artificial.answer_text(query) == corpus.answer_text(before)


def test_artificial_documents_need_enough_sources():
    corpus = generate(SynthConfig(n_docs=2, chunks_per_doc=3))
    with pytest.raises(SynthError):
        artificial_long_documents(corpus)


if __name__ == "__main__":
    print("Testing the synthetic corpus generator")
    print("=" * 40)
    sys.exit(pytest.main([__file__, "-v"]))
