#!/usr/bin/env python3
"""
Metrics, query evaluation, report files and the sweep harnesses
"""

import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from core import Query
from encoder import EncoderConfig, init_params
from evalbench import (
    BM25_MODE,
    EvalError,
    EvalReport,
    QueryEval,
    SweepSystem,
    chunk_size_sweep,
    corpus_scaling_sweep,
    evaluate,
    first_gold_rank,
    lambda_sweep,
    nested_samples,
    ndcg_at_k,
    plot_sweep,
    propagation_ablation,
    recall_at_k,
    sabotage_sweep,
    sweep_spread,
    write_report,
)
from retrieval import Hit, SearchResult, build_bm25_index, search
from synthgen import SynthConfig, generate, sabotage_sweep_corpora
from trainer import TrainConfig


def result_of(refs):
    return SearchResult([Hit(doc_id, index, float(-i)) for i, (doc_id, index) in enumerate(refs)])


def reference_ndcg(refs, gold, k):
    gains = [1.0 if ref in gold else 0.0 for ref in refs[:k]]
    dcg = sum(g / math.log2(i + 2) for i, g in enumerate(gains))
    ideal = sorted([1.0] * len(gold) + [0.0] * k, reverse=True)[:k]
    return dcg / sum(g / math.log2(i + 2) for i, g in enumerate(ideal))


def small_synth(**overrides):
    values = dict(n_docs=6, chunks_per_doc=3, seed=11)
    values.update(overrides)
    return generate(SynthConfig(**values))


def test_ndcg_examples():
    gold = {("a", 0)}
    assert ndcg_at_k(result_of([("a", 0), ("b", 0)]), gold) == pytest.approx(1.0)
    assert ndcg_at_k(result_of([("b", 0), ("a", 0)]), gold) == pytest.approx(1 / math.log2(3), abs=1e-12)
    assert ndcg_at_k(result_of([("b", 0), ("a", 0)]), gold) == pytest.approx(0.6309, abs=1e-4)
    assert ndcg_at_k(result_of([("b", i) for i in range(10)] + [("a", 0)]), gold) == 0.0


def test_ndcg_with_two_gold_chunks():
    gold = {("a", 0), ("a", 1)}
    value = ndcg_at_k(result_of([("a", 0), ("b", 0), ("a", 1)]), gold)
    assert value == pytest.approx((1 + 0.5) / (1 + 1 / math.log2(3)), abs=1e-12)


def test_ndcg_matches_brute_force():
    rng = np.random.default_rng(0)
    pool = [(f"d{i}", j) for i in range(4) for j in range(4)]
    for _ in range(1000):
        order = rng.permutation(len(pool))[: int(rng.integers(1, len(pool) + 1))]
        refs = [pool[i] for i in order]
        gold = {pool[i] for i in rng.choice(len(pool), size=int(rng.integers(1, 4)), replace=False)}
        k = int(rng.integers(1, 12))
        value = ndcg_at_k(result_of(refs), gold, k)
        assert 0.0 <= value <= 1.0
        assert value == pytest.approx(reference_ndcg(refs, gold, k), abs=1e-9)


def test_recall_and_first_gold_rank():
    gold = {("a", 0), ("a", 1)}
    result = result_of([("b", 0), ("a", 1), ("c", 0)])
    assert recall_at_k(result, gold, k=3) == 0.5
    assert recall_at_k(result, gold, k=1) == 0.0
    assert first_gold_rank(result, gold) == 2
    assert first_gold_rank(result, {("z", 0)}) is None


def test_empty_gold_rejected():
    with pytest.raises(EvalError):
        ndcg_at_k(result_of([("a", 0)]), set())


def test_report_aggregates():
    report = EvalReport([QueryEval("q0", 1, 1.0, 1.0), QueryEval("q1", None, 0.0, 0.0), QueryEval("q2", 2, 0.5, 1.0)], k=10)
    assert report.mean_ndcg == pytest.approx(0.5)
    assert report.mean_recall == pytest.approx(2 / 3)
    assert report.mrr == pytest.approx(0.5)


def test_perfect_answers_give_mean_one(tiny_corpus):
    queries = [Query("qa", "Seine", frozenset({("d1", 2)})), Query("qb", "purred", frozenset({("d0", 1)}))]
    report = evaluate(build_bm25_index(tiny_corpus), queries, k=10)
    assert report.mean_ndcg == pytest.approx(1.0)


def test_evaluate_matches_recomputation():
    corpus = small_synth()
    index = build_bm25_index(corpus)
    report = evaluate(index, corpus.queries[:20], k=5)
    expected = [reference_ndcg(search(index, q.text, k=5).refs, q.gold, 5) for q in corpus.queries[:20]]
    assert report.mean_ndcg == pytest.approx(sum(expected) / len(expected), abs=1e-12)
    assert report.summary()["n_queries"] == len(expected) == 18


def test_queries_outside_index_are_excluded(tiny_corpus):
    index = build_bm25_index(tiny_corpus.subset(["d0"]))
    report = evaluate(index, tiny_corpus.queries, k=3)
    assert [q.query_id for q in report.per_query] == ["q0"]
    assert report.excluded == ["q1"]
    assert report.summary()["n_excluded"] == 1


def test_write_report(tmp_path, tiny_corpus):
    report = evaluate(build_bm25_index(tiny_corpus), tiny_corpus.queries, k=3)
    per_query, summary = write_report(report, tmp_path / "eval")
    frame = pd.read_csv(per_query)
    assert list(frame.columns) == ["query_id", "first_gold_rank", "ndcg@3", "recall@3"]
    assert list(frame["query_id"]) == ["q0", "q1"]
    row = pd.read_csv(summary).iloc[0]
    assert row["mode"] == "bm25" and row["k"] == 3
    assert row["mean_ndcg"] == pytest.approx(report.mean_ndcg)


def test_sweep_system_validation(small_config):
    with pytest.raises(EvalError):
        SweepSystem("x", "nonsense")
    with pytest.raises(EvalError):
        SweepSystem("x", "late_chunk")
    SweepSystem("x", "late_chunk", init_params(small_config))
    SweepSystem("lexical", BM25_MODE)


def test_chunk_size_sweep(small_config):
    corpus = small_synth()
    systems = [SweepSystem("bm25", BM25_MODE), SweepSystem("late", "late_chunk", init_params(small_config))]
    frame = chunk_size_sweep(corpus, systems, [400, 100], k=5, progress=False)
    assert len(frame) == 4
    assert list(frame["target_chars"]) == [400, 400, 100, 100]
    small = frame[frame["target_chars"] == 100]["n_chunks"].iloc[0]
    large = frame[frame["target_chars"] == 400]["n_chunks"].iloc[0]
    assert small > large
    assert frame["ndcg_at_k"].between(0.0, 1.0).all()


@pytest.mark.parametrize("mode", ["independent", "late_chunk", "late_interaction"])
def test_chunk_size_sweep_neural_modes_at_small_targets(mode):
    corpus = generate(SynthConfig(n_docs=3))
    params = init_params(EncoderConfig(dim=8, heads=2, layers=1, ffn_mult=2, vocab_size=256, seed=0))
    frame = chunk_size_sweep(corpus, [SweepSystem(mode, mode, params)], [200, 100], k=5, progress=False)
    assert list(frame["target_chars"]) == [200, 100]
    assert frame["n_queries"].tolist() == [len(corpus.queries)] * 2


def test_chunk_size_sweep_needs_answer_spans(tiny_corpus):
    with pytest.raises(EvalError):
        chunk_size_sweep(tiny_corpus, [SweepSystem("bm25", BM25_MODE)], [10], progress=False)


def test_nested_samples():
    corpus = small_synth()
    samples = nested_samples(corpus, [2, 4, 6], seed=3)
    assert set(samples[2]) <= set(samples[4]) <= set(samples[6])
    assert samples == nested_samples(corpus, [2, 4, 6], seed=3)
    with pytest.raises(EvalError):
        nested_samples(corpus, [7], seed=3)


def test_corpus_scaling_sweep():
    corpus = small_synth()
    frame, samples = corpus_scaling_sweep(corpus, [SweepSystem("bm25", BM25_MODE)], [3, 6], k=5, progress=False)
    assert list(frame["n_docs"]) == [3, 6]
    assert list(frame["n_queries"]) == [9, 18]
    assert len(samples[3]) == 3


def test_sabotage_sweep_hurts_lexical_search():
    config = SynthConfig(n_docs=8, chunks_per_doc=4, seed=5)
    corpora = dict(zip([0.0, 1.0], sabotage_sweep_corpora(config, [0.0, 1.0])))
    frame = sabotage_sweep(corpora, [SweepSystem("bm25", BM25_MODE)], k=3, progress=False)
    clean, sabotaged = frame.sort_values("sabotage_rate")["ndcg_at_k"].tolist()
    assert sabotaged < clean


def test_sweep_spread():
    frame = pd.DataFrame({"system": ["a", "a", "b", "b"], "ndcg_at_k": [0.5, 0.7, 0.4, 0.4]})
    spread = sweep_spread(frame).set_index("system")
    assert spread.loc["a", "std"] == pytest.approx(0.1)
    assert spread.loc["a", "min"] == 0.5 and spread.loc["a", "max"] == 0.7
    assert spread.loc["b", "std"] == 0.0


def tiny_training():
    encoder_config = EncoderConfig(dim=8, heads=2, layers=1, ffn_mult=2, vocab_size=256, max_seq_len=512, seed=0)
    return encoder_config, TrainConfig(lr=1e-3, epochs=1, docs_per_batch=2, seed=0)


def test_lambda_sweep_rows():
    encoder_config, train_config = tiny_training()
    corpus_train = small_synth(n_docs=4, sabotage_rate=1.0)
    suite = {f"p={p:g}": small_synth(n_docs=4, sabotage_rate=p, id_offset=4) for p in (0.0, 1.0)}
    frame = lambda_sweep(corpus_train, suite, [0.0, 1.0], encoder_config, train_config, k=3, progress=False)
    assert list(frame["lambda_seq"]) == [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]
    assert list(frame["task"]) == ["p=0", "p=1", "average"] * 2
    for _, rows in frame.groupby("lambda_seq"):
        scores = rows.set_index("task")["ndcg_at_k"]
        assert scores["average"] == pytest.approx((scores["p=0"] + scores["p=1"]) / 2)


def test_propagation_ablation_rows():
    encoder_config, train_config = tiny_training()
    corpus_train = small_synth(n_docs=4, sabotage_rate=1.0)
    corpus_eval = small_synth(n_docs=4, sabotage_rate=1.0, id_offset=4)
    frame = propagation_ablation(corpus_train, corpus_eval, encoder_config, train_config, k=3, seed=1,
                                 progress=False)
    assert list(frame["training_data"]) == ["none", "organic", "artificial"]
    assert list(frame["system"]) == ["late_chunk/none", "late_chunk/organic", "late_chunk/artificial"]
    assert frame["n_queries"].tolist() == [len(corpus_eval.queries)] * 3
    assert frame["ndcg_at_k"].between(0.0, 1.0).all()


def test_plot_sweep_writes_html(tmp_path):
    frame = pd.DataFrame({"n_docs": [1, 2], "system": ["a", "a"], "ndcg_at_k": [0.3, 0.4]})
    path = plot_sweep(frame, "n_docs", tmp_path / "plots" / "sweep.html", title="scaling")
    assert path.exists() and "<html" in path.read_text(encoding="utf-8").lower()


if __name__ == "__main__":
    print("Testing evaluation and sweeps")
    print("=" * 40)
    sys.exit(pytest.main([__file__, "-v"]))
