"""
Retrieval metrics and the experiment harnesses: chunk-size robustness, corpus-size scaling,
sabotage-rate sweep, lambda_seq sweep and the information-propagation ablation.

Relevance is binary; a query may have several gold chunks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd
import plotly.express as px
from tqdm import tqdm

from chunking import subsplit_corpus
from core import ContextEmbError, Corpus, Query
from encoder import EncoderConfig, EncoderParams, Tokenizer, init_params
from POOLING_MODES import PoolingMode
from retrieval import ChunkIndex, SearchResult, build_bm25_index, build_index, search
from synthgen import artificial_long_documents
from trainer import TrainConfig, train, with_lambda
from utils import philox, write_csv

LOG = logging.getLogger(__name__)

BM25_MODE = "bm25"
SYSTEM_MODES = PoolingMode.get_all_values() + [BM25_MODE]


class EvalError(ContextEmbError, ValueError):
    module = "evalbench"


def _discount(rank: int) -> float:
    return 1.0 / math.log2(rank + 1)


def ndcg_at_k(result: SearchResult, gold, k: int = 10) -> float:
    gold = set(gold)
    if not gold:
        raise EvalError("nDCG needs a non-empty gold set")
    dcg = sum(_discount(rank) for rank, ref in enumerate(result.refs[:k], start=1) if ref in gold)
    ideal = sum(_discount(rank) for rank in range(1, min(len(gold), k) + 1))
    return dcg / ideal


def recall_at_k(result: SearchResult, gold, k: int = 10) -> float:
    gold = set(gold)
    if not gold:
        raise EvalError("recall needs a non-empty gold set")
    return len(gold & set(result.refs[:k])) / len(gold)


def first_gold_rank(result: SearchResult, gold) -> Optional[int]:
    for rank, ref in enumerate(result.refs, start=1):
        if ref in gold:
            return rank
    return None


@dataclass
class QueryEval:
    query_id: str
    first_gold_rank: Optional[int]
    ndcg: float
    recall: float


@dataclass
class EvalReport:
    per_query: List[QueryEval]
    k: int
    metadata: dict = field(default_factory=dict)
    excluded: List[str] = field(default_factory=list)

    def _mean(self, values: List[float]) -> float:
        return sum(values) / len(values) if values else float("nan")

    @property
    def mean_ndcg(self) -> float:
        return self._mean([q.ndcg for q in self.per_query])

    @property
    def mean_recall(self) -> float:
        return self._mean([q.recall for q in self.per_query])

    @property
    def mrr(self) -> float:
        return self._mean([1.0 / q.first_gold_rank if q.first_gold_rank else 0.0 for q in self.per_query])

    def per_query_frame(self) -> pd.DataFrame:
        rows = [
            {"query_id": q.query_id, "first_gold_rank": q.first_gold_rank if q.first_gold_rank else "",
             f"ndcg@{self.k}": q.ndcg, f"recall@{self.k}": q.recall}
            for q in self.per_query
        ]
        return pd.DataFrame(rows, columns=["query_id", "first_gold_rank", f"ndcg@{self.k}", f"recall@{self.k}"])

    def summary(self) -> dict:
        return {
            "mode": self.metadata.get("mode"),
            "kind": self.metadata.get("kind"),
            "k": self.k,
            "n_queries": len(self.per_query),
            "n_excluded": len(self.excluded),
            "mean_ndcg": self.mean_ndcg,
            "mean_recall": self.mean_recall,
            "mrr": self.mrr,
        }


def evaluate(index: ChunkIndex, queries: Iterable[Query], params: Optional[EncoderParams] = None, k: int = 10,
             progress: bool = False) -> EvalReport:
    available = set(index.entries)
    per_query, excluded = [], []
    for query in tqdm(list(queries), desc="Evaluating", disable=not progress):
        if not query.gold <= available:
            excluded.append(query.query_id)
            continue
        result = search(index, query.text, params, k)
        per_query.append(QueryEval(
            query.query_id,
            first_gold_rank(result, query.gold),
            ndcg_at_k(result, query.gold, k),
            recall_at_k(result, query.gold, k),
        ))
    if excluded:
        LOG.warning("Excluded %d queries whose gold chunks are not in the index", len(excluded))
    metadata = {"mode": index.mode, "kind": index.kind.value, "k": k,
                "encoder_checksum": index.metadata.get("encoder_checksum"),
                "ms_per_doc": index.metadata.get("ms_per_doc")}
    return EvalReport(per_query, k, metadata, excluded)


def write_report(report: EvalReport, out_dir) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    per_query = write_csv(report.per_query_frame(), out_dir / "per_query.csv")
    summary = write_csv(pd.DataFrame([report.summary()]), out_dir / "summary.csv")
    return per_query, summary


@dataclass
class SweepSystem:
    """A retrieval system compared across sweep points: a pooling mode (or bm25) and its encoder."""

    label: str
    mode: str
    params: Optional[EncoderParams] = None

    def __post_init__(self):
        self.mode = str(self.mode)
        if self.mode not in SYSTEM_MODES:
            raise EvalError(f"system {self.label}: mode {self.mode} is not one of {SYSTEM_MODES}")
        if self.mode != BM25_MODE and self.params is None:
            raise EvalError(f"system {self.label}: mode {self.mode} needs encoder parameters")

    def build(self, corpus: Corpus) -> ChunkIndex:
        if self.mode == BM25_MODE:
            tokenizer = self.params.config.tokenizer if self.params is not None else Tokenizer()
            return build_bm25_index(corpus, tokenizer)
        return build_index(corpus, self.params, self.mode, progress=False)

    def evaluate(self, corpus: Corpus, k: int) -> EvalReport:
        return evaluate(self.build(corpus), corpus.queries, self.params, k)


def _point_row(system: SweepSystem, report: EvalReport, **point) -> dict:
    return {**point, "system": system.label, "mode": system.mode, "n_queries": len(report.per_query),
            "ndcg_at_k": report.mean_ndcg, "recall_at_k": report.mean_recall}


def chunk_size_sweep(corpus: Corpus, systems: Sequence[SweepSystem], sizes: Sequence[int], k: int = 10,
                     progress: bool = True) -> pd.DataFrame:
    missing = [q.query_id for q in corpus.queries if q.answer_span is None]
    if missing:
        raise EvalError(f"chunk-size sweep needs answer spans; {len(missing)} queries lack one (e.g. {missing[0]})")
    rows = []
    for size in tqdm(list(sizes), desc="Chunk-size sweep", disable=not progress):
        resplit = subsplit_corpus(corpus, size)
        for system in systems:
            report = system.evaluate(resplit, k)
            rows.append(_point_row(system, report, target_chars=size, n_chunks=resplit.n_chunks))
            LOG.info("size=%d %s ndcg@%d=%.4f", size, system.label, k, report.mean_ndcg)
    return pd.DataFrame(rows, columns=["target_chars", "system", "mode", "n_chunks", "n_queries", "ndcg_at_k", "recall_at_k"])


def nested_samples(corpus: Corpus, doc_counts: Sequence[int], seed: int) -> Dict[int, List[str]]:
    """Seeded document samples where every smaller sample is a subset of every larger one."""
    doc_ids = corpus.doc_ids
    too_large = [n for n in doc_counts if n > len(doc_ids) or n < 1]
    if too_large:
        raise EvalError(f"document counts {too_large} are outside [1, {len(doc_ids)}]")
    order = philox(seed, "corpus-sample").permutation(len(doc_ids))
    return {n: sorted(doc_ids[i] for i in order[:n]) for n in doc_counts}


def corpus_scaling_sweep(corpus: Corpus, systems: Sequence[SweepSystem], doc_counts: Sequence[int], k: int = 10,
                         seed: int = 0, progress: bool = True) -> Tuple[pd.DataFrame, Dict[int, List[str]]]:
    samples = nested_samples(corpus, doc_counts, seed)
    rows = []
    for n in tqdm(list(doc_counts), desc="Corpus-size sweep", disable=not progress):
        sample = corpus.subset(samples[n])
        LOG.debug("n_docs=%d sample=%s", n, ",".join(samples[n]))
        for system in systems:
            report = system.evaluate(sample, k)
            rows.append(_point_row(system, report, n_docs=n))
            LOG.info("n_docs=%d %s ndcg@%d=%.4f", n, system.label, k, report.mean_ndcg)
    frame = pd.DataFrame(rows, columns=["n_docs", "system", "mode", "n_queries", "ndcg_at_k", "recall_at_k"])
    return frame, samples


def sabotage_sweep(corpora_by_p: Dict[float, Corpus], systems: Sequence[SweepSystem], k: int = 10,
                   progress: bool = True) -> pd.DataFrame:
    rows = []
    for p in tqdm(sorted(corpora_by_p), desc="Sabotage sweep", disable=not progress):
        for system in systems:
            report = system.evaluate(corpora_by_p[p], k)
            rows.append(_point_row(system, report, sabotage_rate=p))
            LOG.info("p=%.2f %s ndcg@%d=%.4f", p, system.label, k, report.mean_ndcg)
    return pd.DataFrame(rows, columns=["sabotage_rate", "system", "mode", "n_queries", "ndcg_at_k", "recall_at_k"])


def lambda_sweep(corpus_train: Corpus, eval_suite: Dict[str, Corpus], lambdas: Sequence[float],
                 encoder_config: EncoderConfig, train_config: TrainConfig, k: int = 10,
                 progress: bool = True) -> pd.DataFrame:
    """Train one model per lambda_seq (shared seeds) and evaluate each on every task of the suite."""
    rows = []
    for lambda_seq in lambdas:
        config = with_lambda(train_config, lambda_seq)
        params = train(corpus_train, encoder_config, config, progress=progress).params
        system = SweepSystem(f"lambda={lambda_seq:g}", config.pooling.value, params)
        scores = []
        for task in sorted(eval_suite):
            report = system.evaluate(eval_suite[task], k)
            scores.append(report.mean_ndcg)
            rows.append({"lambda_seq": lambda_seq, "task": task, "ndcg_at_k": report.mean_ndcg})
            LOG.info("lambda=%g task=%s ndcg@%d=%.4f", lambda_seq, task, k, report.mean_ndcg)
        rows.append({"lambda_seq": lambda_seq, "task": "average", "ndcg_at_k": sum(scores) / len(scores)})
    return pd.DataFrame(rows, columns=["lambda_seq", "task", "ndcg_at_k"])


def propagation_ablation(corpus_train: Corpus, corpus_eval: Corpus, encoder_config: EncoderConfig,
                         train_config: TrainConfig, k: int = 10, seed: int = 0,
                         progress: bool = True) -> pd.DataFrame:
    """Late chunking after no training, training on organic documents, and training on artificial
    documents stitched from unrelated chunks."""
    artificial = artificial_long_documents(corpus_train, seed)
    trained = {
        "none": None,
        "organic": train(corpus_train, encoder_config, train_config, progress=progress).params,
        "artificial": train(artificial, encoder_config, train_config, progress=progress).params,
    }
    rows = []
    for training_data, params in trained.items():
        if params is None:
            params = init_params(encoder_config)
        system = SweepSystem(f"late_chunk/{training_data}", train_config.pooling.value, params)
        report = system.evaluate(corpus_eval, k)
        rows.append({"training_data": training_data, **_point_row(system, report)})
    return pd.DataFrame(rows, columns=["training_data", "system", "mode", "n_queries", "ndcg_at_k", "recall_at_k"])


def sweep_spread(frame: pd.DataFrame, metric: str = "ndcg_at_k") -> pd.DataFrame:
    """Per-system spread of a metric across the sweep points (population standard deviation)."""
    grouped = frame.groupby("system", sort=True)[metric]
    spread = pd.DataFrame({
        "std": grouped.std(ddof=0),
        "min": grouped.min(),
        "max": grouped.max(),
    }).reset_index()
    return spread


def plot_sweep(frame: pd.DataFrame, x: str, path, y: str = "ndcg_at_k", color: str = "system", title: str = "") -> Path:
    figure = px.line(frame.sort_values(x), x=x, y=y, color=color, markers=True, title=title)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    figure.write_html(path, include_plotlyjs="cdn")
    return path
