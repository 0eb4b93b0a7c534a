#!/usr/bin/env python3
"""
Command-line entry point: python cli.py <chunk|synth|train|index|search|eval|sweep> [options]

Logs go to stderr; stdout carries one JSON line summarizing the run, resolved config included.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from chunking import ChunkerConfig, chunk_document
from config import BM25_MODE, RunConfig, resolve
from core import ContextEmbError, Corpus, load_corpus, load_documents, save_corpus, save_documents
from encoder import EncoderParams, init_params, load_checkpoint
from evalbench import (
    SYSTEM_MODES,
    SweepSystem,
    chunk_size_sweep,
    corpus_scaling_sweep,
    evaluate,
    lambda_sweep,
    plot_sweep,
    propagation_ablation,
    sabotage_sweep,
    sweep_spread,
    write_report,
)
from POOLING_MODES import PoolingMode
from retrieval import build_bm25_index, build_index, load_index, save_index, search
from synthgen import SynthConfig, generate
from trainer import train
from utils import configure_threads, write_csv, write_jsonl

LOG = logging.getLogger("cli")

SWEEP_KINDS = ("chunk", "corpus", "lambda", "sabotage", "propagation")
DEFAULT_SIZES = [800, 400, 200, 100]
DEFAULT_DOC_COUNTS = [25, 50, 100, 200]
DEFAULT_LAMBDAS = [0.0, 0.1, 0.5, 1.0]
DEFAULT_P_VALUES = [0.0, 0.5, 1.0]
PATH_ARGS = ("input", "output", "corpus", "out", "init", "checkpoint", "index")


class CliError(ContextEmbError, ValueError):
    module = "cli"


# ---------------------------------------------------------------------------
# parser


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", dest="run.seed", type=int, help="global seed")
    common.add_argument("--threads", dest="run.threads", type=int, help="0 = auto, 1 = deterministic")
    common.add_argument("--log-level", dest="run.log_level", help="DEBUG, INFO, WARNING or ERROR")
    return common


def _encoder_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("encoder")
    group.add_argument("--dim", dest="encoder.dim", type=int)
    group.add_argument("--heads", dest="encoder.heads", type=int)
    group.add_argument("--layers", dest="encoder.layers", type=int)
    group.add_argument("--max-seq-len", dest="encoder.max_seq_len", type=int)
    group.add_argument("--positional", dest="encoder.positional", choices=["sinusoidal", "none"])


def _train_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training")
    group.add_argument("--lr", dest="train.lr", type=float)
    group.add_argument("--epochs", dest="train.epochs", type=int)
    group.add_argument("--docs-per-batch", dest="train.docs_per_batch", type=int)
    group.add_argument("--warmup-frac", dest="train.warmup_frac", type=float)
    group.add_argument("--pooling", dest="train.pooling", choices=["independent", "late_chunk", "late_interaction"])
    group.add_argument("--lambda-seq", dest="loss.lambda_seq", type=float)
    group.add_argument("--temperature", dest="loss.temperature", type=float)


def _mode_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mode", dest="eval.mode", choices=SYSTEM_MODES)
    parser.add_argument("--window-tokens", dest="eval.window_tokens", type=int)
    parser.add_argument("--overlap-chunks", dest="eval.overlap_chunks", type=int)


def _synth_options(parser: argparse.ArgumentParser, defaults: SynthConfig = SynthConfig()) -> None:
    parser.add_argument("--n-docs", type=int, default=defaults.n_docs)
    parser.add_argument("--chunks-per-doc", type=int, default=defaults.chunks_per_doc)
    parser.add_argument("--facts-per-chunk", type=int, default=defaults.facts_per_chunk)
    parser.add_argument("--filler-per-chunk", type=int, default=defaults.filler_per_chunk)
    parser.add_argument("--queries-per-chunk", type=int, default=defaults.queries_per_chunk)


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="cli.py", description="Context-aware chunk embeddings")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    chunk = commands.add_parser("chunk", parents=[common], help="split raw documents into chunks")
    chunk.add_argument("--in", dest="input", required=True)
    chunk.add_argument("--out", dest="output", required=True)
    chunk.add_argument("--max-chars", type=int, default=ChunkerConfig.max_chars)

    synth = commands.add_parser("synth", parents=[common], help="generate a sabotaged synthetic corpus")
    _synth_options(synth)
    synth.add_argument("--p", type=float, default=SynthConfig.sabotage_rate, help="sabotage rate")
    synth.add_argument("--id-offset", type=int, default=0)
    synth.add_argument("--out", nargs=2, metavar=("DOCS", "QUERIES"), required=True)

    train_cmd = commands.add_parser("train", parents=[common], help="train the encoder with InSeNT")
    train_cmd.add_argument("--corpus", nargs=2, metavar=("DOCS", "QUERIES"), required=True)
    train_cmd.add_argument("--init", help="checkpoint to continue from")
    train_cmd.add_argument("--out", required=True, help="output directory")
    _encoder_options(train_cmd)
    _train_options(train_cmd)

    index = commands.add_parser("index", parents=[common], help="embed and index every chunk")
    index.add_argument("--docs", dest="corpus", required=True)
    index.add_argument("--checkpoint")
    index.add_argument("--out", required=True, help="index file")
    _mode_options(index)
    _encoder_options(index)

    search_cmd = commands.add_parser("search", parents=[common], help="top-k chunks for one query")
    search_cmd.add_argument("--index", required=True)
    search_cmd.add_argument("--checkpoint")
    search_cmd.add_argument("--query", required=True)
    search_cmd.add_argument("--k", dest="eval.k", type=int)
    search_cmd.add_argument("--out", help="optional CSV of hits")
    _encoder_options(search_cmd)

    eval_cmd = commands.add_parser("eval", parents=[common], help="nDCG/recall/MRR over a query set")
    eval_cmd.add_argument("--corpus", nargs=2, metavar=("DOCS", "QUERIES"), required=True)
    eval_cmd.add_argument("--index", help="prebuilt index; built from --corpus when omitted")
    eval_cmd.add_argument("--checkpoint")
    eval_cmd.add_argument("--k", dest="eval.k", type=int)
    eval_cmd.add_argument("--out", required=True, help="report directory")
    _mode_options(eval_cmd)
    _encoder_options(eval_cmd)

    sweep = commands.add_parser("sweep", parents=[common], help="controlled retrieval experiments")
    sweep.add_argument("--kind", choices=SWEEP_KINDS, required=True)
    sweep.add_argument("--corpus", nargs=2, metavar=("DOCS", "QUERIES"), help="corpus for chunk/corpus sweeps")
    sweep.add_argument("--system", action="append", default=[], metavar="LABEL:MODE[:CHECKPOINT]")
    sweep.add_argument("--sizes", type=int, nargs="+", default=DEFAULT_SIZES)
    sweep.add_argument("--doc-counts", type=int, nargs="+", default=DEFAULT_DOC_COUNTS)
    sweep.add_argument("--lambdas", type=float, nargs="+", default=DEFAULT_LAMBDAS)
    sweep.add_argument("--p-values", type=float, nargs="+", default=DEFAULT_P_VALUES)
    sweep.add_argument("--k", dest="eval.k", type=int)
    sweep.add_argument("--out", required=True, help="output directory")
    _synth_options(sweep)
    _encoder_options(sweep)
    _train_options(sweep)
    return parser


def _flag_sections(args: argparse.Namespace) -> Dict[str, Dict[str, object]]:
    sections: Dict[str, Dict[str, object]] = {}
    for dest, value in vars(args).items():
        if "." in dest and value is not None:
            section, key = dest.split(".", 1)
            sections.setdefault(section, {})[key] = value
    return sections


def _paths(args: argparse.Namespace) -> Dict[str, str]:
    paths = {}
    for name in PATH_ARGS:
        value = getattr(args, name, None)
        if isinstance(value, list):
            for part, item in zip(("docs", "queries"), value):
                paths[f"{name}_{part}"] = item
        elif value is not None:
            paths[name] = value
    return paths


# ---------------------------------------------------------------------------
# helpers


def _params(checkpoint: Optional[str], config: RunConfig) -> EncoderParams:
    if checkpoint:
        return load_checkpoint(checkpoint)
    LOG.warning("No checkpoint given; using a freshly initialized encoder (seed %d)", config.encoder.seed)
    return init_params(config.encoder)


def _synth_config(args: argparse.Namespace, config: RunConfig, sabotage_rate: float, id_offset: int = 0) -> SynthConfig:
    seed = config.seed if config.seed is not None else SynthConfig.seed
    return SynthConfig(
        n_docs=args.n_docs,
        chunks_per_doc=args.chunks_per_doc,
        facts_per_chunk=args.facts_per_chunk,
        filler_per_chunk=args.filler_per_chunk,
        queries_per_chunk=args.queries_per_chunk,
        sabotage_rate=sabotage_rate,
        seed=seed,
        id_offset=id_offset,
    )


def _build(corpus: Corpus, mode: str, params: Optional[EncoderParams], config: RunConfig, progress: bool):
    if mode == BM25_MODE:
        return build_bm25_index(corpus, config.encoder.tokenizer)
    return build_index(corpus, params, mode, config.eval.window_tokens, config.eval.overlap_chunks, progress)


def parse_system(value: str, config: RunConfig) -> SweepSystem:
    """LABEL:MODE[:CHECKPOINT]; the checkpoint path may itself contain colons."""
    parts = value.split(":", 2)
    if len(parts) < 2 or not parts[0]:
        raise CliError(f"--system expects LABEL:MODE[:CHECKPOINT], got {value!r}")
    label, mode = parts[0], parts[1]
    if mode not in SYSTEM_MODES:
        raise CliError(f"--system {label}: mode {mode!r} is not one of {SYSTEM_MODES}")
    if mode == BM25_MODE:
        return SweepSystem(label, mode)
    checkpoint = parts[2] if len(parts) == 3 else None
    return SweepSystem(label, mode, _params(checkpoint, config))


def default_systems(config: RunConfig) -> List[SweepSystem]:
    params = init_params(config.encoder)
    return [
        SweepSystem("bm25", BM25_MODE),
        SweepSystem("independent", PoolingMode.INDEPENDENT.value, params),
        SweepSystem("late_chunk", PoolingMode.LATE_CHUNK.value, params),
    ]


# ---------------------------------------------------------------------------
# subcommands


def cmd_chunk(args, config: RunConfig, progress: bool) -> dict:
    chunker = ChunkerConfig(max_chars=args.max_chars)
    documents = load_documents(args.input, chunker)
    rechunked = {doc_id: chunk_document(doc_id, doc.text, chunker) for doc_id, doc in documents.items()}
    save_documents(rechunked, args.output)
    n_chunks = sum(len(doc.chunks) for doc in rechunked.values())
    LOG.info("✅ Chunked %d documents into %d chunks", len(rechunked), n_chunks)
    return {"n_docs": len(rechunked), "n_chunks": n_chunks, "max_chars": args.max_chars}


def cmd_synth(args, config: RunConfig, progress: bool) -> dict:
    synth_config = _synth_config(args, config, args.p, args.id_offset)
    corpus = generate(synth_config)
    save_corpus(corpus, *args.out)
    LOG.info("✅ Generated %d documents and %d queries", len(corpus.documents), len(corpus.queries))
    return {"n_docs": len(corpus.documents), "n_chunks": corpus.n_chunks, "n_queries": len(corpus.queries),
            "synth": synth_config.to_dict()}


def cmd_train(args, config: RunConfig, progress: bool) -> dict:
    corpus = load_corpus(*args.corpus)
    params = load_checkpoint(args.init) if args.init else None
    encoder_config = params.config if params is not None else config.encoder
    result = train(corpus, encoder_config, config.train, out_dir=args.out, params=params, progress=progress)
    out = Path(args.out)
    return {
        "steps": len(result.log),
        "final_loss": result.log[-1].loss if result.log else None,
        "skipped_docs": len(result.skipped_docs),
        "checkpoint": str(out / "encoder.pt"),
        "loss_log": str(out / "loss_log.csv"),
        "encoder_checksum": result.params.checksum(),
    }


def cmd_index(args, config: RunConfig, progress: bool) -> dict:
    corpus = load_corpus(args.corpus)
    mode = config.eval.mode
    params = None if mode == BM25_MODE else _params(args.checkpoint, config)
    index = _build(corpus, mode, params, config, progress)
    path = save_index(index, args.out)
    LOG.info("✅ Saved %s index with %d entries to %s", index.kind, len(index), path)
    return {"kind": index.kind.value, "mode": index.mode, "entries": len(index), "dim": index.dim,
            "ms_per_doc": index.metadata.get("ms_per_doc"), "index": str(path)}


def cmd_search(args, config: RunConfig, progress: bool) -> dict:
    index = load_index(args.index)
    params = None if index.mode == BM25_MODE else _params(args.checkpoint, config)
    result = search(index, args.query, params, config.eval.k)
    hits = [{"rank": rank, "doc_id": hit.doc_id, "chunk_index": hit.chunk_index, "score": hit.score}
            for rank, hit in enumerate(result, start=1)]
    if args.out:
        write_csv(pd.DataFrame(hits, columns=["rank", "doc_id", "chunk_index", "score"]), args.out)
    return {"k": config.eval.k, "hits": hits}


def cmd_eval(args, config: RunConfig, progress: bool) -> dict:
    corpus = load_corpus(*args.corpus)
    if args.index:
        index = load_index(args.index)
        mode = index.mode
    else:
        mode = config.eval.mode
        index = None
    params = None if mode == BM25_MODE else _params(args.checkpoint, config)
    if index is None:
        index = _build(corpus, mode, params, config, progress)
    report = evaluate(index, corpus.queries, params, config.eval.k, progress)
    per_query, summary = write_report(report, args.out)
    LOG.info("✅ nDCG@%d=%.4f recall@%d=%.4f MRR=%.4f over %d queries", report.k, report.mean_ndcg,
             report.k, report.mean_recall, report.mrr, len(report.per_query))
    return {**report.summary(), "per_query": str(per_query), "summary": str(summary)}


def _sweep_frame(args, config: RunConfig, progress: bool):
    """(frame, x column, color column, extra artifacts) for the requested sweep kind."""
    k = config.eval.k
    kind = args.kind
    if kind in ("chunk", "corpus") and not args.corpus:
        raise CliError(f"sweep --kind {kind} needs --corpus DOCS QUERIES")
    if kind in ("chunk", "corpus", "sabotage"):
        systems = [parse_system(value, config) for value in args.system] or default_systems(config)
    elif args.system:
        raise CliError(f"sweep --kind {kind} trains its own encoders and takes no --system")

    if kind == "chunk":
        corpus = load_corpus(*args.corpus)
        return chunk_size_sweep(corpus, systems, args.sizes, k, progress), "target_chars", "system", {}
    if kind == "corpus":
        corpus = load_corpus(*args.corpus)
        frame, samples = corpus_scaling_sweep(corpus, systems, args.doc_counts, k, config.train.seed, progress)
        return frame, "n_docs", "system", {"samples": samples}
    if kind == "sabotage":
        corpora = {p: generate(_synth_config(args, config, p)) for p in args.p_values}
        return sabotage_sweep(corpora, systems, k, progress), "sabotage_rate", "system", {}

    # lambda and propagation train on p=1 entities disjoint from the evaluation entities
    corpus_train = generate(_synth_config(args, config, 1.0))
    if kind == "lambda":
        suite = {f"p={p:g}": generate(_synth_config(args, config, p, id_offset=args.n_docs)) for p in args.p_values}
        frame = lambda_sweep(corpus_train, suite, args.lambdas, config.encoder, config.train, k, progress)
        return frame, "lambda_seq", "task", {}
    corpus_eval = generate(_synth_config(args, config, 1.0, id_offset=args.n_docs))
    frame = propagation_ablation(corpus_train, corpus_eval, config.encoder, config.train, k, config.train.seed, progress)
    return frame, None, None, {}


def cmd_sweep(args, config: RunConfig, progress: bool) -> dict:
    frame, x, color, extra = _sweep_frame(args, config, progress)
    out = Path(args.out)
    outputs = {"sweep": str(write_csv(frame, out / f"sweep_{args.kind}.csv"))}
    summary: dict = {"kind": args.kind, "rows": len(frame)}
    if "system" in frame.columns and x is not None:
        spread = sweep_spread(frame)
        outputs["spread"] = str(write_csv(spread, out / f"spread_{args.kind}.csv"))
        summary["spread"] = {row.system: row.std for row in spread.itertuples()}
    if x is not None:
        outputs["plot"] = str(plot_sweep(frame, x, out / f"sweep_{args.kind}.html", color=color,
                                         title=f"{args.kind} sweep"))
    if "samples" in extra:
        path = out / "corpus_samples.jsonl"
        write_jsonl(path, ({"n_docs": n, "doc_ids": ids} for n, ids in sorted(extra["samples"].items())))
        outputs["samples"] = str(path)
    summary["outputs"] = outputs
    return summary


COMMANDS = {
    "chunk": cmd_chunk,
    "synth": cmd_synth,
    "train": cmd_train,
    "index": cmd_index,
    "search": cmd_search,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (None, 0) else 2

    try:
        config = resolve(args.command, _paths(args), args.config, _flag_sections(args))
        setup_logging(config.run.log_level)
        configure_threads(config.run.threads)
        progress = logging.getLogger().isEnabledFor(logging.INFO)
        summary = COMMANDS[args.command](args, config, progress)
    except ContextEmbError as e:
        print(f"[{e.module}] {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"[io] {e}", file=sys.stderr)
        return 1

    summary = {"command": args.command, **summary, "config": config.to_dict()}
    print(json.dumps(summary, sort_keys=True, ensure_ascii=False, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
