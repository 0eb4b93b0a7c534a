#!/usr/bin/env python3
"""
Command-line surface: exit codes, JSON summaries and a small end-to-end pipeline
"""

import json
import sys
from pathlib import Path

import pandas as pd
import pytest

sys.path.append(str(Path(__file__).parent.parent))

import cli

ENCODER_FLAGS = ["--dim", "16", "--heads", "2", "--layers", "1", "--max-seq-len", "512"]


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("CTXEMB_SEED", "CTXEMB_THREADS", "CTXEMB_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    captured = capsys.readouterr()
    lines = captured.out.strip().splitlines()
    summary = json.loads(lines[-1]) if code == 0 and lines and lines[-1].startswith("{") else None
    return code, summary, captured.err


def pipeline(capsys, root):
    docs, queries = root / "docs.jsonl", root / "queries.jsonl"
    outputs = {}
    code, outputs["synth"], _ = run(capsys, "synth", "--n-docs", 8, "--chunks-per-doc", 3, "--seed", 0,
                                    "--threads", 1, "--log-level", "warning", "--out", docs, queries)
    assert code == 0
    code, outputs["train"], _ = run(capsys, "train", "--corpus", docs, queries, "--out", root / "model",
                                    "--epochs", 1, "--docs-per-batch", 4, "--lr", 1e-3, "--seed", 0,
                                    "--threads", 1, "--log-level", "warning", *ENCODER_FLAGS)
    assert code == 0
    checkpoint = root / "model" / "encoder.pt"
    code, outputs["index"], _ = run(capsys, "index", "--docs", docs, "--checkpoint", checkpoint,
                                    "--out", root / "chunks.idx", "--threads", 1, "--log-level", "warning")
    assert code == 0
    code, outputs["eval"], _ = run(capsys, "eval", "--corpus", docs, queries, "--index", root / "chunks.idx",
                                   "--checkpoint", checkpoint, "--k", 5, "--out", root / "eval",
                                   "--threads", 1, "--seed", 0, "--log-level", "warning")
    assert code == 0
    return outputs


def test_unknown_flag_is_a_usage_error(capsys):
    code, _, _ = run(capsys, "synth", "--bogus", "--out", "a", "b")
    assert code == 2


def test_missing_subcommand_is_a_usage_error(capsys):
    assert run(capsys)[0] == 2


def test_help_exits_cleanly(capsys):
    assert cli.main(["--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_runtime_error_names_the_module(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--n-docs", 1, "--out", tmp_path / "d.jsonl", tmp_path / "q.jsonl")
    assert code == 1
    assert "[synthgen]" in err


def test_missing_input_is_reported(tmp_path, capsys):
    code, _, err = run(capsys, "index", "--docs", tmp_path / "missing.jsonl", "--mode", "bm25", "--out", tmp_path / "x.idx")
    assert code == 1
    assert err.strip().splitlines()[-1].startswith("[")


def test_chunk_command(tmp_path, capsys):
    raw = tmp_path / "raw.jsonl"
    raw.write_text(json.dumps({"doc_id": "d0", "text": "First paragraph here.\n\nSecond paragraph here."}) + "\n",
                   encoding="utf-8")
    code, summary, _ = run(capsys, "chunk", "--in", raw, "--out", tmp_path / "chunked.jsonl", "--max-chars", 25)
    assert code == 0
    assert summary["n_docs"] == 1 and summary["n_chunks"] == 2
    record = json.loads((tmp_path / "chunked.jsonl").read_text(encoding="utf-8"))
    assert len(record["chunks"]) == 2


def test_end_to_end_pipeline(tmp_path, capsys):
    outputs = pipeline(capsys, tmp_path)
    assert outputs["synth"]["n_docs"] == 8 and outputs["synth"]["n_queries"] == 24
    assert outputs["train"]["steps"] == 2
    assert outputs["index"]["entries"] == 24 and outputs["index"]["kind"] == "single"
    assert 0.0 <= outputs["eval"]["mean_ndcg"] <= 1.0
    assert outputs["eval"]["config"]["run"]["seed"] == 0
    frame = pd.read_csv(tmp_path / "eval" / "per_query.csv")
    assert len(frame) == 24

    code, hits, _ = run(capsys, "search", "--index", tmp_path / "chunks.idx", "--checkpoint",
                        tmp_path / "model" / "encoder.pt", "--query", "Which coach mentored Entity-0003?",
                        "--k", 3, "--log-level", "warning")
    assert code == 0
    assert [h["rank"] for h in hits["hits"]] == [1, 2, 3]


def test_pipeline_is_deterministic(tmp_path, capsys):
    first_root, second_root = tmp_path / "a", tmp_path / "b"
    first = pipeline(capsys, first_root)
    second = pipeline(capsys, second_root)
    assert first["train"]["encoder_checksum"] == second["train"]["encoder_checksum"]
    for name in ("docs.jsonl", "queries.jsonl", "model/loss_log.csv", "chunks.idx",
                 "eval/per_query.csv", "eval/summary.csv"):
        assert (first_root / name).read_bytes() == (second_root / name).read_bytes(), name


def test_bm25_eval_without_checkpoint(tmp_path, capsys):
    docs, queries = tmp_path / "docs.jsonl", tmp_path / "queries.jsonl"
    assert run(capsys, "synth", "--n-docs", 4, "--chunks-per-doc", 3, "--out", docs, queries)[0] == 0
    code, summary, _ = run(capsys, "eval", "--corpus", docs, queries, "--mode", "bm25", "--out", tmp_path / "eval")
    assert code == 0
    assert summary["mode"] == "bm25" and summary["n_queries"] == 12


def test_sabotage_sweep_outputs(tmp_path, capsys):
    code, summary, _ = run(capsys, "sweep", "--kind", "sabotage", "--n-docs", 4, "--chunks-per-doc", 3,
                           "--p-values", 0, 1, "--system", "lexical:bm25", "--k", 3, "--out", tmp_path / "sweep",
                           "--log-level", "warning")
    assert code == 0
    assert summary["rows"] == 2
    assert set(summary["outputs"]) == {"sweep", "spread", "plot"}
    frame = pd.read_csv(tmp_path / "sweep" / "sweep_sabotage.csv")
    assert list(frame["sabotage_rate"]) == [0.0, 1.0]


TRAINING_SWEEP_FLAGS = ["--n-docs", "4", "--chunks-per-doc", "3", "--epochs", "1", "--docs-per-batch", "2",
                        "--lr", "1e-3", "--seed", "0", "--k", "3", "--log-level", "warning", *ENCODER_FLAGS]


def test_lambda_sweep_outputs(tmp_path, capsys):
    code, summary, _ = run(capsys, "sweep", "--kind", "lambda", "--lambdas", 0, 1, "--p-values", 0, 1,
                           "--out", tmp_path / "sweep", *TRAINING_SWEEP_FLAGS)
    assert code == 0
    assert summary["rows"] == 6
    assert set(summary["outputs"]) == {"sweep", "plot"}
    frame = pd.read_csv(tmp_path / "sweep" / "sweep_lambda.csv")
    assert list(frame["task"]) == ["p=0", "p=1", "average"] * 2


def test_propagation_sweep_outputs(tmp_path, capsys):
    code, summary, _ = run(capsys, "sweep", "--kind", "propagation", "--out", tmp_path / "sweep",
                           *TRAINING_SWEEP_FLAGS)
    assert code == 0
    assert summary["rows"] == 3
    assert set(summary["outputs"]) == {"sweep"}
    frame = pd.read_csv(tmp_path / "sweep" / "sweep_propagation.csv")
    assert list(frame["training_data"]) == ["none", "organic", "artificial"]


def test_training_sweeps_reject_systems(tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "--kind", "lambda", "--system", "lexical:bm25", "--out", tmp_path)
    assert code == 1
    assert "[cli]" in err


def test_corpus_sweeps_need_a_corpus(tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "--kind", "chunk", "--out", tmp_path)
    assert code == 1
    assert "--corpus" in err


def test_bad_system_spec(tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "--kind", "sabotage", "--system", "nolabel", "--out", tmp_path)
    assert code == 1
    assert "[cli]" in err


if __name__ == "__main__":
    print("Testing the command line")
    print("=" * 40)
    sys.exit(pytest.main([__file__, "-v"]))
