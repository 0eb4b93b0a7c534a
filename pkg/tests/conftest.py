"""Shared fixtures: small hand-written corpora and tiny encoder configurations."""

import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent.parent))

from core import AnswerSpan, Corpus, Query
from encoder import EncoderConfig
from tests.helpers import make_document


@pytest.fixture
def tiny_corpus():
    d0 = make_document("d0", ["The cat sat on the mat. ", "It purred all day."])
    d1 = make_document("d1", ["Paris is in France. ", "It has a tower. ", "The river is the Seine."])
    queries = (
        Query("q0", "what did the cat do", frozenset({("d0", 1)}), AnswerSpan("d0", 27, 33)),
        Query("q1", "which river flows through Paris", frozenset({("d1", 2)})),
    )
    return Corpus({"d0": d0, "d1": d1}, queries).validate()


@pytest.fixture
def small_config():
    return EncoderConfig(dim=8, heads=2, layers=2, ffn_mult=2, max_seq_len=256, vocab_size=64, seed=3)


@pytest.fixture
def context_free_config():
    return EncoderConfig(dim=8, heads=2, layers=0, max_seq_len=256, positional="none", vocab_size=64, seed=5)
