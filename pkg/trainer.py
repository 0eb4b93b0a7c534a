"""
Batch construction and the optimization loop: AdamW with a warmed-up cosine schedule, batches of a
few whole documents whose chunks serve as in-sequence and in-batch negatives for each other.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd
import torch
from tqdm import tqdm

from core import ContextEmbError, Corpus
from encoder import (
    EncoderConfig,
    EncoderParams,
    NonFiniteError,
    chunk_token_ids,
    init_params,
    save_checkpoint,
    sequence_length,
)
from loss import LossConfig, LossError, TrainingBatch, Triplet, loss_gradient
from pooling import pool_document, pool_query
from POOLING_MODES import PoolingMode
from SCORERS import Scorer
from utils import philox, write_csv

LOG = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ["step", "lr", "loss", "l_seq", "l_batch"]


class TrainingError(ContextEmbError, ValueError):
    module = "trainer"


class DivergenceError(TrainingError):
    def __init__(self, step: int, reason: str = ""):
        self.step = step
        super().__init__(f"training diverged at step {step}" + (f": {reason}" if reason else ""))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    warmup_frac: float = 0.05
    epochs: int = 2
    docs_per_batch: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    pooling: PoolingMode = PoolingMode.LATE_CHUNK
    loss: LossConfig = field(default_factory=LossConfig)
    debug_checks: bool = True

    def __post_init__(self):
        object.__setattr__(self, "pooling", PoolingMode.get(self.pooling))
        if self.lr <= 0 or self.eps <= 0 or self.docs_per_batch < 1 or self.epochs < 0:
            raise TrainingError("lr, eps and docs_per_batch must be positive and epochs non-negative")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise TrainingError(f"warmup_frac must lie in [0, 1), got {self.warmup_frac}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0) or self.weight_decay < 0:
            raise TrainingError("betas must lie in [0, 1) and weight_decay must be >= 0")
        if self.pooling is PoolingMode.SLIDING_WINDOW:
            raise TrainingError("sliding-window pooling is an inference-time extension and cannot be trained")
        if Scorer.for_mode(self.pooling) is not self.loss.scorer:
            raise TrainingError(f"pooling {self.pooling} needs the {Scorer.for_mode(self.pooling)} scorer, got {self.loss.scorer}")

    def to_dict(self) -> dict:
        values = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("loss", "pooling")}
        values["pooling"] = self.pooling.value
        values["loss"] = self.loss.to_dict()
        return values


@dataclass(frozen=True)
class BatchDescriptor:
    epoch: int
    index: int
    doc_ids: Tuple[str, ...]
    triplets: Tuple[Tuple[str, str, int], ...]  # (query_id, doc_id, chunk_index)


@dataclass
class StepLog:
    step: int
    lr: float
    loss: float
    l_seq: float
    l_batch: float


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: Dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: Dict[str, torch.Tensor] = field(default_factory=dict)


@dataclass
class TrainResult:
    params: EncoderParams
    log: List[StepLog]
    skipped_docs: List[str] = field(default_factory=list)

    def log_frame(self) -> pd.DataFrame:
        return loss_log_frame(self.log)


def usable_doc_ids(corpus: Corpus, encoder_config: Optional[EncoderConfig]) -> Tuple[List[str], List[str]]:
    if encoder_config is None:
        return corpus.doc_ids, []
    tokenizer = encoder_config.tokenizer
    usable, skipped = [], []
    for doc_id in corpus.doc_ids:
        counts = [len(t) for t in chunk_token_ids(corpus.documents[doc_id], tokenizer)]
        (usable if sequence_length(counts) <= encoder_config.max_seq_len else skipped).append(doc_id)
    for doc_id in skipped:
        LOG.warning("Skipping document %s: its sequence exceeds max_seq_len %d", doc_id, encoder_config.max_seq_len)
    return usable, skipped


def make_batches(corpus: Corpus, docs_per_batch: int, seed: int, epoch: int,
                 encoder_config: Optional[EncoderConfig] = None) -> List[BatchDescriptor]:
    """Shuffle documents (seeded by seed XOR epoch) into full batches; the last partial batch is dropped."""
    doc_ids, _ = usable_doc_ids(corpus, encoder_config)
    n_batches = len(doc_ids) // docs_per_batch
    if n_batches == 0:
        raise TrainingError(f"no trainable batch: {len(doc_ids)} usable documents for batches of {docs_per_batch}")

    order = philox(seed ^ epoch, "batches").permutation(len(doc_ids))
    shuffled = [doc_ids[i] for i in order]

    refs_by_doc: Dict[str, List[Tuple[str, str, int]]] = {}
    for query in corpus.queries:
        for doc_id, chunk_index in sorted(query.gold):
            refs_by_doc.setdefault(doc_id, []).append((query.query_id, doc_id, chunk_index))

    batches = []
    for b in range(n_batches):
        members = tuple(shuffled[b * docs_per_batch:(b + 1) * docs_per_batch])
        triplets = tuple(ref for doc_id in members for ref in refs_by_doc.get(doc_id, []))
        batches.append(BatchDescriptor(epoch, b, members, triplets))
    return batches


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warm-up to config.lr, then cosine decay to 0 at total_steps."""
    if total_steps <= 0:
        return 0.0
    step = min(max(step, 0), total_steps)
    warmup = math.ceil(config.warmup_frac * total_steps)
    if step < warmup:
        return config.lr * step / warmup
    if total_steps == warmup:
        return config.lr
    progress = (step - warmup) / (total_steps - warmup)
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@torch.no_grad()
def adamw_step(params: EncoderParams, grads: Dict[str, torch.Tensor], state: AdamWState, lr_t: float,
               config: TrainConfig) -> AdamWState:
    """One decoupled-weight-decay Adam update, applied in place."""
    state.step += 1
    bias1 = 1.0 - config.beta1 ** state.step
    bias2 = 1.0 - config.beta2 ** state.step
    for name, param in params.named_parameters():
        grad = grads[name]
        if grad.shape != param.shape:
            raise TrainingError(f"gradient for {name} has shape {tuple(grad.shape)}, expected {tuple(param.shape)}")
        if name not in state.exp_avg:
            state.exp_avg[name] = torch.zeros_like(param)
            state.exp_avg_sq[name] = torch.zeros_like(param)
        exp_avg, exp_avg_sq = state.exp_avg[name], state.exp_avg_sq[name]

        param.mul_(1.0 - lr_t * config.weight_decay)
        exp_avg.mul_(config.beta1).add_(grad, alpha=1.0 - config.beta1)
        exp_avg_sq.mul_(config.beta2).addcmul_(grad, grad, value=1.0 - config.beta2)
        denom = (exp_avg_sq / bias2).sqrt_().add_(config.eps)
        param.addcdiv_(exp_avg, denom, value=-lr_t / bias1)

        if config.debug_checks and not bool(torch.isfinite(param).all()):
            raise NonFiniteError(f"non-finite values in {name} after update {state.step}")
    return state


def assemble_batch(corpus: Corpus, descriptor: BatchDescriptor, params: EncoderParams, config: TrainConfig) -> TrainingBatch:
    position = {doc_id: i for i, doc_id in enumerate(descriptor.doc_ids)}
    docs = [pool_document(corpus.documents[doc_id], params, config.pooling) for doc_id in descriptor.doc_ids]
    texts = {q.query_id: q.text for q in corpus.queries}
    triplets = [
        Triplet(pool_query(texts[query_id], params, config.loss.scorer, owner=query_id), position[doc_id], chunk_index, query_id)
        for query_id, doc_id, chunk_index in descriptor.triplets
    ]
    return TrainingBatch(docs, triplets)


def loss_log_frame(log: List[StepLog]) -> pd.DataFrame:
    return pd.DataFrame([vars(entry) for entry in log], columns=LOSS_LOG_COLUMNS)


def write_loss_log(log: List[StepLog], path) -> Path:
    return write_csv(loss_log_frame(log), path)


def train(corpus: Corpus, encoder_config: EncoderConfig, train_config: TrainConfig,
          out_dir=None, params: Optional[EncoderParams] = None, progress: bool = True) -> TrainResult:
    params = params if params is not None else init_params(encoder_config)
    usable, skipped = usable_doc_ids(corpus, encoder_config)
    train_corpus = corpus.subset(usable) if skipped else corpus

    schedule: List[BatchDescriptor] = []
    for epoch in range(train_config.epochs):
        for descriptor in make_batches(train_corpus, train_config.docs_per_batch, train_config.seed, epoch):
            if descriptor.triplets:
                schedule.append(descriptor)
            else:
                LOG.warning("Epoch %d batch %d has no queries; skipping it", epoch, descriptor.index)

    total_steps = len(schedule)
    state = AdamWState()
    log: List[StepLog] = []
    LOG.info("Training %s encoder for %d steps (%d epochs, %d docs per batch)",
             train_config.pooling, total_steps, train_config.epochs, train_config.docs_per_batch)

    for step, descriptor in enumerate(tqdm(schedule, desc="Training", disable=not progress)):
        try:
            result = loss_gradient(
                lambda p: assemble_batch(train_corpus, descriptor, p, train_config), train_config.loss, params
            )
            lr_t = lr_at(step, total_steps, train_config)
            adamw_step(params, result.grads, state, lr_t, train_config)
        except (LossError, NonFiniteError) as e:
            raise DivergenceError(step, str(e)) from e
        if train_config.debug_checks and not params.all_finite():
            raise DivergenceError(step, "non-finite parameters")
        log.append(StepLog(step, lr_t, result.loss, result.diagnostics.l_seq, result.diagnostics.l_batch))

    if out_dir is not None:
        out_dir = Path(out_dir)
        save_checkpoint(out_dir / "encoder.pt", params, metadata={"train": train_config.to_dict()})
        write_loss_log(log, out_dir / "loss_log.csv")
        LOG.info("✅ Saved checkpoint and loss log to %s", out_dir)
    return TrainResult(params, log, skipped)


def with_lambda(config: TrainConfig, lambda_seq: float) -> TrainConfig:
    return replace(config, loss=replace(config.loss, lambda_seq=lambda_seq))
