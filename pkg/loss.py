"""
InSeNT objective: a weighted InfoNCE mixing in-sequence negatives (chunks of the positive's own
document) and in-batch negatives (chunks of the other documents in the batch).

    L = lambda_seq * L_seq + (1 - lambda_seq) * L_batch
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Tuple

import torch

from core import ContextEmbError
from encoder import EncoderParams, gradient
from pooling import ChunkEmbedding, ChunkRep, ChunkTokenSet
from SCORERS import Scorer

LOG = logging.getLogger(__name__)

NORM_FLOOR = 1e-12
ChunkRef = Tuple[int, int]


class LossError(ContextEmbError, ValueError):
    module = "loss"


@dataclass(frozen=True)
class LossConfig:
    lambda_seq: float = 0.1
    temperature: float = 0.05
    scorer: Scorer = Scorer.COSINE

    def __post_init__(self):
        object.__setattr__(self, "scorer", Scorer.get(self.scorer))
        if not 0.0 <= self.lambda_seq <= 1.0:
            raise LossError(f"lambda_seq must lie in [0, 1], got {self.lambda_seq}")
        if not self.temperature > 0.0:
            raise LossError(f"temperature must be > 0, got {self.temperature}")

    def to_dict(self) -> dict:
        return {"lambda_seq": self.lambda_seq, "temperature": self.temperature, "scorer": self.scorer.value}


@dataclass
class Triplet:
    query: torch.Tensor
    doc_position: int
    chunk_index: int
    query_id: str = ""

    @property
    def positive(self) -> ChunkRef:
        return (self.doc_position, self.chunk_index)


@dataclass
class TrainingBatch:
    docs: List[List[ChunkRep]]
    triplets: List[Triplet] = field(default_factory=list)

    @property
    def multi_vector(self) -> bool:
        return isinstance(self.docs[0][0], ChunkTokenSet)

    def chunk_refs(self) -> List[ChunkRef]:
        return [(position, rep.chunk_index) for position, reps in enumerate(self.docs) for rep in reps]

    def validate(self) -> None:
        if not self.docs or any(not reps for reps in self.docs):
            raise LossError("a training batch needs at least one document with chunks")
        kinds = {type(rep) for reps in self.docs for rep in reps}
        if len(kinds) != 1:
            raise LossError("a training batch mixes single-vector and multi-vector chunk representations")
        for triplet in self.triplets:
            position, index = triplet.positive
            if not 0 <= position < len(self.docs) or not 0 <= index < len(self.docs[position]):
                raise LossError(f"triplet {triplet.query_id or '?'} has unresolvable positive {triplet.positive}")


@dataclass
class TripletDiagnostics:
    query_id: str
    l_seq: float
    l_batch: float
    positive_score: float


@dataclass
class LossDiagnostics:
    l_seq: float
    l_batch: float
    per_triplet: List[TripletDiagnostics]


def _as_tensor(rep) -> torch.Tensor:
    if isinstance(rep, ChunkEmbedding):
        return rep.vector
    if isinstance(rep, ChunkTokenSet):
        return rep.vectors
    return rep


def _unit(vectors: torch.Tensor) -> torch.Tensor:
    norms = vectors.norm(dim=-1, keepdim=True)
    if bool((norms < NORM_FLOOR).any()):
        raise LossError("zero-norm vector under cosine scoring")
    return vectors / norms


def score(query_rep, chunk_rep, scorer) -> torch.Tensor:
    query, chunk = _as_tensor(query_rep), _as_tensor(chunk_rep)
    if Scorer.get(scorer) is Scorer.COSINE:
        if query.dim() != 1 or query.shape != chunk.shape:
            raise LossError(f"cosine scoring needs two vectors of equal size, got {tuple(query.shape)} and {tuple(chunk.shape)}")
        return _unit(query) @ _unit(chunk)
    if query.dim() != 2 or chunk.dim() != 2 or query.shape[1] != chunk.shape[1]:
        raise LossError(f"MaxSim needs two token matrices of equal width, got {tuple(query.shape)} and {tuple(chunk.shape)}")
    return (query @ chunk.T).max(dim=1).values.sum()


def build_negative_sets(batch: TrainingBatch, triplet: Triplet) -> Tuple[List[ChunkRef], List[ChunkRef]]:
    """(N_seq, N_batch): N_seq holds every chunk of the positive's document, the positive included."""
    position = triplet.doc_position
    n_seq, n_batch = [], []
    for ref in batch.chunk_refs():
        (n_seq if ref[0] == position else n_batch).append(ref)
    return n_seq, n_batch


def _maxsim_matrix(queries: List[torch.Tensor], chunks: List[torch.Tensor]) -> torch.Tensor:
    longest = max(c.shape[0] for c in chunks)
    dim = chunks[0].shape[1]
    padded = chunks[0].new_zeros(len(chunks), longest, dim)
    valid = torch.zeros(len(chunks), longest, dtype=torch.bool)
    for i, tokens in enumerate(chunks):
        padded[i, : tokens.shape[0]] = tokens
        valid[i, : tokens.shape[0]] = True
    rows = []
    for query in queries:
        sims = torch.einsum("md,cld->cml", query, padded)
        sims = sims.masked_fill(~valid[:, None, :], float("-inf"))
        rows.append(sims.amax(dim=-1).sum(dim=-1))
    return torch.stack(rows)


def score_matrix(batch: TrainingBatch, scorer) -> torch.Tensor:
    """Scores of every triplet's query against every chunk of the batch (triplets x chunks)."""
    chunks = [_as_tensor(rep) for reps in batch.docs for rep in reps]
    queries = [_as_tensor(t.query) for t in batch.triplets]
    if Scorer.get(scorer) is Scorer.COSINE:
        if batch.multi_vector:
            raise LossError("cosine scoring needs single-vector chunk representations")
        return _unit(torch.stack(queries)) @ _unit(torch.stack(chunks)).T
    if not batch.multi_vector:
        raise LossError("MaxSim scoring needs token-set chunk representations")
    return _maxsim_matrix(queries, chunks)


def insent_loss(batch: TrainingBatch, config: LossConfig = LossConfig()) -> Tuple[torch.Tensor, LossDiagnostics]:
    batch.validate()
    if not batch.triplets:
        raise LossError("insent_loss needs at least one triplet")

    refs = batch.chunk_refs()
    column = {ref: i for i, ref in enumerate(refs)}
    doc_of = torch.tensor([ref[0] for ref in refs])
    positions = torch.tensor([t.doc_position for t in batch.triplets])
    positive_cols = torch.tensor([column[t.positive] for t in batch.triplets])

    logits = score_matrix(batch, config.scorer) / config.temperature
    positive_logits = logits.gather(1, positive_cols[:, None]).squeeze(1)

    in_sequence = doc_of[None, :] == positions[:, None]
    is_positive = torch.zeros_like(in_sequence)
    is_positive[torch.arange(len(batch.triplets)), positive_cols] = True
    in_batch = ~in_sequence | is_positive

    # logsumexp subtracts the row max before exponentiating
    per_seq = torch.logsumexp(logits.masked_fill(~in_sequence, float("-inf")), dim=1) - positive_logits
    per_batch = torch.logsumexp(logits.masked_fill(~in_batch, float("-inf")), dim=1) - positive_logits
    l_seq, l_batch = per_seq.mean(), per_batch.mean()
    loss = config.lambda_seq * l_seq + (1.0 - config.lambda_seq) * l_batch

    diagnostics = LossDiagnostics(
        l_seq=l_seq.detach().item(),
        l_batch=l_batch.detach().item(),
        per_triplet=[
            TripletDiagnostics(t.query_id, s, b, p * config.temperature)
            for t, s, b, p in zip(batch.triplets, per_seq.detach().tolist(), per_batch.detach().tolist(),
                                   positive_logits.detach().tolist())
        ],
    )
    return loss, diagnostics


class LossGradient(NamedTuple):
    grads: Dict[str, torch.Tensor]
    loss: float
    diagnostics: LossDiagnostics


def loss_gradient(build_batch: Callable[[EncoderParams], TrainingBatch], config: LossConfig, params: EncoderParams) -> LossGradient:
    """Gradient of insent_loss w.r.t. every encoder tensor, through pooling and scoring.

    `build_batch` runs the forward passes and pooling for the given parameters.
    """
    outputs = {}

    def loss_fn(p: EncoderParams) -> torch.Tensor:
        loss, diagnostics = insent_loss(build_batch(p), config)
        outputs["loss"], outputs["diagnostics"] = loss, diagnostics
        return loss

    grads = gradient(loss_fn, params)
    loss = float(outputs["loss"].detach())
    if loss != loss or loss in (float("inf"), float("-inf")):
        raise LossError("non-finite InSeNT loss")
    return LossGradient(grads, loss, outputs["diagnostics"])
