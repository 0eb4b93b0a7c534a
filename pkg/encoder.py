"""
Toy bidirectional transformer encoder producing token-level hidden states.

Documents are encoded as a single sequence `[DOC] c1 [SEP] c2 ... [SEP] cN` so that pooling can
later cut the hidden states back into chunks. Parameters are 64-bit torch tensors and gradients come
from torch autograd.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from core import ContextEmbError, Document
from utils import philox, sha256_hex

LOG = logging.getLogger(__name__)

PAD_ID = 0
SEP_ID = 1
QRY_ID = 2
DOC_ID = 3
N_RESERVED = 4

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK_64 = 0xFFFFFFFFFFFFFFFF

TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")
CHECKPOINT_FORMAT = "contextemb-checkpoint"
CHECKPOINT_VERSION = 1
INIT_STD = 0.02
# sinusoids have unit amplitude; this keeps them well below the token embeddings
POSITIONAL_SCALE = 0.25 * INIT_STD
LAYER_NORM_EPS = 1e-5


class EncoderError(ContextEmbError, ValueError):
    module = "encoder"


class SequenceTooLongError(EncoderError):
    def __init__(self, required: int, max_len: int, owner: str = ""):
        self.required = required
        self.max_len = max_len
        where = f" for {owner}" if owner else ""
        super().__init__(f"sequence{where} needs {required} tokens but max_seq_len is {max_len}")


class NonFiniteError(EncoderError):
    pass


def fnv1a_64(data: bytes) -> int:
    value = FNV_OFFSET
    for byte in data:
        value ^= byte
        value = (value * FNV_PRIME) & MASK_64
    return value


@lru_cache(maxsize=1 << 16)
def _bucket(token: str, hash_vocab_size: int) -> int:
    return N_RESERVED + fnv1a_64(token.encode("utf-8")) % hash_vocab_size


@dataclass(frozen=True)
class Tokenizer:
    vocab_size: int = 4096
    lowercase: bool = True

    def __post_init__(self):
        if self.vocab_size <= N_RESERVED:
            raise EncoderError(f"vocab_size must exceed the {N_RESERVED} reserved ids, got {self.vocab_size}")

    @property
    def hash_vocab_size(self) -> int:
        return self.vocab_size - N_RESERVED

    def tokenize(self, text: str) -> List[str]:
        if self.lowercase:
            text = text.lower()
        return TOKEN_PATTERN.findall(text)

    def token_id(self, token: str) -> int:
        if not token:
            raise EncoderError("cannot hash an empty token")
        return _bucket(token, self.hash_vocab_size)

    def encode(self, text: str) -> List[int]:
        return [self.token_id(token) for token in self.tokenize(text)]


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    heads: int = 4
    layers: int = 2
    ffn_mult: int = 4
    max_seq_len: int = 2048
    positional: str = "sinusoidal"
    vocab_size: int = 4096
    seed: int = 0
    lowercase: bool = True

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise EncoderError(f"dim ({self.dim}) must be a positive multiple of heads ({self.heads})")
        if self.layers < 0 or self.ffn_mult < 1:
            raise EncoderError("layers must be >= 0 and ffn_mult >= 1")
        if self.max_seq_len < 2:
            raise EncoderError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if self.positional not in ("sinusoidal", "none"):
            raise EncoderError(f"positional must be 'sinusoidal' or 'none', got {self.positional!r}")
        Tokenizer(self.vocab_size, self.lowercase)

    @property
    def tokenizer(self) -> Tokenizer:
        return Tokenizer(self.vocab_size, self.lowercase)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "EncoderConfig":
        return cls(**values)


@dataclass(frozen=True)
class TokenSequence:
    ids: Tuple[int, ...]
    chunk_token_spans: Tuple[Tuple[int, int], ...]
    special_positions: FrozenSet[int]
    owner: str = ""
    first_chunk: int = 0

    def __len__(self):
        return len(self.ids)


def _build_sequence(prefix_id: int, pieces: Sequence[List[int]], max_seq_len: int, owner: str, first_chunk: int = 0) -> TokenSequence:
    ids = [prefix_id]
    specials = {0}
    spans = []
    for i, piece in enumerate(pieces):
        if i:
            specials.add(len(ids))
            ids.append(SEP_ID)
        spans.append((len(ids), len(ids) + len(piece)))
        ids.extend(piece)
    if len(ids) > max_seq_len:
        raise SequenceTooLongError(len(ids), max_seq_len, owner)
    return TokenSequence(tuple(ids), tuple(spans), frozenset(specials), owner, first_chunk)


def chunk_token_ids(doc: Document, tokenizer: Tokenizer) -> List[List[int]]:
    return [tokenizer.encode(doc.chunk_text(i)) for i in range(len(doc.chunks))]


def sequence_length(token_counts: Sequence[int]) -> int:
    """Length of `[DOC] c1 [SEP] ... cN` for chunks with the given token counts."""
    return 1 + sum(token_counts) + max(len(token_counts) - 1, 0)


def encode_chunk_sequence(doc: Document, chunk_indices: range, config: EncoderConfig,
                          token_ids: Optional[List[List[int]]] = None) -> TokenSequence:
    token_ids = token_ids if token_ids is not None else chunk_token_ids(doc, config.tokenizer)
    pieces = [token_ids[i] for i in chunk_indices]
    return _build_sequence(DOC_ID, pieces, config.max_seq_len, doc.doc_id, chunk_indices.start)


def encode_document_sequence(doc: Document, config: EncoderConfig,
                             token_ids: Optional[List[List[int]]] = None) -> TokenSequence:
    return encode_chunk_sequence(doc, range(len(doc.chunks)), config, token_ids)


def encode_query_sequence(text: str, config: EncoderConfig, owner: str = "") -> TokenSequence:
    return _build_sequence(QRY_ID, [config.tokenizer.encode(text)], config.max_seq_len, owner)


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, ffn_mult: int):
        super().__init__()

        def tensor(*shape):
            return nn.Parameter(torch.empty(*shape, dtype=torch.float64))

        self.wq = tensor(dim, dim)
        self.wk = tensor(dim, dim)
        self.wv = tensor(dim, dim)
        self.wo = tensor(dim, dim)
        self.ln1_scale = tensor(dim)
        self.ln1_offset = tensor(dim)
        self.ffn_in = tensor(dim, ffn_mult * dim)
        self.ffn_out = tensor(ffn_mult * dim, dim)
        self.ln2_scale = tensor(dim)
        self.ln2_offset = tensor(dim)

    def forward(self, x: torch.Tensor, heads: int) -> torch.Tensor:
        length, dim = x.shape
        head_dim = dim // heads

        def split_heads(t):
            return t.view(length, heads, head_dim).transpose(0, 1)

        q, k, v = split_heads(x @ self.wq), split_heads(x @ self.wk), split_heads(x @ self.wv)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(head_dim), dim=-1)
        attended = (weights @ v).transpose(0, 1).reshape(length, dim) @ self.wo
        x = F.layer_norm(x + attended, (dim,), self.ln1_scale, self.ln1_offset, LAYER_NORM_EPS)
        hidden = F.gelu(x @ self.ffn_in) @ self.ffn_out
        return F.layer_norm(x + hidden, (dim,), self.ln2_scale, self.ln2_offset, LAYER_NORM_EPS)


class EncoderParams(nn.Module):
    """All trainable tensors of the encoder."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.embedding = nn.Parameter(torch.empty(config.vocab_size, config.dim, dtype=torch.float64))
        self.layers = nn.ModuleList(EncoderLayer(config.dim, config.ffn_mult) for _ in range(config.layers))

    @torch.no_grad()
    def reset_parameters(self) -> "EncoderParams":
        for name, param in self.named_parameters():
            if name.endswith("_scale"):
                param.fill_(1.0)
            elif name.endswith("_offset"):
                param.zero_()
            else:
                values = philox(self.config.seed, "init", name).normal(0.0, INIT_STD, size=tuple(param.shape))
                param.copy_(torch.from_numpy(values))
        return self

    def checksum(self) -> str:
        def blobs():
            for name, param in self.named_parameters():
                yield name.encode("utf-8")
                yield param.detach().cpu().contiguous().numpy().tobytes()

        return sha256_hex(blobs())

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all()) for p in self.parameters())


def init_params(config: EncoderConfig) -> EncoderParams:
    return EncoderParams(config).reset_parameters()


@lru_cache(maxsize=64)
def _sinusoidal(length: int, dim: int) -> torch.Tensor:
    positions = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    rates = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(positions * rates)
    table[:, 1::2] = torch.cos(positions * rates)[:, : dim // 2]
    return table


def forward(seq: TokenSequence, params: EncoderParams, config: Optional[EncoderConfig] = None) -> torch.Tensor:
    """Hidden states H (T x dim) for one token sequence."""
    config = config or params.config
    if len(seq) > config.max_seq_len:
        raise SequenceTooLongError(len(seq), config.max_seq_len, seq.owner)
    ids = torch.tensor(seq.ids, dtype=torch.long)
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= config.vocab_size):
        raise EncoderError(f"token id out of range [0, {config.vocab_size}) in {seq.owner or 'sequence'}")

    hidden = params.embedding[ids]
    if config.positional == "sinusoidal":
        hidden = hidden + POSITIONAL_SCALE * _sinusoidal(len(seq), config.dim).to(hidden.dtype)
    for layer in params.layers:
        hidden = layer(hidden, config.heads)

    if not bool(torch.isfinite(hidden).all()):
        raise NonFiniteError(f"non-finite hidden state for {seq.owner or 'sequence'}; parameters have diverged")
    return hidden


def gradient(loss_fn: Callable[[EncoderParams], torch.Tensor], params: EncoderParams) -> Dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar loss w.r.t. every trainable tensor, keyed by name."""
    named = list(params.named_parameters())
    loss = loss_fn(params)
    if not torch.is_tensor(loss) or not loss.requires_grad:
        return {name: torch.zeros_like(p) for name, p in named}

    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    result = {}
    for (name, param), grad in zip(named, grads):
        grad = torch.zeros_like(param) if grad is None else grad
        if not bool(torch.isfinite(grad).all()):
            raise NonFiniteError(f"non-finite gradient for {name}")
        result[name] = grad
    return result


def save_checkpoint(path, params: EncoderParams, metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "state": {name: t.detach().clone() for name, t in params.state_dict().items()},
        "metadata": metadata or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> EncoderParams:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except (OSError, RuntimeError) as e:
        raise EncoderError(f"cannot load checkpoint {path}: {e}") from e
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise EncoderError(f"{path} is not a checkpoint of this encoder")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise EncoderError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    params = EncoderParams(EncoderConfig.from_dict(payload["config"]))
    params.load_state_dict(payload["state"])
    return params
