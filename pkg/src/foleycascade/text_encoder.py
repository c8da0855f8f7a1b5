"""Small trainable text encoder standing in for a pre-trained language model.

Token embedding + learned positions, then two pre-norm self-attention blocks.
Trained jointly with the low-resolution generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import Tensor, nn

from .errors import DimensionError, TokenizationError
from .prompts import NULL, PAD, PromptCorpus, PromptRecord
from .tensor import ops
from .tensor.layers import LayerNorm, Linear


@dataclass
class TokenBatch:
    ids: Tensor  # [N, T] long
    mask: Tensor  # [N, T] bool, True on real tokens
    is_null: Tensor  # [N] bool

    def __len__(self) -> int:
        return self.ids.shape[0]

    @classmethod
    def from_lists(cls, seqs: Sequence[Sequence[int]], pad_id: int = 0, null_id: int = 1) -> "TokenBatch":
        width = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), width), pad_id, dtype=torch.long)
        mask = torch.zeros((len(seqs), width), dtype=torch.bool)
        for i, s in enumerate(seqs):
            if not s:
                raise TokenizationError("empty token sequence")
            ids[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
            mask[i, : len(s)] = True
        is_null = torch.tensor([list(s) == [null_id] for s in seqs], dtype=torch.bool)
        return cls(ids, mask, is_null)

    @classmethod
    def from_records(cls, records: Sequence[PromptRecord], corpus: PromptCorpus) -> "TokenBatch":
        return cls.from_lists([r.tokens for r in records], corpus.index[PAD], corpus.index[NULL])

    @classmethod
    def null(cls, n: int, corpus: PromptCorpus) -> "TokenBatch":
        return cls.from_lists([[corpus.index[NULL]]] * n, corpus.index[PAD], corpus.index[NULL])

    def drop(self, keep: Tensor, null_id: int = 1) -> "TokenBatch":
        """Replace rows where ``keep`` is False with the null sequence."""
        ids = self.ids.clone()
        mask = self.mask.clone()
        ids[~keep] = 0
        mask[~keep] = False
        ids[~keep, 0] = null_id
        mask[~keep, 0] = True
        return TokenBatch(ids, mask, self.is_null | ~keep)

    def cat(self, other: "TokenBatch") -> "TokenBatch":
        width = max(self.ids.shape[1], other.ids.shape[1])

        def pad(t: Tensor, fill) -> Tensor:
            return torch.nn.functional.pad(t, (0, width - t.shape[1]), value=fill)

        return TokenBatch(
            torch.cat([pad(self.ids, 0), pad(other.ids, 0)]),
            torch.cat([pad(self.mask, False), pad(other.mask, False)]),
            torch.cat([self.is_null, other.is_null]),
        )


@dataclass
class ConditioningBundle:
    text_tokens: Tensor  # [N, T, D]
    pooled: Tensor  # [N, D]
    mask: Tensor  # [N, T]
    is_null: Tensor  # [N]


class SelfAttentionBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.qkv = Linear(dim, 3 * dim)
        self.out = Linear(dim, dim)
        self.norm2 = LayerNorm(dim)
        self.mlp_in = Linear(dim, 2 * dim)
        self.mlp_out = Linear(2 * dim, dim)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        x = x + self.out(ops.attention(q, k, v, key_mask=mask))
        return x + self.mlp_out(ops.silu(self.mlp_in(self.norm2(x))))


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int, dim: int = 64, layers: int = 2, max_len: int = 24):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.embed = nn.Parameter(torch.randn(vocab_size, dim) * 0.5)
        self.pos = nn.Parameter(torch.randn(max_len, dim) * 0.1)
        self.blocks = nn.ModuleList(SelfAttentionBlock(dim) for _ in range(layers))
        self.norm = LayerNorm(dim)

    def forward(self, batch: TokenBatch) -> ConditioningBundle:
        ids = batch.ids
        if ids.shape[1] > self.max_len:
            raise DimensionError(f"prompt of {ids.shape[1]} tokens exceeds max_len {self.max_len}")
        if ids.device.type != "meta" and ((ids < 0).any() or (ids >= self.vocab_size).any()):
            bad = ids[(ids < 0) | (ids >= self.vocab_size)][0].item()
            raise TokenizationError(f"token id {bad} outside vocabulary of {self.vocab_size}")
        x = self.embed[ids] + self.pos[: ids.shape[1]]
        for block in self.blocks:
            x = block(x, batch.mask)
        x = self.norm(x)
        m = batch.mask.to(x.dtype)[..., None]
        pooled = (x * m).sum(1) / m.sum(1).clamp_min(1.0)
        return ConditioningBundle(x, pooled, batch.mask, batch.is_null)
