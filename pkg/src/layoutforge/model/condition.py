"""Deterministic instruction embedding and the synthetic feature space.

One fixed table of random unit vectors serves two roles: it embeds
instruction triplets and style tags into condition tokens, and its category
and style rows define where the toy data puts object feature vectors
(``class + style + noise``), so stylization can be scored against the same
directions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from ..core import Instruction

TABLE_SEED = 7321
N_STYLES = 3
MAX_CATEGORIES = 64


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Fixed unit embeddings; the last row of every block is the null entry."""

    dim: int
    category: np.ndarray  # (MAX_CATEGORIES + 1, dim)
    relation: np.ndarray  # (12, dim)
    style: np.ndarray  # (N_STYLES + 1, dim)
    projection: np.ndarray  # (4 * dim, d_y)

    @property
    def d_y(self) -> int:
        return self.projection.shape[1]

    def class_vector(self, c: int) -> np.ndarray:
        return self.category[c]

    def style_vector(self, s: int) -> np.ndarray:
        return self.style[s]


@lru_cache(maxsize=8)
def embedding_table(dim: int = 32, d_y: int = 64, seed: int = TABLE_SEED) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    cat = _unit_rows(rng, MAX_CATEGORIES + 1, dim)
    rel = _unit_rows(rng, 12, dim)
    sty = _unit_rows(rng, N_STYLES + 1, dim)
    proj = rng.standard_normal((4 * dim, d_y)) / np.sqrt(4 * dim)
    for a in (cat, rel, sty, proj):
        a.setflags(write=False)
    return EmbeddingTable(dim, cat, rel, sty, proj)


@dataclass(frozen=True, eq=False)
class ConditionEmbedding:
    tokens: np.ndarray  # (n_tokens, d_y)
    is_null: bool

    def __eq__(self, other):
        return (
            isinstance(other, ConditionEmbedding)
            and self.is_null == other.is_null
            and np.array_equal(self.tokens, other.tokens)
        )


def condition_encode(instr: Instruction, vocab=None, table: EmbeddingTable | None = None) -> ConditionEmbedding:
    """One token per triplet and per style tag; empty instruction -> one zero token.

    Triplet token: ``P [e_subj, e_rel, e_obj, e_null_style]``; style token:
    ``P [e_cat, e_null_rel, e_null_cat, e_style]`` with the fixed projection
    ``P``.
    """
    table = table or embedding_table()
    if instr is None or instr.is_empty:
        return ConditionEmbedding(np.zeros((1, table.d_y)), True)
    null_c, null_r, null_s = MAX_CATEGORIES, 11, N_STYLES
    rows = []
    for tr in instr.triplets:
        rows.append(
            np.concatenate(
                [table.category[tr.subject], table.relation[tr.relation],
                 table.category[tr.object], table.style[null_s]]
            )
        )
    for c, s in instr.style_tags:
        rows.append(
            np.concatenate(
                [table.category[c], table.relation[null_r], table.category[null_c], table.style[s]]
            )
        )
    return ConditionEmbedding(np.stack(rows) @ table.projection, False)


def null_condition(table: EmbeddingTable | None = None) -> ConditionEmbedding:
    table = table or embedding_table()
    return ConditionEmbedding(np.zeros((1, table.d_y)), True)


def batch_conditions(conds, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad condition tokens to ``(B, T_max, d_y)`` plus a padding mask (True = pad)."""
    T = max(c.tokens.shape[0] for c in conds)
    d_y = conds[0].tokens.shape[1]
    out = torch.zeros(len(conds), T, d_y, dtype=dtype)
    pad = torch.ones(len(conds), T, dtype=torch.bool)
    for b, c in enumerate(conds):
        n = c.tokens.shape[0]
        out[b, :n] = torch.as_tensor(c.tokens, dtype=dtype)
        pad[b, :n] = False
    return out, pad
