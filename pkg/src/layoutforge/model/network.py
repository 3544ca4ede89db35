"""Graph transformer shared by the semantic prior and the layout decoder.

Each block runs FiLM-modulated graph self-attention (edge features scale
and shift the raw attention logits per head), an edge update from the
incident node pair, optional cross-attention to instruction tokens, and an
MLP. Every node sublayer is wrapped in an AdaLN driven by the timestep
embedding. Edges are kept for all ordered pairs; the lower triangle is the
upper triangle passed through the inverse-relation map.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..core import Vocabularies, triangle_indices
from ..errors import ValidationError


@dataclass
class GraphTransformerConfig:
    depth: int = 4
    d: int = 128
    heads: int = 4
    d_e: int = 32
    d_y: int = 64
    variant: str = "prior"
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.d % self.heads:
            raise ValidationError("model width d must be divisible by heads")
        if self.variant not in ("prior", "decoder"):
            raise ValidationError(f"unknown network variant {self.variant!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal(pos: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = pos.to(torch.float64).unsqueeze(-1) * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


class AdaLN(nn.Module):
    """``LN(x) * (1 + scale(c)) + shift(c)`` with zero-initialized modulation."""

    def __init__(self, d: int, d_cond: int):
        super().__init__()
        self.norm = nn.LayerNorm(d, elementwise_affine=False)
        self.mod = nn.Linear(d_cond, 2 * d)
        nn.init.zeros_(self.mod.weight)
        nn.init.zeros_(self.mod.bias)

    def forward(self, x, c):
        scale, shift = self.mod(c).unsqueeze(1).chunk(2, dim=-1)
        return self.norm(x) * (1 + scale) + shift


class FilmGraphAttention(nn.Module):
    def __init__(self, d: int, heads: int, d_e: int):
        super().__init__()
        self.h = heads
        self.dh = d // heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.film_s = nn.Linear(d_e, heads)
        self.film_b = nn.Linear(d_e, heads)

    def forward(self, x, e):
        B, N, d = x.shape
        q, k, v = self.qkv(x).reshape(B, N, 3, self.h, self.dh).permute(2, 0, 3, 1, 4)
        a = q @ k.transpose(-1, -2) / math.sqrt(self.dh)  # (B, h, N, N)
        s = self.film_s(e).permute(0, 3, 1, 2)
        b = self.film_b(e).permute(0, 3, 1, 2)
        a = a * (1 + s) + b
        y = torch.softmax(a, dim=-1) @ v
        return self.out(y.transpose(1, 2).reshape(B, N, d))


class EdgeUpdate(nn.Module):
    """Two-layer map of ``(h_i, h_j, e_ij)`` added residually to ``e_ij``."""

    def __init__(self, d: int, d_e: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_e)
        self.wi = nn.Linear(d, d_e)
        self.wj = nn.Linear(d, d_e, bias=False)
        self.we = nn.Linear(d_e, d_e, bias=False)
        self.out = nn.Linear(d_e, d_e)

    def forward(self, h, e):
        z = self.wi(h).unsqueeze(2) + self.wj(h).unsqueeze(1) + self.we(self.norm(e))
        return e + self.out(nn.functional.gelu(z))


class Block(nn.Module):
    def __init__(self, cfg: GraphTransformerConfig, cross: bool):
        super().__init__()
        d = cfg.d
        self.ln_attn = AdaLN(d, d)
        self.attn = FilmGraphAttention(d, cfg.heads, cfg.d_e)
        self.edge = EdgeUpdate(d, cfg.d_e)
        self.cross = None
        if cross:
            self.ln_cross = AdaLN(d, d)
            self.cross = nn.MultiheadAttention(d, cfg.heads, kdim=cfg.d_y, vdim=cfg.d_y, batch_first=True)
        self.ln_mlp = AdaLN(d, d)
        self.mlp = nn.Sequential(nn.Linear(d, cfg.mlp_ratio * d), nn.GELU(), nn.Linear(cfg.mlp_ratio * d, d))

    def forward(self, x, e, c, y=None, y_pad=None):
        h = self.ln_attn(x, c)
        x = x + self.attn(h, e)
        e = self.edge(h, e)
        if self.cross is not None:
            q = self.ln_cross(x, c)
            x = x + self.cross(q, y, y, key_padding_mask=y_pad, need_weights=False)[0]
        x = x + self.mlp(self.ln_mlp(x, c))
        return x, e


class GraphDenoiser(nn.Module):
    """Prior (``variant="prior"``) or decoder (``variant="decoder"``) network.

    Prior inputs: soft/one-hot ``C`` (B, N, K_c+2), ``F`` (B, N, n_f, K_f+2),
    ``E`` (B, S, K_e+2), normalized time ``t`` in (0, 1], condition tokens
    ``y`` (B, T_y, d_y) with padding mask. Outputs clean-graph logits without
    a MASK class. Decoder inputs add the noisy spatial matrix ``L`` (B, N,
    d_l) and a protected-region vector (B, 5); output is the predicted noise.
    """

    def __init__(self, cfg: GraphTransformerConfig, vocab: Vocabularies):
        super().__init__()
        self.cfg, self.vocab = cfg, vocab
        N, d = vocab.N_max, cfg.d
        self.w_c = vocab.K_c + 2
        self.w_f = vocab.K_f + 2
        self.w_e = vocab.K_e + 2
        self.embed_c = nn.Linear(self.w_c, d)
        self.embed_f = nn.Linear(vocab.n_f * self.w_f, d)
        self.embed_e = nn.Linear(self.w_e, cfg.d_e)
        if cfg.variant == "decoder":
            self.embed_l = nn.Linear(vocab.d_l + 5, d)
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.blocks = nn.ModuleList([Block(cfg, cross=cfg.variant == "prior") for _ in range(cfg.depth)])
        self.final = AdaLN(d, d)
        if cfg.variant == "prior":
            self.head_c = nn.Linear(d, vocab.K_c + 1)
            self.head_f = nn.Linear(d, vocab.n_f * (vocab.K_f + 1))
            self.edge_final = EdgeUpdate(d, cfg.d_e)
            self.head_e = nn.Linear(cfg.d_e, vocab.K_e + 1)
        else:
            self.head_eps = nn.Linear(d, vocab.d_l)

        self.register_buffer("pe", sinusoidal(torch.arange(N), d).to(torch.float32), persistent=False)
        iu, ju = triangle_indices(N)
        S = len(iu)
        idx = np.full((N, N), 2 * S, dtype=np.int64)
        idx[iu, ju] = np.arange(S)
        idx[ju, iu] = S + np.arange(S)
        self.register_buffer("pair_index", torch.as_tensor(idx.reshape(-1)), persistent=False)
        self.register_buffer("inv_perm", torch.as_tensor(vocab.inverse_map()), persistent=False)
        self.register_buffer("iu", torch.as_tensor(iu), persistent=False)
        self.register_buffer("ju", torch.as_tensor(ju), persistent=False)

    # -- helpers ---------------------------------------------------------
    def full_edges(self, E: torch.Tensor) -> torch.Tensor:
        """(B, S, K_e+2) slots -> (B, N, N, K_e+2) ordered-pair states."""
        B, S, W = E.shape
        N = self.vocab.N_max
        stacked = torch.cat([E, E[..., self.inv_perm], torch.zeros_like(E[:, :1])], dim=1)
        return stacked[:, self.pair_index].reshape(B, N, N, W)

    def time_embedding(self, t: torch.Tensor, dtype) -> torch.Tensor:
        return self.time_mlp(sinusoidal(t * 1000.0, self.cfg.d).to(dtype))

    def trunk(self, x, E, t, y=None, y_pad=None, pe_scale: float = 1.0):
        """Shared body: ``x`` are token embeddings before positional encoding."""
        x = x + pe_scale * self.pe.to(x.dtype)
        e = self.embed_e(self.full_edges(E))
        c = self.time_embedding(t, x.dtype)
        c_act = nn.functional.silu(c)
        for blk in self.blocks:
            x, e = blk(x, e, c_act, y, y_pad)
        return self.final(x, c_act), e

    # -- variants --------------------------------------------------------
    def forward(self, *args, **kw):
        if self.cfg.variant == "prior":
            return self.prior_forward(*args, **kw)
        return self.decoder_forward(*args, **kw)

    def node_tokens(self, C, F):
        B, N = C.shape[:2]
        return self.embed_c(C) + self.embed_f(F.reshape(B, N, -1))

    def prior_forward(self, C, F, E, t, y, y_pad=None, pe_scale: float = 1.0) -> dict:
        v = self.vocab
        x = self.node_tokens(C, F)
        h, e = self.trunk(x, E, t, y, y_pad, pe_scale)
        B, N = C.shape[:2]
        e = self.edge_final(h, e)
        return {
            "C": self.head_c(h),
            "F": self.head_f(h).reshape(B, N, v.n_f, v.K_f + 1),
            "E": self.head_e(e[:, self.iu, self.ju]),
        }

    def decoder_forward(self, L, t, C, F, E, region, pe_scale: float = 1.0) -> torch.Tensor:
        B, N = C.shape[:2]
        inp = torch.cat([L, region.unsqueeze(1).expand(B, N, region.shape[-1])], dim=-1)
        x = self.node_tokens(C, F) + self.embed_l(inp)
        h, _ = self.trunk(x, E, t, pe_scale=pe_scale)
        return self.head_eps(h)


def build_network(cfg: GraphTransformerConfig, vocab: Vocabularies, seed: int = 0) -> GraphDenoiser:
    torch.manual_seed(seed)
    return GraphDenoiser(cfg, vocab)


def one_hot_inputs(C, F, E, vocab: Vocabularies, dtype=torch.float32):
    """Index tensors -> one-hot network inputs of widths K + 2."""
    oh = nn.functional.one_hot
    return (
        oh(C, vocab.K_c + 2).to(dtype),
        oh(F, vocab.K_f + 2).to(dtype),
        oh(E, vocab.K_e + 2).to(dtype),
    )


def region_vector(product_region, bounds, dtype=torch.float32) -> torch.Tensor:
    """Protected region normalized to [-1, 1] plus a presence flag (zeros if absent)."""
    if product_region is None:
        return torch.zeros(5, dtype=dtype)
    x0, y0, x1, y1 = product_region
    W, H = bounds[0], bounds[1]
    return torch.tensor([2 * x0 / W - 1, 2 * y0 / H - 1, 2 * x1 / W - 1, 2 * y1 / H - 1, 1.0], dtype=dtype)
