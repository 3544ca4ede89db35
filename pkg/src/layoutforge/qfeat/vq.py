"""Vector-quantized feature codebook for the 3D path.

A feature vector (dimension ``d_z``) is encoded into ``n_f`` latent vectors
by ``n_f`` learnable query tokens cross-attending to a tokenized projection
of the input. Each latent snaps to its nearest codebook entry; the decoder
runs self-attention over the ``n_f`` code vectors and average-pools them
back into a feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import nn

from .. import io
from ..errors import DivergedLoss, ValidationError


@dataclass
class Codebook:
    entries: np.ndarray  # (K_f, d_z)
    usage_counts: np.ndarray = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] < 2:
            raise ValidationError("a codebook needs at least 2 entries")
        if not np.all(np.isfinite(self.entries)):
            raise ValidationError("codebook entries must be finite")
        if self.usage_counts is None:
            self.usage_counts = np.zeros(self.entries.shape[0], dtype=np.int64)

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def lookup(self, idx) -> np.ndarray:
        return self.entries[np.asarray(idx)]


def vq_nearest(z, cb: Codebook):
    """Index of the nearest entry (Euclidean); ties go to the lowest index.

    ``z`` may carry leading batch dimensions.
    """
    z = np.asarray(z, dtype=np.float64)
    d = ((z[..., None, :] - cb.entries) ** 2).sum(-1)
    idx = np.argmin(d, axis=-1)
    return int(idx) if idx.ndim == 0 else idx


def nearest_torch(z: torch.Tensor, entries: torch.Tensor) -> torch.Tensor:
    d = ((z.unsqueeze(-2) - entries) ** 2).sum(-1)
    return d.argmin(-1)


def vq_losses(z: torch.Tensor, quantized: torch.Tensor):
    """``(codebook_loss, commitment_loss)``.

    Both have the value ``mean ||z - e||^2``; the codebook term only moves
    ``e`` and the commitment term only moves ``z``.
    """
    codebook_loss = ((z.detach() - quantized) ** 2).sum(-1).mean()
    commitment_loss = ((z - quantized.detach()) ** 2).sum(-1).mean()
    return codebook_loss, commitment_loss


def straight_through(z: torch.Tensor, quantized: torch.Tensor) -> torch.Tensor:
    """Forward value ``quantized``, gradient routed to ``z`` unchanged."""
    return z + (quantized - z).detach()


class _Block(nn.Module):
    def __init__(self, d: int, heads: int, cross: bool):
        super().__init__()
        self.cross = cross
        self.ln_q = nn.LayerNorm(d)
        self.ln_kv = nn.LayerNorm(d) if cross else None
        self.attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.ln_mlp = nn.LayerNorm(d)
        self.mlp = nn.Sequential(nn.Linear(d, 2 * d), nn.GELU(), nn.Linear(2 * d, d))

    def forward(self, x, kv=None):
        q = self.ln_q(x)
        kv = self.ln_kv(kv) if self.cross else q
        x = x + self.attn(q, kv, kv, need_weights=False)[0]
        return x + self.mlp(self.ln_mlp(x))


class VqEncoderDecoder(nn.Module):
    def __init__(self, d_z: int = 32, n_f: int = 4, d_model: int = 64, heads: int = 4,
                 n_tokens: int = 4, depth: int = 2):
        super().__init__()
        self.d_z, self.n_f, self.n_tokens, self.d_model = d_z, n_f, n_tokens, d_model
        self.tokenize = nn.Linear(d_z, n_tokens * d_model)
        self.token_pos = nn.Parameter(torch.randn(n_tokens, d_model) * 0.02)
        self.queries = nn.Parameter(torch.randn(n_f, d_model) * 0.02)
        self.enc = nn.ModuleList([_Block(d_model, heads, cross=True) for _ in range(depth)])
        self.enc_out = nn.Linear(d_model, d_z)
        self.dec_in = nn.Linear(d_z, d_model)
        self.slot_pos = nn.Parameter(torch.randn(n_f, d_model) * 0.02)
        self.dec = nn.ModuleList([_Block(d_model, heads, cross=False) for _ in range(depth)])
        self.dec_out = nn.Linear(d_model, d_z)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """(B, d_z) -> (B, n_f, d_z)."""
        B = x.shape[0]
        kv = self.tokenize(x).reshape(B, self.n_tokens, self.d_model) + self.token_pos
        h = self.queries.expand(B, -1, -1)
        for blk in self.enc:
            h = blk(h, kv)
        return self.enc_out(h)

    def decode(self, codes: torch.Tensor) -> torch.Tensor:
        """(B, n_f, d_z) -> (B, d_z) with average pooling over slots."""
        h = self.dec_in(codes) + self.slot_pos
        for blk in self.dec:
            h = blk(h)
        return self.dec_out(h).mean(1)


@dataclass
class VqConfig:
    K_f: int = 64
    n_f: int = 4
    d_model: int = 64
    heads: int = 4
    depth: int = 2
    steps: int = 1500
    batch_size: int = 128
    lr: float = 1e-3
    commitment_weight: float = 0.25
    dead_after: int = 100
    eval_every: int = 100
    seed: int = 0


@dataclass
class VqModel:
    net: VqEncoderDecoder
    codebook: Codebook
    history: list = field(default_factory=list)

    @torch.no_grad()
    def quantize(self, X) -> np.ndarray:
        """Feature vectors (N, d_z) -> code indices (N, n_f)."""
        self.net.eval()
        z = self.net.encode(torch.as_tensor(np.asarray(X), dtype=torch.float32))
        e = torch.as_tensor(self.codebook.entries, dtype=torch.float32)
        return nearest_torch(z, e).numpy().astype(np.int64)

    @torch.no_grad()
    def reconstruct(self, idx) -> np.ndarray:
        """Code indices (N, n_f) -> decoded feature vectors (N, d_z)."""
        self.net.eval()
        e = torch.as_tensor(self.codebook.entries, dtype=torch.float32)
        return self.net.decode(e[torch.as_tensor(np.asarray(idx))]).numpy().astype(np.float64)

    def reconstruction_error(self, X) -> float:
        X = np.asarray(X, dtype=np.float64)
        return float(np.mean((self.reconstruct(self.quantize(X)) - X) ** 2))

    def save(self, path_prefix) -> None:
        cfg = {"d_z": self.net.d_z, "n_f": self.net.n_f, "d_model": self.net.d_model,
               "heads": self.net.enc[0].attn.num_heads, "n_tokens": self.net.n_tokens,
               "depth": len(self.net.enc)}
        state = {k: v.detach().numpy() for k, v in self.net.state_dict().items()}
        io.save_checkpoint(f"{path_prefix}.lfnn", {"kind": "vq", "net": cfg}, state)
        io.atomic_write_bytes(
            f"{path_prefix}.lfvq",
            io.encode_codebook(self.codebook.entries, self.codebook.usage_counts, self.net.n_f),
        )

    @classmethod
    def load(cls, path_prefix) -> "VqModel":
        cfg, state = io.load_checkpoint(f"{path_prefix}.lfnn")
        net = VqEncoderDecoder(**cfg["net"])
        net.load_state_dict({k: torch.as_tensor(v) for k, v in state.items()})
        entries, usage, _ = io.decode_codebook(open(f"{path_prefix}.lfvq", "rb").read())
        return cls(net, Codebook(entries, usage.astype(np.int64)))


def train_vq(X, config: Optional[VqConfig] = None, X_val=None) -> VqModel:
    """Train encoder, decoder and codebook on feature vectors ``X`` (N, d_z).

    Loss: reconstruction MSE through the straight-through estimator, plus the
    codebook term and ``commitment_weight`` times the commitment term. The
    codebook is initialized from encoder outputs of the first batch; entries
    unused for ``dead_after`` consecutive steps are re-seeded to random
    latents of the current batch. ``history`` collects
    ``(step, train_loss, val_recon_mse)`` at every evaluation checkpoint.
    """
    cfg = config or VqConfig()
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 2 or len(X) < cfg.K_f:
        raise ValidationError(f"train_vq needs at least K_f={cfg.K_f} vectors of shape (N, d_z)")
    X_val = X if X_val is None else np.asarray(X_val, dtype=np.float32)
    g = torch.Generator().manual_seed(cfg.seed)
    torch.manual_seed(cfg.seed)
    net = VqEncoderDecoder(X.shape[1], cfg.n_f, cfg.d_model, cfg.heads, depth=cfg.depth)
    data = torch.as_tensor(X)
    N = len(data)
    bs = min(cfg.batch_size, N)

    with torch.no_grad():
        first = net.encode(data[torch.randperm(N, generator=g)[:bs]]).reshape(-1, X.shape[1])
        pick = torch.randint(0, first.shape[0], (cfg.K_f,), generator=g)
        entries = nn.Parameter(first[pick].clone())
    opt = torch.optim.Adam(list(net.parameters()) + [entries], lr=cfg.lr)
    last_used = torch.zeros(cfg.K_f, dtype=torch.long)
    usage = torch.zeros(cfg.K_f, dtype=torch.long)
    history = []

    def val_error():
        m = VqModel(net, Codebook(entries.detach().double().numpy()))
        err = m.reconstruction_error(X_val)
        net.train()
        return err

    for step in range(1, cfg.steps + 1):
        net.train()
        batch = data[torch.randint(0, N, (bs,), generator=g)]
        z = net.encode(batch)
        idx = nearest_torch(z.detach(), entries.detach())
        e = entries[idx]
        recon = net.decode(straight_through(z, e))
        rec_loss = ((recon - batch) ** 2).mean()
        cb_loss, commit = vq_losses(z, e)
        loss = rec_loss + cb_loss + cfg.commitment_weight * commit
        if not torch.isfinite(loss):
            raise DivergedLoss(f"VQ loss became non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()

        used = torch.unique(idx)
        last_used[used] = step
        usage += torch.bincount(idx.reshape(-1), minlength=cfg.K_f)
        dead = torch.nonzero(step - last_used >= cfg.dead_after).reshape(-1)
        if len(dead):
            flat = z.detach().reshape(-1, z.shape[-1])
            with torch.no_grad():
                entries[dead] = flat[torch.randint(0, flat.shape[0], (len(dead),), generator=g)]
            last_used[dead] = step
        if step % cfg.eval_every == 0 or step == cfg.steps:
            history.append((step, loss.item(), val_error()))

    model = VqModel(net, Codebook(entries.detach().double().numpy(), usage.numpy()), history)
    net.eval()
    return model
