"""Training loops for the semantic prior and the layout decoder.

Each step draws a batch, applies a fresh random node permutation to every
graph (consistently to C, F, E and the spatial rows), samples timesteps
uniformly, evaluates the categorical bound (prior) or the noise-prediction
loss (decoder) and takes one Adam step with gradient-norm clipping.
"""

from __future__ import annotations

import csv
import io as _pyio
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .. import dcat, dgauss, io
from ..core import Vocabularies, triangle_indices
from ..errors import DivergedLoss, ValidationError
from .condition import batch_conditions, condition_encode
from .network import GraphDenoiser, GraphTransformerConfig, build_network, one_hot_inputs, region_vector


@dataclass
class GraphBatch:
    """Index tensors for a set of training samples (leading axis = sample)."""

    C: torch.Tensor  # (B, N) long
    F: torch.Tensor  # (B, N, n_f) long
    E: torch.Tensor  # (B, S) long
    L: torch.Tensor  # (B, N, d_l) float
    empty: torch.Tensor  # (B, N) bool
    region: torch.Tensor  # (B, 5) float
    y: torch.Tensor  # (B, T_y, d_y) float
    y_pad: torch.Tensor  # (B, T_y) bool

    def __len__(self):
        return self.C.shape[0]

    def take(self, idx) -> "GraphBatch":
        return GraphBatch(*(getattr(self, k)[idx] for k in self.__dataclass_fields__))


def prepare_dataset(corpus: Sequence, vocab: Vocabularies) -> GraphBatch:
    """Stack toy samples (objects with ``layout``, ``graph``, ``instruction``)."""
    if not corpus:
        raise ValidationError("training needs a non-empty dataset")
    C, F, E, L, empty, region, conds = [], [], [], [], [], [], []
    for s in corpus:
        g = s.graph
        C.append(g.C)
        F.append(g.F)
        E.append(g.E)
        Lm, em = dgauss.encode_spatial(s.layout, vocab)
        L.append(Lm)
        empty.append(em)
        region.append(region_vector(s.layout.product_region, s.layout.bounds))
        conds.append(condition_encode(s.instruction, vocab))
    y, y_pad = batch_conditions(conds)
    return GraphBatch(
        torch.as_tensor(np.stack(C)),
        torch.as_tensor(np.stack(F)),
        torch.as_tensor(np.stack(E)),
        torch.as_tensor(np.stack(L), dtype=torch.float32),
        torch.as_tensor(np.stack(empty)),
        torch.stack(region),
        y,
        y_pad,
    )


class Permuter:
    """Applies per-sample node permutations to index graphs and spatial rows."""

    def __init__(self, vocab: Vocabularies):
        N = vocab.N_max
        iu, ju = triangle_indices(N)
        slot = np.zeros((N, N), dtype=np.int64)
        slot[iu, ju] = np.arange(len(iu))
        slot[ju, iu] = np.arange(len(iu))
        self.N = N
        self.iu, self.ju = torch.as_tensor(iu), torch.as_tensor(ju)
        self.slot = torch.as_tensor(slot)
        self.inv = torch.as_tensor(vocab.inverse_map())

    def random(self, B: int, generator) -> torch.Tensor:
        return torch.argsort(torch.rand(B, self.N, generator=generator), dim=-1)

    def apply(self, batch: GraphBatch, perm: torch.Tensor) -> GraphBatch:
        rows = torch.arange(len(batch)).unsqueeze(-1)
        pk, pl = perm[:, self.iu], perm[:, self.ju]
        lab = batch.E.gather(1, self.slot[torch.minimum(pk, pl), torch.maximum(pk, pl)])
        lab = torch.where(pk > pl, self.inv[lab], lab)
        return GraphBatch(
            batch.C[rows, perm], batch.F[rows, perm], lab, batch.L[rows, perm],
            batch.empty[rows, perm], batch.region, batch.y, batch.y_pad,
        )


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 3e-4
    grad_clip: float = 1.0
    cond_dropout: float = 0.1
    permute: bool = True
    seed: int = 0
    log_every: int = 50
    checkpoint_every_epochs: int = 0  # 0: only the final checkpoint
    # prior objective
    T: int = 100
    eta_c: float = 0.05
    eta_f: float = 0.05
    eta_e: float = 0.05
    variant: str = "independent-mask"
    lambda_f: float = 1.0
    lambda_e: float = 1.0
    lambda_aux: float = 0.01
    # decoder objective
    T_dec: int = 10
    dec_schedule: str = "cosine"

    def to_dict(self) -> dict:
        return asdict(self)


def graph_schedule(cfg: TrainConfig, vocab: Vocabularies, T: Optional[int] = None) -> dcat.GraphSchedule:
    return dcat.build_graph_schedule(T or cfg.T, vocab, cfg.eta_c, cfg.eta_f, cfg.eta_e, cfg.variant)


@dataclass
class PriorModel:
    net: GraphDenoiser
    vocab: Vocabularies
    train: TrainConfig
    log: list = field(default_factory=list)

    def schedule(self, T: Optional[int] = None) -> dcat.GraphSchedule:
        return graph_schedule(self.train, self.vocab, T)

    def save(self, path) -> None:
        _save(path, "prior", self)

    @classmethod
    def load(cls, path) -> "PriorModel":
        return _load(path, cls)


@dataclass
class DecoderModel:
    net: GraphDenoiser
    vocab: Vocabularies
    train: TrainConfig
    log: list = field(default_factory=list)

    def schedule(self, T_dec: Optional[int] = None) -> dgauss.GaussianSchedule:
        return dgauss.make_schedule(T_dec or self.train.T_dec, self.train.dec_schedule)

    def save(self, path) -> None:
        _save(path, "decoder", self)

    @classmethod
    def load(cls, path) -> "DecoderModel":
        return _load(path, cls)


def network_state(net: torch.nn.Module) -> dict:
    return {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}


def _save(path, kind, model) -> None:
    config = {
        "kind": kind,
        "vocab": model.vocab.to_dict(),
        "net": model.net.cfg.to_dict(),
        "train": model.train.to_dict(),
    }
    io.save_checkpoint(path, config, network_state(model.net))


def _load(path, cls):
    config, tensors = io.load_checkpoint(path)
    vocab = Vocabularies.from_dict(config["vocab"])
    net = GraphDenoiser(GraphTransformerConfig(**config["net"]), vocab)
    net.load_state_dict({k: torch.as_tensor(v) for k, v in tensors.items()})
    net.eval()
    return cls(net, vocab, TrainConfig(**config["train"]))


# --------------------------------------------------------------------------
# losses


def drop_conditions(batch: GraphBatch, p: float, generator) -> tuple[torch.Tensor, torch.Tensor]:
    """Replace a random fraction ``p`` of condition sets by the single zero token."""
    if p <= 0:
        return batch.y, batch.y_pad
    drop = torch.rand(len(batch), generator=generator) < p
    y = torch.where(drop[:, None, None], torch.zeros_like(batch.y), batch.y)
    pad = batch.y_pad.clone()
    pad[drop] = True
    pad[drop, 0] = False
    return y, pad


def gaussian_onehot_schedule(T: int) -> dgauss.GaussianSchedule:
    return dgauss.cosine_schedule(T)


def _onehot_signal(x: torch.Tensor, K: int) -> torch.Tensor:
    return 2.0 * torch.nn.functional.one_hot(x, K).to(torch.float32) - 1.0


def prior_loss(net: GraphDenoiser, batch: GraphBatch, t: torch.Tensor, gs: dcat.GraphSchedule,
               cfg: TrainConfig, generator=None, y=None, y_pad=None):
    """Bound loss of one batch at per-sample timesteps ``t`` (B,)."""
    v = net.vocab
    y = batch.y if y is None else y
    y_pad = batch.y_pad if y_pad is None else y_pad
    G0 = {"C": batch.C, "F": batch.F, "E": batch.E}
    dtype = next(net.parameters()).dtype
    tn = t.to(dtype) / gs.T
    if gs.variant == "gaussian-onehot":
        # one-hot rows as +-1 signals, Gaussian-noised; trained with clean-state CE
        sched = gaussian_onehot_schedule(gs.T)
        ins, parts, total = [], {}, 0.0
        for name, K in (("C", v.K_c + 1), ("F", v.K_f + 1), ("E", v.K_e + 1)):
            x0 = _onehot_signal(G0[name], K).to(dtype)
            eps = torch.randn(x0.shape, generator=generator, dtype=dtype)
            xt = dgauss.q_sample(x0, t, eps, sched)
            ins.append(torch.cat([xt, torch.zeros_like(xt[..., :1])], dim=-1))
        logits = net.prior_forward(*ins, tn, y.to(dtype), y_pad)
        for name, lam in (("C", 1.0), ("F", cfg.lambda_f), ("E", cfg.lambda_e)):
            lg = logits[name]
            ce = torch.nn.functional.cross_entropy(lg.reshape(-1, lg.shape[-1]), G0[name].reshape(-1))
            parts[name] = ce
            total = total + lam * ce
        parts["loss"] = total
        return total, parts
    iu, ju = net.iu, net.ju
    Ct, Ft, Et = dcat.corrupt_graph_batch(batch.C, batch.F, batch.E, t, gs, generator, (iu, ju))
    Co, Fo, Eo = one_hot_inputs(Ct, Ft, Et, v, dtype)
    logits = net.prior_forward(Co, Fo, Eo, tn, y.to(dtype), y_pad)
    return dcat.graph_vb_loss(
        logits, {"C": Ct, "F": Ft, "E": Et}, G0, t, gs, cfg.lambda_f, cfg.lambda_e, cfg.lambda_aux
    )


def decoder_loss(net: GraphDenoiser, batch: GraphBatch, t: torch.Tensor, eps: torch.Tensor,
                 sched: dgauss.GaussianSchedule):
    v = net.vocab
    dtype = next(net.parameters()).dtype
    L0 = batch.L.to(dtype)
    L_t = dgauss.q_sample(L0, t, eps.to(dtype), sched)
    Co, Fo, Eo = one_hot_inputs(batch.C, batch.F, batch.E, v, dtype)
    eps_hat = net.decoder_forward(L_t, t.to(dtype) / sched.T, Co, Fo, Eo, batch.region.to(dtype))
    return dgauss.eps_loss(eps_hat, eps.to(dtype), batch.empty)


# --------------------------------------------------------------------------
# loops


class _Logger:
    def __init__(self, path, fields):
        self.path = Path(path) if path else None
        self.fields = fields
        self.rows = []

    def add(self, row: dict):
        self.rows.append(row)

    def flush(self):
        if self.path is None:
            return
        buf = _pyio.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.fields, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (f"{r[k]:.8g}" if isinstance(r[k], float) else r[k]) for k in self.fields})
        io.atomic_write_text(self.path, buf.getvalue())


def _run(kind, dataset: GraphBatch, vocab, net_cfg, cfg: TrainConfig, log_path, ckpt_dir, step_fn, fields):
    if len(dataset) == 0:
        raise ValidationError("training needs a non-empty dataset")
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    net = build_network(net_cfg, vocab, cfg.seed)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    perm = Permuter(vocab)
    logger = _Logger(log_path, fields)
    model_cls = PriorModel if kind == "prior" else DecoderModel
    n = len(dataset)
    bs = min(cfg.batch_size, n)
    steps_per_epoch = max(1, math.ceil(n / bs))
    running = []
    for step in range(1, cfg.steps + 1):
        idx = torch.randint(0, n, (bs,), generator=gen)
        batch = dataset.take(idx)
        if cfg.permute:
            batch = perm.apply(batch, perm.random(bs, gen))
        loss, parts = step_fn(net, batch, gen)
        if not torch.isfinite(loss):
            raise DivergedLoss(f"{kind} loss became non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
        opt.step()
        running.append({k: float(val.detach()) for k, val in parts.items()})
        if step % cfg.log_every == 0 or step == cfg.steps:
            row = {"step": step}
            for k in fields[1:]:
                row[k] = float(np.mean([r.get(k, 0.0) for r in running]))
            logger.add(row)
            running = []
        if ckpt_dir and cfg.checkpoint_every_epochs and step % (cfg.checkpoint_every_epochs * steps_per_epoch) == 0:
            epoch = step // steps_per_epoch
            model_cls(net, vocab, cfg).save(Path(ckpt_dir) / f"{kind}_epoch{epoch:04d}.lfnn")
    net.eval()
    logger.flush()
    model = model_cls(net, vocab, cfg, logger.rows)
    if ckpt_dir:
        model.save(Path(ckpt_dir) / f"{kind}.lfnn")
    return model


def train_prior(dataset, vocab: Vocabularies, cfg: Optional[TrainConfig] = None,
                net_cfg: Optional[GraphTransformerConfig] = None, log_path=None, ckpt_dir=None) -> PriorModel:
    """Fit the semantic-graph prior. ``dataset`` is a toy corpus or a GraphBatch."""
    cfg = cfg or TrainConfig()
    net_cfg = net_cfg or GraphTransformerConfig(variant="prior")
    if net_cfg.variant != "prior":
        raise ValidationError("train_prior needs a prior network config")
    data = dataset if isinstance(dataset, GraphBatch) else prepare_dataset(dataset, vocab)
    gs = graph_schedule(cfg, vocab)

    def step_fn(net, batch, gen):
        t = torch.randint(1, cfg.T + 1, (len(batch),), generator=gen)
        y, y_pad = drop_conditions(batch, cfg.cond_dropout, gen)
        return prior_loss(net, batch, t, gs, cfg, gen, y, y_pad)

    fields = ["step", "loss", "C", "F", "E"]
    return _run("prior", data, vocab, net_cfg, cfg, log_path, ckpt_dir, step_fn, fields)


def train_decoder(dataset, vocab: Vocabularies, cfg: Optional[TrainConfig] = None,
                  net_cfg: Optional[GraphTransformerConfig] = None, log_path=None, ckpt_dir=None) -> DecoderModel:
    """Fit the spatial decoder with the masked noise-prediction loss."""
    cfg = cfg or TrainConfig()
    net_cfg = net_cfg or GraphTransformerConfig(variant="decoder")
    if net_cfg.variant != "decoder":
        raise ValidationError("train_decoder needs a decoder network config")
    data = dataset if isinstance(dataset, GraphBatch) else prepare_dataset(dataset, vocab)
    sched = dgauss.make_schedule(cfg.T_dec, cfg.dec_schedule)

    def step_fn(net, batch, gen):
        t = torch.randint(1, cfg.T_dec + 1, (len(batch),), generator=gen)
        eps = torch.randn(batch.L.shape, generator=gen)
        loss = decoder_loss(net, batch, t, eps, sched)
        return loss, {"loss": loss}

    return _run("decoder", data, vocab, net_cfg, cfg, log_path, ckpt_dir, step_fn, ["step", "loss"])

