"""Two-stage sampling: semantic graph from the prior, then spatial layout.

Zero-shot tasks reuse the same reverse chains. Known categorical slots are
clamped to their clean values at every reverse step (with an absorbing
kernel a clean value is a legal intermediate state at every t). Known
spatial rows are re-imposed at every decoder step at the forward-noise level
of that step and copied verbatim into the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from . import dcat, dgauss
from .core import (
    Instruction,
    Layout,
    ObjectRecord,
    SemanticGraph,
    compact_graph,
    empty_graph,
    graph_from_layout,
    triangle_indices,
)
from .errors import InconsistentPartial, MaskResidue, UnreachableState, ValidationError
from .model.condition import batch_conditions, condition_encode
from .model.network import one_hot_inputs, region_vector
from .model.train import DecoderModel, PriorModel, gaussian_onehot_schedule

TASKS = ("completion", "rearrangement", "stylization", "unconditional")
TASK_ALIASES = {"complete": "completion", "rearrange": "rearrangement", "stylize": "stylization", "uncond": "unconditional"}
DEFAULT_BOUNDS = {"3D": (6.0, 6.0, 3.0), "2D": (512.0, 512.0)}
X0_CLIP = 1.0


@dataclass
class Models:
    prior: PriorModel
    decoder: DecoderModel
    vq: object = None
    bounds: Optional[tuple] = None

    def __post_init__(self):
        if self.bounds is None:
            self.bounds = DEFAULT_BOUNDS[self.prior.vocab.layout_kind]

    @property
    def vocab(self):
        return self.prior.vocab


@dataclass
class Clamp:
    """Known categorical values per family; ``mask`` marks clamped slots."""

    C: torch.Tensor
    C_mask: torch.Tensor
    F: torch.Tensor
    F_mask: torch.Tensor
    E: torch.Tensor
    E_mask: torch.Tensor


def _generator(seed_or_gen) -> torch.Generator:
    if isinstance(seed_or_gen, torch.Generator):
        return seed_or_gen
    if isinstance(seed_or_gen, np.random.Generator):
        return torch.Generator().manual_seed(int(seed_or_gen.integers(2**63 - 1)))
    return torch.Generator().manual_seed(int(seed_or_gen or 0))


# --------------------------------------------------------------------------
# prior


def _initial_states(B, vocab, gs: dcat.GraphSchedule, gen):
    N, S = vocab.N_max, vocab.n_slots
    shapes = {"C": (B, N), "F": (B, N, vocab.n_f), "E": (B, S)}
    if gs.variant == "uniform":
        return {k: torch.randint(0, gs.family(k).K, shp, generator=gen) for k, shp in shapes.items()}
    return {k: torch.full(shp, gs.family(k).K, dtype=torch.long) for k, shp in shapes.items()}


def _apply_clamp(x: dict, clamp: Optional[Clamp]) -> dict:
    if clamp is None:
        return x
    return {
        "C": torch.where(clamp.C_mask, clamp.C, x["C"]),
        "F": torch.where(clamp.F_mask, clamp.F, x["F"]),
        "E": torch.where(clamp.E_mask, clamp.E, x["E"]),
    }


@torch.no_grad()
def sample_prior_batch(prior: PriorModel, conds: Sequence, T: Optional[int] = None, generator=None,
                       clamp: Optional[Clamp] = None, strict: bool = False) -> list[SemanticGraph]:
    """Run the categorical reverse chain from all-MASK for each condition.

    ``conds`` holds ConditionEmbedding objects. With ``strict`` any unclamped
    slot whose state is unreachable from the predicted clean states raises
    UnreachableState instead of silently keeping its value.
    """
    gen = _generator(generator)
    vocab = prior.vocab
    gs = prior.schedule(T)
    B = len(conds)
    y, y_pad = batch_conditions(conds)
    net = prior.net
    net.eval()
    if gs.variant == "gaussian-onehot":
        return _sample_gaussian_onehot(prior, gs, y, y_pad, gen, clamp)
    x = _apply_clamp(_initial_states(B, vocab, gs, gen), clamp)
    for t in range(gs.T, 0, -1):
        tt = torch.full((B,), t, dtype=torch.long)
        Co, Fo, Eo = one_hot_inputs(x["C"], x["F"], x["E"], vocab)
        logits = net.prior_forward(Co, Fo, Eo, tt.float() / gs.T, y, y_pad)
        new = {}
        for k in ("C", "F", "E"):
            w = torch.softmax(logits[k].to(torch.float64), dim=-1)
            p, ok = dcat.mixture_posterior_batch(x[k], w, tt, gs.family(k), return_ok=True)
            if strict:
                known = getattr(clamp, f"{k}_mask") if clamp is not None else torch.zeros_like(ok)
                if bool((~ok & ~known).any()):
                    raise UnreachableState(f"family {k}: state unreachable at t={t}")
            new[k] = dcat.sample_categorical(p, gen)
        x = _apply_clamp(new, clamp)
    return _decode_batch(x, vocab)


def _decode_batch(x, vocab) -> list[SemanticGraph]:
    out = []
    for b in range(x["C"].shape[0]):
        C, F, E = x["C"][b].numpy(), x["F"][b].numpy(), x["E"][b].numpy()
        if (C == vocab.mask_c).any() or (F == vocab.mask_f).any() or (E == vocab.mask_e).any():
            raise MaskResidue("sampled graph still contains MASK states")
        out.append(compact_graph(C, F, E, vocab))
    return out


def _sample_gaussian_onehot(prior, gs, y, y_pad, gen, clamp):
    vocab = prior.vocab
    net = prior.net
    sched = gaussian_onehot_schedule(gs.T)
    B = y.shape[0]
    widths = {"C": vocab.K_c + 1, "F": vocab.K_f + 1, "E": vocab.K_e + 1}
    shapes = {"C": (B, vocab.N_max), "F": (B, vocab.N_max, vocab.n_f), "E": (B, vocab.n_slots)}
    x = {k: torch.randn(shapes[k] + (widths[k],), generator=gen) for k in widths}
    clean = None
    if clamp is not None:
        clean = {k: 2.0 * torch.nn.functional.one_hot(
            torch.where(getattr(clamp, f"{k}_mask"), getattr(clamp, k), 0), widths[k]).float() - 1.0
            for k in widths}

    def impose(x, t):
        if clamp is None:
            return x
        out = {}
        for k in widths:
            m = getattr(clamp, f"{k}_mask").unsqueeze(-1)
            noisy = dgauss.q_sample(clean[k], t, torch.randn(x[k].shape, generator=gen), sched) if t > 0 else clean[k]
            out[k] = torch.where(m, noisy, x[k])
        return out

    x = impose(x, gs.T)
    idx = None
    for t in range(gs.T, 0, -1):
        tt = torch.full((B,), t, dtype=torch.long)
        ins = [torch.cat([x[k], torch.zeros_like(x[k][..., :1])], -1) for k in ("C", "F", "E")]
        logits = net.prior_forward(*ins, tt.float() / gs.T, y, y_pad)
        new = {}
        for k in widths:
            x0_hat = 2.0 * torch.softmax(logits[k], -1) - 1.0
            eps_hat = (x[k] - np.sqrt(sched.alpha_bar[t]) * x0_hat) / np.sqrt(1 - sched.alpha_bar[t])
            new[k] = dgauss.ddpm_step(x[k], eps_hat, t, sched, rng=gen, clip=X0_CLIP)
        if t == 1:
            idx = {k: logits[k].argmax(-1) for k in widths}
        x = impose(new, t - 1)
    if clamp is not None:
        idx = {k: torch.where(getattr(clamp, f"{k}_mask"), getattr(clamp, k), idx[k]) for k in widths}
    return _decode_batch(idx, vocab)


def sample_prior(cond, prior: PriorModel, T: Optional[int] = None, rng=None) -> SemanticGraph:
    return sample_prior_batch(prior, [cond], T, rng)[0]


# --------------------------------------------------------------------------
# decoder


@torch.no_grad()
def sample_layout_batch(decoder: DecoderModel, graphs: Sequence[SemanticGraph], bounds, T_dec: Optional[int] = None,
                        generator=None, product_regions=None, known_rows=None, known_mask=None) -> list[Layout]:
    """Decode spatial rows for each graph with the ancestral sampler.

    ``known_rows`` (B, N, d_l) with boolean ``known_mask`` (B, N) are
    re-imposed at every step at the matching forward-noise level.
    """
    gen = _generator(generator)
    vocab = decoder.vocab
    sched = decoder.schedule(T_dec)
    B = len(graphs)
    kind = vocab.layout_kind
    if product_regions is None:
        product_regions = [None] * B
    C = torch.as_tensor(np.stack([g.C for g in graphs]))
    F = torch.as_tensor(np.stack([g.F for g in graphs]))
    E = torch.as_tensor(np.stack([g.E for g in graphs]))
    Co, Fo, Eo = one_hot_inputs(C, F, E, vocab)
    region = torch.stack([region_vector(r, bounds) for r in product_regions])
    L = torch.randn(B, vocab.N_max, vocab.d_l, generator=gen)
    if known_rows is not None:
        known_rows = torch.as_tensor(known_rows, dtype=torch.float32)
        km = torch.as_tensor(known_mask).unsqueeze(-1)

    def impose(L, t):
        if known_rows is None:
            return L
        target = known_rows if t == 0 else dgauss.q_sample(known_rows, t, torch.randn(L.shape, generator=gen), sched)
        return torch.where(km, target.to(L.dtype), L)

    L = impose(L, sched.T)
    net = decoder.net
    net.eval()
    for t in range(sched.T, 0, -1):
        tt = torch.full((B,), t, dtype=torch.long)
        eps_hat = net.decoder_forward(L, tt.float() / sched.T, Co, Fo, Eo, region)
        L = dgauss.ddpm_step_batch(L, eps_hat, tt, sched, gen, clip=X0_CLIP)
        L = impose(L, t - 1)
    Ln = L.numpy().astype(np.float64)
    return [dgauss.decode_spatial(Ln[b], g, kind, bounds, product_regions[b]) for b, g in enumerate(graphs)]


def sample_layout(g: SemanticGraph, decoder: DecoderModel, bounds, T_dec=None, rng=None, product_region=None) -> Layout:
    return sample_layout_batch(decoder, [g], bounds, T_dec, rng, [product_region])[0]


def generate_batch(instrs: Sequence[Optional[Instruction]], models: Models, seed=0, T: Optional[int] = None,
                   T_dec: Optional[int] = None, product_regions=None, batch_size: int = 256) -> list[Layout]:
    """Sample one layout per instruction (``None`` or empty = unconditional)."""
    gen = _generator(seed)
    out = []
    for start in range(0, len(instrs), batch_size):
        chunk = instrs[start : start + batch_size]
        conds = [condition_encode(i or Instruction()) for i in chunk]
        graphs = sample_prior_batch(models.prior, conds, T, gen)
        regions = None if product_regions is None else product_regions[start : start + batch_size]
        out.extend(sample_layout_batch(models.decoder, graphs, models.bounds, T_dec, gen, regions))
    return out


def generate(instr: Optional[Instruction], models: Models, rng=None, T=None, T_dec=None, product_region=None) -> Layout:
    regions = None if product_region is None else [product_region]
    return generate_batch([instr], models, rng, T, T_dec, regions)[0]


# --------------------------------------------------------------------------
# zero-shot tasks


@dataclass
class PartialScene:
    """Known part of a scene for zero-shot tasks.

    ``layout`` holds the known objects (the whole scene for stylization and
    rearrangement). ``known_edges`` optionally pins relations ``(i, j) ->
    label`` with ``i < j`` (rearrangement only). ``max_new`` bounds the
    number of free slots in completion (default: all remaining slots).
    """

    layout: Layout
    known_edges: dict = field(default_factory=dict)
    max_new: Optional[int] = None


def _clamp_from(g: SemanticGraph, vocab, c_mask, f_mask, e_mask) -> Clamp:
    t = lambda a: torch.tensor(np.array(a))[None]
    return Clamp(t(g.C), t(c_mask), t(g.F), t(f_mask), t(g.E), t(e_mask))


def zero_shot(task: str, known, instr: Optional[Instruction], models: Models, rng=None, T=None, T_dec=None,
              strict: bool = False) -> Layout:
    task = TASK_ALIASES.get(task, task)
    if task not in TASKS:
        raise ValidationError(f"unknown zero-shot task {task!r}")
    gen = _generator(rng)
    instr = instr or Instruction()
    if task == "unconditional":
        return generate(Instruction(), models, gen, T, T_dec)
    part = known if isinstance(known, PartialScene) else PartialScene(known)
    layout = part.layout
    vocab = models.vocab
    N, n = vocab.N_max, len(layout.objects)
    g = graph_from_layout(layout, vocab)
    iu, ju = triangle_indices(N)
    cond = [condition_encode(instr)]

    if task == "stylization":
        real = np.arange(N) < n
        c_mask = np.ones(N, dtype=bool)
        f_mask = np.repeat(~real[:, None], vocab.n_f, axis=1)
        e_mask = np.ones(len(iu), dtype=bool)
        clamp = _clamp_from(g, vocab, c_mask, f_mask, e_mask)
        g2 = sample_prior_batch(models.prior, cond, T, gen, clamp, strict)[0]
        objs = tuple(
            ObjectRecord(o.category, tuple(int(v) for v in g2.F[i]), o.location, o.size, o.rotation)
            for i, o in enumerate(layout.objects)
        )
        return Layout(layout.kind, layout.bounds, objs, layout.product_region)

    if task == "rearrangement":
        for (i, j), lab in part.known_edges.items():
            if i >= n or j >= n:
                raise InconsistentPartial(f"known edge ({i}, {j}) references a node that is not known")
        c_mask = np.ones(N, dtype=bool)
        f_mask = np.ones((N, vocab.n_f), dtype=bool)
        pad = (iu >= n) | (ju >= n)
        e_mask = pad.copy()
        E = np.array(g.E)
        slot = {(int(a), int(b)): k for k, (a, b) in enumerate(zip(iu, ju))}
        for (i, j), lab in part.known_edges.items():
            k = slot[(min(i, j), max(i, j))]
            E[k] = lab if i < j else vocab.inverse_map()[lab]
            e_mask[k] = True
        g_known = SemanticGraph(g.n, g.C, g.F, E)
        clamp = _clamp_from(g_known, vocab, c_mask, f_mask, e_mask)
        g2 = sample_prior_batch(models.prior, cond, T, gen, clamp, strict)[0]
        return sample_layout_batch(models.decoder, [g2], layout.bounds, T_dec, gen, [layout.product_region])[0]

    # completion
    free = N - n if part.max_new is None else min(part.max_new, N - n)
    if free < 0:
        raise ValidationError("max_new must be non-negative")
    c_mask = np.arange(N) < n
    c_mask[n + free :] = True  # slots beyond the free budget stay EMPTY
    f_mask = np.repeat(c_mask[:, None], vocab.n_f, axis=1)
    e_mask = ((iu < n) & (ju < n)) | (iu >= n + free) | (ju >= n + free)
    clamp = _clamp_from(g, vocab, c_mask, f_mask, e_mask)
    g2 = sample_prior_batch(models.prior, cond, T, gen, clamp, strict)[0]
    # compaction is stable, so the known objects keep slots 0..n-1
    L0, _ = dgauss.encode_spatial(layout, vocab)
    known_mask = np.arange(N) < n
    out = sample_layout_batch(models.decoder, [g2], layout.bounds, T_dec, gen, [layout.product_region],
                              L0[None], known_mask[None])[0]
    objs = tuple(layout.objects) + tuple(out.objects[n:])
    return Layout(layout.kind, layout.bounds, objs, layout.product_region)


__all__ = [
    "Clamp",
    "Models",
    "PartialScene",
    "empty_graph",
    "generate",
    "generate_batch",
    "sample_layout",
    "sample_layout_batch",
    "sample_prior",
    "sample_prior_batch",
    "zero_shot",
]
