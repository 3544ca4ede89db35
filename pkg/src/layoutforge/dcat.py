"""Mask-based categorical diffusion over graph attributes.

A family with ``K`` clean states (categories plus EMPTY) has ``K + 1``
states in total; index ``K`` is the absorbing MASK. One forward step keeps a
clean state with probability ``alpha_t + beta_t``, moves it to each other
clean state with ``beta_t`` and masks it with ``gamma_t``, so every column of
``Q_t`` sums to ``alpha_t + K * beta_t + gamma_t = 1``. Thanks to that
structure the cumulative ``Q_t ... Q_1`` is fully described by three
scalars: ``abar`` (stay on x0), ``bbar`` (each other clean state) and
``gbar`` (MASK).

Scalar operations (``forward_marginal``, ``posterior``, ``reverse_step``)
work on numpy values; the ``*_batch`` functions are the torch versions used
for training and batched sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import InvalidSchedule, UnreachableState, ValidationError

KERNEL_VARIANTS = ("independent-mask", "uniform", "joint-mask", "gaussian-onehot")


@dataclass(frozen=True, eq=False)
class MaskedTransitionSchedule:
    T: int
    K: int
    eta: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    abar: np.ndarray
    bbar: np.ndarray
    gbar: np.ndarray
    variant: str = "independent-mask"

    @property
    def n_states(self) -> int:
        return self.K + 1

    @property
    def mask(self) -> int:
        return self.K

    @property
    def absorbing(self) -> bool:
        return self.variant != "uniform"

    def tensors(self, dtype=torch.float64) -> dict:
        cache = self.__dict__.setdefault("_tensor_cache", {})
        if dtype not in cache:
            cache[dtype] = {
                k: torch.as_tensor(getattr(self, k), dtype=dtype)
                for k in ("alpha", "beta", "gamma", "abar", "bbar", "gbar")
            }
        return cache[dtype]


def mask_gammas(T: int) -> np.ndarray:
    g = np.zeros(T + 1)
    t = np.arange(1, T + 1)
    g[1:] = 1.0 / (T - t + 1)
    return g


def joint_edge_gammas(T: int) -> np.ndarray:
    """Per-step mask rates whose cumulative mass is 1 - (1 - t/T)^2.

    That is the chance that at least one of two independently masked end
    nodes is masked, which is how edges are corrupted in the joint variant.
    """
    gbar = 1.0 - (1.0 - np.arange(T + 1) / T) ** 2
    g = np.zeros(T + 1)
    g[1:] = (gbar[1:] - gbar[:-1]) / (1.0 - gbar[:-1])
    g[T] = 1.0
    return g


def build_schedule(
    T: int,
    K: int,
    eta: float = 0.05,
    variant: str = "independent-mask",
    gammas: Optional[np.ndarray] = None,
) -> MaskedTransitionSchedule:
    """Per-step rates and cumulative scalars for one categorical family.

    Masking variants use ``gamma_t = 1 / (T - t + 1)`` so that exactly
    ``t / T`` of the mass is masked at step ``t``; ``eta`` scales a small
    uniform leak ``beta_t = eta * (1 - gamma_t) / (K * T)``. The uniform
    variant has no MASK: each step resamples uniformly with probability
    ``1 / (T - t + 1)``, so the chain is uniform at ``t = T``.
    """
    if T < 1:
        raise InvalidSchedule("T must be >= 1")
    if not 0 <= eta < 1:
        raise InvalidSchedule("eta must lie in [0, 1)")
    if variant not in KERNEL_VARIANTS:
        raise InvalidSchedule(f"unknown kernel variant {variant!r}")
    alpha = np.ones(T + 1)
    beta = np.zeros(T + 1)
    if variant == "uniform":
        gamma = np.zeros(T + 1)
        u = mask_gammas(T)
        beta[1:] = u[1:] / K
        alpha[1:] = 1.0 - u[1:]
    else:
        gamma = mask_gammas(T) if gammas is None else np.asarray(gammas, dtype=np.float64)
        if gamma.shape != (T + 1,):
            raise InvalidSchedule("gammas must have length T + 1")
        beta[1:] = eta * (1.0 - gamma[1:]) / (K * T)
        alpha[1:] = 1.0 - gamma[1:] - K * beta[1:]
    if np.any(alpha < 0):
        raise InvalidSchedule("negative stay probability alpha_t")

    abar = np.ones(T + 1)
    bbar = np.zeros(T + 1)
    gbar = np.zeros(T + 1)
    for t in range(1, T + 1):
        a, b, g = alpha[t], beta[t], gamma[t]
        pa, pb, pg = abar[t - 1], bbar[t - 1], gbar[t - 1]
        abar[t] = pa * (a + b) + (K - 1) * pb * b
        bbar[t] = pa * b + pb * (a + K * b - b)
        gbar[t] = pg + (1.0 - pg) * g
    if gamma[T] == 1.0:
        abar[T], bbar[T], gbar[T] = 0.0, 0.0, 1.0
    return MaskedTransitionSchedule(T, K, float(eta), alpha, beta, gamma, abar, bbar, gbar, variant)


def transition_matrix(sched: MaskedTransitionSchedule, t: int) -> np.ndarray:
    """Explicit column-stochastic ``Q_t[m, n] = q(x_t = m | x_{t-1} = n)``."""
    K = sched.K
    Q = np.zeros((K + 1, K + 1))
    Q[:K, :K] = sched.beta[t]
    Q[np.arange(K), np.arange(K)] += sched.alpha[t]
    Q[K, :K] = sched.gamma[t]
    Q[K, K] = 1.0
    return Q


def forward_marginal(x0: int, t: int, sched: MaskedTransitionSchedule) -> np.ndarray:
    if not 0 <= x0 < sched.K:
        raise ValidationError("x0 must be a clean state (not MASK)")
    row = np.full(sched.K + 1, sched.bbar[t])
    row[x0] = sched.abar[t]
    row[sched.K] = sched.gbar[t]
    return row


def posterior(x_t: int, x0: int, t: int, sched: MaskedTransitionSchedule) -> np.ndarray:
    """``q(x_{t-1} | x_t, x0)`` over all ``K + 1`` states."""
    if t < 1:
        raise ValidationError("posterior needs t >= 1")
    if forward_marginal(x0, t, sched)[x_t] <= 0:
        raise UnreachableState(f"x_t={x_t} unreachable from x0={x0} at t={t}")
    unnorm = transition_matrix(sched, t)[x_t, :] * forward_marginal(x0, t - 1, sched)
    return unnorm / unnorm.sum()


def _softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z))
    return e / e.sum()


def reverse_distribution(x0_logits, x_t: int, t: int, sched: MaskedTransitionSchedule) -> np.ndarray:
    """Mixture of posteriors weighted by the predicted clean-state softmax.

    Clean states from which ``x_t`` is unreachable carry no posterior and are
    dropped before renormalising the weights.
    """
    w = _softmax(x0_logits)
    fm = np.array([forward_marginal(c, t, sched)[x_t] for c in range(sched.K)])
    w = np.where(fm > 0, w, 0.0)
    if w.sum() <= 0:
        raise UnreachableState(f"x_t={x_t} is unreachable from every predicted clean state")
    w = w / w.sum()
    out = np.zeros(sched.K + 1)
    for c in np.flatnonzero(w):
        out += w[c] * posterior(x_t, int(c), t, sched)
    return out


def reverse_step(x0_logits, x_t: int, t: int, sched: MaskedTransitionSchedule, rng: np.random.Generator) -> int:
    p = reverse_distribution(x0_logits, x_t, t, sched)
    return int(rng.choice(sched.K + 1, p=p))


# --------------------------------------------------------------------------
# batched torch versions


def _gather(vec: torch.Tensor, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    out = vec[t]
    while out.dim() < like.dim():
        out = out.unsqueeze(-1)
    return out


def marginal_batch(x0: torch.Tensor, t: torch.Tensor, sched: MaskedTransitionSchedule, dtype=torch.float64):
    """Rows of ``q(x_t | x0)`` for index tensor ``x0`` and per-sample ``t``."""
    c = sched.tensors(dtype)
    shape = x0.shape + (sched.K + 1,)
    ab = _gather(c["abar"], t, x0).unsqueeze(-1)
    bb = _gather(c["bbar"], t, x0).unsqueeze(-1)
    gb = _gather(c["gbar"], t, x0).unsqueeze(-1)
    row = bb.expand(shape).clone()
    row.scatter_(-1, x0.unsqueeze(-1), ab.expand(x0.shape + (1,)).clone())
    row[..., sched.K] = gb[..., 0]
    return row


def mixture_posterior_batch(
    x_t: torch.Tensor, weights: torch.Tensor, t: torch.Tensor, sched: MaskedTransitionSchedule,
    return_ok: bool = False,
):
    """Batched ``sum_c w_c q(x_{t-1} | x_t, c)`` with the structured kernel.

    ``x_t``: integer tensor (...); ``weights``: (..., K) clean-state weights;
    ``t``: integer tensor broadcastable to the leading batch dimension (B,).
    Returns (..., K + 1). Rows whose weights put no mass on a clean state
    that can reach ``x_t`` fall back to a point mass on ``x_t``; with
    ``return_ok`` a boolean tensor (...) flagging the regular rows is
    returned as well.
    """
    K = sched.K
    dtype = weights.dtype
    c = sched.tensors(dtype)
    g = lambda name, tt: _gather(c[name], tt, x_t)
    a_t, b_t, gm_t = g("alpha", t), g("beta", t), g("gamma", t)
    ab_t, bb_t, gb_t = g("abar", t), g("bbar", t), g("gbar", t)
    ab_p, bb_p, gb_p = g("abar", t - 1), g("bbar", t - 1), g("gbar", t - 1)

    is_mask = x_t == K
    xt_clean = torch.where(is_mask, torch.zeros_like(x_t), x_t)
    onehot_xt = torch.nn.functional.one_hot(xt_clean, K).to(dtype) * (~is_mask).unsqueeze(-1).to(dtype)

    # q(x_t | c) for every clean c
    fm = torch.where(
        is_mask.unsqueeze(-1),
        gb_t.unsqueeze(-1).expand(weights.shape),
        bb_t.unsqueeze(-1) + (ab_t - bb_t).unsqueeze(-1) * onehot_xt,
    )
    reach = fm > 0
    w = torch.where(reach, weights, torch.zeros_like(weights))
    total = w.sum(-1, keepdim=True)
    ok = total > 0
    w = w / torch.where(ok, total, torch.ones_like(total))
    v = torch.where(reach, w / torch.where(reach, fm, torch.ones_like(fm)), torch.zeros_like(w))
    V = v.sum(-1, keepdim=True)

    s_clean = bb_p.unsqueeze(-1) * V + (ab_p - bb_p).unsqueeze(-1) * v
    s_mask = gb_p.unsqueeze(-1) * V
    q_clean = torch.where(
        is_mask.unsqueeze(-1),
        gm_t.unsqueeze(-1).expand(weights.shape),
        b_t.unsqueeze(-1) + a_t.unsqueeze(-1) * onehot_xt,
    )
    q_mask = torch.where(is_mask, torch.ones_like(a_t), torch.zeros_like(a_t)).unsqueeze(-1)
    p = torch.cat([q_clean * s_clean, q_mask * s_mask], dim=-1)
    p = p / p.sum(-1, keepdim=True).clamp_min(torch.finfo(dtype).tiny)

    if not bool(ok.all()):
        fallback = torch.nn.functional.one_hot(x_t, K + 1).to(dtype)
        p = torch.where(ok, p, fallback)
    if return_ok:
        return p, ok.squeeze(-1)
    return p


def sample_categorical(probs: torch.Tensor, generator: Optional[torch.Generator]) -> torch.Tensor:
    flat = probs.reshape(-1, probs.shape[-1]).to(torch.float64).clamp_min(0)
    idx = torch.multinomial(flat, 1, generator=generator).squeeze(-1)
    return idx.reshape(probs.shape[:-1])


def reverse_step_batch(
    logits: torch.Tensor,
    x_t: torch.Tensor,
    t: torch.Tensor,
    sched: MaskedTransitionSchedule,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    w = torch.softmax(logits.to(torch.float64), dim=-1)
    return sample_categorical(mixture_posterior_batch(x_t, w, t, sched), generator)


def _unmasked_draw(x0, t, sched, u, generator):
    """Draw the non-masked part of ``q(x_t | x0)`` given uniform ``u`` in [0, 1)."""
    c = sched.tensors(torch.float64)
    bb = _gather(c["bbar"], t, x0)
    keep = 1.0 - _gather(c["gbar"], t, x0)
    # conditionally on not being masked: uniform with prob K*bbar/keep, else stay
    leak = sched.K * bb / torch.where(keep > 0, keep, torch.ones_like(keep))
    rand_state = torch.randint(0, sched.K, x0.shape, generator=generator)
    return torch.where(u < leak, rand_state, x0)


def sample_forward_batch(x0: torch.Tensor, t: torch.Tensor, sched: MaskedTransitionSchedule, generator=None):
    """Sample ``x_t ~ q(x_t | x0)`` independently per slot."""
    c = sched.tensors(torch.float64)
    gb = _gather(c["gbar"], t, x0)
    u_mask = torch.rand(x0.shape, generator=generator, dtype=torch.float64)
    u_leak = torch.rand(x0.shape, generator=generator, dtype=torch.float64)
    clean = _unmasked_draw(x0, t, sched, u_leak, generator)
    return torch.where(u_mask < gb, torch.full_like(x0, sched.K), clean)


@dataclass(frozen=True, eq=False)
class GraphSchedule:
    """Schedules for the three families (C, F, E) sharing ``T``."""

    C: MaskedTransitionSchedule
    F: MaskedTransitionSchedule
    E: MaskedTransitionSchedule
    variant: str = "independent-mask"

    @property
    def T(self) -> int:
        return self.C.T

    def family(self, name: str) -> MaskedTransitionSchedule:
        return getattr(self, name)


def build_graph_schedule(
    T: int, vocab, eta_c: float = 0.05, eta_f: float = 0.05, eta_e: float = 0.05,
    variant: str = "independent-mask",
) -> GraphSchedule:
    """Family schedules with ``K' = K + 1`` clean states (EMPTY included)."""
    if variant == "gaussian-onehot":
        # the schedule still defines the mask/uniform bookkeeping used by the
        # discrete helpers; the Gaussian path reads its own schedule
        base = "independent-mask"
    else:
        base = variant
    C = build_schedule(T, vocab.K_c + 1, eta_c, base)
    F = build_schedule(T, vocab.K_f + 1, eta_f, base)
    if variant == "joint-mask":
        E = build_schedule(T, vocab.K_e + 1, eta_e, base, gammas=joint_edge_gammas(T))
    else:
        E = build_schedule(T, vocab.K_e + 1, eta_e, base)
    return GraphSchedule(C, F, E, variant)


def corrupt_graph_batch(C0, F0, E0, t, gs: GraphSchedule, generator=None, node_pairs=None):
    """Forward-corrupt a batch of index graphs.

    ``C0``: (B, N), ``F0``: (B, N, n_f), ``E0``: (B, S). For the joint-mask
    variant one mask draw per node covers its category and features, and an
    edge is masked when either endpoint is; ``node_pairs`` gives the (iu, ju)
    endpoints of the S slots.
    """
    if gs.variant != "joint-mask":
        return (
            sample_forward_batch(C0, t, gs.C, generator),
            sample_forward_batch(F0, t, gs.F, generator),
            sample_forward_batch(E0, t, gs.E, generator),
        )
    iu, ju = node_pairs
    gb = _gather(gs.C.tensors()["gbar"], t, C0)
    node_mask = torch.rand(C0.shape, generator=generator, dtype=torch.float64) < gb
    Ct = _unmasked_draw(C0, t, gs.C, torch.rand(C0.shape, generator=generator, dtype=torch.float64), generator)
    Ft = _unmasked_draw(F0, t, gs.F, torch.rand(F0.shape, generator=generator, dtype=torch.float64), generator)
    Et = _unmasked_draw(E0, t, gs.E, torch.rand(E0.shape, generator=generator, dtype=torch.float64), generator)
    Ct = torch.where(node_mask, torch.full_like(Ct, gs.C.K), Ct)
    Ft = torch.where(node_mask.unsqueeze(-1), torch.full_like(Ft, gs.F.K), Ft)
    edge_mask = node_mask[:, iu] | node_mask[:, ju]
    Et = torch.where(edge_mask, torch.full_like(Et, gs.E.K), Et)
    return Ct, Ft, Et


def sample_forward(state, t: int, gs: GraphSchedule, rng: np.random.Generator, vocab):
    """Corrupt a one-hot graph state to timestep ``t`` (point-mass rows)."""
    from .core import OneHotGraphState, triangle_indices

    gen = torch.Generator().manual_seed(int(rng.integers(2**63 - 1)))
    C0 = torch.as_tensor(np.argmax(state.C_t, -1))[None]
    F0 = torch.as_tensor(np.argmax(state.F_t, -1))[None]
    E0 = torch.as_tensor(np.argmax(state.E_t, -1))[None]
    tt = torch.tensor([t])
    iu, ju = triangle_indices(vocab.N_max)
    Ct, Ft, Et = corrupt_graph_batch(C0, F0, E0, tt, gs, gen, (torch.as_tensor(iu), torch.as_tensor(ju)))
    eye = lambda x, w: np.eye(w)[x[0].numpy()]
    return OneHotGraphState(
        C_t=eye(Ct, vocab.K_c + 2), F_t=eye(Ft, vocab.K_f + 2), E_t=eye(Et, vocab.K_e + 2), t=t
    )


# --------------------------------------------------------------------------
# variational bound


def family_vb_terms(logits, x_t, x0, t, sched: MaskedTransitionSchedule):
    """Per-slot bound terms and clean-state cross-entropy.

    KL[q(x_{t-1}|x_t,x0) || p(x_{t-1}|x_t)] where t >= 2 and -log p(x0|x_1)
    where t == 1. Returns two tensors shaped like ``x_t``.
    """
    K = sched.K
    dtype = logits.dtype
    w = torch.softmax(logits, dim=-1)
    p = mixture_posterior_batch(x_t, w, t, sched)
    q = mixture_posterior_batch(x_t, torch.nn.functional.one_hot(x0, K).to(dtype), t, sched)
    tiny = torch.finfo(dtype).tiny
    logp = torch.log(p.clamp_min(tiny))
    logq = torch.log(q.clamp_min(tiny))
    kl = torch.where(q > 0, q * (logq - logp), torch.zeros_like(q)).sum(-1)
    nll = -logp.gather(-1, x0.unsqueeze(-1)).squeeze(-1)
    t_b = t.reshape((-1,) + (1,) * (x_t.dim() - 1)).expand(x_t.shape)
    term = torch.where(t_b == 1, nll, kl)
    ce = -torch.log_softmax(logits, dim=-1).gather(-1, x0.unsqueeze(-1)).squeeze(-1)
    ce = torch.nan_to_num(ce, nan=0.0, posinf=0.0)
    return term, ce


def graph_vb_loss(
    logits: dict,
    G_t: dict,
    G_0: dict,
    t: torch.Tensor,
    gs: GraphSchedule,
    lambda_f: float = 1.0,
    lambda_e: float = 1.0,
    lambda_aux: float = 0.01,
):
    """Weighted bound ``L_C + lambda_f L_F + lambda_e L_E`` (+ auxiliary CE).

    ``logits``, ``G_t`` and ``G_0`` map family names "C", "F", "E" to
    tensors with a leading batch axis. Terms are averaged over the slots of
    each family, then over the batch.
    """
    weights = {"C": 1.0, "F": lambda_f, "E": lambda_e}
    total = 0.0
    parts = {}
    for name, lam in weights.items():
        term, ce = family_vb_terms(logits[name], G_t[name], G_0[name], t, gs.family(name))
        B = term.shape[0]
        L = term.reshape(B, -1).mean(-1).mean()
        A = ce.reshape(B, -1).mean(-1).mean()
        parts[name] = L
        parts["aux_" + name] = A
        total = total + lam * (L + lambda_aux * A)
    parts["loss"] = total
    return total, parts
