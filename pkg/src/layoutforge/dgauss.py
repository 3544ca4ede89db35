"""Gaussian diffusion over the spatial matrix L (one row per node).

Row layout: 2D ``[x, y, w, h]``; 3D ``[x, y, z, w, d, h, cos r, sin r]``.
Locations are mapped to [-1, 1] relative to the layout bounds and sizes are
log-scaled into [-1, 1] over a fixed per-kind extent range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .core import Layout, ObjectRecord, SemanticGraph, Vocabularies
from .errors import DegenerateRotation, ValidationError

# log-size normalisation ranges per kind (full extents, layout units)
SIZE_RANGE = {"3D": (0.05, 6.0), "2D": (2.0, 512.0)}


@dataclass(frozen=True, eq=False)
class GaussianSchedule:
    T: int
    alpha_bar: np.ndarray  # index 0..T, alpha_bar[0] == 1
    beta: np.ndarray  # index 1..T (beta[0] == 0)
    kind: str = "cosine"

    @property
    def posterior_variance(self) -> np.ndarray:
        ab = self.alpha_bar
        var = np.zeros_like(ab)
        var[1:] = self.beta[1:] * (1 - ab[:-1]) / (1 - ab[1:])
        return var

    def tensors(self, dtype=torch.float64) -> dict:
        cache = self.__dict__.setdefault("_tensor_cache", {})
        if dtype not in cache:
            cache[dtype] = {
                "alpha_bar": torch.as_tensor(self.alpha_bar, dtype=dtype),
                "beta": torch.as_tensor(self.beta, dtype=dtype),
                "sigma": torch.as_tensor(np.sqrt(self.posterior_variance), dtype=dtype),
            }
        return cache[dtype]


def cosine_schedule(T: int, s: float = 0.008, max_beta: float = 0.999) -> GaussianSchedule:
    if T < 1:
        raise ValidationError("T_dec must be >= 1")
    steps = np.arange(T + 1, dtype=np.float64) / T
    f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
    ab_raw = f / f[0]
    beta = np.zeros(T + 1)
    beta[1:] = np.minimum(1 - ab_raw[1:] / ab_raw[:-1], max_beta)
    alpha_bar = np.cumprod(1 - beta)
    return GaussianSchedule(T, alpha_bar, beta, "cosine")


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> GaussianSchedule:
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_start, beta_end, T) if T > 1 else [beta_end]
    return GaussianSchedule(T, np.cumprod(1 - beta), beta, "linear")


def make_schedule(T: int, kind: str = "cosine") -> GaussianSchedule:
    if kind == "cosine":
        return cosine_schedule(T)
    if kind == "linear":
        return linear_schedule(T)
    raise ValidationError(f"unknown Gaussian schedule {kind!r}")


# --------------------------------------------------------------------------
# rotation codec


def encode_rotation(r: float) -> tuple[float, float]:
    return (math.cos(r), math.sin(r))


def decode_rotation(pair) -> float:
    c, s = float(pair[0]), float(pair[1])
    norm = math.hypot(c, s)
    if norm <= 1e-9:
        raise DegenerateRotation("cannot decode a rotation from the zero pair")
    r = math.atan2(s / norm, c / norm)
    return -math.pi if r >= math.pi else r


# --------------------------------------------------------------------------
# diffusion ops (work on numpy arrays or torch tensors)


def _coef(vec, t, like):
    if isinstance(like, torch.Tensor):
        v = torch.as_tensor(vec, dtype=like.dtype)[torch.as_tensor(t)]
        while v.dim() < like.dim():
            v = v.unsqueeze(-1)
        return v
    v = np.asarray(vec)[np.asarray(t)]
    return v.reshape(np.shape(v) + (1,) * (np.ndim(like) - np.ndim(v)))


def _sqrt(x):
    return torch.sqrt(x) if isinstance(x, torch.Tensor) else np.sqrt(x)


def q_sample(L0, t, eps, schedule: GaussianSchedule):
    """``sqrt(ab_t) L0 + sqrt(1 - ab_t) eps``; ``t`` scalar or per-sample."""
    ab = _coef(schedule.alpha_bar, t, L0)
    return _sqrt(ab) * L0 + _sqrt(1 - ab) * eps


def eps_loss(eps_hat, eps, empty_mask):
    """Mean squared error over rows where ``empty_mask`` is False.

    ``empty_mask`` has the shape of the leading (row) dims. With no real
    rows the loss is 0 and carries no gradient.
    """
    real = ~empty_mask
    if isinstance(eps, torch.Tensor):
        real_f = real.to(eps.dtype).unsqueeze(-1)
        n = real_f.sum() * eps.shape[-1]
        if n.item() == 0:
            return (eps_hat * 0).sum().detach()
        return (((eps_hat - eps) ** 2) * real_f).sum() / n
    real = np.asarray(real)
    if not real.any():
        return 0.0
    d = (np.asarray(eps_hat) - np.asarray(eps))[real]
    return float(np.mean(d**2))


def _clipped_mean(L_t, eps_hat, beta, ab, ab_prev, clip):
    sqrt = torch.sqrt if isinstance(L_t, torch.Tensor) else np.sqrt
    x0 = (L_t - sqrt(1 - ab) * eps_hat) / sqrt(ab)
    x0 = x0.clamp(-clip, clip) if isinstance(x0, torch.Tensor) else np.clip(x0, -clip, clip)
    c0 = sqrt(ab_prev) * beta / (1 - ab)
    ct = sqrt(1 - beta) * (1 - ab_prev) / (1 - ab)
    return c0 * x0 + ct * L_t


def ddpm_step(L_t, eps_hat, t: int, schedule: GaussianSchedule, rng=None, noise=None, clip=None):
    """Ancestral update ``L_t -> L_{t-1}``; no noise is added at ``t = 1``.

    The mean is ``(L_t - beta_t / sqrt(1 - ab_t) * eps_hat) / sqrt(1 - beta_t)``.
    With ``clip`` set, the implied clean estimate is clamped to
    ``[-clip, clip]`` first and the posterior mean is formed from it; the
    two forms coincide whenever no clamping happens. ``noise`` overrides the
    standard-normal draw (shared-noise replay); ``rng`` is a numpy or torch
    Generator matching the type of ``L_t``.
    """
    if t < 1:
        raise ValidationError("ddpm_step needs t >= 1")
    beta = float(schedule.beta[t])
    ab = float(schedule.alpha_bar[t])
    if clip is None:
        mean = (L_t - beta / math.sqrt(1 - ab) * eps_hat) / math.sqrt(1 - beta)
    else:
        mean = _clipped_mean(L_t, eps_hat, beta, ab, float(schedule.alpha_bar[t - 1]), clip)
    if t == 1:
        return mean
    sigma = math.sqrt(schedule.posterior_variance[t])
    if noise is None:
        if isinstance(L_t, torch.Tensor):
            noise = torch.randn(L_t.shape, generator=rng, dtype=L_t.dtype)
        else:
            noise = rng.standard_normal(np.shape(L_t))
    return mean + sigma * noise


def ddpm_step_batch(L_t, eps_hat, t: torch.Tensor, schedule: GaussianSchedule, generator=None, clip=None):
    """Per-sample-timestep version of :func:`ddpm_step` for torch batches."""
    c = schedule.tensors(L_t.dtype)
    beta = _coef(c["beta"], t, L_t)
    ab = _coef(c["alpha_bar"], t, L_t)
    sigma = _coef(c["sigma"], t, L_t)
    if clip is None:
        mean = (L_t - beta / torch.sqrt(1 - ab) * eps_hat) / torch.sqrt(1 - beta)
    else:
        mean = _clipped_mean(L_t, eps_hat, beta, ab, _coef(c["alpha_bar"], t - 1, L_t), clip)
    noise = torch.randn(L_t.shape, generator=generator, dtype=L_t.dtype)
    t_b = t.reshape((-1,) + (1,) * (L_t.dim() - 1))
    return mean + torch.where(t_b > 1, sigma, torch.zeros_like(sigma)) * noise


# --------------------------------------------------------------------------
# layout <-> spatial matrix


def _norm_size(s: float, kind: str) -> float:
    lo, hi = SIZE_RANGE[kind]
    s = min(max(s, lo), hi)
    return 2 * (math.log(s) - math.log(lo)) / (math.log(hi) - math.log(lo)) - 1


def _denorm_size(v: float, kind: str) -> float:
    lo, hi = SIZE_RANGE[kind]
    v = min(max(v, -1.0), 1.0)
    return math.exp(math.log(lo) + (v + 1) / 2 * (math.log(hi) - math.log(lo)))


def encode_object(o: ObjectRecord, kind: str, bounds) -> np.ndarray:
    loc = [2 * v / b - 1 for v, b in zip(o.location, bounds)]
    size = [_norm_size(s, kind) for s in o.size]
    row = loc + size
    if kind == "3D":
        row += list(encode_rotation(o.rotation))
    return np.array(row)


def encode_spatial(layout: Layout, vocab: Vocabularies) -> tuple[np.ndarray, np.ndarray]:
    """Spatial matrix (N_max, d_l) and boolean EMPTY-row mask."""
    L = np.zeros((vocab.N_max, vocab.d_l))
    empty = np.ones(vocab.N_max, dtype=bool)
    for i, o in enumerate(layout.objects):
        L[i] = encode_object(o, layout.kind, layout.bounds)
        empty[i] = False
    return L, empty


def decode_row(row, kind: str, bounds) -> tuple[tuple, tuple, float]:
    """Location, size and rotation from one spatial row (clamped to bounds)."""
    dim = 2 if kind == "2D" else 3
    loc = tuple(min(max((float(v) + 1) / 2, 0.0), 1.0) * b for v, b in zip(row[:dim], bounds))
    size = tuple(_denorm_size(float(v), kind) for v in row[dim : 2 * dim])
    rot = decode_rotation(row[2 * dim : 2 * dim + 2]) if kind == "3D" else 0.0
    return loc, size, rot


def decode_spatial(
    L, g: SemanticGraph, kind: str, bounds, product_region=None, known: Optional[dict] = None
) -> Layout:
    """Assemble a layout from a spatial matrix and a compacted graph.

    ``known`` maps node index to an ObjectRecord used verbatim (its
    category/features still come from ``g``).
    """
    objs = []
    for i in range(g.n):
        if known and i in known:
            k = known[i]
            objs.append(
                ObjectRecord(int(g.C[i]), tuple(int(f) for f in g.F[i]), k.location, k.size, k.rotation, k.style, k.embedding)
            )
            continue
        loc, size, rot = decode_row(np.asarray(L[i], dtype=np.float64), kind, bounds)
        objs.append(ObjectRecord(int(g.C[i]), tuple(int(f) for f in g.F[i]), loc, size, rot))
    return Layout(kind, tuple(bounds), tuple(objs), product_region)
