"""Finite-difference gradient checks for the training objectives."""

from __future__ import annotations

from typing import Callable, Mapping, Optional

import numpy as np
import torch

STEP = 1e-4
TINY = 1e-10  # coordinates whose analytic and numeric gradients are both below this are skipped


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(params: Mapping[str, torch.Tensor], loss_fn: Callable[[], torch.Tensor], n_coords: int = 24,
              step: float = STEP, seed: int = 0) -> float:
    """Max relative error between autograd and central differences.

    ``params`` maps names to float64 leaf tensors with ``requires_grad``;
    ``loss_fn`` must be a deterministic function of them. ``n_coords``
    coordinates are drawn per tensor (all of them if the tensor is smaller).
    """
    names = list(params)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [params[k] for k in names], allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, g in zip(names, grads):
        p = params[name]
        g = torch.zeros_like(p) if g is None else g
        flat, gflat = p.data.view(-1), g.reshape(-1)
        k = min(n_coords, flat.numel())
        for i in rng.choice(flat.numel(), size=k, replace=False):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + step
                up = loss_fn().item()
                flat[i] = old - step
                down = loss_fn().item()
                flat[i] = old
            numeric = (up - down) / (2 * step)
            analytic = gflat[i].item()
            if abs(analytic) < TINY and abs(numeric) < TINY:
                continue
            worst = max(worst, relative_error(analytic, numeric))
    return worst


def named_subset(module: torch.nn.Module, prefixes: Optional[tuple] = None) -> dict:
    """Parameters whose path starts with one of ``prefixes`` (all if None)."""
    return {k: p for k, p in module.named_parameters() if prefixes is None or k.startswith(prefixes)}
