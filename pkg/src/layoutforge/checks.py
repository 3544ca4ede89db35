"""Standalone numerical checks of the diffusion kernels.

These mirror the property tests and run without any trained model, so the
schedule math can be validated before training (``layoutforge schedule-check``).
Each oracle is computed by a route independent of the closed forms: explicit
matrix products for marginals, trajectory enumeration for posteriors.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from . import dcat, dgauss


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3g} (tol {self.tolerance:g}, {self.seconds:.2f}s)"

    def to_dict(self) -> dict:
        return asdict(self)


def _timed(name, tol, fn, le=True):
    t0 = time.perf_counter()
    v = float(fn())
    ok = v <= tol if le else v >= tol
    return CheckResult(name, ok, v, tol, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# oracles


def product_marginal(x0: int, t: int, sched) -> np.ndarray:
    """``Q_t ... Q_1 e_{x0}`` by explicit matrix products."""
    v = np.zeros(sched.K + 1)
    v[x0] = 1.0
    for s in range(1, t + 1):
        v = dcat.transition_matrix(sched, s) @ v
    return v


def enumerated_posterior(x_t: int, x0: int, t: int, sched) -> np.ndarray:
    """``q(x_{t-1} | x_t, x0)`` by summing over every trajectory ``x_1..x_t``."""
    n = sched.K + 1
    Q = [None] + [dcat.transition_matrix(sched, s) for s in range(1, t + 1)]
    out = np.zeros(n)
    for path in itertools.product(range(n), repeat=t):
        if path[-1] != x_t:
            continue
        p, prev = 1.0, x0
        for s, x in enumerate(path, start=1):
            p *= Q[s][x, prev]
            prev = x
        out[path[-2] if t > 1 else x0] += p
    return out / out.sum()


# --------------------------------------------------------------------------
# checks


SCHEDULE_GRID = [(T, K, eta) for T in range(1, 9) for K in range(2, 6) for eta in (0.0, 0.05, 0.3)]


def column_sum_deviation(grid=SCHEDULE_GRID, variants=("independent-mask", "uniform")) -> float:
    worst = 0.0
    for variant in variants:
        for T, K, eta in grid:
            s = dcat.build_schedule(T, K, eta, variant)
            for t in range(1, T + 1):
                worst = max(worst, np.abs(dcat.transition_matrix(s, t).sum(0) - 1).max())
    return worst


def forward_marginal_deviation(grid=SCHEDULE_GRID) -> float:
    worst = 0.0
    for T, K, eta in grid:
        s = dcat.build_schedule(T, K, eta)
        for t in range(T + 1):
            for x0 in range(K):
                worst = max(worst, np.abs(dcat.forward_marginal(x0, t, s) - product_marginal(x0, t, s)).max())
    return worst


def posterior_deviation(K: int = 3, T: int = 4, etas=(0.0, 0.05, 0.3)) -> float:
    worst = 0.0
    for eta in etas:
        s = dcat.build_schedule(T, K, eta)
        for t in range(1, T + 1):
            for x0 in range(K):
                for x_t in range(K + 1):
                    if dcat.forward_marginal(x0, t, s)[x_t] <= 0:
                        continue
                    dev = np.abs(dcat.posterior(x_t, x0, t, s) - enumerated_posterior(x_t, x0, t, s)).max()
                    worst = max(worst, dev)
    return worst


def categorical_oracle_recovery(trials: int = 1000, T: int = 20, sizes=(7, 65, 12), slots=(8, 32, 28),
                                seed: int = 0) -> float:
    """Fraction of random graphs recovered exactly by an oracle reverse chain with eta = 0.

    Each trial is one graph with three families (category, feature, edge
    slots); the oracle denoiser puts all weight on the true clean state.
    """
    gen = torch.Generator().manual_seed(seed)
    exact = torch.ones(trials, dtype=torch.bool)
    for K, n in zip(sizes, slots):
        s = dcat.build_schedule(T, K, 0.0)
        x0 = torch.randint(0, K, (trials, n), generator=gen)
        w = torch.nn.functional.one_hot(x0, K).to(torch.float64)
        x = torch.full_like(x0, K)
        for t in range(T, 0, -1):
            p = dcat.mixture_posterior_batch(x, w, torch.full((trials,), t), s)
            x = dcat.sample_categorical(p, gen)
        exact &= (x == x0).all(-1)
    return float(exact.float().mean())


def gaussian_replay_error(T: int = 10, n: int = 64, d: int = 8, seed: int = 0, kind: str = "cosine") -> float:
    """Max abs error of an oracle-eps reverse chain with a fixed shared noise sequence."""
    rng = np.random.default_rng(seed)
    sched = dgauss.make_schedule(T, kind)
    L0 = rng.uniform(-1, 1, size=(n, d))
    noises = rng.standard_normal((T + 1, n, d))
    L = noises[T]
    for t in range(T, 0, -1):
        ab = sched.alpha_bar[t]
        eps = (L - np.sqrt(ab) * L0) / np.sqrt(1 - ab)
        L = dgauss.ddpm_step(L, eps, t, sched, noise=noises[t - 1])
    return float(np.abs(L - L0).max())


def run_all() -> list[CheckResult]:
    return [
        _timed("column sums", 1e-9, column_sum_deviation),
        _timed("forward marginal vs matrix product", 1e-10, forward_marginal_deviation),
        _timed("posterior vs trajectory enumeration", 1e-10, posterior_deviation),
        _timed("categorical oracle recovery", 1.0, categorical_oracle_recovery, le=False),
        _timed("gaussian shared-noise replay", 1e-5, gaussian_replay_error),
    ]
