import numpy as np
import pytest
import torch
from hypothesis import settings, strategies as st

from layoutforge.core import SemanticGraph, Vocabularies, triangle_indices

torch.set_num_threads(1)
settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def vocab3():
    return Vocabularies(K_c=6, K_f=8, n_f=2, N_max=5, layout_kind="3D")


def random_graph(rng: np.random.Generator, vocab: Vocabularies, n=None) -> SemanticGraph:
    N = vocab.N_max
    n = int(rng.integers(0, N + 1)) if n is None else n
    C = np.full(N, vocab.empty_c)
    C[:n] = rng.integers(0, vocab.K_c, n)
    F = np.full((N, vocab.n_f), vocab.empty_f)
    F[:n] = rng.integers(0, vocab.K_f, (n, vocab.n_f))
    iu, ju = triangle_indices(N)
    E = np.full(len(iu), vocab.empty_e)
    real = (iu < n) & (ju < n)
    E[real] = rng.integers(0, vocab.K_e, real.sum())
    return SemanticGraph(n, C, F, E)


seeds = st.integers(0, 2**32 - 1)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
