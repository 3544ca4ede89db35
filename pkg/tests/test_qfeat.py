import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from layoutforge import io, toydata
from layoutforge.errors import OutOfGamut, ValidationError
from layoutforge.qfeat import (
    Codebook,
    LabBinning,
    VqConfig,
    VqModel,
    lab_dequantize,
    lab_quantize,
    lab_to_srgb,
    srgb_to_lab,

    train_vq,
    vq_losses,
    vq_nearest,
)
from layoutforge.qfeat.lab import AB_WIDTH, L_WIDTH
from layoutforge.qfeat.vq import straight_through

# D65 reference values from standard conversion tables (Lab of sRGB primaries)
REFERENCE = {
    (255, 0, 0): (53.2408, 80.0925, 67.2032),
    (0, 255, 0): (87.7347, -86.1827, 83.1793),
    (0, 0, 255): (32.2970, 79.1875, -107.8602),
    (128, 128, 128): (53.5850, 0.0, 0.0),
}


def test_black_and_white():
    assert np.allclose(srgb_to_lab((0, 0, 0)), 0.0, atol=1e-12)
    L, a, b = srgb_to_lab((255, 255, 255))
    assert abs(L - 100) < 1e-3 and abs(a) < 0.5 and abs(b) < 0.5


@pytest.mark.parametrize("rgb,lab", REFERENCE.items())
def test_reference_conversions(rgb, lab):
    assert np.allclose(srgb_to_lab(rgb), lab, atol=0.02)


def test_round_trip_random_colors():
    rgb = np.random.default_rng(0).integers(0, 256, (1000, 3))
    assert np.abs(lab_to_srgb(srgb_to_lab(rgb)) - rgb).max() <= 1


def test_binning_covers_srgb_at_stride_8():
    b = LabBinning.default()
    g = np.arange(0, 256, 8)
    rgb = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    idx = b.quantize(srgb_to_lab(rgb))
    assert idx.min() >= 0 and idx.max() < b.n_bins


def test_bin_fixed_points_and_identity():
    b = LabBinning.default()
    idx = np.arange(b.n_bins)
    assert np.array_equal(b.quantize(b.dequantize(idx)), idx)
    c = lab_dequantize(17)
    assert lab_quantize(c) == 17
    assert lab_quantize(c + [L_WIDTH * 0.2, AB_WIDTH * 0.2, -AB_WIDTH * 0.2]) == 17


def test_out_of_gamut():
    with pytest.raises(OutOfGamut):
        lab_quantize((50.0, 200.0, 0.0))
    with pytest.raises(OutOfGamut):
        lab_quantize((95.0, -100.0, -100.0))


def test_vq_nearest_examples():
    e = np.eye(5)
    cb = Codebook(e)
    assert vq_nearest(e[3], cb) == 3
    assert vq_nearest((e[0] + e[1]) / 2, cb) == 0


@given(st.integers(0, 10**6))
def test_vq_nearest_matches_scan_and_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    cb = Codebook(rng.normal(size=(16, 4)))
    z = rng.normal(size=4)
    d = [float(np.sum((z - e) ** 2)) for e in cb.entries]
    k = vq_nearest(z, cb)
    assert k == min(range(16), key=lambda i: (d[i], i))
    assert vq_nearest(cb.lookup(k), cb) == k


def test_codebook_validation():
    with pytest.raises(ValidationError):
        Codebook(np.zeros((1, 4)))
    with pytest.raises(ValidationError):
        Codebook(np.array([[0.0, np.nan], [1.0, 1.0]]))


def test_vq_losses_values_and_routing():
    z = torch.randn(5, 3, requires_grad=True)
    e = torch.randn(5, 3, requires_grad=True)
    cb, cm = vq_losses(z, e)
    assert torch.allclose(cb, cm)
    cb.backward()
    assert z.grad is None and e.grad is not None
    zero = vq_losses(e.detach(), e.detach())
    assert float(zero[0]) == 0.0 and float(zero[1]) == 0.0


def test_straight_through_gradient_is_identity():
    entries = torch.tensor([[0.0, 0.0], [1.0, 1.0]], dtype=torch.float64)
    w = torch.tensor([0.3, -0.7], dtype=torch.float64)

    def f(z):
        k = int(((z.detach() - entries) ** 2).sum(-1).argmin())
        return (straight_through(z, entries[k]) * w).sum() + (z**2).sum() * 0.0

    z = torch.tensor([0.2, 0.1], dtype=torch.float64, requires_grad=True)
    f(z).backward()
    # finite differences of the identity-mapped decoder input, i.e. w
    h = 1e-6
    num = [((z.detach() + h * d) * w).sum() - ((z.detach() - h * d) * w).sum() for d in torch.eye(2, dtype=torch.float64)]
    assert torch.allclose(z.grad, torch.stack(num) / (2 * h))


def test_train_vq_recovers_separable_clusters():
    rng = np.random.default_rng(0)
    X = np.repeat(rng.normal(size=(8, 8)), 16, axis=0)
    initial = train_vq(X, VqConfig(K_f=8, n_f=1, steps=0, batch_size=64)).reconstruction_error(X)
    final = train_vq(X, VqConfig(K_f=8, n_f=1, steps=600, batch_size=64)).reconstruction_error(X)
    assert final < 0.1 * initial


def test_train_vq_single_vector():
    X = np.repeat(np.random.default_rng(1).normal(size=(1, 8)), 16, axis=0)
    m = train_vq(X, VqConfig(K_f=4, n_f=1, steps=200, batch_size=16))
    assert m.reconstruction_error(X) < 1e-4


def test_train_vq_validation_curve_and_determinism(tmp_path):
    vocab = toydata.default_vocab("3D")
    corpus = toydata.curate("3D", 300, vocab, seed=0)
    tr, va, _ = toydata.split(corpus, (0.8, 0.2, 0.0), seed=0)
    cfg = VqConfig(steps=300, eval_every=100, batch_size=64)
    a = train_vq(toydata.feature_matrix(tr), cfg, toydata.feature_matrix(va))
    errs = [h[2] for h in a.history[:3]]
    assert len(errs) == 3 and all(np.isfinite(errs))
    for prev, nxt in zip(errs, errs[1:]):
        assert nxt <= prev * 1.05
    b = train_vq(toydata.feature_matrix(tr), cfg, toydata.feature_matrix(va))
    assert np.array_equal(a.codebook.entries, b.codebook.entries)
    a.save(tmp_path / "vq")
    c = VqModel.load(tmp_path / "vq")
    X = toydata.feature_matrix(va)
    assert np.array_equal(c.quantize(X), a.quantize(X))
    raw = (tmp_path / "vq.lfvq").read_bytes()
    assert raw[:5] == b"LFVQ1"
    entries, usage, n_f = io.decode_codebook(raw)
    assert entries.shape == a.codebook.entries.shape and n_f == cfg.n_f


def test_train_vq_needs_enough_vectors():
    with pytest.raises(ValidationError):
        train_vq(np.zeros((3, 8)), VqConfig(K_f=8))
