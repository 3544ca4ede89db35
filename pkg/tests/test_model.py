import itertools

import numpy as np
import pytest
import torch

from layoutforge import dgauss, toydata
from layoutforge.core import Instruction, RelationTriplet, Vocabularies, full_relation_matrix
from layoutforge.errors import ValidationError
from layoutforge.model import (
    GraphTransformerConfig, TrainConfig, batch_conditions, build_network, condition_encode,
    gradcheck, train_decoder, train_prior,
)
from layoutforge.model.network import AdaLN, Block, FilmGraphAttention, one_hot_inputs
from layoutforge.model.train import Permuter, decoder_loss, graph_schedule, prepare_dataset, prior_loss

TINY_VOCAB = toydata.default_vocab("3D", N_max=4, n_f=1, K_f=8)


@pytest.fixture(scope="module")
def tiny_set():
    return toydata.curate("3D", 8, TINY_VOCAB, seed=3)


def tiny_cfg(variant, d=16, depth=1):
    return GraphTransformerConfig(depth=depth, d=d, heads=2, d_e=8, d_y=64, variant=variant)


def random_prior_inputs(vocab, B=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    N, S = vocab.N_max, vocab.n_slots
    C = torch.randint(0, vocab.K_c + 2, (B, N), generator=g)
    F = torch.randint(0, vocab.K_f + 2, (B, N, vocab.n_f), generator=g)
    E = torch.randint(0, vocab.K_e + 2, (B, S), generator=g)
    return one_hot_inputs(C, F, E, vocab)


def instr(*trip):
    return Instruction(triplets=tuple(RelationTriplet(*t) for t in trip))


def test_config_validation():
    with pytest.raises(ValidationError):
        GraphTransformerConfig(d=10, heads=4)
    with pytest.raises(ValidationError):
        GraphTransformerConfig(variant="other")


def test_condition_encoding():
    e = condition_encode(Instruction())
    assert e.is_null and e.tokens.shape == (1, 64) and not e.tokens.any()
    a = condition_encode(instr((0, 1, 2), (3, 4, 5)))
    b = condition_encode(instr((0, 1, 2), (3, 4, 5)))
    assert a == b and a.tokens.shape == (2, 64)
    c = condition_encode(instr((3, 4, 5), (0, 1, 2)))
    assert np.array_equal(c.tokens, a.tokens[::-1])


def test_prior_output_shapes():
    v = Vocabularies(K_c=6, K_f=64, n_f=4, N_max=8)
    net = build_network(GraphTransformerConfig(depth=1, d=32, heads=4), v).eval()
    C, F, E = random_prior_inputs(v)
    y, pad = batch_conditions([condition_encode(instr((0, 1, 2)))] * 2)
    out = net(C, F, E, torch.tensor([0.5, 1.0]), y, pad)
    assert out["C"].shape == (2, 8, 7)
    assert out["F"].shape == (2, 8, 4, 65)
    assert out["E"].shape == (2, 28, 12)
    assert all(torch.isfinite(x).all() for x in out.values())


def _perturb(net, seed=1):
    # AdaLN modulation starts at zero; randomize it so every pathway is live
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, AdaLN):
                m.mod.weight.copy_(0.1 * torch.randn(m.mod.weight.shape, generator=g))
    return net


def test_prior_condition_sensitivity_and_pe():
    v = TINY_VOCAB
    net = _perturb(build_network(tiny_cfg("prior", 32, 2), v)).eval()
    C, F, E = random_prior_inputs(v, B=1)
    t = torch.tensor([0.4])
    ya, pa = batch_conditions([condition_encode(instr((0, 1, 2)))])
    yb, pb = batch_conditions([condition_encode(instr((3, 0, 1)))])
    with torch.no_grad():
        oa = net(C, F, E, t, ya, pa)
        ob = net(C, F, E, t, yb, pb)
        o2 = net(C, F, E, t, ya, pa, pe_scale=2.0)
    assert (oa["C"] - ob["C"]).abs().max() > 0
    assert (oa["C"] - o2["C"]).abs().max() > 0


def test_decoder_shapes_and_sensitivity():
    v = TINY_VOCAB
    net = _perturb(build_network(tiny_cfg("decoder", 32, 2), v)).eval()
    C, F, E = random_prior_inputs(v, B=2)
    L = torch.randn(2, v.N_max, v.d_l)
    region = torch.zeros(2, 5)
    t = torch.tensor([0.3, 0.9])
    with torch.no_grad():
        out = net(L, t, C, F, E, region)
        C2 = C.clone()
        C2[:, 0] = torch.roll(C2[:, 0], 1, dims=-1)
        out_c = net(L, t, C2, F, E, region)
        out_pe = net(L, t, C, F, E, region, pe_scale=2.0)
    assert out.shape == (2, v.N_max, v.d_l) and torch.isfinite(out).all()
    assert (out - out_c).abs().max() > 0
    assert (out - out_pe).abs().max() > 0


def test_zero_film_is_plain_attention():
    torch.manual_seed(0)
    att = FilmGraphAttention(8, 2, 4)
    for lin in (att.film_s, att.film_b):
        torch.nn.init.zeros_(lin.weight)
        torch.nn.init.zeros_(lin.bias)
    x = torch.randn(1, 5, 8)
    e = torch.randn(1, 5, 5, 4)
    mha = torch.nn.MultiheadAttention(8, 2, batch_first=True)
    with torch.no_grad():
        mha.in_proj_weight.copy_(att.qkv.weight)
        mha.in_proj_bias.copy_(att.qkv.bias)
        mha.out_proj.weight.copy_(att.out.weight)
        mha.out_proj.bias.copy_(att.out.bias)
        ref = mha(x, x, x, need_weights=False)[0]
        assert torch.allclose(att(x, e), ref, atol=1e-6)


def test_adaln_zero_init_is_layer_norm():
    m = AdaLN(6, 4)
    x = torch.randn(2, 3, 6)
    ref = torch.nn.functional.layer_norm(x, (6,))
    assert torch.allclose(m(x, torch.randn(2, 4)), ref, atol=1e-6)


def test_block_is_permutation_equivariant():
    torch.manual_seed(0)
    cfg = tiny_cfg("prior", 16, 1)
    blk = Block(cfg, cross=True).double()
    for p in blk.parameters():
        torch.nn.init.normal_(p, std=0.2)
    N = 5
    x = torch.randn(1, N, 16, dtype=torch.float64)
    e = torch.randn(1, N, N, 8, dtype=torch.float64)
    c = torch.randn(1, 16, dtype=torch.float64)
    y = torch.randn(1, 3, 64, dtype=torch.float64)
    pi = torch.tensor([3, 0, 4, 1, 2])
    xo, eo = blk(x, e, c, y)
    xp, ep = blk(x[:, pi], e[:, pi][:, :, pi], c, y)
    assert torch.allclose(xp, xo[:, pi], atol=1e-10)
    assert torch.allclose(ep, eo[:, pi][:, :, pi], atol=1e-10)


def test_full_network_is_not_permutation_invariant():
    v = Vocabularies(K_c=4, K_f=4, n_f=1, N_max=4)
    net = _perturb(build_network(tiny_cfg("prior", 16, 1), v)).eval()
    C = torch.nn.functional.one_hot(torch.tensor([[0, 1, 2, 3]]), 6).float()
    F = torch.nn.functional.one_hot(torch.tensor([[[0], [1], [2], [3]]]), 6).float()
    E = torch.nn.functional.one_hot(torch.full((1, 6), v.empty_e), 13).float()
    y, pad = batch_conditions([condition_encode(Instruction())])
    pi = torch.tensor([1, 0, 2, 3])  # swapping two nodes leaves the all-EMPTY edges unchanged
    with torch.no_grad():
        a = net(C, F, E, torch.tensor([0.5]), y, pad)["C"]
        b = net(C[:, pi], F[:, pi], E, torch.tensor([0.5]), y, pad)["C"]
        ua = net(C, F, E, torch.tensor([0.5]), y, pad, pe_scale=0.0)["C"]
        ub = net(C[:, pi], F[:, pi], E, torch.tensor([0.5]), y, pad, pe_scale=0.0)["C"]
    assert (a[:, pi] - b).abs().max() > 1e-4
    assert torch.allclose(ua[:, pi], ub, atol=1e-5)


def test_token_order_invariance():
    v = TINY_VOCAB
    net = _perturb(build_network(tiny_cfg("prior", 16, 2), v)).eval()
    C, F, E = random_prior_inputs(v, B=1)
    trips = [(0, 1, 2), (3, 4, 1), (2, 0, 5)]
    with torch.no_grad():
        outs = []
        for order in itertools.permutations(trips):
            y, pad = batch_conditions([condition_encode(instr(*order))])
            outs.append(net(C, F, E, torch.tensor([0.7]), y, pad))
    for o in outs[1:]:
        for k in "CFE":
            assert torch.allclose(o[k], outs[0][k], atol=1e-5)


def test_gradcheck_quadratic():
    a = torch.randn(5, dtype=torch.float64, requires_grad=True)
    b = torch.randn(3, 2, dtype=torch.float64, requires_grad=True)
    A = torch.randn(5, 5, dtype=torch.float64)
    err = gradcheck({"a": a, "b": b}, lambda: a @ A @ a + (b**2).sum() * 3 + b.sum())
    assert err < 1e-6


def test_gradcheck_prior_loss(tiny_set):
    v = TINY_VOCAB
    net = _perturb(build_network(tiny_cfg("prior", 16, 2), v)).double()
    batch = prepare_dataset(tiny_set[:1], v)
    cfg = TrainConfig(T=10)
    gs = graph_schedule(cfg, v)
    t = torch.tensor([4])

    def loss():
        return prior_loss(net, batch, t, gs, cfg, torch.Generator().manual_seed(5))[0]

    assert loss().item() > 0
    assert gradcheck(dict(net.named_parameters()), loss, n_coords=6) < 1e-3


def test_gradcheck_decoder_loss(tiny_set):
    v = TINY_VOCAB
    net = _perturb(build_network(tiny_cfg("decoder", 16, 2), v)).double()
    batch = prepare_dataset(tiny_set[:1], v)
    sched = dgauss.make_schedule(10)
    t = torch.tensor([6])
    eps = torch.randn(batch.L.shape, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    err = gradcheck(dict(net.named_parameters()), lambda: decoder_loss(net, batch, t, eps, sched), n_coords=6)
    assert err < 1e-3


def _losses(model):
    return np.array([r["loss"] for r in model.log])


@pytest.mark.parametrize("kind", ["prior", "decoder"])
def test_overfit_single_layout(tiny_set, kind):
    v = TINY_VOCAB
    cfg = TrainConfig(steps=500, batch_size=8, lr=1e-3, log_every=1, T=20, cond_dropout=0.0)
    fn = train_prior if kind == "prior" else train_decoder
    m = fn(tiny_set[:1], v, cfg, tiny_cfg(kind, 32, 2))
    loss = _losses(m)
    assert loss[-10:].mean() <= 0.5 * loss[:10].mean()


def test_permutation_changes_gradient(tiny_set):
    v = TINY_VOCAB
    net = _perturb(build_network(tiny_cfg("decoder", 16, 1), v))
    batch = prepare_dataset(tiny_set[:1], v)
    sched = dgauss.make_schedule(10)
    t = torch.tensor([5])
    eps = torch.randn(batch.L.shape, generator=torch.Generator().manual_seed(0))
    perm = Permuter(v)
    pi = torch.tensor([[2, 0, 3, 1]])
    pb = perm.apply(batch, pi)
    grads = []
    for b, e in ((batch, eps), (pb, eps[:, pi[0]])):
        net.zero_grad()
        decoder_loss(net, b, t, e, sched).backward()
        grads.append(net.head_eps.weight.grad.clone())
    assert (grads[0] - grads[1]).abs().max() > 1e-6


def test_permuter_keeps_graph_consistent(tiny_set):
    v = TINY_VOCAB
    batch = prepare_dataset(tiny_set, v)
    perm = Permuter(v)
    pi = perm.random(len(batch), torch.Generator().manual_seed(0))
    pb = perm.apply(batch, pi)
    for b in range(len(batch)):
        full = full_relation_matrix(batch.E[b].numpy(), v.N_max, v)
        fullp = full_relation_matrix(pb.E[b].numpy(), v.N_max, v)
        p = pi[b].numpy()
        assert np.array_equal(fullp, full[np.ix_(p, p)])
        assert torch.equal(pb.L[b], batch.L[b, pi[b]])


def test_training_checkpoints_are_deterministic(tiny_set, tmp_path):
    v = TINY_VOCAB
    cfg = TrainConfig(steps=20, batch_size=4, T=10)
    blobs = []
    for run in ("a", "b"):
        d = tmp_path / run
        train_prior(tiny_set, v, cfg, tiny_cfg("prior"), log_path=d / "log.csv", ckpt_dir=d)
        blobs.append(((d / "prior.lfnn").read_bytes(), (d / "log.csv").read_bytes()))
    assert blobs[0] == blobs[1]
    cfg.checkpoint_every_epochs = 2
    train_decoder(tiny_set, v, cfg, tiny_cfg("decoder"), ckpt_dir=tmp_path / "c")
    assert (tmp_path / "c" / "decoder_epoch0002.lfnn").exists()


def test_parameters_finite_through_1000_steps():
    v = toydata.default_vocab("3D", N_max=5, n_f=2, K_f=16)
    data = toydata.curate("3D", 64, v, seed=1)
    cfg = TrainConfig(steps=1000, batch_size=16, T=20)
    m = train_prior(data, v, cfg, tiny_cfg("prior", 32, 2))
    assert all(torch.isfinite(p).all() for p in m.net.parameters())
    assert np.all(np.isfinite(_losses(m)))
