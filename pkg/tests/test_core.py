import numpy as np
import pytest
from hypothesis import given

from layoutforge import toydata
from layoutforge.core import (
    INVERSE_RELATION,
    NONE_RELATION,
    Instruction,
    Layout,
    ObjectRecord,
    OneHotGraphState,
    RelationTriplet,
    SemanticGraph,
    Vocabularies,
    compact_graph,
    decode_argmax,
    encode_one_hot,
    full_relation_matrix,
    graph_from_layout,
    permute_graph,
    triangle_of,
)
from layoutforge.errors import IndexOutOfRange, MaskResidue, TooManyObjects, ValidationError

from conftest import random_graph, seeds


def obj3(x, y, z=0.5, c=0, size=(0.5, 0.5, 0.5)):
    return ObjectRecord(c, (0, 0), (x, y, z), size)


def test_vocab_reserved_indices_and_widths():
    v = Vocabularies(K_c=3, K_f=5, n_f=2, N_max=4, layout_kind="2D")
    assert (v.empty_c, v.mask_c) == (3, 4)
    assert (v.empty_f, v.mask_f) == (5, 6)
    assert (v.empty_e, v.mask_e) == (11, 12)
    assert v.d_l == 4
    assert Vocabularies(K_c=3, K_f=5, n_f=2, N_max=4, layout_kind="3D").d_l == 8
    with pytest.raises(ValidationError):
        Vocabularies(K_c=0, K_f=5, n_f=2, N_max=4)


def test_inverse_map_is_an_involution():
    inv = np.array(INVERSE_RELATION)
    assert np.array_equal(inv[inv], np.arange(11))
    assert inv[NONE_RELATION] == NONE_RELATION


def test_one_object_layout_has_all_empty_edges(vocab3):
    lay = Layout("3D", (6, 6, 3), (obj3(1, 1),))
    g = graph_from_layout(lay, vocab3)
    assert g.n == 1
    assert np.all(g.E == vocab3.empty_e)


def test_far_apart_objects_relate_by_none(vocab3):
    lay = Layout("3D", (6, 6, 3), (obj3(1, 1), obj3(5, 1)))
    g = graph_from_layout(lay, vocab3)
    assert g.edge(0, 1, vocab3) == NONE_RELATION


def test_too_many_objects(vocab3):
    lay = Layout("3D", (6, 6, 3), tuple(obj3(0.5 + i, 1) for i in range(6)))
    with pytest.raises(TooManyObjects):
        graph_from_layout(lay, vocab3)


def test_toy_layout_graph_matches_generator_graph():
    vocab = toydata.default_vocab("3D")
    for s in toydata.curate("3D", 20, vocab, seed=3):
        assert graph_from_layout(s.layout, vocab) == s.graph


def test_one_hot_rows():
    v = Vocabularies(K_c=3, K_f=2, n_f=1, N_max=2)
    g = SemanticGraph(1, [0, 3], [[1], [2]], [11])
    st = encode_one_hot(g, v)
    assert st.C_t[0].tolist() == [1, 0, 0, 0, 0]
    assert st.C_t[1].tolist() == [0, 0, 0, 1, 0]
    assert st.t == 0


def test_encode_rejects_out_of_range():
    v = Vocabularies(K_c=3, K_f=2, n_f=1, N_max=2)
    with pytest.raises(IndexOutOfRange):
        encode_one_hot(SemanticGraph(1, [4, 3], [[1], [2]], [11]), v)


@given(seeds)
def test_encode_decode_round_trip(seed):
    v = Vocabularies(K_c=4, K_f=6, n_f=3, N_max=6)
    g = random_graph(np.random.default_rng(seed), v)
    assert decode_argmax(encode_one_hot(g, v), v) == g


def test_argmax_tie_breaks_low_and_mask_residue():
    v = Vocabularies(K_c=3, K_f=2, n_f=1, N_max=2)
    g = SemanticGraph(2, [0, 1], [[0], [1]], [0])
    st = encode_one_hot(g, v)
    C = st.C_t.copy()
    C[0] = [0.5, 0.5, 0, 0, 0]
    assert decode_argmax(OneHotGraphState(C, st.F_t, st.E_t), v).C[0] == 0
    C[0] = [0, 0, 0, 0, 1]
    with pytest.raises(MaskResidue):
        decode_argmax(OneHotGraphState(C, st.F_t, st.E_t), v)


@given(seeds)
def test_triangle_full_matrix_round_trip(seed):
    v = Vocabularies(K_c=4, K_f=6, n_f=1, N_max=7)
    g = random_graph(np.random.default_rng(seed), v)
    full = full_relation_matrix(g.E, v.N_max, v)
    assert np.array_equal(triangle_of(full), g.E)
    inv = np.array(v.inverse_map())
    assert np.array_equal(full.T, np.where(np.eye(v.N_max, dtype=bool), full, inv[full]))


@given(seeds)
def test_permutation_then_compaction_is_consistent(seed):
    rng = np.random.default_rng(seed)
    v = Vocabularies(K_c=4, K_f=6, n_f=2, N_max=6)
    g = random_graph(rng, v)
    perm = rng.permutation(v.N_max)
    C, F, E = permute_graph(g, perm, v)
    full_old = full_relation_matrix(g.E, v.N_max, v)
    full_new = full_relation_matrix(E, v.N_max, v)
    for a in range(v.N_max):
        for b in range(v.N_max):
            if a != b:
                assert full_new[a, b] == full_old[perm[a], perm[b]]
    h = compact_graph(C, F, E, v)
    h.validate(v)
    assert h.n == g.n
    assert sorted(h.C[: h.n].tolist()) == sorted(g.C[: g.n].tolist())


def test_graph_validation():
    v = Vocabularies(K_c=3, K_f=2, n_f=1, N_max=3)
    with pytest.raises(ValidationError):
        SemanticGraph(1, [3, 0, 3], [[2], [0], [2]], [11, 11, 11]).validate(v)


def test_layout_bounds_validation(vocab3):
    with pytest.raises(ValidationError):
        graph_from_layout(Layout("3D", (6, 6, 3), (obj3(7, 1),)), vocab3)


def test_serialization_round_trips():
    s = toydata.curate("2D", 2, toydata.default_vocab("2D"), seed=1)[0]
    assert Layout.from_dict(s.layout.to_dict()) == s.layout
    assert SemanticGraph.from_dict(s.graph.to_dict()) == s.graph
    assert Instruction.from_dict(s.instruction.to_dict()) == s.instruction


def test_instruction_rejects_none_relation():
    with pytest.raises(ValidationError):
        Instruction((RelationTriplet(0, NONE_RELATION, 1),))
