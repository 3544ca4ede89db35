"""Procedural layout/instruction corpora with known ground truth.

Scenes are grown by a placement grammar: the first object lands on a
jittered grid cell, and each further object is attached to an already
placed parent by a chosen relation. Offsets are drawn from the interior of
that relation's distance band and angle bin, so the rule engine recovers the
chosen relation; every draw is checked and redrawn (up to 100 attempts)
otherwise. Graphs are always recomputed by the rule engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import relrules
from .core import INVERSE_RELATION, Instruction, Layout, ObjectRecord, SemanticGraph, Vocabularies, graph_from_layout
from .errors import BadRatios, GrammarFailure, ValidationError
from .model.condition import N_STYLES, embedding_table
from .qfeat.lab import LabBinning, srgb_to_lab

CATEGORIES_3D = ("bed", "nightstand", "wardrobe", "desk", "chair", "lamp")
CATEGORIES_2D = ("title", "text", "underlay", "logo", "button")
STYLE_NAMES = ("modern", "rustic", "minimalist")
UNDERLAY = 2  # category index of the 2D backing panel
LAMP = 5
SUPPORTS = (1, 3)  # nightstand, desk

ROOM_BOUNDS = (6.0, 6.0, 3.0)
CANVAS_BOUNDS = (512.0, 512.0)
FEATURE_NOISE = 0.05
N_FONTS = 8

# full extents (width, depth, height)
SIZES_3D = {
    0: (2.0, 1.6, 0.6),
    1: (0.5, 0.5, 0.6),
    2: (1.2, 0.6, 2.0),
    3: (1.2, 0.6, 0.75),
    4: (0.5, 0.5, 0.9),
    5: (0.3, 0.3, 0.4),
}
SIZES_2D = {0: (300.0, 60.0), 1: (240.0, 40.0), 2: (340.0, 160.0), 3: (80.0, 80.0), 4: (140.0, 44.0)}
# per-style sRGB palettes for the 2D color feature
PALETTES = (
    ((230, 57, 70), (29, 53, 87), (241, 250, 238)),
    ((120, 85, 60), (200, 170, 120), (60, 90, 50)),
    ((20, 20, 20), (200, 200, 200), (90, 110, 140)),
)
ROTATIONS = (0.0, math.pi / 2, -math.pi / 2, -math.pi)
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class Sample:
    layout: Layout
    graph: SemanticGraph
    instruction: Instruction

    def to_record(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "graph": self.graph.to_dict(),
            "instruction": self.instruction.to_dict(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Sample":
        return cls(
            Layout.from_dict(rec["layout"]),
            SemanticGraph.from_dict(rec["graph"]),
            Instruction.from_dict(rec["instruction"]),
        )


def default_vocab(kind: str, N_max: int = 8, n_f: Optional[int] = None, K_f: Optional[int] = None) -> Vocabularies:
    if kind == "3D":
        return Vocabularies(
            K_c=len(CATEGORIES_3D), K_f=K_f or 64, n_f=n_f or 4, N_max=N_max,
            layout_kind="3D", category_names=CATEGORIES_3D,
        )
    if kind == "2D":
        return Vocabularies(
            K_c=len(CATEGORIES_2D), K_f=K_f or LabBinning.default().n_bins, n_f=n_f or 2,
            N_max=N_max, layout_kind="2D", category_names=CATEGORIES_2D,
        )
    raise ValidationError(f"unknown layout kind {kind!r}")


def feature_vector(category: int, style: int, rng: np.random.Generator, dim: int = 32) -> np.ndarray:
    """Synthetic object feature ``class + style + noise`` in the shared table space."""
    tab = embedding_table(dim)
    return tab.class_vector(category) + tab.style_vector(style) + FEATURE_NOISE * rng.standard_normal(dim)


def identity_code(category: int, style: int, vocab: Vocabularies) -> tuple[int, ...]:
    """Placeholder feature indices used before a VQ codebook exists."""
    return (int((category * N_STYLES + style) % vocab.K_f),) * vocab.n_f


# --------------------------------------------------------------------------
# placement grammar


def _band_offset(rel: int, rules: relrules.RelationRuleSet, rng: np.random.Generator):
    """Offset well inside the band/bin of planar relation ``rel`` (0..7)."""
    q = rel % 4
    near, far = rules.near_threshold, rules.far_threshold
    if rel >= 4:
        d = rng.uniform(0.45 * near, 0.9 * near)
    else:
        d = rng.uniform(near + 0.1 * (far - near), far - 0.1 * (far - near))
    center = {relrules.RIGHT: 0.0, relrules.FRONT: math.pi / 2,
              relrules.LEFT: math.pi, relrules.BEHIND: -math.pi / 2}[q]
    theta = center + rng.uniform(-math.pi / 8, math.pi / 8)
    return d * math.cos(theta), d * math.sin(theta)


def _jitter_size(base, rng, spread=0.1):
    return tuple(float(s * rng.uniform(1 - spread, 1 + spread)) for s in base)


def _propose_3d(cat, parent: ObjectRecord, rng, rules) -> tuple[ObjectRecord, int]:
    size = _jitter_size(SIZES_3D[cat], rng)
    rot = ROTATIONS[int(rng.integers(4))]
    if cat == LAMP and parent.category in SUPPORTS and rng.random() < 0.7:
        hx, hy = parent.size[0] / 2, parent.size[1] / 2
        u, v = rng.uniform(-0.5, 0.5) * hx, rng.uniform(-0.5, 0.5) * hy
        c, s = math.cos(parent.rotation), math.sin(parent.rotation)
        x = parent.location[0] + c * u - s * v
        y = parent.location[1] + s * u + c * v
        z = parent.size[2] + 0.02 + size[2] / 2
        return ObjectRecord(cat, (0,), (x, y, z), size, rot), relrules.ABOVE
    rel = int(rng.integers(8))
    dx, dy = _band_offset(rel, rules, rng)
    # the relation is stated from the child (subject) toward the parent (object)
    loc = (parent.location[0] + dx, parent.location[1] + dy, size[2] / 2)
    return ObjectRecord(cat, (0,), loc, size, rot), rel


def _propose_2d(cat, parent: ObjectRecord, rng, rules) -> tuple[ObjectRecord, int]:
    size = _jitter_size(SIZES_2D[cat], rng)
    if parent.category == UNDERLAY and cat != UNDERLAY and rng.random() < 0.6:
        hx, hy = parent.size[0] / 2, parent.size[1] / 2
        x = parent.location[0] + rng.uniform(-0.4, 0.4) * hx
        y = parent.location[1] + rng.uniform(-0.4, 0.4) * hy
        size = (min(size[0], 0.8 * parent.size[0]), min(size[1], 0.8 * parent.size[1]))
        return ObjectRecord(cat, (0,), (x, y), size), relrules.ENCLOSED
    rel = int(rng.integers(8))
    dx, dy = _band_offset(rel, rules, rng)
    return ObjectRecord(cat, (0,), (parent.location[0] + dx, parent.location[1] + dy), size), rel


def _fits(o: ObjectRecord, kind: str, bounds, placed, support=None) -> bool:
    if kind == "3D":
        margin = 0.25
        if not all(margin <= o.location[k] <= bounds[k] - margin for k in range(2)):
            return False
        min_gap = 0.3
    else:
        for k in range(2):
            if o.location[k] - o.size[k] / 2 < 0 or o.location[k] + o.size[k] / 2 > bounds[k]:
                return False
        min_gap = 12.0
    for p in placed:
        if p is support:
            continue
        if math.hypot(o.location[0] - p.location[0], o.location[1] - p.location[1]) < min_gap:
            return False
    return True


def _grow_scene(kind, n, rng, rules):
    bounds = ROOM_BOUNDS if kind == "3D" else CANVAS_BOUNDS
    K = len(CATEGORIES_3D) if kind == "3D" else len(CATEGORIES_2D)
    cats = [int(c) for c in rng.integers(K, size=n)]
    if kind == "3D":
        cell = bounds[0] / 6
        gx, gy = rng.integers(1, 5, size=2)
        loc0 = ((gx + 0.5) * cell + rng.uniform(-0.2, 0.2), (gy + 0.5) * cell + rng.uniform(-0.2, 0.2))
        size = _jitter_size(SIZES_3D[cats[0]], rng)
        first = ObjectRecord(cats[0], (0,), (*loc0, size[2] / 2), size, ROTATIONS[int(rng.integers(4))])
    else:
        cell = bounds[0] / 8
        gx, gy = rng.integers(2, 6, size=2)
        size = _jitter_size(SIZES_2D[cats[0]], rng)
        first = ObjectRecord(cats[0], (0,), ((gx + 0.5) * cell, (gy + 0.5) * cell), size)
    if not _fits(first, kind, bounds, []):
        return None
    placed = [first]
    links = []
    for i in range(1, n):
        supports = [k for k, p in enumerate(placed) if p.category in SUPPORTS]
        for _ in range(20):
            if kind == "3D" and cats[i] == LAMP and supports and rng.random() < 0.8:
                parent_idx = supports[int(rng.integers(len(supports)))]
            else:
                parent_idx = int(rng.integers(len(placed)))
            propose = _propose_3d if kind == "3D" else _propose_2d
            parent = placed[parent_idx]
            child, rel = propose(cats[i], parent, rng, rules)
            support = parent if rel == relrules.ABOVE and kind == "3D" else None
            if relrules.classify_relation(child, parent, rules) != rel:
                continue
            if _fits(child, kind, bounds, placed, support):
                placed.append(child)
                links.append((i, parent_idx, rel))
                break
        else:
            return None
    return placed, links


def _product_region(objects, rng) -> tuple:
    w, h = rng.uniform(120, 240, size=2)
    x0, y0 = rng.uniform(0, CANVAS_BOUNDS[0] - w), rng.uniform(0, CANVAS_BOUNDS[1] - h)
    return (float(x0), float(y0), float(x0 + w), float(y0 + h))


def _assign_features(objects, kind, vocab, rng, quantizer, styles):
    out = []
    for o in objects:
        s = styles[o.category]
        if kind == "3D":
            emb = feature_vector(o.category, s, rng)
            feats = identity_code(o.category, s, vocab)
            out.append(ObjectRecord(o.category, feats, o.location, o.size, o.rotation, s, tuple(emb)))
        else:
            palette = PALETTES[s]
            base = np.array(palette[int(rng.integers(len(palette)))], dtype=float)
            rgb = np.clip(np.rint(base + rng.uniform(-6, 6, size=3)), 0, 255)
            color = int(LabBinning.default().quantize(srgb_to_lab(rgb)))
            font = int(rng.integers(N_FONTS)) if vocab.n_f > 1 else 0
            feats = ((color, font) + (0,) * max(0, vocab.n_f - 2))[: vocab.n_f]
            out.append(ObjectRecord(o.category, feats, o.location, o.size, o.rotation, s, None))
    if quantizer is not None and kind == "3D":
        codes = quantizer.quantize(np.array([o.embedding for o in out]))
        out = [ObjectRecord(o.category, tuple(c), o.location, o.size, o.rotation, o.style, o.embedding)
               for o, c in zip(out, codes)]
    return out


def _instruction(layout, styles, rng, kind, style_prob=0.5) -> Instruction:
    truth = sorted(relrules.extract_triplets(layout), key=lambda t: (t.subject, t.relation, t.object))
    first = truth[int(rng.integers(len(truth)))]
    inverse = relrules.RelationTriplet(first.object, INVERSE_RELATION[first.relation], first.subject)
    rest = [t for t in truth if t != first and t != inverse]
    triplets = (first,)
    if rest and rng.random() < 0.5:
        triplets = tuple(sorted((first, rest[int(rng.integers(len(rest)))]),
                                key=lambda t: (t.subject, t.relation, t.object)))
    tags = ()
    if rng.random() < style_prob:
        cats = sorted({c for t in triplets for c in (t.subject, t.object)})
        tags = tuple((c, styles[c]) for c in cats)
    names = CATEGORIES_3D if kind == "3D" else CATEGORIES_2D
    return relrules.make_instruction(triplets, tags, rng, kind=kind, category_names=names, style_names=STYLE_NAMES)


def generate_sample(kind: str, vocab: Vocabularies, rules, rng: np.random.Generator, quantizer=None) -> Sample:
    bounds = ROOM_BOUNDS if kind == "3D" else CANVAS_BOUNDS
    n = int(rng.integers(3, min(8, vocab.N_max) + 1))
    for _ in range(MAX_ATTEMPTS):
        grown = _grow_scene(kind, n, rng, rules)
        if grown is None:
            continue
        objects, links = grown
        styles = {c: int(rng.integers(N_STYLES)) for c in range(vocab.K_c)}
        objects = _assign_features(objects, kind, vocab, rng, quantizer, styles)
        region = _product_region(objects, rng) if kind == "2D" else None
        layout = Layout(kind, bounds, tuple(objects), region)
        if not all(relrules.classify_relation(objects[i], objects[p], rules) == rel for i, p, rel in links):
            continue
        graph = graph_from_layout(layout, vocab, rules)
        if np.count_nonzero(graph.E[graph.E < vocab.K_e] != relrules.NONE_RELATION) < 2:
            continue
        return Sample(layout, graph, _instruction(layout, styles, rng, kind))
    raise GrammarFailure(f"placement grammar failed {MAX_ATTEMPTS} times")


def curate(kind: str, n_samples: int, vocab: Optional[Vocabularies] = None, rules=None,
           seed: int = 0, quantizer=None) -> list[Sample]:
    """Generate ``n_samples`` (layout, graph, instruction) triples.

    Sample ``i`` uses its own generator seeded with ``(seed, i)``, so corpora
    of different lengths share prefixes and generation order does not matter.
    Without a ``quantizer`` 3D features carry :func:`identity_code`
    placeholders; see :func:`requantize`.
    """
    vocab = vocab or default_vocab(kind)
    if vocab.layout_kind != kind:
        raise ValidationError("vocabulary kind does not match the requested corpus kind")
    if kind == "2D" and vocab.K_c <= UNDERLAY:
        raise ValidationError("2D vocabularies need an underlay category")
    if vocab.K_c < 4:
        raise ValidationError("toy corpora need K_c >= 4")
    rules = rules or relrules.RelationRuleSet.default(kind)
    return [generate_sample(kind, vocab, rules, np.random.default_rng([seed, i]), quantizer) for i in range(n_samples)]


def requantize(corpus: Sequence[Sample], quantizer, vocab: Vocabularies) -> list[Sample]:
    """Replace 3D feature indices by VQ codes of each object's embedding."""
    out = []
    for s in corpus:
        emb = np.array([o.embedding for o in s.layout.objects])
        codes = quantizer.quantize(emb)
        objs = tuple(
            ObjectRecord(o.category, tuple(int(v) for v in c), o.location, o.size, o.rotation, o.style, o.embedding)
            for o, c in zip(s.layout.objects, codes)
        )
        layout = Layout(s.layout.kind, s.layout.bounds, objs, s.layout.product_region)
        F = np.array(s.graph.F)
        F[: s.graph.n] = codes
        out.append(Sample(layout, SemanticGraph(s.graph.n, s.graph.C, F, s.graph.E), s.instruction))
    return out


def feature_matrix(corpus: Sequence[Sample]) -> np.ndarray:
    return np.array([o.embedding for s in corpus for o in s.layout.objects])


def split(corpus: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list, ...]:
    """Seeded disjoint partition; sizes are rounded, the last part takes the rest."""
    ratios = tuple(float(r) for r in ratios)
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"split ratios must be non-negative and sum to 1, got {ratios}")
    n = len(corpus)
    perm = np.random.default_rng(seed).permutation(n)
    sizes = [int(round(r * n)) for r in ratios[:-1]]
    if sum(sizes) > n:
        raise BadRatios("rounded split sizes exceed the corpus")
    parts, start = [], 0
    for s in sizes + [n - sum(sizes)]:
        parts.append([corpus[int(i)] for i in perm[start : start + s]])
        start += s
    return tuple(parts)
