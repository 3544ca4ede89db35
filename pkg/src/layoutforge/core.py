"""Domain types, vocabularies and layout <-> graph bookkeeping.

Every categorical family of size ``K`` (categories, feature codes, relation
labels) gets two reserved states appended: ``EMPTY = K`` and ``MASK = K + 1``,
so one-hot rows have width ``K + 2``. Edges are stored as the strict upper
triangle of the relation matrix, in ``numpy.triu_indices(N, 1)`` order; the
lower triangle is recovered with the fixed inverse-relation map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import IndexOutOfRange, MaskResidue, TooManyObjects, ValidationError

SCHEMA = "layoutforge/1"

RELATIONS_3D = (
    "left of",
    "right of",
    "in front of",
    "behind",
    "closely left of",
    "closely right of",
    "closely in front of",
    "closely behind",
    "above",
    "below",
    "none",
)
RELATIONS_2D = (
    "left of",
    "right of",
    "above",
    "below",
    "closely left of",
    "closely right of",
    "closely above",
    "closely below",
    "enclosing",
    "enclosed with",
    "none",
)
NONE_RELATION = 10
# label(o, s) == INVERSE_RELATION[label(s, o)]; identical for both kinds.
INVERSE_RELATION = (1, 0, 3, 2, 5, 4, 7, 6, 9, 8, 10)

KINDS = ("2D", "3D")


def relation_names(kind: str) -> tuple[str, ...]:
    return RELATIONS_2D if kind == "2D" else RELATIONS_3D


@dataclass(frozen=True)
class Vocabularies:
    K_c: int
    K_f: int
    n_f: int
    N_max: int
    layout_kind: str = "3D"
    K_e: int = 11
    category_names: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("K_c", "K_f", "K_e", "n_f", "N_max"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.layout_kind not in KINDS:
            raise ValidationError(f"layout_kind must be one of {KINDS}")
        if self.category_names and len(self.category_names) != self.K_c:
            raise ValidationError("category_names must have K_c entries")

    @property
    def d_l(self) -> int:
        return 4 if self.layout_kind == "2D" else 8

    @property
    def n_slots(self) -> int:
        return self.N_max * (self.N_max - 1) // 2

    # reserved indices per family
    @property
    def empty_c(self) -> int:
        return self.K_c

    @property
    def mask_c(self) -> int:
        return self.K_c + 1

    @property
    def empty_f(self) -> int:
        return self.K_f

    @property
    def mask_f(self) -> int:
        return self.K_f + 1

    @property
    def empty_e(self) -> int:
        return self.K_e

    @property
    def mask_e(self) -> int:
        return self.K_e + 1

    def inverse_map(self) -> np.ndarray:
        """Inverse-relation permutation over all ``K_e + 2`` edge states."""
        if self.K_e == len(INVERSE_RELATION):
            inv = list(INVERSE_RELATION)
        else:
            inv = list(range(self.K_e))
        return np.array(inv + [self.K_e, self.K_e + 1], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "K_c": self.K_c,
            "K_f": self.K_f,
            "K_e": self.K_e,
            "n_f": self.n_f,
            "N_max": self.N_max,
            "layout_kind": self.layout_kind,
            "category_names": list(self.category_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabularies":
        d = dict(d)
        d["category_names"] = tuple(d.get("category_names", ()))
        return cls(**d)


@dataclass(frozen=True)
class ObjectRecord:
    """One object: a box with category and discrete feature identity.

    ``location`` is the box center; ``size`` holds full extents (width,
    depth[, height]). ``style`` and ``embedding`` are optional metadata used
    by the synthetic data path (the continuous feature that the VQ stage
    quantizes into ``features``).
    """

    category: int
    features: tuple[int, ...]
    location: tuple[float, ...]
    size: tuple[float, ...]
    rotation: float = 0.0
    style: Optional[int] = None
    embedding: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        object.__setattr__(self, "location", tuple(float(v) for v in self.location))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "rotation", float(self.rotation))
        if self.embedding is not None:
            object.__setattr__(self, "embedding", tuple(float(v) for v in self.embedding))
        if len(self.location) not in (2, 3) or len(self.size) != len(self.location):
            raise ValidationError("location/size must both have 2 or 3 components")
        if any(not s > 0 for s in self.size):
            raise ValidationError(f"size components must be > 0, got {self.size}")
        if not -np.pi <= self.rotation < np.pi:
            raise ValidationError(f"rotation {self.rotation} outside [-pi, pi)")

    def to_dict(self) -> dict:
        d = {
            "category": self.category,
            "features": list(self.features),
            "location": list(self.location),
            "size": list(self.size),
            "rotation": self.rotation,
        }
        if self.style is not None:
            d["style"] = self.style
        if self.embedding is not None:
            d["embedding"] = list(self.embedding)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectRecord":
        emb = d.get("embedding")
        return cls(
            category=int(d["category"]),
            features=tuple(d["features"]),
            location=tuple(d["location"]),
            size=tuple(d["size"]),
            rotation=float(d.get("rotation", 0.0)),
            style=d.get("style"),
            embedding=None if emb is None else tuple(emb),
        )


@dataclass(frozen=True)
class Layout:
    """A 2D canvas or 3D room.

    ``bounds`` are extents measured from the origin: ``(width, height)`` for
    a canvas (y pointing up) or ``(x, y, z)`` for a room. ``product_region``
    is ``(x0, y0, x1, y1)`` and only meaningful for 2D.
    """

    kind: str
    bounds: tuple[float, ...]
    objects: tuple[ObjectRecord, ...] = ()
    product_region: Optional[tuple[float, float, float, float]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}")
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.product_region is not None:
            object.__setattr__(
                self, "product_region", tuple(float(v) for v in self.product_region)
            )
        dim = 2 if self.kind == "2D" else 3
        if len(self.bounds) != dim:
            raise ValidationError(f"{self.kind} layouts need {dim} bounds")
        for o in self.objects:
            if len(o.location) != dim:
                raise ValidationError("object dimensionality does not match layout kind")

    def validate(self, tol: float = 1e-6) -> None:
        for i, o in enumerate(self.objects):
            for v, b in zip(o.location, self.bounds):
                if v < -tol or v > b + tol:
                    raise ValidationError(f"object {i} location {o.location} outside bounds")

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "bounds": list(self.bounds),
            "objects": [o.to_dict() for o in self.objects],
        }
        if self.product_region is not None:
            d["product_region"] = list(self.product_region)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        pr = d.get("product_region")
        return cls(
            kind=d["kind"],
            bounds=tuple(d["bounds"]),
            objects=tuple(ObjectRecord.from_dict(o) for o in d["objects"]),
            product_region=None if pr is None else tuple(pr),
        )


def _frozen(a, dtype=np.int64) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SemanticGraph:
    n: int
    C: np.ndarray
    F: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", _frozen(self.C))
        object.__setattr__(self, "F", _frozen(self.F))
        object.__setattr__(self, "E", _frozen(self.E))

    @property
    def N_max(self) -> int:
        return self.C.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SemanticGraph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.C, other.C)
            and np.array_equal(self.F, other.F)
            and np.array_equal(self.E, other.E)
        )

    def __hash__(self):
        return hash((self.n, self.C.tobytes(), self.F.tobytes(), self.E.tobytes()))

    def __repr__(self):
        return f"SemanticGraph(n={self.n}, C={self.C.tolist()}, E={self.E.tolist()})"

    def edge(self, i: int, j: int, vocab: Vocabularies) -> int:
        """Relation of node ``i`` (subject) to node ``j`` (object)."""
        return int(full_relation_matrix(self.E, self.N_max, vocab)[i, j])

    def validate(self, vocab: Vocabularies) -> None:
        N = vocab.N_max
        if self.C.shape != (N,) or self.F.shape != (N, vocab.n_f) or self.E.shape != (vocab.n_slots,):
            raise IndexOutOfRange("graph arrays do not match vocabulary shapes")
        if not 0 <= self.n <= N:
            raise IndexOutOfRange(f"n={self.n} outside [0, {N}]")
        for arr, K in ((self.C, vocab.K_c), (self.F, vocab.K_f), (self.E, vocab.K_e)):
            if arr.size and (arr.min() < 0 or arr.max() > K):
                raise IndexOutOfRange("graph index outside [0, K] (MASK is not a graph value)")
        if np.any(self.C[: self.n] == vocab.empty_c) or np.any(self.C[self.n :] != vocab.empty_c):
            raise ValidationError("real nodes must precede EMPTY padding")
        if np.any(self.F[self.n :] != vocab.empty_f):
            raise ValidationError("padding nodes must carry EMPTY features")
        iu, ju = triangle_indices(N)
        pad = (iu >= self.n) | (ju >= self.n)
        if np.any(self.E[pad] != vocab.empty_e):
            raise ValidationError("edges touching padding must be EMPTY")

    def to_dict(self) -> dict:
        return {"n": self.n, "C": self.C.tolist(), "F": self.F.tolist(), "E": self.E.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SemanticGraph":
        return cls(n=int(d["n"]), C=d["C"], F=d["F"], E=d["E"])


@dataclass(frozen=True, eq=False)
class OneHotGraphState:
    C_t: np.ndarray  # (N, K_c + 2)
    F_t: np.ndarray  # (N, n_f, K_f + 2)
    E_t: np.ndarray  # (S, K_e + 2)
    t: int = 0


@dataclass(frozen=True)
class RelationTriplet:
    subject: int
    relation: int
    object: int

    def __post_init__(self):
        if not 0 <= self.relation < len(RELATIONS_3D):
            raise ValidationError(f"relation index {self.relation} is not one of the 11 labels")

    def to_dict(self) -> dict:
        return {"subject": self.subject, "relation": self.relation, "object": self.object}

    @classmethod
    def from_dict(cls, d: dict) -> "RelationTriplet":
        return cls(int(d["subject"]), int(d["relation"]), int(d["object"]))


@dataclass(frozen=True)
class Instruction:
    """Structured relation triplets, optional per-category styles, rendered text."""

    triplets: tuple[RelationTriplet, ...] = ()
    style_tags: tuple[tuple[int, int], ...] = ()  # (category, style) pairs
    text: str = ""

    def __post_init__(self):
        object.__setattr__(self, "triplets", tuple(self.triplets))
        tags = self.style_tags
        if isinstance(tags, dict):
            tags = sorted(tags.items())
        object.__setattr__(self, "style_tags", tuple((int(c), int(s)) for c, s in tags))
        for tr in self.triplets:
            if tr.relation == NONE_RELATION:
                raise ValidationError("instruction triplets cannot use the 'none' relation")

    @property
    def is_empty(self) -> bool:
        return not self.triplets and not self.style_tags

    def style_of(self, category: int) -> Optional[int]:
        for c, s in self.style_tags:
            if c == category:
                return s
        return None

    def to_dict(self) -> dict:
        return {
            "triplets": [t.to_dict() for t in self.triplets],
            "style_tags": [list(p) for p in self.style_tags],
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instruction":
        return cls(
            triplets=tuple(RelationTriplet.from_dict(t) for t in d.get("triplets", ())),
            style_tags=tuple(tuple(p) for p in d.get("style_tags", ())),
            text=d.get("text", ""),
        )


# --------------------------------------------------------------------------
# triangle bookkeeping


def triangle_indices(N: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(N, 1)


def full_relation_matrix(E: np.ndarray, N: int, vocab: Vocabularies) -> np.ndarray:
    """Rebuild the N x N relation matrix; the diagonal is EMPTY."""
    inv = vocab.inverse_map()
    full = np.full((N, N), vocab.empty_e, dtype=np.int64)
    iu, ju = triangle_indices(N)
    E = np.asarray(E, dtype=np.int64)
    full[iu, ju] = E
    full[ju, iu] = inv[E]
    return full


def triangle_of(full: np.ndarray) -> np.ndarray:
    iu, ju = triangle_indices(full.shape[0])
    return np.asarray(full)[iu, ju]


def permute_graph(g: SemanticGraph, perm: Sequence[int], vocab: Vocabularies) -> tuple:
    """Reorder node slots: new slot ``k`` holds old node ``perm[k]``.

    Returns raw ``(C, F, E)`` arrays because the result generally violates
    the prefix-compaction invariant of :class:`SemanticGraph`.
    """
    perm = np.asarray(perm)
    full = full_relation_matrix(g.E, g.N_max, vocab)
    return g.C[perm], g.F[perm], triangle_of(full[np.ix_(perm, perm)])


# --------------------------------------------------------------------------
# operations


def graph_from_layout(layout: Layout, vocab: Vocabularies, rules=None) -> SemanticGraph:
    from . import relrules

    n = len(layout.objects)
    if n > vocab.N_max:
        raise TooManyObjects(f"{n} objects exceed N_max={vocab.N_max}")
    layout.validate()
    if rules is None:
        rules = relrules.RelationRuleSet.default(layout.kind)
    N = vocab.N_max
    C = np.full(N, vocab.empty_c, dtype=np.int64)
    F = np.full((N, vocab.n_f), vocab.empty_f, dtype=np.int64)
    for i, o in enumerate(layout.objects):
        if len(o.features) != vocab.n_f:
            raise IndexOutOfRange(f"object {i} has {len(o.features)} features, expected {vocab.n_f}")
        C[i] = o.category
        F[i] = o.features
    E = np.full(vocab.n_slots, vocab.empty_e, dtype=np.int64)
    iu, ju = triangle_indices(N)
    for k, (i, j) in enumerate(zip(iu, ju)):
        if j < n:
            E[k] = relrules.classify_relation(layout.objects[i], layout.objects[j], rules)
    g = SemanticGraph(n=n, C=C, F=F, E=E)
    g.validate(vocab)
    return g


def _one_hot(idx: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros(idx.shape + (width,), dtype=np.float64)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def encode_one_hot(g: SemanticGraph, vocab: Vocabularies) -> OneHotGraphState:
    g.validate(vocab)
    return OneHotGraphState(
        C_t=_one_hot(g.C, vocab.K_c + 2),
        F_t=_one_hot(g.F, vocab.K_f + 2),
        E_t=_one_hot(g.E, vocab.K_e + 2),
        t=0,
    )


def compact_graph(C, F, E, vocab: Vocabularies) -> SemanticGraph:
    """Stable-compact non-EMPTY nodes to the front and re-pad.

    Features of EMPTY nodes and edges touching them are reset to EMPTY.
    """
    C = np.asarray(C, dtype=np.int64)
    F = np.asarray(F, dtype=np.int64)
    N = vocab.N_max
    real = np.flatnonzero(C != vocab.empty_c)
    pad = np.flatnonzero(C == vocab.empty_c)
    order = np.concatenate([real, pad])
    n = len(real)
    full = full_relation_matrix(E, N, vocab)[np.ix_(order, order)]
    C2 = C[order].copy()
    F2 = F[order].copy()
    F2[n:] = vocab.empty_f
    full[n:, :] = vocab.empty_e
    full[:, n:] = vocab.empty_e
    return SemanticGraph(n=n, C=C2, F=F2, E=triangle_of(full))


def decode_argmax(state: OneHotGraphState, vocab: Vocabularies) -> SemanticGraph:
    C = np.argmax(state.C_t, axis=-1)
    F = np.argmax(state.F_t, axis=-1)
    E = np.argmax(state.E_t, axis=-1)
    if np.any(C == vocab.mask_c) or np.any(F == vocab.mask_f) or np.any(E == vocab.mask_e):
        raise MaskResidue("argmax decoded a MASK state")
    return compact_graph(C, F, E, vocab)


def empty_graph(vocab: Vocabularies) -> SemanticGraph:
    return SemanticGraph(
        n=0,
        C=np.full(vocab.N_max, vocab.empty_c),
        F=np.full((vocab.N_max, vocab.n_f), vocab.empty_f),
        E=np.full(vocab.n_slots, vocab.empty_e),
    )
