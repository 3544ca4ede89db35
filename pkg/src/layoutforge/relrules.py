"""Geometric classification of pairwise spatial relations.

Angle bins are quadrants of width pi/2 centred on the axes. Bin membership
is decided from the signs and magnitudes of the center offset rather than
from a floating-point angle; this is the same partition as thresholding
``atan2(dy, dx)`` at +-pi/4 and +-3pi/4 but stays exactly symmetric when the
pair is swapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (
    NONE_RELATION,
    Instruction,
    Layout,
    ObjectRecord,
    RelationTriplet,
    relation_names,
)
from .errors import CoincidentCenters, ValidationError

DEGENERATE_EPS = 1e-12

# quadrant ids; relation index = quadrant (+4 for the "closely" band)
LEFT, RIGHT, FRONT, BEHIND = 0, 1, 2, 3
ENCLOSING, ENCLOSED = 8, 9
ABOVE, BELOW = 8, 9  # 3D vertical relations share the slots of 2D containment


@dataclass(frozen=True)
class RelationRuleSet:
    kind: str
    near_threshold: float
    far_threshold: float

    def __post_init__(self):
        if not 0 < self.near_threshold < self.far_threshold:
            raise ValidationError("need 0 < near_threshold < far_threshold")

    @classmethod
    def default(cls, kind: str) -> "RelationRuleSet":
        if kind == "3D":
            return cls("3D", 1.0, 3.0)
        if kind == "2D":
            return cls("2D", 80.0, 300.0)
        raise ValidationError(f"unknown layout kind {kind!r}")

    @property
    def angle_bins(self) -> tuple[tuple[float, float], ...]:
        """Half-open intervals in the order LEFT (two pieces), RIGHT, FRONT, BEHIND."""
        q = math.pi / 4
        return ((3 * q, math.pi), (-math.pi, -3 * q), (-q, q), (q, 3 * q), (-3 * q, -q))

    @property
    def labels(self) -> tuple[str, ...]:
        return relation_names(self.kind)


def relative_orientation(s_center: Sequence[float], o_center: Sequence[float]) -> float:
    """Angle of the subject center seen from the object, in [-pi, pi)."""
    dx = s_center[0] - o_center[0]
    dy = s_center[1] - o_center[1]
    if abs(dx) <= DEGENERATE_EPS and abs(dy) <= DEGENERATE_EPS:
        raise CoincidentCenters("relative orientation undefined for coincident centers")
    theta = math.atan2(dy, dx)
    if theta >= math.pi:
        theta = -math.pi
    return theta


def quadrant(dx: float, dy: float) -> int:
    """Angle bin of the offset (dx, dy); callers exclude the zero offset."""
    if dx > 0 and -dx <= dy < dx:
        return RIGHT
    if dy > 0 and -dy < dx <= dy:
        return FRONT
    if dx < 0 and dx < dy <= -dx:
        return LEFT
    return BEHIND


def _inside_footprint(point: Sequence[float], box: ObjectRecord) -> bool:
    dx = point[0] - box.location[0]
    dy = point[1] - box.location[1]
    if box.rotation != 0.0:
        c, s = math.cos(box.rotation), math.sin(box.rotation)
        dx, dy = c * dx + s * dy, -s * dx + c * dy
    return abs(dx) <= box.size[0] / 2 and abs(dy) <= box.size[1] / 2


def inside(s: ObjectRecord, o: ObjectRecord) -> bool:
    """Whether the subject center lies inside the object's ground/canvas box."""
    return _inside_footprint(s.location, o)


def _planar_band(s: ObjectRecord, o: ObjectRecord, rules: RelationRuleSet) -> int:
    dx = s.location[0] - o.location[0]
    dy = s.location[1] - o.location[1]
    d = math.hypot(dx, dy)
    if d > rules.far_threshold:
        return NONE_RELATION
    if abs(dx) <= DEGENERATE_EPS and abs(dy) <= DEGENERATE_EPS:
        return NONE_RELATION
    q = quadrant(dx, dy)
    return q + 4 if d <= rules.near_threshold else q


def classify_relation_3d(s: ObjectRecord, o: ObjectRecord, rules: RelationRuleSet) -> int:
    dz = s.location[2] - o.location[2]
    half_heights = (s.size[2] + o.size[2]) / 2
    if dz > half_heights or -dz > half_heights:
        if inside(s, o) or inside(o, s):
            return ABOVE if dz > 0 else BELOW
    return _planar_band(s, o, rules)


def classify_relation_2d(s: ObjectRecord, o: ObjectRecord, rules: RelationRuleSet) -> int:
    o_in_s = inside(o, s)
    s_in_o = inside(s, o)
    if o_in_s and not s_in_o:
        return ENCLOSING
    if s_in_o and not o_in_s:
        return ENCLOSED
    if o_in_s and s_in_o:
        # mutual center containment: the larger box encloses the smaller
        area_s = s.size[0] * s.size[1]
        area_o = o.size[0] * o.size[1]
        if area_s > area_o:
            return ENCLOSING
        if area_s < area_o:
            return ENCLOSED
    return _planar_band(s, o, rules)


def classify_relation(s: ObjectRecord, o: ObjectRecord, rules: RelationRuleSet) -> int:
    if rules.kind == "3D":
        return classify_relation_3d(s, o, rules)
    return classify_relation_2d(s, o, rules)


def extract_triplets(layout: Layout, rules: Optional[RelationRuleSet] = None) -> set[RelationTriplet]:
    rules = rules or RelationRuleSet.default(layout.kind)
    out = set()
    objs = layout.objects
    for i, s in enumerate(objs):
        for j, o in enumerate(objs):
            if i == j:
                continue
            rel = classify_relation(s, o, rules)
            if rel != NONE_RELATION:
                out.add(RelationTriplet(s.category, rel, o.category))
    return out


# --------------------------------------------------------------------------
# instruction templating

VERB_PHRASES = ("Place", "Put", "Set up", "Arrange")
CONJUNCTIONS = ("and", "then", "while also")


def _noun(category: int, names: Sequence[str]) -> str:
    return names[category] if category < len(names) else f"object{category}"


def _styled(category: int, names, style_names, styles: dict) -> str:
    noun = _noun(category, names)
    style = styles.get(category)
    if style is None:
        return noun
    sname = style_names[style] if style < len(style_names) else f"style{style}"
    return f"{sname} {noun}"


def _phrase(tr: RelationTriplet, kind: str, names, style_names, styles: dict) -> str:
    subj = _styled(tr.subject, names, style_names, styles)
    obj = _styled(tr.object, names, style_names, styles)
    return f"a {subj} {relation_names(kind)[tr.relation]} the {obj}"


def make_instruction(
    triplets: Iterable[RelationTriplet],
    style_tags,
    rng: np.random.Generator,
    *,
    kind: str = "3D",
    category_names: Sequence[str] = (),
    style_names: Sequence[str] = (),
) -> Instruction:
    """Render 1-2 triplets as a sentence from the fixed template bank.

    Template: ``<Verb> <phrase>[ <conjunction> <verb> <phrase>].`` where the
    verb is drawn from ``VERB_PHRASES`` and the conjunction from
    ``CONJUNCTIONS``.
    """
    triplets = tuple(triplets)
    if not 1 <= len(triplets) <= 2:
        raise ValidationError("instructions carry 1 or 2 triplets")
    if isinstance(style_tags, dict):
        style_tags = sorted(style_tags.items())
    style_tags = tuple((int(c), int(s)) for c, s in (style_tags or ()))
    styles = dict(style_tags)
    parts = []
    for k, tr in enumerate(triplets):
        verb = VERB_PHRASES[int(rng.integers(len(VERB_PHRASES)))]
        phrase = _phrase(tr, kind, category_names, style_names, styles)
        if k == 0:
            parts.append(f"{verb} {phrase}")
        else:
            conj = CONJUNCTIONS[int(rng.integers(len(CONJUNCTIONS)))]
            parts.append(f"{conj} {verb.lower()} {phrase}")
    return Instruction(triplets=triplets, style_tags=style_tags, text=" ".join(parts) + ".")
