"""Controllability and graphic-quality metrics.

Boxes are axis-aligned and derived from each object's center and extents.
Underlay scores follow the PosterLayout convention: the loose score of an
underlay is the best containment ratio ``area(e & u) / area(e)`` over the
non-underlay elements, the strict score counts underlays that fully contain
at least one element.
"""

from __future__ import annotations

import csv
import io as _pyio
import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import io
from .core import Instruction, Layout, RelationTriplet
from .errors import EmptyRequirement, LengthMismatch, NoProductRegion, TooFewElements, ValidationError, ZeroVector
from .relrules import RelationRuleSet, extract_triplets

UNDERLAY = 2  # toy 2D vocabulary
NOT_APPLICABLE = None  # sentinel for metrics without a subject (e.g. no underlays)
VALID_MIN_FRACTION = 1e-3
VALID_TOL = 1e-6


def box(o) -> tuple[float, float, float, float]:
    x, y = o.location[0], o.location[1]
    w, h = o.size[0], o.size[1]
    return (x - w / 2, y - h / 2, x + w / 2, y + h / 2)


def _area(b) -> float:
    return max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])


def _inter(a, b) -> float:
    return max(0.0, min(a[2], b[2]) - max(a[0], b[0])) * max(0.0, min(a[3], b[3]) - max(a[1], b[1]))


def iou(a, b) -> float:
    i = _inter(a, b)
    u = _area(a) + _area(b) - i
    return i / u if u > 0 else 0.0


# --------------------------------------------------------------------------
# controllability


def irecall(layout: Layout, required: Iterable[RelationTriplet], rules: Optional[RelationRuleSet] = None) -> float:
    """Fraction of required triplets present among the layout's extracted triplets."""
    req = set(required.triplets if isinstance(required, Instruction) else required)
    if not req:
        raise EmptyRequirement("iRecall needs at least one required triplet")
    return len(req & extract_triplets(layout, rules)) / len(req)


# --------------------------------------------------------------------------
# graphic metrics (2D)


def overlay(layout: Layout, underlay: int = UNDERLAY) -> float:
    boxes = [box(o) for o in layout.objects if o.category != underlay]
    if len(boxes) < 2:
        return 0.0
    vals = [iou(boxes[i], boxes[j]) for i in range(len(boxes)) for j in range(i + 1, len(boxes))]
    return float(np.mean(vals))


def is_valid_box(o, bounds, tol: float = VALID_TOL) -> bool:
    x0, y0, x1, y1 = box(o)
    W, H = bounds[0], bounds[1]
    inside = x0 >= -tol and y0 >= -tol and x1 <= W + tol and y1 <= H + tol
    big = (x1 - x0) >= VALID_MIN_FRACTION * W and (y1 - y0) >= VALID_MIN_FRACTION * H
    return inside and big


def validity(layout: Layout) -> float:
    """Fraction of valid boxes; an empty layout scores 1.0 (nothing invalid)."""
    if not layout.objects:
        return 1.0
    return float(np.mean([is_valid_box(o, layout.bounds) for o in layout.objects]))


def _axes(b) -> tuple[tuple[float, ...], tuple[float, ...]]:
    x0, y0, x1, y1 = b
    return (x0, (x0 + x1) / 2, x1), (y0, (y0 + y1) / 2, y1)


def non_alignment(layout: Layout) -> float:
    """Mean over elements of the smallest same-axis gap to any other element.

    Axes: left, center, right (normalized by canvas width) and bottom,
    middle, top (normalized by canvas height).
    """
    objs = layout.objects
    if len(objs) < 2:
        raise TooFewElements("non-alignment needs at least 2 elements")
    W, H = layout.bounds[0], layout.bounds[1]
    ax = [_axes(box(o)) for o in objs]
    scores = []
    for i in range(len(objs)):
        best = math.inf
        for j in range(len(objs)):
            if i == j:
                continue
            for k in range(3):
                best = min(best, abs(ax[i][0][k] - ax[j][0][k]) / W, abs(ax[i][1][k] - ax[j][1][k]) / H)
        scores.append(best)
    return float(np.mean(scores))


def underlay_effectiveness(layout: Layout, underlay: int = UNDERLAY):
    """``(Und_l, Und_s)``, or ``(NOT_APPLICABLE, NOT_APPLICABLE)`` without underlays."""
    unders = [box(o) for o in layout.objects if o.category == underlay]
    others = [box(o) for o in layout.objects if o.category != underlay]
    if not unders:
        return NOT_APPLICABLE, NOT_APPLICABLE
    loose, strict = [], []
    for u in unders:
        ratios = [(_inter(e, u) / _area(e)) if _area(e) > 0 else 0.0 for e in others]
        best = max(ratios, default=0.0)
        loose.append(best)
        strict.append(float(any(r >= 1.0 - 1e-9 for r in ratios)))
    return float(np.mean(loose)), float(np.mean(strict))


def union_area(boxes: Sequence) -> float:
    """Exact area of a union of rectangles by coordinate compression."""
    boxes = [b for b in boxes if _area(b) > 0]
    if not boxes:
        return 0.0
    xs = sorted({v for b in boxes for v in (b[0], b[2])})
    ys = sorted({v for b in boxes for v in (b[1], b[3])})
    total = 0.0
    for i in range(len(xs) - 1):
        cx = (xs[i] + xs[i + 1]) / 2
        for j in range(len(ys) - 1):
            cy = (ys[j] + ys[j + 1]) / 2
            if any(b[0] <= cx <= b[2] and b[1] <= cy <= b[3] for b in boxes):
                total += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j])
    return total


def occlusion(layout: Layout) -> float:
    """Fraction of the product region covered by the union of element boxes."""
    r = layout.product_region
    if r is None:
        raise NoProductRegion("occlusion needs a product_region")
    clipped = []
    for o in layout.objects:
        b = box(o)
        c = (max(b[0], r[0]), max(b[1], r[1]), min(b[2], r[2]), min(b[3], r[3]))
        if c[2] > c[0] and c[3] > c[1]:
            clipped.append(c)
    area = _area(r)
    if area <= 0:
        raise ValidationError("product_region has zero area")
    return union_area(clipped) / area


# --------------------------------------------------------------------------
# feature metrics


def _cos(a, b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ZeroVector("cosine similarity of a zero vector")
    return (a * b).sum(-1) / (na * nb)


def stylization_delta(features, target_style, class_refs) -> float:
    """``mean_i cos(f_i, d_style) - cos(f_i, d_class_i)``.

    ``class_refs`` is one vector shared by all features or one per feature.
    """
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    refs = np.asarray(class_refs, dtype=np.float64)
    if refs.ndim == 1:
        refs = np.broadcast_to(refs, f.shape)
    elif len(refs) != len(f):
        raise LengthMismatch("need one class reference per feature")
    return float(np.mean(_cos(f, target_style) - _cos(f, refs)))


def color_error(predicted, reference) -> tuple[float, float]:
    """``(MSE over (a, b), MAE over L)`` for paired Lab colors."""
    p = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    r = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if p.shape != r.shape:
        raise LengthMismatch(f"{len(p)} predicted vs {len(r)} reference colors")
    if p.size == 0:
        raise ValidationError("color_error needs at least one pair")
    d = p - r
    return float(np.mean(d[:, 1] ** 2 + d[:, 2] ** 2)), float(np.mean(np.abs(d[:, 0])))


# --------------------------------------------------------------------------
# corpus reports


def per_sample_metrics(layout: Layout, instruction: Optional[Instruction] = None) -> dict:
    row = {"n_objects": len(layout.objects)}
    if instruction is not None and instruction.triplets:
        row["irecall"] = irecall(layout, instruction.triplets)
    if layout.kind == "2D":
        row["val"] = validity(layout)
        row["ove"] = overlay(layout)
        row["n_ali"] = non_alignment(layout) if len(layout.objects) >= 2 else NOT_APPLICABLE
        row["und_l"], row["und_s"] = underlay_effectiveness(layout)
        row["occ"] = occlusion(layout) if layout.product_region is not None else NOT_APPLICABLE
    return row


def summarize(rows: Sequence[dict]) -> dict:
    """``{metric: {mean, std, n}}`` over rows, skipping not-applicable entries."""
    keys = sorted({k for r in rows for k in r})
    out = {}
    for k in keys:
        vals = [r[k] for r in rows if r.get(k) is not NOT_APPLICABLE and k in r]
        if vals:
            out[k] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
        else:
            out[k] = {"mean": None, "std": None, "n": 0}
    return out


def evaluate(layouts: Sequence[Layout], instructions: Optional[Sequence[Instruction]] = None):
    instructions = instructions or [None] * len(layouts)
    if len(instructions) != len(layouts):
        raise LengthMismatch("one instruction per layout is required")
    rows = [per_sample_metrics(l, i) for l, i in zip(layouts, instructions)]
    return summarize(rows), rows


@dataclass
class Report:
    summary: dict
    rows: list

    def to_json(self) -> str:
        return json.dumps(self.summary, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        keys = sorted({k for r in self.rows for k in r})
        buf = _pyio.StringIO()
        w = csv.DictWriter(buf, fieldnames=["index"] + keys, lineterminator="\n")
        w.writeheader()
        for i, r in enumerate(self.rows):
            w.writerow({"index": i, **{k: ("NA" if r.get(k) is None else r.get(k)) for k in keys}})
        return buf.getvalue()

    def write(self, json_path, csv_path) -> None:
        io.atomic_write_text(json_path, self.to_json())
        io.atomic_write_text(csv_path, self.to_csv())


def report(layouts, instructions=None) -> Report:
    summary, rows = evaluate(layouts, instructions)
    return Report(summary, rows)
