"""Concept index, multi-hot label vectors, depth weights and label similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .mesh import MeshHierarchy


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class ConceptIndex:
    concept_ids: tuple[str, ...]

    def __post_init__(self):
        if list(self.concept_ids) != sorted(set(self.concept_ids)):
            raise LabelError("concept ids must be unique and lexicographically sorted")
        object.__setattr__(self, "_pos", {ui: j for j, ui in enumerate(self.concept_ids)})

    def __len__(self) -> int:
        return len(self.concept_ids)

    def position(self, ui: str) -> int:
        try:
            return self._pos[ui]
        except KeyError:
            raise LabelError(f"label {ui!r} is not in the concept index") from None


@dataclass(frozen=True, eq=False)
class LabelVector:
    """Sparse multi-hot vector: strictly increasing active column indices over ``size`` concepts."""

    active: np.ndarray
    size: int

    def __post_init__(self):
        a = np.asarray(self.active, dtype=np.int64)
        if a.ndim != 1 or (a.size and (np.any(np.diff(a) <= 0) or a[0] < 0 or a[-1] >= self.size)):
            raise LabelError("active indices must be strictly increasing and within [0, size)")
        a.flags.writeable = False
        object.__setattr__(self, "active", a)

    def __len__(self) -> int:
        return int(self.active.size)

    def __eq__(self, other) -> bool:
        return (isinstance(other, LabelVector) and self.size == other.size
                and np.array_equal(self.active, other.active))

    def dense(self) -> np.ndarray:
        y = np.zeros(self.size)
        y[self.active] = 1.0
        return y


@dataclass(frozen=True, eq=False)
class WeightVector:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise LabelError("weights must be a finite non-negative 1-d array")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        sq = w * w
        sq.flags.writeable = False
        object.__setattr__(self, "squared", sq)

    def __len__(self) -> int:
        return int(self.weights.size)


def _label_set(labels: Iterable[str], h: MeshHierarchy, ancestor_expansion: bool) -> frozenset[str]:
    labels = frozenset(labels)
    return h.expand_hier(labels) if ancestor_expansion else labels


def build_index(annotations: Sequence[Iterable[str]], h: MeshHierarchy,
                ancestor_expansion: bool = True) -> ConceptIndex:
    seen = set()
    for rec, labels in enumerate(annotations):
        labels = list(labels)
        unknown = [ui for ui in labels if ui not in h]
        if unknown:
            raise LabelError(f"record {rec}: unknown descriptor id(s) {', '.join(sorted(unknown))}")
        seen |= _label_set(labels, h, ancestor_expansion)
    return ConceptIndex(tuple(sorted(seen)))


def vectorize(labels: Iterable[str], idx: ConceptIndex, h: MeshHierarchy,
              ancestor_expansion: bool = True) -> LabelVector:
    labels = list(labels)
    for ui in labels:
        if ui not in h:
            raise LabelError(f"unknown descriptor id {ui!r}")
    cols = sorted(idx.position(ui) for ui in _label_set(labels, h, ancestor_expansion))
    return LabelVector(np.array(cols, dtype=np.int64), len(idx))


def depth_weights(idx: ConceptIndex, h: MeshHierarchy, depth_weighting: bool = True) -> WeightVector:
    if not depth_weighting:
        return WeightVector(np.ones(len(idx)))
    # natural log; depth >= 1 keeps every weight strictly positive
    return WeightVector(np.array([math.log(h.depth(ui) + 1) for ui in idx.concept_ids]))


def sim_l(a: LabelVector, b: LabelVector, w: WeightVector) -> float:
    """Cosine between depth-weighted multi-hot vectors, computed on the sparse supports."""
    if a.size != len(w) or b.size != len(w):
        raise LabelError(f"dimension mismatch: vectors over {a.size}/{b.size} concepts, weights over {len(w)}")
    if not len(a) or not len(b):
        return 0.0
    sq = w.squared
    common = np.intersect1d(a.active, b.active, assume_unique=True)
    if not common.size:
        return 0.0
    num = float(np.sum(sq[common]))
    # one sqrt of the product keeps identical supports at exactly 1.0
    den = math.sqrt(float(np.sum(sq[a.active])) * float(np.sum(sq[b.active])))
    if den == 0.0:
        return 0.0
    return min(max(num / den, 0.0), 1.0)


@dataclass
class LabelSpace:
    """Index, per-document vectors and weights for one (expansion, weighting) setting."""

    index: ConceptIndex
    vectors: list[LabelVector]
    weights: WeightVector
    ancestor_expansion: bool
    depth_weighting: bool

    def sim(self, i: int, j: int) -> float:
        return sim_l(self.vectors[i], self.vectors[j], self.weights)


def build_label_space(annotations: Sequence[Iterable[str]], h: MeshHierarchy,
                      ancestor_expansion: bool = True, depth_weighting: bool = True) -> LabelSpace:
    annotations = [list(a) for a in annotations]
    idx = build_index(annotations, h, ancestor_expansion)
    vecs = [vectorize(a, idx, h, ancestor_expansion) for a in annotations]
    return LabelSpace(idx, vecs, depth_weights(idx, h, depth_weighting), ancestor_expansion, depth_weighting)
