"""Filtered pair mining and seeded batch assembly.

Every unordered document pair lands in exactly one bucket:

* positive  -- SimL > beta (regression target and contrastive positive)
* negative  -- SimL == 0  (shares no label at all)
* excluded  -- 0 < SimL <= beta, used by neither loss
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import sparse

from .labels import LabelVector, WeightVector, sim_l


class UnbatchableCorpus(ValueError):
    pass


@dataclass(frozen=True)
class MiningConfig:
    beta: float = 0.3
    batch_size: int = 32
    negatives_per_anchor: int = 8
    max_positives_per_anchor: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        for name in ("batch_size", "negatives_per_anchor", "max_positives_per_anchor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def _i64(a=()) -> np.ndarray:
    return np.asarray(a, dtype=np.int64)


@dataclass(eq=False)
class PairSet:
    n_docs: int
    pos_i: np.ndarray = field(default_factory=_i64)
    pos_j: np.ndarray = field(default_factory=_i64)
    pos_sim: np.ndarray = field(default_factory=lambda: np.zeros(0))
    neg_i: np.ndarray = field(default_factory=_i64)
    neg_j: np.ndarray = field(default_factory=_i64)
    excluded_count: int = 0

    @property
    def positives(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(s)) for i, j, s in zip(self.pos_i, self.pos_j, self.pos_sim)]

    @property
    def negatives(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(self.neg_i, self.neg_j)]

    def __len__(self) -> int:
        return len(self.pos_i) + len(self.neg_i)

    def __eq__(self, other) -> bool:
        return (isinstance(other, PairSet) and self.n_docs == other.n_docs
                and self.excluded_count == other.excluded_count
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("pos_i", "pos_j", "pos_sim", "neg_i", "neg_j")))

    def to_tsv(self) -> str:
        out = io.StringIO()
        out.write(f"# n_docs={self.n_docs} excluded={self.excluded_count}\n")
        for i, j, s in self.positives:
            out.write(f"P\t{i}\t{j}\t{s!r}\n")
        for i, j in self.negatives:
            out.write(f"N\t{i}\t{j}\t0.0\n")
        return out.getvalue()

    @classmethod
    def from_tsv(cls, text: str) -> "PairSet":
        n_docs, excluded = 0, 0
        pos, neg = [], []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            if line.startswith("#"):
                meta = dict(kv.split("=", 1) for kv in line[1:].split())
                n_docs, excluded = int(meta.get("n_docs", 0)), int(meta.get("excluded", 0))
                continue
            kind, i, j, s = line.split("\t")
            if kind == "P":
                pos.append((int(i), int(j), float(s)))
            elif kind == "N":
                neg.append((int(i), int(j)))
            else:
                raise ValueError(f"line {lineno}: unknown pair kind {kind!r}")
        return cls(
            n_docs,
            _i64([p[0] for p in pos]), _i64([p[1] for p in pos]), np.array([p[2] for p in pos]),
            _i64([p[0] for p in neg]), _i64([p[1] for p in neg]), excluded,
        )


def _candidate_pairs(vectors: Sequence[LabelVector]) -> tuple[np.ndarray, np.ndarray]:
    """Unordered pairs (i < j) sharing at least one active concept."""
    n = len(vectors)
    size = vectors[0].size if n else 0
    rows = np.repeat(np.arange(n), [len(v) for v in vectors])
    cols = np.concatenate([v.active for v in vectors]) if n else _i64()
    y = sparse.csr_matrix((np.ones(len(cols), dtype=np.int32), (rows, cols)), shape=(n, size))
    co = sparse.triu(y @ y.T, k=1).tocoo()
    order = np.lexsort((co.col, co.row))
    return co.row[order].astype(np.int64), co.col[order].astype(np.int64)


def mine_pairs(vectors: Sequence[LabelVector], w: WeightVector, cfg: MiningConfig) -> PairSet:
    """Bucket all n(n-1)/2 unordered pairs by their label similarity.

    Pairs without any shared concept have SimL exactly 0 and are negatives
    without evaluating the cosine; all other pairs go through ``sim_l``.
    """
    n = len(vectors)
    if n < 2:
        raise ValueError("pair mining needs at least two documents")
    for v in vectors:
        if v.size != len(w):
            raise ValueError("all label vectors must share the weight vector's index")
    ci, cj = _candidate_pairs(vectors)
    sims = np.array([sim_l(vectors[i], vectors[j], w) for i, j in zip(ci, cj)])
    is_pos = sims > cfg.beta
    is_zero = sims == 0.0

    shares = np.zeros((n, n), dtype=bool)
    shares[ci, cj] = True
    shares[ci[is_zero], cj[is_zero]] = False
    iu, ju = np.triu_indices(n, k=1)
    neg_mask = ~shares[iu, ju]
    excluded = int(np.count_nonzero(~is_pos & ~is_zero))
    return PairSet(n, ci[is_pos], cj[is_pos], sims[is_pos],
                   iu[neg_mask].astype(np.int64), ju[neg_mask].astype(np.int64), excluded)


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    x = x.astype(np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        x = x ^ (x >> np.uint64(31))
    return x


def pair_hash_unit(i: np.ndarray, j: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic pseudo-uniform value in [0, 1) for each unordered pair."""
    lo, hi = np.minimum(i, j).astype(np.uint64), np.maximum(i, j).astype(np.uint64)
    with np.errstate(over="ignore"):
        key = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _mix64(lo) * np.uint64(0x9E3779B97F4A7C15) + hi)
    return (key >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def split_pairs(pairs: PairSet, validation_fraction: float, seed: int) -> tuple[PairSet, PairSet]:
    """Split into (train, validation) by a seeded hash of each pair.

    Excluded-pair bookkeeping does not carry over; both halves report 0.
    """
    pv = pair_hash_unit(pairs.pos_i, pairs.pos_j, seed) < validation_fraction
    nv = pair_hash_unit(pairs.neg_i, pairs.neg_j, seed) < validation_fraction

    def take(pm, nm):
        return PairSet(pairs.n_docs, pairs.pos_i[pm], pairs.pos_j[pm], pairs.pos_sim[pm],
                       pairs.neg_i[nm], pairs.neg_j[nm])

    return take(~pv, ~nv), take(pv, nv)


@dataclass(frozen=True)
class PairBatch:
    anchors: tuple[int, ...]
    positives: tuple[tuple[tuple[int, float], ...], ...]
    negatives: tuple[tuple[int, ...], ...]

    @property
    def docs(self) -> tuple[int, ...]:
        ids = set(self.anchors)
        for ps in self.positives:
            ids.update(p for p, _ in ps)
        for ns in self.negatives:
            ids.update(ns)
        return tuple(sorted(ids))

    def mse_pairs(self) -> list[tuple[int, int, float]]:
        """Unique unordered (i, j, simL) positive pairs present in the batch."""
        seen = {}
        for a, ps in zip(self.anchors, self.positives):
            for p, s in ps:
                seen.setdefault((min(a, p), max(a, p)), s)
        return [(i, j, s) for (i, j), s in seen.items()]


def _adjacency(n: int, i: np.ndarray, j: np.ndarray, payload: np.ndarray | None = None):
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    bounds = np.searchsorted(src, np.arange(n + 1))
    if payload is None:
        return [dst[bounds[k]:bounds[k + 1]] for k in range(n)]
    val = np.concatenate([payload, payload])[order]
    return [(dst[bounds[k]:bounds[k + 1]], val[bounds[k]:bounds[k + 1]]) for k in range(n)]


class BatchSampler:
    """Seeded anchor batches over a PairSet; ``epoch(e)`` is a pure function of (pairs, cfg, e)."""

    def __init__(self, pairs: PairSet, cfg: MiningConfig):
        if len(pairs) == 0:
            raise UnbatchableCorpus("unbatchable corpus: the pair set is empty")
        self.pairs = pairs
        self.cfg = cfg
        self.pos = _adjacency(pairs.n_docs, pairs.pos_i, pairs.pos_j, pairs.pos_sim)
        self.neg = _adjacency(pairs.n_docs, pairs.neg_i, pairs.neg_j)
        has_pos = np.array([len(p[0]) > 0 for p in self.pos])
        has_neg = np.array([len(n) > 0 for n in self.neg])
        self.anchors = np.flatnonzero(has_pos & has_neg)
        self.skipped_anchors = int(np.count_nonzero(has_pos ^ (has_pos & has_neg)))
        if not self.anchors.size:
            raise UnbatchableCorpus("unbatchable corpus: no anchor has both a positive and a negative")

    def __len__(self) -> int:
        return -(-len(self.anchors) // self.cfg.batch_size)

    def epoch(self, epoch: int = 0) -> Iterator[PairBatch]:
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(self.anchors)
        for start in range(0, len(order), cfg.batch_size):
            anchors, positives, negatives = [], [], []
            for a in order[start:start + cfg.batch_size]:
                pj, ps = self.pos[a]
                if len(pj) > cfg.max_positives_per_anchor:
                    pick = np.sort(rng.choice(len(pj), cfg.max_positives_per_anchor, replace=False))
                    pj, ps = pj[pick], ps[pick]
                nj = self.neg[a]
                if len(nj) > cfg.negatives_per_anchor:
                    nj = np.sort(rng.choice(nj, cfg.negatives_per_anchor, replace=False))
                anchors.append(int(a))
                positives.append(tuple((int(p), float(s)) for p, s in zip(pj, ps)))
                negatives.append(tuple(int(x) for x in nj))
            yield PairBatch(tuple(anchors), tuple(positives), tuple(negatives))


def sample_batches(pairs: PairSet, cfg: MiningConfig, epoch: int = 0) -> Iterator[PairBatch]:
    return BatchSampler(pairs, cfg).epoch(epoch)
