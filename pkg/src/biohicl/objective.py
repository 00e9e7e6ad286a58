"""Filtered regression + hierarchical contrastive objective and its gradients.

For a batch with embeddings h, label similarities s and SimE = h_a . h_b:

    l_mse = sum over unique positive pairs (SimE - s)^2
    l_con = mean over anchors of reduce_p -[log s_p + SimE(a, p) - logsumexp_n SimE(a, n)]
    total = l_mse [use_mse] + lam * l_con [use_con]

The contrastive denominator runs over negatives only and there is no
temperature, so l_con can be negative.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .encoder import DEGENERATE_EPS, EncoderParams
from .pairs import PairBatch

log = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.1
    beta: float = 0.3
    use_mse: bool = True
    use_con: bool = True
    positive_reduction: str = "mean"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.positive_reduction not in ("mean", "sum"):
            raise ValueError("positive_reduction must be 'mean' or 'sum'")
        if not (self.use_mse or self.use_con):
            log.warning("both loss terms disabled; total loss is identically zero")


@dataclass
class LossReport:
    l_mse: float
    l_con: float
    total: float
    mse_pairs_used: int
    con_anchors_used: int
    skipped_anchors: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class GradientSet:
    grads: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(g))) for g in self.grads.values())


def loss_mse(sime: np.ndarray, siml: np.ndarray) -> float:
    r = np.asarray(sime, dtype=np.float64) - np.asarray(siml, dtype=np.float64)
    return float(r @ r)


def contrastive_term(siml_pos: float, sime_pos: float, sime_negs: np.ndarray) -> float:
    """-log[ s exp(e+) / sum exp(e-) ] for one anchor-positive pair."""
    if siml_pos <= 0:
        raise NumericError(f"positive pair with non-positive label similarity {siml_pos}")
    negs = np.asarray(sime_negs, dtype=np.float64)
    m = negs.max()
    lse = m + math.log(np.exp(negs - m).sum())
    return -(math.log(siml_pos) + sime_pos - lse)


def _embed(batch: PairBatch, pooled: np.ndarray, params: EncoderParams):
    docs = batch.docs
    X = pooled[list(docs)]
    Z = X @ params.projection().T
    if not np.all(np.isfinite(Z)):
        bad = docs[int(np.flatnonzero(~np.isfinite(Z).all(axis=1))[0])]
        raise NumericError(f"non-finite embedding for document {bad}")
    norms = np.linalg.norm(Z, axis=1)
    if not np.all(np.isfinite(norms)):
        raise NumericError("embedding norm overflow")
    ok = norms >= DEGENERATE_EPS
    H = np.zeros_like(Z)
    H[ok] = Z[ok] / norms[ok, None]
    H[~ok, 0] = 1.0
    return {d: k for k, d in enumerate(docs)}, X, H, norms, ok


def evaluate(batch: PairBatch, pooled: np.ndarray, params: EncoderParams, cfg: LossConfig,
             with_grad: bool = True) -> tuple[LossReport, GradientSet | None]:
    """Loss report for ``batch`` and, optionally, gradients w.r.t. trainable tensors.

    ``pooled`` holds mean-pooled token embeddings for the whole corpus,
    indexed by document id.
    """
    row, X, H, norms, ok = _embed(batch, pooled, params)
    S = H @ H.T
    G = np.zeros_like(S)  # dL/dS[a, b]

    mse = batch.mse_pairs()
    l_mse = 0.0
    if mse:
        ri = np.array([row[i] for i, _, _ in mse])
        rj = np.array([row[j] for _, j, _ in mse])
        s = np.array([x for _, _, x in mse])
        resid = S[ri, rj] - s
        bad = ~np.isfinite(resid)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise NumericError(f"non-finite SimE for pair ({mse[k][0]}, {mse[k][1]})")
        l_mse = float(resid @ resid)
        if cfg.use_mse:
            np.add.at(G, (ri, rj), 2.0 * resid)

    terms = []
    skipped = 0
    con_weights = []
    for a, ps, ns in zip(batch.anchors, batch.positives, batch.negatives):
        if not ps or not ns:
            skipped += 1
            continue
        ra = row[a]
        rn = np.array([row[n] for n in ns])
        en = S[ra, rn]
        m = en.max()
        ex = np.exp(en - m)
        lse = m + math.log(ex.sum())
        soft = ex / ex.sum()
        scale = 1.0 / len(ps) if cfg.positive_reduction == "mean" else 1.0
        anchor_loss = 0.0
        for p, s in ps:
            if s <= 0:
                raise NumericError(f"positive pair ({a}, {p}) has non-positive label similarity {s}")
            t = -(math.log(s) + S[ra, row[p]] - lse)
            if not math.isfinite(t):
                raise NumericError(f"non-finite contrastive term for pair ({a}, {p})")
            anchor_loss += scale * t
        terms.append(anchor_loss)
        con_weights.append((ra, [row[p] for p, _ in ps], rn, soft, scale))

    n_anchors = len(terms)
    l_con = float(np.mean(terms)) if terms else 0.0
    if cfg.use_con and n_anchors:
        coef = cfg.lam / n_anchors
        for ra, rps, rn, soft, scale in con_weights:
            for rp in rps:
                G[ra, rp] -= coef * scale
                G[ra, rn] += coef * scale * soft

    total = (l_mse if cfg.use_mse else 0.0) + (cfg.lam * l_con if cfg.use_con else 0.0)
    report = LossReport(l_mse, l_con, total, len(mse), n_anchors, skipped)
    if not math.isfinite(total):
        raise NumericError(f"non-finite loss {total}")
    if not with_grad:
        return report, None

    dH = G @ H + G.T @ H
    dZ = np.zeros_like(dH)
    dZ[ok] = (dH[ok] - H[ok] * np.sum(dH[ok] * H[ok], axis=1, keepdims=True)) / norms[ok, None]
    dM = dZ.T @ X
    if params.mode == "full":
        grads = {"W": dM}
    else:
        grads = {"A": params.B.T @ dM, "B": dM @ params.A.T}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    return report, GradientSet(grads)


def total_loss(batch: PairBatch, pooled: np.ndarray, params: EncoderParams, cfg: LossConfig) -> LossReport:
    return evaluate(batch, pooled, params, cfg, with_grad=False)[0]


def backward(batch: PairBatch, pooled: np.ndarray, params: EncoderParams, cfg: LossConfig) -> GradientSet:
    return evaluate(batch, pooled, params, cfg)[1]


def finite_diff_check(batch: PairBatch, pooled: np.ndarray, params: EncoderParams, cfg: LossConfig,
                      epsilon: float = 1e-4, n_coords: int = 50, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Coordinates are sampled uniformly over all trainable entries.
    """
    if not 1e-7 <= epsilon <= 1e-2:
        raise ValueError("epsilon must lie in [1e-7, 1e-2]")
    grads = backward(batch, pooled, params, cfg)
    names = list(params.trainable())
    sizes = [params.trainable()[n].size for n in names]
    rng = np.random.default_rng(seed)
    flat = rng.choice(sum(sizes), size=min(n_coords, sum(sizes)), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for f in flat:
        t = int(np.searchsorted(offsets, f, side="right") - 1)
        name, local = names[t], int(f - offsets[t])
        probe = params.copy()
        target = probe.trainable()[name].reshape(-1)
        orig = target[local]
        target[local] = orig + epsilon
        up = total_loss(batch, pooled, probe, cfg).total
        target[local] = orig - epsilon
        down = total_loss(batch, pooled, probe, cfg).total
        g_fd = (up - down) / (2 * epsilon)
        g_a = float(grads[name].reshape(-1)[local])
        err = abs(g_a - g_fd) / max(abs(g_a), abs(g_fd), 1e-8)
        worst = max(worst, err)
    return worst
