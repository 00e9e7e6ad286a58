"""AdamW training loop, validation-loss model selection, ablations and grids."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .config import ABLATIONS, GridSpec, TrainConfig, WorkbenchConfig
from .corpus import Document
from .encoder import EncoderParams, init_params, pool_corpus, project
from .evaluation import ndcg_at_k, retrieve, spearman
from .labels import LabelSpace, build_label_space
from .mesh import MeshHierarchy
from .objective import LossReport, NumericError, evaluate
from .pairs import BatchSampler, PairBatch, PairSet, mine_pairs, split_pairs

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: EncoderParams) -> "OptimizerState":
        t = params.trainable()
        return cls({k: np.zeros_like(a) for k, a in t.items()}, {k: np.zeros_like(a) for k, a in t.items()})


def adamw_step(params: EncoderParams, grads, state: OptimizerState, cfg: TrainConfig):
    """One decoupled-weight-decay Adam update, applied in place to trainable tensors."""
    trainable = params.trainable()
    grads = getattr(grads, "grads", grads)
    if set(grads) != set(trainable):
        raise ValueError(f"gradient tensors {sorted(grads)} do not match trainable {sorted(trainable)}")
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, theta in trainable.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {theta.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        decay = cfg.lr * cfg.weight_decay * theta
        theta -= update + decay
    return params, state


@dataclass
class TrainRecord:
    step: int
    epoch: int
    loss: LossReport | None
    validation_loss: float | None
    wall_ms: float

    def to_json(self, timing: bool = True) -> str:
        d = {"step": self.step, "epoch": self.epoch,
             "loss": None if self.loss is None else asdict(self.loss),
             "validation_loss": self.validation_loss}
        if timing:
            d["wall_ms"] = self.wall_ms
        return json.dumps(d, sort_keys=True)


@dataclass
class Prepared:
    """Label space, mined pairs and pooled inputs shared by every run on one corpus."""

    docs: list[Document]
    space: LabelSpace
    pairs: PairSet
    train_pairs: PairSet
    val_pairs: PairSet
    pooled: np.ndarray


def prepare(docs: Sequence[Document], h: MeshHierarchy, cfg: WorkbenchConfig,
            space: LabelSpace | None = None) -> Prepared:
    docs = list(docs)
    if space is None:
        space = build_label_space([d.mesh for d in docs], h, cfg.labels.ancestor_expansion,
                                  cfg.labels.depth_weighting)
    pairs = mine_pairs(space.vectors, space.weights, cfg.mining)
    train_pairs, val_pairs = split_pairs(pairs, cfg.train.validation_fraction, cfg.train.seed)
    pooled = pool_corpus([d.text for d in docs], init_params(cfg.encoder), cfg.encoder)
    return Prepared(docs, space, pairs, train_pairs, val_pairs, pooled)


def validation_batches(val_pairs: PairSet, cfg: WorkbenchConfig) -> list[PairBatch]:
    # fixed across epochs so validation losses are comparable
    return list(BatchSampler(val_pairs, cfg.mining).epoch(0))


def validation_loss(batches: Sequence[PairBatch], pooled: np.ndarray, params: EncoderParams, cfg) -> float:
    totals = [evaluate(b, pooled, params, cfg.loss, with_grad=False)[0].total for b in batches]
    return float(np.mean(totals))


@dataclass
class TrainResult:
    best_params: EncoderParams
    best_epoch: int
    best_validation_loss: float
    validation_losses: list[float]
    records: list[TrainRecord] = field(default_factory=list)
    final_params: EncoderParams | None = None
    aborted: str | None = None

    def metrics_jsonl(self, timing: bool = True) -> str:
        return "".join(r.to_json(timing) + "\n" for r in self.records)


def train(docs: Sequence[Document], h: MeshHierarchy, cfg: WorkbenchConfig,
          prepared: Prepared | None = None) -> TrainResult:
    """Train trainable tensors with AdamW; keep the epoch with the lowest validation loss.

    Epoch 0 is the untrained model, so ``epochs=0`` returns the initial parameters.
    """
    prep = prepared or prepare(docs, h, cfg)
    sampler = BatchSampler(prep.train_pairs, cfg.mining)
    val_batches = validation_batches(prep.val_pairs, cfg)
    params = init_params(cfg.encoder)
    state = OptimizerState.for_params(params)

    val = validation_loss(val_batches, prep.pooled, params, cfg)
    result = TrainResult(params.copy(), 0, val, [val])
    result.records.append(TrainRecord(0, 0, None, val, 0.0))
    step = 0
    for epoch in range(1, cfg.train.epochs + 1):
        try:
            for batch in sampler.epoch(epoch):
                t0 = time.perf_counter()
                report, grads = evaluate(batch, prep.pooled, params, cfg.loss)
                adamw_step(params, grads, state, cfg.train)
                step += 1
                result.records.append(TrainRecord(step, epoch, report, None,
                                                  (time.perf_counter() - t0) * 1e3))
            val = validation_loss(val_batches, prep.pooled, params, cfg)
            if not math.isfinite(val):
                raise NumericError(f"non-finite validation loss at epoch {epoch}")
        except NumericError as exc:
            log.error("aborting at epoch %d: %s", epoch, exc)
            result.aborted = str(exc)
            break
        result.validation_losses.append(val)
        result.records.append(TrainRecord(step, epoch, None, val, 0.0))
        if val < result.best_validation_loss:
            result.best_params = params.copy()
            result.best_epoch = epoch
            result.best_validation_loss = val
    result.final_params = params
    return result


# -- alignment metrics and experiment drivers ----------------------------------


def pair_sime(params: EncoderParams, pooled: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    H, _ = project(pooled, params)
    return np.einsum("nd,nd->n", H[i], H[j])


def alignment(params: EncoderParams, pooled: np.ndarray, pairs: PairSet) -> float:
    """Spearman correlation between SimE and SimL over the positive pairs."""
    return spearman(pair_sime(params, pooled, pairs.pos_i, pairs.pos_j), pairs.pos_sim)


def negative_similarity(params: EncoderParams, pooled: np.ndarray, pairs: PairSet) -> float:
    """Mean SimE over negative pairs; lower means less collapse."""
    return float(np.mean(pair_sime(params, pooled, pairs.neg_i, pairs.neg_j)))


def synthetic_ndcg(params: EncoderParams, prep: Prepared, beta: float, k: int = 10,
                   n_queries: int = 50) -> float:
    """Leave-one-out retrieval over the corpus graded by label similarity.

    A document is grade 2 for a query when SimL > (1 + beta) / 2, grade 1
    when SimL > beta, else 0. Queries are the first ``n_queries`` documents.
    """
    H, _ = project(prep.pooled, params)
    ids = [d.id for d in prep.docs]
    strong = (1.0 + beta) / 2
    run, qrels = {}, {}
    for q in range(min(n_queries, len(ids))):
        others = np.array([d for d in range(len(ids)) if d != q])
        single = retrieve(H[q:q + 1], H[others], k, [ids[q]], [ids[d] for d in others])
        run.update(single)
        for d in others:
            s = prep.space.sim(q, int(d))
            grade = 2 if s > strong else 1 if s > beta else 0
            if grade:
                qrels[(ids[q], ids[d])] = grade
    return ndcg_at_k(run, qrels, k)


def describe(params: EncoderParams, prep: Prepared, reference: Prepared, cfg: WorkbenchConfig) -> dict:
    """Held-out metrics of ``params`` measured against the reference label space."""
    return {
        "alignment": alignment(params, reference.pooled, reference.val_pairs),
        "neg_sime": negative_similarity(params, reference.pooled, reference.val_pairs),
        "ndcg@10": synthetic_ndcg(params, reference, cfg.mining.beta, cfg.eval.k),
    }


def run_ablation_suite(docs: Sequence[Document], h: MeshHierarchy, cfg: WorkbenchConfig) -> list[dict]:
    """Full model plus the five single-toggle ablations, all scored on the full model's held-out pairs."""
    reference = prepare(docs, h, cfg)
    rows = []
    variants = [("full model", None)] + [(label, key) for key, (label, _, _) in ABLATIONS.items()]
    for label, key in variants:
        vcfg = cfg if key is None else cfg.ablate(key)
        prep = reference if key in (None, "w/o-lmse", "w/o-lcon") else prepare(docs, h, vcfg)
        res = train(docs, h, vcfg, prepared=prep)
        row = {"model": label, "best_epoch": res.best_epoch,
               "validation_loss": res.best_validation_loss}
        row.update(describe(res.best_params, prep, reference, cfg))
        rows.append(row)
    return rows


def run_grid(docs: Sequence[Document], h: MeshHierarchy, cfg: WorkbenchConfig,
             grid: GridSpec = GridSpec()) -> list[dict]:
    """Train one model per (beta, lambda) cell; label vectors are built once and shared."""
    space = build_label_space([d.mesh for d in docs], h, cfg.labels.ancestor_expansion,
                              cfg.labels.depth_weighting)
    reference = prepare(docs, h, cfg, space=space)
    rows = []
    for beta in sorted(grid.beta_values):
        prep = prepare(docs, h, cfg.replace(mining={"beta": beta}), space=space)
        for lam in sorted(grid.lambda_values):
            ccfg = cfg.replace(mining={"beta": beta}, loss={"lam": lam, "beta": beta})
            res = train(docs, h, ccfg, prepared=prep)
            row = {"beta": beta, "lambda": lam, "best_epoch": res.best_epoch,
                   "validation_loss": res.best_validation_loss}
            row.update(describe(res.best_params, prep, reference, cfg))
            rows.append(row)
    return rows


def format_table(rows: list[dict], columns: Sequence[str]) -> str:
    def fmt(v):
        return f"{v:.3f}" if isinstance(v, float) else str(v)
    cells = [[fmt(r[c]) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[k]) for row in cells)) for k, c in enumerate(columns)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(columns, widths)),
             "-+-".join("-" * w for w in widths)]
    lines += [" | ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
