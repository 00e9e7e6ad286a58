"""Exact cosine retrieval and graded-relevance metrics (trec_eval conventions)."""

from __future__ import annotations

import json
import logging
import math
import time
import tracemalloc
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)

Qrels = dict[tuple[str, str], float]
RetrievalRun = dict[str, list[tuple[str, float]]]


def retrieve(query_embs: np.ndarray, corpus_embs: np.ndarray, k: int,
             query_ids: Sequence[str] | None = None, doc_ids: Sequence[str] | None = None) -> RetrievalRun:
    """Top-k documents per query by dot product; ties go to the smaller doc id."""
    query_embs = np.atleast_2d(np.asarray(query_embs, dtype=np.float64))
    corpus_embs = np.atleast_2d(np.asarray(corpus_embs, dtype=np.float64))
    if corpus_embs.shape[0] == 0 or corpus_embs.size == 0:
        raise ValueError("cannot retrieve from an empty corpus")
    if k < 1:
        raise ValueError("k must be >= 1")
    if query_embs.shape[1] != corpus_embs.shape[1]:
        raise ValueError(f"dimension mismatch: queries {query_embs.shape[1]}, corpus {corpus_embs.shape[1]}")
    n = corpus_embs.shape[0]
    query_ids = [f"q{i}" for i in range(len(query_embs))] if query_ids is None else list(query_ids)
    doc_ids = [f"d{i}" for i in range(n)] if doc_ids is None else list(doc_ids)
    if len(set(doc_ids)) != len(doc_ids):
        raise ValueError("duplicate document ids")
    id_rank = np.empty(n, dtype=np.int64)
    id_rank[np.argsort(np.array(doc_ids, dtype=object), kind="stable")] = np.arange(n)
    scores = query_embs @ corpus_embs.T
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite retrieval scores")
    k = min(k, n)
    run: RetrievalRun = {}
    for qi, qid in enumerate(query_ids):
        order = np.lexsort((id_rank, -scores[qi]))[:k]
        run[qid] = [(doc_ids[d], float(scores[qi, d])) for d in order]
    return run


def _grades_by_query(qrels: Mapping[tuple[str, str], float]) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for (q, d), g in qrels.items():
        out.setdefault(q, {})[d] = g
    return out


def ndcg_per_query(run: RetrievalRun, qrels: Mapping[tuple[str, str], float], k: int = 10,
                   gain: str = "linear") -> dict[str, float | None]:
    """nDCG@k per query; ``None`` where the ideal DCG is zero."""
    if gain == "linear":
        g = lambda x: x
    elif gain == "exponential":
        g = lambda x: 2.0 ** x - 1.0
    else:
        raise ValueError("gain must be 'linear' or 'exponential'")
    grades = _grades_by_query(qrels)
    out: dict[str, float | None] = {}
    for q, ranked in run.items():
        qg = grades.get(q, {})
        ideal = sorted((x for x in qg.values() if x > 0), reverse=True)[:k]
        idcg = sum(g(x) / math.log2(r + 2) for r, x in enumerate(ideal))
        if idcg == 0:
            out[q] = None
            continue
        dcg = sum(g(qg.get(d, 0)) / math.log2(r + 2) for r, (d, _) in enumerate(ranked[:k]))
        out[q] = dcg / idcg
    return out


def ndcg_at_k(run: RetrievalRun, qrels: Mapping[tuple[str, str], float], k: int = 10,
              gain: str = "linear") -> float:
    per = ndcg_per_query(run, qrels, k, gain)
    vals = [v for v in per.values() if v is not None]
    excluded = len(per) - len(vals)
    if excluded:
        log.info("nDCG@%d: %d queries without relevant documents excluded", k, excluded)
    return float(np.mean(vals)) if vals else 0.0


def recall_per_query(run: RetrievalRun, qrels: Mapping[tuple[str, str], float], k: int = 1) -> dict[str, float | None]:
    grades = _grades_by_query(qrels)
    out: dict[str, float | None] = {}
    for q, ranked in run.items():
        gold = {d for d, x in grades.get(q, {}).items() if x > 0}
        out[q] = None if not gold else float(any(d in gold for d, _ in ranked[:k]))
    return out


def recall_at_k(run: RetrievalRun, qrels: Mapping[tuple[str, str], float], k: int = 1) -> float:
    """Fraction of queries with at least one positive in the top k."""
    per = recall_per_query(run, qrels, k)
    vals = [v for v in per.values() if v is not None]
    if len(vals) < len(per):
        log.warning("Recall@%d: %d queries without positives excluded", k, len(per) - len(vals))
    return float(np.mean(vals)) if vals else 0.0


def spearman(pred: Sequence[float], gold: Sequence[float]) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1 or len(pred) < 2:
        raise ValueError("spearman needs two equal-length sequences of length >= 2")
    if np.all(gold == gold[0]):
        raise ValueError("undefined correlation: gold scores are constant")
    rp, rg = rankdata(pred), rankdata(gold)
    rp -= rp.mean()
    rg -= rg.mean()
    denom = math.sqrt(float(rp @ rp) * float(rg @ rg))
    if denom == 0:
        return 0.0
    return float(np.clip((rp @ rg) / denom, -1.0, 1.0))


# -- file formats --------------------------------------------------------------


def read_qrels(path) -> Qrels:
    """``query_id<TAB>doc_id<TAB>grade``; also accepts the 4-column trec form with an iteration column."""
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t") if "\t" in line else line.split()
            if len(cols) == 4:
                cols = [cols[0], cols[2], cols[3]]
            if len(cols) != 3:
                raise ValueError(f"{path}:{lineno}: expected query_id, doc_id, grade")
            if lineno == 1 and cols[2] in ("score", "grade", "relevance"):
                continue
            try:
                grade = float(cols[2])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: grade {cols[2]!r} is not a number") from None
            if grade < 0:
                raise ValueError(f"{path}:{lineno}: negative grade")
            qrels[(cols[0], cols[1])] = int(grade) if grade.is_integer() else grade
    return qrels


def format_run(run: RetrievalRun) -> str:
    return "".join(f"{q}\t{d}\t{r}\t{s!r}\n" for q in run for r, (d, s) in enumerate(run[q], start=1))


def read_run(text: str) -> RetrievalRun:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    for line in text.splitlines():
        if line.strip():
            q, d, r, s = line.split("\t")
            rows.setdefault(q, []).append((int(r), d, float(s)))
    return {q: [(d, s) for _, d, s in sorted(v)] for q, v in rows.items()}


# -- benchmarking --------------------------------------------------------------


@dataclass
class BenchReport:
    corpus_ms_per_doc: float
    query_ms_per_query: float
    retrieval_ms_per_query: float
    peak_memory_mb: float
    repetitions: int
    unstable: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        return cls(**json.loads(text))


def bench(corpus: Sequence[str], queries: Sequence[str], encode_many: Callable[[Sequence[str]], np.ndarray],
          k: int = 10, repetitions: int = 3) -> BenchReport:
    """Time corpus encoding, query encoding and retrieval.

    One warm-up pass is discarded; the reported figure is the median over
    ``repetitions`` timed passes. ``unstable`` is set when any timed pass is
    more than 3x another.
    """
    if not corpus:
        raise ValueError("bench needs a non-empty corpus")
    queries = list(queries) or list(corpus[:1])
    repetitions = max(3, repetitions)
    encode_many(corpus[:1])
    times = {"corpus": [], "query": [], "retrieve": []}
    tracemalloc.start()
    try:
        for _ in range(repetitions + 1):
            t0 = time.perf_counter()
            C = encode_many(corpus)
            t1 = time.perf_counter()
            Q = encode_many(queries)
            t2 = time.perf_counter()
            retrieve(Q, C, k)
            t3 = time.perf_counter()
            times["corpus"].append((t1 - t0) * 1e3 / len(corpus))
            times["query"].append((t2 - t1) * 1e3 / len(queries))
            times["retrieve"].append((t3 - t2) * 1e3 / len(queries))
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    timed = {k_: v[1:] for k_, v in times.items()}
    unstable = any(max(v) > 3 * min(v) for v in timed.values() if min(v) > 0)
    return BenchReport(
        corpus_ms_per_doc=float(np.median(timed["corpus"])),
        query_ms_per_query=float(np.median(timed["query"])),
        retrieval_ms_per_query=float(np.median(timed["retrieve"])),
        peak_memory_mb=peak / 2 ** 20,
        repetitions=repetitions,
        unstable=unstable,
    )
