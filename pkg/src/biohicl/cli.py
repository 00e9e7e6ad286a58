"""``biohicl`` command-line workbench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
File formats are described in FORMATS.md.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ABLATIONS, ConfigError, GridSpec, WorkbenchConfig
from .corpus import read_corpus, write_corpus
from .encoder import (ContainerError, encode_corpus, init_params, load_checkpoint, pool_corpus,
                      save_checkpoint, trainable_fraction, write_embeddings)
from .evaluation import bench, format_run, ndcg_at_k, read_qrels, recall_at_k, retrieve, spearman
from .labels import LabelError, build_label_space
from .mesh import MeshParseError, load_hierarchy, parse_descriptors
from .objective import NumericError, finite_diff_check
from .pairs import BatchSampler, UnbatchableCorpus, mine_pairs
from .synthetic import random_hierarchy, synthetic_corpus, write_hierarchy_tsv
from .trainer import format_table, run_ablation_suite, run_grid, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("biohicl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_or_print(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _config(args) -> WorkbenchConfig:
    cfg = WorkbenchConfig.load(args.config) if getattr(args, "config", None) else WorkbenchConfig()
    for name in getattr(args, "ablate", None) or []:
        cfg = cfg.ablate(name)
    return cfg


def cmd_parse_mesh(args) -> int:
    with open(args.inp, "rb") as fh:
        h = parse_descriptors(fh, args.format)
    h.save(args.out)
    print(h.summary())
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = random_hierarchy(args.concepts, seed=args.seed)
    write_hierarchy_tsv(out / "hierarchy.tsv", h)
    write_corpus(out / "corpus.jsonl", synthetic_corpus(h, args.docs, seed=args.seed + 1))
    print(f"wrote {out / 'hierarchy.tsv'} ({h.summary()}) and {out / 'corpus.jsonl'} ({args.docs} docs)")
    return EXIT_OK


def cmd_mine(args) -> int:
    cfg = _config(args)
    docs = read_corpus(args.corpus)
    h = load_hierarchy(args.hierarchy)
    space = build_label_space([d.mesh for d in docs], h, cfg.labels.ancestor_expansion, cfg.labels.depth_weighting)
    pairs = mine_pairs(space.vectors, space.weights, cfg.mining)
    _write_or_print(pairs.to_tsv(), args.out)
    print(f"{len(pairs.pos_i)} positives, {len(pairs.neg_i)} negatives, {pairs.excluded_count} excluded",
          file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    docs = read_corpus(args.corpus)
    h = load_hierarchy(args.hierarchy)
    res = train(docs, h, cfg)
    extra = {"config": cfg.to_dict(), "best_epoch": res.best_epoch,
             "best_validation_loss": res.best_validation_loss}
    save_checkpoint(args.out, res.best_params, cfg.encoder, extra)
    metrics = args.metrics or f"{args.out}.metrics.jsonl"
    Path(metrics).write_text(res.metrics_jsonl(), encoding="utf-8")
    print(f"best epoch {res.best_epoch}, validation loss {res.best_validation_loss:.6g}; "
          f"checkpoint {args.out}, metrics {metrics}")
    if res.aborted:
        print(f"training aborted: {res.aborted}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _read_texts(path) -> tuple[list[str], list[str]]:
    docs = read_corpus(path)
    return [d.id for d in docs], [d.text for d in docs]


def cmd_eval(args) -> int:
    params, ecfg, _ = load_checkpoint(args.checkpoint)
    qids, qtexts = _read_texts(args.queries)
    dids, dtexts = _read_texts(args.corpus)
    qrels = read_qrels(args.qrels)
    Q, qflags = encode_corpus(qtexts, params, ecfg)
    D, dflags = encode_corpus(dtexts, params, ecfg)
    report = {"task": args.task, "degenerate_queries": int(qflags.sum()), "degenerate_docs": int(dflags.sum())}
    if args.task == "sts":
        qpos = {q: i for i, q in enumerate(qids)}
        dpos = {d: i for i, d in enumerate(dids)}
        missing = [(q, d) for q, d in qrels if q not in qpos or d not in dpos]
        if missing:
            raise ValueError(f"qrels pair {missing[0]} refers to an unknown query or document")
        keys = sorted(qrels)
        pred = [float(Q[qpos[q]] @ D[dpos[d]]) for q, d in keys]
        report.update(metric="spearman", value=spearman(pred, [qrels[k] for k in keys]), n_pairs=len(keys))
    else:
        k = args.k if args.k is not None else (1 if args.task == "qa" else 10)
        run = retrieve(Q, D, k, qids, dids)
        if args.task == "qa":
            report.update(metric=f"recall@{k}", value=recall_at_k(run, qrels, k))
        else:
            report.update(metric=f"ndcg@{k}", value=ndcg_at_k(run, qrels, k, args.gain))
        report["n_queries"] = len(run)
        if args.run_out:
            Path(args.run_out).write_text(format_run(run), encoding="utf-8")
    _write_or_print(_dump(report), args.out)
    return EXIT_OK


def cmd_encode(args) -> int:
    params, ecfg, _ = load_checkpoint(args.checkpoint)
    _, texts = _read_texts(args.corpus)
    H, flags = encode_corpus(texts, params, ecfg)
    with open(args.out, "wb") as fh:
        write_embeddings(fh, H, flags if flags.any() else None)
    print(f"wrote {len(texts)} x {H.shape[1]} embeddings, {int(flags.sum())} degenerate")
    return EXIT_OK


def gradcheck(cfg: WorkbenchConfig, seed: int = 0, epsilon: float = 1e-4, n_coords: int = 50) -> float:
    """Finite-difference check on a random micro-batch with random (non-zero) adapters."""
    h = random_hierarchy(40, max_depth=4, seed=seed)
    docs = synthetic_corpus(h, 24, seed=seed + 1, boilerplate_tokens=8, filler_tokens=4)
    space = build_label_space([d.mesh for d in docs], h, cfg.labels.ancestor_expansion, cfg.labels.depth_weighting)
    pairs = mine_pairs(space.vectors, space.weights, cfg.mining)
    batch = next(BatchSampler(pairs, cfg.mining).epoch(0))
    params = init_params(cfg.encoder)
    rng = np.random.default_rng(seed)
    for t in params.trainable().values():
        t += rng.standard_normal(t.shape) * 0.3
    pooled = pool_corpus([d.text for d in docs], params, cfg.encoder)
    return finite_diff_check(batch, pooled, params, cfg.loss, epsilon, n_coords, seed)


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    err = gradcheck(cfg, args.seed, args.epsilon, args.coords)
    ok = err < 1e-4
    print(f"max relative error {err:.3e} ({'PASS' if ok else 'FAIL'} at 1e-4, mode={cfg.encoder.mode}, "
          f"epsilon={args.epsilon:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_grid(args) -> int:
    cfg = _config(args)
    grid = GridSpec()
    if args.grid:
        spec = json.loads(Path(args.grid).read_text(encoding="utf-8"))
        grid = GridSpec(tuple(spec.get("beta_values", grid.beta_values)),
                        tuple(spec.get("lambda_values", grid.lambda_values)))
    rows = run_grid(read_corpus(args.corpus), load_hierarchy(args.hierarchy), cfg, grid)
    cols = ["beta", "lambda", "best_epoch", "validation_loss", "alignment", "neg_sime", "ndcg@10"]
    print(format_table(rows, cols))
    if args.out:
        Path(args.out).write_text(_dump(rows), encoding="utf-8")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    rows = run_ablation_suite(read_corpus(args.corpus), load_hierarchy(args.hierarchy), cfg)
    print(format_table(rows, ["model", "best_epoch", "validation_loss", "alignment", "neg_sime", "ndcg@10"]))
    if args.out:
        Path(args.out).write_text(_dump(rows), encoding="utf-8")
    return EXIT_OK


def cmd_bench(args) -> int:
    params, ecfg, _ = load_checkpoint(args.checkpoint)
    _, texts = _read_texts(args.corpus)
    queries = _read_texts(args.queries)[1] if args.queries else texts[: max(1, len(texts) // 10)]
    report = bench(texts, queries, lambda ts: encode_corpus(ts, params, ecfg)[0], args.k, args.repetitions)
    out = json.loads(report.to_json())
    out["trainable_fraction"] = trainable_fraction(ecfg)
    _write_or_print(_dump(out), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="biohicl", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("parse-mesh", help="parse descriptor XML/TSV into a hierarchy cache")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--format", choices=["xml", "tsv"], default="xml")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_parse_mesh)

    s = sub.add_parser("synth", help="write a synthetic hierarchy TSV and corpus JSONL")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--concepts", type=int, default=200)
    s.add_argument("--docs", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    def common(s, corpus=True):
        if corpus:
            s.add_argument("--corpus", required=True)
            s.add_argument("--hierarchy", required=True, help="hierarchy cache, descriptor XML or TSV")
        s.add_argument("--config")
        s.add_argument("--ablate", action="append", choices=list(ABLATIONS), help="repeatable")

    s = sub.add_parser("mine", help="write the mined pair set as TSV")
    common(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_mine)

    s = sub.add_parser("train", help="labels -> pairs -> training; writes checkpoint and metrics JSONL")
    common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--metrics")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="retrieve (nDCG@k), sts (Spearman) or qa (Recall@k)")
    s.add_argument("task", choices=["retrieve", "sts", "qa"])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--queries", required=True, help="JSONL with id and text")
    s.add_argument("--corpus", required=True)
    s.add_argument("--qrels", required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--gain", choices=["linear", "exponential"], default="linear")
    s.add_argument("--out")
    s.add_argument("--run-out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("encode", help="dump corpus embeddings in the BHCL container")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    common(s, corpus=False)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epsilon", type=float, default=1e-4)
    s.add_argument("--coords", type=int, default=50)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("grid", help="beta x lambda grid")
    common(s)
    s.add_argument("--grid", help="JSON with beta_values and lambda_values")
    s.add_argument("--out")
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("ablate", help="full model plus the five single-component ablations")
    common(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("bench", help="encoding and retrieval latency")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--queries")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--repetitions", type=int, default=3)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"biohicl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"biohicl: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MeshParseError, LabelError, ContainerError, UnbatchableCorpus, OSError, ValueError, KeyError) as exc:
        print(f"biohicl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
