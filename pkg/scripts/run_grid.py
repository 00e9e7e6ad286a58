"""Beta x lambda sweep on the synthetic corpus."""

import argparse

from biohicl.config import GridSpec, WorkbenchConfig
from biohicl.synthetic import random_hierarchy, synthetic_corpus
from biohicl.trainer import format_table, run_grid


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--betas", type=float, nargs="+", default=list(GridSpec().beta_values))
    p.add_argument("--lambdas", type=float, nargs="+", default=list(GridSpec().lambda_values))
    args = p.parse_args()
    h = random_hierarchy(200, seed=args.seed)
    docs = synthetic_corpus(h, 500, seed=args.seed + 1)
    cfg = WorkbenchConfig().replace(train={"lr": args.lr, "epochs": args.epochs})
    rows = run_grid(docs, h, cfg, GridSpec(tuple(args.betas), tuple(args.lambdas)))
    print(format_table(rows, ["beta", "lambda", "best_epoch", "validation_loss", "alignment", "neg_sime", "ndcg@10"]))


if __name__ == "__main__":
    main()
