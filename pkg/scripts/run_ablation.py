"""Full model plus the five single-toggle ablations on the synthetic corpus."""

import argparse
import json

from biohicl.config import WorkbenchConfig
from biohicl.synthetic import random_hierarchy, synthetic_corpus
from biohicl.trainer import format_table, run_ablation_suite


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--json", help="also write rows here")
    args = p.parse_args()
    h = random_hierarchy(200, seed=args.seed)
    docs = synthetic_corpus(h, 500, seed=args.seed + 1)
    cfg = WorkbenchConfig().replace(train={"lr": args.lr, "epochs": args.epochs, "seed": args.seed})
    rows = run_ablation_suite(docs, h, cfg)
    print(format_table(rows, ["model", "best_epoch", "validation_loss", "alignment", "neg_sime", "ndcg@10"]))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
