"""Write a synthetic hierarchy TSV and labelled corpus JSONL."""

import argparse
from pathlib import Path

from biohicl.corpus import write_corpus
from biohicl.synthetic import random_hierarchy, synthetic_corpus, write_hierarchy_tsv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--concepts", type=int, default=200)
    p.add_argument("--docs", type=int, default=500)
    p.add_argument("--max-depth", type=int, default=5)
    p.add_argument("--multi-tree", type=float, default=0.0, help="probability of a second tree position")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    h = random_hierarchy(args.concepts, max_depth=args.max_depth, multi_tree_prob=args.multi_tree, seed=args.seed)
    write_hierarchy_tsv(args.out_dir / "hierarchy.tsv", h)
    write_corpus(args.out_dir / "corpus.jsonl", synthetic_corpus(h, args.docs, seed=args.seed + 1))
    print(h.summary())


if __name__ == "__main__":
    main()
