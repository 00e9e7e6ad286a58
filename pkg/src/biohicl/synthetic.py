"""Synthetic MeSH-like hierarchies and labelled corpora for tests and toy runs."""

from __future__ import annotations

import math

import numpy as np

from .corpus import Document
from .mesh import MeshDescriptor, MeshHierarchy, TreeNumber


def random_hierarchy(n_descriptors: int = 200, branches: str = "ACD", max_depth: int = 5,
                     multi_tree_prob: float = 0.0, seed: int = 0) -> MeshHierarchy:
    """Random prefix tree with one root per branch letter.

    With ``multi_tree_prob`` > 0 some descriptors receive a second tree
    position under an unrelated parent, as real MeSH descriptors often do.
    """
    rng = np.random.default_rng(seed)
    nodes: list[tuple[str, ...]] = [(f"{b}{k + 1:02d}",) for k, b in enumerate(branches)]
    children: dict[tuple[str, ...], int] = {n: 0 for n in nodes}
    while len(nodes) < n_descriptors:
        open_nodes = [n for n in nodes if len(n) < max_depth]
        # shallower parents are favoured so every level gets populated
        weights = np.array([1.0 / (1 + children[n]) for n in open_nodes])
        parent = open_nodes[rng.choice(len(open_nodes), p=weights / weights.sum())]
        children[parent] += 1
        child = parent + (f"{children[parent] * 10 + 1:03d}",)
        nodes.append(child)
        children[child] = 0

    trees: list[list[tuple[str, ...]]] = [[n] for n in nodes]
    if multi_tree_prob > 0:
        # Only leaves get a second position, and only under single-position
        # parents, so every descendant sits under every position of its
        # parent as in MeSH and the prefix rule stays transitive.
        extra_children: dict[int, int] = {}
        for k in range(len(branches), len(nodes)):
            if children[nodes[k]] or k in extra_children or rng.random() >= multi_tree_prob:
                continue
            p = int(rng.integers(len(nodes)))
            if p == k or len(trees[p]) > 1 or len(nodes[p]) >= max_depth:
                continue
            extra_children[p] = extra_children.get(p, 0) + 1
            trees[k].append(nodes[p] + (f"{extra_children[p]:03d}9",))

    descs = [MeshDescriptor(f"D{k:06d}", f"Concept {k}", tuple(TreeNumber(t) for t in ts))
             for k, ts in enumerate(trees)]
    return MeshHierarchy.from_descriptors(descs)


def _concept_words(ui: str, n: int) -> list[str]:
    return [f"{ui.lower()}w{k}" for k in range(n)]


def synthetic_corpus(h: MeshHierarchy, n_docs: int = 500, seed: int = 0,
                     labels_per_doc: tuple[int, int] = (1, 3), words_per_concept: int = 3,
                     concept_tokens: int = 4, filler_tokens: int = 12, boilerplate_tokens: int = 48,
                     n_boilerplate: int = 4, depth_scaled: bool = True) -> list[Document]:
    """Documents whose tokens are drawn from their labels and those labels' ancestors.

    Each document picks one branch and a second-level topic inside it, then
    1-3 labels from that topic's subtree. For every concept on the paths to
    its labels it emits ``concept_tokens`` words tied to that concept,
    plus random filler words and a heavy, randomly weighted mixture of a few
    boilerplate words shared by the whole corpus.
    """
    rng = np.random.default_rng(seed)
    by_root: dict[str, list[str]] = {}
    subtree: dict[str, list[str]] = {}
    for ui, d in sorted(h.descriptors.items()):
        t = d.tree_numbers[0]
        if t.depth == 2:
            by_root.setdefault(h.tree_index[TreeNumber(t.segments[:1])], []).append(ui)
    for ui, d in sorted(h.descriptors.items()):
        t = d.tree_numbers[0]
        if t.depth >= 2:
            top = h.tree_index.get(TreeNumber(t.segments[:2]))
            if top is not None:
                subtree.setdefault(top, []).append(ui)

    roots = sorted(by_root)
    boiler = [f"boiler{k}" for k in range(n_boilerplate)]
    docs = []
    for n in range(n_docs):
        root = roots[rng.integers(len(roots))]
        topic = by_root[root][rng.integers(len(by_root[root]))]
        pool = subtree[topic]
        k = int(rng.integers(labels_per_doc[0], labels_per_doc[1] + 1))
        labels = sorted(set(rng.choice(pool, size=min(k, len(pool)), replace=False).tolist()))
        words: list[str] = []
        for ui in sorted(h.expand_hier(labels)):
            vocab = _concept_words(ui, words_per_concept)
            n_tok = concept_tokens
            if depth_scaled:
                n_tok = max(1, round(concept_tokens * math.log(h.depth(ui) + 1) / math.log(2)))
            words += [vocab[i] for i in rng.integers(len(vocab), size=n_tok)]
        words += [f"filler{i}" for i in rng.integers(5000, size=filler_tokens)]
        mix = rng.dirichlet(np.full(n_boilerplate, 0.3))
        words += [boiler[i] for i in rng.choice(n_boilerplate, size=boilerplate_tokens, p=mix)]
        order = rng.permutation(len(words))
        docs.append(Document(f"doc{n:05d}", " ".join(words[i] for i in order), tuple(labels)))
    return docs


def write_hierarchy_tsv(path, h: MeshHierarchy) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ui in sorted(h.descriptors):
            d = h.descriptors[ui]
            fh.write(f"{ui}\t{d.name}\t{';'.join(str(t) for t in d.tree_numbers)}\n")
