import numpy as np
import pytest

from biohicl.labels import LabelVector, WeightVector, build_label_space, sim_l
from biohicl.pairs import (BatchSampler, MiningConfig, PairSet, UnbatchableCorpus, mine_pairs,
                           sample_batches, split_pairs)
from biohicl.synthetic import synthetic_corpus


def naive_mine(vectors, w, beta):
    pos, neg, excluded = [], [], 0
    n = len(vectors)
    for i in range(n):
        for j in range(i + 1, n):
            s = sim_l(vectors[i], vectors[j], w)
            if s > beta:
                pos.append((i, j, s))
            elif s == 0.0:
                neg.append((i, j))
            else:
                excluded += 1
    return pos, neg, excluded


@pytest.fixture(scope="module")
def space100(synthetic_hierarchy):
    docs = synthetic_corpus(synthetic_hierarchy, 100, seed=4)
    return build_label_space([d.mesh for d in docs], synthetic_hierarchy)


@pytest.mark.parametrize("beta", [0.1, 0.3, 0.5])
def test_matches_double_loop_oracle(space100, beta):
    ps = mine_pairs(space100.vectors, space100.weights, MiningConfig(beta=beta))
    pos, neg, excluded = naive_mine(space100.vectors, space100.weights, beta)
    assert ps.positives == pos
    assert ps.negatives == neg
    assert ps.excluded_count == excluded
    assert len(ps.pos_i) + len(ps.neg_i) + ps.excluded_count == 100 * 99 // 2
    assert np.all(ps.pos_sim > 0)


def test_beta_monotone(space100):
    counts = [len(mine_pairs(space100.vectors, space100.weights, MiningConfig(beta=b)).pos_i)
              for b in (0.0, 0.1, 0.3, 0.5, 0.9)]
    assert counts == sorted(counts, reverse=True)


def test_threshold_is_strict():
    w = WeightVector(np.ones(4))
    # unweighted: 1 / sqrt(1 * 4) = 0.5 exactly
    a = LabelVector(np.array([0]), 4)
    b = LabelVector(np.array([0, 1, 2, 3]), 4)
    assert sim_l(a, b, w) == 0.5
    ps = mine_pairs([a, b], w, MiningConfig(beta=0.5))
    assert len(ps.pos_i) == 0 and len(ps.neg_i) == 0 and ps.excluded_count == 1


def test_two_document_cases():
    w = WeightVector(np.ones(3))
    a = LabelVector(np.array([0, 1]), 3)
    same = mine_pairs([a, a], w, MiningConfig())
    assert same.positives == [(0, 1, 1.0)] and same.negatives == []
    apart = mine_pairs([a, LabelVector(np.array([2]), 3)], w, MiningConfig())
    assert apart.positives == [] and apart.negatives == [(0, 1)]
    with pytest.raises(ValueError):
        mine_pairs([a], w, MiningConfig())


def test_tsv_roundtrip(space100):
    ps = mine_pairs(space100.vectors, space100.weights, MiningConfig())
    back = PairSet.from_tsv(ps.to_tsv())
    assert back == ps


def test_split_is_disjoint_and_complete(space100):
    ps = mine_pairs(space100.vectors, space100.weights, MiningConfig())
    train, val = split_pairs(ps, 0.2, seed=3)
    tp = set(zip(train.pos_i.tolist(), train.pos_j.tolist())) | set(zip(train.neg_i.tolist(), train.neg_j.tolist()))
    vp = set(zip(val.pos_i.tolist(), val.pos_j.tolist())) | set(zip(val.neg_i.tolist(), val.neg_j.tolist()))
    assert not tp & vp
    assert len(tp) + len(vp) == len(ps)
    assert 0.1 < len(vp) / len(ps) < 0.3
    again = split_pairs(ps, 0.2, seed=3)
    assert again[0] == train and again[1] == val


def test_batches_deterministic(space100):
    ps = mine_pairs(space100.vectors, space100.weights, MiningConfig())
    cfg = MiningConfig(batch_size=16, seed=5)
    assert list(sample_batches(ps, cfg, 2)) == list(sample_batches(ps, cfg, 2))
    assert list(sample_batches(ps, cfg, 2)) != list(sample_batches(ps, cfg, 3))


def test_batch_contents_valid(space100):
    ps = mine_pairs(space100.vectors, space100.weights, MiningConfig())
    pos = {(i, j): s for i, j, s in ps.positives}
    neg = set(ps.negatives)
    cfg = MiningConfig(batch_size=10, negatives_per_anchor=3, max_positives_per_anchor=2)
    for batch in sample_batches(ps, cfg):
        assert len(batch.anchors) <= 10
        for a, ps_, ns in zip(batch.anchors, batch.positives, batch.negatives):
            assert 1 <= len(ps_) <= 2 and 1 <= len(ns) <= 3
            for p, s in ps_:
                assert pos[(min(a, p), max(a, p))] == s
            for n in ns:
                assert (min(a, n), max(a, n)) in neg


def test_anchor_coverage(space100):
    ps = mine_pairs(space100.vectors, space100.weights, MiningConfig())
    sampler = BatchSampler(ps, MiningConfig(batch_size=7))
    seen = [a for b in sampler.epoch(1) for a in b.anchors]
    with_pos = set(ps.pos_i.tolist()) | set(ps.pos_j.tolist())
    with_neg = set(ps.neg_i.tolist()) | set(ps.neg_j.tolist())
    assert sorted(seen) == sorted(with_pos & with_neg)
    assert sampler.skipped_anchors == len(with_pos - with_neg)


def test_unbatchable():
    w = WeightVector(np.ones(2))
    a = LabelVector(np.array([0, 1]), 2)
    ps = mine_pairs([a, a, a], w, MiningConfig())
    assert len(ps.pos_i) == 3 and len(ps.neg_i) == 0
    with pytest.raises(UnbatchableCorpus, match="unbatchable corpus"):
        BatchSampler(ps, MiningConfig())
