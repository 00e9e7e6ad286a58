import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biohicl.mesh import MeshHierarchy, MeshParseError, TreeNumber, load_hierarchy, parse_descriptors
from biohicl.synthetic import random_hierarchy

XML = b"""<?xml version="1.0"?>
<DescriptorRecordSet LanguageCode="eng">
 <DescriptorRecord DescriptorClass="1">
  <DescriptorUI>D000001</DescriptorUI>
  <DescriptorName><String>Calcimycin</String></DescriptorName>
  <DateCreated><Year>1974</Year></DateCreated>
  <TreeNumberList><TreeNumber>D03.633.100.221.173</TreeNumber></TreeNumberList>
  <ConceptList><Concept PreferredConceptYN="Y"><ConceptUI>M0000001</ConceptUI></Concept></ConceptList>
 </DescriptorRecord>
 <DescriptorRecord DescriptorClass="1">
  <DescriptorUI>D000002</DescriptorUI>
  <DescriptorName><String>Temefos</String></DescriptorName>
  <TreeNumberList><TreeNumber>D02.705.400.625.800</TreeNumber><TreeNumber>D02.886.300.692.800</TreeNumber></TreeNumberList>
 </DescriptorRecord>
 <DescriptorRecord DescriptorClass="4">
  <DescriptorUI>D005260</DescriptorUI>
  <DescriptorName><String>Female</String></DescriptorName>
 </DescriptorRecord>
</DescriptorRecordSet>
"""


def brute_force_ancestors(h: MeshHierarchy, ui: str) -> set[str]:
    out = set()
    for other, d in h.descriptors.items():
        if other == ui:
            continue
        if any(t.is_strict_prefix_of(s) for t in d.tree_numbers for s in h.descriptors[ui].tree_numbers):
            out.add(other)
    return out


def test_tsv_single_line():
    h = parse_descriptors(b"D000001\tCalcimycin\tD03.633.100.221.173\n", "tsv")
    assert len(h) == 1
    d = h.descriptors["D000001"]
    assert d.name == "Calcimycin"
    assert len(d.tree_numbers) == 1
    assert h.depth("D000001") == 5


def test_xml_parse_and_skip():
    h = parse_descriptors(XML, "xml")
    assert sorted(h.descriptors) == ["D000001", "D000002"]
    assert h.skipped == ("D005260",)
    assert h.descriptors["D000002"].tree_numbers[1] == TreeNumber.parse("D02.886.300.692.800")
    assert h.depth("D000001") == 5


def test_xml_matches_tsv():
    tsv = b"D000001\tCalcimycin\tD03.633.100.221.173\nD000002\tTemefos\tD02.705.400.625.800;D02.886.300.692.800\n"
    assert parse_descriptors(tsv, "tsv").descriptors == parse_descriptors(XML, "xml").descriptors


def test_malformed_xml_reports_position():
    with pytest.raises(MeshParseError) as err:
        parse_descriptors(b"<DescriptorRecordSet>\n<DescriptorRecord>\n</Oops>", "xml")
    assert err.value.position is not None
    assert err.value.position[0] == 3


def test_malformed_tsv_reports_line():
    with pytest.raises(MeshParseError, match="line 2"):
        parse_descriptors(b"D1\ta\tC10\nD2\tonly two\n", "tsv")


def test_duplicate_ui_rejected():
    with pytest.raises(MeshParseError, match="duplicate"):
        parse_descriptors(b"D1\ta\tC10\nD1\tb\tC11\n", "tsv")
    dup = XML.replace(b"D000002", b"D000001")
    with pytest.raises(MeshParseError, match="duplicate"):
        parse_descriptors(dup, "xml")


def test_skips_descriptor_without_tree_numbers():
    h = parse_descriptors(b"D1\ta\tC10\nD2\tb\t\n", "tsv")
    assert list(h.descriptors) == ["D1"]
    assert h.skipped == ("D2",)


def test_bad_branch_letter():
    with pytest.raises(MeshParseError):
        parse_descriptors(b"D1\ta\tX10.1\n", "tsv")


def test_unknown_format():
    with pytest.raises(ValueError):
        parse_descriptors(b"", "csv")


def test_depth_rules(small_hierarchy):
    h = small_hierarchy
    assert h.depth("D1") == 1
    assert h.depth("D3") == 3
    # F03.087 (2 segments) beats C10.228.140.999 (4)
    assert h.depth("D5") == 2
    assert all(h.depth(ui) >= 1 for ui in h.descriptors)
    with pytest.raises(KeyError):
        h.depth("D999")


def test_ancestors(small_hierarchy):
    h = small_hierarchy
    assert h.ancestors("D1") == set()
    assert h.ancestors("D2") == {"D1"}
    assert h.ancestors("D3") == {"D1", "D2"}
    # F03 is not registered and is skipped silently
    assert h.ancestors("D5") == {"D1", "D2", "D3"}
    assert h.ancestors("D6") == set()
    with pytest.raises(KeyError):
        h.ancestors("nope")


def test_expand_hier(small_hierarchy):
    h = small_hierarchy
    assert h.expand_hier([]) == set()
    assert h.expand_hier(["D3"]) == {"D1", "D2", "D3"}
    with pytest.raises(KeyError):
        h.expand_hier(["D3", "missing"])


def test_ancestors_match_pairwise_prefix_oracle(synthetic_hierarchy):
    h = synthetic_hierarchy
    assert len(h) == 200
    assert h.branches == {"A", "C", "D"}
    assert max(t.depth for t in h.tree_index) <= 5
    assert any(len(d.tree_numbers) > 1 for d in h.descriptors.values())
    for ui in h.descriptors:
        assert h.ancestors(ui) == brute_force_ancestors(h, ui)


def test_resolving_prefix_is_shorter(synthetic_hierarchy):
    h = synthetic_hierarchy
    for ui, d in h.descriptors.items():
        for t in d.tree_numbers:
            for p in t.prefixes():
                if p in h.tree_index:
                    assert p.depth < t.depth
                    assert h.tree_index[p] in h.ancestors(ui) or h.tree_index[p] == ui


def test_ancestor_relation_acyclic(synthetic_hierarchy):
    h = synthetic_hierarchy
    for x, y in itertools.product(list(h.descriptors)[:60], repeat=2):
        if y in h.ancestors(x):
            assert x not in h.ancestors(y)


def test_expand_hier_idempotent_on_random_sets(synthetic_hierarchy):
    h = synthetic_hierarchy
    rng = np.random.default_rng(3)
    uis = sorted(h.descriptors)
    for _ in range(100):
        s = set(rng.choice(uis, size=rng.integers(0, 8), replace=False).tolist())
        once = h.expand_hier(s)
        assert once >= s
        assert h.expand_hier(once) == once


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(5, 60), multi=st.floats(0, 0.5))
def test_prefix_soundness_property(seed, n, multi):
    h = random_hierarchy(n, branches="CF", max_depth=4, multi_tree_prob=multi, seed=seed)
    for ui in h.descriptors:
        assert h.ancestors(ui) == brute_force_ancestors(h, ui)
        assert ui not in h.ancestors(ui)


def test_determinism_and_cache_roundtrip(tmp_path, synthetic_hierarchy):
    from biohicl.synthetic import write_hierarchy_tsv

    path = tmp_path / "h.tsv"
    write_hierarchy_tsv(path, synthetic_hierarchy)
    a = load_hierarchy(path)
    b = load_hierarchy(path)
    assert a == b == synthetic_hierarchy
    assert a.to_bytes() == b.to_bytes()
    cache = tmp_path / "h.bhmh"
    a.save(cache)
    c = MeshHierarchy.load(cache)
    assert c == a
    assert c.tree_index == a.tree_index
    assert load_hierarchy(cache) == a


def test_cache_rejects_garbage():
    with pytest.raises(MeshParseError):
        MeshHierarchy.from_bytes(b"nope")


def test_summary_counts(small_hierarchy):
    assert small_hierarchy.summary().startswith("6 descriptors, 7 tree numbers, 3 branches (CDF)")
