import pytest

from biohicl.mesh import parse_descriptors
from biohicl.synthetic import random_hierarchy

SMALL_TSV = b"""# ui\tname\ttrees
D1\tNervous System Diseases\tC10
D2\tBrain Diseases\tC10.228
D3\tBrain Injuries\tC10.228.140
D4\tPsychiatry\tF04
D5\tBehavior Disorders\tF03.087;C10.228.140.999
D6\tCalcimycin\tD03.633.100.221.173
"""


@pytest.fixture
def small_hierarchy():
    return parse_descriptors(SMALL_TSV, "tsv")


@pytest.fixture(scope="session")
def synthetic_hierarchy():
    return random_hierarchy(200, branches="ACD", max_depth=5, multi_tree_prob=0.15, seed=7)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the assertion still decides the test outcome."""
    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
