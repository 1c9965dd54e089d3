import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arborabc import (
    default_field,
    default_soma,
    extract,
    model2_defaults,
    parse_swc,
    sections,
    select_subtree,
    simulate,
    write_swc,
)
from arborabc.swc import SwcError


SIMPLE = """\
# soma plus an apical path
1 1 0 0 0 5.0 -1
2 4 0 0 20 1.0 1
3 4 0 0 35 1.0 2
"""


def test_parse_simple_path():
    trees, report = parse_swc(SIMPLE)
    assert report.ok
    assert report.n_records == 3
    assert len(trees) == 1
    tree = trees[0]
    # soma -> point at 20 (root agent starts on the soma surface) -> point at 35
    assert tree.n_agents == 2
    assert len(tree.tip_ids()) == 1
    assert np.allclose(tree.start[0], [0, 0, 5.0])
    assert np.allclose(tree.end[0], [0, 0, 20.0])
    assert np.allclose(tree.end[1], [0, 0, 35.0])
    assert len(sections(tree)) == 1


def test_parse_forward_reference_rejected():
    text = "1 1 0 0 0 5 -1\n2 3 0 0 9 1 4\n4 3 0 0 12 1 1\n"
    trees, report = parse_swc(text)
    assert not report.ok
    assert any("line 2" in v and "forward reference" in v for v in report.violations)


def test_parse_only_comments():
    trees, report = parse_swc("# nothing\n# here\n\n")
    assert trees == []
    assert report.n_records == 0
    assert any("no records" in v for v in report.violations)


def test_parse_duplicate_id():
    text = "1 1 0 0 0 5 -1\n2 3 0 0 9 1 1\n2 3 0 0 12 1 1\n"
    _, report = parse_swc(text)
    assert any("duplicate id" in v and "line 3" in v for v in report.violations)


def test_parse_bad_columns_and_nonnumeric():
    _, report = parse_swc("1 1 0 0 0 5\nabc 1 0 0 0 5 -1\n")
    msgs = " | ".join(report.violations)
    assert "expected 7 columns" in msgs
    assert "non-numeric" in msgs


def test_parse_non_finite():
    _, report = parse_swc("1 1 0 0 inf 5 -1\n")
    assert any("non-finite" in v for v in report.violations)


def test_parse_tolerates_weird_spacing():
    text = "  1   1  0 0 0   5.0   -1\n\t2  4\t0 0 20 1.0 1\n"
    trees, report = parse_swc(text)
    assert report.ok
    assert len(trees) == 1


def test_roundtrip_simulated_tree():
    tree = simulate("model2", default_soma("model2"), model2_defaults(),
                    default_field(), seed=17)
    text = write_swc(tree, type_code=4)
    trees, report = parse_swc(text)
    assert report.ok
    assert len(trees) == 1
    back = trees[0]
    # agent ids are relabeled to writer order; topology and geometry survive
    assert back.n_agents == tree.n_agents
    assert len(back.tip_ids()) == len(tree.tip_ids())
    assert write_swc(back) == text  # canonical form is idempotent
    # coordinates agree to the emitted precision (as point sets)
    pts1 = np.sort(np.round(tree.end, 4).view([("x", float), ("y", float), ("z", float)]), axis=0)
    pts2 = np.sort(np.round(back.end, 4).view([("x", float), ("y", float), ("z", float)]), axis=0)
    assert np.array_equal(pts1, pts2)
    q1, q2 = extract(tree), extract(back)
    assert q1[0] == q2[0]
    assert abs(q1[3] - q2[3]) < tree.n_agents * 2e-4


def test_write_single_agent_three_records(soma_one):
    from arborabc import init_neuron

    tree = init_neuron(soma_one, 1.0, 1.0)
    lines = [l for l in write_swc(tree).splitlines() if not l.startswith("#")]
    assert len(lines) == 3  # soma + start point + end point


def test_write_deterministic():
    tree = simulate("model2", default_soma("model2"), model2_defaults(),
                    default_field(), seed=3)
    assert write_swc(tree) == write_swc(tree)


def test_roundtrip_twice_stable():
    tree = simulate("model1", default_soma("model1"), model2_defaults(),
                    default_field(), seed=5)
    text1 = write_swc(tree, type_code=3)
    trees, _ = parse_swc(text1)
    text2 = write_swc(trees[0], type_code=3)
    trees2, _ = parse_swc(text2)
    assert trees2[0].n_agents == trees[0].n_agents
    assert text2 == write_swc(trees2[0], type_code=3)


MIXED = """\
1 1 0 0 0 5 -1
2 3 0 0 -20 1 1
3 3 0 0 -30 1 2
4 4 0 0 20 1 1
5 4 0 0 32 1 4
6 4 0 8 40 1 5
7 4 0 -8 40 1 5
"""


def test_select_subtree_apical():
    trees, report = parse_swc(MIXED)
    assert report.ok and len(trees) == 1
    tree = trees[0]
    apical = select_subtree(tree, {4})
    assert apical.n_agents == 4
    assert all(c == 4 for c in apical.type_code)
    assert len(sections(apical)) <= len(sections(tree))
    full = select_subtree(tree, {3, 4})
    assert full.n_agents == tree.n_agents
    with pytest.raises(SwcError):
        select_subtree(tree, {7})
    with pytest.raises(SwcError):
        select_subtree(tree, set())


def test_multiple_components():
    text = "1 1 0 0 0 5 -1\n2 3 0 0 20 1 1\n10 3 100 0 0 1 -1\n11 3 100 0 9 1 10\n"
    trees, report = parse_swc(text)
    assert report.ok
    assert len(trees) == 2


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=400))
def test_parser_total_on_text(text):
    trees, report = parse_swc(text)
    assert isinstance(trees, list)
    assert report.n_records >= 0


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=400))
def test_parser_total_on_bytes(blob):
    trees, report = parse_swc(blob.decode("utf-8", errors="replace"))
    assert isinstance(trees, list)
