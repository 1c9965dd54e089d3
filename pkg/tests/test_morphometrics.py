import math

import numpy as np
import pytest

from arborabc import (
    GrowthParams,
    GrowthRng,
    QoIExtractor,
    SomaSpec,
    assemble,
    extract,
    init_neuron,
    read_qoi_csv,
    sections,
    step_model2,
    write_qoi_csv,
)
from arborabc.growth import SOMA_PARENT, NeuronTree
from arborabc.morphometrics import MorphometricsError


def chain_tree(n_agents=7, step=2.0):
    soma = SomaSpec(neurites=(((0, 0, 1.0), 1.0),))
    tree = NeuronTree(soma)
    z = soma.radius
    parent = SOMA_PARENT
    for _ in range(n_agents):
        parent = tree.add_agent(parent, (0, 0, z), (0, 0, z + step), 1.0)
        z += step
    return tree


def y_tree(lengths=(2.0, 1.0, 1.0)):
    """Y-shaped tree with one section per branch, given section lengths."""
    soma = SomaSpec(neurites=(((0, 0, 1.0), 1.0),))
    tree = NeuronTree(soma)
    base = tree.add_agent(SOMA_PARENT, (0, 0, 10), (0, 0, 10 + lengths[0]), 1.0)
    z = 10 + lengths[0]
    tree.add_agent(base, (0, 0, z), (lengths[1], 0, z), 1.0)
    tree.add_agent(base, (0, 0, z), (-lengths[2], 0, z), 1.0)
    return tree


def test_sections_single_chain():
    tree = chain_tree(7)
    secs = sections(tree)
    assert len(secs) == 1
    assert abs(secs[0].length - 14.0) < 1e-12
    assert secs[0].agent_ids == tuple(range(7))


def test_sections_y_shape():
    tree = y_tree()
    assert len(sections(tree)) == 3


def test_sections_cover_all_agents():
    tree = y_tree()
    ids = [i for s in sections(tree) for i in s.agent_ids]
    assert sorted(ids) == list(range(tree.n_agents))


def test_model2_side_branches_section_count(field_z):
    # k side branches on one main path -> 2k + 1 sections
    params = GrowthParams(p_bra=1.0, R=1e-4, v=100.0, dt=0.01, r0=0.0)
    soma = SomaSpec(neurites=(((0, 0, 1.0), 1.0),))
    tree = init_neuron(soma, 1.0, 1.0)
    rng = GrowthRng(5)
    k = 4
    for s in range(k):
        step_model2(tree, params, field_z, rng, step=s)
    assert len(sections(tree)) == 2 * k + 1


def test_section_count_tracks_branch_events(field_z):
    # M1 = #roots + 2 * (branch events), for both models
    from arborabc import step_model1

    for stepper, model_seed in ((step_model1, 11), (step_model2, 12)):
        params = GrowthParams(p_bra=0.25, R=1e-4, v=100.0, dt=0.01, r0=0.5)
        soma = SomaSpec(neurites=(((0, 0, 1.0), 1.0), ((0, 0, -1.0), 1.0)))
        tree = init_neuron(soma, 1.0, 1.0)
        rng = GrowthRng(model_seed)
        events = 0
        for s in range(25):
            events += stepper(tree, params, field_z, rng, step=s).n_branch_events
        assert len(sections(tree)) == 2 + 2 * events


def test_extract_y_tree_formulas():
    tree = y_tree((2.0, 1.0, 1.0))
    m = extract(tree)
    assert m[0] == 3
    assert abs(m[1] - 4.0 / 3.0) < 1e-12
    assert abs(m[2] - math.sqrt(2.0 / 9.0)) < 1e-12
    assert abs(m[3] - 4.0) < 1e-12


def test_extract_single_section():
    tree = chain_tree(3, step=2.5)
    m = extract(tree)
    assert m[0] == 1 and m[1] == 7.5 and m[2] == 0.0 and m[3] == 7.5


def test_extract_m4_equals_sum_of_agent_lengths():
    tree = y_tree((3.0, 2.0, 1.5))
    m4 = extract(tree)[3]
    assert abs(m4 - tree.lengths().sum()) <= 1e-9 * m4


def test_m4_identity_on_simulated_tree():
    from arborabc import default_field, default_soma, model2_defaults, simulate

    tree = simulate("model2", default_soma("model2"), model2_defaults(),
                    default_field(), seed=9)
    m = extract(tree)
    assert abs(m[3] - tree.lengths().sum()) <= 1e-9 * m[3]
    assert abs(m[3] - m[0] * m[1]) <= 1e-9 * m[3]  # M4 == M1 * M2


def test_extract_rigid_motion_invariance():
    tree = y_tree((2.0, 1.0, 1.0))
    m0 = extract(tree)
    # rotate + translate all coordinates
    theta = 0.7
    R = np.array(
        [
            [math.cos(theta), -math.sin(theta), 0],
            [math.sin(theta), math.cos(theta), 0],
            [0, 0, 1],
        ]
    )
    shift = np.array([5.0, -3.0, 2.0])
    tree._start[: tree.n_agents] = tree.start @ R.T + shift
    tree._end[: tree.n_agents] = tree.end @ R.T + shift
    m1 = extract(tree)
    assert np.allclose(m0, m1, rtol=1e-12, atol=1e-12)


def test_extract_empty_tree_rejected():
    soma = SomaSpec(neurites=(((0, 0, 1.0), 1.0),))
    with pytest.raises(MorphometricsError):
        extract(NeuronTree(soma))


def test_assemble_and_selection():
    t1 = y_tree()
    t2 = y_tree()
    mat = assemble([t1, t2])
    assert mat.shape == (2, 4)
    assert np.array_equal(mat[0], mat[1])
    only_m2 = assemble([t1], selection=("M2",))
    assert only_m2.shape == (1, 1)
    assert only_m2[0, 0] == extract(t1)[1]


def test_assemble_reports_offending_index():
    soma = SomaSpec(neurites=(((0, 0, 1.0), 1.0),))
    with pytest.raises(MorphometricsError, match="tree 1"):
        assemble([y_tree(), NeuronTree(soma)])


def test_qoi_extractor_transformer():
    ex = QoIExtractor(selection=("M1", "M4"))
    mat = ex.fit_transform([y_tree(), chain_tree(2)])
    assert mat.shape == (2, 2)
    assert list(ex.get_feature_names_out()) == ["M1", "M4"]
    assert ex.get_params()["selection"] == ("M1", "M4")
    with pytest.raises(MorphometricsError):
        QoIExtractor(selection=("M9",)).fit()


def test_csv_roundtrip(tmp_path):
    mat = np.array([[3.0, 4.0 / 3.0, 0.4714, 4.0], [1.0, 7.5, 0.0, 7.5]])
    path = tmp_path / "qoi.csv"
    write_qoi_csv(path, mat, ("M1", "M2", "M3", "M4"))
    back, header = read_qoi_csv(path)
    assert header == ("M1", "M2", "M3", "M4")
    assert np.array_equal(back, mat)  # repr round-trip is exact


def test_matrix_population_self_consistency():
    # 1000 trees at the reference point, means agree across seed blocks
    from arborabc import GrowthModel

    model = GrowthModel(model="model2")
    theta = [0.038, 0.71e-3, 100.0]
    A = model.simulate_dataset(theta, 500, seed=1)
    B = model.simulate_dataset(theta, 500, seed=2)
    for j in range(4):
        se = math.sqrt(A[:, j].var(ddof=1) / len(A) + B[:, j].var(ddof=1) / len(B))
        assert abs(A[:, j].mean() - B[:, j].mean()) < 3.5 * se
