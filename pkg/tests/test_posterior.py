import numpy as np
import pytest

from arborabc import kde_marginals, pair_neurons, predictive_check


def test_kde_two_symmetric_points():
    theta = np.array([[-1.0], [1.0]])
    w = np.array([0.5, 0.5])
    marg = kde_marginals(theta, w, names=["x"], grid_resolution=801)[0]
    assert not marg.degenerate
    dens = marg.density
    grid = marg.grid
    # symmetric about zero
    mid = np.interp(0.0, grid, dens)
    left = np.interp(-1.0, grid, dens)
    right = np.interp(1.0, grid, dens)
    assert abs(left - right) < 1e-9
    assert left > mid  # bimodal for a small bandwidth
    # density integrates to one on the grid
    assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-3


def test_kde_degenerate_parameter():
    theta = np.array([[2.0], [2.0], [2.0]])
    w = np.full(3, 1 / 3)
    marg = kde_marginals(theta, w, names=["x"])[0]
    assert marg.degenerate
    assert marg.location == 2.0
    assert marg.grid is None


def test_kde_uniform_sample_sup_distance():
    # 1e4 uniform particles: KDE within 0.1 of the true density away from
    # the support boundary (boundary bias is inherent to Gaussian KDE)
    g = np.random.default_rng(0)
    theta = g.uniform(0, 1, size=(10_000, 1))
    w = np.full(10_000, 1e-4)
    marg = kde_marginals(theta, w, names=["u"], grid_resolution=1024)[0]
    inner = (marg.grid > 0.1) & (marg.grid < 0.9)
    assert np.max(np.abs(marg.density[inner] - 1.0)) < 0.1


def test_kde_weighted_mean_location():
    theta = np.array([[0.0], [10.0]])
    w = np.array([0.9, 0.1])
    marg = kde_marginals(theta, w, names=["x"])[0]
    assert marg.location == pytest.approx(1.0)


def test_kde_integral_one_weighted():
    g = np.random.default_rng(3)
    theta = g.normal(size=(500, 2))
    w = g.uniform(size=500)
    for marg in kde_marginals(theta, w, names=["a", "b"]):
        assert abs(np.trapezoid(marg.density, marg.grid) - 1.0) < 1e-3


# -- predictive check -----------------------------------------------------------


class PassThroughModel:
    """Returns rows of a fixed dataset regardless of theta."""

    def __init__(self, data):
        self.data = np.asarray(data, dtype=float)

    def simulate_dataset(self, theta, m, seed):
        idx = np.random.default_rng(seed).integers(0, len(self.data), size=m)
        return self.data[idx]


def test_predictive_identity_pass_through():
    g = np.random.default_rng(1)
    data = g.normal(size=(300, 2))
    model = PassThroughModel(data)
    theta = g.normal(size=(64, 3))
    w = np.full(64, 1 / 64)
    out = predictive_check(theta, w, model, data, m_prime=20, seed=5,
                           qoi_names=("a", "b"))
    s = out["summary"]
    assert s["qoi"] == ["a", "b"]
    for j in range(2):
        assert abs(s["sim_mean"][j] - s["data_mean"][j]) < 4 * data[:, j].std() / np.sqrt(64 * 20)


def test_predictive_summary_row_count():
    g = np.random.default_rng(2)
    data = g.normal(size=(100, 3))
    out = predictive_check(
        np.zeros((8, 1)), np.full(8, 1 / 8), PassThroughModel(data), data,
        m_prime=5, seed=1, qoi_names=("x", "y", "z"),
    )
    assert len(out["summary"]["qoi"]) == 3
    assert set(out["marginals"].keys()) == {"x", "y", "z"}


def test_predictive_self_consistency_at_point_posterior():
    # posterior concentrated at theta*: per-QoI means agree within 3 SE
    from arborabc import ToyGaussianModel

    model = ToyGaussianModel(dim=2)
    theta_star = np.array([0.4, -1.2])
    data = model.simulate_dataset(theta_star, 400, seed=11)
    theta = np.tile(theta_star, (32, 1))
    w = np.full(32, 1 / 32)
    out = predictive_check(theta, w, model, data, m_prime=25, seed=3,
                           qoi_names=("y1", "y2"))
    s = out["summary"]
    n_sim = 32 * 25
    for j in range(2):
        se = np.sqrt(1.0 / 400 + 1.0 / n_sim)
        assert abs(s["sim_mean"][j] - s["data_mean"][j]) < 3.5 * se


# -- pairing ---------------------------------------------------------------------


def test_pair_identity():
    g = np.random.default_rng(4)
    data = g.normal(size=(12, 3))
    pairs = pair_neurons(data, data)
    for i, j, d in pairs:
        assert i == j
        assert d < 1e-9


def test_pair_single_simulation_row():
    g = np.random.default_rng(5)
    data = g.normal(size=(7, 2))
    sim = g.normal(size=(1, 2))
    pairs = pair_neurons(data, sim)
    assert [j for _, j, _ in pairs] == [0] * 7


def test_pair_matches_brute_force():
    g = np.random.default_rng(6)
    data = g.normal(size=(3, 2)) * np.array([1.0, 100.0])
    sim = g.normal(size=(5, 2)) * np.array([1.0, 100.0])
    scales = data.std(axis=0, ddof=0)
    pairs = pair_neurons(data, sim)
    for i, j, d in pairs:
        dists = np.linalg.norm((data[i] / scales) - (sim / scales), axis=1)
        assert j == int(np.argmin(dists))
        assert d == pytest.approx(float(dists.min()))


def test_pair_tie_breaks_to_lowest_index():
    data = np.array([[0.0, 0.0], [2.0, 2.0]])  # unit scales per column
    sim = np.array([[1.0, 0.0], [0.0, 1.0]])  # equidistant from both rows
    pairs = pair_neurons(data, sim)
    assert pairs[0][1] == 0 and pairs[1][1] == 0


def test_pair_zero_variance_column():
    data = np.ones((4, 2))
    sim = np.ones((4, 2))
    with pytest.raises(Exception):
        pair_neurons(data, sim)
