import math
from dataclasses import dataclass

import numpy as np
import pytest

from arborabc import (
    ISHIGAMI_SPACE,
    ParamSpace,
    ishigami,
    ishigami_analytic_s1,
    model_expectation,
    run_sa,
    saltelli_sample,
    sobol_indices,
)


def test_saltelli_row_counts():
    space3 = ParamSpace(names=("a", "b", "c"), lo=(0, 0, 0), hi=(1, 1, 1))
    assert saltelli_sample(space3, 4).shape == (32, 3)  # N (2D + 2)
    space1 = ParamSpace(names=("a",), lo=(0.0,), hi=(1.0,))
    assert saltelli_sample(space1, 2).shape == (8, 1)


def test_saltelli_rows_inside_bounds():
    space = ParamSpace(names=("a", "b"), lo=(0.0, 0.0), hi=(1.0, 1.0))
    X = saltelli_sample(space, 64)
    assert (X >= 0).all() and (X <= 1).all()


def test_saltelli_warns_and_rounds_non_power_of_two():
    space = ParamSpace(names=("a",), lo=(0.0,), hi=(1.0,))
    with pytest.warns(UserWarning, match="power of two"):
        X = saltelli_sample(space, 3)
    assert X.shape == (4 * 4, 1)


def test_saltelli_block_structure():
    space = ParamSpace(names=("a", "b"), lo=(0.0, 0.0), hi=(1.0, 1.0))
    n = 8
    X = saltelli_sample(space, n)
    A, B = X[:n], X[n : 2 * n]
    AB0 = X[2 * n : 3 * n]
    BA1 = X[5 * n : 6 * n]
    assert np.array_equal(AB0[:, 1], A[:, 1]) and np.array_equal(AB0[:, 0], B[:, 0])
    assert np.array_equal(BA1[:, 0], B[:, 0]) and np.array_equal(BA1[:, 1], A[:, 1])


@dataclass(frozen=True)
class FirstCoordinate:
    selection = ("y",)
    n_qoi = 1

    def simulate_dataset(self, theta, m, seed):
        return np.full((m, 1), float(theta[0]))


def test_single_variable_function_indices():
    space = ParamSpace(names=("x1", "x2", "x3"), lo=(0, 0, 0), hi=(1, 1, 1))
    res, _, _ = run_sa(FirstCoordinate(), space, 1024, 1, seed=0)
    assert abs(res.s1[0, 0] - 1.0) < 0.05
    assert abs(res.s_tot[0, 0] - 1.0) < 0.05
    for i in (1, 2):
        assert abs(res.s1[i, 0]) < 0.05
        assert abs(res.s_tot[i, 0]) < 0.05


def test_ishigami_against_analytic():
    res, X, Y = run_sa(ishigami(), ISHIGAMI_SPACE, 1024, 1, seed=0)
    target = ishigami_analytic_s1()
    assert np.max(np.abs(res.s1[:, 0] - target)) < 0.08
    # total indices dominate first-order ones up to estimator noise
    assert (res.s_tot[:, 0] >= res.s1[:, 0] - 0.05).all()


@dataclass(frozen=True)
class ConstantModel:
    selection = ("y",)
    n_qoi = 1

    def simulate_dataset(self, theta, m, seed):
        return np.full((m, 1), 3.14)


def test_constant_output_reported_undefined():
    space = ParamSpace(names=("a",), lo=(0.0,), hi=(1.0,))
    res, _, _ = run_sa(ConstantModel(), space, 16, 1, seed=0)
    assert res.undefined_outputs == (0,)
    assert np.isnan(res.s1).all()


def test_affine_rescaling_invariance():
    @dataclass(frozen=True)
    class TwoScales:
        selection = ("y", "y_scaled")
        n_qoi = 2

        def simulate_dataset(self, theta, m, seed):
            v = math.sin(theta[0]) + 0.3 * theta[1] ** 2
            return np.tile([v, 1000.0 * v + 7.0], (m, 1))

    space = ParamSpace(names=("a", "b"), lo=(-1, -1), hi=(1, 1))
    res, _, _ = run_sa(TwoScales(), space, 256, 1, seed=1)
    assert np.allclose(res.s1[:, 0], res.s1[:, 1], atol=1e-9)
    assert np.allclose(res.s_tot[:, 0], res.s_tot[:, 1], atol=1e-9)


def test_model_expectation_deterministic_and_m1():
    model = FirstCoordinate()
    mean, var = model_expectation(model, [0.7, 0, 0], 1, seed=1)
    assert mean[0] == 0.7
    assert var[0] == 0.0
    mean20, _ = model_expectation(model, [0.7, 0, 0], 20, seed=1)
    assert mean20[0] == pytest.approx(0.7, abs=1e-12)


def test_model_expectation_replication_consistency():
    from arborabc import GrowthModel

    model = GrowthModel(model="model2")
    theta = [0.038, 0.71e-3, 100.0]
    m_small, v_small = model_expectation(model, theta, 20, seed=3)
    m_big, v_big = model_expectation(model, theta, 200, seed=4)
    for j in range(4):
        se = math.sqrt(v_small[j] + v_big[j])
        assert abs(m_small[j] - m_big[j]) < 3.5 * se


def test_run_sa_bookkeeping_and_determinism():
    space = ParamSpace(names=("x1", "x2", "x3"), lo=(0, 0, 0), hi=(1, 1, 1))
    res1, X1, Y1 = run_sa(FirstCoordinate(), space, 4, 1, seed=9)
    res2, X2, Y2 = run_sa(FirstCoordinate(), space, 4, 1, seed=9)
    assert Y1.shape == (32, 1)
    assert np.array_equal(X1, X2)
    assert np.array_equal(Y1, Y2)
    assert np.array_equal(res1.s_tot, res2.s_tot, equal_nan=True)


def test_noise_correction_removes_replicate_noise_floor():
    # stochastic model whose expectation depends only on x1: the Jansen
    # total for the pure-noise parameters must sit near zero once the
    # replicate-noise correction is applied, while the uncorrected
    # estimator shows the noise floor sigma^2/m' / V
    from arborabc.sensitivity import saltelli_sample
    from arborabc.rng import spawn_seed

    @dataclass(frozen=True)
    class NoisyFirst:
        selection = ("y",)
        n_qoi = 1

        def simulate_dataset(self, theta, m, seed):
            g = np.random.default_rng(seed)
            return (theta[0] + 0.5 * g.standard_normal((m, 1)))

    space = ParamSpace(names=("x1", "x2", "x3"), lo=(0, 0, 0), hi=(1, 1, 1))
    model = NoisyFirst()
    n_base, m_prime, seed = 512, 10, 2
    X = saltelli_sample(space, n_base, seed=seed)
    Y = np.empty((len(X), 1))
    V = np.empty((len(X), 1))
    for r in range(len(X)):
        Y[r], V[r] = model_expectation(model, X[r], m_prime, spawn_seed(seed, 17, r))
    corrected = sobol_indices(Y, space, replicate_var=V, n_bootstrap=50, seed=seed)
    raw = sobol_indices(Y, space, replicate_var=None, n_bootstrap=50, seed=seed)
    # noise floor: (0.25/10) / (1/12) = 0.3
    for i in (1, 2):
        assert raw.s_tot[i, 0] > 0.15
        assert abs(corrected.s_tot[i, 0]) < 0.1
    assert corrected.s_tot[0, 0] > 0.5
