"""Posterior products: weighted KDE marginals, predictive checks, and
nearest-neighbor pairing of data rows with simulated rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distances import _sq_cost, standardize
from .parallel import parallel_map
from .rng import spawn_generator, spawn_seed

__all__ = [
    "KdeMarginal",
    "kde_marginals",
    "predictive_check",
    "pair_neurons",
]


@dataclass(frozen=True)
class KdeMarginal:
    """Weighted Gaussian KDE of one parameter on a regular grid."""

    name: str
    grid: np.ndarray | None
    density: np.ndarray | None
    bandwidth: float
    degenerate: bool
    location: float  # weighted mean; the delta location when degenerate


def _weighted_std(x: np.ndarray, w: np.ndarray) -> float:
    mu = float(w @ x)
    return float(np.sqrt(max(w @ (x - mu) ** 2, 0.0)))


def kde_marginals(
    theta: np.ndarray,
    weights: np.ndarray,
    names=None,
    grid_resolution: int = 512,
) -> list[KdeMarginal]:
    """Per-parameter weighted Gaussian KDEs.

    Bandwidth is Scott's rule on the effective sample size, scaled by the
    weighted standard deviation.  An all-equal parameter is reported as a
    degenerate delta instead of a KDE.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    w = np.asarray(weights, dtype=float)
    if theta.shape[0] != w.shape[0]:
        raise ValueError("theta and weights must have matching length")
    if theta.shape[0] < 2:
        raise ValueError("need at least two particles")
    w = w / w.sum()
    n_eff = 1.0 / float((w**2).sum())
    dim = theta.shape[1]
    names = tuple(names) if names is not None else tuple(f"theta{i}" for i in range(dim))
    out = []
    for j in range(dim):
        x = theta[:, j]
        mu = float(w @ x)
        sd = _weighted_std(x, w)
        if sd == 0.0 or np.unique(x).size == 1:
            out.append(KdeMarginal(names[j], None, None, 0.0, True, mu))
            continue
        h = sd * n_eff ** (-1.0 / 5.0)
        grid = np.linspace(x.min() - 5.0 * h, x.max() + 5.0 * h, grid_resolution)
        z = (grid[:, None] - x[None, :]) / h
        dens = (w[None, :] * np.exp(-0.5 * z * z)).sum(axis=1) / (h * np.sqrt(2 * np.pi))
        out.append(KdeMarginal(names[j], grid, dens, h, False, mu))
    return out


def _hist_table(x: np.ndarray, n_bins: int = 30):
    counts, edges = np.histogram(x, bins=n_bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    density = counts / (counts.sum() * width) if counts.sum() else counts.astype(float)
    return centers, density


def _predictive_task(args):
    theta_i, m_prime, seed, model = args
    return model.simulate_dataset(theta_i, m_prime, seed)


def predictive_check(
    theta: np.ndarray,
    weights: np.ndarray,
    model,
    observed_qoi: np.ndarray,
    m_prime: int,
    seed: int,
    qoi_names=None,
    workers: int = 1,
) -> dict:
    """Simulate from the weighted posterior and compare QoI marginals.

    Draws one parameter per particle slot (with replacement by weight),
    simulates ``m_prime`` model runs each, and returns per-QoI marginal
    tables (data histogram, data KDE, simulation KDE) plus a mean/std
    summary per QoI.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    w = np.asarray(weights, dtype=float)
    if not (w > 0).any():
        raise ValueError("posterior weights are all zero")
    w = w / w.sum()
    obs = np.atleast_2d(np.asarray(observed_qoi, dtype=float))
    k = obs.shape[1]
    names = tuple(qoi_names) if qoi_names is not None else tuple(
        f"qoi{i}" for i in range(k)
    )
    n = theta.shape[0]
    rng = spawn_generator(seed, 11)
    picks = rng.choice(n, size=n, replace=True, p=w)
    tasks = [
        (theta[pick], m_prime, spawn_seed(seed, 13, j), model)
        for j, pick in enumerate(picks)
    ]
    sim = np.vstack(parallel_map(_predictive_task, tasks, workers))
    if sim.shape[1] != k:
        raise ValueError("model QoI dimension does not match observed data")

    uw = np.full(len(obs), 1.0 / len(obs))
    sw = np.full(len(sim), 1.0 / len(sim))
    marginals = {}
    for j, name in enumerate(names):
        data_kde = kde_marginals(obs[:, j][:, None], uw, names=[name])[0]
        sim_kde = kde_marginals(sim[:, j][:, None], sw, names=[name])[0]
        centers, density = _hist_table(obs[:, j])
        marginals[name] = {
            "hist_centers": centers,
            "hist_density": density,
            "data_kde": data_kde,
            "sim_kde": sim_kde,
        }
    summary = {
        "qoi": list(names),
        "data_mean": obs.mean(axis=0),
        "data_std": obs.std(axis=0),
        "sim_mean": sim.mean(axis=0),
        "sim_std": sim.std(axis=0),
    }
    return {"marginals": marginals, "summary": summary, "simulated": sim}


def pair_neurons(data_qoi: np.ndarray, sim_qoi: np.ndarray) -> list[tuple[int, int, float]]:
    """Assign each data row its nearest simulated row.

    Both matrices are standardized by the data's per-column standard
    deviation; distances are Euclidean in that space; ties break toward the
    lowest simulated index.  Simulated rows may be reused.
    """
    data = np.atleast_2d(np.asarray(data_qoi, dtype=float))
    sim = np.atleast_2d(np.asarray(sim_qoi, dtype=float))
    if data.shape[1] != sim.shape[1]:
        raise ValueError("data and simulation QoI columns differ")
    scales = data.std(axis=0, ddof=0)
    dataS = standardize(data, scales)
    simS = standardize(sim, scales)
    d2 = _sq_cost(dataS, simS)
    best = d2.argmin(axis=1)  # argmin returns the first (lowest) index on ties
    return [
        (int(i), int(best[i]), float(np.sqrt(d2[i, best[i]])))
        for i in range(len(dataS))
    ]
