"""Adaptive SMC-ABC sampler with a two-hit race move kernel.

The sampler maintains N weighted particles, each carrying its parameter
vector, one simulated dataset of M' model runs, and the dataset's distance
to the observed data.  Iterations adaptively lower the tolerance so the
effective sample size decays by a fixed factor, resample when the ESS drops
too far, and refresh particles with a race kernel: fresh datasets are
simulated alternately under the proposal and the current parameter until
each side scores ``r_hits`` distances below the tolerance, and the proposal
is accepted with probability min{1, (N-1)/(N'-1)} from the race lengths.

Everything random is keyed by (seed, iteration, particle), which makes runs
resumable from checkpoints and independent of the worker count.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from .distances import DistanceSpec, make_distance
from .parallel import parallel_map
from .rng import spawn_generator, spawn_seed

__all__ = [
    "Prior",
    "SmcConfig",
    "Particle",
    "MoveDiagnostics",
    "IterationRecord",
    "SmcTrace",
    "ess",
    "next_epsilon",
    "systematic_resample",
    "move_particle",
    "run_smcabc",
    "SmcAbcSampler",
]

_TAG_INIT_THETA = 0
_TAG_INIT_DATA = 1
_TAG_MOVE = 2
_TAG_RESAMPLE = 3


class SmcError(RuntimeError):
    pass


@dataclass(frozen=True)
class Prior:
    """Independent uniform priors over a box."""

    names: tuple[str, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.lo) == len(self.hi)):
            raise ValueError("names, lo, hi must have equal length")
        for name, a, b in zip(self.names, self.lo, self.hi):
            if not a < b:
                raise ValueError(f"prior bound for {name!r} requires lo < hi")

    @property
    def dim(self) -> int:
        return len(self.names)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def contains(self, theta: np.ndarray) -> bool:
        t = np.asarray(theta, dtype=float)
        return bool(np.all(t >= self.lo) and np.all(t <= self.hi))


@dataclass(frozen=True)
class SmcConfig:
    """Sampler configuration.

    ``budget`` counts individual model simulations (neurons / rows), so one
    particle dataset costs ``m_prime`` of it.  ``race_cap`` caps each race
    in datasets; the default max(2 r, m') keeps honest races finishing
    while bounding the budget hopeless proposals can burn, which is what
    determines how far the tolerance anneals within a fixed budget.
    """

    n_particles: int = 256
    alpha: float = 0.6
    m_prime: int = 50
    budget: int = 1_000_000
    distance: DistanceSpec = field(default_factory=DistanceSpec)
    r_hits: int = 2
    ess_resample_fraction: float = 0.5
    epsilon_target: float | None = None
    wall_clock_cap: float | None = None
    race_cap: int | None = None
    max_iterations: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.m_prime < 1:
            raise ValueError("m_prime must be >= 1")
        if self.r_hits < 1:
            raise ValueError("r_hits must be >= 1")
        if not 0.0 <= self.ess_resample_fraction <= 1.0:
            raise ValueError("ess_resample_fraction must be in [0, 1]")
        if self.race_cap is not None and self.race_cap < self.r_hits:
            raise ValueError("race_cap must allow at least r_hits datasets")

    @property
    def effective_race_cap(self) -> int:
        if self.race_cap is not None:
            return self.race_cap
        return max(2 * self.r_hits, self.m_prime)


@dataclass
class Particle:
    """One weighted particle with its attached simulated dataset."""

    theta: np.ndarray
    weight: float
    dataset: np.ndarray  # (m_prime, k) simulated QoI rows
    distance: float


@dataclass(frozen=True)
class MoveDiagnostics:
    accepted: bool
    out_of_prior: bool
    capped: bool
    n_proposal_datasets: int
    n_current_datasets: int

    @property
    def n_datasets(self) -> int:
        return self.n_proposal_datasets + self.n_current_datasets


@dataclass
class IterationRecord:
    iteration: int
    epsilon: float
    ess: float
    resampled: bool
    n_alive: int
    n_moved: int
    n_accepted: int
    cumulative_datasets: int
    cumulative_sims: int
    stagnation: bool

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["epsilon"] = None if np.isinf(self.epsilon) else float(self.epsilon)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "IterationRecord":
        d = json.loads(line)
        d["epsilon"] = np.inf if d["epsilon"] is None else float(d["epsilon"])
        return cls(**d)


@dataclass
class SmcTrace:
    """Per-iteration records plus the final particle population."""

    records: list[IterationRecord] = field(default_factory=list)
    theta: np.ndarray | None = None
    weights: np.ndarray | None = None
    distances: np.ndarray | None = None
    param_names: tuple[str, ...] = ()
    stop_reason: str = ""

    @property
    def epsilon(self) -> float:
        return self.records[-1].epsilon if self.records else np.inf

    @property
    def n_iterations(self) -> int:
        return len(self.records)

    @property
    def total_sims(self) -> int:
        return self.records[-1].cumulative_sims if self.records else 0

    def posterior_mean(self) -> np.ndarray:
        return np.average(self.theta, axis=0, weights=self.weights)

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")

    def write_particles_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join([*self.param_names, "weight", "distance"]) + "\n")
            for i in range(len(self.weights)):
                cells = [repr(float(v)) for v in self.theta[i]]
                cells.append(repr(float(self.weights[i])))
                cells.append(repr(float(self.distances[i])))
                fh.write(",".join(cells) + "\n")


def ess(weights) -> float:
    """Effective sample size 1 / sum(normalized weights squared)."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or (w < 0).any() or not (w > 0).any():
        raise ValueError("weights must be nonnegative and not all zero")
    w = w / w.sum()
    return float(1.0 / (w**2).sum())


def _ess_below(distances, weights, eps) -> float:
    w = weights * (distances < eps)
    s = w.sum()
    if s <= 0:
        return 0.0
    w = w / s
    return float(1.0 / (w**2).sum())


def next_epsilon(distances, weights, eps_prev, alpha) -> tuple[float, bool]:
    """Largest tolerance at which the indicator-thresholded ESS falls to
    alpha times the current ESS, found by bisection to 1e-12 relative width.

    Returns (epsilon, stagnation).  Stagnation is flagged when even the
    smallest tolerance keeping one particle alive cannot reduce the ESS to
    the target; the returned epsilon then sits just above the smallest
    distance.
    """
    d = np.asarray(distances, dtype=float)
    w = np.asarray(weights, dtype=float)
    if not (d < eps_prev).any():
        raise SmcError("no particle has distance below the previous epsilon")
    target = alpha * ess(w)
    lo = float(d.min())
    hi = float(min(eps_prev, d.max() * (1 + 1e-12) + 1e-300))
    floor = lo * (1 + 1e-12) + 1e-300
    if _ess_below(d, w, floor) >= target:
        return min(floor, (eps_prev if np.isfinite(eps_prev) else floor)), True
    if hi <= lo:
        return floor, True
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _ess_below(d, w, mid) >= target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * max(1.0, abs(hi)):
            break
    return hi, False


def systematic_resample(weights, u: float) -> np.ndarray:
    """Systematic resampling: offspring counts of particle i are
    floor(N w_i + shift) with a single uniform shift u in [0, 1)."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    n = len(w)
    positions = (u + np.arange(n)) / n
    return np.searchsorted(np.cumsum(w), positions, side="right").clip(0, n - 1)


def move_particle(
    particle: Particle,
    epsilon: float,
    proposal_chol: np.ndarray,
    model,
    distance: Callable[[np.ndarray], float],
    prior: Prior,
    config: SmcConfig,
    rng: np.random.Generator,
) -> tuple[Particle, MoveDiagnostics]:
    """One race-kernel move of an alive particle.

    Proposes theta' ~ N(theta, proposal_cov); immediately rejects proposals
    outside the prior box (zero simulations).  Otherwise simulates fresh
    datasets alternately under theta' and theta (theta' first) until each
    side has ``r_hits`` datasets with distance < epsilon, accepts with
    probability min{1, (N-1)/(N'-1)}, and on acceptance the particle adopts
    theta' together with its last hitting dataset.  Exceeding the race cap
    on either side rejects the move.
    """
    r_hits = config.r_hits
    cap = config.effective_race_cap
    prop = particle.theta + proposal_chol @ rng.standard_normal(prior.dim)
    if not prior.contains(prop):
        return particle, MoveDiagnostics(False, True, False, 0, 0)
    hits_p = hits_c = 0
    n_p = n_c = 0
    last_hit_dataset = None
    last_hit_distance = np.nan
    capped = False
    while True:
        if hits_p < r_hits:
            n_p += 1
            ds = model.simulate_dataset(prop, config.m_prime, int(rng.integers(2**63)))
            dd = distance(ds)
            if dd < epsilon:
                hits_p += 1
                last_hit_dataset = ds
                last_hit_distance = dd
            if hits_p < r_hits and n_p >= cap:
                capped = True
                break
        if hits_c < r_hits:
            n_c += 1
            ds = model.simulate_dataset(
                particle.theta, config.m_prime, int(rng.integers(2**63))
            )
            if distance(ds) < epsilon:
                hits_c += 1
            if hits_c < r_hits and n_c >= cap:
                capped = True
                break
        if hits_p >= r_hits and hits_c >= r_hits:
            break
    if capped:
        return particle, MoveDiagnostics(False, False, True, n_p, n_c)
    accept_prob = min(1.0, (n_c - 1) / (n_p - 1)) if n_p > 1 else 1.0
    if rng.uniform() < accept_prob:
        moved = Particle(
            theta=np.asarray(prop, dtype=float),
            weight=particle.weight,
            dataset=last_hit_dataset,
            distance=float(last_hit_distance),
        )
        return moved, MoveDiagnostics(True, False, False, n_p, n_c)
    return particle, MoveDiagnostics(False, False, False, n_p, n_c)


def _weighted_proposal_chol(theta: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Cholesky factor of 2.38^2/dim times the weighted covariance."""
    dim = theta.shape[1]
    w = weights / weights.sum()
    mu = w @ theta
    centered = theta - mu
    cov = (centered * w[:, None]).T @ centered
    denom = max(1.0 - float((w**2).sum()), 1e-12)
    cov = (2.38**2 / dim) * cov / denom
    ridge = 1e-12 * max(np.trace(cov) / dim, 1e-12)
    for _ in range(40):
        try:
            return np.linalg.cholesky(cov + ridge * np.eye(dim))
        except np.linalg.LinAlgError:
            ridge *= 10.0
    raise SmcError("proposal covariance could not be factorized")


def _move_task(args):
    (i, theta, weight, dataset, dist_val, epsilon, chol, model, distance,
     prior, config, seed, iteration) = args
    rng = spawn_generator(seed, _TAG_MOVE, iteration, i)
    particle = Particle(theta, weight, dataset, dist_val)
    moved, diag = move_particle(
        particle, epsilon, chol, model, distance, prior, config, rng
    )
    return i, moved.theta, moved.dataset, moved.distance, diag


@dataclass
class _State:
    """Everything needed to resume a run after any completed iteration."""

    iteration: int
    epsilon: float
    theta: np.ndarray
    weights: np.ndarray
    distances: np.ndarray
    datasets: np.ndarray
    datasets_used: int
    stagnation_streak: int

    def save(self, path: Path):
        tmp = path.with_suffix(".tmp.npz")
        np.savez_compressed(
            tmp,
            iteration=self.iteration,
            epsilon=self.epsilon,
            theta=self.theta,
            weights=self.weights,
            distances=self.distances,
            datasets=self.datasets,
            datasets_used=self.datasets_used,
            stagnation_streak=self.stagnation_streak,
        )
        tmp.replace(path)

    @classmethod
    def load(cls, path: Path) -> "_State":
        z = np.load(path)
        return cls(
            iteration=int(z["iteration"]),
            epsilon=float(z["epsilon"]),
            theta=z["theta"],
            weights=z["weights"],
            distances=z["distances"],
            datasets=z["datasets"],
            datasets_used=int(z["datasets_used"]),
            stagnation_streak=int(z["stagnation_streak"]),
        )


def run_smcabc(
    prior: Prior,
    model,
    observed_qoi: np.ndarray,
    config: SmcConfig,
    seed: int,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
) -> SmcTrace:
    """Run the adaptive SMC-ABC sampler; returns the trace with the final
    weighted population.

    With ``checkpoint_dir`` the trace and full state are persisted after
    every iteration and ``resume=True`` continues from the last completed
    one, reproducing the uninterrupted run exactly (all randomness is keyed
    by iteration).
    """
    observed = check_array(np.asarray(observed_qoi, dtype=float))
    distance = make_distance(config.distance, observed)
    n = config.n_particles
    mp = config.m_prime
    t_start = time.monotonic()
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)

    trace = SmcTrace(param_names=prior.names)
    state: _State | None = None
    if resume and ckpt is not None and (ckpt / "state.npz").exists():
        state = _State.load(ckpt / "state.npz")
        with open(ckpt / "trace.jsonl") as fh:
            trace.records = [IterationRecord.from_json(line) for line in fh if line.strip()]

    if state is None:
        theta = prior.sample(spawn_generator(seed, _TAG_INIT_THETA), n)
        datasets = np.empty((n, mp, distance.observed.shape[1]))
        distances = np.empty(n)
        for i, ds, dv in parallel_map(_init_one, [
            (i, theta[i], mp, spawn_seed(seed, _TAG_INIT_DATA, i), model, distance)
            for i in range(n)
        ], config.workers):
            datasets[i] = ds
            distances[i] = dv
        state = _State(
            iteration=0,
            epsilon=np.inf,
            theta=theta,
            weights=np.full(n, 1.0 / n),
            distances=distances,
            datasets=datasets,
            datasets_used=n,
            stagnation_streak=0,
        )
        trace.records.append(
            IterationRecord(
                iteration=0,
                epsilon=np.inf,
                ess=float(n),
                resampled=False,
                n_alive=n,
                n_moved=0,
                n_accepted=0,
                cumulative_datasets=state.datasets_used,
                cumulative_sims=state.datasets_used * mp,
                stagnation=False,
            )
        )
        _persist(trace, state, ckpt)

    stop = _stop_reason(state, config, t_start)
    while not stop:
        it = state.iteration + 1
        eps_new, stagnation = next_epsilon(
            state.distances, state.weights, state.epsilon, config.alpha
        )
        if stagnation:
            state.stagnation_streak += 1
        else:
            state.stagnation_streak = 0
        if state.stagnation_streak >= 2 or eps_new >= state.epsilon:
            stop = "stagnation"
            break
        state.epsilon = float(eps_new)
        weights = state.weights * (state.distances < state.epsilon)
        if not (weights > 0).any():
            stop = "extinct"
            break
        weights = weights / weights.sum()
        current_ess = ess(weights)
        resampled = current_ess < config.ess_resample_fraction * n
        if resampled:
            u = float(spawn_generator(seed, _TAG_RESAMPLE, it).uniform())
            idx = systematic_resample(weights, u)
            state.theta = state.theta[idx]
            state.distances = state.distances[idx]
            state.datasets = state.datasets[idx]
            weights = np.full(n, 1.0 / n)
        state.weights = weights

        chol = _weighted_proposal_chol(state.theta, state.weights)
        alive = np.flatnonzero(state.weights > 0)
        tasks = [
            (
                int(i), state.theta[i], float(state.weights[i]), state.datasets[i],
                float(state.distances[i]), state.epsilon, chol, model, distance,
                prior, config, seed, it,
            )
            for i in alive
        ]
        n_accepted = 0
        datasets_this_iter = 0
        for i, th, ds, dv, diag in parallel_map(_move_task, tasks, config.workers):
            state.theta[i] = th
            state.datasets[i] = ds
            state.distances[i] = dv
            n_accepted += int(diag.accepted)
            datasets_this_iter += diag.n_datasets
        state.datasets_used += datasets_this_iter
        state.iteration = it
        trace.records.append(
            IterationRecord(
                iteration=it,
                epsilon=state.epsilon,
                ess=current_ess,
                resampled=resampled,
                n_alive=int(len(alive)),
                n_moved=int(len(alive)),
                n_accepted=n_accepted,
                cumulative_datasets=state.datasets_used,
                cumulative_sims=state.datasets_used * mp,
                stagnation=stagnation,
            )
        )
        _persist(trace, state, ckpt)
        stop = _stop_reason(state, config, t_start)

    trace.theta = state.theta.copy()
    trace.weights = state.weights.copy()
    trace.distances = state.distances.copy()
    trace.stop_reason = stop or "stagnation"
    if ckpt is not None:
        trace.write_particles_csv(ckpt / "particles.csv")
    return trace


def _persist(trace: SmcTrace, state: _State, ckpt: Path | None):
    if ckpt is None:
        return
    trace.write_jsonl(ckpt / "trace.jsonl")
    state.save(ckpt / "state.npz")


def _stop_reason(state: _State, config: SmcConfig, t_start: float) -> str:
    if state.datasets_used * config.m_prime >= config.budget:
        return "budget"
    if config.epsilon_target is not None and state.epsilon <= config.epsilon_target:
        return "epsilon_target"
    if config.wall_clock_cap is not None and time.monotonic() - t_start >= config.wall_clock_cap:
        return "wall_clock"
    if config.max_iterations is not None and state.iteration >= config.max_iterations:
        return "max_iterations"
    return ""


def _init_one(args):
    i, theta_i, mp, ds_seed, model, distance = args
    ds = model.simulate_dataset(theta_i, mp, ds_seed)
    return i, ds, distance(ds)


class SmcAbcSampler(BaseEstimator):
    """sklearn-style wrapper: configure once, ``fit`` on an observed QoI
    matrix, then read the weighted posterior from the fitted attributes.

    Attributes after fit: ``trace_``, ``theta_``, ``weights_``,
    ``distances_``, ``epsilon_``, ``n_simulations_``.
    """

    def __init__(
        self,
        prior: Prior = None,
        model=None,
        n_particles: int = 256,
        alpha: float = 0.6,
        m_prime: int = 50,
        budget: int = 1_000_000,
        distance: DistanceSpec = None,
        r_hits: int = 2,
        ess_resample_fraction: float = 0.5,
        epsilon_target: float | None = None,
        wall_clock_cap: float | None = None,
        race_cap: int | None = None,
        max_iterations: int | None = None,
        workers: int = 1,
        seed: int = 0,
        checkpoint_dir=None,
    ):
        self.prior = prior
        self.model = model
        self.n_particles = n_particles
        self.alpha = alpha
        self.m_prime = m_prime
        self.budget = budget
        self.distance = distance
        self.r_hits = r_hits
        self.ess_resample_fraction = ess_resample_fraction
        self.epsilon_target = epsilon_target
        self.wall_clock_cap = wall_clock_cap
        self.race_cap = race_cap
        self.max_iterations = max_iterations
        self.workers = workers
        self.seed = seed
        self.checkpoint_dir = checkpoint_dir

    def _config(self) -> SmcConfig:
        return SmcConfig(
            n_particles=self.n_particles,
            alpha=self.alpha,
            m_prime=self.m_prime,
            budget=self.budget,
            distance=self.distance or DistanceSpec(),
            r_hits=self.r_hits,
            ess_resample_fraction=self.ess_resample_fraction,
            epsilon_target=self.epsilon_target,
            wall_clock_cap=self.wall_clock_cap,
            race_cap=self.race_cap,
            max_iterations=self.max_iterations,
            workers=self.workers,
        )

    def fit(self, X, y=None, resume: bool = False):
        if self.prior is None or self.model is None:
            raise ValueError("prior and model are required")
        trace = run_smcabc(
            self.prior, self.model, X, self._config(), self.seed,
            checkpoint_dir=self.checkpoint_dir, resume=resume,
        )
        self.trace_ = trace
        self.theta_ = trace.theta
        self.weights_ = trace.weights
        self.distances_ = trace.distances
        self.epsilon_ = trace.epsilon
        self.n_simulations_ = trace.total_sims
        self.observed_ = np.asarray(X, dtype=float)
        return self

    def posterior_mean(self) -> np.ndarray:
        return self.trace_.posterior_mean()

    def sample_posterior(self, n: int, seed: int = 0) -> np.ndarray:
        """Draw parameter vectors from the weighted particle population."""
        rng = spawn_generator(seed, 7)
        idx = rng.choice(len(self.weights_), size=n, replace=True,
                         p=self.weights_ / self.weights_.sum())
        return self.theta_[idx]
