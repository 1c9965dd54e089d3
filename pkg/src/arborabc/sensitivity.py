"""Global variance-based sensitivity analysis (Sobol indices, Saltelli design).

The design matrix stacks the blocks [A; B; AB_1..AB_D; BA_1..BA_D] built
from a scrambled Sobol sequence, N(2D+2) rows in total.  First-order
indices use the Saltelli 2010 estimator and total-effect indices the
Jansen estimator, each averaged over the AB/BA block pairs.  For stochastic
models evaluated with a finite number of replicates, the known Monte-Carlo
variance of the expectation estimates is subtracted from both the index
numerators and the output variance, so the reported indices target the
sensitivity of the expected output rather than expectation noise.  95%
confidence half-widths come from a bootstrap over base-sample indices.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .parallel import parallel_map
from .rng import spawn_seed

__all__ = [
    "ParamSpace",
    "SobolResult",
    "saltelli_sample",
    "model_expectation",
    "sobol_indices",
    "run_sa",
    "ishigami",
    "ISHIGAMI_SPACE",
    "ishigami_analytic_s1",
]


@dataclass(frozen=True)
class ParamSpace:
    """Axis-aligned box of model parameters."""

    names: tuple[str, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.lo) == len(self.hi)):
            raise ValueError("names, lo, hi must have equal length")
        for name, a, b in zip(self.names, self.lo, self.hi):
            if not a < b:
                raise ValueError(f"bounds for {name!r} require lo < hi")

    @property
    def dim(self) -> int:
        return len(self.names)

    def scale(self, unit: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return lo + unit * (hi - lo)


def growth_param_space() -> ParamSpace:
    """Default bounds for the growth-model parameters (p_bra, R, v)."""
    return ParamSpace(
        names=("p_bra", "R", "v"),
        lo=(0.003, 0.4e-3, 30.0),
        hi=(0.01, 1.2e-3, 100.0),
    )


@dataclass
class SobolResult:
    """First-order and total indices per (parameter, output) with 95% CIs."""

    param_names: tuple[str, ...]
    output_names: tuple[str, ...]
    s1: np.ndarray  # (D, K)
    s_tot: np.ndarray  # (D, K)
    s1_ci: np.ndarray  # half-widths
    s_tot_ci: np.ndarray
    undefined_outputs: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)

    def s1_of(self, param: str, output: str) -> float:
        return float(self.s1[self.param_names.index(param),
                             self.output_names.index(output)])

    def s_tot_of(self, param: str, output: str) -> float:
        return float(self.s_tot[self.param_names.index(param),
                                self.output_names.index(output)])


def saltelli_sample(space: ParamSpace, n_base: int, seed: int = 0) -> np.ndarray:
    """Saltelli design: N(2D+2) rows in [A; B; AB_1..AB_D; BA_1..BA_D] order.

    The base sequence is a scrambled Sobol sequence in 2D dimensions.
    ``n_base`` should be a power of two; other values are rounded up with a
    warning to keep the sequence balanced.
    """
    d = space.dim
    m = max(1, math.ceil(math.log2(n_base)))
    if 2**m != n_base:
        warnings.warn(
            f"saltelli_sample: n_base={n_base} is not a power of two; "
            f"rounded up to {2**m}",
            stacklevel=2,
        )
    n = 2**m
    eng = qmc.Sobol(d=2 * d, scramble=True, seed=seed)
    base = eng.random(n)
    A = base[:, :d]
    B = base[:, d:]
    blocks = [A, B]
    for i in range(d):
        ab = A.copy()
        ab[:, i] = B[:, i]
        blocks.append(ab)
    for i in range(d):
        ba = B.copy()
        ba[:, i] = A[:, i]
        blocks.append(ba)
    return space.scale(np.vstack(blocks))


def model_expectation(model, theta, m_prime: int, seed: int):
    """Mean QoI vector over m' independent model runs, plus the estimated
    variance of that mean (used for estimator noise correction)."""
    if m_prime < 1:
        raise ValueError("m_prime must be >= 1")
    rows = model.simulate_dataset(theta, m_prime, seed)
    mean = rows.mean(axis=0)
    if m_prime > 1:
        var_of_mean = rows.var(axis=0, ddof=1) / m_prime
    else:
        var_of_mean = np.zeros_like(mean)
    return mean, var_of_mean


def _index_estimates(fA, fB, fAB, fBA, noise_A, noise_B, noise_AB, noise_BA):
    """Saltelli-2010 S1 and Jansen S_tot for one output column.

    fAB/fBA: (D, N).  The noise terms are the mean replicate variances of
    the corresponding expectation estimates; they cancel the upward bias
    that Monte-Carlo noise adds to squared-difference estimators.
    """
    var = np.var(np.concatenate([fA, fB]), ddof=1) - 0.5 * (noise_A + noise_B)
    if var <= 0:
        return None, None, var
    d = fAB.shape[0]
    s1 = np.empty(d)
    st = np.empty(d)
    for i in range(d):
        v1a = np.mean(fB * (fAB[i] - fA))
        v1b = np.mean(fA * (fBA[i] - fB))
        s1[i] = 0.5 * (v1a + v1b) / var
        ta = 0.5 * np.mean((fA - fAB[i]) ** 2) - 0.5 * (noise_A + noise_AB[i])
        tb = 0.5 * np.mean((fB - fBA[i]) ** 2) - 0.5 * (noise_B + noise_BA[i])
        st[i] = 0.5 * (ta + tb) / var
    return s1, st, var


def sobol_indices(
    outputs: np.ndarray,
    space: ParamSpace,
    output_names=None,
    replicate_var: np.ndarray | None = None,
    n_bootstrap: int = 1000,
    seed: int = 0,
) -> SobolResult:
    """Sobol indices from model outputs aligned with the Saltelli blocks.

    ``outputs`` is (N(2D+2), K); ``replicate_var`` of the same shape carries
    the per-row variance of each expectation estimate for the noise-aware
    correction (pass None for deterministic outputs).  Outputs with
    non-positive corrected variance are reported as undefined (NaN indices).
    """
    Y = np.atleast_2d(np.asarray(outputs, dtype=float))
    d = space.dim
    rows = Y.shape[0]
    if rows % (2 * d + 2) != 0:
        raise ValueError("outputs do not align with the N(2D+2) block layout")
    n = rows // (2 * d + 2)
    k = Y.shape[1]
    names = tuple(output_names) if output_names is not None else tuple(
        f"y{i}" for i in range(k)
    )
    V = (
        np.atleast_2d(np.asarray(replicate_var, dtype=float))
        if replicate_var is not None
        else np.zeros_like(Y)
    )
    if V.shape != Y.shape:
        raise ValueError("replicate_var must match outputs shape")

    def split(M):
        A = M[:n]
        B = M[n : 2 * n]
        AB = np.stack([M[(2 + i) * n : (3 + i) * n] for i in range(d)])
        BA = np.stack([M[(2 + d + i) * n : (3 + d + i) * n] for i in range(d)])
        return A, B, AB, BA

    s1 = np.full((d, k), np.nan)
    st = np.full((d, k), np.nan)
    s1_ci = np.full((d, k), np.nan)
    st_ci = np.full((d, k), np.nan)
    undefined = []
    rng = np.random.default_rng(seed)
    boot_idx = rng.integers(0, n, size=(n_bootstrap, n))
    for q in range(k):
        fA, fB, fAB, fBA = split(Y[:, q])
        vA, vB, vAB, vBA = split(V[:, q])
        est = _index_estimates(
            fA, fB, fAB, fBA, vA.mean(), vB.mean(),
            vAB.mean(axis=1), vBA.mean(axis=1),
        )
        if est[0] is None:
            undefined.append(q)
            continue
        s1[:, q], st[:, q] = est[0], est[1]
        bs1 = np.empty((n_bootstrap, d))
        bst = np.empty((n_bootstrap, d))
        for b in range(n_bootstrap):
            idx = boot_idx[b]
            eb = _index_estimates(
                fA[idx], fB[idx], fAB[:, idx], fBA[:, idx],
                vA[idx].mean(), vB[idx].mean(),
                vAB[:, idx].mean(axis=1), vBA[:, idx].mean(axis=1),
            )
            if eb[0] is None:
                bs1[b] = np.nan
                bst[b] = np.nan
            else:
                bs1[b], bst[b] = eb[0], eb[1]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lo1, hi1 = np.nanpercentile(bs1, [2.5, 97.5], axis=0)
            lot, hit = np.nanpercentile(bst, [2.5, 97.5], axis=0)
        s1_ci[:, q] = 0.5 * (hi1 - lo1)
        st_ci[:, q] = 0.5 * (hit - lot)
    return SobolResult(
        param_names=space.names,
        output_names=names,
        s1=s1,
        s_tot=st,
        s1_ci=s1_ci,
        s_tot_ci=st_ci,
        undefined_outputs=tuple(undefined),
        meta={"n_base": n, "n_bootstrap": n_bootstrap},
    )


def _expectation_task(args):
    row, theta, m_prime, seed, model = args
    mean, var = model_expectation(model, theta, m_prime, seed)
    return row, mean, var


def run_sa(
    model,
    space: ParamSpace,
    n_base: int,
    m_prime: int,
    seed: int,
    output_names=None,
    workers: int = 1,
) -> tuple[SobolResult, np.ndarray, np.ndarray]:
    """Saltelli sampling + expectation estimation + Sobol indices.

    Returns (result, design matrix, expectation matrix).
    """
    X = saltelli_sample(space, n_base, seed=seed)
    tasks = [
        (r, X[r], m_prime, spawn_seed(seed, 17, r), model) for r in range(len(X))
    ]
    k = getattr(model, "n_qoi", None)
    results = parallel_map(_expectation_task, tasks, workers)
    k = k if k is not None else len(results[0][1])
    Y = np.empty((len(X), k))
    V = np.empty((len(X), k))
    for r, mean, var in results:
        Y[r] = mean
        V[r] = var
    names = output_names if output_names is not None else getattr(
        model, "selection", None
    )
    result = sobol_indices(
        Y, space, output_names=names,
        replicate_var=V if m_prime > 1 else None, seed=seed,
    )
    result.meta.update({"m_prime": m_prime, "seed": seed})
    return result, X, Y


# ---------------------------------------------------------------------------
# analytic test target


@dataclass(frozen=True)
class _Ishigami:
    """Ishigami function as a deterministic 'model' with one output."""

    a: float = 7.0
    b: float = 0.1
    selection: tuple[str, ...] = ("ishigami",)

    @property
    def n_qoi(self) -> int:
        return 1

    def simulate_dataset(self, theta, m: int, seed: int) -> np.ndarray:
        x1, x2, x3 = (float(t) for t in np.asarray(theta, dtype=float).ravel())
        val = (
            math.sin(x1)
            + self.a * math.sin(x2) ** 2
            + self.b * x3**4 * math.sin(x1)
        )
        return np.full((m, 1), val)


def ishigami(a: float = 7.0, b: float = 0.1) -> _Ishigami:
    return _Ishigami(a=a, b=b)


ISHIGAMI_SPACE = ParamSpace(
    names=("x1", "x2", "x3"),
    lo=(-math.pi, -math.pi, -math.pi),
    hi=(math.pi, math.pi, math.pi),
)


def ishigami_analytic_s1(a: float = 7.0, b: float = 0.1) -> np.ndarray:
    """Closed-form first-order indices of the Ishigami function."""
    pi4 = math.pi**4
    v1 = 0.5 * (1.0 + b * pi4 / 5.0) ** 2
    v2 = a**2 / 8.0
    v13 = b**2 * pi4**2 * (1.0 / 18.0 - 1.0 / 50.0)
    var = v1 + v2 + v13
    return np.array([v1 / var, v2 / var, 0.0])
