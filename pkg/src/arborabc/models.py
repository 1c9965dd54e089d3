"""Simulators exposed to the calibration and sensitivity machinery.

A simulator maps a parameter vector theta to datasets of QoI rows:
``simulate_dataset(theta, m, seed) -> (m, k) array``.  Seeds fully
determine the output, which is what makes SMC runs resumable and
thread-count independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _engine
from .growth import GuidanceField, GrowthParams, SomaSpec, n_steps_for, simulate
from .morphometrics import MORPHOMETRIC_IDS
from .rng import spawn_seed

__all__ = [
    "GrowthModel",
    "ToyGaussianModel",
    "model1_defaults",
    "model2_defaults",
    "default_soma",
    "default_field",
]

_THETA_NAMES = ("p_bra", "R", "v")


def _tilted_neurites(n: int, tilt: float, resource: float):
    """n unit directions fanned around +z at the given polar tilt."""
    if n == 1:
        return (((0.0, 0.0, 1.0), resource),)
    out = []
    for i in range(n):
        az = 2.0 * math.pi * i / n
        d = (
            math.sin(tilt) * math.cos(az),
            math.sin(tilt) * math.sin(az),
            math.cos(tilt),
        )
        norm = math.sqrt(sum(c * c for c in d))
        out.append(((d[0] / norm, d[1] / norm, d[2] / norm), resource))
    return tuple(out)


def default_soma(model: str) -> SomaSpec:
    """Built-in soma templates.

    Model 1 (basal-like): three neurites with a modest resource budget, so
    the resource threshold truncates growth inside the usual R bounds.
    Model 2 (apical-like): one trunk with a large budget, so the trunk
    lives for the whole simulated time and R acts through the side
    branches.
    """
    if model == "model1":
        return SomaSpec(position=(0.0, 0.0, 0.0), radius=10.0,
                        neurites=_tilted_neurites(3, 0.4, 0.6))
    if model == "model2":
        return SomaSpec(position=(0.0, 0.0, 0.0), radius=10.0,
                        neurites=_tilted_neurites(1, 0.0, 2.5))
    raise ValueError(f"unknown model {model!r}")


def default_field() -> GuidanceField:
    return GuidanceField(kind="constant-gradient", direction=(0.0, 0.0, 1.0))


def model1_defaults() -> GrowthParams:
    """Reference parameter point for the bifurcating model."""
    return GrowthParams(p_bra=0.006, R=0.85e-3, v=50.0)


def model2_defaults() -> GrowthParams:
    """Reference parameter point for the side-branching model."""
    return GrowthParams(p_bra=0.038, R=0.71e-3, v=100.0)


@dataclass(frozen=True)
class GrowthModel:
    """A growth model bound to its templates and a QoI selection.

    ``theta_names`` lists the GrowthParams fields a parameter vector maps
    onto (calibration and sensitivity vary exactly these).
    """

    model: str = "model2"
    params: GrowthParams = field(default_factory=model2_defaults)
    soma: SomaSpec | None = None
    guidance: GuidanceField = field(default_factory=default_field)
    selection: tuple[str, ...] = MORPHOMETRIC_IDS
    theta_names: tuple[str, ...] = _THETA_NAMES

    def __post_init__(self):
        if self.model not in ("model1", "model2"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.soma is None:
            object.__setattr__(self, "soma", default_soma(self.model))

    @property
    def n_qoi(self) -> int:
        return len(self.selection)

    def params_for(self, theta: Sequence[float]) -> GrowthParams:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape[0] != len(self.theta_names):
            raise ValueError(
                f"theta has {theta.shape[0]} entries, expected {len(self.theta_names)}"
            )
        return self.params.with_theta(self.theta_names, theta)

    def simulate_neuron(self, theta, seed: int, engine: str = "fast"):
        return simulate(self.model, self.soma, self.params_for(theta),
                        self.guidance, seed, engine=engine)

    def simulate_dataset(self, theta, m: int, seed: int) -> np.ndarray:
        """m independent neurons at theta, reduced to their QoI rows."""
        params = self.params_for(theta)
        steps = n_steps_for(params)
        full = self.selection == MORPHOMETRIC_IDS
        out = np.empty((m, self.n_qoi))
        order = {name: i for i, name in enumerate(MORPHOMETRIC_IDS)}
        cols = [order[s] for s in self.selection]
        for j in range(m):
            s = spawn_seed(seed, j)
            stats = _engine.simulate_qoi_fast(
                self.model, self.soma, params, self.guidance, s, steps
            )
            if full:
                out[j] = stats
            else:
                out[j] = np.asarray(stats)[cols]
        return out

    def with_selection(self, selection: Sequence[str]) -> "GrowthModel":
        return replace(self, selection=tuple(selection))


@dataclass(frozen=True)
class ToyGaussianModel:
    """Gaussian location model with the fixed equicorrelated covariance
    C_ij = delta_ij + off_diagonal (1 - delta_ij); theta is the mean."""

    dim: int = 2
    off_diagonal: float = 0.2
    selection: tuple[str, ...] = ()
    theta_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        object.__setattr__(
            self, "selection", tuple(f"y{i+1}" for i in range(self.dim))
        )
        object.__setattr__(
            self, "theta_names", tuple(f"mu{i+1}" for i in range(self.dim))
        )

    @property
    def covariance(self) -> np.ndarray:
        d = self.dim
        return np.full((d, d), self.off_diagonal) + (1.0 - self.off_diagonal) * np.eye(d)

    @property
    def n_qoi(self) -> int:
        return self.dim

    def _chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.covariance)

    def simulate_dataset(self, theta, m: int, seed: int) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape[0] != self.dim:
            raise ValueError("theta dimension mismatch")
        g = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
        return g.standard_normal((m, self.dim)) @ self._chol().T + theta

    def dataset_centered_at(self, theta, m: int, seed: int) -> np.ndarray:
        """A dataset whose sample mean is exactly theta (for benchmarks)."""
        X = self.simulate_dataset(theta, m, seed)
        return X - X.mean(axis=0) + np.asarray(theta, dtype=float)
