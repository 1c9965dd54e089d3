"""Agent-based neuron growth: two resource-driven stochastic models.

A neuron is a spherical soma plus a tree of straight cylindrical agents.
Growth is driven by tip agents executing a correlated, biased random walk;
branching is a per-step Bernoulli event.  The two models differ in how they
branch and in how the growth resource is consumed and passed on:

* model 1 ("bifurcating"): only tips consume resource, and a branching tip
  splits symmetrically into two daughters that both inherit its resource.
* model 2 ("side-branching"): every agent above the resource threshold keeps
  consuming, and a branching tip continues along its walk direction while a
  single side branch starts fresh with resource ``r0``.

This module holds the data model and a straightforward reference
implementation of the step rules (`step_model1`, `step_model2`).  The
default execution engine used by `simulate` is the numba kernel in
`_engine`, which produces byte-identical trees and is a few hundred times
faster; the tests hold the two implementations against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Literal, Sequence

import numpy as np

from .rng import AgentStream, stream_uniform

__all__ = [
    "GuidanceField",
    "SomaSpec",
    "GrowthParams",
    "Agent",
    "NeuronTree",
    "GrowthRng",
    "StepReport",
    "init_neuron",
    "walk_direction",
    "step_model1",
    "step_model2",
    "simulate",
    "n_steps_for",
]

ModelName = Literal["model1", "model2"]

SOMA_PARENT = -1

_TWO_PI = 2.0 * math.pi


class ConfigurationError(ValueError):
    """Invalid model or run configuration."""


@dataclass(frozen=True)
class GuidanceField:
    """Static scalar guidance cue; only its normalized gradient is used.

    ``constant-gradient``: gradient is ``direction`` everywhere.
    ``point-source``: the field is ``-amplitude * |x - source|`` so the
    (normalized) gradient points toward the source for amplitude > 0; at the
    source itself the gradient is defined as zero.
    """

    kind: Literal["constant-gradient", "point-source"] = "constant-gradient"
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    source: tuple[float, float, float] = (0.0, 0.0, 0.0)
    amplitude: float = 1.0

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Gradient at one point (3,) or a stack of points (n, 3)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "constant-gradient":
            g = np.broadcast_to(np.asarray(self.direction, float), pts.shape).copy()
        elif self.kind == "point-source":
            d = np.asarray(self.source, float) - pts
            norm = np.linalg.norm(d, axis=1, keepdims=True)
            with np.errstate(invalid="ignore", divide="ignore"):
                g = np.where(norm > 0.0, self.amplitude * d / norm, 0.0)
        else:
            raise ConfigurationError(f"unknown guidance field kind: {self.kind!r}")
        if not np.all(np.isfinite(g)):
            raise ConfigurationError("guidance gradient is not finite")
        return g if np.asarray(points).ndim == 2 else g[0]

    def unit_gradient(self, points: np.ndarray) -> np.ndarray:
        """Normalized gradient; zero vector where the gradient vanishes."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "constant-gradient":
            d = np.asarray(self.direction, float)
            n = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            u = np.broadcast_to(d / n if n > 0 else d * 0.0, pts.shape).copy()
        else:
            d = np.asarray(self.source, float) - pts
            norm = np.sqrt((d * d).sum(axis=1, keepdims=True))
            sign = 0.0 if self.amplitude == 0.0 else math.copysign(1.0, self.amplitude)
            with np.errstate(invalid="ignore", divide="ignore"):
                u = np.where(norm > 0.0, sign * (d / norm), 0.0)
        if not np.all(np.isfinite(u)):
            raise ConfigurationError("guidance gradient is not finite")
        return u if np.asarray(points).ndim == 2 else u[0]


@dataclass(frozen=True)
class SomaSpec:
    """Spherical soma with the initial neurite stubs attached to it."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 10.0
    # (unit direction, initial resource) per neurite
    neurites: tuple[tuple[tuple[float, float, float], float], ...] = (
        ((0.0, 0.0, 1.0), 1.0),
    )

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigurationError("soma radius must be > 0")
        if len(self.neurites) == 0:
            raise ConfigurationError("at least one initial neurite is required")
        for direction, _ in self.neurites:
            n = float(np.linalg.norm(direction))
            if abs(n - 1.0) > 1e-9:
                raise ConfigurationError(
                    f"neurite direction {direction} is not a unit vector"
                )


@dataclass(frozen=True)
class GrowthParams:
    """Parameters shared by both growth models.

    ``p_bra`` and ``R`` are per time step; the elongation displacement per
    step is ``v * dt``.  ``r0`` is only read by model 2 (side branch start
    resource).  ``max_agents`` is a simulation guard: growth freezes once the
    tree reaches it (supercritical corners of wide priors would otherwise
    grow without bound).
    """

    p_bra: float = 0.01
    R: float = 1.0e-3
    v: float = 100.0
    r_min: float = 0.0
    r0: float = 0.010
    w1: float = 0.5
    w2: float = 0.8
    w3: float = 0.2
    dt: float = 0.01
    T: float = 20.0
    L_max: float = 10.0
    bifurcation_angle: float = 0.5
    stub_length: float = 1.0
    diameter: float = 1.0
    max_agents: int = 20_000

    def __post_init__(self):
        if not 0.0 <= self.p_bra <= 1.0:
            raise ConfigurationError("p_bra must be in [0, 1]")
        if self.v < 0 or self.R < 0:
            raise ConfigurationError("v and R must be >= 0")
        if self.dt <= 0:
            raise ConfigurationError("dt must be > 0")
        if self.T < self.dt:
            raise ConfigurationError("T must be >= dt")
        if self.L_max <= 0:
            raise ConfigurationError("L_max must be > 0")
        if self.stub_length <= 0:
            raise ConfigurationError("stub_length must be > 0")
        if self.max_agents < 4:
            raise ConfigurationError("max_agents too small")

    def with_theta(self, names: Sequence[str], values: Sequence[float]) -> "GrowthParams":
        return replace(self, **dict(zip(names, (float(v) for v in values))))


def n_steps_for(params: GrowthParams) -> int:
    """Number of steps: ceil(T / dt), robust to float quotient noise."""
    return int(math.ceil(params.T / params.dt - 1e-9))


@dataclass(frozen=True)
class Agent:
    """Read-only view of one cylindrical agent."""

    id: int
    parent: int
    start: np.ndarray
    end: np.ndarray
    diameter: float
    resource: float
    daughters: tuple[int, ...]

    @property
    def length(self) -> float:
        d = self.end - self.start
        return math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])

    @property
    def is_tip(self) -> bool:
        return len(self.daughters) == 0

    @property
    def orientation(self) -> np.ndarray:
        return (self.end - self.start) / self.length

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)


class NeuronTree:
    """Array-backed tree of agents rooted at a soma.

    Agent ids are dense 0..n-1 and parents always precede their daughters,
    which the morphometrics and serialization code relies on.
    """

    def __init__(self, soma: SomaSpec, capacity: int = 64):
        self.soma = soma
        self._n = 0
        self._start = np.empty((capacity, 3), dtype=float)
        self._end = np.empty((capacity, 3), dtype=float)
        self._resource = np.empty(capacity, dtype=float)
        self._parent = np.empty(capacity, dtype=np.int64)
        self._n_daughters = np.empty(capacity, dtype=np.int8)
        self._diameter = np.empty(capacity, dtype=float)
        self._type_code = np.empty(capacity, dtype=np.int16)

    # -- array views ------------------------------------------------------
    @property
    def n_agents(self) -> int:
        return self._n

    @property
    def start(self) -> np.ndarray:
        return self._start[: self._n]

    @property
    def end(self) -> np.ndarray:
        return self._end[: self._n]

    @property
    def resource(self) -> np.ndarray:
        return self._resource[: self._n]

    @property
    def parent(self) -> np.ndarray:
        return self._parent[: self._n]

    @property
    def n_daughters(self) -> np.ndarray:
        return self._n_daughters[: self._n]

    @property
    def diameter(self) -> np.ndarray:
        return self._diameter[: self._n]

    @property
    def type_code(self) -> np.ndarray:
        return self._type_code[: self._n]

    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.end - self.start, axis=1)

    def tip_ids(self) -> np.ndarray:
        return np.flatnonzero(self.n_daughters == 0)

    def root_ids(self) -> np.ndarray:
        return np.flatnonzero(self.parent == SOMA_PARENT)

    def daughters_of(self, i: int) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.parent == i))

    def children_map(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(self._n)]
        for j in range(self._n):
            p = int(self._parent[j])
            if p != SOMA_PARENT:
                kids[p].append(j)
        return kids

    # -- mutation ---------------------------------------------------------
    def _grow_capacity(self, needed: int):
        cap = self._start.shape[0]
        if needed <= cap:
            return
        new = max(needed, 2 * cap)
        for name in ("_start", "_end"):
            arr = np.empty((new, 3), dtype=float)
            arr[:cap] = getattr(self, name)[:cap]
            setattr(self, name, arr)
        for name, dt in (
            ("_resource", float),
            ("_parent", np.int64),
            ("_n_daughters", np.int8),
            ("_diameter", float),
            ("_type_code", np.int16),
        ):
            arr = np.empty(new, dtype=dt)
            arr[:cap] = getattr(self, name)[:cap]
            setattr(self, name, arr)

    def add_agent(
        self,
        parent: int,
        start: np.ndarray,
        end: np.ndarray,
        resource: float,
        diameter: float = 1.0,
        type_code: int = 3,
        n_daughters: int = 0,
    ) -> int:
        i = self._n
        self._grow_capacity(i + 1)
        self._start[i] = start
        self._end[i] = end
        self._resource[i] = resource
        self._parent[i] = parent
        self._n_daughters[i] = n_daughters
        self._diameter[i] = diameter
        self._type_code[i] = type_code
        self._n = i + 1
        if parent != SOMA_PARENT:
            self._n_daughters[parent] += 1
        return i

    def agent(self, i: int) -> Agent:
        if not 0 <= i < self._n:
            raise IndexError(f"no agent with id {i}")
        return Agent(
            id=i,
            parent=int(self._parent[i]),
            start=self._start[i].copy(),
            end=self._end[i].copy(),
            diameter=float(self._diameter[i]),
            resource=float(self._resource[i]),
            daughters=self.daughters_of(i),
        )

    def agents(self) -> Iterator[Agent]:
        for i in range(self._n):
            yield self.agent(i)

    # -- consistency ------------------------------------------------------
    def validate(self, atol: float = 1e-9):
        """Raise if any structural invariant is broken."""
        n = self._n
        parent = self.parent
        if n and parent[0] == SOMA_PARENT and not (parent[self.root_ids()] == SOMA_PARENT).all():
            raise AssertionError("inconsistent roots")
        for i in range(n):
            p = int(parent[i])
            if p == SOMA_PARENT:
                continue
            if not 0 <= p < i:
                raise AssertionError(f"agent {i} has invalid parent {p}")
            if np.linalg.norm(self._start[i] - self._end[p]) > atol:
                raise AssertionError(f"agent {i} does not start at its mother's end")
        counts = np.zeros(n, dtype=int)
        for i in range(n):
            p = int(parent[i])
            if p != SOMA_PARENT:
                counts[p] += 1
        if not (counts == self.n_daughters).all():
            raise AssertionError("daughter counts out of sync")
        if (counts > 2).any():
            raise AssertionError("agent with more than two daughters")
        if (self.lengths() <= 0).any():
            raise AssertionError("zero-length agent")

    def __eq__(self, other) -> bool:
        if not isinstance(other, NeuronTree):
            return NotImplemented
        return (
            self._n == other._n
            and np.array_equal(self.start, other.start)
            and np.array_equal(self.end, other.end)
            and np.array_equal(self.resource, other.resource)
            and np.array_equal(self.parent, other.parent)
            and np.array_equal(self.type_code, other.type_code)
        )


class GrowthRng:
    """Factory of per-(agent, step) counter-based streams for one simulation."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def stream(self, agent_id: int, step: int) -> AgentStream:
        return AgentStream(self.seed, agent_id, step)

    def uniform(self, agent_ids, step: int, slot: int):
        return stream_uniform(self.seed, agent_ids, step, slot)


@dataclass
class StepReport:
    """What one model step did to the tree."""

    elongated: list[int] = field(default_factory=list)
    branched: list[tuple[int, int, int]] = field(default_factory=list)  # mother, d1, d2
    split: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)

    @property
    def n_elongations(self) -> int:
        return len(self.elongated)

    @property
    def n_branch_events(self) -> int:
        return len(self.branched)


def init_neuron(
    soma: SomaSpec,
    stub_length: float,
    initial_resource: float | None = None,
    diameter: float = 1.0,
    type_code: int = 3,
) -> NeuronTree:
    """Create the initial tree: one stub agent per neurite, starting on the
    soma surface.  ``initial_resource`` overrides the per-neurite resources
    from the soma spec when given."""
    if stub_length <= 0:
        raise ConfigurationError("stub_length must be > 0")
    tree = NeuronTree(soma)
    pos = np.asarray(soma.position, dtype=float)
    for direction, res in soma.neurites:
        d = np.asarray(direction, dtype=float)
        r = float(res if initial_resource is None else initial_resource)
        start = pos + soma.radius * d
        tree.add_agent(SOMA_PARENT, start, start + stub_length * d, r,
                       diameter=diameter, type_code=type_code)
    return tree


def walk_direction(
    agent: Agent, params: GrowthParams, field_: GuidanceField, rng
) -> np.ndarray:
    """Unit direction of the correlated, biased random walk.

    Blends a uniform-cube random kick, the agent's current orientation, and
    the normalized guidance gradient at the agent midpoint, with weights
    (w1, w2, w3).  Draws exactly three uniforms from ``rng``.  If the blend
    vanishes, the current orientation is returned.
    """
    d1 = np.asarray(rng.uniform(-1.0, 1.0, size=3), dtype=float)
    d2 = agent.orientation
    d3 = field_.unit_gradient(agent.midpoint)
    y = params.w1 * d1 + params.w2 * d2 + params.w3 * d3
    norm = math.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
    if norm == 0.0:
        return d2
    return y / norm


def _orthonormal_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane perpendicular to ``axis``."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 = e1 / math.sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2])
    e2 = np.cross(axis, e1)
    return e1, e2


def _tilted(axis: np.ndarray, u: np.ndarray, angle: float, sign: float) -> np.ndarray:
    return math.cos(angle) * axis + sign * math.sin(angle) * u


def _split_chain(tree: NeuronTree, i: int, params: GrowthParams) -> tuple[int, ...]:
    """Split agent ``i`` into a chain of equal pieces no longer than L_max.

    The proximal piece keeps the id (preserving the parents-precede-
    daughters ordering); the new distal piece becomes the tip and carries
    the resource, the pieces in between are inert.  Returns the new agent
    ids, distal tip last.  No tips are created or destroyed.
    """
    span = tree._end[i] - tree._start[i]
    length = math.sqrt(span[0] * span[0] + span[1] * span[1] + span[2] * span[2])
    if length <= params.L_max:
        return ()
    k = int(math.ceil(length / params.L_max - 1e-12))
    if tree.n_agents + (k - 1) > params.max_agents:
        return ()
    base = tree._start[i].copy()
    r_keep = float(tree._resource[i])
    diam = float(tree._diameter[i])
    code = int(tree._type_code[i])
    tree._end[i] = base + span * (1 / k)
    tree._resource[i] = params.r_min
    new_ids = []
    prev = i
    for j in range(2, k + 1):
        a = base + span * ((j - 1) / k)
        b = base + span * (j / k)
        distal = j == k
        nid = tree.add_agent(
            prev, a, b, r_keep if distal else params.r_min,
            diameter=diam, type_code=code,
        )
        prev = nid
        new_ids.append(nid)
    return tuple(new_ids)


def _branch(
    tree: NeuronTree,
    i: int,
    params: GrowthParams,
    walk_dir: np.ndarray,
    phi: float,
    model: ModelName,
) -> tuple[int, int] | None:
    """Create the two daughters of a branching tip; returns their ids."""
    if tree.n_agents + 2 > params.max_agents:
        return None
    axis = tree._end[i] - tree._start[i]
    axis = axis / math.sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2])
    e1, e2 = _orthonormal_frame(axis)
    u = math.cos(phi) * e1 + math.sin(phi) * e2
    tip = tree._end[i].copy()
    res = float(tree._resource[i])
    code = int(tree._type_code[i])
    diam = float(tree._diameter[i])
    if model == "model2":
        d_cont = walk_dir
        d_side = _tilted(axis, u, params.bifurcation_angle, +1.0)
        r_cont, r_side = res, params.r0
    else:
        d_cont = _tilted(axis, u, params.bifurcation_angle, +1.0)
        d_side = _tilted(axis, u, params.bifurcation_angle, -1.0)
        r_cont = r_side = res
    a = tree.add_agent(i, tip, tip + params.stub_length * d_cont, r_cont,
                       diameter=diam, type_code=code)
    b = tree.add_agent(i, tip, tip + params.stub_length * d_side, r_side,
                       diameter=diam, type_code=code)
    return a, b


def _step(
    tree: NeuronTree,
    params: GrowthParams,
    field_: GuidanceField,
    rng: GrowthRng,
    step: int,
    model: ModelName,
) -> StepReport:
    report = StepReport()
    n0 = tree.n_agents
    if n0 + 3 > params.max_agents:
        return report
    r_snap = tree.resource[:n0].copy()
    tips_snap = tree.n_daughters[:n0] == 0
    if model == "model2":
        dec = r_snap > params.r_min
        tree._resource[:n0][dec] -= params.R
    v_dt = params.v * params.dt
    for i in range(n0):
        if tree.n_agents + 3 > params.max_agents:
            break
        if not tips_snap[i] or r_snap[i] <= params.r_min:
            continue
        stream = rng.stream(i, step)
        yhat = walk_direction(tree.agent(i), params, field_, stream)
        tree._end[i] += v_dt * yhat
        if model == "model1":
            tree._resource[i] -= params.R
        report.elongated.append(i)
        tip = i
        new_pieces = _split_chain(tree, i, params)
        if new_pieces:
            report.split.append((i, new_pieces))
            tip = new_pieces[-1]
        z = stream.uniform()
        if z < params.p_bra:
            phi = stream.uniform(0.0, _TWO_PI)
            made = _branch(tree, tip, params, yhat, phi, model)
            if made is not None:
                report.branched.append((tip, made[0], made[1]))
    return report


def step_model1(
    tree: NeuronTree, params: GrowthParams, field_: GuidanceField, rng: GrowthRng,
    step: int = 0,
) -> StepReport:
    """One step of the bifurcating model (symmetric split, tips consume)."""
    return _step(tree, params, field_, rng, step, "model1")


def step_model2(
    tree: NeuronTree, params: GrowthParams, field_: GuidanceField, rng: GrowthRng,
    step: int = 0,
) -> StepReport:
    """One step of the side-branching model (asymmetric, all agents consume)."""
    return _step(tree, params, field_, rng, step, "model2")


def simulate(
    model: ModelName,
    soma: SomaSpec,
    params: GrowthParams,
    field_: GuidanceField,
    seed: int,
    engine: Literal["fast", "reference"] = "fast",
    type_code: int = 3,
) -> NeuronTree:
    """Grow one neuron: init then ceil(T/dt) model steps.

    Fully deterministic in (model, soma, params, field, seed); the two
    engines produce identical trees.
    """
    if model not in ("model1", "model2"):
        raise ConfigurationError(f"unknown model {model!r}")
    steps = n_steps_for(params)
    if engine == "reference":
        tree = init_neuron(soma, params.stub_length, diameter=params.diameter,
                           type_code=type_code)
        rng = GrowthRng(seed)
        stepper = step_model1 if model == "model1" else step_model2
        for s in range(steps):
            stepper(tree, params, field_, rng, step=s)
        return tree
    from ._engine import simulate_fast

    return simulate_fast(model, soma, params, field_, seed, steps, type_code)
