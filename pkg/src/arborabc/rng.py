"""Counter-based random streams for order-independent, resumable simulations.

Every random variate consumed by the growth engine is addressed by a key
(seed, agent id, step, slot) instead of being drawn from a shared sequential
generator.  Two consequences: the per-agent streams are identical no matter
in which order agents are processed inside a time step, and a simulation can
be reproduced (or resumed) from nothing but its integer seed.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream_uniform", "AgentStream", "spawn_seed", "spawn_generator"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
# 2**-53, maps the top 53 bits of a u64 to [0, 1)
_INV53 = 1.0 / 9007199254740992.0
# slots addressable per (agent, step); slot indices must stay below this
SLOTS_PER_STEP = 16


def _mix(z):
    """splitmix64 finalizer; works on uint64 scalars and arrays."""
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def stream_uniform(seed, agent_ids, step, slot):
    """Uniform [0,1) variates keyed by (seed, agent id, step, slot).

    ``agent_ids`` may be an integer or an integer ndarray; the result has the
    same shape.  Values are reproducible across platforms and processes.
    """
    with np.errstate(over="ignore"):
        key = _mix(_U64(seed) + _GAMMA * np.asarray(agent_ids, dtype=np.uint64))
        ctr = _U64(int(step) * SLOTS_PER_STEP + int(slot))
        out = _mix(key + _GAMMA * ctr)
    return (out >> _U64(11)) * _INV53


class AgentStream:
    """Sequential view of one agent's per-step slots.

    Mimics the ``uniform`` method of :class:`numpy.random.Generator` closely
    enough for the growth rules: consuming n variates advances an internal
    slot cursor, so the k-th variate drawn equals slot k of the keyed stream.
    """

    def __init__(self, seed: int, agent_id: int, step: int):
        self.seed = int(seed)
        self.agent_id = int(agent_id)
        self.step = int(step)
        self._cursor = 0

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        if self._cursor + n > SLOTS_PER_STEP:
            raise RuntimeError("agent stream exhausted its per-step slots")
        slots = np.arange(self._cursor, self._cursor + n)
        self._cursor += n
        u = np.array(
            [stream_uniform(self.seed, self.agent_id, self.step, s) for s in slots]
        )
        u = low + u * (high - low)
        if size is None:
            return float(u[0])
        return u.reshape(size)


def spawn_seed(*key) -> int:
    """Derive a 64-bit child seed from an integer key path.

    Built on :class:`numpy.random.SeedSequence` spawn keys, so children of
    distinct key paths are statistically independent and the derivation is
    stable across numpy versions and platforms.
    """
    root, *rest = key
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in rest))
    return int(ss.generate_state(1, np.uint64)[0])


def spawn_generator(*key) -> np.random.Generator:
    """A fresh PCG64 generator for the given key path (see spawn_seed)."""
    root, *rest = key
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in rest))
    return np.random.Generator(np.random.PCG64(ss))
