"""JIT growth kernel. Semantics match growth.step_model1/step_model2 exactly;
the test suite asserts byte-identical trees between the two engines."""

from __future__ import annotations

import numpy as np
from numba import njit

from . import growth as _g

_U64 = np.uint64
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SLOTS = 16


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


@njit(cache=True, inline="always")
def _uniform(seed, agent_id, step, slot):
    key = _mix(seed + _GAMMA * _U64(agent_id))
    out = _mix(key + _GAMMA * _U64(step * _SLOTS + slot))
    return (out >> _U64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _grow(seed, n_steps, is_model2,
          p_bra, R, v_dt, r_min, r0, w1, w2, w3,
          field_kind, fx, fy, fz, f_amp,
          L_max, stub, bif_angle, max_agents, n0,
          start, end, resource, parent, ndaughters, r_snap):
    n = n0
    for step in range(n_steps):
        if n + 3 > max_agents:
            break
        n_snap = n
        # phase 1: resource snapshot, model-2 consumption for every agent
        for i in range(n_snap):
            r_snap[i] = resource[i]
            if is_model2 and r_snap[i] > r_min:
                resource[i] -= R
        # phase 2: tip rules on the snapshot
        for i in range(n_snap):
            if n + 3 > max_agents:
                break
            if ndaughters[i] != 0 or r_snap[i] <= r_min:
                continue
            u0 = _uniform(seed, i, step, 0) * 2.0 - 1.0
            u1 = _uniform(seed, i, step, 1) * 2.0 - 1.0
            u2 = _uniform(seed, i, step, 2) * 2.0 - 1.0
            dx = end[i, 0] - start[i, 0]
            dy = end[i, 1] - start[i, 1]
            dz = end[i, 2] - start[i, 2]
            ln = np.sqrt(dx * dx + dy * dy + dz * dz)
            d2x, d2y, d2z = dx / ln, dy / ln, dz / ln
            if field_kind == 0:
                d3x, d3y, d3z = fx, fy, fz
            else:
                mx = 0.5 * (start[i, 0] + end[i, 0])
                my = 0.5 * (start[i, 1] + end[i, 1])
                mz = 0.5 * (start[i, 2] + end[i, 2])
                gx0, gy0, gz0 = fx - mx, fy - my, fz - mz
                gn = np.sqrt(gx0 * gx0 + gy0 * gy0 + gz0 * gz0)
                if gn > 0.0 and f_amp != 0.0:
                    s = f_amp / abs(f_amp)
                    d3x, d3y, d3z = s * gx0 / gn, s * gy0 / gn, s * gz0 / gn
                else:
                    d3x, d3y, d3z = 0.0, 0.0, 0.0
            yx = w1 * u0 + w2 * d2x + w3 * d3x
            yy = w1 * u1 + w2 * d2y + w3 * d3y
            yz = w1 * u2 + w2 * d2z + w3 * d3z
            yn = np.sqrt(yx * yx + yy * yy + yz * yz)
            if yn == 0.0:
                yx, yy, yz = d2x, d2y, d2z
            else:
                yx, yy, yz = yx / yn, yy / yn, yz / yn
            end[i, 0] += v_dt * yx
            end[i, 1] += v_dt * yy
            end[i, 2] += v_dt * yz
            if not is_model2:
                resource[i] -= R
            # split over-long cylinders into an equal-piece chain; the
            # proximal piece keeps the id (ordering!), the new distal piece
            # becomes the tip and carries the resource
            tip = i
            ex = end[i, 0] - start[i, 0]
            ey = end[i, 1] - start[i, 1]
            ez = end[i, 2] - start[i, 2]
            el = np.sqrt(ex * ex + ey * ey + ez * ez)
            if el > L_max:
                k = int(np.ceil(el / L_max - 1e-12))
                if n + (k - 1) <= max_agents:
                    bx, by, bz = start[i, 0], start[i, 1], start[i, 2]
                    r_keep = resource[i]
                    end[i, 0] = bx + ex * (1 / k)
                    end[i, 1] = by + ey * (1 / k)
                    end[i, 2] = bz + ez * (1 / k)
                    resource[i] = r_min
                    ndaughters[i] = 1
                    prev = i
                    for j in range(2, k + 1):
                        fa = (j - 1) / k
                        fb = j / k
                        start[n, 0] = bx + ex * fa
                        start[n, 1] = by + ey * fa
                        start[n, 2] = bz + ez * fa
                        end[n, 0] = bx + ex * fb
                        end[n, 1] = by + ey * fb
                        end[n, 2] = bz + ez * fb
                        if j == k:
                            resource[n] = r_keep
                            ndaughters[n] = 0
                        else:
                            resource[n] = r_min
                            ndaughters[n] = 1
                        parent[n] = prev
                        prev = n
                        n += 1
                    tip = prev
            z = _uniform(seed, i, step, 3)
            if z < p_bra and n + 2 <= max_agents:
                phi = _uniform(seed, i, step, 4) * 6.283185307179586
                ax = end[tip, 0] - start[tip, 0]
                ay = end[tip, 1] - start[tip, 1]
                az = end[tip, 2] - start[tip, 2]
                al = np.sqrt(ax * ax + ay * ay + az * az)
                ax, ay, az = ax / al, ay / al, az / al
                if abs(ax) < 0.9:
                    hx, hy, hz = 1.0, 0.0, 0.0
                else:
                    hx, hy, hz = 0.0, 1.0, 0.0
                e1x = ay * hz - az * hy
                e1y = az * hx - ax * hz
                e1z = ax * hy - ay * hx
                e1n = np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
                e1x, e1y, e1z = e1x / e1n, e1y / e1n, e1z / e1n
                e2x = ay * e1z - az * e1y
                e2y = az * e1x - ax * e1z
                e2z = ax * e1y - ay * e1x
                ca = np.cos(bif_angle)
                sa = np.sin(bif_angle)
                ux = np.cos(phi) * e1x + np.sin(phi) * e2x
                uy = np.cos(phi) * e1y + np.sin(phi) * e2y
                uz = np.cos(phi) * e1z + np.sin(phi) * e2z
                if is_model2:
                    c1x, c1y, c1z = yx, yy, yz
                    rr1 = resource[tip]
                    c2x = ca * ax + sa * ux
                    c2y = ca * ay + sa * uy
                    c2z = ca * az + sa * uz
                    rr2 = r0
                else:
                    c1x = ca * ax + sa * ux
                    c1y = ca * ay + sa * uy
                    c1z = ca * az + sa * uz
                    c2x = ca * ax - sa * ux
                    c2y = ca * ay - sa * uy
                    c2z = ca * az - sa * uz
                    rr1 = resource[tip]
                    rr2 = resource[tip]
                tx, ty, tz = end[tip, 0], end[tip, 1], end[tip, 2]
                start[n, 0] = tx
                start[n, 1] = ty
                start[n, 2] = tz
                end[n, 0] = tx + stub * c1x
                end[n, 1] = ty + stub * c1y
                end[n, 2] = tz + stub * c1z
                resource[n] = rr1
                parent[n] = tip
                ndaughters[n] = 0
                n += 1
                start[n, 0] = tx
                start[n, 1] = ty
                start[n, 2] = tz
                end[n, 0] = tx + stub * c2x
                end[n, 1] = ty + stub * c2y
                end[n, 2] = tz + stub * c2z
                resource[n] = rr2
                parent[n] = tip
                ndaughters[n] = 0
                n += 1
                ndaughters[tip] += 2
    return n


@njit(cache=True)
def section_stats(n, start, end, parent, ndaughters, sec_of):
    """Section count, mean/population-std of section lengths, total length.

    Sections are maximal unbranched chains: a new section starts at every
    root and at every daughter of a two-daughter agent.  Relies on parents
    preceding daughters.
    """
    nsec = 0
    for i in range(n):
        p = parent[i]
        if p < 0 or ndaughters[p] >= 2:
            sec_of[i] = nsec
            nsec += 1
        else:
            sec_of[i] = sec_of[p]
    lengths = np.zeros(nsec)
    for i in range(n):
        dx = end[i, 0] - start[i, 0]
        dy = end[i, 1] - start[i, 1]
        dz = end[i, 2] - start[i, 2]
        lengths[sec_of[i]] += np.sqrt(dx * dx + dy * dy + dz * dz)
    total = 0.0
    for s in range(nsec):
        total += lengths[s]
    mean = total / nsec
    var = 0.0
    for s in range(nsec):
        var += (lengths[s] - mean) ** 2
    var /= nsec
    return nsec, mean, np.sqrt(var), total


class _Workspace:
    """Reusable per-process buffers for the growth kernel."""

    def __init__(self):
        self.capacity = 0

    def ensure(self, capacity: int):
        if capacity > self.capacity:
            self.start = np.empty((capacity, 3), dtype=np.float64)
            self.end = np.empty((capacity, 3), dtype=np.float64)
            self.resource = np.empty(capacity, dtype=np.float64)
            self.parent = np.empty(capacity, dtype=np.int64)
            self.ndaughters = np.empty(capacity, dtype=np.int8)
            self.r_snap = np.empty(capacity, dtype=np.float64)
            self.sec_of = np.empty(capacity, dtype=np.int64)
            self.capacity = capacity


_ws = _Workspace()


def _field_args(field_):
    if field_.kind == "constant-gradient":
        d = np.asarray(field_.direction, dtype=float)
        norm = np.linalg.norm(d)
        u = d / norm if norm > 0 else d * 0.0
        return 0, float(u[0]), float(u[1]), float(u[2]), 1.0
    s = field_.source
    return 1, float(s[0]), float(s[1]), float(s[2]), float(field_.amplitude)


def _run_kernel(model, soma, params, field_, seed, n_steps):
    tree0 = _g.init_neuron(soma, params.stub_length, diameter=params.diameter)
    n0 = tree0.n_agents
    _ws.ensure(params.max_agents)
    _ws.start[:n0] = tree0.start
    _ws.end[:n0] = tree0.end
    _ws.resource[:n0] = tree0.resource
    _ws.parent[:n0] = tree0.parent
    _ws.ndaughters[:n0] = tree0.n_daughters
    kind, fx, fy, fz, amp = _field_args(field_)
    n = _grow(
        np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF),
        int(n_steps),
        model == "model2",
        params.p_bra, params.R, params.v * params.dt, params.r_min, params.r0,
        params.w1, params.w2, params.w3,
        kind, fx, fy, fz, amp,
        params.L_max, params.stub_length, params.bifurcation_angle,
        params.max_agents, n0,
        _ws.start, _ws.end, _ws.resource, _ws.parent, _ws.ndaughters, _ws.r_snap,
    )
    return n


def simulate_fast(model, soma, params, field_, seed, n_steps, type_code=3):
    """Run the kernel and wrap the result in a NeuronTree."""
    n = _run_kernel(model, soma, params, field_, seed, n_steps)
    tree = _g.NeuronTree(soma, capacity=max(n, 1))
    tree._n = n
    tree._start[:n] = _ws.start[:n]
    tree._end[:n] = _ws.end[:n]
    tree._resource[:n] = _ws.resource[:n]
    tree._parent[:n] = _ws.parent[:n]
    tree._n_daughters[:n] = _ws.ndaughters[:n]
    tree._diameter[:n] = params.diameter
    tree._type_code[:n] = type_code
    return tree


def simulate_qoi_fast(model, soma, params, field_, seed, n_steps):
    """Run the kernel and return (M1, M2, M3, M4) without building a tree."""
    n = _run_kernel(model, soma, params, field_, seed, n_steps)
    return section_stats(n, _ws.start, _ws.end, _ws.parent, _ws.ndaughters, _ws.sec_of)
