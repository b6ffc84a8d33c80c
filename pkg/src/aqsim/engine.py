"""Time evolution of bubbles under compiled reaction lists.

Three backends: a stochastic well-mixed sampler (binomial event counts per
rule per tick), a spatial ballistic backend (module ``spatial``), and a
deterministic mean-field integrator used as the verification route.  All
well-mixed randomness comes from one counter-based stream created from the
seed; the stream is part of the initial conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compiler import (RULE_CATALYSIS, RULE_CREATION, ReactionList,
                       pauli_decompose, reactions_for_block)
from .core import ALPHA, BETA, Bubble
from .errors import ConfigError, CountOverflow

TICK_FRACTION = 0.01
MAX_TICK_FRACTION = 0.05


@dataclass
class EngineConfig:
    """Knobs shared by all backends.

    gamma0 is the pair-collision propensity per unit time; the default
    1/a_target makes a unit-weight block rotate at unit angular speed, so
    simulated time matches oracle time for the Hamiltonian as given.
    """

    backend: str = "wellmixed"
    dt: float | None = None
    gamma0: float | None = None
    a_target: int = 10_000
    replenish: bool = True
    seed: int = 1
    schedule_mode: str = "division"
    r0: float = 0.03
    bubble_radius: float = 1.0
    speed: float = 6.0
    spatial_thinning: float | None = None
    calibration_ticks: int = 250
    count_cap: int = 1 << 60
    meanfield_substeps: int = 10
    measure_tick_cap: int = 1_000_000
    vs_placement: str = "lowest"

    def resolved_gamma0(self) -> float:
        return 1.0 / self.a_target if self.gamma0 is None else self.gamma0

    def tick_length(self, max_rate: float = 1.0) -> float:
        """Configured dt, or the default making gamma0*A*dt*max_rate 0.01."""
        omega = self.resolved_gamma0() * self.a_target * max(max_rate, 1e-300)
        dt = TICK_FRACTION / omega if self.dt is None else self.dt
        if self.resolved_gamma0() * self.a_target * dt > MAX_TICK_FRACTION:
            raise ConfigError(
                f"dt {dt:g} breaks the stability guard gamma0*A*dt <= "
                f"{MAX_TICK_FRACTION}")
        return dt

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed))


def _key(t) -> tuple:
    return (t.part, t.sign, t.state)


def _compile_ops(rules) -> list[tuple]:
    ops = []
    for rule in rules:
        if rule.kind == RULE_CATALYSIS:
            ops.append((0, _key(rule.converted), _key(rule.catalyst),
                        _key(rule.result), rule.rate))
        elif rule.kind == RULE_CREATION:
            ops.append((1, _key(rule.trigger), None, _key(rule.created),
                        rule.rate))
        else:
            raise ConfigError(f"backend cannot execute rule kind {rule.kind}")
    return ops


def _roots(ops, counts) -> list[tuple]:
    roots = {(p, s) for (p, sg, s) in counts}
    for op in ops:
        roots.add((op[1][0], op[1][2]))
        roots.add((op[3][0], op[3][2]))
        if op[2] is not None:
            roots.add((op[2][0], op[2][2]))
    return sorted(roots, key=lambda r: (r[0], str(r[1])))


def _ensure_keys(counts, roots) -> None:
    for part, state in roots:
        counts.setdefault((part, 1, state), 0)
        counts.setdefault((part, -1, state), 0)


def _tick(counts, ops, conv_p, create_p, rng, cap) -> None:
    """One well-mixed tick: synchronous binomial draws, one per rule.

    conv_p is gamma0*dt (collision probability of a fixed ordered pair per
    tick), create_p is gamma0*a_target*dt (membrane feed per trigger).  All
    draws see tick-start counts, so per-rule expectations are exactly
    rate * conv_p * (converted count) * (catalyst count).  Overdrawing a
    type (possible only when several lists consume it) is clamped in rule
    order.
    """
    draws = []
    for kind, src, cat, dst, rate in ops:
        n = counts[src]
        p = rate * (conv_p * counts[cat] if kind == 0 else create_p)
        k = int(rng.binomial(n, min(p, 1.0))) if n > 0 and p > 0.0 else 0
        draws.append(k)
    taken: dict = {}
    for (kind, src, cat, dst, rate), k in zip(ops, draws):
        if kind == 0:
            k = min(k, counts[src] - taken.get(src, 0))
            if k <= 0:
                continue
            taken[src] = taken.get(src, 0) + k
        if k == 0:
            continue
        counts[dst] += k
        if counts[dst] > cap:
            raise CountOverflow(f"count for {dst} exceeded cap {cap}")
    for src, k in taken.items():
        counts[src] -= k


def _reduce_counts(counts, roots) -> None:
    for part, state in roots:
        m = min(counts[(part, 1, state)], counts[(part, -1, state)])
        if m:
            counts[(part, 1, state)] -= m
            counts[(part, -1, state)] -= m


def _replenish_counts(counts, roots, a_target) -> None:
    for part, state in roots:
        plus, minus = counts[(part, 1, state)], counts[(part, -1, state)]
        total = plus + minus
        if total < a_target:
            add = (a_target - total) // 2
            counts[(part, 1, state)] = plus + add
            counts[(part, -1, state)] = minus + add
        elif total > a_target:
            drop = min((total - a_target) // 2, plus, minus)
            counts[(part, 1, state)] = plus - drop
            counts[(part, -1, state)] = minus - drop


def counts_from_bubble(bubble: Bubble) -> dict:
    counts = {}
    for part in (ALPHA, BETA):
        for j in range(bubble.n_states):
            counts[(part, 1, j)] = int(bubble.counts[part, 0, j])
            counts[(part, -1, j)] = int(bubble.counts[part, 1, j])
    return counts


def counts_to_bubble(counts: dict, bubble: Bubble) -> None:
    for part in (ALPHA, BETA):
        for j in range(bubble.n_states):
            bubble.counts[part, 0, j] = counts.get((part, 1, j), 0)
            bubble.counts[part, 1, j] = counts.get((part, -1, j), 0)


def step_wellmixed(bubble: Bubble, rules, config: EngineConfig,
                   rng: np.random.Generator | None = None) -> Bubble:
    """One tick of the well-mixed sampler; no replenishment."""
    ops = _compile_ops(rules)
    counts = counts_from_bubble(bubble)
    _ensure_keys(counts, _roots(ops, counts))
    g = config.resolved_gamma0()
    dt = config.tick_length(max((op[4] for op in ops), default=1.0))
    _tick(counts, ops, g * dt, g * config.a_target * dt,
          rng or config.rng(), config.count_cap)
    counts_to_bubble(counts, bubble)
    return bubble


def replenish_pairs(bubble: Bubble, config: EngineConfig) -> Bubble:
    """Insert/delete complementary pairs to restore per-type totals."""
    counts = counts_from_bubble(bubble)
    roots = [(p, j) for p in (ALPHA, BETA) for j in range(bubble.n_states)]
    _replenish_counts(counts, roots, config.a_target)
    counts_to_bubble(counts, bubble)
    return bubble


def _segments(lists, mode):
    """Per-tick execution plan: one op batch per segment, run in order."""
    all_ops = [_compile_ops(lst) for lst in lists]
    if mode == "division":
        merged = [op for ops in all_ops for op in ops]
        return [merged] if merged else []
    if mode == "trotter":
        return [ops for ops in all_ops if ops]
    raise ConfigError(f"unknown schedule mode {mode!r}")


def evolve_lists(bubble: Bubble, lists, t: float, config: EngineConfig,
                 on_tick=None) -> Bubble:
    """Run the well-mixed backend for ceil(t/dt) ticks under the lists.

    division mode executes the union of all lists each tick; trotter mode
    executes each list in turn within a tick.  Creation rules switch on the
    per-tick reduction sweep that keeps totals finite.
    """
    segments = _segments(lists, config.schedule_mode)
    max_rate = max((op[4] for seg in segments for op in seg), default=1.0)
    dt = config.tick_length(max_rate)
    ticks = max(0, math.ceil(t / dt - 1e-9))
    g = config.resolved_gamma0()
    conv_p, create_p = g * dt, g * config.a_target * dt
    has_creation = any(op[0] == 1 for seg in segments for op in seg)

    counts = counts_from_bubble(bubble)
    roots = _roots([op for seg in segments for op in seg], counts)
    _ensure_keys(counts, roots)
    rng = config.rng()
    if on_tick is not None:
        on_tick(0, 0.0, counts)
    for i in range(1, ticks + 1):
        for seg in segments:
            _tick(counts, seg, conv_p, create_p, rng, config.count_cap)
            if has_creation:
                _reduce_counts(counts, roots)
            if config.replenish:
                _replenish_counts(counts, roots, config.a_target)
        if on_tick is not None:
            on_tick(i, i * dt, counts)
    counts_to_bubble(counts, bubble)
    return bubble


def evolve(bubble: Bubble, h, t: float, config: EngineConfig,
           on_tick=None) -> Bubble:
    """Compile h and advance the bubble by t in oracle time units."""
    if t < 0:
        raise ConfigError("t must be nonnegative")
    blocks = pauli_decompose(np.asarray(h, dtype=np.complex128))
    lists = [reactions_for_block(b) for b in blocks]
    if config.backend == "wellmixed":
        return evolve_lists(bubble, lists, t, config, on_tick)
    if config.backend == "meanfield":
        return _evolve_meanfield_bubble(bubble, lists, t, config)
    if config.backend == "spatial":
        from . import spatial

        return spatial.evolve_spatial(bubble, lists, t, config, on_tick)
    raise ConfigError(f"unknown backend {config.backend!r}")


# --- mean-field route -------------------------------------------------------

def _mass_action_delta(ops, counts, omega_scale, a_target):
    """Instantaneous d(count)/dt for every per-sign type."""
    rhs = {k: 0.0 for k in counts}
    for kind, src, cat, dst, rate in ops:
        if kind == 0:
            flow = rate * omega_scale / a_target * counts[src] * counts[cat]
            rhs[src] -= flow
        else:
            flow = rate * omega_scale * counts[src]
        rhs[dst] += flow
    return rhs


def meanfield_evolve(initial_counts: dict, rules, omega: float, t: float,
                     replenish: bool = True, a_target: int | None = None,
                     samples: int = 200, substep: float | None = None):
    """Integrate the mass-action ODE system for one reaction list.

    initial_counts maps (part, sign, state) -> count.  With replenish the
    per-type totals are pinned to a_target inside the right-hand side, which
    makes the net-count system linear (sinusoids at angular speed omega for
    the compiled rotation lists).  Returns (times, trajectories) where
    trajectories maps (part, state) -> net-count array.
    """
    ops = _compile_ops(rules)
    roots = _roots(ops, initial_counts)
    counts = dict(initial_counts)
    _ensure_keys(counts, roots)
    if a_target is None:
        a_target = max((counts[(p, 1, s)] + counts[(p, -1, s)]
                        for p, s in roots), default=1)
    max_rate = max((op[4] for op in ops), default=1.0)
    if substep is None:
        substep = TICK_FRACTION / (max(omega, 1e-300) * max(1.0, max_rate)) / 10.0
    steps = max(1, math.ceil(t / substep - 1e-9))
    h = t / steps if steps else substep

    keys = [(p, sg, s) for p, s in roots for sg in (1, -1)]
    index = {k: i for i, k in enumerate(keys)}
    y = np.array([float(counts[k]) for k in keys])

    def pack_rhs(vec):
        local = dict(zip(keys, vec))
        if replenish:
            # pin totals: evaluate flows at counts (A +- net)/2
            for p, s in roots:
                net = local[(p, 1, s)] - local[(p, -1, s)]
                local[(p, 1, s)] = (a_target + net) / 2.0
                local[(p, -1, s)] = (a_target - net) / 2.0
        rhs = _mass_action_delta(ops, local, omega, a_target)
        return np.array([rhs[k] for k in keys])

    sample_every = max(1, steps // max(1, samples))
    times = [0.0]
    frames = [y.copy()]
    for i in range(1, steps + 1):
        k1 = pack_rhs(y)
        k2 = pack_rhs(y + 0.5 * h * k1)
        k3 = pack_rhs(y + 0.5 * h * k2)
        k4 = pack_rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if i % sample_every == 0 or i == steps:
            times.append(i * h)
            frames.append(y.copy())
    frames = np.array(frames)
    traj = {}
    for p, s in roots:
        traj[(p, s)] = frames[:, index[(p, 1, s)]] - frames[:, index[(p, -1, s)]]
    return np.array(times), traj


def _evolve_meanfield_bubble(bubble, lists, t, config) -> Bubble:
    rules = [r for lst in lists for r in lst]
    omega = config.resolved_gamma0() * config.a_target
    counts = counts_from_bubble(bubble)
    _, traj = meanfield_evolve(counts, rules, omega, t,
                               replenish=config.replenish,
                               a_target=config.a_target, samples=1)
    a = config.a_target
    for (part, state), series in traj.items():
        if not isinstance(state, int) or state >= bubble.n_states:
            continue
        net = float(series[-1])
        plus = int(round((a + net) / 2.0))
        bubble.counts[part, 0, state] = plus
        bubble.counts[part, 1, state] = plus - int(round(net))
    return bubble
