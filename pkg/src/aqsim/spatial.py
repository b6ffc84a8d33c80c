"""Ballistic spatial backend.

Quanta fly in straight lines inside a sphere, reflect specularly off the
membrane, and react pairwise on contact.  Collisions change types only,
never trajectories, so the contact-event stream of a run does not depend
on the reactions riding on it.  That independence makes exact rate
calibration possible: a reaction-free pre-pass over the same motion
measures the per-pair contact rate lambda, and each conversion is then
thinned with probability q chosen so expected conversions per tick equal
the wellmixed mass-action value gamma0*dt*rate*[converted][catalyst].

With several blocks the membrane is split into z-bands whose areas are
proportional to the block weights (a sphere's band area depends only on
its z extent).  A quantum re-tags to the band it reflects from, a rule
fires only when its converted quantum carries the rule's block tag, and
one global thinning covers every rule; the Hamiltonian then enters
through the membrane division alone, with the reaction list fixed.

Per-tick randomness is a keyed hash of (seed, tick, ids), so a run is a
pure function of its initial conditions and replays bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import advance_reflect, build_pairs
from .compiler import RULE_CATALYSIS, RULE_CREATION
from .core import Bubble, Gas, apply_reduction
from .engine import EngineConfig
from .errors import ConfigError, EscapedQuantum

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_SALT_CREATE = 1 << 40
_SALT_REPLENISH = 2 << 40
_SALT_PAIR = 3 << 40


def _mix(h: int) -> int:
    h = (h + _GOLDEN) & _M64
    h = ((h ^ (h >> 30)) * _MIX1) & _M64
    h = ((h ^ (h >> 27)) * _MIX2) & _M64
    return h ^ (h >> 31)


def hash_u01(*keys: int) -> float:
    """Deterministic uniform in [0, 1) from integer keys (splitmix64)."""
    h = 0
    for k in keys:
        h = _mix(h ^ (int(k) & _M64))
    return h / 2.0**64


def _hash_base(*keys: int) -> int:
    h = 0
    for k in keys:
        h = _mix(h ^ (int(k) & _M64))
    return h


def _hash_u01_rows(base: int, idx: np.ndarray) -> np.ndarray:
    """Vectorized hash_u01(base, i) over an integer index array."""
    h = np.uint64(base) ^ idx.astype(np.uint64)
    h = h + np.uint64(_GOLDEN)
    h = (h ^ (h >> np.uint64(30))) * np.uint64(_MIX1)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(_MIX2)
    h = h ^ (h >> np.uint64(31))
    return h.astype(np.float64) / 2.0**64


def _ball_points(u1, u2, u3, radius: float) -> np.ndarray:
    """Uniform points in a ball from three uniform arrays."""
    z = 2.0 * u1 - 1.0
    phi = 2.0 * math.pi * u2
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    r = radius * np.cbrt(u3)
    return np.stack([r * s * np.cos(phi), r * s * np.sin(phi), r * z], axis=1)


def _directions(u1, u2, speed: float) -> np.ndarray:
    z = 2.0 * u1 - 1.0
    phi = 2.0 * math.pi * u2
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return speed * np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def populate_gas(bubble: Bubble, config: EngineConfig,
                 rng: np.random.Generator, zone_weights=None) -> Gas:
    """Scatter the bubble's count table into a gas of moving quanta.

    Positions are uniform in the sphere and velocities uniform on the
    speed shell; both come from the seeded generator, so the run is a
    function of its initial conditions.  Block tags are pre-assigned in
    proportion to ``zone_weights`` through a seeded shuffle (reflections
    would deliver the same mix, just later).
    """
    counts = bubble.counts
    total = int(counts.sum())
    part = np.repeat(np.arange(2, dtype=np.int8), 2 * bubble.n_states)
    sgn = np.tile(np.repeat(np.array([1, -1], dtype=np.int8), bubble.n_states), 2)
    state = np.tile(np.arange(bubble.n_states, dtype=np.int32), 4)
    reps = counts.reshape(-1)
    part = np.repeat(part, reps)
    sgn = np.repeat(sgn, reps)
    state = np.repeat(state, reps)

    u = rng.random((total, 3))
    pos = _ball_points(u[:, 0], u[:, 1], u[:, 2], config.bubble_radius)
    w = rng.random((total, 2))
    vel = _directions(w[:, 0], w[:, 1], config.speed)

    block = None
    if zone_weights is not None and len(zone_weights) > 1:
        wts = np.asarray(zone_weights, dtype=np.float64)
        quota = np.cumsum(wts) / wts.sum()
        marks = (np.arange(total, dtype=np.float64) + 0.5) / total
        block = np.searchsorted(quota, marks, side="right").astype(np.int32)
        rng.shuffle(block)

    gas = Gas(bubble.n_states)
    gas.append(pos, vel, part, sgn, state, block=block)
    bubble.gas = gas
    return gas


def calibrate_contact_rate(gas: Gas, config: EngineConfig, dt: float,
                           ticks: int) -> float:
    """Measure new-contact events per unordered pair per tick.

    Runs the same motion and pairing as the live loop, reaction-free, on
    copies of the arrays.  A contact counts once when a mutual pair
    forms and not again while it persists.
    """
    n = len(gas)
    if n < 2 or ticks < 1:
        raise ConfigError("contact calibration needs at least 2 quanta and 1 tick")
    pos = gas.pos.copy()
    vel = gas.vel.copy()
    prev = np.full(n, -1, dtype=np.intp)
    rows = np.arange(n, dtype=np.intp)
    events = 0
    for _ in range(ticks):
        _, _, escaped = advance_reflect(pos, vel, dt, config.bubble_radius)
        if escaped:
            raise EscapedQuantum(f"{escaped} quanta stuck outside the membrane")
        partner = build_pairs(pos, config.r0, config.bubble_radius)
        left = rows[(partner >= 0) & (rows < partner)]
        events += int(np.count_nonzero(partner[left] != prev[left]))
        prev.fill(-1)
        prev[left] = partner[left]
        prev[partner[left]] = left
    lam = events / (ticks * n * (n - 1) / 2.0)
    if lam <= 0.0:
        raise ConfigError(
            "no contacts observed during calibration; increase r0, speed, "
            "or the quanta budget")
    return lam


@dataclass
class _Program:
    """Reaction tables resolved against the measured contact rate."""

    conv: dict  # (converted key, catalyst key) -> [(zone, result key, q, salt)]
    creations: list  # [(trigger key, created key, p, salt)]
    zone_bounds: np.ndarray | None  # z band edges for re-tagging, or None
    zone_weights: list | None


def _type_key(rule_type) -> tuple:
    return (rule_type.part, rule_type.sign, rule_type.state)


def _list_weights(lists) -> list[float]:
    weights = []
    for lst in lists:
        rates = {r.rate for r in lst.rules if r.kind == RULE_CATALYSIS}
        if len(rates) > 1:
            raise ConfigError(
                f"list {lst.scope!r} mixes catalysis rates; the membrane "
                "division needs one weight per list")
        weights.append(rates.pop() if rates else 0.0)
    return weights


def _compile_program(lists, config: EngineConfig, lam: float | None,
                     dt: float) -> _Program:
    g0 = config.resolved_gamma0()
    single = len(lists) == 1
    zone_bounds = None
    zone_weights = None
    q_global = None
    if not single:
        zone_weights = _list_weights(lists)
        total_w = sum(zone_weights)
        if total_w <= 0:
            raise ConfigError("all lists carry zero weight")
        radius = config.bubble_radius
        cum = np.cumsum(zone_weights) / total_w
        zone_bounds = -radius + 2.0 * radius * cum[:-1]
        if lam is not None:
            q_global = total_w * g0 * dt / lam

    conv: dict = {}
    creations: list = []
    salt = 0
    for li, lst in enumerate(lists):
        for rule in lst.rules:
            salt += 1
            if rule.kind == RULE_CATALYSIS:
                if config.spatial_thinning is not None:
                    q = config.spatial_thinning
                elif single:
                    q = rule.rate * g0 * dt / lam
                else:
                    q = q_global
                if q > 1.0:
                    raise ConfigError(
                        f"thinning probability {q:.3f} exceeds 1; increase "
                        "speed, r0, or a_target so contacts outpace the "
                        "requested rate")
                key = (_type_key(rule.converted), _type_key(rule.catalyst))
                conv.setdefault(key, []).append(
                    (-1 if single else li, _type_key(rule.result), q, salt))
            elif rule.kind == RULE_CREATION:
                p = rule.rate * g0 * config.a_target * dt
                if p > 1.0:
                    raise ConfigError(
                        f"creation probability {p:.3f} exceeds 1; reduce dt")
                creations.append(
                    (_type_key(rule.trigger), _type_key(rule.created), p, salt))
            else:
                raise ConfigError(
                    "spatial kinetics handles catalysis and creation rules only")
    return _Program(conv, creations, zone_bounds, zone_weights)


class SpatialRun:
    """Mutable per-run state: gas, contact memory, and tick counter."""

    def __init__(self, bubble: Bubble, lists, config: EngineConfig,
                 dt: float, calibration_ticks: int | None = None) -> None:
        self.bubble = bubble
        self.config = config
        self.dt = dt
        self.seed = config.seed
        rng = config.rng()
        if bubble.gas is None:
            weights = _list_weights(lists) if len(lists) > 1 else None
            populate_gas(bubble, config, rng, zone_weights=weights)
        lam = None
        needs_rate = any(r.kind == RULE_CATALYSIS
                         for lst in lists for r in lst.rules)
        if config.spatial_thinning is None and needs_rate:
            ticks = config.calibration_ticks if calibration_ticks is None \
                else calibration_ticks
            lam = calibrate_contact_rate(bubble.gas, config, dt, ticks)
        self.contact_rate = lam
        self.program = _compile_program(lists, config, lam, dt)
        self.prev_contact: dict[int, int] = {}
        self.tick_index = 0

    def tick(self) -> None:
        gas = self.bubble.gas
        config = self.config
        prog = self.program
        self.tick_index += 1
        tick = self.tick_index

        hit, hit_z, escaped = advance_reflect(gas.pos, gas.vel, self.dt,
                                              config.bubble_radius)
        if escaped:
            raise EscapedQuantum(f"{escaped} quanta stuck outside the membrane")
        if prog.zone_bounds is not None:
            rows = np.flatnonzero(hit)
            if rows.size:
                gas.block[rows] = np.searchsorted(
                    prog.zone_bounds, hit_z[rows]).astype(np.int32)

        partner = build_pairs(gas.pos, config.r0, config.bubble_radius)
        n = len(gas)
        rows = np.arange(n, dtype=np.intp)
        left = rows[(partner >= 0) & (rows < partner)]

        ids = gas.ids
        part = gas.part
        sgn = gas.sign
        state = gas.state
        block = gas.block
        conv = prog.conv
        new_contact: dict[int, int] = {}
        for i in left:
            j = partner[i]
            id_i = int(ids[i])
            id_j = int(ids[j])
            new_contact[id_i] = id_j
            if self.prev_contact.get(id_i) == id_j:
                continue
            for a, b in ((i, j), (j, i)):
                hits = conv.get(
                    ((part[a], sgn[a], state[a]), (part[b], sgn[b], state[b])))
                if not hits:
                    continue
                fired = False
                for zone, result, q, salt in hits:
                    if zone >= 0 and block[a] != zone:
                        continue
                    if hash_u01(self.seed, _SALT_PAIR, tick, id_i, id_j,
                                salt) < q:
                        part[a], sgn[a], state[a] = result
                        fired = True
                        break
                if fired:
                    break
        self.prev_contact = new_contact

        if prog.creations:
            self._run_creations(tick)
            self.bubble.refresh_counts()
            apply_reduction(self.bubble)
        if config.replenish:
            self.bubble.refresh_counts()
            self._replenish_gas(tick)
        self.bubble.refresh_counts()

    def _run_creations(self, tick: int) -> None:
        gas = self.bubble.gas
        for trigger, created, p, salt in self.program.creations:
            rows = np.flatnonzero((gas.part == trigger[0])
                                  & (gas.sign == trigger[1])
                                  & (gas.state == trigger[2]))
            if rows.size == 0:
                continue
            base = _hash_base(self.seed, _SALT_CREATE, tick, salt)
            make = rows[_hash_u01_rows(base, gas.ids[rows]) < p]
            if make.size == 0:
                continue
            k = make.size
            u1 = _hash_u01_rows(_hash_base(base, 1), np.arange(k))
            u2 = _hash_u01_rows(_hash_base(base, 2), np.arange(k))
            vel = _directions(u1, u2, self.config.speed)
            gas.append(gas.pos[make].copy(), vel,
                       np.full(k, created[0], dtype=np.int8),
                       np.full(k, created[1], dtype=np.int8),
                       np.full(k, created[2], dtype=np.int32),
                       block=gas.block[make].copy())

    def _replenish_gas(self, tick: int) -> None:
        """Gas-level twin of core.replenish: pair edits toward a_target."""
        bubble = self.bubble
        gas = bubble.gas
        config = self.config
        totals = bubble.totals()
        zone_weights = self.program.zone_weights
        drop = None
        for p in (0, 1):
            for j in range(bubble.n_states):
                delta = (config.a_target - int(totals[p, j])) // 2
                if delta > 0:
                    base = _hash_base(self.seed, _SALT_REPLENISH, tick, p, j)
                    idx = np.arange(2 * delta)
                    pos = _ball_points(_hash_u01_rows(_hash_base(base, 1), idx),
                                       _hash_u01_rows(_hash_base(base, 2), idx),
                                       _hash_u01_rows(_hash_base(base, 3), idx),
                                       config.bubble_radius)
                    vel = _directions(_hash_u01_rows(_hash_base(base, 4), idx),
                                      _hash_u01_rows(_hash_base(base, 5), idx),
                                      config.speed)
                    sgn = np.empty(2 * delta, dtype=np.int8)
                    sgn[:delta] = 1
                    sgn[delta:] = -1
                    block = None
                    if zone_weights is not None:
                        zmarks = _hash_u01_rows(_hash_base(base, 6), idx)
                        quota = np.cumsum(zone_weights) / sum(zone_weights)
                        block = np.searchsorted(quota, zmarks,
                                                side="right").astype(np.int32)
                    gas.append(pos, vel,
                               np.full(2 * delta, p, dtype=np.int8), sgn,
                               np.full(2 * delta, j, dtype=np.int32),
                               block=block)
                elif delta < 0:
                    plus = np.flatnonzero((gas.part == p) & (gas.state == j)
                                          & (gas.sign == 1))
                    minus = np.flatnonzero((gas.part == p) & (gas.state == j)
                                           & (gas.sign == -1))
                    take = min(-delta, plus.size, minus.size)
                    if take:
                        if drop is None:
                            drop = []
                        drop.append(plus[:take])
                        drop.append(minus[:take])
        if drop:
            gas.remove_rows(np.concatenate(drop))


def step_spatial(bubble: Bubble, rules, config: EngineConfig) -> Bubble:
    """Advance one spatial tick under a single reaction list.

    Each call calibrates from the current gas, so drive longer runs
    through evolve_spatial, which calibrates once.
    """
    if config.backend != "spatial":
        raise ConfigError("step_spatial requires backend='spatial'")
    max_rate = max((r.rate for r in rules.rules), default=1.0)
    dt = config.tick_length(max_rate)
    run = SpatialRun(bubble, [rules], config, dt,
                     calibration_ticks=min(config.calibration_ticks, 50))
    run.tick()
    return bubble


def evolve_spatial(bubble: Bubble, lists, t: float, config: EngineConfig,
                   on_tick=None) -> Bubble:
    """Run the ballistic backend for duration t over compiled lists."""
    rates = [r.rate for lst in lists for r in lst.rules]
    max_rate = max(rates, default=1.0)
    dt = config.tick_length(max_rate)
    ticks = int(math.ceil(t / dt - 1e-9))
    if ticks <= 0:
        return bubble
    run = SpatialRun(bubble, lists, config, dt)
    bubble.refresh_counts()
    if on_tick is not None:
        on_tick(0, 0.0, bubble.counts.copy())
    for i in range(1, ticks + 1):
        run.tick()
        if on_tick is not None:
            on_tick(i, i * dt, bubble.counts.copy())
    return bubble
