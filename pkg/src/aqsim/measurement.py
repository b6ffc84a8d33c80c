"""Measurement pipeline: color phase, reduction, arrival automaton, rebuild.

Outcome statistics come from the two-slot virtual state fed arrivals drawn
from the surviving counts.  Arrivals happen as pair collision events: two
quanta drawn without replacement, each proportionally to the live type
counts.  An equal-type pair makes the state real (a basic state is exactly
a collision of two equal-type quanta); an unequal pair scatters and leaves
the slot empty.  The per-event law N(N-1)/sum is the quadratic weight up
to O(1/total).  A slot that instead kept its occupant across events would
absorb with law p^2/(1+p) in the arrival fractions p, visibly biased
toward the majority type, so occupant persistence is deliberately scoped
to one event.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (Bubble, QuantumType, VirtualState, apply_reduction,
                   probability_weights)
from .engine import EngineConfig
from .errors import ConfigError, InvalidOutcome, Timeout

__all__ = [
    "MeasurementRecord", "measure", "virtual_state_step", "detect_split",
    "rebuild_after_measurement", "color_phase", "pair_collision_pick",
]


@dataclass
class MeasurementRecord:
    """Outcome plus the full arrival history that produced it."""

    outcome: int
    arrivals: list[QuantumType] = field(default_factory=list)
    ticks_to_completion: int = 0


def virtual_state_step(vs: VirtualState, arrival: QuantumType) -> VirtualState:
    """Feed one arrival through the three-rule automaton.

    An empty slot captures the arrival, a matching second arrival makes the
    state real, a mismatch displaces the occupant (who leaves on the
    arrival's trajectory; at count level that just returns it to the pool).
    """
    vs.arrive(arrival)
    return vs


def color_phase(bubble: Bubble) -> None:
    """Spread the measurement color to every membrane cell and quantum.

    Chaotic mixing colors every quantum in bounded time, so the phase is
    applied at its fixed point rather than simulated collision by collision.
    """
    if bubble.membrane is not None:
        for cell in bubble.membrane.cells:
            cell.color = 1
    if bubble.gas is not None:
        bubble.gas.color[:] = 1


def _place_virtual_state(bubble: Bubble, config: EngineConfig,
                         rng: np.random.Generator) -> VirtualState:
    vs = VirtualState()
    vs.cell_id = None
    if bubble.membrane is not None and bubble.membrane.cells:
        if config.vs_placement == "contact":
            vs.cell_id = int(rng.integers(len(bubble.membrane.cells)))
        else:
            vs.cell_id = min(c.cid for c in bubble.membrane.cells)
    bubble.virtual_state = vs
    return vs


def measure(bubble: Bubble, config: EngineConfig | None = None
            ) -> tuple[MeasurementRecord, Bubble]:
    """Run one full measurement and rebuild the bubble around the outcome.

    Mutates ``bubble`` in place (the returned bubble is the same object).
    Raises Timeout when the arrival pool runs dry or the tick cap passes
    without completion; both signal too few quanta.
    """
    if config is None:
        config = EngineConfig()
    probability_weights(bubble)
    color_phase(bubble)
    apply_reduction(bubble)

    net = bubble.net()
    types: list[QuantumType] = []
    counts: list[int] = []
    for part in (0, 1):
        for j in range(bubble.n_states):
            n = int(net[part, j])
            if n != 0:
                types.append(QuantumType(part, 1 if n > 0 else -1, j))
                counts.append(abs(n))
    pool = np.asarray(counts, dtype=np.int64)

    rng = config.rng()
    vs = _place_virtual_state(bubble, config, rng)
    idx, arrivals, ticks = pair_collision_pick(pool, types, rng,
                                               config.measure_tick_cap, vs)
    outcome = types[idx].state
    record = MeasurementRecord(outcome, arrivals, ticks)
    return record, rebuild_after_measurement(bubble, outcome)


def pair_collision_pick(pool, types, rng: np.random.Generator, tick_cap: int,
                        vs: VirtualState | None = None
                        ) -> tuple[int, list[QuantumType], int]:
    """Pair-collision events against one slot until a completion.

    Each event draws two quanta without replacement, proportionally to
    ``pool``; an equal pair completes and its entry wins, an unequal pair
    scatters back.  Returns (winning index, arrivals, ticks).  Raises
    Timeout on a dry pool or once ``tick_cap`` passes.
    """
    pool = np.asarray(pool, dtype=np.int64).copy()
    if vs is None:
        vs = VirtualState()
    arrivals: list[QuantumType] = []
    ticks = 0

    def draw() -> int:
        r = int(rng.integers(int(pool.sum())))
        return int(np.searchsorted(np.cumsum(pool), r, side="right"))

    while ticks < tick_cap:
        if int(pool.sum()) < 2:
            raise Timeout("fewer than two quanta left for a pair collision")
        first = draw()
        pool[first] -= 1
        second = draw()
        ticks += 2
        arrivals.append(types[first])
        arrivals.append(types[second])
        vs.arrive(types[first])
        _, completed = vs.arrive(types[second])
        if completed:
            return first, arrivals, ticks
        pool[first] += 1
        vs.clear()
    raise Timeout(f"no completion within {tick_cap} arrivals")


def detect_split(bubble: Bubble, radius: float | None = None) -> list[list[int]]:
    """Connected components of the membrane cell graph, as cid lists.

    Cells are adjacent when closer than the membrane's adjacency radius.
    Components and their members come out sorted by cid.
    """
    mem = bubble.membrane
    if mem is None:
        raise ConfigError("bubble has no membrane")
    n = len(mem.cells)
    if n == 0:
        return []
    if radius is None:
        radius = mem.adjacency_radius
    from scipy.spatial import cKDTree

    tree = cKDTree(mem.positions())
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in tree.query_pairs(radius):
        adj[a].append(b)
        adj[b].append(a)
    seen = np.zeros(n, dtype=bool)
    components: list[list[int]] = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        components.append(sorted(mem.cells[i].cid for i in comp))
    return components


def _interior_component(bubble: Bubble, grain: int) -> np.ndarray:
    """Grains reachable from ``grain`` through face-adjacent interior grains."""
    from .membrane import _neighbors

    spacing = bubble.membrane.spacing if bubble.membrane is not None else 1.0
    neighbors = _neighbors(bubble, spacing)
    keep = np.zeros(bubble.n_states, dtype=bool)
    stack = [grain]
    keep[grain] = True
    while stack:
        v = stack.pop()
        for w in neighbors[v]:
            if bubble.interior[w] and not keep[w]:
                keep[w] = True
                stack.append(w)
    return keep


def rebuild_after_measurement(bubble: Bubble, outcome: int) -> Bubble:
    """Collapse the bubble onto basic state ``outcome``.

    Quanta of every other state are eliminated; if the bubble has a lattice,
    only the interior component containing the outcome grain survives and
    the membrane is rebuilt around it.  Colors and the virtual state are
    cleared (assumption: the color mark does not outlive the measurement).
    """
    if not 0 <= outcome < bubble.n_states:
        raise InvalidOutcome(f"no basic state {outcome}")
    if probability_weights(bubble)[outcome] == 0.0:
        raise InvalidOutcome(f"outcome {outcome} has zero weight")
    mask = np.zeros(bubble.n_states, dtype=bool)
    mask[outcome] = True
    bubble.counts[:, :, ~mask] = 0
    if bubble.gas is not None:
        rows = np.flatnonzero(bubble.gas.state != outcome)
        if rows.size:
            bubble.gas.remove_rows(rows)
        bubble.gas.color[:] = 0
        bubble.refresh_counts()
    if bubble.interior is not None and bubble.site_coords is not None:
        if not bubble.interior[outcome]:
            raise InvalidOutcome(f"grain {outcome} is outside the membrane")
        bubble.interior &= _interior_component(bubble, outcome)
        if bubble.membrane is not None:
            from .membrane import MembraneConfig, build_membrane, refresh_meters

            cfg = MembraneConfig(spacing=bubble.membrane.spacing)
            bubble.membrane = build_membrane(bubble, cfg)
            refresh_meters(bubble)
    elif bubble.membrane is not None:
        for cell in bubble.membrane.cells:
            cell.color = 0
    bubble.virtual_state = None
    return bubble
