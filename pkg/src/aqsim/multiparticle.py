"""Joint systems of coupled bubbles: chains, pair reactions, exchange.

Coupling pairs quanta of touching bubbles through shared idents, one pair
per membrane-cell association; a chain is the resulting n-tuple, one
component quantum per particle.  A chain contributes the product of its
component values to the joint readout, so only the aggregate complex unit
and the basis list matter here, and chain counts are keyed by
(part, sign, basis list).  The well-mixed tick machinery runs on those
keys unchanged; the full N**n vector is never materialized in this module
(the small-instance test oracles build it on their side).

Reaction lists over a one- or two-slot subspace are lifted to chains one
spectator sector at a time: every type keeps its part and sign and has its
basic state embedded into the full list at the slot positions, with the
sector values at the rest.  Converted, catalyst and result of a lifted
rule share the sector, which is the count-level reading of the constraint
that spectator components ride along unchanged.  Per sector this
reproduces the one-particle rotation algebra on aggregate nets exactly,
so the mean field matches -iH on the joint readout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compiler import RULE_CATALYSIS, RULE_CREATION, ReactionRule, \
    pauli_decompose, reactions_for_block
from .core import ALPHA, BETA, Bubble, QuantumType, bubble_from_state, \
    state_from_bubble
from .engine import EngineConfig, _compile_ops, _ensure_keys, \
    _reduce_counts, _replenish_counts, _roots, _segments, _tick
from .errors import AllCountsZero, ConfigError, DimensionMismatch, \
    NoSplit, NoTouchingArea, SpectatorMismatch
from .measurement import pair_collision_pick

__all__ = [
    "Chain", "ChainSupport", "Particle", "JointSystem", "couple_bubbles",
    "joint_from_state", "joint_state_from_chains", "lift_rules",
    "apply_two_particle_list", "evolve_joint", "exchange_bosons",
    "exchange_fermions", "reduced_density_matrix", "decohere_components",
]


def _unit_key(v: complex) -> tuple[int, int]:
    """(part, sign) of a unit of the four-element value group."""
    if v.imag == 0:
        return (ALPHA, 1 if v.real > 0 else -1)
    return (BETA, 1 if v.imag > 0 else -1)


@dataclass(frozen=True)
class Chain:
    """One coupled n-tuple of quanta, one component per particle.

    Adjacent components are linked by a shared ident on the associated
    membrane cells; ``idents`` lists those links in particle order.
    """

    components: tuple[QuantumType, ...]
    idents: tuple[int, ...] = ()

    def __post_init__(self):
        if self.idents and len(self.idents) != len(self.components) - 1:
            raise ConfigError("need one ident per adjacent component pair")

    def basis(self) -> tuple[int, ...]:
        return tuple(t.state for t in self.components)

    def value(self) -> complex:
        out = 1 + 0j
        for t in self.components:
            out *= t.value()
        return out

    def key(self) -> tuple[int, int, tuple[int, ...]]:
        """Aggregate count key (part, sign, basis list)."""
        part, sign = _unit_key(self.value())
        return (part, sign, self.basis())


@dataclass(frozen=True)
class ChainSupport:
    """Basis lists present among the chains, as integer points.

    ``dimension`` is the number of distinct lists, an upper bound on the
    dimension of the subspace the readout can span.  Connectivity of the
    point set under a max-norm threshold drives support-side decoherence.
    """

    lists: frozenset
    dimension: int

    def components(self, eps: float) -> list[frozenset]:
        """Single-linkage clusters with max-norm link distance <= eps."""
        pts = sorted(self.lists)
        parent = list(range(len(pts)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        arr = np.asarray(pts, dtype=np.float64)
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if np.max(np.abs(arr[i] - arr[j])) <= eps:
                    parent[find(i)] = find(j)
        groups: dict[int, list] = {}
        for i, p in enumerate(pts):
            groups.setdefault(find(i), []).append(p)
        return sorted((frozenset(g) for g in groups.values()), key=min)


@dataclass
class Particle:
    """Bookkeeping for one coupled bubble."""

    source: Bubble | None = None
    ident_blocks: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class JointSystem:
    """Sparse chain-count state of n coupled particles."""

    n_particles: int
    n_states: int
    a_target: int
    counts: dict
    particles: list[Particle]
    touches: list[tuple[int, int]]
    identity: str = "distinct"
    next_ident: int = 0
    initial_budget: int = 0
    peak_chains: int = 0

    def copy(self) -> "JointSystem":
        particles = [Particle(p.source, list(p.ident_blocks))
                     for p in self.particles]
        return JointSystem(self.n_particles, self.n_states, self.a_target,
                           dict(self.counts), particles, list(self.touches),
                           self.identity, self.next_ident,
                           self.initial_budget, self.peak_chains)

    def total_chains(self) -> int:
        return sum(self.counts.values())

    def net_amplitudes(self) -> dict:
        """Unnormalized complex net per basis list; zero nets dropped."""
        amp: dict = {}
        for (part, sign, lists), cnt in self.counts.items():
            if cnt:
                unit = 1j if part == BETA else 1.0
                amp[lists] = amp.get(lists, 0j) + cnt * sign * unit
        return {l: a for l, a in amp.items() if a != 0}

    def support(self) -> ChainSupport:
        lists = {l for (p, s, l), c in self.counts.items() if c > 0}
        return ChainSupport(frozenset(lists), len(lists))

    def state(self) -> np.ndarray:
        return joint_state_from_chains(self.counts, self.n_particles,
                                       self.n_states)

    def _note_peak(self) -> None:
        self.peak_chains = max(self.peak_chains, self.total_chains())


def joint_state_from_chains(chains, n: int, N: int) -> np.ndarray:
    """Normalized joint readout over the N**n product basis.

    ``chains`` is an iterable of Chain (repeats allowed) or a mapping from
    Chain or (part, sign, basis list) to a count.  Opposite-sign chains of
    one list cancel, same as annihilation would remove them.
    """
    vec = np.zeros(N ** n, dtype=np.complex128)
    items = chains.items() if hasattr(chains, "items") else \
        ((c, 1) for c in chains)
    for chain, count in items:
        part, sign, lists = chain.key() if isinstance(chain, Chain) else chain
        if len(lists) != n:
            raise DimensionMismatch(f"basis list {lists} is not length {n}")
        idx = int(np.ravel_multi_index(lists, (N,) * n))
        vec[idx] += count * sign * (1j if part == BETA else 1.0)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise AllCountsZero("no net amplitude among the chains")
    return vec / norm


def _load_from_amp(amp: dict, a_target: int) -> dict:
    """Counts realizing a sparse amplitude dict, one padded root per part.

    Mirrors the one-particle loader: nets are round(a_target * component)
    of the normalized amplitude, totals padded to a_target with zero-net
    pairs.  Only listed basis lists get keys.
    """
    norm = math.sqrt(sum(abs(a) ** 2 for a in amp.values()))
    if norm == 0.0:
        raise AllCountsZero("cannot load a zero state")
    counts: dict = {}
    for lists in sorted(amp):
        a = amp[lists] / norm
        if a == 0:
            continue
        for part, comp in ((ALPHA, a.real), (BETA, a.imag)):
            net = int(np.rint(comp * a_target))
            minus = max(0, (a_target - net + 1) // 2)
            plus = net + minus
            if plus < 0:
                plus, minus = 0, -net
            counts[(part, 1, lists)] = plus
            counts[(part, -1, lists)] = minus
    return counts


def _assemble_joint(amp: dict, n_states: int, a_target: int, sources: list,
                    touches: list, identity: str) -> JointSystem:
    particles = [Particle(source=s) for s in sources]
    next_ident = 0
    for a, b in touches:
        block = (next_ident, next_ident + a_target)
        particles[a].ident_blocks.append(block)
        particles[b].ident_blocks.append(block)
        next_ident += a_target
    joint = JointSystem(len(sources), n_states, a_target,
                        _load_from_amp(amp, a_target), particles,
                        list(touches), identity, next_ident)
    joint.initial_budget = joint.total_chains()
    joint._note_peak()
    return joint


def joint_from_state(psi, n_particles: int, n_states: int,
                     a_target: int = 10_000, sources=None,
                     touches=()) -> JointSystem:
    """Joint system loaded from a dense vector or a {basis list: amp} dict."""
    if hasattr(psi, "items"):
        amp = {tuple(l): complex(a) for l, a in psi.items()}
    else:
        psi = np.asarray(psi, dtype=np.complex128).ravel()
        if len(psi) != n_states ** n_particles:
            raise DimensionMismatch(
                f"state has {len(psi)} components, expected "
                f"{n_states}**{n_particles}")
        shape = (n_states,) * n_particles
        amp = {tuple(int(v) for v in np.unravel_index(i, shape)): psi[i]
               for i in np.flatnonzero(psi)}
    if sources is None:
        sources = [None] * n_particles
    return _assemble_joint(amp, n_states, a_target, list(sources),
                           list(touches), "distinct")


def _touching(b1: Bubble | None, b2: Bubble | None) -> bool:
    """Geometric touch test; bubbles without membranes couple freely."""
    m1 = getattr(b1, "membrane", None)
    m2 = getattr(b2, "membrane", None)
    if m1 is None or m2 is None or not len(m1) or not len(m2):
        return True
    from scipy.spatial import cKDTree

    # facing cells of adjacent grains sit half a spacing apart; a one-grain
    # gap puts them at 1.5 spacings
    radius = 0.75 * max(m1.spacing, m2.spacing)
    d, _ = cKDTree(m1.positions()).query(m2.positions(), k=1)
    return bool(np.min(d) <= radius)


def couple_bubbles(first, second: Bubble, config: EngineConfig | None = None,
                   identity: str = "distinct",
                   attach: int | None = None) -> JointSystem:
    """Couple two bubbles, or append a bubble to an existing joint system.

    The fresh coupling consumes a block of idents (one per chain) shared
    by the two coupled particles and loads the product of the operand
    readouts; coupling itself never entangles.  ``attach`` selects which
    existing particle the appended bubble touches (default: the last one).
    Raises NoTouchingArea when both operands carry membranes and no cell
    pair is within reach.
    """
    if config is None:
        config = EngineConfig()
    a = config.a_target
    if isinstance(first, JointSystem):
        joint = first
        if second.n_states != joint.n_states:
            raise DimensionMismatch("coupled bubbles need equal state counts")
        at = joint.n_particles - 1 if attach is None else attach
        if not 0 <= at < joint.n_particles:
            raise ConfigError(f"no particle {at} to attach to")
        if not _touching(joint.particles[at].source, second):
            raise NoTouchingArea("membranes share no touching area")
        base = {l: amp for l, amp in joint.net_amplitudes().items()}
        if not base:
            raise AllCountsZero("joint system has zero net amplitude")
        psi2 = state_from_bubble(second)
        amp = {l + (int(j),): av * psi2[j]
               for l, av in base.items()
               for j in np.flatnonzero(psi2)}
        sources = [p.source for p in joint.particles] + [second]
        touches = list(joint.touches) + [(at, joint.n_particles)]
        out = _assemble_joint(amp, joint.n_states, a, sources, touches,
                              joint.identity)
        out.initial_budget = joint.initial_budget + int(second.counts.sum())
        return out
    b1: Bubble = first
    if b1.n_states != second.n_states:
        raise DimensionMismatch("coupled bubbles need equal state counts")
    if not _touching(b1, second):
        raise NoTouchingArea("membranes share no touching area")
    psi1, psi2 = state_from_bubble(b1), state_from_bubble(second)
    amp = {(int(j), int(k)): psi1[j] * psi2[k]
           for j in np.flatnonzero(psi1) for k in np.flatnonzero(psi2)}
    out = _assemble_joint(amp, b1.n_states, a, [b1, second], [(0, 1)],
                          identity)
    out.initial_budget = int(b1.counts.sum() + second.counts.sum())
    return out


# --- reaction lists over chains ----------------------------------------------

def _chain_rule_slots(rule: ReactionRule, n: int) -> None:
    """Validate a chain-level rule against the spectator constraint."""
    tuples = [t.state for t in rule.reagents + rule.products]
    for states in tuples:
        if not isinstance(states, tuple) or len(states) != n:
            raise DimensionMismatch(
                f"chain rule state {states} is not a length-{n} list")
    moved = {k for k in range(n)
             if len({states[k] for states in tuples}) > 1}
    if len(moved) > 2:
        raise SpectatorMismatch(
            f"rule touches particles {sorted(moved)}; spectator components "
            "must keep their basic states")


def lift_rules(rules, slots, sectors, n: int, N: int) -> list[ReactionRule]:
    """Embed slot-space rules into chain space, one copy per sector.

    Rules whose states are already basis lists are validated and passed
    through.  Integer-state rules are read over the flattened slot
    subspace (first slot most significant) and every type keeps its part
    and sign, so the per-sector aggregate dynamics is the slot-space
    dynamics verbatim.
    """
    slots = tuple(slots)
    if not 1 <= len(slots) <= 2 or len(set(slots)) != len(slots):
        raise ConfigError(f"need one or two distinct slots, got {slots}")
    if any(not 0 <= s < n for s in slots):
        raise ConfigError(f"slots {slots} out of range for {n} particles")
    spect = [k for k in range(n) if k not in slots]
    shape = (N,) * len(slots)

    def place(m: int, sector: tuple) -> tuple:
        if not 0 <= m < N ** len(slots):
            raise ConfigError(f"slot state {m} out of range")
        lists = [0] * n
        for pos, v in zip(spect, sector):
            lists[pos] = int(v)
        for pos, v in zip(slots, np.unravel_index(m, shape)):
            lists[pos] = int(v)
        return tuple(lists)

    def lifted_type(t: QuantumType, sector: tuple) -> QuantumType:
        return QuantumType(t.part, t.sign, place(t.state, sector))

    out: list[ReactionRule] = []
    for rule in rules:
        if isinstance(rule.reagents[0].state, tuple):
            _chain_rule_slots(rule, n)
            out.append(rule)
            continue
        for sector in sectors:
            out.append(ReactionRule(
                rule.kind,
                tuple(lifted_type(t, sector) for t in rule.reagents),
                tuple(lifted_type(t, sector) for t in rule.products),
                rule.rate, rule.inherit))
    return out


def _sectors(counts: dict, spect: list[int]) -> list[tuple]:
    found = {tuple(lists[k] for k in spect)
             for (p, s, lists), c in counts.items() if c > 0}
    return sorted(found)


def _run_joint(joint: JointSystem, rule_lists, t: float,
               config: EngineConfig, on_tick=None) -> JointSystem:
    """Well-mixed tick loop on the chain counts; mirrors evolve_lists."""
    segments = _segments(rule_lists, config.schedule_mode)
    max_rate = max((op[4] for seg in segments for op in seg), default=1.0)
    dt = config.tick_length(max_rate)
    ticks = max(0, math.ceil(t / dt - 1e-9))
    g = config.resolved_gamma0()
    conv_p, create_p = g * dt, g * config.a_target * dt
    has_creation = any(op[0] == 1 for seg in segments for op in seg)

    counts = joint.counts
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
        joint._note_peak()
        if on_tick is not None:
            on_tick(i, i * dt, counts)
    return joint


def apply_two_particle_list(joint: JointSystem, rules,
                            config: EngineConfig | None = None,
                            t: float = 1.0, slots=(0, 1),
                            on_tick=None) -> JointSystem:
    """Advance the chain counts by t under one slot-space reaction list.

    Raises SpectatorMismatch for chain-level rules that move more than two
    particles or touch spectator basic states.
    """
    if config is None:
        config = EngineConfig()
    spect = [k for k in range(joint.n_particles) if k not in tuple(slots)]
    sectors = _sectors(joint.counts, spect)
    lifted = lift_rules(rules, slots, sectors, joint.n_particles,
                        joint.n_states)
    return _run_joint(joint, [lifted], t, config, on_tick)


def evolve_joint(joint: JointSystem, h, t: float,
                 config: EngineConfig | None = None, slots=(0, 1),
                 on_tick=None) -> JointSystem:
    """Compile h over the slot subspace and advance the joint system."""
    if t < 0:
        raise ConfigError("t must be nonnegative")
    if config is None:
        config = EngineConfig()
    slots = tuple(slots)
    h = np.asarray(h, dtype=np.complex128)
    dim = joint.n_states ** len(slots)
    if h.shape != (dim, dim):
        raise DimensionMismatch(
            f"slot Hamiltonian must be {dim}x{dim} for slots {slots}")
    spect = [k for k in range(joint.n_particles) if k not in slots]
    sectors = _sectors(joint.counts, spect)
    lifted = [lift_rules(reactions_for_block(b), slots, sectors,
                         joint.n_particles, joint.n_states)
              for b in pauli_decompose(h)]
    return _run_joint(joint, lifted, t, config, on_tick)


# --- identical particles ------------------------------------------------------

def _swap(lists: tuple, a: int, b: int) -> tuple:
    out = list(lists)
    out[a], out[b] = out[b], out[a]
    return tuple(out)


def _swap_defect(amp: dict, links, parity: int, scale: float) -> float:
    """Worst-link norm of (1 - parity*SWAP) on the net amplitudes / scale."""
    worst = 0.0
    for a, b in links:
        sq = 0.0
        for lists in set(amp) | {_swap(l, a, b) for l in amp}:
            v = amp.get(lists, 0j) - parity * amp.get(_swap(lists, a, b), 0j)
            sq += abs(v) ** 2
        worst = max(worst, math.sqrt(sq) / scale)
    return worst


def _exchange(joint: JointSystem, config: EngineConfig, links,
              flip_sign: bool, max_ticks: int, check_every: int
              ) -> JointSystem:
    """Run per-link state swaps until the swap defect stops improving.

    Each tick every chain swaps its two linked components with probability
    gamma0 * a_target * dt, with a sign flip for fermions; flows conserve
    the per-list balance exactly, so no replenishment runs.  Convergence
    is declared after 10 checkpoints without a new best defect, measured
    against the fixed entry norm so a decaying state keeps registering
    progress.
    """
    if joint.n_particles < 2:
        return joint
    links = [tuple(l) for l in (links if links is not None else joint.touches)]
    if not links:
        raise ConfigError("no touch links to exchange across")
    q = config.resolved_gamma0() * config.a_target * config.tick_length()
    rng = config.rng()
    counts = joint.counts
    parity = -1 if flip_sign else 1
    scale = math.sqrt(sum(abs(a) ** 2
                          for a in joint.net_amplitudes().values()))
    if scale == 0.0:
        return joint
    best, stale = math.inf, 0
    for tick in range(1, max_ticks + 1):
        moves = []
        for a, b in links:
            for key, cnt in list(counts.items()):
                if cnt <= 0:
                    continue
                part, sign, lists = key
                swapped = _swap(lists, a, b)
                if swapped == lists and not flip_sign:
                    continue
                k = int(rng.binomial(cnt, q))
                if k:
                    dst = (part, -sign if flip_sign else sign, swapped)
                    moves.append((key, dst, k))
        taken: dict = {}
        for src, dst, k in moves:
            k = min(k, counts[src] - taken.get(src, 0))
            if k <= 0:
                continue
            taken[src] = taken.get(src, 0) + k
            counts[dst] = counts.get(dst, 0) + k
        for src, k in taken.items():
            counts[src] -= k
        if flip_sign:
            roots = sorted({(p, l) for (p, s, l) in counts},
                           key=lambda r: (r[0], str(r[1])))
            _ensure_keys(counts, roots)
            _reduce_counts(counts, roots)
        joint._note_peak()
        if tick % check_every == 0:
            d = _swap_defect(joint.net_amplitudes(), links, parity, scale)
            if d < best - 1e-12:
                best, stale = d, 0
            else:
                stale += 1
            if stale >= 10:
                break
    return joint


def exchange_bosons(joint: JointSystem, config: EngineConfig | None = None,
                    links=None, max_ticks: int = 40_000,
                    check_every: int = 25) -> JointSystem:
    """Mix identical bosons until the readout is swap-symmetric."""
    if config is None:
        config = EngineConfig()
    if joint.identity == "fermion":
        raise ConfigError("particles are flagged fermions")
    joint.identity = "boson"
    return _exchange(joint, config, links, False, max_ticks, check_every)


def exchange_fermions(joint: JointSystem, config: EngineConfig | None = None,
                      links=None, max_ticks: int = 40_000,
                      check_every: int = 25) -> JointSystem:
    """Mix identical fermions; swaps flip one sign, so equal-state chains
    cancel and the readout converges onto the antisymmetric part."""
    if config is None:
        config = EngineConfig()
    if joint.identity == "boson":
        raise ConfigError("particles are flagged bosons")
    joint.identity = "fermion"
    return _exchange(joint, config, links, True, max_ticks, check_every)


# --- reduced states and decoherence ------------------------------------------

def _net_amp_of(chains, n: int, N: int) -> dict:
    if isinstance(chains, JointSystem):
        return chains.net_amplitudes()
    amp: dict = {}
    items = chains.items() if hasattr(chains, "items") else \
        ((c, 1) for c in chains)
    for chain, count in items:
        part, sign, lists = chain.key() if isinstance(chain, Chain) else chain
        unit = 1j if part == BETA else 1.0
        amp[lists] = amp.get(lists, 0j) + count * sign * unit
    return {l: a for l, a in amp.items() if a != 0}


def _reduced_rho(amp: dict, n: int, N: int, keep: tuple) -> np.ndarray:
    """Gram matrix over the kept positions, grouped by the other ones.

    Each spectator assignment contributes one outer product, so the result
    is Hermitian and positive semidefinite by construction.
    """
    dim = N ** len(keep)
    shape = (N,) * len(keep)
    groups: dict[tuple, np.ndarray] = {}
    for lists, a in amp.items():
        rest = tuple(v for k, v in enumerate(lists) if k not in keep)
        sub = tuple(lists[k] for k in keep)
        vec = groups.setdefault(rest, np.zeros(dim, dtype=np.complex128))
        vec[int(np.ravel_multi_index(sub, shape))] += a
    rho = np.zeros((dim, dim), dtype=np.complex128)
    for vec in groups.values():
        rho += np.outer(vec, vec.conj())
    trace = rho.trace().real
    if trace == 0.0:
        raise AllCountsZero("no net amplitude to reduce")
    return rho / trace


def reduced_density_matrix(chains, j: int, n: int | None = None,
                           N: int | None = None) -> np.ndarray:
    """Reduced state of particle j, computed on the sparse chain support."""
    if isinstance(chains, JointSystem):
        n, N = chains.n_particles, chains.n_states
    if n is None or N is None:
        raise ConfigError("need n and N for a raw chain collection")
    if not 0 <= j < n:
        raise ConfigError(f"no particle {j} in a {n}-particle system")
    return _reduced_rho(_net_amp_of(chains, n, N), n, N, (j,))


def _canonical_phase(psi: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(psi)))
    ph = psi[k] / abs(psi[k])
    return psi * ph.conjugate()


def _leading_state(amp: dict, n: int, N: int, keep: tuple) -> np.ndarray:
    rho = _reduced_rho(amp, n, N, keep)
    _, vecs = np.linalg.eigh(rho)
    return _canonical_phase(vecs[:, -1])


def _touch_components(n: int, touches) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in touches:
        adj[a].append(b)
        adj[b].append(a)
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        comps.append(sorted(comp))
    return comps


def decohere_components(joint: JointSystem,
                        config: EngineConfig | None = None,
                        mode: str = "bubbles",
                        eps1: float | None = None) -> list:
    """Split a disintegrated joint system into independent subsystems.

    ``bubbles`` mode cuts along the membrane-touch graph: every connected
    component becomes its own system, rebuilt from the leading eigenvector
    of its reduced state, with idents decoupled across components.
    ``support`` mode cuts the basis-list support into max-norm clusters at
    threshold eps1 (default 2/a_target, so distinct lists split), picks
    one cluster through the same pair-collision slot the measurement
    pipeline uses (completion odds are the cluster weights), and rebuilds
    every particle from its reduced state.  Raises NoSplit when there is
    nothing to cut.
    """
    if config is None:
        config = EngineConfig()
    n, N = joint.n_particles, joint.n_states
    amp = joint.net_amplitudes()
    if not amp:
        raise AllCountsZero("joint system has zero net amplitude")

    if mode == "bubbles":
        comps = _touch_components(n, joint.touches)
        if len(comps) == 1:
            raise NoSplit("touch graph is connected")
        out = []
        for comp in comps:
            keep = tuple(comp)
            psi = _leading_state(amp, n, N, keep)
            if len(keep) == 1:
                out.append(bubble_from_state(psi, joint.a_target))
            else:
                relabel = {old: new for new, old in enumerate(keep)}
                touches = [(relabel[a], relabel[b]) for a, b in joint.touches
                           if a in relabel and b in relabel]
                sources = [joint.particles[k].source for k in keep]
                shape = (N,) * len(keep)
                sub = {tuple(int(v) for v in np.unravel_index(i, shape)):
                       psi[i] for i in np.flatnonzero(psi)}
                out.append(_assemble_joint(sub, N, joint.a_target, sources,
                                           touches, joint.identity))
        return out

    if mode == "support":
        if eps1 is None:
            eps1 = 2.0 / joint.a_target
        live = ChainSupport(frozenset(amp), len(amp))
        clusters = live.components(eps1)
        if len(clusters) == 1:
            raise NoSplit("basis-list support is connected")
        pool = [int(np.rint(math.sqrt(sum(abs(amp[l]) ** 2 for l in cl))))
                for cl in clusters]
        types = [QuantumType(ALPHA, 1, c) for c in range(len(clusters))]
        idx, _, _ = pair_collision_pick(pool, types, config.rng(),
                                        config.measure_tick_cap)
        chosen = clusters[idx]
        kept = {l: a for l, a in amp.items() if l in chosen}
        return [bubble_from_state(_leading_state(kept, n, N, (j,)),
                                  joint.a_target) for j in range(n)]

    raise ConfigError(f"unknown decoherence mode {mode!r}")
