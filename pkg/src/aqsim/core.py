"""Amplitude-quanta data model.

Amplitudes are represented by countable carriers ("quanta"), each holding one
grain of signed real or imaginary amplitude for one basic state.  A bubble is
the reservoir of such quanta for a single particle; its readout is the complex
state vector assembled from net counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AllCountsZero, AlreadyReal, DimensionMismatch

ALPHA = 0  # carries real amplitude
BETA = 1  # carries imaginary amplitude

_PART_LABEL = "ab"
_SIGN_LABEL = {1: "+", -1: "-"}


@dataclass(frozen=True)
class QuantumType:
    """Type of one amplitude quantum.

    ``state`` is a basic-state index for one-particle bubbles or a tuple of
    indices for joint (chain) systems.  ``block``, ``color`` and ``ident`` are
    the fixed auxiliary options: Hamiltonian block tag, measurement mark, and
    identification number.
    """

    part: int
    sign: int
    state: int | tuple
    block: tuple | None = None
    color: int = 0
    ident: int | None = None

    def label(self) -> str:
        return f"{_PART_LABEL[self.part]}{_SIGN_LABEL[self.sign]}{self.state}"

    def opposite(self) -> "QuantumType":
        """Same type with flipped sign (the annihilation partner)."""
        return QuantumType(self.part, -self.sign, self.state, self.block,
                           self.color, self.ident)

    def value(self) -> complex:
        """Grain value in units of g: +-1 for real, +-i for imaginary."""
        unit = 1.0 if self.part == ALPHA else 1.0j
        return self.sign * unit


@dataclass
class AmplitudeQuantum:
    """One concrete quantum: a type plus simulation state."""

    qid: int
    kind: QuantumType
    position: np.ndarray | None = None
    velocity: np.ndarray | None = None


@dataclass
class MembraneCell:
    """Pointwise membrane cell.

    ``retreat_site`` is the interior grain the cell falls back to when the
    membrane retracts; ``meter`` is the cell's per-part amplitude meter for
    that grain (net real count, net imaginary count).
    """

    cid: int
    position: np.ndarray
    retreat_site: int | None = None
    division: int = -1
    color: int = 0
    ident: int | None = None
    meter: tuple[float, float] = (0.0, 0.0)


class VirtualState:
    """Two-slot automaton that turns arrival order into a measured outcome.

    Arrivals follow three rules: an empty state captures the arrival; a
    matching second arrival completes the state (it becomes real); a
    mismatched arrival displaces the occupant and takes its place.
    """

    def __init__(self) -> None:
        self.slots: list[QuantumType] = []
        self.real = False

    @property
    def status(self) -> str:
        if self.real:
            return "real"
        return "empty" if not self.slots else "half"

    def outcome_type(self) -> QuantumType:
        if not self.real:
            raise AlreadyReal("virtual state has not completed")
        return self.slots[0]

    def clear(self) -> QuantumType | None:
        """Empty the slot between collision events; returns the occupant."""
        if self.real:
            raise AlreadyReal("cannot clear a real state")
        occupant = self.slots[0] if self.slots else None
        self.slots = []
        return occupant

    def arrive(self, kind: QuantumType) -> tuple[QuantumType | None, bool]:
        """Process one arrival.

        Returns ``(released, completed)``: the displaced occupant if any, and
        whether this arrival made the state real.  Raises AlreadyReal if the
        state already completed.
        """
        if self.real:
            raise AlreadyReal("arrival after completion")
        if not self.slots:
            self.slots = [kind]
            return None, False
        occupant = self.slots[0]
        if kind == occupant:
            self.slots = [occupant, kind]
            self.real = True
            return None, True
        self.slots = [kind]
        return occupant, False


class Gas:
    """Struct-of-arrays store for the quanta of a spatial bubble.

    Rows are kept sorted by id; every mutation preserves that order so all
    derived iteration is canonical.
    """

    def __init__(self, n_states: int) -> None:
        self.n_states = n_states
        self.ids = np.empty(0, dtype=np.int64)
        self.pos = np.empty((0, 3), dtype=np.float64)
        self.vel = np.empty((0, 3), dtype=np.float64)
        self.part = np.empty(0, dtype=np.int8)
        self.sign = np.empty(0, dtype=np.int8)
        self.state = np.empty(0, dtype=np.int32)
        self.block = np.empty(0, dtype=np.int32)  # -1 when untagged
        self.color = np.empty(0, dtype=np.int8)
        self.ident = np.empty(0, dtype=np.int64)  # -1 when unset
        self.next_id = 0

    def __len__(self) -> int:
        return len(self.ids)

    def append(self, pos, vel, part, sign, state, block=None, color=None,
               ident=None) -> np.ndarray:
        """Append quanta with fresh increasing ids; returns the new ids."""
        n = len(pos)
        new_ids = np.arange(self.next_id, self.next_id + n, dtype=np.int64)
        self.next_id += n
        self.ids = np.concatenate([self.ids, new_ids])
        self.pos = np.concatenate([self.pos, np.asarray(pos, dtype=np.float64)])
        self.vel = np.concatenate([self.vel, np.asarray(vel, dtype=np.float64)])
        self.part = np.concatenate([self.part, np.asarray(part, dtype=np.int8)])
        self.sign = np.concatenate([self.sign, np.asarray(sign, dtype=np.int8)])
        self.state = np.concatenate([self.state, np.asarray(state, dtype=np.int32)])
        blk = np.full(n, -1, dtype=np.int32) if block is None else np.asarray(block, dtype=np.int32)
        col = np.zeros(n, dtype=np.int8) if color is None else np.asarray(color, dtype=np.int8)
        idn = np.full(n, -1, dtype=np.int64) if ident is None else np.asarray(ident, dtype=np.int64)
        self.block = np.concatenate([self.block, blk])
        self.color = np.concatenate([self.color, col])
        self.ident = np.concatenate([self.ident, idn])
        return new_ids

    def remove_rows(self, rows: np.ndarray) -> None:
        keep = np.ones(len(self.ids), dtype=bool)
        keep[rows] = False
        for name in ("ids", "pos", "vel", "part", "sign", "state", "block",
                     "color", "ident"):
            setattr(self, name, getattr(self, name)[keep])

    def counts(self) -> np.ndarray:
        """Per-type counts, shape (2 parts, 2 signs, n_states); sign 0 is +."""
        out = np.zeros((2, 2, self.n_states), dtype=np.int64)
        sign_idx = (self.sign < 0).astype(np.int64)
        np.add.at(out, (self.part.astype(np.int64), sign_idx,
                        self.state.astype(np.int64)), 1)
        return out

    def quantum(self, row: int) -> AmplitudeQuantum:
        kind = QuantumType(
            int(self.part[row]), int(self.sign[row]), int(self.state[row]),
            block=None if self.block[row] < 0 else (int(self.block[row]),),
            color=int(self.color[row]),
            ident=None if self.ident[row] < 0 else int(self.ident[row]),
        )
        return AmplitudeQuantum(int(self.ids[row]), kind,
                                self.pos[row].copy(), self.vel[row].copy())


@dataclass
class Bubble:
    """Reservoir of amplitude quanta for one particle.

    ``counts[part, sign_idx, state]`` (sign_idx 0 for +, 1 for -) is the
    source of truth for readout; a spatial gas, membrane and virtual state are
    attached when a backend needs them.  ``site_coords`` embeds basic states in
    space for membrane dynamics; ``interior`` flags which sites are inside the
    membrane.
    """

    n_states: int
    counts: np.ndarray
    grain: float
    gas: Gas | None = None
    membrane: object | None = None
    virtual_state: VirtualState | None = None
    site_coords: np.ndarray | None = None
    interior: np.ndarray | None = None

    def copy(self) -> "Bubble":
        return Bubble(self.n_states, self.counts.copy(), self.grain,
                      site_coords=None if self.site_coords is None else self.site_coords.copy(),
                      interior=None if self.interior is None else self.interior.copy())

    def refresh_counts(self) -> None:
        if self.gas is not None:
            self.counts = self.gas.counts()

    def net(self) -> np.ndarray:
        """Signed net counts, shape (2, n_states)."""
        return self.counts[:, 0, :] - self.counts[:, 1, :]

    def totals(self) -> np.ndarray:
        """Per-type totals {x_j}, shape (2, n_states)."""
        return self.counts[:, 0, :] + self.counts[:, 1, :]


def bubble_from_state(psi, a_target: int, grain: float | None = None) -> Bubble:
    """Load a bubble so its readout reproduces ``psi``.

    Net counts are ``round(a_target * component)`` per part; each per-type
    total is then padded with (+,-) pairs up to ``a_target``.
    """
    psi = np.asarray(psi, dtype=np.complex128)
    if psi.ndim != 1:
        raise DimensionMismatch("state vector must be one-dimensional")
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise AllCountsZero("cannot load a zero state")
    psi = psi / norm
    n = len(psi)
    nets = np.rint(np.stack([psi.real, psi.imag]) * a_target).astype(np.int64)
    counts = np.zeros((2, 2, n), dtype=np.int64)
    for part in (ALPHA, BETA):
        for j in range(n):
            net = int(nets[part, j])
            minus = max(0, (a_target - net + 1) // 2)
            plus = net + minus
            if plus < 0:
                plus, minus = 0, -net
            counts[part, 0, j] = plus
            counts[part, 1, j] = minus
    g = (1.0 / a_target) if grain is None else grain
    return Bubble(n, counts, g)


def state_from_bubble(bubble: Bubble) -> np.ndarray:
    """Normalized complex readout: component j is ([a_j] + i[b_j]) scaled."""
    net = bubble.net().astype(np.float64)
    psi = net[ALPHA] + 1j * net[BETA]
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise AllCountsZero("bubble has zero net amplitude everywhere")
    return psi / norm


def probability_weights(bubble: Bubble) -> np.ndarray:
    """Outcome weights p_j = ([a_j]^2 + [b_j]^2) / sum over all types."""
    net = bubble.net().astype(np.float64)
    sq = net[ALPHA] ** 2 + net[BETA] ** 2
    total = sq.sum()
    if total == 0:
        raise AllCountsZero("bubble has zero net amplitude everywhere")
    return sq / total


def apply_reduction(bubble: Bubble) -> np.ndarray:
    """Annihilate every (+,-) pair of equal types; returns pairs removed.

    This is the completed result of all possible annihilations: per type the
    surviving count is |net| with a single sign.  Net counts are unchanged.
    When a gas is attached the removed quanta are the lowest-id ones of each
    sign, which keeps the outcome canonical.
    """
    removed = np.minimum(bubble.counts[:, 0, :], bubble.counts[:, 1, :])
    bubble.counts[:, 0, :] -= removed
    bubble.counts[:, 1, :] -= removed
    if bubble.gas is not None and removed.sum() > 0:
        gas = bubble.gas
        drop = np.zeros(len(gas), dtype=bool)
        for part in (ALPHA, BETA):
            for j in range(bubble.n_states):
                m = int(removed[part, j])
                if m == 0:
                    continue
                sel = (gas.part == part) & (gas.state == j)
                for sgn in (1, -1):
                    rows = np.flatnonzero(sel & (gas.sign == sgn))
                    drop[rows[:m]] = True
        gas.remove_rows(np.flatnonzero(drop))
    return removed


def replenish(bubble: Bubble, a_target: int) -> np.ndarray:
    """Insert or delete (+,-) pairs until every per-type total is a_target.

    Totals land within one quantum of the target (a conversion can leave an
    odd total, and pair edits move totals by two).  Net counts never change.
    Returns the signed pair adjustment per (part, state).
    """
    totals = bubble.totals()
    delta = (a_target - totals) // 2
    over = totals - a_target
    shrink = np.where(over > 0, over // 2, 0)
    cap = np.minimum(bubble.counts[:, 0, :], bubble.counts[:, 1, :])
    shrink = np.minimum(shrink, cap)
    adjust = np.where(delta > 0, delta, -shrink)
    bubble.counts[:, 0, :] += adjust
    bubble.counts[:, 1, :] += adjust
    return adjust
