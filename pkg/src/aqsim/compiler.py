"""Hamiltonian-to-reaction compiler.

A Hermitian matrix is decomposed into two-index blocks (scaled Pauli kinds on
an (i, j) subspace, pure phases on the diagonal).  Each block compiles to a
small list of catalysis rules; hopping terms written with ladder operators
compile to nonequilibrium creation rules instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ALPHA, BETA, QuantumType
from .errors import (DimensionMismatch, EmptyDecomposition, NonRealCoefficient,
                     NotHermitian, UnsupportedKind)

RULE_MEMBRANE = 1
RULE_ANNIHILATION = 2
RULE_CATALYSIS = 3
RULE_CREATION = 4

_KIND_MATRICES = {
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
    "I": np.eye(2, dtype=np.complex128),
}


def _state_key(state) -> tuple:
    return state if isinstance(state, tuple) else (state,)


def _type_order(t: QuantumType) -> tuple:
    return (t.part, _state_key(t.state), 0 if t.sign > 0 else 1)


def type_text(t: QuantumType) -> str:
    sign = "+" if t.sign > 0 else "-"
    return f"{'ab'[t.part]}{t.state}{sign}"


@dataclass(frozen=True)
class ReactionRule:
    """One reaction.

    ``reagents`` and ``products`` are type patterns; for catalysis the
    canonical layout is reagents (converted, catalyst) and products
    (result, catalyst), for creation reagents (trigger,) and products
    (trigger, created).  ``inherit`` maps each product slot to the reagent
    slot whose ident/color it takes (-1 for none).
    """

    kind: int
    reagents: tuple[QuantumType, ...]
    products: tuple[QuantumType, ...]
    rate: float = 1.0
    inherit: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind == RULE_ANNIHILATION:
            a, b = self.reagents
            if (a.part, a.state) != (b.part, b.state) or a.sign != -b.sign:
                raise ValueError("annihilation must pair sign-opposite twins")
        if self.kind == RULE_CATALYSIS:
            if self.reagents[1] != self.products[1]:
                raise ValueError("catalyst must survive unchanged")

    @property
    def converted(self) -> QuantumType:
        return self.reagents[0]

    @property
    def catalyst(self) -> QuantumType:
        return self.reagents[1]

    @property
    def result(self) -> QuantumType:
        return self.products[0]

    @property
    def trigger(self) -> QuantumType:
        return self.reagents[0]

    @property
    def created(self) -> QuantumType:
        return self.products[1]

    def text(self) -> str:
        """Display form with reagents sorted by (part, state, sign)."""
        left = sorted(self.reagents, key=_type_order)
        right = sorted(self.products, key=_type_order)
        lhs = ", ".join(type_text(t) for t in left)
        rhs = ", ".join(type_text(t) for t in right) if right else "0"
        return f"{lhs} -> {rhs}"


def catalysis(converted: QuantumType, target: QuantumType,
              rate: float = 1.0) -> ReactionRule:
    """Conversion of one quantum into the catalyst's own type."""
    return ReactionRule(RULE_CATALYSIS, (converted, target),
                        (target, target), rate, inherit=(0, 1))


def creation(trigger: QuantumType, created: QuantumType,
             rate: float = 1.0) -> ReactionRule:
    """Membrane-fed emission: the trigger survives and spawns ``created``."""
    return ReactionRule(RULE_CREATION, (trigger,), (trigger, created), rate,
                        inherit=(0, 0))


def rotation_rules(x: tuple[int, object], y: tuple[int, object],
                   rate: float = 1.0) -> list[ReactionRule]:
    """Counterclockwise rotation in the (x, y) net-count plane.

    x and y are (part, state) type roots.  The four conversions give the mean
    field d[x]/dt = -rate*[y]{x}, d[y]/dt = +rate*[x]{y}: with totals pinned
    at A this is a rotation of the net pair at angular speed rate*A.
    """
    xp, xs = x
    yp, ys = y

    def t(root, sign):
        return QuantumType(root[0], sign, root[1])

    return [
        catalysis(t(x, +1), t(y, +1), rate),
        catalysis(t(y, -1), t(x, +1), rate),
        catalysis(t(y, +1), t(x, -1), rate),
        catalysis(t(x, -1), t(y, -1), rate),
    ]


@dataclass(frozen=True)
class PauliBlock:
    """One decomposition summand: ``weight * sign * kind`` on subspace (i, j).

    kind "I" with i == j is a pure phase on basic state i.
    """

    i: int
    j: int
    kind: str
    sign: int
    weight: float

    def __post_init__(self):
        if self.kind not in _KIND_MATRICES:
            raise UnsupportedKind(f"unknown block kind {self.kind!r}")
        if self.i > self.j:
            raise ValueError("blocks require i <= j")
        if self.i == self.j and self.kind != "I":
            raise UnsupportedKind("diagonal blocks must be phase kind 'I'")
        if self.weight < 0:
            raise ValueError("block weight must be nonnegative")
        if self.sign not in (1, -1):
            raise ValueError("block sign must be +-1")

    @property
    def key(self) -> tuple:
        return (self.i, self.j, self.kind, self.sign)

    def label(self) -> str:
        s = "+" if self.sign > 0 else "-"
        return f"({self.i},{self.j}) {s}{self.kind} l={self.weight:g}"

    def matrix(self, n: int) -> np.ndarray:
        """Signed, weighted block embedded into an n x n matrix."""
        m = np.zeros((n, n), dtype=np.complex128)
        small = self.sign * self.weight * _KIND_MATRICES[self.kind]
        if self.i == self.j:
            m[self.i, self.i] = small[0, 0]
        else:
            idx = np.ix_([self.i, self.j], [self.i, self.j])
            m[idx] = small
        return m


@dataclass(frozen=True)
class ReactionList:
    """Ordered rules serving one Hamiltonian block (or a hopping-term set)."""

    rules: tuple[ReactionRule, ...]
    scope: tuple = ()

    def __post_init__(self):
        seen = set()
        for rule in self.rules:
            if rule.kind == RULE_CREATION:
                continue  # parallel emissions may share a trigger
            pattern = tuple(sorted(rule.reagents, key=_type_order))
            if pattern in seen:
                raise ValueError(f"ambiguous dispatch for reagents {pattern}")
            seen.add(pattern)

    def __iter__(self):
        return iter(self.rules)

    def __len__(self) -> int:
        return len(self.rules)

    def text(self) -> str:
        return "\n".join(rule.text() for rule in self.rules)


def _gadget_roots(block: PauliBlock) -> list[tuple[tuple, tuple]]:
    """(x, y) rotation roots for each sub-list of the block's reaction list."""
    i, j = block.i, block.j
    ai, bi = (ALPHA, i), (BETA, i)
    aj, bj = (ALPHA, j), (BETA, j)
    neg = block.sign < 0
    if block.kind == "x":
        return [(ai, bj), (aj, bi)] if neg else [(bj, ai), (bi, aj)]
    if block.kind == "y":
        return [(aj, ai), (bj, bi)] if neg else [(ai, aj), (bi, bj)]
    if block.kind == "z":
        return [(ai, bi), (bj, aj)] if neg else [(bi, ai), (aj, bj)]
    if block.kind == "I":
        roots = [(ai, bi)] if neg else [(bi, ai)]
        if i != j:
            roots.append((aj, bj) if neg else (bj, aj))
        return roots
    raise UnsupportedKind(f"no reaction list for kind {block.kind!r}")


def reactions_for_block(block: PauliBlock) -> ReactionList:
    """Equilibrium catalysis list whose mean field is -i*(block matrix).

    Sign-inverted kinds swap the rotation direction of every sub-list; that
    is the reagent-for-product exchange read at the level of which type
    converts into which.
    """
    rules: list[ReactionRule] = []
    for x, y in _gadget_roots(block):
        rules.extend(rotation_rules(x, y, block.weight))
    return ReactionList(tuple(rules), scope=block.key)


def phase_rules(n: int, rate: float = 1.0) -> ReactionList:
    """Global-phase list: one positive-turn rotation per basic state."""
    rules: list[ReactionRule] = []
    for j in range(n):
        rules.extend(rotation_rules((ALPHA, j), (BETA, j), rate))
    return ReactionList(tuple(rules), scope=("phase", n))


def pauli_decompose(h: np.ndarray, tol: float = 1e-10) -> list[PauliBlock]:
    """Split a Hermitian matrix into weighted, signed blocks.

    Off-diagonal h_ij = a - i*c gives an x block carrying a and a y block
    carrying c; diagonal entries give per-index phase blocks.  Zero-weight
    blocks are dropped.
    """
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {h.shape}")
    scale = max(1.0, float(np.abs(h).max()))
    if np.abs(h - h.conj().T).max() > tol * scale:
        raise NotHermitian("matrix is not Hermitian within tolerance")
    drop = 1e-14 * scale
    n = h.shape[0]
    blocks: list[PauliBlock] = []
    for i in range(n):
        d = float(h[i, i].real)
        if abs(d) > drop:
            blocks.append(PauliBlock(i, i, "I", 1 if d > 0 else -1, abs(d)))
        for j in range(i + 1, n):
            a = float(h[i, j].real)
            c = float(-h[i, j].imag)
            if abs(a) > drop:
                blocks.append(PauliBlock(i, j, "x", 1 if a > 0 else -1, abs(a)))
            if abs(c) > drop:
                blocks.append(PauliBlock(i, j, "y", 1 if c > 0 else -1, abs(c)))
    return blocks


def reconstruct(blocks: list[PauliBlock], n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=np.complex128)
    for b in blocks:
        m += b.matrix(n)
    return m


@dataclass(frozen=True)
class MembraneSchedule:
    """How blocks share the membrane: by area or by time slices."""

    mode: str
    blocks: tuple[PauliBlock, ...]
    dt: float
    fractions: tuple[float, ...] = ()
    slices: tuple[float, ...] = ()

    @property
    def cycle_time(self) -> float:
        return float(sum(self.slices))


def membrane_schedule(blocks: list[PauliBlock], mode: str,
                      dt: float) -> MembraneSchedule:
    """Area fractions proportional to weights, or a cyclic slice schedule."""
    if mode not in ("division", "trotter"):
        raise ValueError(f"unknown schedule mode {mode!r}")
    if not blocks:
        raise EmptyDecomposition("no blocks to schedule")
    weights = np.array([b.weight for b in blocks], dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise EmptyDecomposition("all block weights are zero")
    if mode == "division":
        return MembraneSchedule("division", tuple(blocks), dt,
                                fractions=tuple(weights / total))
    return MembraneSchedule("trotter", tuple(blocks), dt,
                            slices=tuple(weights * dt))


def sq_reactions(terms) -> ReactionList:
    """Creation rules for hopping terms ``c * (create p)(annihilate q)``.

    Each term is (c, p, q) with c real or purely imaginary (mixed coefficients
    must be pre-split the same way pauli_decompose splits x and y parts).  The
    emitted mean field is d(psi)/dt = -i * sum c |p><q| applied componentwise.
    """
    rules: list[ReactionRule] = []
    for c, p, q in terms:
        c = complex(c)
        a, d = c.real, c.imag
        if abs(a) > 1e-14 and abs(d) > 1e-14:
            raise NonRealCoefficient(
                f"coefficient {c} mixes real and imaginary parts; split it")
        if abs(a) > 1e-14:
            sig, l = (1 if a > 0 else -1), abs(a)
            for s in (1, -1):
                rules.append(creation(QuantumType(BETA, s, q),
                                      QuantumType(ALPHA, sig * s, p), l))
            for s in (1, -1):
                rules.append(creation(QuantumType(ALPHA, s, q),
                                      QuantumType(BETA, -sig * s, p), l))
        elif abs(d) > 1e-14:
            sig, l = (1 if d > 0 else -1), abs(d)
            for s in (1, -1):
                rules.append(creation(QuantumType(ALPHA, s, q),
                                      QuantumType(ALPHA, sig * s, p), l))
            for s in (1, -1):
                rules.append(creation(QuantumType(BETA, s, q),
                                      QuantumType(BETA, sig * s, p), l))
    return ReactionList(tuple(rules), scope=("sq", len(rules)))


def block_record(block: PauliBlock) -> dict:
    return {"i": block.i, "j": block.j, "kind": block.kind,
            "sign": block.sign, "weight": block.weight}


def rule_record(rule: ReactionRule) -> dict:
    def rec(t: QuantumType) -> dict:
        return {"part": "ab"[t.part], "sign": t.sign, "state": list(t.state)
                if isinstance(t.state, tuple) else t.state}

    return {"kind": rule.kind, "rate": rule.rate,
            "reagents": [rec(t) for t in rule.reagents],
            "products": [rec(t) for t in rule.products],
            "text": rule.text()}
