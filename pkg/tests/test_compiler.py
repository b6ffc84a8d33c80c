from pathlib import Path

import numpy as np
import pytest

from aqsim.compiler import (RULE_CATALYSIS, RULE_CREATION, PauliBlock,
                            membrane_schedule, pauli_decompose, phase_rules,
                            reactions_for_block, reconstruct, sq_reactions)
from aqsim.core import ALPHA, BETA
from aqsim.errors import (EmptyDecomposition, NonRealCoefficient,
                          NotHermitian, UnsupportedKind)

DATA = Path(__file__).parent / "data"

SX = np.array([[0, 1], [1, 0]], dtype=complex)


def load_rules(name):
    lines = (DATA / name).read_text().splitlines()
    return {ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")}


def mass_action_rhs(rules, counts):
    """Independent mean-field evaluator used to cross-check emitted lists.

    counts maps (part, sign, state) -> quantity; catalysis contributes
    rate*[converted]*[catalyst], creation contributes rate*[trigger].
    """
    rhs = {k: 0.0 for k in counts}
    for rule in rules:
        if rule.kind == RULE_CATALYSIS:
            a, c = rule.converted, rule.catalyst
            flow = rule.rate * counts[(a.part, a.sign, a.state)] \
                * counts[(c.part, c.sign, c.state)]
            rhs[(a.part, a.sign, a.state)] -= flow
            r = rule.result
            rhs[(r.part, r.sign, r.state)] += flow
        elif rule.kind == RULE_CREATION:
            t, c = rule.trigger, rule.created
            flow = rule.rate * counts[(t.part, t.sign, t.state)]
            rhs[(c.part, c.sign, c.state)] += flow
    return rhs


def net_rhs(rules, nets, total):
    """Net-count mean field at per-type totals pinned to ``total``."""
    counts = {}
    for part in (ALPHA, BETA):
        for j in range(nets.shape[1]):
            counts[(part, 1, j)] = (total + nets[part, j]) / 2.0
            counts[(part, -1, j)] = (total - nets[part, j]) / 2.0
    rhs = mass_action_rhs(rules, counts)
    n = nets.shape[1]
    out = np.zeros((2, n))
    for part in (ALPHA, BETA):
        for j in range(n):
            out[part, j] = rhs[(part, 1, j)] - rhs[(part, -1, j)]
    return out


def schrodinger_rhs(h, nets):
    dpsi = -1j * h @ (nets[ALPHA] + 1j * nets[BETA])
    return np.stack([dpsi.real, dpsi.imag])


# --- decomposition ---------------------------------------------------------

def test_decompose_sigma_x():
    blocks = pauli_decompose(-SX)
    assert len(blocks) == 1
    b = blocks[0]
    assert (b.i, b.j, b.kind, b.sign) == (0, 1, "x", -1)
    assert b.weight == pytest.approx(1.0)


def test_decompose_zero_is_empty():
    assert pauli_decompose(np.zeros((3, 3))) == []


def test_decompose_complex_entry_splits():
    h = np.array([[0, 1 - 1j], [1 + 1j, 0]])
    blocks = pauli_decompose(h)
    kinds = {(b.kind, b.sign, b.weight) for b in blocks}
    assert kinds == {("x", 1, 1.0), ("y", 1, 1.0)}
    assert np.abs(reconstruct(blocks, 2) - h).max() < 1e-12


def test_decompose_rejects_non_hermitian():
    with pytest.raises(NotHermitian):
        pauli_decompose(np.array([[0, 1], [2, 0]], dtype=complex))


@pytest.mark.parametrize("n", [2, 3, 8, 16])
def test_reconstruction_random(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(5):
        m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        h = m + m.conj().T
        blocks = pauli_decompose(h)
        assert np.abs(reconstruct(blocks, n) - h).max() < 1e-10
        assert all(b.weight >= 0 for b in blocks)


# --- equilibrium lists -----------------------------------------------------

@pytest.mark.parametrize("kind,fixture", [
    ("x", "rules_minus_x.txt"),
    ("y", "rules_minus_y.txt"),
    ("z", "rules_minus_z.txt"),
])
def test_golden_lists(kind, fixture):
    lst = reactions_for_block(PauliBlock(0, 1, kind, -1, 1.0))
    assert len(lst) == 8
    assert {r.text() for r in lst} == load_rules(fixture)


def test_pinned_first_rules():
    rx = reactions_for_block(PauliBlock(0, 1, "x", -1, 1.0)).rules
    assert rx[0].text() == "a0+, b1+ -> b1+, b1+"
    rz = reactions_for_block(PauliBlock(0, 1, "z", -1, 1.0)).rules
    assert rz[0].text() == "a0+, b0+ -> b0+, b0+"


def test_rules_conserve_quantum_count():
    for kind in "xyz":
        for sign in (1, -1):
            for rule in reactions_for_block(PauliBlock(0, 1, kind, sign, 0.7)):
                assert len(rule.reagents) == 2
                assert len(rule.products) == 2
                assert rule.catalyst in rule.products


def test_inverted_kind_flips_mean_field_exactly():
    rng = np.random.default_rng(5)
    counts = {(p, s, j): rng.uniform(10, 100)
              for p in (ALPHA, BETA) for s in (1, -1) for j in (0, 1)}
    for kind in "xyz":
        minus = reactions_for_block(PauliBlock(0, 1, kind, -1, 1.0))
        plus = reactions_for_block(PauliBlock(0, 1, kind, 1, 1.0))
        rm = mass_action_rhs(minus, counts)
        rp = mass_action_rhs(plus, counts)
        for key in counts:
            assert rp[key] == pytest.approx(-rm[key], rel=1e-12)


@pytest.mark.parametrize("kind", ["x", "y", "z", "I"])
@pytest.mark.parametrize("sign", [1, -1])
def test_mean_field_matches_schrodinger(kind, sign):
    # net-count ODEs at pinned totals reproduce d(psi)/dt = -iH psi
    rng = np.random.default_rng(10 * "xyzI".index(kind) + sign + 2)
    n, total = 4, 1000
    pairs = [(0, 2)] if kind != "I" else [(1, 1)]
    for i, j in pairs:
        block = PauliBlock(i, j, kind, sign, 0.6)
        rules = reactions_for_block(block)
        nets = rng.integers(-200, 200, size=(2, n)) * 2  # even, |net| < total
        got = net_rhs(rules, nets.astype(float), total)
        want = total * schrodinger_rhs(block.matrix(n), nets.astype(float))
        assert np.abs(got - want).max() < 1e-6 * total


def test_phase_rules_match_identity_blocks():
    rng = np.random.default_rng(17)
    n, total = 3, 500
    nets = rng.integers(-100, 100, size=(2, n)) * 2
    got = net_rhs(phase_rules(n, rate=0.9), nets.astype(float), total)
    want = total * schrodinger_rhs(-0.9 * np.eye(n), nets.astype(float))
    assert np.abs(got - want).max() < 1e-6 * total


def test_unsupported_kind_rejected():
    with pytest.raises(UnsupportedKind):
        PauliBlock(0, 1, "w", 1, 1.0)
    with pytest.raises(UnsupportedKind):
        PauliBlock(1, 1, "x", 1, 1.0)


# --- hopping (ladder-term) lists ------------------------------------------

def test_sq_rules_for_symmetric_hop():
    # H = -(a2+ a1 + a1+ a2) in 0-based indices: terms (-1, 1, 0), (-1, 0, 1)
    lst = sq_reactions([(-1, 1, 0), (-1, 0, 1)])
    texts = {r.text() for r in lst}
    assert texts == {
        "b0+ -> a1-, b0+", "b0- -> a1+, b0-",
        "a0+ -> a0+, b1+", "a0- -> a0-, b1-",
        "b1+ -> a0-, b1+", "b1- -> a0+, b1-",
        "a1+ -> a1+, b0+", "a1- -> a1-, b0-",
    }
    assert all(r.kind == RULE_CREATION and r.rate == 1.0 for r in lst)


def test_sq_empty():
    assert len(sq_reactions([])) == 0


def test_sq_imaginary_coefficients_give_sigma_y_field():
    # -sigma_y = -i(a1+ a0 - a0+ a1) in 0-based indices
    lst = sq_reactions([(-1j, 1, 0), (1j, 0, 1)])
    nets = np.array([[3.0, -7.0], [11.0, 5.0]])
    got = net_rhs(lst, nets, total=100)
    # expected: d a0 = a1, d a1 = -a0, d b0 = b1, d b1 = -b0
    want = np.array([[nets[0, 1], -nets[0, 0]], [nets[1, 1], -nets[1, 0]]])
    assert np.allclose(got, want)


def test_sq_rejects_mixed_coefficient():
    with pytest.raises(NonRealCoefficient):
        sq_reactions([(1 + 1j, 0, 1)])


# --- membrane schedules ----------------------------------------------------

def test_division_fractions_proportional():
    blocks = [PauliBlock(0, 1, "x", -1, 1.0), PauliBlock(0, 1, "y", 1, 3.0)]
    sched = membrane_schedule(blocks, "division", 0.01)
    assert sched.fractions == pytest.approx((0.25, 0.75))
    assert sum(sched.fractions) == pytest.approx(1.0, abs=1e-12)


def test_trotter_slices():
    blocks = [PauliBlock(0, 1, "x", -1, 1.0), PauliBlock(0, 1, "z", -1, 1.0)]
    sched = membrane_schedule(blocks, "trotter", 0.01)
    assert sched.slices == pytest.approx((0.01, 0.01))
    assert sched.cycle_time == pytest.approx(0.02)


def test_single_block_division():
    sched = membrane_schedule([PauliBlock(0, 0, "I", -1, 2.0)], "division", 0.1)
    assert sched.fractions == (1.0,)


def test_empty_schedule_raises():
    with pytest.raises(EmptyDecomposition):
        membrane_schedule([], "division", 0.01)
