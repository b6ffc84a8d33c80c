"""Coupled-bubble chains: coupling, pair lists, exchange, decoherence."""

import collections

import numpy as np
import pytest

from aqsim.core import ALPHA, BETA, QuantumType, bubble_from_state, \
    probability_weights, state_from_bubble
from aqsim.compiler import catalysis, pauli_decompose, reactions_for_block
from aqsim.engine import EngineConfig, meanfield_evolve
from aqsim.errors import AllCountsZero, ConfigError, DimensionMismatch, \
    NoSplit, NoTouchingArea, SpectatorMismatch
from aqsim.membrane import MembraneConfig, embed_on_lattice
from aqsim.multiparticle import (Chain, ChainSupport, JointSystem,
                                 apply_two_particle_list, couple_bubbles,
                                 decohere_components, evolve_joint,
                                 exchange_bosons, exchange_fermions,
                                 joint_from_state, joint_state_from_chains,
                                 lift_rules, reduced_density_matrix)
from aqsim.oracle import chi_square_test, exact_propagate, fidelity

A = 10_000
SX = np.array([[0, 1], [1, 0]], dtype=complex)
E00 = np.array([1, 0, 0, 0], dtype=complex)


def qubit(psi, a=A):
    return bubble_from_state(psi, a)


def dense_partial_trace(psi, n, N, keep):
    """Brute-force reduced state: reshape, transpose, contract."""
    psi = np.asarray(psi, dtype=np.complex128)
    psi = psi / np.linalg.norm(psi)
    arr = psi.reshape((N,) * n)
    rest = [k for k in range(n) if k not in keep]
    mat = arr.transpose(list(keep) + rest).reshape(N ** len(keep), -1)
    return mat @ mat.conj().T


def dense_state(counts, n, N):
    """Test-local readout, independent of the module's sparse path."""
    vec = np.zeros(N ** n, dtype=np.complex128)
    for (part, sign, lists), cnt in counts.items():
        idx = int(np.ravel_multi_index(lists, (N,) * n))
        vec[idx] += cnt * sign * (1j if part == BETA else 1.0)
    return vec / np.linalg.norm(vec)


# --- coupling ----------------------------------------------------------------

def test_coupling_product_of_basis_states():
    joint = couple_bubbles(qubit([1, 0]), qubit([1, 0]))
    assert joint.n_particles == 2
    assert joint.touches == [(0, 1)]
    assert joint.identity == "distinct"
    assert np.allclose(joint.state(), E00)
    assert joint.support().dimension == 1


def test_coupling_matches_tensor_product_oracle():
    psi1 = np.array([1, 1], dtype=complex) / np.sqrt(2)
    joint = couple_bubbles(qubit(psi1), qubit([1, 0]))
    want = np.kron(psi1, [1, 0])
    assert fidelity(joint.state(), want) > 1 - 1e-6
    assert np.allclose(joint.state(), want, atol=1e-3)


def test_coupling_rejects_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        couple_bubbles(qubit([1, 0]), bubble_from_state([1, 0, 0], A))


def test_coupling_chain_of_three_inherits_idents_twice():
    joint = couple_bubbles(qubit([1, 0]), qubit([0, 1]))
    joint = couple_bubbles(joint, qubit([1, 0]))
    assert joint.n_particles == 3
    assert joint.touches == [(0, 1), (1, 2)]
    blocks = [p.ident_blocks for p in joint.particles]
    assert [len(b) for b in blocks] == [1, 2, 1]
    # the middle particle shares one block with each neighbor
    assert blocks[1] == [blocks[0][0], blocks[2][0]]
    assert blocks[0][0] != blocks[2][0]
    assert joint.next_ident == 2 * A
    assert np.allclose(joint.state()[int("010", 2)], 1.0)


def test_coupling_requires_touching_membranes():
    def grain_bubble(x):
        b = bubble_from_state([1.0], 2000)
        coords = np.array([[float(x), 0.0, 0.0]])
        embed_on_lattice(b, coords, MembraneConfig(spacing=1.0))
        return b

    joint = couple_bubbles(grain_bubble(0), grain_bubble(1))
    assert joint.n_particles == 2
    with pytest.raises(NoTouchingArea):
        couple_bubbles(grain_bubble(0), grain_bubble(3))


# --- chain readout -----------------------------------------------------------

def test_chain_aggregate_value_and_key():
    a0 = QuantumType(ALPHA, 1, 0)
    b1 = QuantumType(BETA, 1, 1)
    assert Chain((a0, a0)).key() == (ALPHA, 1, (0, 0))
    assert Chain((a0, b1)).key() == (BETA, 1, (0, 1))
    # i * i = -1: two imaginary components make a negative real chain
    assert Chain((b1, b1)).key() == (ALPHA, -1, (1, 1))
    with pytest.raises(ConfigError):
        Chain((a0, b1), idents=(1, 2, 3))


def test_joint_state_from_chain_collections():
    a0 = QuantumType(ALPHA, 1, 0)
    a1 = QuantumType(ALPHA, 1, 1)
    chains = [Chain((a0, a0))] * 5
    assert np.allclose(joint_state_from_chains(chains, 2, 2), E00)

    counts = {(ALPHA, 1, (0, 0)): 7, (ALPHA, 1, (1, 1)): 7}
    bell = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    assert np.allclose(joint_state_from_chains(counts, 2, 2), bell)

    mixed = [Chain((a0, a0))] * 3 + [Chain((a0, a1))] * 4 \
        + [Chain((a0.opposite(), a1))] * 4
    psi = joint_state_from_chains(mixed, 2, 2)
    assert psi[1] == 0  # equal opposite-sign chains cancel

    with pytest.raises(AllCountsZero):
        joint_state_from_chains({(ALPHA, 1, (0, 1)): 3,
                                 (ALPHA, -1, (0, 1)): 3}, 2, 2)


# --- two-particle reaction lists ----------------------------------------------

def test_empty_list_leaves_chains_unchanged():
    joint = couple_bubbles(qubit([1, 0]), qubit([1, 0]))
    before = dict(joint.counts)
    apply_two_particle_list(joint, [], EngineConfig(seed=5), t=0.7)
    assert joint.counts == before


def test_single_slot_list_reaches_quarter_period():
    joint = couple_bubbles(qubit([1, 0]), qubit([1, 0]))
    lists = pauli_decompose(-SX)
    assert len(lists) == 1
    cfg = EngineConfig(seed=11, a_target=A)
    apply_two_particle_list(joint, reactions_for_block(lists[0]), cfg,
                            t=np.pi / 2, slots=(0,))
    want = exact_propagate(-np.kron(SX, np.eye(2)), E00, np.pi / 2)
    assert fidelity(joint.state(), want) >= 0.98
    assert abs(want[2] - 1j) < 1e-12  # i|10> at the quarter period


def test_interaction_list_entangles_to_bell():
    h = -np.kron(SX, SX)
    cfg = EngineConfig(seed=23, a_target=A)
    joint = couple_bubbles(qubit([1, 0]), qubit([1, 0]), cfg)
    evolve_joint(joint, h, np.pi / 2, cfg)
    want = exact_propagate(h, E00, np.pi / 2)
    assert abs(want[3] - 1j) < 1e-12  # i|11>
    assert fidelity(joint.state(), want) >= 0.98

    half = couple_bubbles(qubit([1, 0]), qubit([1, 0]), cfg)
    evolve_joint(half, h, np.pi / 4, cfg)
    rho = reduced_density_matrix(half, 0)
    assert np.allclose(rho, np.diag([0.5, 0.5]), atol=0.02)


def test_lifted_mean_field_matches_exact_propagator():
    rng = np.random.default_rng(402)
    for trial in range(3):
        m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        h = (m + m.conj().T) / 2
        rules = [r for b in pauli_decompose(h)
                 for r in reactions_for_block(b)]
        lifted = lift_rules(rules, (0, 1), [()], 2, 2)
        joint = joint_from_state(E00, 2, 2, A)
        max_rate = max(r.rate for r in lifted)
        _, traj = meanfield_evolve(joint.counts, lifted, 1.0, 1.3,
                                   a_target=A,
                                   substep=0.001 / max(1.0, max_rate))
        vec = np.zeros(4, dtype=np.complex128)
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)]:
            re = traj.get((ALPHA, (i, j)), [0.0])[-1]
            im = traj.get((BETA, (i, j)), [0.0])[-1]
            vec[2 * i + j] = re + 1j * im
        vec /= np.linalg.norm(vec)
        want = exact_propagate(h, E00, 1.3)
        assert np.linalg.norm(vec - want) <= 1e-6


def test_chain_level_rules_respect_spectators():
    joint = joint_from_state({(0, 0, 0): 1.0}, 3, 2, A)
    good = catalysis(QuantumType(ALPHA, 1, (0, 0, 0)),
                     QuantumType(ALPHA, 1, (1, 1, 0)))
    apply_two_particle_list(joint, [good], EngineConfig(seed=2), t=0.01)

    bad = catalysis(QuantumType(ALPHA, 1, (0, 0, 0)),
                    QuantumType(ALPHA, 1, (1, 1, 1)))
    with pytest.raises(SpectatorMismatch):
        apply_two_particle_list(joint, [bad], EngineConfig(seed=2), t=0.01)
    with pytest.raises(DimensionMismatch):
        apply_two_particle_list(
            joint, [catalysis(QuantumType(ALPHA, 1, (0, 0)),
                              QuantumType(ALPHA, 1, (1, 1)))],
            EngineConfig(seed=2), t=0.01)


def test_sector_lift_keeps_spectator_sectors_independent():
    # |0>(|00>+|11>)/sqrt(2) on particles (1, 2); rotate slot 0 only
    amp = {(0, 0, 0): 1.0, (0, 1, 1): 1.0}
    joint = joint_from_state(amp, 3, 2, A)
    cfg = EngineConfig(seed=31, a_target=A)
    evolve_joint(joint, -SX, np.pi / 2, cfg, slots=(0,))
    h_full = -np.kron(SX, np.eye(4))
    psi0 = np.zeros(8, dtype=complex)
    psi0[0] = psi0[3] = 1 / np.sqrt(2)
    want = exact_propagate(h_full, psi0, np.pi / 2)
    assert fidelity(joint.state(), want) >= 0.98


# --- identical particles ------------------------------------------------------

def swap_norm(psi, parity):
    mat = psi.reshape(2, 2)
    return float(np.linalg.norm(mat - parity * mat.T))


def test_boson_product_state_is_a_fixed_point():
    joint = joint_from_state({(0, 0): 1.0}, 2, 2, A, touches=[(0, 1)])
    before = dict(joint.counts)
    exchange_bosons(joint, EngineConfig(seed=9, a_target=A))
    assert joint.identity == "boson"
    assert joint.counts == before
    assert np.allclose(joint.state(), E00)


def test_boson_exchange_symmetrizes():
    big = 100_000  # equilibrium swap noise scales as 1/sqrt(a_target)
    joint = joint_from_state({(0, 1): 1.0}, 2, 2, big, touches=[(0, 1)])
    exchange_bosons(joint, EngineConfig(seed=41, a_target=big))
    psi = joint.state()
    sym = np.array([0, 1, 1, 0], dtype=complex) / np.sqrt(2)
    assert fidelity(psi, sym) >= 0.98
    assert swap_norm(psi, +1) <= 0.02


def test_fermion_exchange_antisymmetrizes():
    big = 100_000
    joint = joint_from_state({(0, 1): 1.0}, 2, 2, big, touches=[(0, 1)])
    exchange_fermions(joint, EngineConfig(seed=43, a_target=big))
    psi = joint.state()
    anti = np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)
    assert fidelity(psi, anti) >= 0.98
    assert swap_norm(psi, -1) <= 0.02


def test_fermion_pauli_exclusion_cancels_equal_states():
    joint = joint_from_state({(0, 0): 1.0}, 2, 2, A, touches=[(0, 1)])
    exchange_fermions(joint, EngineConfig(seed=45, a_target=A))
    assert joint.net_amplitudes() == {}
    assert joint.total_chains() == 0
    with pytest.raises(AllCountsZero):
        joint.state()


def test_exchange_flag_guards_and_single_particle():
    lone = joint_from_state({(0,): 1.0}, 1, 2, A)
    before = dict(lone.counts)
    exchange_fermions(lone, EngineConfig(seed=1))
    assert lone.counts == before

    joint = joint_from_state({(0, 1): 1.0}, 2, 2, A, touches=[(0, 1)])
    exchange_bosons(joint, EngineConfig(seed=1, a_target=A))
    with pytest.raises(ConfigError):
        exchange_fermions(joint, EngineConfig(seed=1, a_target=A))


def test_exchange_is_reproducible_per_seed():
    def run(seed):
        j = joint_from_state({(0, 1): 1.0}, 2, 2, A, touches=[(0, 1)])
        exchange_bosons(j, EngineConfig(seed=seed, a_target=A))
        return j.counts

    assert run(77) == run(77)
    assert run(77) != run(78)


# --- reduced states ------------------------------------------------------------

def test_reduced_density_pinned_examples():
    joint = couple_bubbles(qubit([1, 0]), qubit([1, 0]))
    assert np.allclose(reduced_density_matrix(joint, 0),
                       np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert np.allclose(reduced_density_matrix(joint, 1),
                       np.array([[1.0, 0.0], [0.0, 0.0]]))

    bell = {(ALPHA, 1, (0, 0)): 70, (ALPHA, 1, (1, 1)): 70}
    assert np.allclose(reduced_density_matrix(bell, 0, n=2, N=2),
                       np.diag([0.5, 0.5]))

    skew = {(ALPHA, 1, (0, 0)): 6000, (ALPHA, 1, (1, 1)): 8000}
    assert np.allclose(reduced_density_matrix(skew, 1, n=2, N=2),
                       np.diag([0.36, 0.64]), atol=1e-12)


def test_reduced_density_matches_dense_partial_trace():
    rng = np.random.default_rng(88)
    for n, N in [(2, 2), (2, 4), (3, 2), (3, 3)]:
        lists = {tuple(int(v) for v in rng.integers(0, N, size=n))
                 for _ in range(6)}
        counts = {}
        for l in lists:
            for part in (ALPHA, BETA):
                counts[(part, int(rng.choice([-1, 1])), l)] = \
                    int(rng.integers(0, 50))
        if not any(counts.values()):
            continue
        psi = dense_state(counts, n, N)
        for j in range(n):
            rho = reduced_density_matrix(counts, j, n=n, N=N)
            want = dense_partial_trace(psi, n, N, (j,))
            assert np.allclose(rho, want, atol=1e-10)
            assert np.allclose(rho, rho.conj().T)
            assert np.linalg.eigvalsh(rho).min() >= -1e-10
            assert abs(np.trace(rho).real - 1.0) < 1e-10


# --- decoherence ----------------------------------------------------------------

def test_detached_product_state_splits_into_original_bubbles():
    psi1 = np.array([1, 1], dtype=complex) / np.sqrt(2)
    joint = couple_bubbles(qubit(psi1), qubit([0, 1]))
    joint.touches.clear()
    parts = decohere_components(joint, EngineConfig(seed=3), mode="bubbles")
    assert len(parts) == 2
    assert fidelity(state_from_bubble(parts[0]), psi1) > 1 - 1e-6
    assert fidelity(state_from_bubble(parts[1]), [0, 1]) > 1 - 1e-6


def test_connected_systems_refuse_to_split():
    joint = couple_bubbles(qubit([1, 0]), qubit([1, 0]))
    with pytest.raises(NoSplit):
        decohere_components(joint, mode="bubbles")
    with pytest.raises(NoSplit):
        decohere_components(joint, mode="support")
    # a merge threshold above the list separation also keeps it connected
    bell = joint_from_state({(0, 0): 1.0, (1, 1): 1.0}, 2, 2, A)
    with pytest.raises(NoSplit):
        decohere_components(bell, mode="support", eps1=1.0)
    with pytest.raises(ConfigError):
        decohere_components(bell, mode="sideways")


def test_three_particle_split_keeps_entangled_pair_together():
    # particles 0 and 1 share a Bell pair; particle 2 is separate
    amp = {(0, 0, 0): 1.0, (1, 1, 0): 1.0}
    joint = joint_from_state(amp, 3, 2, A, touches=[(0, 1)])
    parts = decohere_components(joint, EngineConfig(seed=6), mode="bubbles")
    assert len(parts) == 2
    pair, lone = parts
    assert isinstance(pair, JointSystem) and pair.n_particles == 2
    bell = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    assert fidelity(pair.state(), bell) > 1 - 1e-6
    assert fidelity(state_from_bubble(lone), [1, 0]) > 1 - 1e-6


def test_support_split_selects_components_by_weight():
    even = joint_from_state({(0, 0): 1.0, (1, 1): 1.0}, 2, 2, A)
    skew = joint_from_state({(0, 0): 0.6, (1, 1): 0.8}, 2, 2, A)
    for joint, probs in [(even, (0.5, 0.5)), (skew, (0.36, 0.64))]:
        hist = collections.Counter()
        for seed in range(1500):
            parts = decohere_components(joint.copy(),
                                        EngineConfig(seed=900 + seed),
                                        mode="support")
            outcomes = [int(np.argmax(probability_weights(b)))
                        for b in parts]
            assert outcomes[0] == outcomes[1]  # perfectly correlated
            hist[outcomes[0]] += 1
        _, ok = chi_square_test([hist[0], hist[1]], probs, alpha=0.01)
        assert ok


def test_support_clustering_thresholds():
    sup = ChainSupport(frozenset({(0, 0), (0, 1), (5, 5)}), 3)
    near = sup.components(1.0)
    assert near == [frozenset({(0, 0), (0, 1)}), frozenset({(5, 5)})]
    fine = sup.components(2e-4)
    assert [sorted(c) for c in fine] == [[(0, 0)], [(0, 1)], [(5, 5)]]


# --- memory and span ------------------------------------------------------------

def test_peak_chains_stay_within_initial_budget():
    cfg = EngineConfig(seed=19, a_target=A)
    joint = couple_bubbles(qubit([1, 0]), qubit([1, 0]), cfg)
    joint = couple_bubbles(joint, qubit([1, 0]), cfg)
    assert joint.initial_budget == 3 * 4 * A
    evolve_joint(joint, -np.kron(SX, SX), np.pi / 2, cfg, slots=(0, 1))
    assert joint.peak_chains <= joint.initial_budget
    sup = joint.support()
    assert sup.dimension <= joint.total_chains()


def test_sparse_support_scales_with_lists_not_dimension():
    cfg = EngineConfig(seed=29, a_target=A)
    joint = couple_bubbles(qubit([1, 0]), qubit([1, 0]), cfg)
    for _ in range(6):
        joint = couple_bubbles(joint, qubit([1, 0]), cfg)
    assert joint.n_particles == 8
    assert joint.total_chains() == 2 * A  # far below 2**8 lists
    evolve_joint(joint, -SX, np.pi / 2, cfg, slots=(0,))
    assert joint.support().dimension <= 2
    assert joint.peak_chains <= joint.initial_budget
    assert joint.peak_chains <= 5 * A  # two lists, two parts, plus churn
    want = np.zeros(2 ** 8, dtype=complex)
    want[int("10000000", 2)] = 1j
    assert fidelity(joint.state(), want) >= 0.98
