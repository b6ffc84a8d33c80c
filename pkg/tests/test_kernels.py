"""Motion and pairing kernels: geometry, matching, and twin identity."""

import numpy as np
import pytest

from aqsim import _kernels_ref

fast = pytest.importorskip("aqsim._kernels_fast")

IMPLS = [_kernels_ref, fast]


def ball_cloud(rng, n, radius=1.0, speed=1.0):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1 / 3)
    pos = v * r[:, None]
    vel = rng.normal(size=(n, 3))
    vel *= speed / np.linalg.norm(vel, axis=1, keepdims=True)
    return np.ascontiguousarray(pos), np.ascontiguousarray(vel)


@pytest.mark.parametrize("impl", IMPLS)
def test_straight_line_inside(impl):
    pos = np.array([[0.1, 0.2, -0.1]])
    vel = np.array([[0.3, -0.1, 0.2]])
    moved = pos + vel * 0.5
    hit, _, escaped = impl.advance_reflect(pos, vel, 0.5, 1.0)
    assert escaped == 0
    assert hit[0] == 0
    assert np.array_equal(pos, moved)


@pytest.mark.parametrize("impl", IMPLS)
def test_head_on_bounce(impl):
    pos = np.array([[0.5, 0.0, 0.0]])
    vel = np.array([[1.0, 0.0, 0.0]])
    hit, hit_z, escaped = impl.advance_reflect(pos, vel, 1.0, 1.0)
    assert escaped == 0
    assert hit[0] == 1
    assert hit_z[0] == 0.0
    # reaches the wall after 0.5, returns 0.5 inward
    assert pos[0] == pytest.approx([0.5, 0.0, 0.0], abs=1e-12)
    assert vel[0] == pytest.approx([-1.0, 0.0, 0.0], abs=1e-12)


@pytest.mark.parametrize("impl", IMPLS)
def test_bounces_preserve_speed_and_containment(impl):
    rng = np.random.default_rng(5)
    pos, vel = ball_cloud(rng, 400, speed=3.0)
    speed0 = np.linalg.norm(vel, axis=1)
    for _ in range(200):
        _, _, escaped = impl.advance_reflect(pos, vel, 0.02, 1.0)
        assert escaped == 0
        assert (np.linalg.norm(pos, axis=1) <= 1.0 + 1e-9).all()
    assert np.linalg.norm(vel, axis=1) == pytest.approx(speed0, rel=1e-9)


@pytest.mark.parametrize("impl", IMPLS)
def test_nonfinite_position_reports_escape(impl):
    pos = np.array([[np.nan, 0.0, 0.0]])
    vel = np.array([[1.0, 0.0, 0.0]])
    with np.errstate(invalid="ignore"):
        _, _, escaped = impl.advance_reflect(pos, vel, 0.1, 1.0)
    assert escaped == 1


@pytest.mark.parametrize("impl", IMPLS)
def test_pairs_mutual_nearest_only(impl):
    # middle point is nearest to the left one; the right one stays single
    pos = np.array([
        [0.0, 0.0, 0.0],
        [0.01, 0.0, 0.0],
        [0.025, 0.0, 0.0],
    ])
    partner = impl.build_pairs(pos, 0.02, 1.0)
    assert partner.tolist() == [1, 0, -1]


@pytest.mark.parametrize("impl", IMPLS)
def test_pairs_tie_breaks_to_lower_row(impl):
    pos = np.array([
        [0.0, 0.0, 0.0],
        [0.01, 0.0, 0.0],
        [-0.01, 0.0, 0.0],
    ])
    partner = impl.build_pairs(pos, 0.02, 1.0)
    assert partner.tolist() == [1, 0, -1]


@pytest.mark.parametrize("impl", IMPLS)
def test_pairs_out_of_range(impl):
    pos = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]])
    partner = impl.build_pairs(pos, 0.02, 1.0)
    assert partner.tolist() == [-1, -1]


@pytest.mark.parametrize("impl", IMPLS)
def test_pairing_is_a_matching(impl):
    rng = np.random.default_rng(17)
    pos, _ = ball_cloud(rng, 3000)
    partner = impl.build_pairs(pos, 0.05, 1.0)
    paired = np.flatnonzero(partner >= 0)
    # symmetric and involutive
    assert (partner[partner[paired]] == paired).all()
    # within range
    d = np.linalg.norm(pos[paired] - pos[partner[paired]], axis=1)
    assert (d <= 0.05).all()


def test_twins_bit_identical_over_run():
    rng = np.random.default_rng(23)
    pos_a, vel_a = ball_cloud(rng, 2000, speed=6.0)
    pos_b, vel_b = pos_a.copy(), vel_a.copy()
    for _ in range(100):
        h_a, z_a, e_a = _kernels_ref.advance_reflect(pos_a, vel_a, 0.01, 1.0)
        h_b, z_b, e_b = fast.advance_reflect(pos_b, vel_b, 0.01, 1.0)
        assert e_a == e_b == 0
        assert np.array_equal(pos_a, pos_b)
        assert np.array_equal(vel_a, vel_b)
        assert np.array_equal(h_a, h_b)
        assert np.array_equal(z_a, z_b)
        p_a = _kernels_ref.build_pairs(pos_a, 0.03, 1.0)
        p_b = fast.build_pairs(pos_b, 0.03, 1.0)
        assert np.array_equal(p_a, p_b)
