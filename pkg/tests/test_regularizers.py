import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sbcpn.regularizers import GroupL2, L1, Zero, block_soft_threshold, soft_threshold


def test_l1_prox_piece_examples():
    reg = L1(1, 1.0)
    assert reg.prox_piece(0, np.array([3.0]), 1.0) == pytest.approx([2.0])
    assert reg.prox_piece(0, np.array([0.0]), 1.0) == pytest.approx([0.0])


def test_group_prox_piece_example():
    reg = GroupL2(2, 1.0, np.array([0, 2]))
    assert reg.prox_piece(0, np.array([3.0, 4.0]), 1.0) == pytest.approx([2.4, 3.2])


def test_zero_prox_is_identity(rng):
    u = rng.standard_normal(7)
    np.testing.assert_array_equal(Zero(7).prox(u, 0.3), u)
    np.testing.assert_array_equal(Zero(7).prox_piece(2, u[2:3], 5.0), u[2:3])


def test_prox_full_examples():
    np.testing.assert_allclose(L1(3, 1.0).prox(np.array([3.0, 0.0, -0.5]), 1.0), [2.0, 0.0, 0.0])
    reg = GroupL2(2, 1.0, np.array([0, 2]))
    np.testing.assert_array_equal(reg.prox(np.zeros(2), 1.0), [0.0, 0.0])


def test_values():
    assert L1(2, 0.5).value(np.array([1.0, -2.0])) == pytest.approx(1.5)
    assert Zero(3).value(np.array([1.0, -5.0, 2.0])) == 0.0
    assert GroupL2(2, 2.0, np.array([0, 2])).value(np.array([3.0, 4.0])) == pytest.approx(10.0)


def test_nonpositive_step_rejected():
    for reg in (Zero(2), L1(2, 1.0), GroupL2(2, 1.0, np.array([0, 2]))):
        with pytest.raises(ValueError):
            reg.prox(np.ones(2), 0.0)
        with pytest.raises(ValueError):
            reg.prox_piece(0, np.ones(reg.piece_slice(0).stop), -1.0)


def test_contiguous_group_widths():
    reg = GroupL2.contiguous(12, 1.0)
    np.testing.assert_array_equal(reg.bounds, [0, 5, 10, 12])
    widths = np.diff(GroupL2.contiguous(23, 1.0).bounds)
    p = np.arange(1, widths.size + 1)
    np.testing.assert_array_equal(widths, np.minimum(5, 23 - 5 * (p - 1)))


def test_group_prox_matches_piecewise(rng):
    reg = GroupL2.contiguous(17, 0.7, 4)
    u = rng.standard_normal(17) * 2
    whole = reg.prox(u, 0.6)
    for p in range(reg.num_pieces):
        sl = reg.piece_slice(p)
        np.testing.assert_allclose(whole[sl], reg.prox_piece(p, u[sl], 0.6), atol=1e-15)


def test_respects_pieces_and_restrict():
    reg = GroupL2.contiguous(12, 1.0)
    assert reg.respects_pieces(np.arange(5, 12))
    assert not reg.respects_pieces(np.arange(3, 8))
    sub = reg.restrict(np.arange(5, 12))
    np.testing.assert_array_equal(sub.bounds, [0, 5, 7])
    with pytest.raises(ValueError):
        reg.restrict(np.array([0, 1]))
    l1 = L1(6, 2.0).restrict(np.array([1, 4]))
    assert l1.n == 2 and l1.lam == 2.0


def test_l1_prox_optimality_conditions(rng):
    lam, t = 0.8, 0.5
    u = rng.standard_normal(200) * 2
    z = L1(200, lam).prox(u, t)
    w = (u - z) / t
    nz = z != 0
    np.testing.assert_allclose(w[nz], lam * np.sign(z[nz]), atol=1e-12)
    assert np.all(np.abs(w[~nz]) <= lam + 1e-12)


vec = arrays(np.float64, 8, elements=st.floats(-50, 50))


@settings(max_examples=100, deadline=None)
@given(vec, vec, st.floats(0.01, 5.0), st.floats(0.01, 3.0))
def test_prox_nonexpansive(u, v, t, lam):
    for reg in (Zero(8), L1(8, lam), GroupL2(8, lam, np.array([0, 3, 8]))):
        du = np.linalg.norm(reg.prox(u, t) - reg.prox(v, t))
        assert du <= np.linalg.norm(u - v) * (1 + 1e-12) + 1e-12


def test_threshold_helpers():
    np.testing.assert_allclose(soft_threshold([-3.0, 0.5, 2.0], 1.0), [-2.0, 0.0, 1.0])
    np.testing.assert_allclose(block_soft_threshold([0.3, 0.4], 1.0), [0.0, 0.0])
