import itertools
import math

import numpy as np
import pytest

from transferlab.rng import substream
from transferlab.space import ContractViolation
from transferlab.systems import (IfsSystem, WeightedShiftSystem, affine_ifs, attractor_iterate, chaos_game,
                                 discarded_tail_bound, dyadic_ifs, hausdorff, ifs_irreducibility_witness,
                                 ifs_transfer, ifs_transfer_n, multi_index_sum, preimage, prepend_r, s_map,
                                 strong_transitivity_witness, summability_check, weakly_contractive,
                                 weighted_shift_apply, weighted_shift_balls)

DOUBLE = WeightedShiftSystem((2.0,), dim=16, p=1.0)


def e(k, dim=16):
    v = np.zeros(dim)
    v[k - 1] = 1.0
    return v


def test_weighted_shift_of_zero_is_zero():
    assert np.all(weighted_shift_apply(DOUBLE, np.zeros(16)) == 0)


def test_weighted_shift_moves_second_basis_vector():
    assert np.array_equal(weighted_shift_apply(DOUBLE, e(2)), 2 * e(1))


def test_weighted_shift_norm_bound():
    sys = WeightedShiftSystem((0.5, 3.0, 1.2), dim=24, p=2.0)
    X = substream(0, "norm").standard_normal((200, 24))
    assert np.all(sys.norm(weighted_shift_apply(sys, X)) <= sys.upper * sys.norm(X) + 1e-12)


def test_s_map_divides_by_weights():
    assert np.array_equal(s_map(DOUBLE, e(1)), e(1) / 2)


def test_prepend_then_shift_round_trip():
    sys = WeightedShiftSystem((0.5, 3.0, 1.2), dim=12)
    x = substream(0, "rt").standard_normal(12)
    back = weighted_shift_apply(sys, prepend_r(0.7, s_map(sys, x)))
    assert np.allclose(back[:-1], x[:-1], rtol=1e-15, atol=0)


def test_preimage_tail_coordinates():
    sys = WeightedShiftSystem((0.5, 3.0, 1.2), dim=12)
    x = substream(0, "pre").standard_normal(12)
    n = 4
    y = preimage(sys, x, [0.1, 0.2, 0.3, 0.4])
    assert np.array_equal(y[:n], [0.1, 0.2, 0.3, 0.4])
    for k in range(1, 12 - n + 1):
        assert y[n + k - 1] == pytest.approx(x[k - 1] / sys.beta(k, n), rel=1e-14)
    z = y
    for _ in range(n):
        z = weighted_shift_apply(sys, z)
    assert np.allclose(z[:12 - n], x[:12 - n], rtol=1e-13, atol=0)


def test_beta_products_telescope():
    sys = WeightedShiftSystem((0.5, 3.0, 1.2, 0.8), dim=20)
    for k, n, m in itertools.product(range(1, 8), range(0, 6), range(0, 6)):
        assert sys.beta(k, n) * sys.beta(k + n, m) == pytest.approx(sys.beta(k, n + m), rel=1e-14)
    assert np.allclose(sys.beta_table(5), [sys.beta(k, 5) for k in range(1, 21)], rtol=1e-13)


def test_summability_doubling_weights():
    N = 30
    rep = summability_check(DOUBLE, 1.0, N)
    assert DOUBLE.d(7) == pytest.approx(2.0 ** 7, rel=1e-14)
    assert rep.summable and rep.ratio == pytest.approx(0.5, rel=1e-12)
    assert abs(rep.partial_sums[-1] - 1.0) <= 2.0 ** -N + 1e-15
    assert rep.tail_estimate == pytest.approx(2.0 ** -N, rel=1e-9)


def test_summability_unit_weights_diverge():
    rep = summability_check(WeightedShiftSystem((1.0,), dim=16), 1.0, 40)
    assert not rep.summable and math.isinf(rep.tail_estimate)
    assert rep.partial_sums[-1] == 40.0


def test_alternating_weights_window_minimum():
    sys = WeightedShiftSystem((0.5, 4.0), dim=20)
    for n in range(1, 21):
        brute = min(math.prod(sys.pattern[(j - 1) % 2] for j in range(k, k + n)) for k in range(1, 21))
        assert sys.d(n) == pytest.approx(brute, rel=1e-13)
    assert summability_check(sys, 1.0, 20).summable


def test_summability_needs_enough_terms():
    with pytest.raises(ContractViolation):
        summability_check(DOUBLE, 1.0, 5)


def test_weights_validated():
    with pytest.raises(ContractViolation):
        WeightedShiftSystem((0.0, 1.0))
    with pytest.raises(ContractViolation):
        WeightedShiftSystem((2.0,), lower=0.5, upper=1.5)


def test_transitivity_own_preimage_is_hit_in_one_step():
    sys = WeightedShiftSystem((0.5, 3.0, 1.2), dim=16)
    x = np.zeros(16)
    x[:3] = [0.4, -0.2, 0.1]
    u = preimage(sys, x, [0.3])
    w = strong_transitivity_witness(sys, x, u, 1e-9, 10)
    assert w.found and w.n == 1 and w.distance == pytest.approx(0.0, abs=1e-15)


def test_transitivity_doubling_needs_two_steps():
    w = strong_transitivity_witness(DOUBLE, e(1), np.zeros(16), 0.5, 10)
    assert w.found and w.n == 2 and w.distance == 0.25
    assert np.array_equal(w.word, [0.0, 0.0])


def test_transitivity_fails_without_expansion():
    sys = WeightedShiftSystem((0.9,), dim=16)
    w = strong_transitivity_witness(sys, e(1), np.zeros(16), 0.5, 12)
    assert not w.found and w.distance >= 1.0


def test_weighted_shift_balls_shape_and_tail_bound():
    sys = WeightedShiftSystem((2.0,), dim=32)
    balls = weighted_shift_balls(sys, 20, 0.5, 3, 0.5, seed=1)
    assert len(balls) == 20
    for c, r in balls:
        assert r == 0.5 and np.count_nonzero(c) <= 3 and np.all(c[3:] == 0) and np.all(np.abs(c) <= 0.5)
    assert discarded_tail_bound(sys, 6.0) == pytest.approx(6.0 * 2.0 ** -31, rel=1e-9)


def test_ifs_transfer_of_one_is_one():
    sys = IfsSystem([lambda X: X / 3, lambda X: X / 3 + 2 / 3],
                    lambda X: np.hstack([0.25 + 0.5 * X, 0.75 - 0.5 * X]), ([0.0], [1.0]))
    for x in (0.0, 0.3, 1.0):
        assert ifs_transfer(sys, lambda Y: np.ones(len(Y)), x) == 1.0
    assert sys.check_probabilities(np.linspace(0, 1, 50)[:, None]) <= 1e-12


def test_dyadic_transfer_of_identity():
    assert ifs_transfer(dyadic_ifs(), lambda Y: Y[:, 0], 0.0) == 0.25


def test_ifs_iterate_matches_multi_index_enumeration():
    sys = IfsSystem([lambda X: X / 2, lambda X: X / 2 + 0.5],
                    lambda X: np.hstack([0.3 + 0.4 * X, 0.7 - 0.4 * X]), ([0.0], [1.0]))
    phi = lambda Y: np.cos(3 * Y[:, 0])
    for n in range(1, 11):
        assert ifs_transfer_n(sys, phi, 0.2, n) == pytest.approx(multi_index_sum(sys, phi, 0.2, n), rel=1e-12)


def test_constant_probabilities_validated():
    with pytest.raises(ContractViolation):
        IfsSystem([lambda X: X / 2], [0.5], ([0.0], [1.0]))


def test_dyadic_maps_are_weakly_contractive():
    assert weakly_contractive(dyadic_ifs(), substream(0, "wc")) == [True, True]
    stretch = affine_ifs([[[1.0]]], [[0.0]], [1.0], ([0.0], [1.0]))
    assert weakly_contractive(stretch, substream(0, "wc")) == [False]


def test_dyadic_attractor_is_the_interval():
    grid = np.linspace(0, 1, 1024)[:, None]
    for n in (4, 8, 10):
        cloud = attractor_iterate(dyadic_ifs(), [[0.3]], n)
        assert hausdorff(cloud.points, grid) <= 2.0 ** -n + 1 / 1023
        assert cloud.invariance_gap <= cloud.bound


def test_single_contraction_attractor_is_fixed_point():
    half = affine_ifs([[[0.5]]], [[0.0]], [1.0], ([0.0], [1.0]))
    cloud = attractor_iterate(half, [[1.0], [0.25]], 40)
    assert np.max(np.abs(cloud.points)) <= 2.0 ** -40


def test_seeds_in_attractor_stay_inside():
    cloud = attractor_iterate(dyadic_ifs(), np.linspace(0, 1, 9)[:, None], 6)
    assert np.all((cloud.points >= 0) & (cloud.points <= 1))


def test_irreducibility_open_set_containing_start():
    w = ifs_irreducibility_witness(dyadic_ifs(), 0.4, 0.4, 0.01, 5)
    assert w.found and w.index == ()


def test_irreducibility_dyadic_target():
    w = ifs_irreducibility_witness(dyadic_ifs(), 0.0, 0.8125, 0.01, 8)
    assert w.found and len(w.index) <= 8
    assert abs(w.point[0] - 0.8125) < 0.01
    # maps applied first to last read the binary expansion from the last digit to the first
    assert w.index == (1, 0, 1, 1)


def test_irreducibility_fails_off_the_attractor():
    w = ifs_irreducibility_witness(dyadic_ifs(), 0.0, 5.0, 0.1, 6)
    assert not w.found and w.nearest == pytest.approx(4.0, abs=0.02)


def test_chaos_game_stays_in_box_and_is_reproducible():
    a = chaos_game(dyadic_ifs(), 0.5, 500, substream(0, "cg"), chains=3)
    b = chaos_game(dyadic_ifs(), 0.5, 500, substream(0, "cg"), chains=3)
    assert a.shape == (500, 3, 1) and np.array_equal(a, b)
    assert np.all((a >= 0) & (a <= 1))
