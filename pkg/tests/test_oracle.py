import math

import numpy as np
import pytest

from transferlab.oracle import (CylinderSpace, autocovariance_sigma2, build_matrix, equivalence_grid,
                                exact_cesaro, exact_correlations, exact_normalize, exact_poisson, exact_sigma2,
                                exact_transfer_power, is_primitive, oracle_system, perron,
                                second_eigenvalue_modulus, stationary)
from transferlab.potential import ConstantPotential, FiniteRangePotential
from transferlab.space import Alphabet, AprioriMeasure, ContractViolation

BIN = Alphabet.finite([0, 1])
MU = AprioriMeasure(BIN)


def field(beta):
    return FiniteRangePotential.from_function(BIN, 1, lambda w: beta * w[..., 0])


def pair(beta=1.0):
    return FiniteRangePotential.from_function(BIN, 2, lambda w: beta * w[..., 0] * w[..., 1])


def centered_first_coordinate(orc):
    w = orc.space.words()[:, 0]
    return w - orc.pi @ w


def test_constant_potential_matrix():
    c = 0.4
    tm = build_matrix(CylinderSpace(MU, 2), ConstantPotential(BIN, c))
    assert np.allclose(tm.matrix.sum(axis=1), math.exp(c), rtol=1e-15)
    assert np.all((tm.matrix == 0) | np.isclose(tm.matrix, 0.5 * math.exp(c), rtol=1e-15))


def test_field_potential_matrix():
    beta = 0.7
    M = build_matrix(CylinderSpace(MU, 1), field(beta)).matrix
    row = [0.5, 0.5 * math.exp(beta)]
    assert np.allclose(M, [row, row], rtol=1e-15)


def test_pair_potential_matrix_by_hand():
    # states 00, 01, 10, 11; from (w1, w2) the chain moves to (a, w1) with weight (1/2) e^{a w1}
    e = math.e
    want = np.array([[0.5, 0.0, 0.5, 0.0],
                     [0.5, 0.0, 0.5, 0.0],
                     [0.0, 0.5, 0.0, e / 2],
                     [0.0, 0.5, 0.0, e / 2]])
    assert np.allclose(build_matrix(CylinderSpace(MU, 2), pair()).matrix, want, rtol=1e-15)


def test_cylinder_space_limits():
    with pytest.raises(ContractViolation):
        CylinderSpace(AprioriMeasure(Alphabet.finite([0, 1, 2])), 8)
    with pytest.raises(ContractViolation):
        CylinderSpace(AprioriMeasure(Alphabet.sphere(2)), 1)
    with pytest.raises(ContractViolation):
        build_matrix(CylinderSpace(MU, 1), pair())


def test_perron_constant_potential():
    pd = perron(build_matrix(CylinderSpace(MU, 2), ConstantPotential(BIN, 0.3)))
    assert pd.lam == pytest.approx(math.exp(0.3), rel=1e-12)
    assert np.allclose(pd.h, 1.0, rtol=1e-10) and np.allclose(pd.nu, 0.25, rtol=1e-10)


def test_perron_field_closed_form():
    pd = perron(build_matrix(CylinderSpace(MU, 1), field(1.0)))
    assert pd.lam == pytest.approx((1 + math.e) / 2, rel=1e-12)


def test_perron_potential_shift_scales_lambda():
    t = 0.8
    base = perron(build_matrix(CylinderSpace(MU, 2), pair()))
    shifted = FiniteRangePotential(BIN, pair().table + t)
    sh = perron(build_matrix(CylinderSpace(MU, 2), shifted))
    assert sh.lam == pytest.approx(base.lam * math.exp(t), rel=1e-11)
    assert np.allclose(sh.h, base.h, rtol=1e-9)


def test_perron_refuses_non_primitive():
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert not is_primitive(swap)
    with pytest.raises(ContractViolation):
        perron(swap)
    with pytest.raises(ContractViolation):
        perron(np.array([[1.0, -0.1], [0.5, 0.5]]))


def test_normalize_constant_gives_apriori_structure():
    tm = build_matrix(CylinderSpace(MU, 2), ConstantPotential(BIN, 1.7))
    pd = perron(tm)
    P = exact_normalize(tm, pd.lam, pd.h)
    assert np.allclose(P, tm.matrix / math.exp(1.7), atol=1e-12)


def test_normalized_matrix_is_stochastic_with_stationary_h_nu():
    orc = oracle_system(AprioriMeasure(Alphabet.finite([0, 1, 2])),
                        FiniteRangePotential(Alphabet.finite([0, 1, 2]), np.arange(9.0).reshape(3, 3) / 8))
    assert np.max(np.abs(orc.P.sum(axis=1) - 1)) <= 1e-10
    hn = orc.perron.h * orc.perron.nu
    assert np.allclose(stationary(orc.P), hn / hn.sum(), atol=1e-12)


def test_poisson_zero_and_iid():
    orc = oracle_system(MU, pair())
    assert np.all(exact_poisson(orc.P, np.zeros(4), orc.pi) == 0)
    iid = oracle_system(MU, field(0.6))
    phi = centered_first_coordinate(iid)
    assert np.allclose(exact_poisson(iid.P, phi, iid.pi), phi, atol=1e-14)


def test_poisson_refuses_uncentered():
    orc = oracle_system(MU, pair())
    with pytest.raises(ContractViolation, match="centered"):
        exact_poisson(orc.P, orc.space.words()[:, 0], orc.pi)


def test_sigma2_two_formulas_agree():
    orc = oracle_system(MU, pair())
    phi = centered_first_coordinate(orc)
    assert exact_sigma2(orc.P, phi, orc.pi) == pytest.approx(autocovariance_sigma2(orc.P, phi, orc.pi), abs=1e-6)
    iid = oracle_system(MU, field(0.0))
    assert exact_sigma2(iid.P, centered_first_coordinate(iid), iid.pi) == pytest.approx(0.25, abs=1e-14)


def test_correlations_at_zero_and_for_iid():
    orc = oracle_system(MU, pair())
    phi = centered_first_coordinate(orc)
    assert exact_correlations(orc.P, phi, orc.pi, 3)[0] == pytest.approx(orc.pi @ phi ** 2, rel=1e-15)
    iid = oracle_system(MU, field(0.6))
    c = exact_correlations(iid.P, centered_first_coordinate(iid), iid.pi, 10)
    assert np.all(np.abs(c[1:]) <= 1e-15)


def test_correlation_decay_rate_is_second_eigenvalue():
    # a persistent three-symbol chain so that correlations stay far above rounding at n = 60
    A = Alphabet.finite([0, 1, 2])
    sticky = FiniteRangePotential.from_function(A, 2, lambda w: 3.0 * (w[..., 0] == w[..., 1]))
    orc = oracle_system(AprioriMeasure(A), sticky)
    phi = centered_first_coordinate(orc)
    c = exact_correlations(orc.P, phi, orc.pi, 61)
    lam2 = second_eigenvalue_modulus(orc.P, orc.pi)
    assert lam2 == pytest.approx(np.sort(np.abs(np.linalg.eigvals(orc.P)))[-2], abs=1e-9)
    assert abs(abs(c[61] / c[60]) - lam2) <= 1e-3
    # the n-th root carries a C^(1/n) factor, so it approaches lambda_2 only at rate 1/n
    root = lambda n: abs(c[n]) ** (1 / n)
    assert abs(root(60) - lam2) < abs(root(30) - lam2) and abs(root(60) - lam2) <= 0.01


def test_transfer_power_and_cesaro():
    orc = oracle_system(MU, field(1.0))
    lam = (1 + math.e) / 2
    assert np.allclose(exact_transfer_power(orc.tm, np.ones(2), 5), lam ** 5, rtol=1e-13)
    assert np.allclose(exact_cesaro(orc.tm, lam, 10), 11 / 10, rtol=1e-13)


def test_oracle_normalized_system_has_unit_drift():
    sys = oracle_system(MU, pair(0.5)).normalized_system(12)
    assert sys.accepted and sys.diagnostics.sup_drift <= 1e-12


def test_equivalence_grid_small_run_is_reproducible():
    a = equivalence_grid(cases=15, seed=0)
    b = equivalence_grid(cases=15, seed=0)
    assert [c.estimate for c in a.cases] == [c.estimate for c in b.cases]
    assert {c.quantity for c in a.cases} == {"transfer_power", "spectral_radius", "eigenfunction_ratio",
                                             "sigma2", "correlation"}
    assert a.rate >= 14 / 15
