import math

import numpy as np
import pytest

from transferlab.oracle import exact_cesaro, exact_transfer_power, oracle_system
from transferlab.potential import (ConstantPotential, DysonSphere, FiniteRangePotential, coordinate_observable)
from transferlab.rng import substream
from transferlab.space import Alphabet, AprioriMeasure, ContractViolation, sample_configs
from transferlab.transfer import (CesaroEigenfunction, FullShift, NormalizeConfig, TransferEstimate, apply_transfer,
                                  apply_transfer_n, eigenfunction_eval, normalize, spectral_radius, transfer_batch)

BIN = Alphabet.finite([0, 1])
MU = AprioriMeasure(BIN)
KER = FullShift(MU)
ONE = lambda z: np.ones(z.shape[0])


def field(beta):
    return FiniteRangePotential.from_function(BIN, 1, lambda w: beta * w[..., 0])


def pair(beta=1.0):
    return FiniteRangePotential.from_function(BIN, 2, lambda w: beta * w[..., 0] * w[..., 1])


def test_exact_estimates_carry_zero_error():
    with pytest.raises(ContractViolation):
        TransferEstimate(1.0, 0.1, 0, True)


def test_constant_potential_transfer():
    est = apply_transfer(KER, ConstantPotential(BIN, 0.4), ONE, np.zeros(5))
    assert est.exact and est.value == pytest.approx(math.exp(0.4), rel=1e-15)


def test_field_potential_transfer():
    for beta in (-1.0, 0.3, 2.0):
        est = apply_transfer(KER, field(beta), ONE, np.ones(4))
        assert est.value == pytest.approx((1 + math.exp(beta)) / 2, rel=1e-14)


def test_transfer_positivity_monte_carlo():
    f = DysonSphere(3.0, 2)
    ker = FullShift(AprioriMeasure(f.alphabet))
    X = sample_configs(ker.apriori, 20, 16, substream(0, "pos"))
    phi = lambda z: z[:, 0, 0] ** 2
    v, _, _ = transfer_batch(ker, f, phi, X, 200, substream(0, "pos-mc"))
    assert np.all(v >= 0)


def test_transfer_is_linear_under_common_random_numbers():
    f = DysonSphere(3.0, 2)
    ker = FullShift(AprioriMeasure(f.alphabet))
    x = sample_configs(ker.apriori, 1, 16, substream(0, "lin"))[0]
    phi, psi = coordinate_observable(f.alphabet), lambda z: z[:, 1, 1]
    both = lambda z: 2.0 * phi(z) - 3.0 * psi(z)
    a = apply_transfer(ker, f, phi, x, 500, substream(1, "crn")).value
    b = apply_transfer(ker, f, psi, x, 500, substream(1, "crn")).value
    c = apply_transfer(ker, f, both, x, 500, substream(1, "crn")).value
    assert c == pytest.approx(2 * a - 3 * b, abs=1e-12)


def test_iterate_n1_agrees_with_single_step():
    f = DysonSphere(3.0, 2)
    ker = FullShift(AprioriMeasure(f.alphabet))
    x = sample_configs(ker.apriori, 1, 16, substream(0, "n1"))[0]
    phi = lambda z: 1.0 + z[:, 0, 0]
    one = apply_transfer(ker, f, phi, x, 20_000, substream(0, "a"))
    it = apply_transfer_n(ker, f, phi, x, 1, 20_000, substream(0, "b"), method="paths")
    assert abs(one.value - it.value) <= 3 * math.hypot(one.std_error, it.std_error)


def test_constant_potential_iterate():
    est = apply_transfer_n(KER, ConstantPotential(BIN, 0.3), ONE, np.zeros(6), 5)
    assert est.exact and est.value == pytest.approx(math.exp(1.5), rel=1e-14)


def test_pair_potential_iterate_matches_matrix_power():
    f = pair(1.0)
    orc = oracle_system(MU, f)
    x = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0])
    exact = exact_transfer_power(orc.tm, np.ones(orc.space.size), 8)[orc.space.index_of(x[None])[0]]
    enum = apply_transfer_n(KER, f, ONE, x, 8)
    assert enum.exact and enum.value == pytest.approx(exact, rel=1e-12)
    for method in ("smc", "paths"):
        est = apply_transfer_n(KER, f, ONE, x, 8, 100_000, substream(0, method), method=method)
        assert abs(est.value - exact) <= 3 * est.std_error


def test_spectral_radius_closed_forms():
    rc = spectral_radius(KER, ConstantPotential(BIN, 0.25), np.zeros(40), 16)
    assert rc.value == pytest.approx(math.exp(0.25), rel=1e-12)
    rf = spectral_radius(KER, field(1.0), np.zeros(40), 12)
    assert rf.value == pytest.approx((1 + math.e) / 2, rel=1e-12)


def test_spectral_radius_pair_potential():
    orc = oracle_system(MU, pair(1.0))
    ex = spectral_radius(KER, pair(1.0), np.ones(40), 12)
    assert ex.value == pytest.approx(orc.perron.lam, rel=1e-3)
    mc = spectral_radius(KER, pair(1.0), np.ones(80), 32, 20_000, substream(0, "rho"), method="smc")
    assert abs(mc.value - orc.perron.lam) <= 3 * mc.std_error + 2e-3


def test_eigenfunction_constant_potential_is_flat():
    # (1/n) sum_{j=0}^{n} of n + 1 unit terms; f_bar only sees ratios of h, so the constant is harmless
    c = 0.6
    for n in (1, 5, 20):
        for x in (np.zeros(30), np.ones(30)):
            assert eigenfunction_eval(KER, ConstantPotential(BIN, c), math.exp(c), x, n) == \
                pytest.approx((n + 1) / n, rel=1e-12)


def test_eigenfunction_within_envelope():
    f = DysonSphere(3.0, 2)
    ker = FullShift(AprioriMeasure(f.alphabet))
    rho = spectral_radius(ker, f, sample_configs(ker.apriori, 1, 32, substream(0, "p"))[0], 16, 4000,
                          substream(0, "r")).value
    X = sample_configs(ker.apriori, 16, 32, substream(0, "env"))
    h = CesaroEigenfunction(ker, f, rho, 16, 2000, seed=3)
    v = h.log_values(X)
    lo, hi = -f.sup_norm * 16 - 16 * abs(math.log(rho)), f.sup_norm * 16 + 16 * abs(math.log(rho))
    assert np.all(np.isfinite(v)) and np.all((v >= lo) & (v <= hi))
    assert np.array_equal(v, CesaroEigenfunction(ker, f, rho, 16, 2000, seed=3).log_values(X))


def test_eigenfunction_ratio_matches_perron_vector():
    f = pair(1.0)
    orc = oracle_system(MU, f)
    h = CesaroEigenfunction(KER, f, orc.perron.lam, 64, 100_000, seed=0, method="smc")
    x, y = np.zeros(70), np.ones(70)
    ratio = float(h(x[None])[0] / h(y[None])[0])
    hv = orc.perron.h
    want = hv[orc.space.index_of(x[None])[0]] / hv[orc.space.index_of(y[None])[0]]
    assert ratio == pytest.approx(want, rel=0.02)
    cz = exact_cesaro(orc.tm, orc.perron.lam, 64)
    assert ratio == pytest.approx(cz[orc.space.index_of(x[None])[0]] / cz[orc.space.index_of(y[None])[0]], rel=0.02)


def test_transfer_ratios_are_comparable():
    # |f^n(w x) - f^n(w y)| <= |a_n (x_1 - y_1)| <= 1, so L^n 1(x) / L^n 1(y) lies in [1/e, e]
    f = pair(1.0)
    X = sample_configs(MU, 12, 20, substream(0, "cmp"))
    for n in (1, 4, 10):
        v = np.array([apply_transfer_n(KER, f, ONE, x, n).value for x in X])
        assert v.max() / v.min() <= math.e * (1 + 1e-12)


def test_normalize_constant_potential():
    sys = normalize(KER, ConstantPotential(BIN, 0.8), NormalizeConfig(depth=12, K_check=10))
    X = sample_configs(MU, 50, 12, substream(0, "c"))
    assert sys.accepted
    assert np.allclose(sys.fbar(X), 0.0, atol=1e-12)


def test_normalize_already_normalized_potential():
    q = np.array([0.3, 0.7])
    f = FiniteRangePotential(BIN, np.log(2 * q))
    sys = normalize(KER, f, NormalizeConfig(depth=12))
    X = sample_configs(MU, 50, 12, substream(0, "n"))
    assert sys.accepted and sys.lam == pytest.approx(1.0, abs=0.02)
    drift = sys.fbar(X) - f(X)
    assert np.ptp(drift) <= 1e-9 and abs(drift.mean()) <= 0.02


def test_normalize_pair_potential_matches_exact_normalization():
    f = pair(1.0)
    sys = normalize(KER, f, NormalizeConfig(depth=12))
    assert sys.accepted and sys.diagnostics.exact
    osys = oracle_system(MU, f).normalized_system(12)
    words = np.array([[a, b, c] + [0.0] * 9 for a in (0, 1) for b in (0, 1) for c in (0, 1)])
    assert np.max(np.abs(sys.fbar(words) - osys.fbar(words))) <= 0.01


def test_normalized_system_unit_drift_is_exact_on_finite_alphabets():
    f = pair(0.7)
    sys = normalize(KER, f, NormalizeConfig(depth=10))
    X = sample_configs(MU, 32, 10, substream(0, "u"))
    v, se, exact = sys.transfer(ONE, X)
    assert exact and np.all(se == 0)
    assert np.max(np.abs(v - 1)) == pytest.approx(sys.diagnostics.sup_drift, abs=0.02)


def test_normalize_refuses_dyson_below_flatness_threshold():
    f = DysonSphere(2.0, 2)
    with pytest.raises(ContractViolation, match="epsilon > 2"):
        normalize(FullShift(AprioriMeasure(f.alphabet)), f)
