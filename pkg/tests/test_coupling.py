import warnings

import numpy as np
import pytest

from transferlab.coupling import (DecayFunction, brute_force_assignment, coupling_cost_series, cost_matrix,
                                  dual_contraction_probe, fit_polynomial_decay, greedy_matching, sample_coupled,
                                  wasserstein_estimate, wasserstein_weighted, weighted_coupling_cost)
from transferlab.oracle import exact_pushforward, oracle_system
from transferlab.potential import ConstantPotential, FiniteRangePotential, ModulusOfContinuity
from transferlab.rng import substream
from transferlab.space import Alphabet, AprioriMeasure, Config, ContractViolation, config_distance, sample_configs
from transferlab.transfer import FullShift, NormalizeConfig, normalize

BIN = Alphabet.finite([0, 1])
MU = AprioriMeasure(BIN)
KER = FullShift(MU)
CIRCLE = Alphabet.sphere(2)
LIN = ModulusOfContinuity.power(1.0)


def test_coupled_identical_configs_stay_identical():
    x = Config(np.array([0.0, 1.0, 1.0, 0.0]), BIN)
    path = sample_coupled(KER, x, x, 5, substream(0, "id"))
    assert config_distance(path.x_n, path.y_n) == 0.0


def test_coupled_zero_steps_returns_endpoints():
    x, y = Config(np.zeros(6), BIN), Config(np.ones(6), BIN)
    path = sample_coupled(KER, x, y, 0, substream(0, "z"))
    assert path.x_n == x and path.y_n == y


def test_coupled_first_coordinate_difference_reindexes():
    x = Config(np.zeros(10), BIN)
    y = Config(np.concatenate([[1.0], np.zeros(9)]), BIN)
    for seed in range(5):
        path = sample_coupled(KER, x, y, 3, substream(seed, "c"))
        assert config_distance(path.x_n, path.y_n) == 0.0625
        assert path.shares_prefix() and path.contraction_holds()


def test_coupled_paths_contract_on_the_circle():
    mu = AprioriMeasure(CIRCLE)
    ker = FullShift(mu)
    rng = substream(0, "circle")
    for _ in range(200):
        n = int(rng.integers(0, 16))
        x, y = (Config(c, CIRCLE) for c in sample_configs(mu, 2, 12, rng))
        path = sample_coupled(ker, x, y, n, rng)
        assert path.shares_prefix() and path.contraction_holds()


def test_coupled_rejects_mismatched_inputs():
    with pytest.raises(ContractViolation):
        sample_coupled(KER, Config(np.zeros(4), BIN), Config(np.zeros(5), BIN), 1, substream(0, "m"))
    with pytest.raises(ContractViolation):
        sample_coupled(KER, Config(np.zeros(4), BIN), Config(np.zeros(4), BIN), -1, substream(0, "m"))


def test_decay_function_properties():
    F = DecayFunction(B=1.0, b=0.5, alpha=2.0)
    assert all(F.check_properties().values())
    assert F.linear_constant == pytest.approx(2 ** 0.5)
    assert F(0, 0.3) == pytest.approx(0.3 / 0.5 ** 0.5)
    for bad in ((0.5, 0.5, 1.0), (1.0, 1.5, 1.0), (1.0, 0.5, 0.0)):
        with pytest.raises(ContractViolation):
            DecayFunction(*bad)


def test_fit_exact_power_law():
    fit = fit_polynomial_decay([(n, n ** -2.0) for n in range(1, 40)])
    assert fit.exponent == pytest.approx(-2.0, abs=1e-12)
    assert fit.constant == pytest.approx(1.0, abs=1e-10)
    assert fit.n_range == (2, 39)


def test_fit_constant_series():
    fit = fit_polynomial_decay([(n, 0.7) for n in range(1, 20)])
    assert fit.exponent == pytest.approx(0.0, abs=1e-12)


def test_fit_drops_nonpositive_values_and_refuses_short_series():
    series = [(n, n ** -1.5 if n % 3 else -1.0) for n in range(1, 30)]
    with pytest.warns(UserWarning, match="nonpositive"):
        fit = fit_polynomial_decay(series)
    assert fit.exponent == pytest.approx(-1.5, abs=1e-12) and fit.dropped == 9
    with pytest.raises(ContractViolation):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit_polynomial_decay([(n, 1.0 if n < 5 else 0.0) for n in range(1, 20)])


def test_fit_drops_values_within_noise():
    series = [(n, n ** -2.0) for n in range(1, 30)]
    se = [0.0] * 10 + [1.0] * 19
    with pytest.warns(UserWarning, match="standard errors"):
        fit = fit_polynomial_decay(series, se)
    assert fit.n_range == (2, 10) and fit.points == 9


def test_coupling_cost_identical_configs_is_zero():
    x = np.zeros(8)
    est = weighted_coupling_cost(KER, ConstantPotential(BIN, 0.0), LIN, x, x, 4, 100, substream(0, "z"))
    assert est.value == 0.0 and est.exact


def test_coupling_cost_without_potential_is_deterministic_tail():
    mu = AprioriMeasure(CIRCLE)
    ker = FullShift(mu)
    D = 16
    x, y = sample_configs(mu, 2, D, substream(0, "xy"))
    d0 = config_distance(Config(x, CIRCLE), Config(y, CIRCLE))
    om = ModulusOfContinuity.log(2.0, CIRCLE.diameter)
    series = coupling_cost_series(ker, ConstantPotential(CIRCLE, 0.0), om, x, y, 10, 200, substream(0, "cost"))
    for n, est in enumerate(series, start=1):
        assert est.value <= om(np.array([2.0 ** -n * d0 + 2.0 ** -D]))[0] * (1 + 1e-12)


def test_normalized_coupling_cost_is_exact_and_decays():
    # x and y differ in the first coordinate only, so d(x_n, y_n) = 2^-(n+1) on every path and the
    # weights exp(fbar^n) integrate to one
    f = FiniteRangePotential.from_function(BIN, 2, lambda w: w[..., 0] * w[..., 1])
    sys = oracle_system(MU, f).normalized_system(24)
    x = np.zeros(24)
    y = x.copy()
    y[0] = 1.0
    series = coupling_cost_series(KER, sys.fbar, LIN, x, y, 12, 2000, substream(0, "nc"))
    for n, est in enumerate(series, start=1):
        assert abs(est.value - 2.0 ** -(n + 1)) <= 3 * est.std_error + 1e-9
    fit = fit_polynomial_decay([(n, e.value) for n, e in enumerate(series, start=1)])
    assert fit.exponent <= -1.2


def test_wasserstein_identical_samples_is_zero():
    a = sample_configs(AprioriMeasure(CIRCLE), 50, 8, substream(0, "w"))
    assert wasserstein_estimate(a, a, LIN, CIRCLE).value == 0.0


def test_wasserstein_single_atoms_is_cost():
    x, y = np.zeros((1, 6)), np.concatenate([[1.0], np.zeros(5)])[None]
    est = wasserstein_estimate(x, y, LIN, BIN)
    assert est.exact and est.value == 0.5


def test_exact_assignment_beats_greedy_on_crafted_instance():
    line = Alphabet.real_line()
    a = np.array([0.0, 0.25, 5.0, 10.0])[:, None]
    b = np.array([0.225, 0.4875, 5.0, 10.0])[:, None]
    cost = cost_matrix(a, b, LIN, line)
    exact = wasserstein_estimate(a, b, LIN, line)
    assert exact.exact
    assert exact.value == pytest.approx(brute_force_assignment(cost), abs=1e-15)
    assert exact.value < greedy_matching(cost)


def test_weighted_transport_matches_assignment_for_uniform_weights():
    a = sample_configs(MU, 6, 5, substream(0, "wa"))
    b = sample_configs(MU, 6, 5, substream(0, "wb"))
    w = np.ones(6)
    lp = wasserstein_weighted(a, w, b, w, LIN, BIN)
    assert lp == pytest.approx(wasserstein_estimate(a, b, LIN, BIN).value, abs=1e-12)


@pytest.fixture(scope="module")
def iid():
    return normalize(KER, ConstantPotential(BIN, 0.0), NormalizeConfig(depth=10))


def test_dual_probe_identical_seeds_is_zero(iid):
    A = sample_configs(MU, 64, 10, substream(0, "seed"))
    rep = dual_contraction_probe(iid, A, A, 6, LIN, substream(0, "dual"))
    assert np.all(rep.distances == 0.0)


def test_dual_probe_point_masses_contract(iid):
    m, D = 64, 10
    x, y = np.zeros(D), np.ones(D)
    rep = dual_contraction_probe(iid, np.repeat(x[None], m, 0), np.repeat(y[None], m, 0), 8, LIN,
                                 substream(0, "pm"))
    d0 = config_distance(Config(x, BIN), Config(y, BIN))
    bound = 2.0 ** -rep.ns * d0 + 2.0 ** -D
    assert np.all(rep.distances <= bound + rep.noise_floor + 1e-15)
    assert rep.bounded and rep.decreasing


def test_dual_probe_matches_exact_pushforward():
    f = FiniteRangePotential.from_function(BIN, 2, lambda w: w[..., 0] * w[..., 1])
    orc = oracle_system(MU, f)
    sys = orc.normalized_system(10)
    x, y, m = np.zeros(10), np.ones(10), 256
    rep = dual_contraction_probe(sys, np.repeat(x[None], m, 0), np.repeat(y[None], m, 0), 8, LIN,
                                 substream(0, "dual"))
    for n in range(9):
        ax, wx = exact_pushforward(orc.P, orc.space, x, n)
        ay, wy = exact_pushforward(orc.P, orc.space, y, n)
        exact = wasserstein_weighted(ax, wx, ay, wy, LIN, BIN)
        assert abs(exact - rep.distances[n]) <= 2 * rep.noise_floor[n] + 1e-12
