import copy
import math

import numpy as np
import pytest
from scipy import stats

from transferlab.chains import (AcceptanceStats, ChainState, acceptance_floor, birkhoff_vs_chain_check,
                                breiman_average, config_ball_metric, cylinder_balls, empirical_stationarity,
                                run_phi, run_psi, step_phi, step_psi, support_probe)
from transferlab.oracle import exact_sum_distribution, oracle_system
from transferlab.potential import ConstantPotential, FiniteRangePotential, constant_observable, coordinate_observable
from transferlab.rng import substream
from transferlab.space import Alphabet, AprioriMeasure, Config, ContractViolation, config_distance, sample_configs
from transferlab.systems import WeightedShiftSystem
from transferlab.transfer import FullShift, NormalizeConfig, normalize

BIN = Alphabet.finite([0, 1])
MU = AprioriMeasure(BIN)
KER = FullShift(MU)
X1 = coordinate_observable(BIN)


def pair(beta=1.0):
    return FiniteRangePotential.from_function(BIN, 2, lambda w: beta * w[..., 0] * w[..., 1])


@pytest.fixture(scope="module")
def iid():
    return normalize(KER, ConstantPotential(BIN, 0.0), NormalizeConfig(depth=12))


@pytest.fixture(scope="module")
def oracle_pair():
    orc = oracle_system(MU, pair(1.0))
    return orc, orc.normalized_system(12)


def test_phi_first_coordinate_frequency():
    _, rec = run_phi(KER, np.zeros((1, 8)), 100_000, substream(0, "freq"), record=lambda z: z[:, 0])
    assert 0.494 <= np.mean(rec == 0) <= 0.506


def test_phi_prefix_is_reversed_word():
    n = 6
    states, _ = run_phi(KER, np.full((1, 10), 1.0), n, substream(3, "word"))
    g = substream(3, "word")
    word = [KER.draw(g, 1)[0] for _ in range(n)]
    assert np.array_equal(states[0, :n], word[::-1])
    assert np.all(states[0, n:] == 1.0)


def test_step_phi_keeps_the_generator_and_counts_steps():
    s = ChainState(Config(np.zeros(5), BIN), 0, substream(0, "s"))
    for _ in range(3):
        s = step_phi(KER, s)
    assert s.step == 3 and s.current.depth == 5 and np.all(s.current.coords[3:] == 0)


def test_weighted_shift_tail_is_deterministic():
    wsys = WeightedShiftSystem((2.0,), dim=16)
    ker = wsys.kernel()
    x = np.zeros((1, 16))
    x[0, 0] = 1.0
    for n in range(1, 8):
        x = ker.advance(x, ker.draw(substream(n, "ws"), 1))
        assert x[0, n] == 2.0 ** -n
        assert np.all(x[0, n + 1:] == 0)


def test_shared_randomness_contracts_distance():
    mu = AprioriMeasure(Alphabet.sphere(2))
    ker = FullShift(mu)
    D = 12
    X = sample_configs(mu, 2, D, substream(0, "pair"))
    d0 = config_distance(Config(X[0], mu.alphabet), Config(X[1], mu.alphabet))
    for n in range(1, 15):
        a = run_phi(ker, X[:1], n, substream(7, "shared"))[0][0]
        b = run_phi(ker, X[1:], n, substream(7, "shared"))[0][0]
        assert config_distance(Config(a, mu.alphabet), Config(b, mu.alphabet)) <= 2.0 ** -n * d0 + 2.0 ** -D


def test_psi_with_zero_fbar_matches_phi():
    circle = Alphabet.sphere(2)
    ker = FullShift(AprioriMeasure(circle))
    sys = normalize(ker, ConstantPotential(circle, 0.3), NormalizeConfig(depth=8))
    x0 = sample_configs(ker.apriori, 10_000, 8, substream(0, "x0"))
    psi = run_psi(sys, x0, 1, substream(0, "psi"))[0][:, 0, 0]
    phi = run_phi(ker, x0, 1, substream(0, "phi"))[0][:, 0, 0]
    assert stats.ks_2samp(psi, phi).statistic <= 0.03


def test_psi_transitions_match_oracle(oracle_pair):
    orc, sys = oracle_pair
    space = orc.space
    X = sample_configs(MU, 1000, 12, substream(0, "tr-start"))
    rng = substream(0, "tr")
    counts = np.zeros((space.size, space.size))
    for _ in range(100):
        Y = run_psi(sys, X, 1, rng)[0]
        np.add.at(counts, (space.index_of(X[:, :2]), space.index_of(Y[:, :2])), 1)
        X = Y
    assert counts.sum() == 100_000
    rows = counts.sum(axis=1)
    freq = counts / rows[:, None]
    band = 3 * np.sqrt(orc.P * (1 - orc.P) / rows[:, None])
    assert np.all(np.abs(freq - orc.P) <= band + 1e-12)


def test_acceptance_rate_respects_floor(oracle_pair):
    _, sys = oracle_pair
    st = AcceptanceStats()
    run_psi(sys, sample_configs(MU, 500, 12, substream(0, "acc")), 20, substream(1, "acc"), stats=st)
    assert st.proposals >= 10_000 and st.rate >= acceptance_floor(sys)


def test_step_psi_requires_accepted_system(oracle_pair):
    _, sys = oracle_pair
    s = step_psi(sys, ChainState(Config(np.zeros(12), BIN), 0, substream(0, "one")))
    assert s.step == 1 and s.current.coords[0] in (0.0, 1.0)
    bad = copy.copy(sys)
    bad.tolerance = -1.0
    with pytest.raises(ContractViolation):
        step_psi(bad, s)


def test_birkhoff_vs_chain_constant_is_point_mass(iid):
    rep = birkhoff_vs_chain_check(iid, constant_observable(BIN, 2.0), 10, 300, substream(0, "bc"), burn_in=10)
    assert rep.ks == 0.0 and np.all(rep.chain_sums == 20.0) and np.all(rep.birkhoff_sums == 20.0)


def test_birkhoff_vs_chain_iid_binomial(iid):
    n, R = 20, 2000
    rep = birkhoff_vs_chain_check(iid, X1, n, R, substream(0, "bin"), burn_in=10)
    assert rep.accepted
    cdf = stats.binom(n, 0.5).cdf
    for sums in (rep.chain_sums, rep.birkhoff_sums):
        assert stats.kstest(sums, cdf).statistic <= 1.63 / math.sqrt(R) + stats.binom(n, 0.5).pmf(n // 2)


def _discrete_ks(sample, law):
    support = np.array(list(law))
    cdf = np.cumsum(list(law.values()))
    emp = np.searchsorted(np.sort(sample), support + 1e-9, side="right") / len(sample)
    return float(np.max(np.abs(emp - cdf)))


def test_birkhoff_vs_chain_matches_oracle_sum_law(oracle_pair):
    orc, sys = oracle_pair
    n, R = 12, 2000
    rep = birkhoff_vs_chain_check(sys, X1, n, R, substream(0, "orc-bc"), burn_in=200)
    law = exact_sum_distribution(orc.P, orc.pi, orc.space.words()[:, 0], n)
    assert rep.accepted
    assert _discrete_ks(rep.chain_sums, law) <= 1.63 / math.sqrt(R)
    assert _discrete_ks(rep.birkhoff_sums, law) <= 1.63 / math.sqrt(R)


def test_breiman_constant_is_exactly_zero(iid):
    one = constant_observable(BIN)
    for model in (KER, iid):
        res = breiman_average(model, one, 200, substream(0, "b1"), chains=4, depth=12)
        assert np.all(res.averages == 0.0)


def test_breiman_iid_average_vanishes():
    n = 10_000
    res = breiman_average(KER, X1, n, substream(0, "b2"), chains=2, depth=8)
    assert res.within and np.all(res.final <= 4 / math.sqrt(n))


def test_breiman_oracle_operator_and_bound(oracle_pair):
    orc, sys = oracle_pair
    X = sample_configs(MU, 64, 12, substream(0, "pphi"))
    pv, _, exact = sys.transfer(X1, X)
    want = (orc.P @ orc.space.words()[:, 0])[orc.space.index_of(X[:, :2])]
    assert exact and np.max(np.abs(pv - want)) <= 1e-12
    res = breiman_average(sys, X1, 4000, substream(0, "b3"), chains=2, depth=12)
    assert res.within


def test_stationarity_constant_has_zero_discrepancy(iid):
    rep = empirical_stationarity(iid, [constant_observable(BIN)], 200, substream(0, "st1"), depth=12)
    assert rep.discrepancy[0] == 0.0 and rep.accepted


def test_stationarity_oracle_mean(oracle_pair):
    orc, sys = oracle_pair
    rep = empirical_stationarity(sys, [X1], 2000, substream(0, "st2"), depth=12, burn_in=100, chains=8)
    exact = float(orc.pi @ orc.space.words()[:, 0])
    assert rep.accepted
    assert abs(rep.nu[0] - exact) <= 3 * rep.std_error[0]


def _bin_stepper(x, rng):
    return KER.advance(x[None], KER.draw(rng, 1))[0]


def test_support_all_cylinders_hit():
    balls = cylinder_balls(BIN, 3, 10)
    assert len(balls) == 8
    rep = support_probe(_bin_stepper, balls, 10_000, substream(0, "cyl"), np.zeros(10), config_ball_metric(BIN))
    assert rep.all_hit and np.all(rep.hits >= 10_000 / 8 * 0.8)


def test_support_ball_at_start_is_hit_at_step_zero():
    start = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 0.0])
    rep = support_probe(_bin_stepper, [(start, 1.0)], 5, substream(0, "b0"), start, config_ball_metric(BIN))
    assert rep.first_hit[0] == 0


def test_support_rejects_unresolvable_balls():
    with pytest.raises(ContractViolation):
        support_probe(_bin_stepper, [(np.zeros(6), 0.01)], 5, substream(0, "r"), np.zeros(6),
                      config_ball_metric(BIN), min_radius=2.0 ** -6)
