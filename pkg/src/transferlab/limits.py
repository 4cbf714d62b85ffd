"""Poisson equation, limit variance, FCLT path simulation and Donsker-style tests.

The Poisson solution is the truncated Neumann series u_N = sum_{n<=N} P^n phi,
which solves (I - P) u = phi up to the tail P^{N+1} phi.  On finite
alphabets with finite-range data the iterates are computed exactly on
cylinder tables; otherwise P^n phi(x) is the average of phi along Psi chains
started at x, with common random numbers across starting points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from .chains import AcceptanceStats, CrnPool, psi_advance, run_psi, stationary_states
from .coupling import DecayFit, fit_polynomial_decay
from .potential import Observable
from .rng import child_seed, substream
from .space import ContractViolation, sample_configs
from .transfer import NormalizedSystem

T_GRID = (0.25, 0.5, 0.75, 1.0)


def _require(sys: NormalizedSystem):
    if not sys.accepted:
        raise ContractViolation("the normalized system failed its unit-drift check")


# ---------------------------------------------------------------------------
# centering


@dataclass(frozen=True)
class Centering:
    observable: Observable
    mean: float
    std_error: float
    bound: float               # 4 |phi|_inf / sqrt(n_est)


def center_observable(sys: NormalizedSystem, phi: Observable, n_est: int, rng: np.random.Generator,
                      chains: int = 64, burn_in: int = 1000, depth: int = 16) -> Centering:
    """phi - mu(phi) with mu(phi) the long-run Psi average over n_est chain steps."""
    _require(sys)
    steps = max(1, n_est // chains)
    depth = max(depth, sys.fbar.min_depth + 1)
    X = stationary_states(sys, chains, depth, burn_in, rng)
    _, rec = run_psi(sys, X, steps, rng, record=phi)
    per_chain = rec.mean(axis=0)
    mean = float(per_chain.mean())
    se = float(per_chain.std(ddof=1) / math.sqrt(chains)) if chains > 1 else math.inf
    return Centering(phi.centered(mean), mean, se, 4.0 * phi.sup_norm / math.sqrt(steps * chains))


# ---------------------------------------------------------------------------
# iterates of P


class CylinderOperator:
    """P = L_fbar restricted to functions of the first L coordinates (finite alphabets).

    Exact whenever phi reads at most L coordinates and f_bar at most L + 1.
    """

    def __init__(self, sys: NormalizedSystem, length: int):
        A = sys.alphabet
        s, L = A.size, length
        self.sys, self.length, self.s = sys, L, s
        pts = np.asarray(A.points)
        self.words = pts[np.indices((s,) * L).reshape(L, -1).T]
        depth = max(L + 1, sys.fbar.min_depth)
        pad = np.full((len(self.words), depth), pts[0])
        pad[:, :L] = self.words
        S = len(self.words)
        logw = np.log(sys.kernel.apriori.weight_array)
        Q = np.zeros((S, S))
        ctx = sys.prepare(pad)
        base = sys.log_normalizer(pad)
        for ai, a in enumerate(pts):
            lt = sys.log_target(ctx, np.arange(S), np.full(S, a)) - base
            succ = ai * s ** (L - 1) + np.arange(S) // s if L > 0 else np.zeros(S, int)
            np.add.at(Q, (np.arange(S), succ), np.exp(logw[ai] + lt))
        self.matrix = Q
        self._radix = s ** np.arange(L - 1, -1, -1)

    def index(self, states: np.ndarray) -> np.ndarray:
        return self.sys.alphabet.index_of(np.asarray(states)[..., :self.length]) @ self._radix

    def tabulate(self, phi: Callable) -> np.ndarray:
        return np.asarray(phi(self.words), dtype=float)


def _cylinder_length(sys: NormalizedSystem, phi) -> int | None:
    if not sys.alphabet.is_finite:
        return None
    sd_phi = getattr(phi, "support_depth", None)
    sd_f = sys.fbar.support_depth
    if sd_phi is None or sd_f is None:
        return None
    L = max(sd_phi, sd_f - 1, 1)
    return L if sys.alphabet.size ** L <= 4096 else None


def psi_paths(sys: NormalizedSystem, starts: np.ndarray, chains: int, steps: int, phi: Callable,
              rng: np.random.Generator | None = None, pool: CrnPool | None = None) -> np.ndarray:
    """phi along ``chains`` Psi chains from each start: shape (steps + 1, starts, chains).

    Entry 0 is phi at the start itself.  With a pool, chain j of every start
    uses pool row j (common random numbers).
    """
    P = len(starts)
    X = np.repeat(starts, chains, axis=0)
    rows = np.tile(np.arange(chains), P) if pool is not None else None
    _, rec = run_psi(sys, X, steps, rng, record=phi, pool=pool, pool_rows=rows)
    first = np.asarray(phi(starts), dtype=float)
    out = np.empty((steps + 1, P, chains))
    out[0] = first[:, None]
    out[1:] = rec.reshape(steps, P, chains)
    return out


# ---------------------------------------------------------------------------
# Poisson equation


@dataclass
class PoissonSolution:
    """u_N = sum_{n=0}^{N} P^n phi with a residual check on probes."""

    sys: NormalizedSystem
    phi: Observable
    N: int
    exact: bool
    residual_bound: float              # fitted tail sum_{n>N} C n^e (inf if no fit)
    probe_residuals: np.ndarray
    probe_tolerance: np.ndarray
    decay: DecayFit | None = None
    K: int = 0
    seed: int = 0
    table: np.ndarray | None = None
    operator: CylinderOperator | None = None

    @property
    def accepted(self) -> bool:
        return bool(np.all(self.probe_residuals <= self.probe_tolerance))

    def terms(self, states: np.ndarray, steps: int | None = None, chains: int | None = None,
              rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        """P^n phi(x) for n = 0..steps at each state, with standard errors: (steps + 1, B)."""
        steps = self.N if steps is None else steps
        states = np.asarray(states, dtype=float)
        if self.exact:
            g = self.operator.tabulate(self.phi)
            idx = self.operator.index(states)
            out = []
            for _ in range(steps + 1):
                out.append(g[idx])
                g = self.operator.matrix @ g
            vals = np.asarray(out)
            return vals, np.zeros_like(vals)
        K = chains or self.K
        pool = CrnPool(self.sys.kernel, self.seed, K, label="poisson") if rng is None else None
        paths = psi_paths(self.sys, states, K, steps, self.phi, rng, pool)
        se = paths.std(axis=2, ddof=1) / math.sqrt(K) if K > 1 else np.full(paths.shape[:2], np.inf)
        return paths.mean(axis=2), se

    def evaluate(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """u_N at each state with a standard error from per-chain sums (zero when exact)."""
        states = np.asarray(states, dtype=float)
        if self.exact:
            return self.terms(states)[0].sum(axis=0), np.zeros(len(states))
        pool = CrnPool(self.sys.kernel, self.seed, self.K, label="poisson")
        sums = psi_paths(self.sys, states, self.K, self.N, self.phi, None, pool).sum(axis=0)
        return sums.mean(axis=1), sums.std(axis=1, ddof=1) / math.sqrt(self.K)

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return self.evaluate(states)[0]


def tail_sum(fit: DecayFit, N: int) -> float:
    """sum_{n>N} C n^exponent (finite only for exponent < -1)."""
    if fit.exponent >= -1:
        return math.inf
    return float(fit.constant * special.zeta(-fit.exponent, N + 1))


def choose_truncation(fit: DecayFit, c0: float, fraction: float = 0.05, n_cap: int = 512, n_floor: int = 1) -> int:
    """Smallest N >= n_floor whose fitted tail 2 sum_{n>N} C n^e is at most ``fraction`` of c0 + 2 sum_{n<=N} C n^e."""
    if fit.exponent >= -1:
        raise ContractViolation(f"correlation decay exponent {fit.exponent:.3g} >= -1: the series is not summable")
    head = c0
    for N in range(1, n_cap + 1):
        head += 2.0 * fit.constant * N ** fit.exponent
        if N >= n_floor and 2.0 * tail_sum(fit, N) <= fraction * abs(head):
            return N
    return n_cap


def solve_poisson(sys: NormalizedSystem, phi: Observable, N: int | None = None, probes: np.ndarray | None = None,
                  K: int = 64, rng: np.random.Generator | None = None, decay: DecayFit | None = None,
                  c0: float | None = None, seed: int = 0, method: str = "auto") -> PoissonSolution:
    """Truncated Neumann series for (I - P) u = phi.

    ``decay`` is a fit of the correlation decay; its exponent must be below
    -1.  When N is not given it is chosen from the fit so the tail is at most
    5% of the partial sum (``c0`` is mu(phi^2)).
    """
    _require(sys)
    if decay is not None and decay.exponent >= -1:
        raise ContractViolation(f"correlation decay exponent {decay.exponent:.3g} >= -1: the series is not summable")
    if N is None:
        if decay is None or c0 is None:
            raise ContractViolation("choosing N needs a decay fit and mu(phi^2)")
        N = choose_truncation(decay, c0)
    L = _cylinder_length(sys, phi) if method in ("auto", "exact") else None
    if method == "exact" and L is None:
        raise ContractViolation("exact iterates need finite-range data on a finite alphabet")
    op = CylinderOperator(sys, L) if L is not None else None
    sol = PoissonSolution(sys, phi, int(N), op is not None, tail_sum(decay, N) if decay else math.inf,
                          np.zeros(0), np.zeros(0), decay, K, seed, operator=op)
    if probes is None:
        depth = max(16, sys.fbar.min_depth + 1)
        probes = sample_configs(sys.kernel.apriori, 8, depth, substream(seed, "poisson-probes"))
    # residual u - P u - phi = -P^{N+1} phi, from the same iterates
    vals, se = sol.terms(probes, N + 1, rng=rng)
    res = np.abs(vals[-1])
    tol = (0.0 if math.isinf(sol.residual_bound) else sol.residual_bound) + 3.0 * se[-1] + 1e-12
    if sol.exact:
        tol = np.full(len(probes), 1e-8)
    elif math.isinf(sol.residual_bound):
        tol = 3.0 * se[-1] + 4.0 * phi.sup_norm / math.sqrt(max(K, 1))
    sol.probe_residuals, sol.probe_tolerance = res, np.broadcast_to(tol, res.shape).copy()
    return sol


# ---------------------------------------------------------------------------
# variance


@dataclass(frozen=True)
class VarianceReport:
    sigma2: float                 # mu(u^2) - mu((P u)^2)
    std_error: float
    sigma2_gk: float              # mu(phi^2) + 2 sum_n mu(phi P^n phi)
    std_error_gk: float
    sigma2_alt: float             # mu(u^2) - (mu(P u))^2, the other reading of the formula
    correlations: np.ndarray      # mu(phi P^n phi), n = 0..N
    correlation_errors: np.ndarray
    points: int
    consistent: bool
    rejected: bool


def variance(sys: NormalizedSystem, sol: PoissonSolution, n_est: int, rng: np.random.Generator,
             chains: int = 32, burn_in: int = 1000, depth: int = 16,
             points: np.ndarray | None = None) -> VarianceReport:
    """Limit variance by both formulas over n_est independent stationary points.

    ``points`` may supply the stationary points directly (n_est is then ignored).

    With Monte Carlo iterates, u and P u at each point come from two
    independent halves of the chains, so u_A u_B and (P u)_A (P u)_B are
    unbiased for u^2 and (P u)^2.
    """
    _require(sys)
    if points is None:
        depth = max(depth, sys.fbar.min_depth + 1)
        Z = stationary_states(sys, n_est, depth, burn_in, rng)
    else:
        Z = np.asarray(points, dtype=float)
    N = sol.N
    if sol.exact:
        vals, _ = sol.terms(Z, N + 1)
        u = vals[:N + 1].sum(axis=0)
        Pu = vals[1:].sum(axis=0)
        sq, psq = u * u, Pu * Pu
        phi0 = vals[0]
        lag = phi0[None, :] * vals[:N + 1]
        mean_pu = Pu
    else:
        if chains < 2:
            raise ContractViolation("Monte Carlo variance needs at least two chains per point")
        paths = psi_paths(sys, Z, chains, N + 1, sol.phi, rng)       # (N + 2, n_est, chains)
        h = chains // 2
        A, B = paths[..., :h].mean(axis=2), paths[..., h:2 * h].mean(axis=2)
        uA, uB = A[:N + 1].sum(axis=0), B[:N + 1].sum(axis=0)
        pA, pB = A[1:].sum(axis=0), B[1:].sum(axis=0)
        sq, psq = uA * uB, pA * pB
        m = paths.mean(axis=2)
        phi0 = m[0]
        lag = phi0[None, :] * m[:N + 1]
        mean_pu = 0.5 * (pA + pB)
    terms = sq - psq
    n = len(terms)
    s2 = float(terms.mean())
    se = float(terms.std(ddof=1) / math.sqrt(n))
    corr = lag.mean(axis=1)
    corr_se = lag.std(axis=1, ddof=1) / math.sqrt(n)
    gk_terms = lag[0] + 2.0 * lag[1:].sum(axis=0)
    gk = float(gk_terms.mean())
    gk_se = float(gk_terms.std(ddof=1) / math.sqrt(n))
    alt = float(sq.mean() - mean_pu.mean() ** 2)
    tail = 0.0 if math.isinf(sol.residual_bound) else 2.0 * sol.residual_bound * sol.phi.sup_norm
    consistent = abs(s2 - gk) <= 3.0 * math.hypot(se, gk_se) + tail + 1e-12
    rejected = not (s2 > 0 and s2 > 3.0 * se)
    return VarianceReport(s2, se, gk, gk_se, alt, corr, corr_se, n, bool(consistent), bool(rejected))


@dataclass
class StationaryRun:
    """phi along R stationary Psi chains: values[j, r] = phi(Z_j) of chain r, j = 0..n."""

    values: np.ndarray
    snapshots: dict            # step -> (R, depth, ...) chain states at that step
    acceptance: float


def _run_chunk(sys, phi, count, n, seed, label, index, burn_in, depth, keep):
    rng = substream(seed, label, index)
    stats = AcceptanceStats()
    Z = stationary_states(sys, count, depth, burn_in, rng, stats)
    vals = np.empty((n + 1, count))
    vals[0] = phi(Z)
    snaps = {}
    if 0 in keep:
        snaps[0] = Z
    for t in range(1, n + 1):
        Z = psi_advance(sys, Z, rng, stats=stats)
        vals[t] = phi(Z)
        if t in keep:
            snaps[t] = Z
    return vals, snaps, stats.accepted, stats.proposals


def stationary_run(sys: NormalizedSystem, phi: Observable, R: int, n: int, seed: int,
                   burn_in: int = 1000, depth: int = 16, keep: Sequence[int] = (), chunk: int = 50,
                   workers: int = 1, label: str = "stationary-run") -> StationaryRun:
    """R independent stationary Psi chains of length n, run in chunks with their own substreams.

    Chunk k always uses substream (seed, label, k), so the output does not
    depend on the number of workers.
    """
    _require(sys)
    depth = max(depth, sys.fbar.min_depth + 1)
    keep = set(int(k) for k in keep)
    sizes = [min(chunk, R - lo) for lo in range(0, R, chunk)]
    args = [(sys, phi, c, n, seed, label, k, burn_in, depth, keep) for k, c in enumerate(sizes)]
    if workers > 1 and len(args) > 1:
        from joblib import Parallel, delayed
        parts = Parallel(n_jobs=workers)(delayed(_run_chunk)(*a) for a in args)
    else:
        parts = [_run_chunk(*a) for a in args]
    values = np.concatenate([p[0] for p in parts], axis=1)
    snaps = {k: np.concatenate([p[1][k] for p in parts]) for k in sorted(keep)}
    acc = sum(p[2] for p in parts) / max(sum(p[3] for p in parts), 1)
    return StationaryRun(values, snaps, float(acc))


def lag_correlations(values: np.ndarray, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Time-averaged mu(phi P^n phi) for n = 0..n_max from (T, R) chain values.

    Each chain gives one time average per lag; the standard error comes from
    the spread across the independent chains.
    """
    v = np.asarray(values, dtype=float)
    T, R = v.shape
    if n_max >= T:
        raise ContractViolation("n_max must be shorter than the chains")
    per = np.empty((n_max + 1, R))
    for k in range(n_max + 1):
        per[k] = np.mean(v[:T - k] * v[k:], axis=0)
    se = per.std(axis=1, ddof=1) / math.sqrt(R) if R > 1 else np.full(n_max + 1, np.inf)
    return per.mean(axis=1), se


def green_kubo(corr: np.ndarray, corr_se: np.ndarray, N: int) -> tuple[float, float]:
    """mu(phi^2) + 2 sum_{n=1}^{N} mu(phi P^n phi) with a conservative (additive) error."""
    return float(corr[0] + 2.0 * corr[1:N + 1].sum()), float(corr_se[0] + 2.0 * corr_se[1:N + 1].sum())


def correlation_series(sys: NormalizedSystem, phi: Observable, n_max: int, chains: int, length: int,
                       seed: int, burn_in: int = 1000, depth: int = 16, workers: int = 1):
    """mu(phi P^n phi) for n = 0..n_max from time averages along stationary chains, phi centered by the grand mean."""
    run = stationary_run(sys, phi, chains, length, seed, burn_in, depth, workers=workers, label="correlations")
    return lag_correlations(run.values - run.values.mean(), n_max)


# ---------------------------------------------------------------------------
# FCLT


def paths_from_values(values: np.ndarray, sigma: float, n: int, t_grid: Sequence[float] = T_GRID) -> np.ndarray:
    """Y_n(t) = (1/(sigma sqrt n)) sum_{j=0}^{[nt]} phi(Z_j) from (n + 1, R) chain values; shape (R, len(t_grid))."""
    if sigma <= 0:
        raise ContractViolation("sigma must be positive")
    sums = np.cumsum(values, axis=0)
    idx = [int(math.floor(n * t)) for t in t_grid]
    return sums[idx].T / (sigma * math.sqrt(n))


def simulate_fclt_paths(sys: NormalizedSystem, phi: Observable, sigma: float, n: int, R: int,
                        t_grid: Sequence[float] = T_GRID, seed: int = 0, burn_in: int = 1000,
                        depth: int = 16, workers: int = 1) -> np.ndarray:
    """Y_n on R independent stationary Psi runs; shape (R, len(t_grid))."""
    if sigma <= 0:
        raise ContractViolation("sigma must be positive")
    run = stationary_run(sys, phi, R, n, seed, burn_in, depth, workers=workers, label="fclt")
    return paths_from_values(run.values, sigma, n, t_grid)


def synthetic_paths(kind: str, n: int, R: int, t_grid: Sequence[float] = T_GRID,
                    rng: np.random.Generator | None = None, alpha: float = 1.5) -> np.ndarray:
    """Calibration paths built like Y_n from synthetic increments.

    ``brownian``: iid standard normal increments; ``stable``: symmetric
    alpha-stable increments; ``constant``: zero increments.  Paths are scaled
    by the sample standard deviation of the increments, the plug-in analogue
    of sigma (1 for the degenerate constant case).
    """
    rng = rng or np.random.default_rng(0)
    size = (n + 1, R)
    if kind == "brownian":
        xi = rng.standard_normal(size)
    elif kind == "stable":
        xi = stats.levy_stable.rvs(alpha, 0.0, size=size, random_state=rng)
    elif kind == "constant":
        xi = np.zeros(size)
    else:
        raise ContractViolation(f"unknown synthetic kind {kind!r}")
    sd = float(xi.std())
    sigma = sd if sd > 0 else 1.0
    sums = np.cumsum(xi, axis=0)
    idx = [int(math.floor(n * t)) for t in t_grid]
    return sums[idx].T / (sigma * math.sqrt(n))


@dataclass(frozen=True)
class FcltReport:
    ks: dict                      # t -> KS statistic of Y(t)/sqrt(t) against N(0, 1)
    ks_threshold: float
    linearity: float
    linearity_threshold: float
    increment_correlation: float
    correlation_threshold: float
    R: int
    n: int | None
    accepted: bool
    sigma2: float | None = None
    sigma2_gk: float | None = None
    extra: dict = field(default_factory=dict)


def fclt_test(paths: np.ndarray, t_grid: Sequence[float] = T_GRID, R: int | None = None,
              n: int | None = None, sigma2: float | None = None, sigma2_gk: float | None = None) -> FcltReport:
    """Marginal KS at t = 1/4, 1/2, 1; variance linearity; correlation of disjoint increments."""
    paths = np.asarray(paths, dtype=float)
    R = R or paths.shape[0]
    if R < 200:
        raise ContractViolation("the FCLT test needs R >= 200 replicates")
    t = list(t_grid)
    for need in (0.25, 0.5, 0.75, 1.0):
        if need not in t:
            raise ContractViolation(f"t_grid must contain {need}")
    col = {tt: paths[:, t.index(tt)] for tt in t}
    ks = {tt: float(stats.kstest(col[tt] / math.sqrt(tt), "norm").statistic) for tt in (0.25, 0.5, 1.0)}
    v1 = float(np.var(col[1.0], ddof=1))
    vh = float(np.var(col[0.5], ddof=1))
    lin = abs(vh / (0.5 * v1) - 1.0) if v1 > 0 else math.inf
    inc1 = col[0.5] - col[0.25]
    inc2 = col[1.0] - col[0.75]
    if inc1.std() > 0 and inc2.std() > 0:
        corr = float(np.corrcoef(inc1, inc2)[0, 1])
    else:
        corr = 0.0
    ks_thr = 1.63 / math.sqrt(R)
    corr_thr = 3.0 * 2.0 / math.sqrt(R)
    ok = all(v <= ks_thr for v in ks.values()) and lin <= 0.15 and abs(corr) <= corr_thr
    return FcltReport(ks, ks_thr, lin, 0.15, corr, corr_thr, R, n, bool(ok), sigma2, sigma2_gk)


@dataclass
class FcltExperiment:
    report: FcltReport
    centering: Centering
    correlations: np.ndarray
    correlation_errors: np.ndarray
    decay: DecayFit | None           # None when fewer than five lags are resolved above noise
    poisson: PoissonSolution
    variance: VarianceReport
    sigma2_gk_time: float
    sigma2_gk_time_se: float
    consistent: bool
    paths: np.ndarray
    acceptance: float


def fclt_experiment(sys: NormalizedSystem, phi: Observable, n: int, R: int, seed: int,
                    t_grid: Sequence[float] = T_GRID, n_corr: int = 32, poisson_chains: int = 16,
                    snapshots: int = 4, burn_in: int = 1000, depth: int = 16, workers: int = 1) -> FcltExperiment:
    """Centering, correlation decay, Poisson variance and the FCLT test from one set of stationary runs.

    The R chains of length n give the path values, the centering and the
    time-averaged correlations; chain states at ``snapshots`` evenly spaced
    times are the stationary points for the Poisson variance.
    """
    keep = [int(round(n * (k + 1) / snapshots)) for k in range(snapshots)]
    run = stationary_run(sys, phi, R, n, seed, burn_in, depth, keep, workers=workers, label="fclt")
    total = run.values.size
    mean = float(run.values.mean())
    chain_means = run.values.mean(axis=0)
    centering = Centering(phi.centered(mean), mean, float(chain_means.std(ddof=1) / math.sqrt(R)),
                          4.0 * phi.sup_norm / math.sqrt(total))
    values = run.values - mean
    corr, corr_se = lag_correlations(values, n_corr)
    try:
        fit = fit_polynomial_decay(list(zip(range(n_corr + 1), corr)), corr_se)
    except ContractViolation:
        fit = None
    if fit is None:
        # correlations fall below noise within a few lags: sum every measured lag, no fitted tail
        N = n_corr
    else:
        # the fitted tail only describes lags beyond the measured range
        N = choose_truncation(fit, float(corr[0]), n_floor=fit.n_range[1])
    phi_c = centering.observable
    sol = solve_poisson(sys, phi_c, N, K=poisson_chains, decay=fit, seed=child_seed(seed, "poisson"))
    points = np.concatenate([run.snapshots[k] for k in keep])
    var = variance(sys, sol, len(points), substream(seed, "variance"), chains=poisson_chains, points=points)
    gk, gk_se = green_kubo(corr, corr_se, N)
    tail = 2.0 * sol.residual_bound * phi_c.sup_norm
    consistent = abs(var.sigma2 - gk) <= 3.0 * math.hypot(var.std_error, gk_se) + tail
    sigma2 = var.sigma2
    if var.rejected:
        paths = np.zeros((R, len(t_grid)))
        report = FcltReport({t: 1.0 for t in (0.25, 0.5, 1.0)}, 1.63 / math.sqrt(R), math.inf, 0.15, 0.0,
                            6.0 / math.sqrt(R), R, n, False, sigma2, gk)
    else:
        paths = paths_from_values(values, math.sqrt(sigma2), n, t_grid)
        report = fclt_test(paths, t_grid, R, n, sigma2, gk)
    report.extra.update({"N": N, "decay_exponent": None if fit is None else fit.exponent,
                         "consistent": bool(consistent),
                         "sigma2_gk_points": var.sigma2_gk, "sigma2_alt": var.sigma2_alt,
                         "sigma2_se": var.std_error, "sigma2_gk_se": gk_se})
    return FcltExperiment(report, centering, corr, corr_se, fit, sol, var, gk, gk_se, bool(consistent),
                          paths, run.acceptance)
