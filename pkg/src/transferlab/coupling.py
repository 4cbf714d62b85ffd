"""The natural coupling, weighted coupling costs, omega-Wasserstein distances and decay fits.

The natural coupling drives two backward orbits with the same prepended
word, so the paired endpoints share their first n coordinates and the
distance contracts by exactly 2^-n up to the truncation at depth D.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .potential import ModulusOfContinuity, Potential
from .space import (Alphabet, Config, ContractViolation, config_distance, distance_batch,
                    truncation_bound)
from .transfer import FullShift, NormalizedSystem, TransferEstimate, _combine_batches, smc_steps

ASSIGNMENT_LIMIT = 256


@dataclass(frozen=True)
class CoupledPath:
    word: np.ndarray          # a_1, ..., a_n in the order they are prepended
    x_n: Config
    y_n: Config
    x: Config
    y: Config
    n: int

    def shares_prefix(self) -> bool:
        return bool(np.array_equal(self.x_n.coords[:self.n], self.y_n.coords[:self.n]))

    def contraction_holds(self) -> bool:
        """d(x_n, y_n) <= 2^-n d(x, y) + 2^-D, checked in exact arithmetic order."""
        lhs = config_distance(self.x_n, self.y_n)
        rhs = math.ldexp(config_distance(self.x, self.y), -self.n) + truncation_bound(self.x.depth)
        return lhs <= rhs


def sample_coupled(kernel: FullShift, x: Config, y: Config, n: int, rng: np.random.Generator) -> CoupledPath:
    """Draw one word w ~ mu^n and prepend it to both x and y."""
    if x.alphabet != y.alphabet or x.depth != y.depth:
        raise ContractViolation("coupled configurations need the same alphabet and depth")
    if n < 0:
        raise ContractViolation("n >= 0 required")
    word = kernel.draw(rng, n)
    X, Y = x.coords[None], y.coords[None]
    for a in word:
        X = kernel.advance(X, a[None])
        Y = kernel.advance(Y, a[None])
    return CoupledPath(word, Config(X[0], x.alphabet, _checked=False), Config(Y[0], y.alphabet, _checked=False),
                       x, y, n)


# ---------------------------------------------------------------------------
# decay functions and fits


@dataclass(frozen=True)
class DecayFunction:
    """F(n, r) = B r / (n r^alpha + b)^(1/alpha)."""

    B: float
    b: float
    alpha: float

    def __post_init__(self):
        if self.B < 1 or not 0 < self.b < 1 or self.alpha <= 0:
            raise ContractViolation("need B >= 1, b in (0, 1), alpha > 0")

    def __call__(self, n, r):
        n = np.asarray(n, dtype=float)
        r = np.asarray(r, dtype=float)
        return self.B * r / (n * r ** self.alpha + self.b) ** (1.0 / self.alpha)

    @property
    def linear_constant(self) -> float:
        """C with F(n, r) <= C r for all n, r."""
        return self.B / self.b ** (1.0 / self.alpha)

    def check_properties(self, n_max: int = 64, r_grid=None, tol: float = 1e-12) -> dict[str, bool]:
        """Grid checks of the four defining properties of a decay function."""
        r = np.geomspace(1e-6, 1.0, 200) if r_grid is None else np.asarray(r_grid, dtype=float)
        n = np.arange(0, n_max + 1, dtype=float)
        F = self(n[:, None], r[None, :])
        mono_n = bool(np.all(np.diff(F, axis=0) <= tol * F[1:]))
        mono_r = bool(np.all(np.diff(F, axis=1) >= -tol * F[:, 1:]))
        # concavity in r on the grid: chords lie below the graph
        mid = self(n[:, None], 0.5 * (r[None, :-1] + r[None, 1:]))
        concave = bool(np.all(mid >= 0.5 * (F[:, :-1] + F[:, 1:]) - tol * mid))
        limits = bool(np.all(self(1e12, r) < 1e-5) and np.all(self(n, 1e-12) < 1e-10))
        bounded = bool(np.all(F <= self.linear_constant * r[None, :] * (1 + tol)))
        semigroup = True
        for k in range(0, n_max + 1, 4):
            for m in range(0, n_max + 1, 4):
                lhs = self(k + m, r)
                rhs = self(k, self(m, r))
                if np.any(lhs > rhs * (1 + 1e-10)):
                    semigroup = False
        return {"a": mono_n and mono_r and concave, "b": limits, "c": bounded, "d": semigroup}


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    constant: float
    residual_rms: float
    n_range: tuple[int, int]
    points: int
    exponent_se: float = 0.0
    dropped: int = 0


def fit_polynomial_decay(series: Sequence[tuple[float, float]], std_errors: Sequence[float] | None = None,
                         n_min: int = 2, significance: float = 2.0) -> DecayFit:
    """Least-squares slope of log value against log n, for n >= n_min.

    Nonpositive values are dropped with a warning; with standard errors,
    values below ``significance`` standard errors are dropped as well, since
    their logarithm is dominated by noise.
    """
    arr = np.asarray(series, dtype=float).reshape(-1, 2)
    ns, vs = arr[:, 0], arr[:, 1]
    se = None if std_errors is None else np.asarray(std_errors, dtype=float)
    keep = ns >= n_min
    positive = vs > 0
    if np.any(keep & ~positive):
        warnings.warn(f"dropping {int(np.sum(keep & ~positive))} nonpositive values from the decay fit")
    keep &= positive
    if se is not None:
        weak = keep & (vs < significance * se)
        if np.any(weak):
            warnings.warn(f"dropping {int(weak.sum())} values within {significance:g} standard errors of zero")
        keep &= ~weak
    dropped = int(np.sum(ns >= n_min) - keep.sum())
    if keep.sum() < 5:
        raise ContractViolation(f"only {int(keep.sum())} usable points; a decay fit needs at least 5")
    x, y = np.log(ns[keep]), np.log(vs[keep])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    rms = float(np.sqrt(np.mean(resid ** 2)))
    dof = max(len(x) - 2, 1)
    cov = np.linalg.inv(A.T @ A) * float(resid @ resid) / dof
    return DecayFit(float(coef[0]), float(math.exp(coef[1])), rms, (int(ns[keep].min()), int(ns[keep].max())),
                    int(keep.sum()), float(math.sqrt(max(cov[0, 0], 0.0))), dropped)


# ---------------------------------------------------------------------------
# coupling costs


def weighted_coupling_cost(kernel, f: Potential, omega: ModulusOfContinuity, x, y, n: int, K: int,
                           rng: np.random.Generator, batches: int = 16) -> TransferEstimate:
    """Integral of omega(d(x_n, y_n)) exp(f^n(x_bar)) over the natural coupling."""
    return coupling_cost_series(kernel, f, omega, x, y, n, K, rng, batches)[-1]


def coupling_cost_series(kernel, f: Potential, omega: ModulusOfContinuity, x, y, n_max: int, K: int,
                         rng: np.random.Generator, batches: int = 16) -> list[TransferEstimate]:
    """Weighted coupling costs for n = 1..n_max from one sequential Monte Carlo run.

    The y orbit shadows the x particles with the same symbols, so each
    particle carries a sample of the natural coupling.
    """
    xs = x.coords if isinstance(x, Config) else np.asarray(x, dtype=float)
    ys = y.coords if isinstance(y, Config) else np.asarray(y, dtype=float)
    if xs.shape != ys.shape:
        raise ContractViolation("x and y need the same depth")
    alphabet = kernel.alphabet
    if np.array_equal(xs, ys):
        return [TransferEstimate(0.0, 0.0, 0, True) for _ in range(n_max)]
    out = []
    for step in smc_steps(kernel, f, xs, n_max, K, rng, batches, shadow=ys):
        B = step.weights.shape[0]
        w = omega(distance_batch(step.states, step.shadow, alphabet)).reshape(B, -1)
        v, se, lv = _combine_batches(step.log_z, np.sum(step.weights * w, axis=1))
        out.append(TransferEstimate(float(v), float(se), step.weights.size, False, lv))
    return out


# ---------------------------------------------------------------------------
# Wasserstein distances


@dataclass(frozen=True)
class WassersteinEstimate:
    value: float
    exact: bool
    atoms: int


def _atoms(sample) -> np.ndarray:
    return np.asarray(getattr(sample, "samples", sample), dtype=float)


def cost_matrix(a: np.ndarray, b: np.ndarray, omega: ModulusOfContinuity, alphabet: Alphabet) -> np.ndarray:
    A = np.broadcast_to(a[:, None], (len(a), len(b)) + a.shape[1:])
    Bm = np.broadcast_to(b[None, :], (len(a), len(b)) + b.shape[1:])
    return np.asarray(omega(distance_batch(A, Bm, alphabet)))


def greedy_matching(cost: np.ndarray) -> float:
    """Repeatedly match the cheapest remaining pair; an upper bound on the optimum."""
    m = len(cost)
    order = np.argsort(cost, axis=None, kind="stable")
    used_r = np.zeros(m, bool)
    used_c = np.zeros(m, bool)
    total, count = 0.0, 0
    for flat in order:
        i, j = divmod(int(flat), m)
        if not used_r[i] and not used_c[j]:
            used_r[i] = used_c[j] = True
            total += cost[i, j]
            count += 1
            if count == m:
                break
    return total / m


def _equalize(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = min(len(a), len(b))
    pick = lambda z: z if len(z) == m else z[np.linspace(0, len(z) - 1, m).round().astype(int)]
    return pick(a), pick(b)


def wasserstein_estimate(sample_a, sample_b, omega: ModulusOfContinuity, alphabet: Alphabet,
                         exact_limit: int = ASSIGNMENT_LIMIT) -> WassersteinEstimate:
    """W_omega between two uniform empirical measures with equal atom counts.

    Exact optimal assignment up to ``exact_limit`` atoms, greedy matching
    (an upper bound, flagged non-exact) above.  The larger sample is
    subsampled at evenly spaced indices.
    """
    a, b = _equalize(_atoms(sample_a), _atoms(sample_b))
    cost = cost_matrix(a, b, omega, alphabet)
    m = len(a)
    if m <= exact_limit:
        r, c = linear_sum_assignment(cost)
        return WassersteinEstimate(float(cost[r, c].sum() / m), True, m)
    return WassersteinEstimate(greedy_matching(cost), False, m)


def brute_force_assignment(cost: np.ndarray) -> float:
    """Minimum over all permutations (tiny m only)."""
    m = len(cost)
    return min(sum(cost[i, p[i]] for i in range(m)) for p in itertools.permutations(range(m))) / m


def wasserstein_weighted(atoms_a, weights_a, atoms_b, weights_b, omega: ModulusOfContinuity,
                         alphabet: Alphabet) -> float:
    """Exact W_omega between two finitely supported measures by linear programming."""
    a, b = np.asarray(atoms_a, dtype=float), np.asarray(atoms_b, dtype=float)
    wa, wb = np.asarray(weights_a, dtype=float), np.asarray(weights_b, dtype=float)
    wa, wb = wa / wa.sum(), wb / wb.sum()
    cost = cost_matrix(a, b, omega, alphabet)
    p, q = len(a), len(b)
    rows = np.zeros((p + q, p * q))
    for i in range(p):
        rows[i, i * q:(i + 1) * q] = 1.0
    for j in range(q):
        rows[p + j, j::q] = 1.0
    res = linprog(cost.ravel(), A_eq=rows, b_eq=np.concatenate([wa, wb]), bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport linear program failed: {res.message}")
    return float(res.fun)


# ---------------------------------------------------------------------------
# dual contraction


@dataclass(frozen=True)
class DualProbeReport:
    ns: np.ndarray
    distances: np.ndarray
    noise_floor: np.ndarray
    exact: bool
    bounded: bool              # W(n) <= C W(0) with C = max_n W(n)/W(0)
    constant: float
    decreasing: bool
    fit: DecayFit | None


def push_forward(sys: NormalizedSystem, clouds: Sequence[np.ndarray], rng: np.random.Generator) -> list[np.ndarray]:
    """One step of L* on several m-atom clouds with shared randomness.

    Atom i of every cloud is extended by the same proposed symbol; the
    extended atoms are reweighted by exp(f_bar) and multinomially resampled
    with the same uniforms, which keeps the atom count fixed.
    """
    m = len(clouds[0])
    sym = sys.kernel.draw(rng, m)
    u = np.sort(rng.random(m))
    out = []
    for Z in clouds:
        ctx = sys.prepare(Z)
        lw = sys.log_target(ctx, np.arange(m), sym) - sys.log_normalizer(Z)
        w = np.exp(lw - lw.max())
        c = np.cumsum(w)
        idx = np.minimum(np.searchsorted(c / c[-1], u), m - 1)
        out.append(sys.kernel.advance(Z, sym)[idx])
    return out


def dual_contraction_probe(sys: NormalizedSystem, seed_a: np.ndarray, seed_b: np.ndarray, n_max: int,
                           omega: ModulusOfContinuity, rng: np.random.Generator,
                           exact_limit: int = ASSIGNMENT_LIMIT) -> DualProbeReport:
    """W_omega(L*^n a, L*^n b) for n = 0..n_max on particle clouds.

    The noise floor at each n is the distance between two independent
    pushforwards of cloud a, i.e. the resolution of the m-atom representation.
    """
    A, Bc = np.asarray(seed_a, dtype=float), np.asarray(seed_b, dtype=float)
    if len(A) != len(Bc):
        raise ContractViolation("seed clouds need equal atom counts")
    alphabet = sys.alphabet
    A2 = A.copy()
    dists, floors = [], []
    exact = True
    for n in range(n_max + 1):
        w = wasserstein_estimate(A, Bc, omega, alphabet, exact_limit)
        fl = wasserstein_estimate(A, A2, omega, alphabet, exact_limit)
        exact &= w.exact
        dists.append(w.value)
        floors.append(fl.value)
        if n < n_max:
            A, Bc = push_forward(sys, [A, Bc], rng)
            A2 = push_forward(sys, [A2], rng)[0]
    d = np.asarray(dists)
    floor = np.asarray(floors)
    ns = np.arange(n_max + 1)
    const = float(d.max() / d[0]) if d[0] > 0 else 0.0
    tail = d[len(d) // 2:]
    decreasing = bool(d[0] == 0 or tail.mean() <= d[0])
    fit = None
    above = (ns >= 2) & (d > 2 * floor)
    if above.sum() >= 5:
        fit = fit_polynomial_decay(list(zip(ns[above], d[above])))
    return DualProbeReport(ns, d, floor, exact, bool(np.all(d <= const * d[0] + 1e-15)), const, decreasing, fit)
