"""Exact ground truth for finite alphabets and finite-range potentials.

Functions on configurations that read only the first k symbols are vectors
indexed by k-cylinders (words w = (w_1, ..., w_k), w_1 most significant).
The transfer operator acts on them through the dense matrix

    M[w, w'] = mu(a) exp(f(w')),   w' = (a, w_1, ..., w_{k-1}),

so that L phi(w) = sum_{w'} M[w, w'] phi(w').
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .potential import FiniteRangePotential, Potential
from .rng import child_seed, substream
from .space import Alphabet, AprioriMeasure, ContractViolation
from .transfer import FullShift, NormalizedSystem, TabulatedEigenfunction, unit_drift

STATE_CAP = 4096


@dataclass(frozen=True)
class CylinderSpace:
    apriori: AprioriMeasure
    k: int

    def __post_init__(self):
        if not self.apriori.alphabet.is_finite:
            raise ContractViolation("cylinder spaces need a finite alphabet")
        if self.k < 1:
            raise ContractViolation("range k >= 1 required")
        if self.size > STATE_CAP:
            raise ContractViolation(f"{self.size} states exceed the cap of {STATE_CAP}")

    @property
    def alphabet(self) -> Alphabet:
        return self.apriori.alphabet

    @property
    def s(self) -> int:
        return self.alphabet.size

    @property
    def size(self) -> int:
        return self.apriori.alphabet.size ** self.k

    def words(self) -> np.ndarray:
        """Symbol values of every state, shape (size, k)."""
        pts = np.asarray(self.alphabet.points)
        idx = np.array(list(itertools.product(range(self.s), repeat=self.k)))
        return pts[idx]

    def index_of(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        idx = self.alphabet.index_of(coords[..., :self.k])
        return idx @ (self.s ** np.arange(self.k - 1, -1, -1))

    def successor(self, state: int, symbol_index: int) -> int:
        """Index of (a, w_1, ..., w_{k-1})."""
        return symbol_index * self.s ** (self.k - 1) + state // self.s

    def tabulate(self, phi) -> np.ndarray:
        """Vector of a cylinder function given as a callable on configurations."""
        return np.asarray(phi(self.words()), dtype=float)


@dataclass(frozen=True)
class TransferMatrix:
    matrix: np.ndarray
    space: CylinderSpace


def build_matrix(space: CylinderSpace, f: Potential) -> TransferMatrix:
    sd = f.support_depth
    if sd is None or sd > space.k:
        raise ContractViolation(f"potential range {sd} exceeds the cylinder length {space.k}")
    if f.min_depth > space.k:
        raise ContractViolation("potential needs deeper configurations than the cylinder length")
    S, s = space.size, space.s
    words = space.words()
    fv = np.asarray(f(words), dtype=float)
    mu = space.apriori.weight_array
    M = np.zeros((S, S))
    for w in range(S):
        for a in range(s):
            w2 = space.successor(w, a)
            M[w, w2] = mu[a] * math.exp(fv[w2])
    return TransferMatrix(M, space)


def is_primitive(M: np.ndarray) -> bool:
    """Boolean repeated squaring up to the Wielandt bound (S-1)^2 + 1."""
    A = (M > 0).astype(np.int64)
    S = len(A)
    bound = (S - 1) ** 2 + 1
    P, power = A.copy(), 1
    while power < bound:
        P = ((P @ P) > 0).astype(np.int64)
        power *= 2
        if P.all():
            return True
    return bool(P.all())


@dataclass(frozen=True)
class PerronData:
    lam: float
    h: np.ndarray
    nu: np.ndarray
    iterations: int


def _power(M: np.ndarray, tol: float, max_iter: int) -> tuple[float, np.ndarray, int]:
    v = np.ones(len(M))
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = M @ v
        new = float(w.sum() / v.sum())
        w /= np.linalg.norm(w, 1)
        diff = np.max(np.abs(w - v / np.linalg.norm(v, 1)))
        v = w
        if it > 1 and abs(new - lam) <= tol * new and diff <= tol:
            return new, v, it
        lam = new
    raise RuntimeError("power iteration did not converge")


def perron(tm: TransferMatrix | np.ndarray, tol: float = 1e-12, max_iter: int = 200_000) -> PerronData:
    """Dominant eigenvalue with right (h) and left (nu) positive eigenvectors.

    Normalized so that sum(nu) = 1 and nu . h = 1.
    """
    M = tm.matrix if isinstance(tm, TransferMatrix) else np.asarray(tm, dtype=float)
    if np.any(M < 0):
        raise ContractViolation("matrix has negative entries")
    if not is_primitive(M):
        raise ContractViolation("matrix is not primitive")
    lam, h, it1 = _power(M, tol, max_iter)
    lam2, nu, it2 = _power(M.T, tol, max_iter)
    nu = nu / nu.sum()
    h = h / (nu @ h)
    return PerronData(lam, h, nu, max(it1, it2))


def exact_normalize(tm: TransferMatrix | np.ndarray, lam: float, h: np.ndarray) -> np.ndarray:
    """P[w, w'] = M[w, w'] h(w') / (lambda h(w)), a stochastic matrix."""
    M = tm.matrix if isinstance(tm, TransferMatrix) else np.asarray(tm, dtype=float)
    P = M * h[None, :] / (lam * h[:, None])
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-10:
        raise RuntimeError("normalized matrix is not stochastic; eigenpair inaccurate")
    return P


def stationary(P: np.ndarray, tol: float = 1e-14, max_iter: int = 1_000_000) -> np.ndarray:
    pi = np.full(len(P), 1.0 / len(P))
    for _ in range(max_iter):
        new = pi @ P
        if np.max(np.abs(new - pi)) <= tol:
            return new / new.sum()
        pi = new
    raise RuntimeError("stationary iteration did not converge")


def exact_poisson(P: np.ndarray, phi: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Solve (I - P) u = phi with pi(u) = 0; phi must be centered."""
    phi = np.asarray(phi, dtype=float)
    scale = max(1.0, float(np.max(np.abs(phi))))
    if abs(pi @ phi) > 1e-12 * scale:
        raise ContractViolation(f"observable is not centered: pi(phi) = {pi @ phi:.3g}")
    S = len(P)
    A = np.eye(S) - P + np.outer(np.ones(S), pi)
    u = np.linalg.solve(A, phi)
    res = np.max(np.abs(u - P @ u - phi))
    if res > 1e-8 * scale:
        raise RuntimeError(f"Poisson residual {res:.3g} above tolerance")
    return u


def exact_sigma2(P: np.ndarray, phi: np.ndarray, pi: np.ndarray) -> float:
    """pi(u^2) - pi((P u)^2) for the Poisson solution u."""
    u = exact_poisson(P, phi, pi)
    Pu = P @ u
    return float(pi @ (u * u) - pi @ (Pu * Pu))


def exact_correlations(P: np.ndarray, phi: np.ndarray, pi: np.ndarray, n_max: int) -> np.ndarray:
    """pi(phi . P^n phi) for n = 0..n_max."""
    out = np.empty(n_max + 1)
    v = np.asarray(phi, dtype=float).copy()
    for n in range(n_max + 1):
        out[n] = pi @ (phi * v)
        v = P @ v
    return out


def autocovariance_sigma2(P: np.ndarray, phi: np.ndarray, pi: np.ndarray, tol: float = 1e-16,
                          n_max: int = 100_000) -> float:
    """pi(phi^2) + 2 sum_{n>=1} pi(phi P^n phi), summed until terms vanish."""
    total = float(pi @ (phi * phi))
    v = P @ phi
    for _ in range(n_max):
        term = float(pi @ (phi * v))
        total += 2.0 * term
        if abs(term) <= tol and np.max(np.abs(v)) <= tol ** 0.5:
            break
        v = P @ v
    return total


def second_eigenvalue_modulus(P: np.ndarray, pi: np.ndarray | None = None, n_iter: int = 4000,
                              seed: int = 0) -> float:
    """|lambda_2| of a stochastic matrix by power iteration on P - 1 pi^T."""
    pi = stationary(P) if pi is None else pi
    A = P - np.outer(np.ones(len(P)), pi)
    v = np.random.default_rng(seed).standard_normal(len(P))
    logs = []
    for _ in range(n_iter):
        v = A @ v
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        logs.append(math.log(nv))
        v /= nv
        if nv < 1e-300:
            break
    tail = np.asarray(logs[len(logs) // 2:])
    return float(math.exp(tail.mean()))


def exact_transfer_power(tm: TransferMatrix, phi: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(phi, dtype=float)
    for _ in range(n):
        v = tm.matrix @ v
    return v


def exact_cesaro(tm: TransferMatrix, lam: float, n: int) -> np.ndarray:
    """h_n = (1/n) sum_{j=0}^{n} lam^-j M^j 1."""
    v = np.ones(tm.space.size)
    acc = v.copy()
    for _ in range(n):
        v = tm.matrix @ v / lam
        acc += v
    return acc / n


def exact_sum_distribution(P: np.ndarray, pi: np.ndarray, phi: np.ndarray, n: int,
                           decimals: int = 12) -> dict[float, float]:
    """Law of phi(X_1) + ... + phi(X_n) for the stationary chain with transition P."""
    dist = {i: {0.0: float(pi[i])} for i in range(len(P)) if pi[i] > 0}
    for _ in range(n):
        new: dict[int, dict[float, float]] = {}
        for i, sums in dist.items():
            for j in np.nonzero(P[i])[0]:
                p = P[i, j]
                bucket = new.setdefault(int(j), {})
                for s, q in sums.items():
                    key = round(s + phi[j], decimals)
                    bucket[key] = bucket.get(key, 0.0) + p * q
        dist = new
    out: dict[float, float] = {}
    for sums in dist.values():
        for s, q in sums.items():
            out[s] = out.get(s, 0.0) + q
    return dict(sorted(out.items()))


def exact_pushforward(P: np.ndarray, space: CylinderSpace, x: np.ndarray, n: int):
    """Atoms and weights of the n-step law of the normalized chain from x.

    Returns configurations (words prepended to x, depth preserved) and
    their probabilities.
    """
    pts = np.asarray(space.alphabet.points)
    states = np.asarray(x, dtype=float)[None]
    w = np.ones(1)
    for _ in range(n):
        idx = space.index_of(states)
        new_states, new_w = [], []
        for a in range(space.s):
            nxt = np.empty_like(states)
            nxt[:, 0] = pts[a]
            nxt[:, 1:] = states[:, :-1]
            p = P[idx, space.index_of(nxt)]
            new_states.append(nxt)
            new_w.append(w * p)
        states = np.concatenate(new_states)
        w = np.concatenate(new_w)
        keep = w > 0
        states, w = states[keep], w[keep]
    return states, w


# ---------------------------------------------------------------------------
# bridge to the Monte Carlo engine


@dataclass
class OracleSystem:
    space: CylinderSpace
    potential: Potential
    tm: TransferMatrix
    perron: PerronData
    P: np.ndarray
    pi: np.ndarray

    def normalized_system(self, depth: int, probes: int = 32, seed: int = 0) -> NormalizedSystem:
        """Monte Carlo engine view with the exact lambda and h."""
        from .rng import substream
        from .space import sample_configs
        h = TabulatedEigenfunction(self.space.alphabet, self.space.k, self.perron.h)
        kernel = FullShift(self.space.apriori)
        sys = NormalizedSystem(kernel, self.potential, math.log(self.perron.lam), h)
        X = sample_configs(kernel.apriori, probes, max(depth, self.space.k + 1), substream(seed, "oracle-probes"))
        sys.diagnostics = unit_drift(sys, X, 1, None)
        return sys


def oracle_system(apriori: AprioriMeasure, f: Potential, k: int | None = None) -> OracleSystem:
    k = k or max(f.support_depth or 1, 1)
    space = CylinderSpace(apriori, k)
    tm = build_matrix(space, f)
    pd = perron(tm)
    P = exact_normalize(tm, pd.lam, pd.h)
    pi = pd.h * pd.nu
    pi = pi / pi.sum()
    return OracleSystem(space, f, tm, pd, P, pi)


# ---------------------------------------------------------------------------
# oracle-versus-Monte-Carlo grid

GRID_QUANTITIES = ("transfer_power", "spectral_radius", "eigenfunction_ratio", "sigma2", "correlation")
GRID_POTENTIALS = ("field", "pair", "table")


@dataclass(frozen=True)
class GridCase:
    index: int
    potential: str
    s: int
    k: int
    beta: float
    quantity: str
    estimate: float
    std_error: float
    exact: float

    @property
    def z(self) -> float:
        if self.std_error == 0:
            return 0.0 if abs(self.estimate - self.exact) <= 1e-10 * max(1.0, abs(self.exact)) else math.inf
        return (self.estimate - self.exact) / self.std_error

    @property
    def within(self) -> bool:
        return abs(self.z) <= 3.0


@dataclass(frozen=True)
class GridReport:
    cases: list
    rate: float
    threshold: float = 0.99

    @property
    def accepted(self) -> bool:
        return self.rate >= self.threshold


def grid_potential(kind: str, s: int, beta: float, rng: np.random.Generator):
    """The three grid potentials on the alphabet {0, ..., s-1}: beta x_1, beta x_1 x_2, random table."""
    A = Alphabet.finite(list(range(s)))
    if kind == "field":
        return FiniteRangePotential.from_function(A, 1, lambda w: beta * w[..., 0]), 1
    if kind == "pair":
        return FiniteRangePotential.from_function(A, 2, lambda w: beta * w[..., 0] * w[..., 1]), 2
    if kind == "table":
        k = int(rng.integers(1, 3))
        table = beta * rng.uniform(-1.0, 1.0, size=(s,) * k)
        return FiniteRangePotential(A, table), k
    raise ContractViolation(f"unknown grid potential {kind!r}")


def _grid_case(i: int, seed: int) -> GridCase:
    from .limits import lag_correlations, solve_poisson, stationary_run, variance
    from .potential import coordinate_observable
    from .space import sample_configs
    from .transfer import CesaroEigenfunction, apply_transfer_n, spectral_radius

    rng = substream(seed, "grid", i)
    kind = GRID_POTENTIALS[i % 3]
    quantity = GRID_QUANTITIES[(i // 3) % 5]
    s = int(rng.integers(2, 4))
    beta = float(rng.uniform(-1.0, 1.0))
    f, k = grid_potential(kind, s, beta, rng)
    mu = AprioriMeasure(f.alphabet)
    kernel = FullShift(mu)
    orc = oracle_system(mu, f, k)
    space = orc.space
    depth = 12
    X = sample_configs(mu, 2, depth, rng)
    lam = orc.perron.lam
    if quantity == "transfer_power":
        n = int(rng.integers(4, 11))
        est = apply_transfer_n(kernel, f, lambda z: np.ones(len(z)), X[0], n, K=4000, rng=rng, method="smc")
        exact = exact_transfer_power(orc.tm, np.ones(space.size), n)[space.index_of(X[0])]
        return GridCase(i, kind, s, k, beta, quantity, est.value, est.std_error, float(exact))
    if quantity == "spectral_radius":
        sr = spectral_radius(kernel, f, X[0], 32, K=4000, rng=rng, method="smc")
        return GridCase(i, kind, s, k, beta, quantity, sr.value, sr.std_error, lam)
    if quantity == "eigenfunction_ratio":
        n = 32
        h = CesaroEigenfunction(kernel, f, lam, n, K=4000, seed=child_seed(seed, "grid-h", i), method="smc")
        r, se = h.ratio(X[0], X[1])
        hn = exact_cesaro(orc.tm, lam, n)
        exact = hn[space.index_of(X[0])] / hn[space.index_of(X[1])]
        return GridCase(i, kind, s, k, beta, quantity, r, se, float(exact))
    osys = orc.normalized_system(depth)
    mean = float(orc.pi @ space.words()[:, 0])
    phi = coordinate_observable(f.alphabet).centered(mean)
    ph = space.words()[:, 0] - mean
    if quantity == "sigma2":
        sol = solve_poisson(osys, phi, N=40, seed=child_seed(seed, "grid-poisson", i))
        rep = variance(osys, sol, 2000, rng, burn_in=100, depth=depth)
        return GridCase(i, kind, s, k, beta, quantity, rep.sigma2, rep.std_error, exact_sigma2(orc.P, ph, orc.pi))
    lag = int(rng.integers(1, 4))
    run = stationary_run(osys, phi, 50, 400, child_seed(seed, "grid-corr", i), burn_in=100, depth=depth)
    c, se = lag_correlations(run.values, lag)
    exact = exact_correlations(orc.P, ph, orc.pi, lag)[lag]
    return GridCase(i, kind, s, k, beta, quantity, float(c[lag]), float(se[lag]), float(exact))


def equivalence_grid(cases: int = 200, seed: int = 0, workers: int = 1) -> GridReport:
    """Monte Carlo estimates against exact values over a grid of small finite systems.

    Cases cycle through three potentials and five quantities; alphabet size,
    strength and probes are drawn from a per-case substream, so each case is
    reproducible on its own.
    """
    if workers > 1:
        from joblib import Parallel, delayed
        rows = Parallel(n_jobs=workers)(delayed(_grid_case)(i, seed) for i in range(cases))
    else:
        rows = [_grid_case(i, seed) for i in range(cases)]
    rate = float(np.mean([c.within for c in rows])) if rows else 0.0
    return GridReport(rows, rate)
