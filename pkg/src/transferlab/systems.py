"""Backward weighted shifts on truncated l^p and iterated function systems.

Vectors of l^p are truncated to ``dim`` coordinates; coordinates beyond the
truncation are zero.  Weights are given as a pattern repeated periodically,
so the products beta_k^n are defined for every k and n.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .space import Alphabet, AprioriMeasure, ContractViolation
from .transfer import WeightedShift

# ---------------------------------------------------------------------------
# backward weighted shifts


@dataclass(frozen=True)
class WeightedShiftSystem:
    """Weights alpha_n in (c, c') repeated with period len(pattern)."""

    pattern: tuple[float, ...]
    dim: int = 32
    p: float = 1.0
    lower: float | None = None       # c
    upper: float | None = None       # c'

    def __post_init__(self):
        if not self.pattern or any(a <= 0 for a in self.pattern):
            raise ContractViolation("weights must be positive")
        if self.dim < 2:
            raise ContractViolation("dim >= 2 required")
        if self.p < 1:
            raise ContractViolation("p >= 1 required")
        lo = self.lower if self.lower is not None else 0.5 * min(self.pattern)
        hi = self.upper if self.upper is not None else max(2.0 * max(self.pattern), 1.5)
        if not (0 < lo < hi):
            raise ContractViolation("need 0 < c < c'")
        if any(not lo < a < hi for a in self.pattern):
            raise ContractViolation(f"weights must lie in ({lo:g}, {hi:g})")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def alpha(self, n) -> np.ndarray:
        """alpha_n for 1-based indices n."""
        n = np.asarray(n, dtype=np.int64)
        return np.asarray(self.pattern)[(n - 1) % len(self.pattern)]

    @property
    def weights(self) -> np.ndarray:
        return self.alpha(np.arange(1, self.dim + 1))

    def beta(self, k: int, n: int) -> float:
        """beta_k^n = alpha_k ... alpha_{k+n-1} (empty product 1)."""
        return float(np.prod(self.alpha(np.arange(k, k + n)))) if n > 0 else 1.0

    def beta_table(self, n: int, k_max: int | None = None) -> np.ndarray:
        """beta_k^n for k = 1..k_max via log-space window sums."""
        k_max = k_max or self.dim
        logs = np.log(self.alpha(np.arange(1, k_max + n)))
        c = np.concatenate([[0.0], np.cumsum(logs)])
        return np.exp(c[n:n + k_max] - c[:k_max])

    def d(self, n: int) -> float:
        """d_n = inf over k <= dim of beta_k^n."""
        return float(self.beta_table(n).min())

    def kernel(self, apriori: AprioriMeasure | None = None) -> WeightedShift:
        return WeightedShift(tuple(float(a) for a in self.weights),
                             apriori or AprioriMeasure(Alphabet.real_line()))

    def norm(self, v) -> np.ndarray:
        return np.linalg.norm(np.asarray(v, dtype=float), ord=self.p, axis=-1)


def _vector(sys: WeightedShiftSystem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sys.dim:
        raise ContractViolation(f"vector length {x.shape[-1]} != dim {sys.dim}")
    return x


def weighted_shift_apply(sys: WeightedShiftSystem, x) -> np.ndarray:
    """L x = (alpha_1 x_2, ..., alpha_{dim-1} x_dim, 0)."""
    x = _vector(sys, x)
    out = np.zeros_like(x)
    out[..., :-1] = sys.weights[:-1] * x[..., 1:]
    return out


def s_map(sys: WeightedShiftSystem, x) -> np.ndarray:
    """S x = (x_1/alpha_1, x_2/alpha_2, ...)."""
    return _vector(sys, x) / sys.weights


def prepend_r(r: float, v) -> np.ndarray:
    """(r, v_1, ..., v_{dim-1})."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0] = r
    out[..., 1:] = v[..., :-1]
    return out


def preimage(sys: WeightedShiftSystem, x, free_block) -> np.ndarray:
    """(r_1, ..., r_n, x_1/beta_1^n, x_2/beta_2^n, ...) truncated to dim coordinates."""
    x = _vector(sys, x)
    r = np.asarray(free_block, dtype=float)
    n = len(r)
    out = np.zeros(sys.dim)
    out[:min(n, sys.dim)] = r[:sys.dim]
    if n < sys.dim:
        out[n:] = x[:sys.dim - n] / sys.beta_table(n, sys.dim - n)
    return out


@dataclass(frozen=True)
class SummabilityReport:
    partial_sums: np.ndarray
    ratio: float
    tail_estimate: float
    summable: bool


def summability_check(sys: WeightedShiftSystem, exponent: float, N: int) -> SummabilityReport:
    """Partial sums of d_n^-exponent and a ratio-test verdict from the last half of the terms."""
    if N < 10:
        raise ContractViolation("N >= 10 required")
    terms = np.array([sys.d(n) ** (-exponent) for n in range(1, N + 1)])
    sums = np.cumsum(terms)
    half = N // 2
    ratio = float((terms[-1] / terms[half - 1]) ** (1.0 / (N - half)))
    summable = ratio < 1.0 - 1e-9
    tail = float(terms[-1] * ratio / (1.0 - ratio)) if summable else math.inf
    return SummabilityReport(sums, ratio, tail, summable)


@dataclass(frozen=True)
class TransitivityWitness:
    found: bool
    n: int | None
    word: np.ndarray | None
    distance: float              # l^p distance of the preimage to the center, tail included
    point: np.ndarray | None


def strong_transitivity_witness(sys: WeightedShiftSystem, x, center, radius: float,
                                n_max: int) -> TransitivityWitness:
    """Smallest n <= n_max with a preimage L^-n(x) inside the ball B(center, radius).

    The free block r_1..r_n is copied from the center, so the distance is the
    l^p norm of the tail x_k/beta_k^n - u_{n+k}, counting every coordinate of
    x, including those pushed past the truncation.
    """
    x = _vector(sys, x)
    u = _vector(sys, center)
    if not np.any(x):
        raise ContractViolation("x must be nonzero")
    if radius <= 0:
        raise ContractViolation("radius must be positive")
    best = math.inf
    upad = np.concatenate([u, np.zeros(n_max)])
    for n in range(1, n_max + 1):
        tail = x / sys.beta_table(n, sys.dim)
        diff = tail - upad[n:n + sys.dim]
        dist = float(np.linalg.norm(np.concatenate([diff, upad[n + sys.dim:]]), ord=sys.p))
        best = min(best, dist)
        if dist < radius:
            word = u[:n].copy() if n <= sys.dim else np.concatenate([u, np.zeros(n - sys.dim)])
            return TransitivityWitness(True, n, word, dist, preimage(sys, x, word))
    return TransitivityWitness(False, None, None, best, None)


def weighted_shift_balls(sys: WeightedShiftSystem, count: int = 20, radius: float = 0.5,
                         max_nonzero: int = 3, scale: float = 0.5,
                         seed: int = 0) -> list[tuple[np.ndarray, float]]:
    """Ball centers with at most ``max_nonzero`` nonzero entries among the first coordinates."""
    rng = np.random.default_rng(seed)
    balls = []
    for _ in range(count):
        c = np.zeros(sys.dim)
        k = rng.integers(1, max_nonzero + 1)
        pos = rng.choice(max_nonzero, size=k, replace=False)
        c[pos] = rng.uniform(-scale, scale, size=k)
        balls.append((c, radius))
    return balls


def discarded_tail_bound(sys: WeightedShiftSystem, r_max: float, terms: int = 200) -> float:
    """l^p norm bound on the coordinates the truncation drops: r_max (sum_{k>=dim} d_k^-p)^(1/p)."""
    s = sum(sys.d(k) ** (-sys.p) for k in range(sys.dim, sys.dim + terms))
    return r_max * s ** (1.0 / sys.p)


def weighted_shift_metric(sys: WeightedShiftSystem, margin: float = 0.0):
    """l^p distances from one state to a stack of centers, inflated by ``margin``."""
    return lambda x, centers: sys.norm(centers - x[None]) + margin


# ---------------------------------------------------------------------------
# iterated function systems


class IfsSystem:
    """Maps T_i of a compact box into itself with place-dependent probabilities p_i(x).

    ``maps`` act on arrays of shape (B, d); ``probabilities`` returns (B, m).
    ``lipschitz`` optionally lists known Lipschitz constants of the maps.
    """

    def __init__(self, maps: Sequence[Callable[[np.ndarray], np.ndarray]],
                 probabilities: Callable[[np.ndarray], np.ndarray] | Sequence[float],
                 box: tuple[np.ndarray, np.ndarray], lipschitz: Sequence[float] | None = None,
                 name: str = "ifs"):
        self.maps = list(maps)
        if not self.maps:
            raise ContractViolation("an IFS needs at least one map")
        if callable(probabilities):
            self._prob = probabilities
        else:
            p = np.asarray(probabilities, dtype=float)
            if p.shape != (len(self.maps),) or np.any(p <= 0) or abs(p.sum() - 1) > 1e-12:
                raise ContractViolation("constant probabilities must be positive and sum to 1")
            self._prob = lambda X, p=p: np.broadcast_to(p, (len(X), len(p)))
        lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)
        self.box = (lo, hi)
        self.dim = len(lo)
        self.lipschitz = None if lipschitz is None else tuple(float(v) for v in lipschitz)
        self.name = name

    @property
    def size(self) -> int:
        return len(self.maps)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.box[1] - self.box[0]))

    def images(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.stack([T(X) for T in self.maps])

    def probabilities(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.asarray(self._prob(X), dtype=float)

    def check_probabilities(self, probes: np.ndarray, tol: float = 1e-12) -> float:
        p = self.probabilities(probes)
        if np.any(p <= 0):
            raise ContractViolation("probabilities must be positive")
        err = float(np.max(np.abs(p.sum(axis=1) - 1.0)))
        if err > tol:
            raise ContractViolation(f"probabilities sum to 1 only within {err:.3g}")
        return err

    def sample_domain(self, rng: np.random.Generator, count: int) -> np.ndarray:
        lo, hi = self.box
        return lo + (hi - lo) * rng.random((count, self.dim))


def affine_ifs(matrices, offsets, probabilities, box) -> IfsSystem:
    """Maps x -> A_i x + b_i."""
    A = [np.atleast_2d(np.asarray(m, dtype=float)) for m in matrices]
    b = [np.atleast_1d(np.asarray(o, dtype=float)) for o in offsets]
    maps = [lambda X, Ai=Ai, bi=bi: X @ Ai.T + bi for Ai, bi in zip(A, b)]
    lips = [float(np.linalg.norm(Ai, 2)) for Ai in A]
    return IfsSystem(maps, probabilities, box, lips, name="affine")


def dyadic_ifs() -> IfsSystem:
    """T_1 = x/2, T_2 = x/2 + 1/2 on [0, 1] with equal probabilities."""
    return affine_ifs([[[0.5]], [[0.5]]], [[0.0], [0.5]], [0.5, 0.5], ([0.0], [1.0]))


def _point(sys: IfsSystem, x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, sys.dim)


def ifs_transfer(sys: IfsSystem, phi: Callable[[np.ndarray], np.ndarray], x) -> float:
    """sum_i p_i(x) phi(T_i x)."""
    X = _point(sys, x)
    p = sys.probabilities(X)[0]
    imgs = sys.images(X)
    return float(sum(p[i] * phi(imgs[i])[0] for i in range(sys.size)))


def ifs_transfer_n(sys: IfsSystem, phi: Callable[[np.ndarray], np.ndarray], x, n: int) -> float:
    """n-fold iterate by recursion L^n phi(x) = sum_i p_i(x) L^{n-1} phi(T_i x)."""
    def iterate(X: np.ndarray, k: int) -> np.ndarray:
        if k == 0:
            return np.asarray(phi(X), dtype=float)
        p = sys.probabilities(X)
        imgs = sys.images(X)
        return sum(p[:, i] * iterate(imgs[i], k - 1) for i in range(sys.size))
    return float(iterate(_point(sys, x), n)[0])


def multi_index_sum(sys: IfsSystem, phi: Callable[[np.ndarray], np.ndarray], x, n: int) -> float:
    """sum over J = (j_1, ..., j_n) of p_J(x) phi(T_J x), one multi-index at a time.

    T_J = T_{j_n} o ... o T_{j_1} and p_J(x) = p_{j_1}(x) p_{j_2}(T_{j_1} x) ... .
    """
    total = 0.0
    for J in itertools.product(range(sys.size), repeat=n):
        y = _point(sys, x)
        pj = 1.0
        for j in J:
            pj *= sys.probabilities(y)[0, j]
            y = sys.maps[j](y)
        total += pj * float(phi(y)[0])
    return total


def contractivity_modulus(sys: IfsSystem, index: int, t_grid, rng: np.random.Generator,
                          samples: int = 20_000) -> np.ndarray:
    """alpha_T(t) = sup_{|x-y| <= t} |T x - T y|, estimated by random pairs (a lower bound).

    Half of the pairs sit at distance exactly t (before clipping to the box),
    so isometries are not mistaken for contractions.
    """
    T = sys.maps[index]
    out = []
    for t in np.asarray(t_grid, dtype=float):
        X = sys.sample_domain(rng, samples)
        step = rng.standard_normal((samples, sys.dim))
        radius = t * rng.random((samples, 1)) ** (1.0 / sys.dim)
        radius[: samples // 2] = t
        step *= radius / np.linalg.norm(step, axis=1, keepdims=True)
        Y = np.clip(X + step, *sys.box)
        d = np.linalg.norm(T(X) - T(Y), axis=1)
        out.append(float(d.max()))
    return np.asarray(out)


def weakly_contractive(sys: IfsSystem, rng: np.random.Generator, t_grid=None) -> list[bool]:
    """Per map: does the estimated modulus satisfy alpha_T(t) < t on the grid (beyond rounding)?"""
    t_grid = np.linspace(0.05, 1.0, 20) * sys.diameter if t_grid is None else np.asarray(t_grid)
    return [bool(np.all(contractivity_modulus(sys, i, t_grid, rng) < t_grid * (1 - 1e-9)))
            for i in range(sys.size)]


@dataclass(frozen=True)
class AttractorCloud:
    points: np.ndarray
    invariance_gap: float      # Hausdorff distance between the cloud and the union of its images
    bound: float               # 2 c^n diam
    subsampled: bool


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float).reshape(len(a), -1)
    b = np.asarray(b, dtype=float).reshape(len(b), -1)
    return float(max(cKDTree(b).query(a)[0].max(), cKDTree(a).query(b)[0].max()))


def attractor_iterate(sys: IfsSystem, seeds, n: int, cap: int = 2 ** 16,
                      rng: np.random.Generator | None = None) -> AttractorCloud:
    """n Hutchinson steps K -> union of T_i(K), uniformly subsampled to ``cap`` points."""
    if n < 1:
        raise ContractViolation("n >= 1 required")
    rng = rng or np.random.default_rng(0)
    cloud = np.asarray(seeds, dtype=float).reshape(-1, sys.dim)
    sub = False
    for _ in range(n):
        cloud = sys.images(cloud).reshape(-1, sys.dim)
        cloud = np.unique(cloud, axis=0)
        if len(cloud) > cap:
            cloud = cloud[np.sort(rng.choice(len(cloud), cap, replace=False))]
            sub = True
    gap = hausdorff(cloud, sys.images(cloud).reshape(-1, sys.dim))
    c = max(sys.lipschitz) if sys.lipschitz else 1.0
    return AttractorCloud(cloud, gap, 2.0 * c ** n * sys.diameter, sub)


@dataclass(frozen=True)
class IrreducibilityWitness:
    found: bool
    index: tuple[int, ...] | None     # maps applied in order, 0-based
    point: np.ndarray | None
    nearest: float


def ifs_irreducibility_witness(sys: IfsSystem, x, center, radius: float, k_max: int,
                               level_cap: int = 2 ** 20) -> IrreducibilityWitness:
    """Breadth-first search for a multi-index J with |T_J x - center| < radius."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    X = _point(sys, x)
    idx = np.zeros((1, 0), dtype=np.int64)
    nearest = math.inf
    for k in range(k_max + 1):
        d = np.linalg.norm(X - c, axis=1)
        nearest = min(nearest, float(d.min()))
        hit = np.nonzero(d < radius)[0]
        if hit.size:
            i = hit[0]
            return IrreducibilityWitness(True, tuple(int(j) for j in idx[i]), X[i].copy(), float(d[i]))
        if k == k_max or len(X) * sys.size > level_cap:
            break
        imgs = sys.images(X)                                   # (m, B, d)
        X = np.transpose(imgs, (1, 0, 2)).reshape(-1, sys.dim)
        idx = np.concatenate([np.repeat(idx, sys.size, axis=0),
                              np.tile(np.arange(sys.size), len(idx))[:, None]], axis=1)
    return IrreducibilityWitness(False, None, None, nearest)


def chaos_game(sys: IfsSystem, x0, n: int, rng: np.random.Generator, chains: int = 1) -> np.ndarray:
    """Markov chain X_{t+1} = T_i(X_t) with probability p_i(X_t); returns (n, chains, d)."""
    X = np.repeat(_point(sys, x0), chains, axis=0)
    out = np.empty((n, chains, sys.dim))
    for t in range(n):
        p = sys.probabilities(X)
        c = np.cumsum(p, axis=1)
        u = rng.random((chains, 1))
        choice = np.minimum((u > c).sum(axis=1), sys.size - 1)
        imgs = sys.images(X)
        X = imgs[choice, np.arange(chains)]
        out[t] = X
    return out
