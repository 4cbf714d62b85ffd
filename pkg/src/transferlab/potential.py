"""Potentials on configurations, moduli of continuity and regularity estimators.

Potentials and observables are vectorized callables: they take an array of
configurations with shape ``batch + (D,) + point_shape`` and return an array
of shape ``batch``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

from .space import (HALFLINE, SPHERE, Alphabet, AprioriMeasure, Config, ContractViolation,
                    distance_batch, prepend_batch)


class Potential:
    """Base class: ``inf_bound <= f <= sup_bound`` on every configuration.

    ``support_depth`` is the number of leading coordinates the value depends
    on (None for genuinely long-range potentials).
    """

    alphabet: Alphabet
    sup_bound: float
    inf_bound: float
    min_depth: int = 1
    support_depth: int | None = None
    name: str = "potential"

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tail_bound(self, depth: int) -> float:
        """Bound on |f(x) - f(x truncated to ``depth``)|."""
        return 0.0

    @property
    def sup_norm(self) -> float:
        return max(abs(self.sup_bound), abs(self.inf_bound))

    def _check_depth(self, coords: np.ndarray):
        depth = coords.shape[coords.ndim - 1 - len(self.alphabet.point_shape)]
        if depth < self.min_depth:
            raise ContractViolation(f"{self.name} needs depth >= {self.min_depth}, got {depth}")


class ConstantPotential(Potential):
    def __init__(self, alphabet: Alphabet, c: float):
        self.alphabet, self.c = alphabet, float(c)
        self.sup_bound = self.inf_bound = self.c
        self.support_depth = 0
        self.name = f"constant({self.c:g})"

    def __call__(self, coords):
        coords = np.asarray(coords, dtype=float)
        self._check_depth(coords)
        lead = coords.shape[:coords.ndim - 1 - len(self.alphabet.point_shape)]
        return np.full(lead, self.c)


class FiniteRangePotential(Potential):
    """Potential depending on the first ``k`` symbols of a finite alphabet.

    ``table`` has shape ``(s,) * k`` and is indexed by symbol indices.
    """

    def __init__(self, alphabet: Alphabet, table):
        if not alphabet.is_finite:
            raise ContractViolation("finite-range potentials need a finite alphabet")
        t = np.asarray(table, dtype=float)
        s = alphabet.size
        if t.ndim < 1 or any(n != s for n in t.shape):
            raise ContractViolation(f"table shape {t.shape} does not match alphabet size {s}")
        self.alphabet, self.table = alphabet, t
        self.k = t.ndim
        self._flat = t.ravel()
        self._radix = s ** np.arange(self.k - 1, -1, -1)
        self.min_depth = self.support_depth = self.k
        self.sup_bound, self.inf_bound = float(t.max()), float(t.min())
        self.name = f"finite-range({self.k})"

    @classmethod
    def from_function(cls, alphabet: Alphabet, k: int, fn: Callable[[np.ndarray], np.ndarray]):
        """Tabulate ``fn`` evaluated on the symbol values of every k-word."""
        pts = np.asarray(alphabet.points)
        grids = np.meshgrid(*([pts] * k), indexing="ij")
        return cls(alphabet, fn(np.stack(grids, axis=-1)))

    def __call__(self, coords):
        coords = np.asarray(coords, dtype=float)
        self._check_depth(coords)
        idx = self.alphabet.index_of(coords[..., :self.k])
        return self._flat[idx @ self._radix]


class PairPotential(Potential):
    """f(x) = s(x_1) + sum_{d=1}^{R} K(d) <g(x_1), g(x_{d+1})>.

    ``R`` is tied to the configuration depth.  Subclasses supply the feature
    map g, the single-site term s and the couplings K.
    """

    feature_dim: int = 1

    def feature(self, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def single_site(self, a: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(a)[:np.ndim(a) - len(self.alphabet.point_shape)])

    single_site_max: float = 0.0

    def couplings(self, depth: int) -> np.ndarray:
        """K(1), ..., K(R) for configurations of the given depth."""
        raise NotImplementedError

    def feature_support(self, v: np.ndarray) -> np.ndarray:
        """sup over symbols a of <g(a), v>, vectorized over leading axes of v."""
        raise NotImplementedError

    def feature_sup_norm(self) -> float:
        """sup over symbols of the Euclidean norm of g(a)."""
        return 1.0

    def field(self, coords: np.ndarray, depth: int) -> np.ndarray:
        """sum_d K(d) g(coords_d) over the first R coordinates; shape ``batch + (F,)``."""
        kc = self.couplings(depth)
        g = self.feature(coords[..., :len(kc), :] if self.alphabet.point_shape else coords[..., :len(kc)])
        return np.einsum("...df,d->...f", g, kc)

    def __call__(self, coords):
        coords = np.asarray(coords, dtype=float)
        self._check_depth(coords)
        nd = len(self.alphabet.point_shape)
        depth = coords.shape[coords.ndim - 1 - nd]
        first = coords[..., 0, :] if nd else coords[..., 0]
        rest = coords[..., 1:, :] if nd else coords[..., 1:]
        return self.single_site(first) + np.einsum("...f,...f->...", self.feature(first),
                                                   self.field(rest, depth))


def _dyson_couplings(epsilon: float, count: int) -> np.ndarray:
    return np.arange(1, count + 1, dtype=float) ** (-2.0 - epsilon)


class DysonSphere(PairPotential):
    """Long-range O(N) interaction f(x) = sum_{n=1}^{D-1} n^{-2-eps} <x_1, x_{n+1}>."""

    def __init__(self, epsilon: float, n: int = 2):
        if epsilon <= 0:
            raise ContractViolation("Dyson potentials need epsilon > 0")
        self.epsilon, self.N = float(epsilon), int(n)
        self.alphabet = Alphabet.sphere(self.N)
        self.feature_dim = self.N
        zeta = float(special.zeta(2.0 + self.epsilon, 1))
        self.sup_bound, self.inf_bound = zeta, -zeta
        self.min_depth = 2
        self.name = f"dyson-sphere(eps={self.epsilon:g}, N={self.N})"

    def feature(self, a):
        return np.asarray(a, dtype=float)

    def couplings(self, depth):
        return _dyson_couplings(self.epsilon, depth - 1)

    def feature_support(self, v):
        v = np.asarray(v, dtype=float)
        return np.sqrt(np.einsum("...f,...f->...", v, v))

    def tail_bound(self, depth):
        return float(special.zeta(2.0 + self.epsilon, depth))


class DysonHalfLine(PairPotential):
    """Non-compact variant on [0, inf) with pi(a) = a / (1 + a).

    f(x) = pi(x_1) sum_{n=1}^{D-1} n^{-2-eps} pi(x_n); the n = 1 term is the
    self-interaction J(1) pi(x_1)^2, kept as written.
    """

    feature_dim = 1

    def __init__(self, epsilon: float):
        if epsilon <= 0:
            raise ContractViolation("Dyson potentials need epsilon > 0")
        self.epsilon = float(epsilon)
        self.alphabet = Alphabet.half_line()
        self.sup_bound = float(special.zeta(2.0 + self.epsilon, 1))
        self.inf_bound = 0.0
        self.single_site_max = 1.0
        self.min_depth = 2
        self.name = f"dyson-halfline(eps={self.epsilon:g})"

    def feature(self, a):
        a = np.asarray(a, dtype=float)
        return (a / (1.0 + a))[..., None]

    def single_site(self, a):
        a = np.asarray(a, dtype=float)
        return (a / (1.0 + a)) ** 2

    def couplings(self, depth):
        return _dyson_couplings(self.epsilon, depth - 1)[1:]

    def feature_support(self, v):
        return np.maximum(v[..., 0], 0.0)

    def tail_bound(self, depth):
        return float(special.zeta(2.0 + self.epsilon, depth))


def dyson_potential(alphabet_kind: str, epsilon: float, n: int = 2) -> PairPotential:
    if alphabet_kind == SPHERE:
        return DysonSphere(epsilon, n)
    if alphabet_kind == HALFLINE:
        return DysonHalfLine(epsilon)
    raise ContractViolation(f"no Dyson potential on {alphabet_kind}")


class Observable:
    """Bounded test function with a declared sup norm."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], sup_norm: float, name: str = "phi",
                 support_depth: int | None = None, offset: float = 0.0):
        self.fn, self.name, self.offset = fn, name, float(offset)
        self.sup_norm = float(sup_norm)
        self.support_depth = support_depth

    def __call__(self, coords):
        return self.fn(np.asarray(coords, dtype=float)) - self.offset

    def centered(self, mean: float, name: str | None = None) -> "Observable":
        return Observable(self.fn, self.sup_norm + abs(mean), name or f"{self.name}-centered",
                          self.support_depth, self.offset + mean)


def constant_observable(alphabet: Alphabet, value: float = 1.0) -> Observable:
    nd = len(alphabet.point_shape)
    return Observable(lambda c: np.full(c.shape[:c.ndim - 1 - nd], float(value)), abs(value),
                      f"const({value:g})", 0)


def coordinate_observable(alphabet: Alphabet, position: int = 1, component: int = 0) -> Observable:
    """pi(x) = component of coordinate ``position`` (1-based)."""
    i = position - 1
    if alphabet.point_shape:
        fn = lambda c: c[..., i, component]
        bound = 1.0
    else:
        fn = lambda c: c[..., i]
        bound = max(abs(p) for p in alphabet.points) if alphabet.is_finite else math.inf
    return Observable(fn, bound, f"coord{position}[{component}]", position)


def birkhoff_sum(f: Potential, path) -> float:
    """f(x_1) + ... + f(x_n) along a path of configurations."""
    path = list(path)
    if not path:
        raise ContractViolation("empty path")
    return float(sum(float(f(p.coords)) for p in path))


def eval_potential(f: Potential, x: Config) -> float:
    if x.alphabet != f.alphabet:
        raise ContractViolation("configuration and potential use different alphabets")
    if x.depth < f.min_depth:
        raise ContractViolation(f"{f.name} needs depth >= {f.min_depth}, got {x.depth}")
    return float(f(x.coords))


@dataclass(frozen=True)
class ModulusOfContinuity:
    """Power(alpha): r^alpha.  Log(eps, r0): log(r0/r)^-eps."""

    kind: str
    exponent: float
    r0: float = 1.0

    @classmethod
    def power(cls, alpha: float) -> "ModulusOfContinuity":
        if not 0 < alpha <= 1:
            raise ContractViolation("power modulus needs alpha in (0, 1]")
        return cls("power", float(alpha))

    @classmethod
    def log(cls, epsilon: float, diameter: float = 1.0) -> "ModulusOfContinuity":
        """r0 = e^2 (1 + diameter) keeps log(r0/r) >= 2 on the whole space."""
        if epsilon <= 0:
            raise ContractViolation("log modulus needs epsilon > 0")
        return cls("log", float(epsilon), math.exp(2.0) * (1.0 + diameter))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "power":
            return r ** self.exponent
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = np.log(self.r0 / r[pos]) ** (-self.exponent)
        return out if out.ndim else float(out)

    def domination_constant(self, t_max: float = 1.0) -> float:
        """D_omega = sup_{0 < t <= t_max} t / omega(t)."""
        g = lambda t: -t / float(self(np.asarray(t)))
        res = optimize.minimize_scalar(g, bounds=(1e-12, t_max), method="bounded",
                                       options={"xatol": 1e-12})
        return max(-res.fun, t_max / float(self(np.asarray(t_max))))


@dataclass(frozen=True)
class RegularityReport:
    estimate: float
    flatness: float
    samples: int
    argmax_pair: tuple[np.ndarray, np.ndarray] | None = None
    by_horizon: tuple[float, ...] = ()


def _pair_batch(mu: AprioriMeasure, count: int, depth: int, rng: np.random.Generator):
    """Half independent pairs, half pairs agreeing on a random-length prefix."""
    x = mu.sample(rng, (count, depth))
    y = mu.sample(rng, (count, depth))
    near = rng.random(count) < 0.5
    cut = rng.integers(1, depth + 1, size=count)
    keep = (np.arange(depth)[None, :] < cut[:, None]) & near[:, None]
    if mu.alphabet.point_shape:
        keep = keep[..., None]
    y = np.where(keep, x, y)
    return x, y


def estimate_holder(f: Potential, omega: ModulusOfContinuity, pairs: int, rng: np.random.Generator,
                    depth: int = 32, mu: AprioriMeasure | None = None, chunk: int = 4096) -> RegularityReport:
    """Random-search lower bound on Hol_omega(f) = sup |f(x)-f(y)| / omega(d(x, y))."""
    if pairs < 1:
        raise ContractViolation("pairs >= 1 required")
    mu = mu or AprioriMeasure(f.alphabet)
    depth = max(depth, f.min_depth)
    best, arg, done = 0.0, None, 0
    while done < pairs:
        m = min(chunk, pairs - done)
        x, y = _pair_batch(mu, m, depth, rng)
        d = distance_batch(x, y, f.alphabet)
        w = omega(d)
        diff = np.abs(f(x) - f(y))
        ratio = np.where(w > 0, diff / np.where(w > 0, w, 1.0), 0.0)
        i = int(np.argmax(ratio))
        if ratio[i] > best:
            best, arg = float(ratio[i]), (x[i].copy(), y[i].copy())
        done += m
    return RegularityReport(best, 0.0, pairs, arg)


def flatness_estimate(f: Potential, mu: AprioriMeasure, omega: ModulusOfContinuity, n_max: int, trials: int,
                      rng: np.random.Generator, depth: int = 32, override: bool = False) -> RegularityReport:
    """Max over trials and n <= n_max of |f^n(w x) - f^n(w y)| / omega(d(x, y)).

    Paired paths share the prepended word w.  Dyson potentials with
    epsilon <= 2 are refused unless ``override`` is set, since the flatness
    argument for the log modulus needs epsilon > 2.
    """
    eps = getattr(f, "epsilon", None)
    if isinstance(f, (DysonSphere, DysonHalfLine)) and eps <= 2 and not override:
        raise ContractViolation(
            f"automatic flatness for Dyson potentials needs epsilon > 2 (got {eps:g}); "
            "pass override=True to run the estimator anyway")
    depth = max(depth, f.min_depth)
    x, y = _pair_batch(mu, trials, depth, rng)
    w = omega(distance_batch(x, y, f.alphabet))
    fx = np.zeros(trials)
    fy = np.zeros(trials)
    best, arg = 0.0, None
    by_n = []
    for _ in range(n_max):
        a = mu.sample(rng, trials)
        x = prepend_batch(a, x)
        y = prepend_batch(a, y)
        fx += f(x)
        fy += f(y)
        ratio = np.where(w > 0, np.abs(fx - fy) / np.where(w > 0, w, 1.0), 0.0)
        i = int(np.argmax(ratio))
        if ratio[i] > best:
            best, arg = float(ratio[i]), (x[i].copy(), y[i].copy())
        by_n.append(best)
    return RegularityReport(0.0, best, trials * n_max, arg, tuple(by_n))
