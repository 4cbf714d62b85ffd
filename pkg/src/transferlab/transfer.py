"""Transfer operators, their iterates, spectral radius, eigenfunction and normalization.

Iterates use the path form L^n phi(x) = E_w[exp(f^n(w x)) phi(w x)] with
w drawn from the a priori measure.  Three estimators are available:

* ``exact``: full enumeration of words (finite alphabets, small n);
* ``paths``: independent words, the plain Monte Carlo average;
* ``smc``: sequential Monte Carlo with resampling after every step, which
  keeps the variance of exp(f^n) under control for long words.  L^n 1 is the
  product of per-step mean weights, and standard errors come from
  independent batches.

All computations are done in log space with f shifted by its sup bound, so
geometric growth of exp(f^n) never overflows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .potential import (ConstantPotential, DysonHalfLine, DysonSphere, FiniteRangePotential, Observable,
                        PairPotential, Potential)
from .rng import substream
from .space import (Alphabet, AprioriMeasure, Config, ContractViolation, prepend_batch,
                    sample_configs)

EXACT_WORD_LIMIT = 2 ** 16


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class FullShift:
    """m_x = mu x delta_x: prepend a symbol drawn from the a priori measure."""

    apriori: AprioriMeasure

    @property
    def alphabet(self) -> Alphabet:
        return self.apriori.alphabet

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.apriori.sample(rng, size)

    def advance(self, states: np.ndarray, symbols: np.ndarray) -> np.ndarray:
        return prepend_batch(symbols, states)

    def enumerable(self, n: int, limit: int = EXACT_WORD_LIMIT) -> bool:
        return self.alphabet.is_finite and self.alphabet.size ** n <= limit


@dataclass(frozen=True)
class WeightedShift:
    """m_x = delta_{S(x)} x mu on truncated sequence space.

    The new state is (r, x_1/alpha_1, ..., x_{dim-1}/alpha_{dim-1}) with r
    drawn from the a priori measure on the real line.
    """

    weights: tuple[float, ...]
    apriori: AprioriMeasure

    @property
    def dim(self) -> int:
        return len(self.weights)

    @property
    def alphabet(self) -> Alphabet:
        return self.apriori.alphabet

    def draw(self, rng, size):
        return self.apriori.sample(rng, size)

    def advance(self, states, symbols):
        alpha = np.asarray(self.weights)
        out = np.empty_like(states)
        out[:, 0] = symbols
        out[:, 1:] = states[:, :-1] / alpha[:-1]
        return out

    def enumerable(self, n, limit=EXACT_WORD_LIMIT):
        return False


@dataclass(frozen=True)
class IfsKernel:
    """m_x = sum_i p_i(x) delta_{T_i x} for an iterated function system.

    ``system`` must provide ``images(x)`` of shape ``(m,) + x.shape`` and
    ``probabilities(x)`` of shape ``x.shape[:-1] + (m,)``.
    """

    system: object

    def enumerable(self, n, limit=EXACT_WORD_LIMIT):
        return self.system.size ** n <= limit


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class TransferEstimate:
    value: float
    std_error: float
    samples: int
    exact: bool
    log_value: float | None = None

    def __post_init__(self):
        if self.exact and self.std_error != 0.0:
            raise ContractViolation("exact estimates carry zero standard error")


def _states(x) -> np.ndarray:
    return x.coords if isinstance(x, Config) else np.asarray(x, dtype=float)


def _finite_symbols(apriori: AprioriMeasure):
    return np.asarray(apriori.alphabet.points), np.log(apriori.weight_array)


def transfer_batch(kernel, f: Potential, phi: Callable, states: np.ndarray, K: int = 1000,
                   rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray, bool]:
    """One application of the operator at each state of a batch.

    Returns ``(values, std_errors, exact)``.
    """
    states = np.asarray(states, dtype=float)
    B = states.shape[0]
    if isinstance(kernel, IfsKernel):
        imgs = kernel.system.images(states)
        p = kernel.system.probabilities(states)
        vals = np.zeros(B)
        for i in range(imgs.shape[0]):
            vals += p[:, i] * np.exp(f(imgs[i])) * phi(imgs[i])
        return vals, np.zeros(B), True
    if isinstance(kernel, FullShift) and kernel.alphabet.is_finite:
        pts, logw = _finite_symbols(kernel.apriori)
        vals = np.zeros(B)
        for a, lw in zip(pts, logw):
            y = kernel.advance(states, np.full(B, a))
            vals += np.exp(lw + f(y)) * phi(y)
        return vals, np.zeros(B), True
    if rng is None:
        raise ContractViolation("Monte Carlo transfer needs an rng")
    a = kernel.draw(rng, (B, K))
    rep = np.repeat(states, K, axis=0)
    y = kernel.advance(rep, a.reshape((B * K,) + a.shape[2:]))
    v = (np.exp(f(y)) * phi(y)).reshape(B, K)
    se = v.std(axis=1, ddof=1) / math.sqrt(K) if K > 1 else np.full(B, np.inf)
    return v.mean(axis=1), se, False


def apply_transfer(kernel, f: Potential, phi: Callable, x, K: int = 1000,
                   rng: np.random.Generator | None = None) -> TransferEstimate:
    """L phi(x) = integral of exp(f) phi dm_x; exact on finite alphabets."""
    if K < 1:
        raise ContractViolation("K >= 1 required")
    v, se, exact = transfer_batch(kernel, f, phi, _states(x)[None], K, rng)
    return TransferEstimate(float(v[0]), float(se[0]), 0 if exact else K, exact)


def _enumerate_words(kernel: FullShift, f: Potential, state: np.ndarray, n: int):
    """All s^n words: final states and log weights log mu(w) + f^n(w x), level by level."""
    pts, logw = _finite_symbols(kernel.apriori)
    s = len(pts)
    X = state[None]
    lw = np.zeros(1)
    yield 0, X, lw
    for t in range(1, n + 1):
        m = X.shape[0]
        X = kernel.advance(np.repeat(X, s, axis=0), np.tile(pts, m))
        lw = np.repeat(lw, s) + np.tile(logw, m) + f(X)
        yield t, X, lw


def _systematic(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling inside each batch row; returns flat global indices."""
    B, Kb = w.shape
    c = np.cumsum(w, axis=1)
    c /= c[:, -1:]
    off = np.arange(B)[:, None]
    u = (np.arange(Kb)[None, :] + rng.random((B, 1))) / Kb
    idx = np.searchsorted((c + off).ravel(), (u + off).ravel())
    return np.minimum(idx, B * Kb - 1)


@dataclass
class SmcStep:
    t: int
    states: np.ndarray
    shadow: np.ndarray | None
    weights: np.ndarray      # (B, Kb), normalized within each batch
    log_z: np.ndarray        # (B,), log of the running estimate of L^t 1


def smc_steps(kernel, f: Potential, x: np.ndarray, n: int, K: int, rng: np.random.Generator,
              batches: int = 16, shadow: np.ndarray | None = None):
    """Sequential Monte Carlo along prepended words, yielding every step.

    The yielded states are weighted (before resampling), so
    ``exp(log_z[b]) * sum(weights[b] * phi(states[b]))`` estimates L^t phi(x)
    in batch b.  An optional shadow state is driven by the same symbols and
    resampled along with the main particles (the natural coupling).
    """
    B = int(batches)
    Kb = max(1, int(K) // B)
    X = np.repeat(x[None], B * Kb, axis=0)
    Y = None if shadow is None else np.repeat(shadow[None], B * Kb, axis=0)
    log_z = np.zeros(B)
    top = f.sup_bound
    for t in range(1, n + 1):
        a = kernel.draw(rng, B * Kb)
        X = kernel.advance(X, a)
        if Y is not None:
            Y = kernel.advance(Y, a)
        lw = (f(X) - top).reshape(B, Kb)
        m = lw.max(axis=1)
        w = np.exp(lw - m[:, None])
        log_z = log_z + np.log(w.mean(axis=1)) + m + top
        w /= w.sum(axis=1, keepdims=True)
        yield SmcStep(t, X, Y, w, log_z.copy())
        if t < n:
            idx = _systematic(w, rng)
            X = X[idx]
            if Y is not None:
                Y = Y[idx]


def _combine_batches(log_z: np.ndarray, ratios: np.ndarray) -> tuple[float, float, float | None]:
    """Mean and standard error of exp(log_z_b) * ratio_b over batches."""
    top = log_z.max()
    v = np.exp(log_z - top) * ratios
    mean = v.mean()
    se = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else math.inf
    scale = math.exp(top) if top < 700 else math.inf
    log_value = top + math.log(mean) if mean > 0 else None
    return mean * scale, se * scale, log_value


def apply_transfer_n(kernel, f: Potential, phi: Callable, x, n: int, K: int = 10_000,
                     rng: np.random.Generator | None = None, method: str = "auto",
                     batches: int = 16) -> TransferEstimate:
    """Estimate L^n phi(x) along sampled words of length n.

    ``method="auto"`` enumerates all words when the alphabet is finite and
    s^n <= 2^16, and uses sequential Monte Carlo otherwise.
    """
    if K < 1:
        raise ContractViolation("K >= 1 required")
    x = _states(x)
    if n == 0:
        return TransferEstimate(float(phi(x[None])[0]), 0.0, 0, True)
    if method == "auto":
        method = "exact" if kernel.enumerable(n) else "smc"
    if method == "exact":
        if isinstance(kernel, IfsKernel):
            v = ifs_enumerate_transfer(kernel.system, f, phi, x, n)
            return TransferEstimate(v, 0.0, 0, True)
        for t, X, lw in _enumerate_words(kernel, f, x, n):
            pass
        top = lw.max()
        v = float(np.sum(np.exp(lw - top) * phi(X)))
        lv = top + math.log(v) if v > 0 else None
        return TransferEstimate(v * math.exp(top), 0.0, 0, True, lv)
    if rng is None:
        raise ContractViolation("Monte Carlo iterates need an rng")
    if method == "paths":
        X = np.repeat(x[None], K, axis=0)
        lw = np.zeros(K)
        for _ in range(n):
            X = kernel.advance(X, kernel.draw(rng, K))
            lw += f(X)
        top = lw.max()
        v = np.exp(lw - top) * phi(X)
        scale = math.exp(top)
        mean = v.mean()
        lv = top + math.log(mean) if mean > 0 else None
        se = v.std(ddof=1) / math.sqrt(K) if K > 1 else math.inf
        return TransferEstimate(mean * scale, se * scale, K, False, lv)
    if method == "smc":
        last = None
        for step in smc_steps(kernel, f, x, n, K, rng, batches):
            last = step
        B = last.weights.shape[0]
        ph = phi(last.states).reshape(B, -1)
        v, se, lv = _combine_batches(last.log_z, np.sum(last.weights * ph, axis=1))
        return TransferEstimate(v, se, last.weights.size, False, lv)
    raise ContractViolation(f"unknown method {method!r}")


def ifs_enumerate_transfer(system, f: Potential | None, phi: Callable, x: np.ndarray, n: int) -> float:
    """sum over multi-indices |J| = n of p_J(x) exp(f^n) phi(T_J x), by enumeration."""
    X = np.asarray(x, dtype=float)[None]
    lw = np.zeros(1)
    for _ in range(n):
        imgs = system.images(X)                      # (m, B, d)
        p = system.probabilities(X)                  # (B, m)
        m = imgs.shape[0]
        X = np.transpose(imgs, (1, 0, 2)).reshape(-1, X.shape[-1])
        add = 0.0 if f is None else f(X)
        lw = np.repeat(lw, m) + np.log(p).ravel() + add
    return float(np.sum(np.exp(lw) * phi(X)))


# ---------------------------------------------------------------------------
# spectral radius


@dataclass(frozen=True)
class SpectralRadius:
    value: float
    std_error: float
    log_value: float
    log_std_error: float
    window: tuple[int, int]
    exact: bool
    intercept: float


def _slope(ns: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    A = np.vstack([ns, np.ones_like(ns)]).T
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    return float(coef[0]), float(coef[1])


def _log_mean_batches(log_z: np.ndarray) -> np.ndarray:
    """log of the batch mean of exp(log_z), along the last axis."""
    return logsumexp(log_z, axis=-1) - math.log(log_z.shape[-1])


def spectral_radius(kernel, f: Potential, probe, n_max: int, K: int = 20_000,
                    rng: np.random.Generator | None = None, method: str = "auto",
                    batches: int = 32) -> SpectralRadius:
    """rho from the slope of log L^n 1(probe) against n.

    The regression uses the window n in [n_max/2, n_max], where the bounded
    prefactor of L^n 1 has settled.  The standard error is a jackknife over
    independent Monte Carlo batches.
    """
    if n_max < 4:
        raise ContractViolation("n_max >= 4 required")
    x = _states(probe)
    lo = n_max // 2
    ns = np.arange(lo, n_max + 1, dtype=float)
    if method == "auto":
        method = "exact" if kernel.enumerable(n_max) else "smc"
    if method == "exact":
        logs = []
        for t, X, lw in _enumerate_words(kernel, f, x, n_max):
            if t >= lo:
                logs.append(logsumexp(lw))
        s, c = _slope(ns, np.asarray(logs))
        return SpectralRadius(math.exp(s), 0.0, s, 0.0, (lo, n_max), True, c)
    if method != "smc":
        raise ContractViolation(f"unknown method {method!r}")
    if rng is None:
        raise ContractViolation("Monte Carlo spectral radius needs an rng")
    rows = []
    for step in smc_steps(kernel, f, x, n_max, K, rng, batches):
        if step.t >= lo:
            rows.append(step.log_z)
    L = np.asarray(rows)                              # (window, B)
    s, c = _slope(ns, _log_mean_batches(L))
    B = L.shape[1]
    loo = np.array([_slope(ns, _log_mean_batches(np.delete(L, b, axis=1)))[0] for b in range(B)])
    se = math.sqrt((B - 1) / B * np.sum((loo - loo.mean()) ** 2))
    return SpectralRadius(math.exp(s), math.exp(s) * se, s, se, (lo, n_max), False, c)


# ---------------------------------------------------------------------------
# eigenfunctions


class Eigenfunction:
    """Positive function h with a declared envelope exp(log_lower) <= h <= exp(log_upper).

    ``depends_on`` is the number of leading coordinates h reads (None: all).
    """

    log_lower: float
    log_upper: float
    certified: bool = False
    depends_on: int | None = None

    def log_values(self, coords: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, coords) -> np.ndarray:
        return np.exp(self.log_values(coords))


def _lead(coords: np.ndarray, alphabet: Alphabet) -> tuple[int, ...]:
    return coords.shape[:coords.ndim - 1 - len(alphabet.point_shape)]


def _drop_first(coords: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    nd = len(alphabet.point_shape)
    return coords[(Ellipsis, slice(1, None)) + (slice(None),) * nd]


def _prefix(coords: np.ndarray, alphabet: Alphabet, k: int) -> np.ndarray:
    nd = len(alphabet.point_shape)
    return coords[(Ellipsis, slice(0, k)) + (slice(None),) * nd]


class TabulatedEigenfunction(Eigenfunction):
    """h given by a table over k-cylinders of a finite alphabet."""

    def __init__(self, alphabet: Alphabet, k: int, values):
        v = np.asarray(values, dtype=float).reshape(-1)
        if v.size != alphabet.size ** k or np.any(v <= 0):
            raise ContractViolation("need one positive value per k-cylinder")
        self.alphabet, self.k = alphabet, k
        self.logv = np.log(v)
        self.log_lower, self.log_upper = float(self.logv.min()), float(self.logv.max())
        self.certified = True
        self.depends_on = k
        self._radix = alphabet.size ** np.arange(k - 1, -1, -1)

    def log_values(self, coords):
        idx = self.alphabet.index_of(np.asarray(coords)[..., :self.k]) @ self._radix
        return self.logv[idx]


class CesaroEigenfunction(Eigenfunction):
    """h_n(x) = (1/n) sum_{j=0}^{n} rho^-j L^j 1(x) under common random numbers.

    Each evaluation restarts the generator from the same key, so h is a
    deterministic function of x.  The j-th term reuses the first j symbols of
    the same word bank (prefix sharing).  When the potential reads only k
    leading coordinates, h reads only k - 1 of them and values are cached by
    that prefix.
    """

    def __init__(self, kernel, f: Potential, rho: float, n: int, K: int = 10_000, seed: int = 0,
                 method: str = "auto", batches: int = 16):
        if rho <= 0:
            raise ContractViolation("rho must be positive")
        if n < 1:
            raise ContractViolation("n >= 1 required")
        self.kernel, self.f, self.rho, self.n, self.K = kernel, f, float(rho), int(n), int(K)
        self.seed, self.batches = seed, batches
        self.method = ("exact" if kernel.enumerable(n) else "smc") if method == "auto" else method
        self.alphabet = kernel.alphabet
        self.depends_on = None if f.support_depth is None else max(f.support_depth - 1, 0)
        self._cache: dict[bytes, tuple[float, np.ndarray]] = {}
        self.log_lower, self.log_upper = -math.inf, math.inf
        if self.depends_on is not None and self.alphabet.is_finite and \
                self.alphabet.size ** self.depends_on <= 4096:
            self._tabulate()

    def _tabulate(self):
        k = self.depends_on
        s = self.alphabet.size
        pts = np.asarray(self.alphabet.points)
        idx = np.indices((s,) * k).reshape(k, -1).T if k else np.zeros((1, 0), int)
        depth = max(self.f.min_depth, k, 1)
        logs = []
        for row in idx:
            x = np.full(depth, pts[0])
            x[:k] = pts[row]
            logs.append(self._log_one(x)[0])
        self.log_lower, self.log_upper = float(min(logs)), float(max(logs))
        self.certified = True

    def _terms(self, x: np.ndarray) -> np.ndarray:
        """Per-batch (or per-word) Cesaro averages; their mean is h_n(x)."""
        n, lr = self.n, math.log(self.rho)
        if self.method == "exact":
            acc = []
            for t, X, lw in _enumerate_words(self.kernel, self.f, x, n):
                acc.append(logsumexp(lw) - t * lr)
            return np.array([math.exp(logsumexp(acc) - math.log(n))])
        rng = substream(self.seed, "cesaro")
        if self.method == "paths":
            X = np.repeat(x[None], self.K, axis=0)
            lw = np.zeros(self.K)
            acc = np.zeros(self.K) + 1.0
            for t in range(1, n + 1):
                X = self.kernel.advance(X, self.kernel.draw(rng, self.K))
                lw += self.f(X) - lr
                acc += np.exp(lw)
            return acc / n
        if self.method == "smc":
            B = self.batches
            acc = np.ones(B)
            for step in smc_steps(self.kernel, self.f, x, n, self.K, rng, B):
                acc += np.exp(step.log_z - step.t * lr)
            return acc / n
        raise ContractViolation(f"unknown method {self.method!r}")

    def _key(self, x: np.ndarray) -> bytes:
        if self.depends_on is None:
            return x.tobytes()
        return _prefix(x, self.alphabet, self.depends_on).tobytes()

    def _log_one(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        key = self._key(x)
        hit = self._cache.get(key)
        if hit is None:
            terms = self._terms(x)
            hit = (math.log(terms.mean()), terms)
            self._cache[key] = hit
        return hit

    def log_values(self, coords):
        coords = np.asarray(coords, dtype=float)
        lead = _lead(coords, self.alphabet)
        flat = coords.reshape((-1,) + coords.shape[len(lead):])
        out = np.array([self._log_one(c)[0] for c in flat])
        return out.reshape(lead)

    def estimate(self, x) -> TransferEstimate:
        terms = self._log_one(_states(x))[1]
        if self.method == "exact":
            return TransferEstimate(float(terms[0]), 0.0, 0, True)
        return TransferEstimate(float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(len(terms))),
                                self.K, False)

    def ratio(self, x, y) -> tuple[float, float]:
        """h(x)/h(y) with a standard error (delta method over words or batches)."""
        tx = self._log_one(_states(x))[1]
        ty = self._log_one(_states(y))[1]
        r = tx.mean() / ty.mean()
        if self.method == "exact":
            return float(r), 0.0
        resid = tx - r * ty
        se = resid.std(ddof=1) / math.sqrt(len(tx)) / ty.mean()
        return float(r), float(se)


class BankEigenfunction(Eigenfunction):
    """Cesaro eigenfunction of a pair potential represented by a frozen vector bank.

    For f(x) = s(x_1) + sum_d K(d) <g(x_1), g(x_{d+1})>, the word energy splits
    into an internal part C(w), invariant under reversing w, and a boundary
    part linear in the features of z:

        L^j 1(z) = E[exp(C_j(w) + sum_m <U(w)_m, g(z_m)>)],
        U(w)_m = sum_i K(i+m-1) g(v_i),  v = w reversed.

    Free words are drawn from the law proportional to exp(C_j) by sequential
    Monte Carlo, which also estimates Z_j = E[exp(C_j)].  Then

        h(z) = (1/n) sum_j rho^-j Z_j mean_k exp(<U_jk, G(z)>),

    a smooth, positive, deterministic function of z with certified envelope
    sum c e^{-r} <= h <= sum c e^{r}, r = sup|<U, G>|.
    """

    def __init__(self, f: PairPotential, apriori: AprioriMeasure, rho: float, n: int, depth: int,
                 particles: int = 8192, per_term: int = 64, seed: int = 0):
        if rho <= 0:
            raise ContractViolation("rho must be positive")
        self.f, self.apriori, self.rho, self.n, self.depth = f, apriori, float(rho), int(n), int(depth)
        self.alphabet = apriori.alphabet
        kc = f.couplings(depth)
        R = len(kc)
        self.window = W = R
        F = f.feature_dim
        rng = substream(seed, "bank")
        gmax = f.feature_sup_norm()
        top = f.single_site_max + float(np.sum(np.abs(kc))) * gmax ** 2
        hank = np.zeros((W, R))
        for m in range(W):
            hank[m, :R - m] = kc[m:]
        hist = np.zeros((particles, R, F))
        log_z = 0.0
        U_terms = [np.zeros((1, W, F))]
        logc_terms = [np.zeros(1)]
        self.log_z = [0.0]
        lr = math.log(self.rho)
        for j in range(1, self.n + 1):
            a = apriori.sample(rng, particles)
            g = f.feature(a)
            L = min(j - 1, R)
            lw = f.single_site(a) - top
            if L:
                lw = lw + np.einsum("kdf,d,kf->k", hist[:, :L], kc[:L], g)
            m = lw.max()
            w = np.exp(lw - m)
            log_z += math.log(w.mean()) + m + top
            self.log_z.append(log_z)
            hist[:, 1:] = hist[:, :-1]
            hist[:, 0] = g
            idx = _systematic((w / w.sum())[None], rng)
            hist = hist[idx]
            sel = np.sort(rng.choice(particles, size=min(per_term, particles), replace=False))
            Lj = min(j, R)
            U_terms.append(np.einsum("mi,kif->kmf", hank[:, :Lj], hist[sel, :Lj]))
            logc_terms.append(np.full(len(sel), log_z - j * lr - math.log(len(sel))))
        U = np.concatenate(U_terms)
        self.log_c = np.concatenate(logc_terms) - math.log(self.n)
        self.U = U
        self.U_flat = U.reshape(len(U), -1)
        self.U_first = U[:, 0]
        self.U_rest = U[:, 1:].reshape(len(U), -1)
        self.size = len(U)
        self.first_support = f.feature_support(self.U_first)
        r = gmax * np.linalg.norm(U, axis=2).sum(axis=1)
        self.log_lower = float(logsumexp(self.log_c - r))
        self.log_upper = float(logsumexp(self.log_c + r))
        self.certified = True
        self.depends_on = W

    def _features(self, coords: np.ndarray, k: int) -> np.ndarray:
        pre = _prefix(coords, self.alphabet, k)
        g = self.f.feature(pre)
        return g.reshape(g.shape[:-2] + (-1,))

    def log_values(self, coords, chunk: int = 2048):
        coords = np.asarray(coords, dtype=float)
        lead = _lead(coords, self.alphabet)
        G = self._features(coords, self.window).reshape(-1, self.U_flat.shape[1])
        out = np.empty(len(G))
        for i in range(0, len(G), chunk):
            out[i:i + chunk] = logsumexp(self.log_c + G[i:i + chunk] @ self.U_flat.T, axis=1)
        return out.reshape(lead)

    def tail_terms(self, states: np.ndarray) -> np.ndarray:
        """log c_t + <U_t[2:], G(y)> for each state y; shape (B, T)."""
        G = self._features(states, self.window - 1)
        return self.log_c + G @ self.U_rest.T

    def prepend_context(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Scaled tail weights and their log shift for fast evaluation of h(a y).

        The shift dominates tail + <g(a), U_first> for every symbol, so the
        scaled products never overflow.
        """
        tail = self.tail_terms(states)
        shift = np.max(tail + self.first_support, axis=1)
        return np.exp(tail - shift[:, None]), shift

    def log_values_prepended(self, tail_exp: np.ndarray, shift: np.ndarray, symbols: np.ndarray) -> np.ndarray:
        """log h(a y) from the prepend context of y, one symbol per row.

        ``tail_exp`` may be a single row, shared by all symbols.
        """
        E = np.exp(self.f.feature(symbols) @ self.U_first.T)
        if tail_exp.ndim == 1:
            return shift + np.log(E @ tail_exp)
        return shift + np.log(np.einsum("bt,bt->b", E, tail_exp))

    def log_sup_prepended(self, tail_exp: np.ndarray, shift: np.ndarray) -> np.ndarray:
        """Upper bound on sup_a log h(a y)."""
        return shift + np.log(tail_exp @ np.exp(self.first_support - self.first_support.max())) \
            + self.first_support.max()


class WordBankEigenfunction(Eigenfunction):
    """Cesaro eigenfunction of a finite-range potential on a finite alphabet.

    For a word a_j ... a_1 prepended to x, only the k - 1 windows touching x
    depend on x.  Free words are grown from the far end, so the symbols next
    to x are always the newest ones and never suffer path degeneracy:

        L^j 1(x) = Z_j sum_u q_j(u) exp(B(u, x)),

    with Z_j = E[exp(internal energy)], q_j the law of the k - 1 symbols next
    to x under the free-word measure and B(u, x) the boundary energy.  Words
    shorter than k - 1 are enumerated exactly.  h depends on x_1..x_{k-1}
    only and is tabulated, which certifies its envelope.
    """

    def __init__(self, f: FiniteRangePotential, apriori: AprioriMeasure, rho: float, n: int,
                 particles: int = 10_000, seed: int = 0):
        if rho <= 0:
            raise ContractViolation("rho must be positive")
        if n < 1:
            raise ContractViolation("n >= 1 required")
        self.f, self.apriori, self.rho, self.n = f, apriori, float(rho), int(n)
        self.alphabet = apriori.alphabet
        k, s = f.k, self.alphabet.size
        self.k = k
        m = k - 1
        self.depends_on = m
        pts = np.asarray(self.alphabet.points)
        lr = math.log(self.rho)
        rng = substream(seed, "word-bank")
        logmu = np.log(apriori.weight_array)
        # free words of length j >= m: histogram of the m newest symbols
        radix = s ** np.arange(m - 1, -1, -1) if m else np.zeros(0, int)
        log_coef = np.full(s ** m, -np.inf)
        G = np.zeros((particles, m), dtype=np.int64)
        log_z = 0.0
        table = f.table
        for j in range(1, n + 1):
            b = rng.choice(s, size=particles, p=apriori.weight_array)
            if j >= k:
                lw = table[tuple(G.T) + (b,)]
                top = lw.max()
                w = np.exp(lw - top)
                log_z += math.log(w.mean()) + top
                w /= w.sum()
            else:
                w = None
            if m:
                G = np.concatenate([G[:, 1:], b[:, None]], axis=1)
            if j >= m:
                code = G @ radix if m else np.zeros(particles, dtype=np.int64)
                q = np.bincount(code, weights=w, minlength=s ** m)
                if w is None:
                    q = q / particles
                with np.errstate(divide="ignore"):
                    log_coef = np.logaddexp(log_coef, np.log(q) + log_z - j * lr)
            if w is not None and j < n:
                idx = _systematic(w[None], rng)
                G = G[idx]
        if m == 0:
            log_coef = np.logaddexp(log_coef, 0.0)      # the j = 0 term
        self.log_coef = log_coef - math.log(self.n)
        self._bank_words = pts[np.indices((s,) * m).reshape(m, -1).T] if m else np.zeros((1, 0))
        # exact short words, j = 0 .. min(m - 1, n)
        self._short = min(m - 1, n)
        cyl = pts[np.indices((s,) * m).reshape(m, -1).T] if m else np.zeros((1, 0))
        depth = max(k, 1)
        logs = []
        for row in cyl:
            x = np.full(depth, pts[0])
            x[:m] = row
            logs.append(self._log_direct(x, logmu))
        self._radix = radix
        self.logv = np.asarray(logs)
        self.log_lower, self.log_upper = float(self.logv.min()), float(self.logv.max())
        self.certified = True

    def _boundary(self, x: np.ndarray) -> np.ndarray:
        """B(u, x) for every bank word u (newest symbol last, next to x)."""
        m = self.k - 1
        U = self._bank_words
        total = np.zeros(len(U))
        for i in range(1, m + 1):
            z = np.concatenate([U[:, m - i:], np.repeat(x[None, :self.k - i], len(U), axis=0)], axis=1)
            total += self.f(z)
        return total

    def _log_direct(self, x: np.ndarray, logmu: np.ndarray) -> float:
        terms = [logsumexp(self.log_coef + self._boundary(x))]
        if self._short >= 0:
            lr = math.log(self.rho)
            kern = FullShift(self.apriori)
            for t, X, lw in _enumerate_words(kern, self.f, x, self._short):
                terms.append(logsumexp(lw) - t * lr - math.log(self.n))
        return float(logsumexp(terms))

    def log_values(self, coords):
        coords = np.asarray(coords, dtype=float)
        m = self.k - 1
        if m == 0:
            return np.full(coords.shape[:-1], self.logv[0])
        idx = self.alphabet.index_of(coords[..., :m]) @ self._radix
        return self.logv[idx]


def eigenfunction_eval(kernel, f: Potential, rho: float, x, n: int, K: int = 10_000, seed: int = 0,
                       method: str = "auto") -> float:
    """Cesaro eigenfunction value h_n(x), deterministic given the seed."""
    h = CesaroEigenfunction(kernel, f, rho, n, K, seed, method)
    return float(h(_states(x)[None])[0])


# ---------------------------------------------------------------------------
# normalization


def _cut(coords: np.ndarray, alphabet: Alphabet, depth: int | None) -> np.ndarray:
    """Truncate configurations to ``depth`` coordinates (no-op when shallower or unset)."""
    return coords if depth is None else _prefix(coords, alphabet, depth)


class NormalizedPotential(Potential):
    """f_bar = f + log h - log h o shift - log lambda."""

    def __init__(self, f: Potential, h: Eigenfunction, log_lam: float, depth: int | None = None):
        self.f, self.h, self.log_lam, self.depth = f, h, float(log_lam), depth
        self.alphabet = f.alphabet
        span = h.log_upper - h.log_lower
        self.sup_bound = f.sup_bound + span - self.log_lam
        self.inf_bound = f.inf_bound - span - self.log_lam
        need = (h.depends_on or 0) + 1
        self.min_depth = max(f.min_depth, need, 2)
        if f.support_depth is not None and h.depends_on is not None:
            self.support_depth = max(f.support_depth, h.depends_on + 1)
        self.name = f"normalized[{f.name}]"

    def __call__(self, coords):
        coords = _cut(np.asarray(coords, dtype=float), self.alphabet, self.depth)
        return (self.f(coords) + self.h.log_values(coords)
                - self.h.log_values(_drop_first(coords, self.alphabet)) - self.log_lam)


@dataclass(frozen=True)
class NormalizationDiagnostics:
    probe_values: np.ndarray       # estimates of L_fbar 1 at each probe
    probe_errors: np.ndarray
    log_h: np.ndarray
    sup_drift: float
    exact: bool

    @property
    def drifts(self) -> np.ndarray:
        return self.probe_values - 1.0


@dataclass
class NormalizedSystem:
    """Normalized operator data: lambda, h, f_bar and the unit-drift check.

    ``log_target`` and ``log_bound`` serve the rejection sampler of the
    normalized chain: for candidate symbols a at state y the target density
    relative to the a priori measure is proportional to exp(f(a y)) h(a y).
    """

    kernel: FullShift
    potential: Potential
    log_lam: float
    eigenfunction: Eigenfunction
    tolerance: float = 0.02
    diagnostics: NormalizationDiagnostics | None = None
    spectral: SpectralRadius | None = None
    heuristic: bool = False
    notes: dict = field(default_factory=dict)
    depth: int | None = None        # potential and h are evaluated on this many leading coordinates

    def __post_init__(self):
        self.fbar = NormalizedPotential(self.potential, self.eigenfunction, self.log_lam, self.depth)
        self._fast = isinstance(self.eigenfunction, BankEigenfunction) and \
            self.eigenfunction.f is self.potential

    @property
    def lam(self) -> float:
        return math.exp(self.log_lam)

    @property
    def alphabet(self) -> Alphabet:
        return self.kernel.alphabet

    @property
    def accepted(self) -> bool:
        return self.diagnostics is not None and self.diagnostics.sup_drift <= self.tolerance

    # -- prepend evaluation -------------------------------------------------
    def prepare(self, states: np.ndarray) -> dict:
        states = _cut(states, self.alphabet, self.depth)
        ctx = {"states": states}
        if self._fast:
            f, h = self.potential, self.eigenfunction
            D = states.shape[1]
            ctx["field"] = f.field(states[:, :-1], D)
            ctx["tail"], ctx["shift"] = h.prepend_context(states)
        return ctx

    def log_target(self, ctx: dict, rows: np.ndarray, symbols: np.ndarray) -> np.ndarray:
        """f(a y) + log h(a y) for chains ``rows`` and one symbol each."""
        if self._fast:
            f, h = self.potential, self.eigenfunction
            g = f.feature(symbols)
            fa = f.single_site(symbols) + np.einsum("bf,bf->b", g, ctx["field"][rows])
            return fa + h.log_values_prepended(ctx["tail"][rows], ctx["shift"][rows], symbols)
        z = self.kernel.advance(ctx["states"][rows], symbols)
        return self.potential(z) + self.eigenfunction.log_values(z)

    def _log_target_one(self, ctx: dict, row: int, symbols: np.ndarray) -> np.ndarray:
        """``log_target`` for many symbols at a single chain, without copying its context."""
        if self._fast:
            f, h = self.potential, self.eigenfunction
            g = f.feature(symbols)
            fa = f.single_site(symbols) + g @ ctx["field"][row]
            return fa + h.log_values_prepended(ctx["tail"][row], ctx["shift"][row], symbols)
        return self.log_target(ctx, np.full(len(symbols), row), symbols)

    def log_bound(self, ctx: dict) -> np.ndarray:
        """Per-chain upper bound of ``log_target`` over all symbols."""
        B = ctx["states"].shape[0]
        if self._fast:
            f, h = self.potential, self.eigenfunction
            # sup_a <g(a), field + U_t> per bank term bounds each summand of exp(f) h separately
            out = np.empty(B)
            for lo in range(0, B, 64):
                v = ctx["field"][lo:lo + 64, None, :] + h.U_first[None]
                out[lo:lo + 64] = np.log(np.einsum("bt,bt->b", ctx["tail"][lo:lo + 64], np.exp(f.feature_support(v))))
            return f.single_site_max + ctx["shift"] + out
        if self.alphabet.is_finite:
            pts = np.asarray(self.alphabet.points)
            best = np.full(B, -np.inf)
            rows = np.arange(B)
            for a in pts:
                best = np.maximum(best, self.log_target(ctx, rows, np.full(B, a)))
            return best
        return np.full(B, self.potential.sup_bound + self.eigenfunction.log_upper)

    def log_normalizer(self, states: np.ndarray) -> np.ndarray:
        """log h(y) + log lambda: subtracting it from ``log_target`` gives f_bar(a y)."""
        states = _cut(states, self.alphabet, self.depth)
        D = states.shape[1]
        cut = states[:, :D - 1]
        return self.eigenfunction.log_values(cut) + self.log_lam

    def transfer(self, phi: Callable, states: np.ndarray, K: int = 1000,
                 rng: np.random.Generator | None = None, chunk: int = 8192):
        """L_fbar phi at each state: exact on finite alphabets, Monte Carlo otherwise."""
        states = np.asarray(states, dtype=float)
        B = states.shape[0]
        ctx = self.prepare(states)
        base = self.log_normalizer(states)
        if self.alphabet.is_finite:
            pts, logw = _finite_symbols(self.kernel.apriori)
            vals = np.zeros(B)
            rows = np.arange(B)
            for a, lw in zip(pts, logw):
                sym = np.full(B, a)
                z = self.kernel.advance(states, sym)
                vals += np.exp(lw + self.log_target(ctx, rows, sym) - base) * phi(z)
            return vals, np.zeros(B), True
        if rng is None:
            raise ContractViolation("Monte Carlo transfer needs an rng")
        means = np.empty(B)
        ses = np.empty(B)
        for b in range(B):
            s1 = s2 = 0.0
            done = 0
            while done < K:
                m = min(chunk, K - done)
                sym = self.kernel.draw(rng, m)
                lt = self._log_target_one(ctx, b, sym) - base[b]
                z = self.kernel.advance(np.repeat(states[b:b + 1], m, axis=0), sym)
                v = np.exp(lt) * phi(z)
                s1 += v.sum()
                s2 += (v * v).sum()
                done += m
            means[b] = s1 / K
            var = max(s2 / K - means[b] ** 2, 0.0) * K / max(K - 1, 1)
            ses[b] = math.sqrt(var / K)
        return means, ses, False


@dataclass(frozen=True)
class NormalizeConfig:
    depth: int = 64
    seed: int = 0
    n_max: int = 64                 # spectral-radius regression horizon
    K_rho: int = 20_000
    n_cesaro: int = 256
    K_cesaro: int = 10_000
    bank_particles: int = 8192
    bank_per_term: int = 16
    probes: int = 32
    K_check: int = 100_000
    tolerance: float = 0.02
    method: str = "auto"
    override_flatness: bool = False
    rho_batches: int = 32


def unit_drift(sys: NormalizedSystem, probes: np.ndarray, K: int, rng) -> NormalizationDiagnostics:
    ones = lambda z: np.ones(z.shape[0])
    vals, ses, exact = sys.transfer(ones, probes, K, rng)
    logh = sys.eigenfunction.log_values(probes)
    drift = float(np.max(np.abs(vals - 1.0)))
    return NormalizationDiagnostics(vals, ses, logh, drift, exact)


def normalize(kernel: FullShift, f: Potential, config: NormalizeConfig = NormalizeConfig()) -> NormalizedSystem:
    """Assemble lambda, h and f_bar, then check L_fbar 1 = 1 on random probes."""
    if isinstance(f, (DysonSphere, DysonHalfLine)) and f.epsilon <= 2 and not config.override_flatness:
        raise ContractViolation(
            f"Dyson potential with epsilon = {f.epsilon:g}: the flatness route to normalization "
            "needs epsilon > 2; set override_flatness to proceed anyway")
    if kernel.alphabet != f.alphabet:
        raise ContractViolation("kernel and potential use different alphabets")
    depth = max(config.depth, f.min_depth + 1)
    probes = sample_configs(kernel.apriori, config.probes, depth, substream(config.seed, "probes"))
    if isinstance(f, ConstantPotential):
        radius = SpectralRadius(math.exp(f.c), 0.0, f.c, 0.0, (0, 0), True, 0.0)
    else:
        radius = spectral_radius(kernel, f, probes[0], config.n_max, config.K_rho,
                                 substream(config.seed, "rho"), method=config.method,
                                 batches=config.rho_batches)
    if isinstance(f, PairPotential) and not kernel.alphabet.is_finite:
        h = BankEigenfunction(f, kernel.apriori, radius.value, config.n_cesaro, depth,
                              config.bank_particles, config.bank_per_term, config.seed)
    elif isinstance(f, FiniteRangePotential):
        h = WordBankEigenfunction(f, kernel.apriori, radius.value, config.n_cesaro, config.K_cesaro, config.seed)
    else:
        h = CesaroEigenfunction(kernel, f, radius.value, config.n_cesaro, config.K_cesaro, config.seed,
                                method=config.method)
        if not h.certified:
            h.log_lower, h.log_upper = _empirical_envelope(h, probes)
    sys = NormalizedSystem(kernel, f, radius.log_value, h, config.tolerance, spectral=radius,
                           heuristic=not kernel.alphabet.is_finite and kernel.alphabet.kind != "sphere",
                           depth=depth)
    sys.diagnostics = unit_drift(sys, probes, config.K_check, substream(config.seed, "unit-drift"))
    return sys


def _empirical_envelope(h: CesaroEigenfunction, probes: np.ndarray) -> tuple[float, float]:
    v = h.log_values(probes)
    span = float(v.max() - v.min())
    return float(v.min()) - span - 1.0, float(v.max()) + span + 1.0
