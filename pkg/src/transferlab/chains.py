"""The backward-walk chain Phi, the normalized chain Psi and their diagnostics.

Phi prepends symbols drawn from the a priori measure.  Psi prepends a symbol
with density exp(f_bar(a x)) relative to the a priori measure, sampled
exactly by rejection.  Chains are run in vectorized batches; a single chain
is the batch of size one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .potential import ConstantPotential, Observable
from .rng import substream
from .space import Config, ContractViolation, config_distance, sample_configs
from .transfer import FullShift, NormalizedSystem, transfer_batch

MAX_PROPOSALS = 10 ** 6
CHAIN_CHUNK = 1024


@dataclass
class ChainState:
    current: Config
    step: int
    rng: np.random.Generator


@dataclass
class AcceptanceStats:
    proposals: int = 0
    accepted: int = 0
    floor: float = 0.0     # exp(-(sup f_bar - inf f_bar)), the guaranteed rate

    @property
    def rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 1.0


def step_phi(kernel, state: ChainState) -> ChainState:
    """One backward-walk transition driven by the state's own generator."""
    x = state.current.coords[None]
    a = kernel.draw(state.rng, 1)
    new = kernel.advance(x, a)[0]
    return ChainState(Config(new, state.current.alphabet, _checked=False), state.step + 1, state.rng)


def step_psi(sys: NormalizedSystem, state: ChainState) -> ChainState:
    """One normalized-chain transition by exact rejection sampling."""
    if not sys.accepted:
        raise ContractViolation("the normalized system failed its unit-drift check")
    new = psi_advance(sys, state.current.coords[None], state.rng)[0]
    return ChainState(Config(new, state.current.alphabet, _checked=False), state.step + 1, state.rng)


class CrnPool:
    """Candidate symbols and uniforms keyed by (seed, step, pool row).

    Chains that share a pool row consume identical random numbers, which
    makes estimates at different starting points use common random numbers.
    """

    def __init__(self, kernel, seed: int, rows: int, width: int = 32, label: str = "pool"):
        self.kernel, self.seed, self.rows, self.width, self.label = kernel, seed, rows, width, label
        self._step = None
        self._blocks: list[tuple[np.ndarray, np.ndarray]] = []

    def start_step(self, t: int):
        self._step = t
        self._blocks = []

    def take(self, pool_rows: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
        """Candidate number ``r`` for the given pool rows."""
        block, col = divmod(r, self.width)
        while len(self._blocks) <= block:
            g = substream(self.seed, self.label, self._step, len(self._blocks))
            a = self.kernel.draw(g, (self.rows, self.width))
            u = g.random((self.rows, self.width))
            self._blocks.append((a, u))
        a, u = self._blocks[block]
        return a[pool_rows, col], u[pool_rows, col]


def psi_advance(sys: NormalizedSystem, states: np.ndarray, rng: np.random.Generator | None = None,
                candidates: int = 1, stats: AcceptanceStats | None = None,
                pool: CrnPool | None = None, pool_rows: np.ndarray | None = None,
                max_proposals: int = MAX_PROPOSALS) -> np.ndarray:
    """Advance a batch of Psi chains by one step (rejection sampling).

    The proposal is the a priori measure and the acceptance probability is
    exp(log_target - log_bound), with a per-chain bound that dominates the
    target for every symbol; the normalizing constants h(y) and lambda cancel.
    """
    out = np.empty_like(states)
    for lo in range(0, len(states), CHAIN_CHUNK):
        hi = min(lo + CHAIN_CHUNK, len(states))
        rows = None if pool_rows is None else pool_rows[lo:hi]
        out[lo:hi] = _psi_chunk(sys, states[lo:hi], rng, candidates, stats, pool, rows, max_proposals)
    return out


def _psi_chunk(sys, Y, rng, candidates, stats, pool, pool_rows, max_proposals):
    B = len(Y)
    ctx = sys.prepare(Y)
    bound = sys.log_bound(ctx)
    shape = sys.alphabet.point_shape
    chosen = np.empty((B,) + shape)
    active = np.arange(B)
    used = np.zeros(B, dtype=np.int64)
    r = 0
    while active.size:
        if pool is None:
            C = candidates
            A = sys.kernel.draw(rng, (active.size, C))
            U = rng.random((active.size, C))
        else:
            C = 1
            a, u = pool.take(pool_rows[active], r)
            A, U = a[:, None], u[:, None]
        rows = np.repeat(active, C)
        lt = sys.log_target(ctx, rows, A.reshape((-1,) + shape)).reshape(active.size, C)
        excess = lt - bound[active][:, None]
        if excess.max() > 1e-9:
            raise RuntimeError(f"rejection bound violated by {excess.max():.3g}: the sup bound is wrong")
        acc = np.log(U) < excess
        hit = acc.any(axis=1)
        first = np.argmax(acc, axis=1)
        chosen[active[hit]] = A[hit, first[hit]]
        used[active] += np.where(hit, first + 1, C)
        if stats is not None:
            stats.accepted += int(hit.sum())
            stats.proposals += int(np.where(hit, first + 1, C).sum())
        active = active[~hit]
        r += 1
        if active.size and used[active].max() > max_proposals:
            raise RuntimeError(f"rejection loop exceeded {max_proposals} proposals; check the sup bound")
    return sys.kernel.advance(Y, chosen)


def run_phi(kernel, states: np.ndarray, n: int, rng: np.random.Generator,
            record: Callable[[np.ndarray], np.ndarray] | None = None):
    """Run a batch of Phi chains for n steps; optionally record a statistic per step."""
    out = []
    for _ in range(n):
        states = kernel.advance(states, kernel.draw(rng, len(states)))
        if record is not None:
            out.append(record(states))
    return states, (np.asarray(out) if record is not None else None)


def run_psi(sys: NormalizedSystem, states: np.ndarray, n: int, rng: np.random.Generator | None = None,
            record: Callable[[np.ndarray], np.ndarray] | None = None, stats: AcceptanceStats | None = None,
            pool: CrnPool | None = None, pool_rows: np.ndarray | None = None, candidates: int = 1):
    """Run a batch of Psi chains for n steps; ``record`` maps states to per-chain values."""
    out = []
    for t in range(n):
        if pool is not None:
            pool.start_step(t)
        states = psi_advance(sys, states, rng, candidates, stats, pool, pool_rows)
        if record is not None:
            out.append(record(states))
    return states, (np.asarray(out) if record is not None else None)


def stationary_states(sys: NormalizedSystem, count: int, depth: int, burn_in: int,
                      rng: np.random.Generator, stats: AcceptanceStats | None = None) -> np.ndarray:
    """Independent Psi chains started from a priori configurations after ``burn_in`` steps."""
    x0 = sample_configs(sys.kernel.apriori, count, depth, rng)
    return run_psi(sys, x0, burn_in, rng, stats=stats)[0]


def acceptance_floor(sys: NormalizedSystem) -> float:
    return math.exp(-(sys.fbar.sup_bound - sys.fbar.inf_bound))


# ---------------------------------------------------------------------------
# Birkhoff sums versus chain sums


@dataclass(frozen=True)
class TwoSampleReport:
    ks: float
    threshold: float
    accepted: bool
    chain_sums: np.ndarray
    birkhoff_sums: np.ndarray


def birkhoff_vs_chain_check(sys: NormalizedSystem, phi: Callable, n: int, replicates: int,
                            rng: np.random.Generator, base: int | None = None,
                            burn_in: int = 1000) -> TwoSampleReport:
    """Chain sums phi(Psi_1) + ... + phi(Psi_n) against Birkhoff sums along Psi_n.

    Side one runs independent stationary chains and sums phi along them.
    Side two draws an independent stationary configuration of depth n + base
    and sums phi(sigma^j x) for j < n.  Both laws agree for a stationary chain.
    """
    if not sys.accepted:
        raise ContractViolation("the normalized system failed its unit-drift check")
    base = base or max(sys.fbar.min_depth + 1, 8)
    depth = base
    s1 = stationary_states(sys, replicates, depth, burn_in, rng)
    _, rec = run_psi(sys, s1, n, rng, record=phi)
    chain = rec.sum(axis=0)
    s2 = stationary_states(sys, replicates, n + base, burn_in + n, rng)
    nd = len(sys.alphabet.point_shape)
    birk = np.zeros(replicates)
    for j in range(n):
        sl = (slice(None), slice(j, j + base)) + (slice(None),) * nd
        birk += phi(s2[sl])
    ks = float(stats.ks_2samp(chain, birk).statistic)
    thr = 1.63 * math.sqrt(2.0 / replicates)
    return TwoSampleReport(ks, thr, ks <= thr, chain, birk)


# ---------------------------------------------------------------------------
# Breiman averages and stationarity


@dataclass(frozen=True)
class BreimanResult:
    averages: np.ndarray          # (chains, n): A_m for m = 1..n
    tolerance: float
    final: np.ndarray             # |A_n| per chain
    within: bool


def _operator(model, K: int, rng):
    if isinstance(model, NormalizedSystem):
        return lambda phi, X: model.transfer(phi, X, K, rng)[0]
    zero = ConstantPotential(model.alphabet, 0.0)
    return lambda phi, X: transfer_batch(model, zero, phi, X, K, rng)[0]


def _stepper(model, rng, stats=None):
    if isinstance(model, NormalizedSystem):
        if not model.accepted:
            raise ContractViolation("the normalized system failed its unit-drift check")
        return lambda X: psi_advance(model, X, rng, stats=stats)
    return lambda X: model.advance(X, model.draw(rng, len(X)))


def breiman_average(model, phi: Callable | Sequence[Callable], n: int, rng: np.random.Generator,
                    K: int = 1000, start: np.ndarray | None = None, chains: int = 1,
                    depth: int = 16, sup_norm: float | None = None):
    """Partial averages A_m = (1/m) sum_{k<m} (P phi(X_k) - phi(X_k)) for m = 1..n.

    ``model`` is a kernel (the chain Phi, P = L with f = 0) or a normalized
    system (the chain Psi, P = L_fbar).  Several test functions may be passed
    at once; they then share the chain paths.
    """
    phis = list(phi) if isinstance(phi, (list, tuple)) else [phi]
    apriori = model.kernel.apriori if isinstance(model, NormalizedSystem) else model.apriori
    X = start if start is not None else sample_configs(apriori, chains, depth, rng)
    P = _operator(model, K, rng)
    step = _stepper(model, rng)
    diffs = np.empty((len(phis), n, len(X)))
    for k in range(n):
        for i, p in enumerate(phis):
            diffs[i, k] = P(p, X) - p(X)
        X = step(X)
    avg = np.cumsum(diffs, axis=1) / np.arange(1, n + 1)[None, :, None]
    results = []
    for i, p in enumerate(phis):
        norm = sup_norm if sup_norm is not None else getattr(p, "sup_norm", 1.0)
        tol = 4.0 * norm / math.sqrt(n)
        fin = np.abs(avg[i, -1])
        results.append(BreimanResult(avg[i].T, tol, fin, bool(np.all(fin <= tol))))
    return results if isinstance(phi, (list, tuple)) else results[0]


@dataclass
class EmpiricalMeasure:
    """Empirical measure (1/n) sum of point masses at stored configurations."""

    samples: np.ndarray

    @property
    def count(self) -> int:
        return len(self.samples)

    def integrate(self, phi: Callable) -> float:
        return float(np.mean(phi(self.samples)))


@dataclass(frozen=True)
class StationarityReport:
    names: tuple[str, ...]
    nu_P: np.ndarray
    nu: np.ndarray
    discrepancy: np.ndarray
    tolerance: np.ndarray
    n: int
    accepted: bool
    std_error: np.ndarray = field(default_factory=lambda: np.zeros(0))


def empirical_stationarity(sys: NormalizedSystem, tests: Sequence[Callable], n: int,
                           rng: np.random.Generator, K: int = 1000, depth: int = 16,
                           burn_in: int = 0, chains: int = 1) -> StationarityReport:
    """Discrepancies |nu_n(P phi) - nu_n(phi)| of the empirical measure of Psi."""
    if not sys.accepted:
        raise ContractViolation("the normalized system failed its unit-drift check")
    X = sample_configs(sys.kernel.apriori, chains, depth, rng)
    if burn_in:
        X = run_psi(sys, X, burn_in, rng)[0]
    m = len(tests)
    sp = np.zeros((m, chains))
    sv = np.zeros((m, chains))
    se2 = np.zeros((m, chains))
    vals = np.zeros((m, n, chains))
    for k in range(n):
        X = psi_advance(sys, X, rng)
        for i, phi in enumerate(tests):
            pv, pe, _ = sys.transfer(phi, X, K, rng)
            v = phi(X)
            sp[i] += pv
            sv[i] += v
            se2[i] += pe ** 2
            vals[i, k] = v
    nu_P = sp.mean(axis=1) / n
    nu = sv.mean(axis=1) / n
    disc = np.abs(nu_P - nu)
    mc = 3.0 * np.sqrt(se2.sum(axis=1)) / (n * chains)
    norms = np.array([getattr(p, "sup_norm", 1.0) for p in tests])
    tol = 4.0 * norms / math.sqrt(n * chains) + mc
    # batch-means standard error of nu_n(phi)
    nb = 20
    bm = vals[:, : (n // nb) * nb].reshape(m, nb, -1, chains).mean(axis=2).mean(axis=2)
    se = bm.std(axis=1, ddof=1) / math.sqrt(nb)
    names = tuple(getattr(p, "name", f"phi{i}") for i, p in enumerate(tests))
    return StationarityReport(names, nu_P, nu, disc, tol, n, bool(np.all(disc <= tol)), se)


# ---------------------------------------------------------------------------
# support probes


@dataclass(frozen=True)
class SupportReport:
    hits: np.ndarray
    first_hit: np.ndarray      # step of first visit, -1 if never
    n_steps: int

    @property
    def all_hit(self) -> bool:
        return bool(np.all(self.hits > 0))


def support_probe(stepper: Callable[[np.ndarray, np.random.Generator], np.ndarray],
                  balls: Sequence[tuple[np.ndarray, float]], n_steps: int, rng: np.random.Generator,
                  start: np.ndarray, metric: Callable[[np.ndarray, np.ndarray], np.ndarray],
                  min_radius: float = 0.0) -> SupportReport:
    """Count visits of one chain to each open ball, including the starting state.

    ``metric(state, centers)`` returns the distances from one state to every
    center.  Balls must be resolvable: radius above ``min_radius``.
    """
    centers = np.stack([np.asarray(c, dtype=float) for c, _ in balls])
    radii = np.array([r for _, r in balls], dtype=float)
    if np.any(radii <= min_radius):
        raise ContractViolation(f"ball radii must exceed the resolution {min_radius:g}")
    hits = np.zeros(len(balls), dtype=np.int64)
    first = np.full(len(balls), -1, dtype=np.int64)
    x = np.asarray(start, dtype=float)
    for t in range(n_steps + 1):
        inside = metric(x, centers) < radii
        new = inside & (first < 0)
        first[new] = t
        hits += inside
        if t < n_steps:
            x = stepper(x, rng)
    return SupportReport(hits, first, n_steps)


def config_ball_metric(alphabet):
    """Product-metric distances from one configuration to a stack of centers."""
    from .space import distance_batch
    return lambda x, centers: distance_batch(np.broadcast_to(x, centers.shape), centers, alphabet)


def cylinder_balls(alphabet, length: int, depth: int) -> list[tuple[np.ndarray, float]]:
    """All cylinders of the given length as open balls of radius 2^-length."""
    pts = np.asarray(alphabet.points)
    s = len(pts)
    balls = []
    for idx in np.ndindex(*([s] * length)):
        c = np.full(depth, pts[0])
        c[:length] = pts[list(idx)]
        balls.append((c, 2.0 ** (-length)))
    return balls
