"""Alphabets, a priori measures and the truncated configuration space E^N.

A configuration is stored as a numpy array of shape ``(D,)`` for scalar
alphabets or ``(D, N)`` for spheres; batches simply add leading axes.  The
metric on configurations is the product metric
``d(x, y) = sum_n 2^-n min(d_E(x_n, y_n), 1)`` truncated at the depth ``D``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

FINITE = "finite"
SPHERE = "sphere"
HALFLINE = "halfline"
REALLINE = "realline"
_KINDS = (FINITE, SPHERE, HALFLINE, REALLINE)


class ContractViolation(ValueError):
    """An operation was called outside its declared preconditions."""


@dataclass(frozen=True)
class Alphabet:
    """State space E of a single coordinate.

    ``points`` lists the symbols of a finite alphabet (as reals);
    ``ambient_dim`` is N for the unit sphere S^{N-1} in R^N.
    """

    kind: str
    points: tuple[float, ...] | None = None
    ambient_dim: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ContractViolation(f"unknown alphabet kind {self.kind!r}")
        if self.kind == FINITE:
            if not self.points or len(set(self.points)) != len(self.points):
                raise ContractViolation("finite alphabet needs distinct points")
        if self.kind == SPHERE and (self.ambient_dim is None or self.ambient_dim < 2):
            raise ContractViolation("sphere alphabet needs ambient dimension N >= 2")

    @classmethod
    def finite(cls, points) -> "Alphabet":
        return cls(FINITE, points=tuple(float(p) for p in points))

    @classmethod
    def sphere(cls, n: int) -> "Alphabet":
        """Unit sphere S^{n-1} inside R^n."""
        return cls(SPHERE, ambient_dim=int(n))

    @classmethod
    def half_line(cls) -> "Alphabet":
        return cls(HALFLINE)

    @classmethod
    def real_line(cls) -> "Alphabet":
        return cls(REALLINE)

    @property
    def point_shape(self) -> tuple[int, ...]:
        return (self.ambient_dim,) if self.kind == SPHERE else ()

    @property
    def is_finite(self) -> bool:
        return self.kind == FINITE

    @property
    def size(self) -> int:
        if not self.is_finite:
            raise ContractViolation("size is defined for finite alphabets only")
        return len(self.points)

    @property
    def diameter(self) -> float:
        """Diameter of E under the intrinsic metric (inf for the lines)."""
        if self.kind == FINITE:
            return 1.0 if len(self.points) > 1 else 0.0
        if self.kind == SPHERE:
            return 2.0
        return math.inf

    def metric(self, a, b) -> np.ndarray:
        """Intrinsic metric d_E, vectorized over leading axes."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.kind == FINITE:
            return (a != b).astype(float)
        if self.kind == SPHERE:
            return np.sqrt(np.sum((a - b) ** 2, axis=-1))
        return np.abs(a - b)

    def contains(self, values, atol: float = 1e-9) -> bool:
        v = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(v)):
            return False
        if self.kind == FINITE:
            return bool(np.all(np.isin(v, np.asarray(self.points))))
        if self.kind == SPHERE:
            if v.shape[-1:] != (self.ambient_dim,):
                return False
            return bool(np.all(np.abs(np.linalg.norm(v, axis=-1) - 1.0) <= atol))
        if self.kind == HALFLINE:
            return bool(np.all(v >= 0.0))
        return True

    def index_of(self, values) -> np.ndarray:
        """Symbol indices of finite-alphabet values."""
        sorted_pts, order = self._lookup
        v = np.asarray(values, dtype=float)
        idx = np.minimum(sorted_pts.searchsorted(v), len(sorted_pts) - 1)
        if not (sorted_pts[idx] == v).all():
            raise ContractViolation("value outside the finite alphabet")
        return order[idx]

    @cached_property
    def _lookup(self) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(self.points, dtype=float)
        order = np.argsort(pts, kind="stable")
        return pts[order], order


@dataclass(frozen=True)
class AprioriMeasure:
    """Fully supported a priori probability measure on an alphabet.

    Finite alphabets carry explicit weights (uniform by default); the
    continuous kinds use a fixed named density: uniform on the sphere,
    Exp(1) on the half line and N(0, 1) on the real line.
    """

    alphabet: Alphabet
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.alphabet.is_finite:
            if self.weights is None:
                s = self.alphabet.size
                object.__setattr__(self, "weights", tuple([1.0 / s] * s))
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.alphabet.size,) or np.any(w <= 0):
                raise ContractViolation("weights must be strictly positive, one per symbol")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ContractViolation(f"weights sum to {w.sum()!r}, not 1")
        elif self.weights is not None:
            raise ContractViolation("continuous alphabets use a fixed density, not weights")

    @property
    def density(self) -> str:
        return {FINITE: "weights", SPHERE: "uniform", HALFLINE: "exponential(1)",
                REALLINE: "normal(0,1)"}[self.alphabet.kind]

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def sample(self, rng: np.random.Generator, size=()) -> np.ndarray:
        """Draw points; output shape is ``size + alphabet.point_shape``."""
        size = (size,) if np.isscalar(size) else tuple(size)
        kind = self.alphabet.kind
        if kind == FINITE:
            idx = rng.choice(self.alphabet.size, size=size, p=self.weight_array)
            return np.asarray(self.alphabet.points)[idx]
        if kind == SPHERE:
            g = rng.standard_normal(size + (self.alphabet.ambient_dim,))
            return g / np.linalg.norm(g, axis=-1, keepdims=True)
        if kind == HALFLINE:
            return rng.exponential(1.0, size=size)
        return rng.standard_normal(size)


@dataclass(frozen=True, eq=False)
class Config:
    """Depth-truncated point of E^N."""

    coords: np.ndarray
    alphabet: Alphabet
    _checked: bool = field(default=True, repr=False)

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.ndim != 1 + len(self.alphabet.point_shape) or c.shape[0] < 1:
            raise ContractViolation(f"coords of shape {c.shape} do not fit alphabet {self.alphabet.kind}")
        if c.shape[1:] != self.alphabet.point_shape:
            raise ContractViolation("coordinate shape does not match the alphabet")
        if self._checked and not self.alphabet.contains(c):
            raise ContractViolation("a coordinate lies outside the alphabet")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def depth(self) -> int:
        return int(self.coords.shape[0])

    def __len__(self) -> int:
        return self.depth

    def __eq__(self, other) -> bool:
        return (isinstance(other, Config) and self.alphabet == other.alphabet
                and np.array_equal(self.coords, other.coords))

    def __hash__(self) -> int:
        return hash((self.alphabet, self.coords.tobytes()))


@dataclass(frozen=True)
class BoundedMetricPolicy:
    """Replace a metric d by min(1, d); always enabled for unbounded alphabets."""

    enabled: bool = True

    @classmethod
    def for_alphabet(cls, alphabet: Alphabet) -> "BoundedMetricPolicy":
        return cls(alphabet.kind in (HALFLINE, REALLINE))

    def apply(self, d):
        return np.minimum(1.0, d) if self.enabled else d


def distance_weights(depth: int) -> np.ndarray:
    return 0.5 ** np.arange(1, depth + 1)


def truncation_bound(depth: int) -> float:
    """Bound 2^-D on the gap between the truncated and the infinite metric."""
    return 2.0 ** (-depth)


def distance_batch(x: np.ndarray, y: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    """Vectorized product metric over leading axes (depth axis follows them)."""
    capped = np.minimum(alphabet.metric(x, y), 1.0)
    return capped @ distance_weights(capped.shape[-1])


def _check_pair(x: Config, y: Config):
    if x.alphabet != y.alphabet:
        raise ContractViolation("configs live on different alphabets")
    if x.depth != y.depth:
        raise ContractViolation(f"depth mismatch {x.depth} != {y.depth}")


def config_distance(x: Config, y: Config) -> float:
    """Product metric with exactly rounded summation.

    The exact rounding makes the value monotone under dropping terms and
    exactly homogeneous under powers of two, so contraction inequalities can
    be checked without any floating-point slack.
    """
    _check_pair(x, y)
    capped = np.minimum(x.alphabet.metric(x.coords, y.coords), 1.0)
    return math.fsum((capped * distance_weights(x.depth)).tolist())


def config_distance_with_bound(x: Config, y: Config) -> tuple[float, float]:
    """Distance together with its truncation error bound 2^-D."""
    return config_distance(x, y), truncation_bound(x.depth)


def prepend(a, x: Config) -> Config:
    """(a, x_1, ..., x_{D-1}); the depth is preserved."""
    a = np.asarray(a, dtype=float)
    if a.shape != x.alphabet.point_shape or not x.alphabet.contains(a):
        raise ContractViolation("symbol is not a point of the alphabet")
    c = np.concatenate([a[None], x.coords[:-1]], axis=0)
    return Config(c, x.alphabet, _checked=False)


def prepend_batch(a: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Batch prepend: ``a`` has shape ``(B,) + point_shape``, states ``(B, D, ...)``."""
    out = np.empty_like(states)
    out[:, 0] = a
    out[:, 1:] = states[:, :-1]
    return out


def shift(x: Config) -> Config:
    """(x_2, ..., x_D); the depth drops by one."""
    if x.depth < 2:
        raise ContractViolation("cannot shift a depth-1 configuration")
    return Config(x.coords[1:], x.alphabet, _checked=False)


def sample_point(mu: AprioriMeasure, rng: np.random.Generator) -> np.ndarray:
    """A single draw from the a priori measure."""
    return mu.sample(rng)


def sample_config(mu: AprioriMeasure, depth: int, rng: np.random.Generator) -> Config:
    """Configuration with iid coordinates drawn from ``mu``."""
    return Config(mu.sample(rng, depth), mu.alphabet, _checked=False)


def sample_configs(mu: AprioriMeasure, count: int, depth: int, rng: np.random.Generator) -> np.ndarray:
    """Batch of ``count`` iid configurations as an array."""
    return mu.sample(rng, (count, depth))


def constant_config(alphabet: Alphabet, value, depth: int) -> Config:
    v = np.asarray(value, dtype=float)
    return Config(np.broadcast_to(v, (depth,) + alphabet.point_shape).copy(), alphabet)
