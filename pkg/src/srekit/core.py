"""State spaces, random Lipschitz maps, composition and Lipschitz coefficients.

States are finite-dimensional real vectors constrained to a box
``lower <= y <= upper`` (bounds may be infinite).  A map ``Phi`` is either
affine, ``y -> a + B y``, in which case its Lipschitz coefficient is the
operator norm of ``B`` and is known exactly, or a general callable whose
coefficient is declared by the caller or estimated from sampled pairs.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, NumericError

SUP = "sup"
EUCLIDEAN = "euclidean"
NORM_KINDS = (SUP, EUCLIDEAN)

EXACT = "exact"
UPPER_BOUND = "upper_bound"
SAMPLED_LOWER_BOUND = "sampled_lower_bound"


@dataclass(frozen=True)
class StateSpace:
    """Box-constrained subset of R^dim with a sup or Euclidean norm."""

    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    norm_kind: str = SUP

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigurationError(f"dim must be a positive integer, got {self.dim!r}")
        lower = tuple(float(v) for v in np.broadcast_to(self.lower, (self.dim,)))
        upper = tuple(float(v) for v in np.broadcast_to(self.upper, (self.dim,)))
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            if math.isnan(lo) or math.isnan(hi) or not lo < hi:
                raise ConfigurationError(f"coordinate {i}: need lower < upper, got [{lo}, {hi}]")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigurationError(f"norm_kind must be one of {NORM_KINDS}")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def real(cls, dim: int = 1, norm_kind: str = SUP) -> "StateSpace":
        return cls(dim, (-math.inf,) * dim, (math.inf,) * dim, norm_kind)

    @classmethod
    def half_line(cls) -> "StateSpace":
        """``[0, inf)``, the home of conditional variances."""
        return cls(1, (0.0,), (math.inf,))

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float], norm_kind: str = SUP) -> "StateSpace":
        return cls(len(lower), tuple(lower), tuple(upper), norm_kind)

    def as_state(self, y) -> np.ndarray:
        arr = np.asarray(y, dtype=np.float64)
        if arr.size != self.dim:
            raise DomainError(f"state has {arr.size} coordinates, space has {self.dim}")
        return arr.reshape(self.dim)

    def contains(self, y) -> bool:
        arr = np.asarray(y, dtype=np.float64).reshape(-1)
        if arr.size != self.dim:
            return False
        return bool(np.all(arr >= self.lower) and np.all(arr <= self.upper))

    def check(self, y, t: int | None = None) -> np.ndarray:
        """Return ``y`` as a state vector or raise naming the offending coordinate."""
        arr = self.as_state(y)
        for i in range(self.dim):
            v = arr[i]
            if math.isnan(v):
                raise NumericError(f"coordinate {i} is NaN", t=t)
            if not self.lower[i] <= v <= self.upper[i]:
                where = f" at t={t}" if t is not None else ""
                raise DomainError(
                    f"coordinate {i} = {v!r} outside [{self.lower[i]}, {self.upper[i]}]{where}",
                    coordinate=i,
                    t=t,
                )
        return arr

    def clip(self, y) -> np.ndarray:
        return np.clip(self.as_state(y), self.lower, self.upper)

    def norm(self, v) -> float:
        arr = np.asarray(v, dtype=np.float64).reshape(-1)
        if self.norm_kind == SUP:
            return float(np.max(np.abs(arr)))
        return float(np.linalg.norm(arr))

    def norms(self, rows: np.ndarray) -> np.ndarray:
        """Row-wise norms of an ``(n, dim)`` array."""
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, self.dim)
        if self.norm_kind == SUP:
            return np.max(np.abs(rows), axis=1)
        return np.linalg.norm(rows, axis=1)

    def operator_norm(self, matrix) -> float:
        """Norm of ``matrix`` induced by this space's vector norm."""
        m = np.asarray(matrix, dtype=np.float64).reshape(self.dim, self.dim)
        if self.dim == 1:
            return abs(float(m[0, 0]))
        if self.norm_kind == SUP:
            return float(np.max(np.sum(np.abs(m), axis=1)))
        return float(np.linalg.norm(m, 2))

    def operator_norms(self, matrices: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`operator_norm` over an ``(n, dim, dim)`` stack."""
        m = np.asarray(matrices, dtype=np.float64).reshape(-1, self.dim, self.dim)
        if self.dim == 1:
            return np.abs(m[:, 0, 0])
        if self.norm_kind == SUP:
            return np.max(np.sum(np.abs(m), axis=2), axis=1)
        return np.linalg.norm(m, ord=2, axis=(1, 2))

    def zero_anchor(self) -> np.ndarray:
        """The zero vector clipped into the space."""
        return self.clip(np.zeros(self.dim))


def _check_finite(y: np.ndarray, t: int | None) -> None:
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite state", t=t)


class RandomMap(ABC):
    """One realised map ``Phi_t`` from a state space into itself."""

    kind: str = "general"

    def __init__(self, space: StateSpace, t: int | None = None):
        self.space = space
        self.t = t

    @abstractmethod
    def _apply(self, y: np.ndarray) -> np.ndarray:
        """Evaluate without membership checks."""

    @property
    def lipschitz(self) -> float | None:
        """Known coefficient, or ``None`` when it must be estimated."""
        return None

    @property
    def lipschitz_kind(self) -> str | None:
        return None

    def __call__(self, y) -> np.ndarray:
        return evaluate(self, y)


class AffineMap(RandomMap):
    """``y -> intercept + slope @ y``."""

    kind = "affine"

    def __init__(self, space: StateSpace, intercept, slope, t: int | None = None):
        super().__init__(space, t)
        d = space.dim
        a = np.array(intercept, dtype=np.float64).reshape(d)
        b = np.array(slope, dtype=np.float64).reshape(d, d)
        a.setflags(write=False)
        b.setflags(write=False)
        self.intercept = a
        self.slope = b

    def _apply(self, y):
        if self.space.dim == 1:
            return np.array([self.intercept[0] + self.slope[0, 0] * y[0]])
        return self.intercept + self.slope @ y

    @property
    def lipschitz(self) -> float:
        return self.space.operator_norm(self.slope)

    @property
    def lipschitz_kind(self) -> str:
        return EXACT

    def __repr__(self):
        return f"AffineMap(t={self.t}, intercept={self.intercept.tolist()}, slope={self.slope.tolist()})"


class PerturbedAffineMap(AffineMap):
    """An affine map stored as ``base + (delta_intercept, delta_slope)``.

    Keeping the offsets separate lets differences against ``base`` be
    formed without cancellation, which matters once the offsets are many
    orders of magnitude below the intercepts themselves.
    """

    def __init__(self, base: AffineMap, delta_intercept, delta_slope):
        d = base.space.dim
        da = np.array(delta_intercept, dtype=np.float64).reshape(d)
        db = np.array(delta_slope, dtype=np.float64).reshape(d, d)
        super().__init__(base.space, base.intercept + da, base.slope + db, t=base.t)
        da.setflags(write=False)
        db.setflags(write=False)
        self.base = base
        self.delta_intercept = da
        self.delta_slope = db


class GeneralMap(RandomMap):
    """A map given by a Python callable on state vectors.

    ``lipschitz`` may be supplied when known, with ``lipschitz_kind`` saying
    whether it is exact or only an upper bound.  With ``vectorized=True`` the
    callable receives an ``(n, dim)`` array and must return the same shape.
    """

    def __init__(
        self,
        space: StateSpace,
        func: Callable[[np.ndarray], np.ndarray],
        lipschitz: float | None = None,
        lipschitz_kind: str = EXACT,
        t: int | None = None,
        vectorized: bool = False,
    ):
        super().__init__(space, t)
        if lipschitz is not None and not lipschitz >= 0:
            raise ConfigurationError("declared Lipschitz coefficient must be >= 0")
        if lipschitz_kind not in (EXACT, UPPER_BOUND):
            raise ConfigurationError("declared coefficients are exact or upper_bound")
        self.func = func
        self._lipschitz = None if lipschitz is None else float(lipschitz)
        self._lipschitz_kind = lipschitz_kind if lipschitz is not None else None
        self.vectorized = vectorized

    def _apply(self, y):
        if self.vectorized:
            return np.asarray(self.func(y[None, :]), dtype=np.float64).reshape(self.space.dim)
        return np.asarray(self.func(y), dtype=np.float64).reshape(self.space.dim)

    def apply_rows(self, rows: np.ndarray) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.func(rows), dtype=np.float64).reshape(rows.shape)
        return np.array([self._apply(r) for r in rows]).reshape(rows.shape)

    @property
    def lipschitz(self):
        return self._lipschitz

    @property
    def lipschitz_kind(self):
        return self._lipschitz_kind


class ComposedMap:
    """``factors[0] o factors[1] o ... o factors[r-1]`` (most recent first)."""

    kind = "composed"

    def __init__(self, factors: Sequence[RandomMap]):
        factors = tuple(factors)
        if not factors:
            raise ConfigurationError("cannot compose an empty list of maps")
        space = factors[0].space
        for f in factors[1:]:
            if f.space != space:
                raise ConfigurationError("composed maps must share a state space")
        self.factors = factors
        self.space = space

    @property
    def r(self) -> int:
        return len(self.factors)

    @property
    def t(self):
        return self.factors[0].t

    @property
    def is_affine(self) -> bool:
        return all(isinstance(f, AffineMap) for f in self.factors)

    def _apply(self, y):
        for f in reversed(self.factors):
            y = f._apply(y)
        return y

    def collapse(self) -> AffineMap:
        """The single affine map equal to this composition."""
        if not self.is_affine:
            raise ConfigurationError("only compositions of affine maps collapse")
        d = self.space.dim
        a = np.zeros(d)
        b = np.eye(d)
        for f in reversed(self.factors):
            a = f.intercept + f.slope @ a
            b = f.slope @ b
        return AffineMap(self.space, a, b, t=self.t)

    @property
    def lipschitz_upper(self) -> float | None:
        """Product of factor coefficients, ``None`` if any factor's is unknown."""
        out = 1.0
        for f in self.factors:
            if f.lipschitz is None:
                return None
            out *= f.lipschitz
        return out

    def __call__(self, y):
        return evaluate(self, y)


def compose(maps: Sequence[RandomMap]) -> ComposedMap:
    """Compose ``maps`` (most recent first) as ``Phi_t o ... o Phi_{t-r+1}``."""
    return ComposedMap(maps)


def evaluate(phi: RandomMap | ComposedMap, y) -> np.ndarray:
    """Apply ``phi`` to a member of its state space.

    Raises :class:`DomainError` if ``y`` or any intermediate result leaves the
    space and :class:`NumericError` on NaN or overflow.
    """
    space = phi.space
    y = space.check(y, t=phi.t)
    factors = phi.factors[::-1] if isinstance(phi, ComposedMap) else (phi,)
    for f in factors:
        with np.errstate(over="ignore", invalid="ignore"):
            y = f._apply(y)
        _check_finite(y, f.t)
        space.check(y, t=f.t)
    return y


@dataclass(frozen=True)
class ProbePlan:
    """Where and how densely to sample pairs when estimating a coefficient.

    ``nearby`` adds ``n_pairs`` extra pairs at distance
    ``h_rel * diameter`` to pick up local steepness.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n_pairs: int = 10_000
    seed: int = 0
    nearby: bool = True
    h_rel: float = 1e-4

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lower) != len(upper):
            raise ConfigurationError("probe bounds have different lengths")
        if self.n_pairs < 1:
            raise ConfigurationError("n_pairs must be >= 1")
        if not all(map(math.isfinite, lower + upper)):
            raise ConfigurationError("probe box must be bounded")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def validate(self, space: StateSpace) -> None:
        if len(self.lower) != space.dim:
            raise ConfigurationError(f"probe box has {len(self.lower)} coordinates, space has {space.dim}")
        for i in range(space.dim):
            if self.lower[i] < space.lower[i] or self.upper[i] > space.upper[i]:
                raise DomainError(f"probe box coordinate {i} leaves the state space", coordinate=i)
            if not self.lower[i] < self.upper[i]:
                raise ConfigurationError(f"probe box is degenerate in coordinate {i}")

    def pairs(self, space: StateSpace) -> tuple[np.ndarray, np.ndarray]:
        self.validate(space)
        rng = np.random.default_rng(self.seed)
        lo = np.array(self.lower)
        hi = np.array(self.upper)
        n, d = self.n_pairs, space.dim
        x = rng.uniform(lo, hi, size=(n, d))
        y = rng.uniform(lo, hi, size=(n, d))
        if self.nearby:
            h = self.h_rel * float(np.linalg.norm(hi - lo))
            xn = rng.uniform(lo, hi, size=(n, d))
            step = rng.standard_normal((n, d))
            step /= space.norms(step)[:, None]
            yn = np.clip(xn + h * step, lo, hi)
            x = np.vstack([x, xn])
            y = np.vstack([y, yn])
        return x, y


@dataclass(frozen=True)
class LipschitzEstimate:
    """A coefficient together with what kind of witness it is.

    ``lower_bound`` is filled in when an upper witness is accompanied by a
    sampled lower bound on the same map.
    """

    value: float
    witness_kind: str
    lower_bound: float | None = field(default=None)


def _rows(phi, x: np.ndarray) -> np.ndarray:
    if isinstance(phi, GeneralMap):
        return phi.apply_rows(x)
    if isinstance(phi, ComposedMap):
        for f in reversed(phi.factors):
            x = _rows(f, x)
        return x
    if isinstance(phi, AffineMap):
        return phi.intercept + x @ phi.slope.T
    return np.array([phi._apply(r) for r in x])


def _max_quotient(space: StateSpace, fx: np.ndarray, fy: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    den = space.norms(x - y)
    keep = den > 0
    if not np.any(keep):
        raise ConfigurationError("probe produced no distinct pairs")
    with np.errstate(over="ignore", invalid="ignore"):
        q = space.norms(fx[keep] - fy[keep]) / den[keep]
    if not np.all(np.isfinite(q)):
        raise NumericError("non-finite difference quotient while probing")
    return float(np.max(q))


def sampled_lipschitz(phi, probe: ProbePlan) -> float:
    """Largest difference quotient over the probe's pairs (a lower bound)."""
    x, y = probe.pairs(phi.space)
    return _max_quotient(phi.space, _rows(phi, x), _rows(phi, y), x, y)


def lipschitz_coefficient(phi: RandomMap | ComposedMap, probe: ProbePlan | None = None) -> LipschitzEstimate:
    """Lipschitz coefficient of a map or composition.

    Affine maps and compositions of affine maps are exact.  A composition
    with a non-affine factor reports the product of factor coefficients as
    an upper bound (plus a sampled lower bound when ``probe`` is given), or
    only the sampled lower bound if some factor's coefficient is unknown.
    """
    if isinstance(phi, AffineMap):
        return LipschitzEstimate(phi.lipschitz, EXACT)
    if isinstance(phi, ComposedMap):
        if phi.is_affine:
            if phi.space.dim == 1:
                value = 1.0
                for f in phi.factors:
                    value *= abs(float(f.slope[0, 0]))
                return LipschitzEstimate(value, EXACT)
            return LipschitzEstimate(phi.collapse().lipschitz, EXACT)
        upper = phi.lipschitz_upper
        lower = sampled_lipschitz(phi, probe) if probe is not None else None
        if upper is not None:
            return LipschitzEstimate(upper, UPPER_BOUND, lower)
        if lower is None:
            raise ConfigurationError("a probe plan is required to estimate this composition")
        return LipschitzEstimate(lower, SAMPLED_LOWER_BOUND)
    if phi.lipschitz is not None:
        return LipschitzEstimate(phi.lipschitz, phi.lipschitz_kind)
    if probe is None:
        raise ConfigurationError("a probe plan is required for maps without a known coefficient")
    return LipschitzEstimate(sampled_lipschitz(phi, probe), SAMPLED_LOWER_BOUND)


def _perturbation_of(f, g):
    """Return ``(delta_a, delta_B, sign)`` if one map is stored as the other plus offsets."""
    if isinstance(f, PerturbedAffineMap) and f.base is g:
        return f.delta_intercept, f.delta_slope, 1.0
    if isinstance(g, PerturbedAffineMap) and g.base is f:
        return g.delta_intercept, g.delta_slope, -1.0
    return None


def difference_at(f: RandomMap, g: RandomMap, y) -> np.ndarray:
    """``f(y) - g(y)`` computed without cancellation when the maps are related."""
    if f.space != g.space:
        raise ConfigurationError("maps live on different state spaces")
    y = f.space.check(y)
    if f is g:
        return np.zeros(f.space.dim)
    rel = _perturbation_of(f, g)
    if rel is not None:
        da, db, sign = rel
        return sign * (da + db @ y)
    return f._apply(y) - g._apply(y)


def lipschitz_difference(f: RandomMap, g: RandomMap, probe: ProbePlan | None = None) -> LipschitzEstimate:
    """Lipschitz coefficient of ``f - g`` (a map into the ambient vector space)."""
    if f.space != g.space:
        raise ConfigurationError("maps live on different state spaces")
    space = f.space
    if f is g:
        return LipschitzEstimate(0.0, EXACT)
    rel = _perturbation_of(f, g)
    if rel is not None:
        return LipschitzEstimate(space.operator_norm(rel[1]), EXACT)
    if isinstance(f, AffineMap) and isinstance(g, AffineMap):
        return LipschitzEstimate(space.operator_norm(f.slope - g.slope), EXACT)
    lower = None
    if probe is not None:
        x, y = probe.pairs(space)
        lower = _max_quotient(space, _rows(f, x) - _rows(g, x), _rows(f, y) - _rows(g, y), x, y)
    if f.lipschitz is not None and g.lipschitz is not None:
        return LipschitzEstimate(f.lipschitz + g.lipschitz, UPPER_BOUND, lower)
    if lower is None:
        raise ConfigurationError("a probe plan is required to estimate this difference")
    return LipschitzEstimate(lower, SAMPLED_LOWER_BOUND)


@dataclass(frozen=True)
class Trajectory:
    """States ``states[k]`` at times ``t0 + k`` plus run metadata."""

    t0: int
    states: np.ndarray
    meta: dict = field(default_factory=dict)
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        states = np.array(self.states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape[0] < 1:
            raise ConfigurationError("a trajectory holds at least one state")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    def __len__(self):
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + len(self))

    @property
    def t_end(self) -> int:
        return self.t0 + len(self) - 1

    def at(self, t: int) -> np.ndarray:
        k = t - self.t0
        if not 0 <= k < len(self):
            raise DomainError(f"t={t} outside trajectory range [{self.t0}, {self.t_end}]")
        return self.states[k]

    def column(self, label: str) -> np.ndarray:
        if self.labels is None or label not in self.labels:
            raise KeyError(label)
        return self.states[:, self.labels.index(label)]
