"""Seedable sequences of random maps and the forward-iteration kernel.

A :class:`MapSequence` is a pure function of ``(model, parameters, seed,
replicate, variant, t)``: asking twice for ``Phi_t`` -- serially, in chunks,
or from several threads -- yields bitwise-identical maps.  Affine sequences
additionally expose their coefficients as arrays so long runs avoid building
one map object per step.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Any, Callable

import numpy as np

from .core import AffineMap, GeneralMap, PerturbedAffineMap, RandomMap, StateSpace, evaluate
from .errors import ConfigurationError, DomainError, NumericError
from .streams import CounterStream

EXACT_VARIANT = "exact"
PERTURBED_VARIANT = "perturbed"


class MapSequence(ABC):
    """Stationary ergodic sequence ``(Phi_t)`` of random maps on ``space``.

    ``t_range`` is the inclusive range of indices for which maps exist;
    ``None`` on either side means unbounded.  Sequences that filter a fixed
    observation path are bounded by that path.
    """

    model_id: str = "custom"
    is_affine: bool = False

    def __init__(
        self,
        space: StateSpace,
        seed: int,
        params: Any = None,
        replicate: int = 0,
        variant: str = EXACT_VARIANT,
        t_range: tuple[int | None, int | None] = (None, None),
    ):
        self.space = space
        self.seed = int(seed)
        self.params = params
        self.replicate = int(replicate)
        self.variant = variant
        self.t_range = t_range

    # identity -----------------------------------------------------------------

    @property
    def key(self) -> tuple:
        return (self.model_id, self.params, self.seed, self.replicate, self.variant)

    @property
    def data_token(self) -> Any:
        """Identifies the driving data; perturbed filters must share it with the exact one."""
        return (self.seed, self.replicate)

    @property
    def degenerate(self) -> bool:
        """True when the driving noise is identically zero (test builds only)."""
        noise = getattr(self.params, "noise", None)
        return bool(noise is not None and getattr(noise, "is_degenerate", False))

    @property
    def first_t(self) -> int:
        lo = self.t_range[0]
        return 1 if lo is None else lo

    def check_range(self, t_start: int, t_stop: int) -> None:
        lo, hi = self.t_range
        if t_stop <= t_start:
            return
        if (lo is not None and t_start < lo) or (hi is not None and t_stop - 1 > hi):
            raise DomainError(
                f"{self.model_id}: maps exist for t in [{lo}, {hi}], requested [{t_start}, {t_stop - 1}]"
            )

    # maps ---------------------------------------------------------------------

    @abstractmethod
    def map_at(self, t: int) -> RandomMap:
        """The realised map ``Phi_t``."""

    def maps(self, t_start: int, t_stop: int) -> list[RandomMap]:
        return [self.map_at(t) for t in range(t_start, t_stop)]

    def coefficients(self, t_start: int, t_stop: int) -> tuple[np.ndarray, np.ndarray]:
        """Intercepts ``(n, d)`` and slopes ``(n, d, d)`` for ``t_start <= t < t_stop``."""
        raise ConfigurationError(f"{self.model_id} is not an affine sequence")

    def lipschitz_values(self, t_start: int, t_stop: int) -> np.ndarray | None:
        """Exact coefficients ``Lambda(Phi_t)`` if available without probing."""
        if self.is_affine:
            _, b = self.coefficients(t_start, t_stop)
            return self.space.operator_norms(b)
        return None

    @abstractmethod
    def _rebind(self, seed: int, replicate: int) -> "MapSequence":
        """Same model and parameters, different stream."""

    def with_seed(self, seed: int) -> "MapSequence":
        return self._rebind(int(seed), self.replicate)

    def with_replicate(self, replicate: int) -> "MapSequence":
        return self._rebind(self.seed, int(replicate))

    def __repr__(self):
        return (
            f"{type(self).__name__}(model_id={self.model_id!r}, seed={self.seed}, "
            f"replicate={self.replicate}, variant={self.variant!r})"
        )


class AffineSequence(MapSequence):
    """Base for sequences of affine maps; subclasses supply :meth:`_coefficients`."""

    is_affine = True

    @abstractmethod
    def _coefficients(self, t_start: int, t_stop: int) -> tuple[np.ndarray, np.ndarray]:
        ...

    def coefficients(self, t_start, t_stop):
        self.check_range(t_start, t_stop)
        return self._coefficients(int(t_start), int(t_stop))

    def map_at(self, t):
        a, b = self.coefficients(t, t + 1)
        return AffineMap(self.space, a[0], b[0], t=t)

    def maps(self, t_start, t_stop):
        a, b = self.coefficients(t_start, t_stop)
        return [AffineMap(self.space, a[k], b[k], t=t_start + k) for k in range(t_stop - t_start)]

    @classmethod
    def from_schedule(cls, space: StateSpace, intercepts, slopes) -> "ConstantAffineSequence":
        """Build from deterministic per-step coefficients.

        Only constant schedules describe a stationary sequence; anything
        time-varying is rejected.
        """
        a = np.asarray(intercepts, dtype=np.float64).reshape(-1, space.dim)
        b = np.asarray(slopes, dtype=np.float64).reshape(-1, space.dim, space.dim)
        if len(a) == 0 or len(b) == 0:
            raise ConfigurationError("empty schedule")
        if not (np.all(a == a[0]) and np.all(b == b[0])):
            raise ConfigurationError(
                "deterministic time-varying coefficients do not form a stationary sequence"
            )
        return ConstantAffineSequence(space, a[0], b[0])


class ConstantAffineSequence(AffineSequence):
    """``Phi_t(y) = a + B y`` for every ``t`` (degenerate, trivially stationary)."""

    model_id = "constant_affine"

    def __init__(self, space: StateSpace, intercept, slope, seed: int = 0, replicate: int = 0):
        a = np.array(intercept, dtype=np.float64).reshape(space.dim)
        b = np.array(slope, dtype=np.float64).reshape(space.dim, space.dim)
        super().__init__(space, seed, params=(tuple(a), tuple(b.ravel())), replicate=replicate)
        self._a = a
        self._b = b

    @property
    def degenerate(self) -> bool:
        return True

    def _coefficients(self, t_start, t_stop):
        n = t_stop - t_start
        return (np.broadcast_to(self._a, (n, self.space.dim)).copy(),
                np.broadcast_to(self._b, (n, self.space.dim, self.space.dim)).copy())

    def _rebind(self, seed, replicate):
        return ConstantAffineSequence(self.space, self._a, self._b, seed, replicate)


class NoiseDrivenSequence(MapSequence):
    """User-defined sequence ``Phi_t = build(t, u_t)``.

    ``build`` receives the time index and that index's four uniforms from the
    counter stream.  Because ``u_t`` is i.i.d. across ``t`` and ``build`` may
    only use ``t`` for labelling, the result is stationary and ergodic.
    """

    def __init__(
        self,
        space: StateSpace,
        build: Callable[[int, np.ndarray], RandomMap],
        seed: int,
        model_id: str = "custom",
        replicate: int = 0,
        stream: int = 0,
    ):
        super().__init__(space, seed, params=None, replicate=replicate)
        self.model_id = model_id
        self._build = build
        self._stream_id = stream
        self._stream = CounterStream(seed, replicate, stream)
        probe = build(0, self._stream.uniforms(0, 1)[0])
        self.is_affine = isinstance(probe, AffineMap)

    @property
    def key(self):
        return (self.model_id, id(self._build), self.seed, self.replicate, self.variant)

    def map_at(self, t):
        self.check_range(t, t + 1)
        phi = self._build(t, self._stream.uniforms(t, t + 1)[0])
        if phi.space != self.space:
            raise ConfigurationError("builder returned a map on a different state space")
        phi.t = t
        return phi

    def maps(self, t_start, t_stop):
        self.check_range(t_start, t_stop)
        u = self._stream.uniforms(t_start, t_stop)
        out = []
        for k, t in enumerate(range(t_start, t_stop)):
            phi = self._build(t, u[k])
            phi.t = t
            out.append(phi)
        return out

    def coefficients(self, t_start, t_stop):
        if not self.is_affine:
            return super().coefficients(t_start, t_stop)
        ms = self.maps(t_start, t_stop)
        d = self.space.dim
        a = np.array([m.intercept for m in ms]).reshape(-1, d)
        b = np.array([m.slope for m in ms]).reshape(-1, d, d)
        return a, b

    def lipschitz_values(self, t_start, t_stop):
        if self.is_affine:
            return super().lipschitz_values(t_start, t_stop)
        vals = [m.lipschitz for m in self.maps(t_start, t_stop)]
        if any(v is None for v in vals):
            return None
        return np.array(vals, dtype=np.float64)

    def _rebind(self, seed, replicate):
        return NoiseDrivenSequence(self.space, self._build, seed, self.model_id, replicate, self._stream_id)


class PerturbedSequence(AffineSequence):
    """``Phi_hat_t = Phi_t + (delta_a_t, delta_B_t)`` over an affine base sequence.

    ``deltas(t_start, t_stop)`` returns the offsets as ``(n, d)`` and
    ``(n, d, d)`` arrays.  Offsets are kept separately from the base so
    gaps between the two filters are never formed by subtraction.
    """

    def __init__(
        self,
        base: MapSequence,
        deltas: Callable[[int, int], tuple[np.ndarray, np.ndarray]],
        model_id: str | None = None,
        t_range: tuple[int | None, int | None] | None = None,
    ):
        if not base.is_affine:
            raise ConfigurationError("perturbations are defined over affine base sequences")
        super().__init__(
            base.space,
            base.seed,
            params=base.params,
            replicate=base.replicate,
            variant=PERTURBED_VARIANT,
            t_range=base.t_range if t_range is None else t_range,
        )
        self.model_id = model_id or base.model_id
        self.base = base
        self._deltas = deltas

    @property
    def data_token(self):
        return self.base.data_token

    @property
    def degenerate(self):
        return self.base.degenerate

    def deltas(self, t_start: int, t_stop: int) -> tuple[np.ndarray, np.ndarray]:
        self.check_range(t_start, t_stop)
        d = self.space.dim
        da, db = self._deltas(int(t_start), int(t_stop))
        n = t_stop - t_start
        return (np.asarray(da, dtype=np.float64).reshape(n, d),
                np.asarray(db, dtype=np.float64).reshape(n, d, d))

    def _coefficients(self, t_start, t_stop):
        a, b = self.base.coefficients(t_start, t_stop)
        da, db = self.deltas(t_start, t_stop)
        return a + da, b + db

    def map_at(self, t):
        base = self.base.map_at(t)
        da, db = self.deltas(t, t + 1)
        return PerturbedAffineMap(base, da[0], db[0])

    def maps(self, t_start, t_stop):
        bases = self.base.maps(t_start, t_stop)
        da, db = self.deltas(t_start, t_stop)
        return [PerturbedAffineMap(m, da[k], db[k]) for k, m in enumerate(bases)]

    def _rebind(self, seed, replicate):
        return PerturbedSequence(self.base._rebind(seed, replicate), self._deltas, self.model_id, self.t_range)


def decaying_intercept(base: MapSequence, amplitude: float, rate: float) -> PerturbedSequence:
    """Perturb every intercept coordinate by ``amplitude * rate**t`` for ``t >= 1``."""
    if not 0 <= rate:
        raise ConfigurationError("rate must be non-negative")
    d = base.space.dim

    def deltas(t_start, t_stop):
        t = np.arange(t_start, t_stop, dtype=np.float64)
        if rate == 0:
            vals = np.where(t == 0, amplitude, 0.0)
        else:
            with np.errstate(under="ignore", over="ignore"):
                vals = amplitude * np.power(float(rate), t)
        return np.repeat(vals[:, None], d, axis=1), np.zeros((len(t), d, d))

    lo = base.t_range[0]
    return PerturbedSequence(base, deltas, t_range=(1 if lo is None else max(lo, 1), base.t_range[1]))


# forward iteration ------------------------------------------------------------


def run_forward(seq: MapSequence, y0, t_first: int, n: int) -> np.ndarray:
    """States ``s[0] = y0`` and ``s[k] = Phi_{t_first+k-1}(s[k-1])`` for ``k = 1..n``.

    Raises :class:`NumericError` naming the failing ``t`` on NaN/overflow.
    """
    space = seq.space
    y = space.check(y0)
    out = np.empty((n + 1, space.dim))
    out[0] = y
    if n == 0:
        return out
    if not seq.is_affine:
        for k, phi in enumerate(seq.maps(t_first, t_first + n), start=1):
            try:
                y = evaluate(phi, y)
            except NumericError as exc:
                raise NumericError("non-finite state", t=phi.t, model_id=seq.model_id) from exc
            out[k] = y
        return out
    a, b = seq.coefficients(t_first, t_first + n)
    lo, hi = space.lower, space.upper
    if space.dim == 1:
        av = a[:, 0].tolist()
        bv = b[:, 0, 0].tolist()
        x = float(y[0])
        l0, h0 = lo[0], hi[0]
        vals = [x]
        for k in range(n):
            x = av[k] + bv[k] * x
            if not (l0 <= x <= h0) or not math.isfinite(x):
                _raise_step(seq, space, np.array([x]), t_first + k)
            vals.append(x)
        out[:, 0] = vals
        return out
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            y = a[k] + b[k] @ y
            if not (np.all(np.isfinite(y)) and np.all(y >= lo) and np.all(y <= hi)):
                _raise_step(seq, space, y, t_first + k)
            out[k + 1] = y
    return out


def _raise_step(seq, space, y, t):
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite state", t=t, model_id=seq.model_id)
    space.check(y, t=t)
