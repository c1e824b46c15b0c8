"""Trajectory-level convergence checks and exponential-rate fitting.

Gaps between two trajectories driven by the same affine maps are propagated
directly (``D_t = B_t D_{t-1}`` plus any perturbation offsets) instead of
being formed by subtracting two states.  Once a gap drops below roughly
``1e-16`` times the size of the states, subtraction returns rounding noise;
propagation keeps full relative precision down to the underflow floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import stats

from .core import ProbePlan, Trajectory, difference_at, lipschitz_difference
from .errors import ConfigurationError, DomainError, NumericError
from .models import NoiseSpec
from .sequences import MapSequence, PerturbedSequence, run_forward

__all__ = [
    "FLOOR",
    "GapSeries",
    "RateFit",
    "Trajectory",
    "backward_approximant",
    "backward_gaps",
    "coupling_gap",
    "fit_rate",
    "iterate_forward",
    "lemma1_probe",
    "lemma3_probe",
    "perturbation_gaps",
    "perturbed_gap",
]

FLOOR = 1e-280

EAS = "eas"
NOT_EAS = "not_eas"
IDENTICALLY_ZERO = "identically_zero"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class GapSeries:
    """Non-negative gaps ``g_t`` with a flag for entries below the fitting floor."""

    t: np.ndarray
    gaps: np.ndarray
    floored: np.ndarray
    floor: float = FLOOR

    @classmethod
    def from_gaps(cls, t: Iterable[int], gaps: Iterable[float], floor: float = FLOOR) -> "GapSeries":
        t = np.asarray(list(t) if not isinstance(t, np.ndarray) else t, dtype=np.int64)
        g = np.asarray(list(gaps) if not isinstance(gaps, np.ndarray) else gaps, dtype=np.float64)
        if t.shape != g.shape:
            raise ConfigurationError("t and gaps differ in length")
        if np.any(np.isnan(g)) or np.any(g < 0):
            raise DomainError("gaps must be non-negative numbers")
        if np.any(np.isinf(g)):
            raise NumericError("gap series overflowed")
        return cls(t, g, g < floor, floor)

    def __len__(self):
        return len(self.gaps)


@dataclass(frozen=True)
class RateFit:
    """Log-linear fit ``log g_t ~ intercept + slope * t``.

    ``gamma_hat = exp(-slope)``; any ``gamma`` in ``(1, gamma_hat)`` is
    consistent with the observed decay.  The verdict is evidence, not proof.
    """

    slope: float
    slope_se: float
    gamma_hat: float
    intercept: float
    r_squared: float
    n_used: int
    burn_in: int
    verdict: str
    ci_low: float = math.nan
    ci_high: float = math.nan
    ci_level: float = 0.99
    method: str = "ols"

    @property
    def passed(self) -> bool:
        return self.verdict in (EAS, IDENTICALLY_ZERO)


def fit_rate(
    gaps: GapSeries,
    burn_in: int | None = None,
    ci_level: float = 0.99,
    method: str = "ols",
    lattice: int | None = None,
    min_points: int = 20,
    min_r_squared: float = 0.8,
) -> RateFit:
    """Fit the per-step log-decay of a gap series.

    Parameters
    ----------
    gaps : GapSeries
    burn_in : int, optional
        Leading entries to drop.  Defaults to 10% of the series length.
    ci_level : float
        Two-sided level of the slope interval.
    method : {"ols", "theil_sen"}
    lattice : int, optional
        Keep only ``t`` divisible by ``lattice``.
    min_points : int
        Fewer usable (non-floored) points than this gives ``inconclusive``.

    Returns
    -------
    RateFit
        ``eas`` needs the whole slope interval below zero and
        ``r_squared >= min_r_squared``; ``not_eas`` means the interval lies at or
        above zero; ``identically_zero`` means every retained gap is floored.
    """
    if method not in ("ols", "theil_sen"):
        raise ConfigurationError(f"unknown slope estimator {method!r}")
    if not 0 < ci_level < 1:
        raise ConfigurationError("ci_level must be in (0, 1)")
    n_total = len(gaps)
    if burn_in is None:
        burn_in = int(0.1 * n_total)
    if burn_in < 0:
        raise ConfigurationError("burn_in must be >= 0")
    keep = np.arange(n_total) >= burn_in
    if lattice is not None:
        if lattice < 1:
            raise ConfigurationError("lattice must be >= 1")
        keep &= gaps.t % lattice == 0
    usable = keep & ~gaps.floored
    n_used = int(usable.sum())
    nan = math.nan

    if keep.any() and n_used == 0:
        return RateFit(-math.inf, 0.0, math.inf, nan, nan, 0, burn_in, IDENTICALLY_ZERO,
                       -math.inf, -math.inf, ci_level, method)
    if n_used < 3:
        return RateFit(nan, nan, nan, nan, nan, n_used, burn_in, INCONCLUSIVE, nan, nan, ci_level, method)

    x = gaps.t[usable].astype(np.float64)
    g = gaps.gaps[usable]
    # normalising by the first usable gap makes rescaling by powers of two exact
    ref = g[0]
    y = np.log(g / ref)
    xm = x.mean()
    dx = x - xm
    sxx = float(np.dot(dx, dx))
    if method == "ols":
        slope = float(np.dot(dx, y - y.mean())) / sxx
        icpt = float(y.mean()) - slope * xm
    else:
        res = stats.theilslopes(y, x)
        slope, icpt = float(res.slope), float(res.intercept)
    resid = y - (icpt + slope * x)
    sse = float(np.dot(resid, resid))
    sst = float(np.dot(y - y.mean(), y - y.mean()))
    r2 = 1.0 - sse / sst if sst > 0 else (1.0 if sse == 0 else 0.0)
    dof = n_used - 2
    se = math.sqrt(sse / dof / sxx)
    q = float(stats.t.ppf(0.5 + ci_level / 2, dof))
    lo, hi = slope - q * se, slope + q * se

    if n_used < min_points:
        verdict = INCONCLUSIVE
    elif hi < 0 and r2 >= min_r_squared:
        verdict = EAS
    elif lo >= 0:
        verdict = NOT_EAS
    else:
        verdict = INCONCLUSIVE
    return RateFit(
        slope=slope,
        slope_se=se,
        gamma_hat=math.exp(-slope),
        intercept=float(icpt + math.log(ref)),
        r_squared=r2,
        n_used=n_used,
        burn_in=burn_in,
        verdict=verdict,
        ci_low=lo,
        ci_high=hi,
        ci_level=ci_level,
        method=method,
    )


# trajectories -----------------------------------------------------------------


def iterate_forward(seq: MapSequence, y0, T: int, t0: int | None = None) -> Trajectory:
    """``states[k] = Phi_{t0+k}(states[k-1])`` for ``k = 1..T``, ``states[0] = y0``.

    ``t0`` defaults to one before the sequence's first map (0 for unbounded
    sequences).
    """
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    if t0 is None:
        t0 = seq.first_t - 1
    states = run_forward(seq, y0, t0 + 1, T)
    meta = {"seed": seq.seed, "model_id": seq.model_id, "variant": seq.variant,
            "replicate": seq.replicate, "y0": tuple(states[0].tolist())}
    return Trajectory(t0, states, meta=meta)


def backward_approximant(seq: MapSequence, y, n: int, t: int) -> np.ndarray:
    """``Phi_t o Phi_{t-1} o ... o Phi_{t-n+1} (y)``.

    Larger ``n`` reuses the same realised maps; the result for ``n = t``
    equals ``iterate_forward(seq, y, t).states[t]`` bitwise.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    return run_forward(seq, y, t - n + 1, n)[-1]


def backward_gaps(seq: MapSequence, y, ns: Iterable[int], t: int = 0) -> GapSeries:
    """Consecutive-approximant gaps ``||Phi_t^{(n+1)}(y) - Phi_t^{(n)}(y)||`` for ``n`` in ``ns``.

    For affine maps the gap equals ``||B_t ... B_{t-n+1} (Phi_{t-n}(y) - y)||``
    and is computed in that form.
    """
    ns = sorted(set(int(n) for n in ns))
    if not ns or ns[0] < 1:
        raise ConfigurationError("approximant orders must be >= 1")
    space = seq.space
    y = space.check(y)
    n_max = ns[-1]
    out = []
    if seq.is_affine:
        a, b = seq.coefficients(t - n_max, t + 1)  # a[k] belongs to time t - n_max + k
        prod = np.eye(space.dim)
        wanted = set(ns)
        for n in range(1, n_max + 1):
            prod = prod @ b[n_max - n + 1]
            if n in wanted:
                k = n_max - n
                v = a[k] + b[k] @ y - y
                with np.errstate(over="ignore", invalid="ignore"):
                    out.append(space.norm(prod @ v))
    else:
        for n in ns:
            hi = backward_approximant(seq, y, n + 1, t)
            lo = backward_approximant(seq, y, n, t)
            out.append(space.norm(hi - lo))
    if not all(math.isfinite(g) for g in out):
        raise NumericError("backward approximants diverged", t=t, model_id=seq.model_id)
    return GapSeries.from_gaps(ns, out)


def _affine_gap_run(seq: MapSequence, d0: np.ndarray, t_first: int, T: int) -> np.ndarray:
    """Propagate ``D_k = B_k D_{k-1}`` for T steps; returns norms of ``D_0..D_T``."""
    space = seq.space
    _, b = seq.coefficients(t_first, t_first + T)
    out = np.empty(T + 1)
    out[0] = space.norm(d0)
    if space.dim == 1:
        x = float(d0[0])
        bv = b[:, 0, 0].tolist()
        vals = [abs(x)]
        for k in range(T):
            x = bv[k] * x
            vals.append(abs(x))
        out[:] = vals
    else:
        d = d0
        for k in range(T):
            d = b[k] @ d
            out[k + 1] = space.norm(d)
    if not np.all(np.isfinite(out)):
        bad = int(np.argmax(~np.isfinite(out)))
        raise NumericError("gap overflowed", t=t_first + bad - 1, model_id=seq.model_id)
    return out


def coupling_gap(seq: MapSequence, y0, y0_prime, T: int, t0: int | None = None) -> GapSeries:
    """Distance between two trajectories started at ``y0`` and ``y0_prime`` under the same maps."""
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    space = seq.space
    y0 = space.check(y0)
    y1 = space.check(y0_prime)
    if t0 is None:
        t0 = seq.first_t - 1
    times = np.arange(t0, t0 + T + 1)
    if seq.is_affine:
        return GapSeries.from_gaps(times, _affine_gap_run(seq, y0 - y1, t0 + 1, T))
    a = run_forward(seq, y0, t0 + 1, T)
    b = run_forward(seq, y1, t0 + 1, T)
    return GapSeries.from_gaps(times, space.norms(a - b))


def perturbed_gap(
    exact_seq: MapSequence,
    perturbed_seq: MapSequence,
    y0,
    y0_hat,
    T: int,
    t0: int | None = None,
) -> GapSeries:
    """``||Y_hat_t - Y_t||`` where ``Y`` follows ``exact_seq`` from ``y0`` and
    ``Y_hat`` follows ``perturbed_seq`` from ``y0_hat``.

    Both sequences must be driven by the same data (seed, replicate and
    observation path); otherwise the comparison is meaningless and a
    :class:`ConfigurationError` is raised.
    """
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    if exact_seq.space != perturbed_seq.space:
        raise ConfigurationError("filters live on different state spaces")
    if exact_seq.data_token != perturbed_seq.data_token:
        raise ConfigurationError("exact and perturbed filters are driven by different seeds or paths")
    space = exact_seq.space
    y = space.check(y0)
    yh = space.check(y0_hat)
    if t0 is None:
        t0 = max(exact_seq.first_t, perturbed_seq.first_t) - 1
    times = np.arange(t0, t0 + T + 1)
    if perturbed_seq is exact_seq:
        return GapSeries.from_gaps(times, _affine_gap_run(exact_seq, yh - y, t0 + 1, T)
                                   if exact_seq.is_affine else
                                   space.norms(run_forward(exact_seq, yh, t0 + 1, T)
                                               - run_forward(exact_seq, y, t0 + 1, T)))
    if isinstance(perturbed_seq, PerturbedSequence) and perturbed_seq.base is exact_seq:
        return GapSeries.from_gaps(times, _perturbed_run(exact_seq, perturbed_seq, y, yh - y, t0 + 1, T))
    a = run_forward(exact_seq, y, t0 + 1, T)
    b = run_forward(perturbed_seq, yh, t0 + 1, T)
    return GapSeries.from_gaps(times, space.norms(b - a))


def _perturbed_run(exact_seq, perturbed_seq, y0, d0, t_first, T):
    # D_k = B_hat_k D_{k-1} + da_k + dB_k Y_{k-1};  Y_k = a_k + B_k Y_{k-1}
    space = exact_seq.space
    states = run_forward(exact_seq, y0, t_first, T)
    _, b = exact_seq.coefficients(t_first, t_first + T)
    da, db = perturbed_seq.deltas(t_first, t_first + T)
    out = np.empty(T + 1)
    out[0] = space.norm(d0)
    if space.dim == 1:
        x = float(d0[0])
        bh = (b[:, 0, 0] + db[:, 0, 0]).tolist()
        dav = da[:, 0].tolist()
        dbv = db[:, 0, 0].tolist()
        yv = states[:, 0].tolist()
        vals = [abs(x)]
        for k in range(T):
            x = bh[k] * x + (dav[k] + dbv[k] * yv[k])
            vals.append(abs(x))
        out[:] = vals
    else:
        d = d0
        for k in range(T):
            d = (b[k] + db[k]) @ d + (da[k] + db[k] @ states[k])
            out[k + 1] = space.norm(d)
    if not np.all(np.isfinite(out)):
        bad = int(np.argmax(~np.isfinite(out)))
        raise NumericError("perturbed gap overflowed", t=t_first + bad - 1, model_id=exact_seq.model_id)
    return out


def perturbation_gaps(
    exact_seq: MapSequence,
    perturbed_seq: MapSequence,
    y,
    T: int,
    t_start: int | None = None,
    probe: ProbePlan | None = None,
) -> tuple[GapSeries, GapSeries, str]:
    """Per-step map discrepancies ``t -> ||Phi_hat_t(y) - Phi_t(y)||`` and
    ``t -> Lambda(Phi_hat_t - Phi_t)`` over ``T`` indices.

    Returns both series and the witness kind of the second.
    """
    if exact_seq.data_token != perturbed_seq.data_token:
        raise ConfigurationError("exact and perturbed filters are driven by different seeds or paths")
    space = exact_seq.space
    y = space.check(y)
    if t_start is None:
        t_start = max(exact_seq.first_t, perturbed_seq.first_t)
    t_stop = t_start + T
    times = np.arange(t_start, t_stop)
    if perturbed_seq is exact_seq:
        zeros = np.zeros(T)
        return GapSeries.from_gaps(times, zeros), GapSeries.from_gaps(times, zeros), "exact"
    if isinstance(perturbed_seq, PerturbedSequence) and perturbed_seq.base is exact_seq:
        da, db = perturbed_seq.deltas(t_start, t_stop)
        point = space.norms(da + db @ y)
        lip = space.operator_norms(db)
        return GapSeries.from_gaps(times, point), GapSeries.from_gaps(times, lip), "exact"
    point, lip, kinds = [], [], set()
    for f, g in zip(perturbed_seq.maps(t_start, t_stop), exact_seq.maps(t_start, t_stop)):
        point.append(space.norm(difference_at(f, g, y)))
        est = lipschitz_difference(f, g, probe)
        lip.append(est.value)
        kinds.add(est.witness_kind)
    kind = "exact" if kinds == {"exact"} else sorted(kinds - {"exact"})[0]
    return GapSeries.from_gaps(times, point), GapSeries.from_gaps(times, lip), kind


# lemma probes -----------------------------------------------------------------


def lemma1_probe(
    n: int = 400,
    c: float = 1.0,
    rate: float = 0.5,
    sdlog: float = 1.0,
    seed: int = 0,
    burn_in: int | None = None,
) -> RateFit:
    """Fit the decay of ``X_t Y_t`` with ``X_t = c rate^t`` and i.i.d. ``Y_t = |lognormal|``.

    ``Y_t`` has a finite log-plus moment, so the product should still decay
    exponentially.
    """
    t = np.arange(n + 1)
    x = c * np.power(rate, t.astype(np.float64))
    y = np.abs(NoiseSpec("lognormal", sdlog=sdlog).draw(seed, 0, n + 1))
    return fit_rate(GapSeries.from_gaps(t, x * y), burn_in=burn_in)


def lemma3_probe(
    x_sampler: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    gamma_list: Iterable[float],
    seed: int,
    threshold: float = 1e-6,
    settle_fraction: float = 0.75,
) -> dict[float, bool]:
    """For each ``gamma``, did ``gamma^k prod_{t<=k} X_t`` fall below ``threshold``
    and stay there for every ``k`` in the final ``1 - settle_fraction`` of the run?

    Products are accumulated as log-sums, so no underflow is possible.
    """
    gammas = [float(g) for g in gamma_list]
    if any(not g > 1 for g in gammas):
        raise ConfigurationError("gamma values must exceed 1")
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = np.asarray(x_sampler(rng, n + 1), dtype=np.float64)
    if x.shape != (n + 1,):
        raise ConfigurationError("sampler returned the wrong number of draws")
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise DomainError("lemma 3 samples must be non-negative")
    with np.errstate(divide="ignore"):
        logs = np.log(x)
    csum = np.cumsum(logs)
    k = np.arange(n + 1)
    start = int(math.ceil(settle_fraction * n))
    log_thr = math.log(threshold)
    out = {}
    for g in gammas:
        path = csum + k * math.log(g)
        out[g] = bool(np.all(path[start:] < log_thr))
    return out
