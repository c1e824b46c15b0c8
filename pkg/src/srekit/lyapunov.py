"""Monte Carlo checks of the moment and contraction hypotheses.

The contraction condition asks for some order ``r`` with
``E[log Lambda(Phi_0^{(r)})] < 0``.  It is estimated from disjoint blocks of
``r`` consecutive maps and judged with a confidence interval, so every
verdict is three-way: contractive, not contractive, or inconclusive.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .convergence import GapSeries, RateFit, fit_rate, perturbation_gaps, run_forward
from .core import (
    EXACT,
    SAMPLED_LOWER_BOUND,
    UPPER_BOUND,
    ProbePlan,
    compose,
    lipschitz_coefficient,
)
from .errors import ConfigurationError, DomainError, NumericError
from .sequences import MapSequence

CONTRACTIVE = "contractive"
NOT_CONTRACTIVE = "not_contractive"
INCONCLUSIVE = "inconclusive"
FINITE = "finite"

TAIL_THRESHOLDS = (10.0, 20.0, 40.0)
MOMENT_CAVEAT = "finite sample means cannot certify a finite expectation"

Sampler = Callable[[np.random.Generator, int], np.ndarray]


def log_plus(x) -> np.ndarray:
    """``max(log x, 0)`` with ``log+(0) = 0``."""
    return np.log(np.maximum(np.asarray(x, dtype=np.float64), 1.0))


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    # fsum keeps the reduction independent of order and chunking
    n = len(values)
    if np.all(values == values[0]):
        return float(values[0]), 0.0
    mean = math.fsum(values.tolist()) / n
    dev = values - mean
    var = math.fsum((dev * dev).tolist()) / (n - 1)
    return mean, math.sqrt(var / n)


def _z(ci_level: float) -> float:
    if not 0 < ci_level < 1:
        raise ConfigurationError("ci_level must be in (0, 1)")
    return float(stats.norm.ppf(0.5 + ci_level / 2))


@dataclass(frozen=True)
class MomentReport:
    condition_id: str
    n_samples: int
    empirical_mean: float
    std_error: float
    tail_fractions: tuple[tuple[float, float], ...]
    verdict: str
    caveat: str = MOMENT_CAVEAT


def check_logplus_moment(sampler: Sampler, n: int, seed: int, condition_id: str = "p1_i") -> MomentReport:
    """Empirical mean and standard error of ``log+`` of ``n`` draws from ``sampler``.

    The verdict is ``finite`` when the mean is finite and no draw exceeds
    ``log+ = 40``; otherwise ``inconclusive``.  It is a diagnostic only.
    """
    if n < 100:
        raise ConfigurationError("moment checks need n >= 100")
    x = np.asarray(sampler(np.random.default_rng(seed), n), dtype=np.float64).reshape(-1)
    if np.any(np.isnan(x)):
        raise NumericError("sampler returned NaN")
    if np.any(x < 0):
        raise DomainError("log-plus moments need non-negative samples")
    lp = log_plus(x)
    if np.all(np.isfinite(lp)):
        mean, se = _mean_se(lp)
    else:
        mean, se = math.inf, math.nan
    tails = tuple((thr, float(np.mean(lp > thr))) for thr in TAIL_THRESHOLDS)
    verdict = FINITE if math.isfinite(mean) and tails[-1][1] == 0 else INCONCLUSIVE
    return MomentReport(condition_id, len(x), mean, se, tails, verdict)


@dataclass(frozen=True)
class ContractionReport:
    """Estimate of ``E[log Lambda(Phi_0^{(r)})]`` with its verdict.

    An estimate of ``-inf`` (some block has ``Lambda = 0``) is reported as
    such, with ``std_error`` NaN, and is contractive.
    """

    r: int
    estimate: float
    std_error: float
    ci_level: float
    verdict: str
    n_blocks: int
    witness_kind: str = EXACT
    note: str = ""


def contraction_verdict(estimate: float, std_error: float, ci_level: float = 0.99) -> str:
    if estimate == -math.inf:
        return CONTRACTIVE
    z = _z(ci_level)
    if estimate + z * std_error < 0:
        return CONTRACTIVE
    if estimate - z * std_error > 0:
        return NOT_CONTRACTIVE
    return INCONCLUSIVE


_KIND_RANK = {EXACT: 0, UPPER_BOUND: 1, SAMPLED_LOWER_BOUND: 2}


def _block_logs(seq: MapSequence, r: int, t_lo: int, n: int, probe: ProbePlan | None) -> tuple[np.ndarray, str]:
    space = seq.space
    if seq.is_affine:
        _, b = seq.coefficients(t_lo, t_lo + n * r)
        with np.errstate(divide="ignore"):
            if space.dim == 1:
                logs = np.log(np.abs(b[:, 0, 0])).reshape(n, r)
                if r == 1:
                    return logs[:, 0], EXACT
                return np.array([math.fsum(row) for row in logs.tolist()]), EXACT
            b = b.reshape(n, r, space.dim, space.dim)
            prod = b[:, 0]
            for j in range(1, r):
                prod = b[:, j] @ prod
            return np.log(space.operator_norms(prod)), EXACT
    logs = np.empty(n)
    kind = EXACT
    maps = seq.maps(t_lo, t_lo + n * r)
    for k in range(n):
        block = maps[k * r : (k + 1) * r][::-1]
        est = lipschitz_coefficient(compose(block), probe)
        if _KIND_RANK[est.witness_kind] > _KIND_RANK[kind]:
            kind = est.witness_kind
        with np.errstate(divide="ignore"):
            logs[k] = np.log(est.value)
    return logs, kind


def estimate_contraction(
    seq: MapSequence,
    r: int,
    n_blocks: int,
    probe: ProbePlan | None = None,
    seed: int | None = None,
    ci_level: float = 0.99,
    t_start: int | None = None,
    workers: int = 1,
) -> ContractionReport:
    """Estimate ``E[log Lambda(Phi_0^{(r)})]`` from ``n_blocks`` disjoint windows.

    Block ``k`` composes the maps at ``t_start + k r, ..., t_start + (k+1) r - 1``.
    ``seed`` rebinds the sequence to another stream; ``workers`` splits the
    blocks across threads without changing the result.
    """
    if r < 1:
        raise ConfigurationError("r must be >= 1")
    if n_blocks < 30:
        raise ConfigurationError("n_blocks must be >= 30")
    if not seq.is_affine and seq.lipschitz_values(seq.first_t, seq.first_t + 1) is None and probe is None:
        raise ConfigurationError("a probe plan is required for sequences of non-affine maps")
    if seed is not None:
        seq = seq.with_seed(seed)
    if t_start is None:
        t_start = seq.first_t
    seq.check_range(t_start, t_start + n_blocks * r)

    workers = max(1, int(workers))
    bounds = np.linspace(0, n_blocks, workers + 1).astype(int)
    chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def run(chunk):
        lo, hi = chunk
        return _block_logs(seq, r, t_start + lo * r, hi - lo, probe)

    if len(chunks) == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run, chunks))
    logs = np.concatenate([res[0] for res in results])
    kind = max((res[1] for res in results), key=_KIND_RANK.__getitem__)
    if np.any(np.isnan(logs)) or np.any(logs == math.inf):
        raise NumericError("non-finite Lipschitz coefficient", model_id=seq.model_id)

    if np.any(logs == -math.inf):
        estimate, se = -math.inf, math.nan
    else:
        estimate, se = _mean_se(logs)
    verdict = contraction_verdict(estimate, se, ci_level)
    note = ""
    if kind == SAMPLED_LOWER_BOUND and verdict == CONTRACTIVE:
        verdict, note = INCONCLUSIVE, "lower-bound witness"
    return ContractionReport(r, estimate, se, ci_level, verdict, n_blocks, kind, note)


@dataclass(frozen=True)
class ContractionSearch:
    r: int | None
    reports: tuple[ContractionReport, ...]

    @property
    def final(self) -> ContractionReport:
        """The report for the returned order, or the last one scanned."""
        if self.r is not None:
            return self.reports[self.r - 1]
        return self.reports[-1]


def find_contraction_order(
    seq: MapSequence,
    r_max: int,
    n_blocks: int,
    probe: ProbePlan | None = None,
    seed: int | None = None,
    ci_level: float = 0.99,
    workers: int = 1,
) -> ContractionSearch:
    """Smallest ``r <= r_max`` whose report is contractive (``r=None`` if none)."""
    if r_max < 1:
        raise ConfigurationError("r_max must be >= 1")
    reports = []
    for r in range(1, r_max + 1):
        rep = estimate_contraction(seq, r, n_blocks, probe, seed, ci_level, workers=workers)
        reports.append(rep)
        if rep.verdict == CONTRACTIVE:
            return ContractionSearch(r, tuple(reports))
    return ContractionSearch(None, tuple(reports))


def lemma2_violations(x, y, rel_tol: float = 8 * np.finfo(float).eps) -> tuple[int, int]:
    """Count pointwise failures of

    ``log+(x + y) <= 2 log 2 + log+ x + log+ y`` and ``log+(x y) <= log+ x + log+ y``

    on non-negative pairs.  ``rel_tol`` absorbs floating-point rounding only.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x < 0) or np.any(y < 0):
        raise DomainError("lemma 2 needs non-negative pairs")
    lx, ly = log_plus(x), log_plus(y)
    rhs_sum = 2 * math.log(2) + lx + ly
    rhs_prod = lx + ly
    slack_sum = rel_tol * np.maximum(1.0, rhs_sum)
    slack_prod = rel_tol * np.maximum(1.0, rhs_prod)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        s, p = x + y, x * y
        # sums or products that overflow are evaluated in log space instead
        big, small = np.maximum(x, y), np.minimum(x, y)
        log_s = np.where(np.isfinite(s), np.log(np.maximum(s, 1.0)), np.log(big) + np.log1p(small / big))
        log_p = np.where(np.isfinite(p), np.log(np.maximum(p, 1.0)), np.log(x) + np.log(y))
    bad_sum = int(np.sum(np.maximum(log_s, 0.0) > rhs_sum + slack_sum))
    bad_prod = int(np.sum(np.maximum(log_p, 0.0) > rhs_prod + slack_prod))
    return bad_sum, bad_prod


# condition dossier --------------------------------------------------------------


@dataclass
class ConditionBundle:
    """Inputs to :func:`verify_conditions`.

    ``y0_sampler`` draws values of ``||Y_0||`` under the stationary law; when
    omitted, stationary states are taken from the model when it has them or
    from a long burned-in run otherwise.
    """

    seq: MapSequence
    perturbed_seq: MapSequence | None = None
    anchor: np.ndarray | None = None
    y0_sampler: Sampler | None = None
    probe: ProbePlan | None = None


@dataclass(frozen=True)
class ConditionSettings:
    n_moment: int = 10_000
    r_max: int = 4
    n_blocks: int = 1000
    ci_level: float = 0.99
    T: int = 200
    burn_in: int | None = None
    seed: int = 0
    workers: int = 1
    stationary_burn_in: int = 1000


@dataclass
class ConditionDossier:
    moments: list[MomentReport]
    contraction: ContractionSearch
    rate_fits: dict[str, RateFit] = field(default_factory=dict)
    gap_series: dict[str, GapSeries] = field(default_factory=dict)
    lipschitz_witness: str = EXACT
    anchor: tuple[float, ...] = ()

    def rows(self) -> list[tuple[str, int, float, float, str]]:
        """``(condition_id, n, estimate, std_error, verdict)`` per condition."""
        out = [(m.condition_id, m.n_samples, m.empirical_mean, m.std_error, m.verdict) for m in self.moments]
        for rep in self.contraction.reports:
            out.append((f"p1_ii_contraction_r{rep.r}", rep.n_blocks, rep.estimate, rep.std_error, rep.verdict))
        for name, fit in self.rate_fits.items():
            out.append((name, fit.n_used, fit.slope, fit.slope_se, fit.verdict))
        return out

    def verdicts(self) -> list[str]:
        final = self.contraction.final.verdict
        return [m.verdict for m in self.moments] + [final] + [f.verdict for f in self.rate_fits.values()]

    def render_text(self) -> str:
        lines = ["condition dossier", f"anchor y = {list(self.anchor)}", ""]
        for m in self.moments:
            tails = ", ".join(f">{thr:g}: {frac:.3g}" for thr, frac in m.tail_fractions)
            lines.append(
                f"  {m.condition_id:<22} E[log+] ~ {m.empirical_mean:.6g} (se {m.std_error:.3g}, n={m.n_samples}) "
                f"tails [{tails}] -> {m.verdict}"
            )
        lines.append(f"  note: {MOMENT_CAVEAT}")
        for rep in self.contraction.reports:
            extra = f" ({rep.note})" if rep.note else ""
            lines.append(
                f"  contraction r={rep.r:<3} E[log Lambda] ~ {rep.estimate:.6g} (se {rep.std_error:.3g}, "
                f"{rep.n_blocks} blocks, {rep.witness_kind}) -> {rep.verdict}{extra}"
            )
        order = self.contraction.r
        lines.append(f"  contraction order: {order if order is not None else 'none found'}")
        for name, fit in self.rate_fits.items():
            lines.append(
                f"  {name:<22} slope {fit.slope:.6g} (se {fit.slope_se:.3g}), gamma_hat {fit.gamma_hat:.6g}, "
                f"r2 {fit.r_squared:.4g}, n={fit.n_used} -> {fit.verdict}"
            )
        return "\n".join(lines) + "\n"


def _sequence_window(seq: MapSequence, n: int) -> tuple[int, int]:
    t0 = seq.first_t
    hi = seq.t_range[1]
    n_eff = n if hi is None else min(n, hi - t0 + 1)
    return t0, n_eff


def _step_sampler(seq: MapSequence, y: np.ndarray, n: int) -> Sampler:
    def sample(rng, size):
        t0, m = _sequence_window(seq, size)
        if seq.is_affine:
            a, b = seq.coefficients(t0, t0 + m)
            return seq.space.norms(a + b @ y - y)
        return np.array([seq.space.norm(phi._apply(y) - y) for phi in seq.maps(t0, t0 + m)])

    return sample


def _lipschitz_sampler(seq: MapSequence, probe: ProbePlan | None) -> Sampler:
    def sample(rng, size):
        t0, m = _sequence_window(seq, size)
        vals = seq.lipschitz_values(t0, t0 + m)
        if vals is not None:
            return vals
        return np.array([lipschitz_coefficient(phi, probe).value for phi in seq.maps(t0, t0 + m)])

    return sample


def _stationary_sampler(seq: MapSequence, y: np.ndarray, burn_in: int) -> Sampler:
    def sample(rng, size):
        states = getattr(seq, "stationary_states", None)
        if states is not None:
            s = states(size)
            return seq.space.norms(s)
        t0, m = _sequence_window(seq, size + burn_in)
        if m <= burn_in:
            raise ConfigurationError("sequence too short for a burned-in stationary sample")
        path = run_forward(seq, y, t0, m)
        return seq.space.norms(path[burn_in + 1 :])

    return sample


def verify_conditions(bundle: ConditionBundle, settings: ConditionSettings = ConditionSettings()) -> ConditionDossier:
    """Assemble moment, contraction and perturbation diagnostics for one model.

    The stationary moment of ``||Y_0||`` is checked when a perturbed sequence
    or a ``y0_sampler`` is supplied.  With ``bundle.perturbed_seq`` set, the two perturbation conditions are
    checked by fitting decay rates to ``t -> ||Phi_hat_t(y) - Phi_t(y)||`` and
    ``t -> Lambda(Phi_hat_t - Phi_t)``.
    """
    seq = bundle.seq
    if seq.degenerate:
        raise ConfigurationError("statistical checks refuse degenerate (zero) noise")
    space = seq.space
    y = space.zero_anchor() if bundle.anchor is None else space.check(bundle.anchor)
    s = settings
    moments = [
        check_logplus_moment(_step_sampler(seq, y, s.n_moment), s.n_moment, s.seed, "p1_i"),
        check_logplus_moment(_lipschitz_sampler(seq, bundle.probe), s.n_moment, s.seed, "p1_ii_logplus"),
    ]
    if bundle.perturbed_seq is not None or bundle.y0_sampler is not None:
        moments.append(
            check_logplus_moment(
                bundle.y0_sampler or _stationary_sampler(seq, y, s.stationary_burn_in), s.n_moment, s.seed, "p3_i"
            )
        )
    _, available = _sequence_window(seq, s.r_max * s.n_blocks)
    n_blocks = min(s.n_blocks, available // s.r_max)
    search = find_contraction_order(seq, s.r_max, n_blocks, bundle.probe, None, s.ci_level, s.workers)
    dossier = ConditionDossier(moments, search, anchor=tuple(y.tolist()))

    if bundle.perturbed_seq is not None:
        _, T = _sequence_window(seq, s.T)
        point, lip, kind = perturbation_gaps(seq, bundle.perturbed_seq, y, T, probe=bundle.probe)
        dossier.gap_series["p3_ii"] = point
        dossier.gap_series["p3_iii"] = lip
        dossier.lipschitz_witness = kind
        dossier.rate_fits["p3_ii"] = fit_rate(point, s.burn_in, s.ci_level)
        dossier.rate_fits["p3_iii"] = fit_rate(lip, s.burn_in, s.ci_level)
    return dossier
