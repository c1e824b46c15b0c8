"""Execution of configured experiments and CSV/text output."""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..convergence import (
    EAS,
    IDENTICALLY_ZERO,
    NOT_EAS,
    GapSeries,
    RateFit,
    coupling_gap,
    fit_rate,
    lemma1_probe,
    lemma3_probe,
    perturbed_gap,
)
from ..core import ProbePlan
from ..lyapunov import (
    CONTRACTIVE,
    FINITE,
    NOT_CONTRACTIVE,
    ConditionBundle,
    ConditionSettings,
    ContractionReport,
    estimate_contraction,
    lemma2_violations,
    verify_conditions,
)
from ..models import garch_observations, make_ar, make_garch, make_joint_filter, simulate_observations
from ..sequences import MapSequence, decaying_intercept
from .config import ExperimentConfig

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INCONCLUSIVE = 2
EXIT_RUNTIME = 3
EXIT_USAGE = 64
EXIT_CONFIG = 65
EXIT_IO = 74

PASSING = {CONTRACTIVE, EAS, IDENTICALLY_ZERO, FINITE, "pass"}
FAILING = {NOT_CONTRACTIVE, NOT_EAS, "fail"}

RATEFIT_COLUMNS = ("slope", "slope_se", "gamma_hat", "intercept", "r_squared", "n_used", "burn_in", "verdict")


def fmt(value) -> str:
    """CSV cell: ``repr`` for floats (``-inf``, ``inf``, ``nan`` as tokens), ``str`` otherwise."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    return str(value)


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def render(self, seed: int) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={seed} version={__version__}\n")
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(fmt(v) for v in row) + "\n")
        return buf.getvalue()


@dataclass
class ReplicateResult:
    replicate: int
    verdicts: list[str] = field(default_factory=list)
    conditions: list[tuple] = field(default_factory=list)
    ratefits: list[tuple] = field(default_factory=list)
    gaps: dict[str, GapSeries] = field(default_factory=dict)
    lyapunov: list[ContractionReport] = field(default_factory=list)
    lemmas: list[tuple] = field(default_factory=list)
    trajectory: tuple[tuple[str, ...], np.ndarray, int] | None = None
    text: list[str] = field(default_factory=list)


@dataclass
class RunResult:
    exit_code: int
    files: list[str]
    verdicts: list[str]
    report: str


def exit_code_for(verdicts: list[str]) -> int:
    if any(v in FAILING for v in verdicts):
        return EXIT_FAILED
    if any(v not in PASSING for v in verdicts):
        return EXIT_INCONCLUSIVE
    return EXIT_OK


# model assembly -----------------------------------------------------------------


@dataclass
class ModelBundle:
    seq: MapSequence
    perturbed: MapSequence | None
    y0: np.ndarray
    y0_hat: np.ndarray
    anchor: np.ndarray


def build_model(config: ExperimentConfig, replicate: int) -> ModelBundle:
    m, run = config.model, config.run
    params = config.params()
    seed = run.seed
    anchor = np.array(config.probe.anchor, dtype=np.float64)
    if m.model_id == "joint_filter":
        jf = make_joint_filter(params, seed, run.T, run.path_burn_in, replicate)
        return ModelBundle(jf.exact, jf.perturbed, np.array([jf.sigma2_0]), np.array([params.sigma2_init]),
                           jf.exact.space.check(anchor))
    if m.model_id == "ar":
        seq = make_ar(params, seed, replicate)
    elif m.view == "filter_given_path":
        path = garch_observations(params, seed, run.T, run.path_burn_in, replicate)
        seq = make_garch(params, seed, m.view, path, replicate)
    else:
        seq = make_garch(params, seed, m.view, replicate=replicate)
    perturbed = None
    if config.perturbation is not None:
        perturbed = decaying_intercept(seq, config.perturbation.amplitude, config.perturbation.rate)
    y0 = seq.space.check(anchor)
    return ModelBundle(seq, perturbed, y0, y0, y0)


def _probe(config: ExperimentConfig) -> ProbePlan | None:
    p = config.probe
    if p.lower is None:
        return None
    return ProbePlan(np.array(p.lower), np.array(p.upper), n_pairs=p.n_samples, seed=config.run.seed)


def _horizon(seq: MapSequence, T: int) -> int:
    hi = seq.t_range[1]
    return T if hi is None else min(T, hi - seq.first_t + 1)


def _add_fit(res: ReplicateResult, name: str, gaps: GapSeries, config: ExperimentConfig) -> RateFit:
    burn_in = min(config.burn_in, max(len(gaps) - 1, 0))
    fit = fit_rate(gaps, burn_in, config.run.ci_level)
    res.gaps[name] = gaps
    res.ratefits.append((name, fit))
    res.verdicts.append(fit.verdict)
    res.text.append(
        f"{name}: slope {fit.slope:.6g} (se {fit.slope_se:.3g}), gamma_hat {fit.gamma_hat:.6g}, "
        f"r2 {fit.r_squared:.4g}, n={fit.n_used} -> {fit.verdict}"
    )
    return fit


# steps ---------------------------------------------------------------------------


def _step_conditions(res, config, model, include_p3: bool, workers: int):
    run = config.run
    settings = ConditionSettings(
        n_moment=run.n_moment, r_max=run.r_max, n_blocks=run.n_blocks, ci_level=run.ci_level,
        T=run.T, burn_in=config.burn_in, seed=run.seed, workers=workers,
    )
    bundle = ConditionBundle(model.seq, model.perturbed if include_p3 else None, model.anchor, probe=_probe(config))
    dossier = verify_conditions(bundle, settings)
    res.conditions.extend(dossier.rows())
    res.verdicts.extend(dossier.verdicts()[: len(dossier.moments) + 1])
    res.text.append(dossier.render_text().rstrip("\n"))
    for name, fit in dossier.rate_fits.items():
        res.ratefits.append((name, fit))
        res.gaps[name] = dossier.gap_series[name]
        res.verdicts.append(fit.verdict)


def _step_coupling(res, config, model):
    T = _horizon(model.seq, config.run.T)
    y0_prime = model.seq.space.clip(model.y0 + config.probe.coupling_offset)
    _add_fit(res, "p2_coupling", coupling_gap(model.seq, model.y0, y0_prime, T), config)


def _step_perturbed(res, config, model):
    T = _horizon(model.seq, config.run.T)
    _add_fit(res, "p3_conclusion", perturbed_gap(model.seq, model.perturbed, model.y0, model.y0_hat, T), config)


def _step_lyapunov(res, config, model, workers: int):
    run = config.run
    avail = _horizon(model.seq, run.r_max * run.n_blocks)
    n_blocks = min(run.n_blocks, avail // run.r_max)
    for r in range(1, run.r_max + 1):
        rep = estimate_contraction(model.seq, r, n_blocks, _probe(config), None, run.ci_level, workers=workers)
        res.lyapunov.append(rep)
    verdicts = [rep.verdict for rep in res.lyapunov]
    best = CONTRACTIVE if CONTRACTIVE in verdicts else (NOT_CONTRACTIVE if all(
        v == NOT_CONTRACTIVE for v in verdicts) else "inconclusive")
    res.verdicts.append(best)
    for rep in res.lyapunov:
        res.text.append(f"lyapunov r={rep.r}: {rep.estimate!r} (se {rep.std_error!r}) -> {rep.verdict}")


def _step_lemmas(res, config):
    seed = config.run.seed + 7919 * res.replicate
    rng = np.random.default_rng(seed)
    # log-scale spread of 20 covers both sides of 1 and values near overflow
    x, y = rng.lognormal(0.0, 20.0, size=(2, 100_000))
    bad_sum, bad_prod = lemma2_violations(x, y)
    v2 = "pass" if bad_sum == 0 and bad_prod == 0 else "fail"
    res.lemmas.append(("lemma2", "violations_sum", float(bad_sum), v2))
    res.lemmas.append(("lemma2", "violations_product", float(bad_prod), v2))

    g_ok, g_bad = math.exp(0.05), math.exp(0.2)
    ok = lemma3_probe(lambda r, n: r.lognormal(-0.1, 0.5, n), 5000, [g_ok, g_bad], seed)
    v3 = "pass" if ok[g_ok] and not ok[g_bad] else "fail"
    res.lemmas.append(("lemma3", "gamma_exp_0.05", float(ok[g_ok]), v3))
    res.lemmas.append(("lemma3", "gamma_exp_0.2", float(ok[g_bad]), v3))

    fit = lemma1_probe(seed=seed)
    res.lemmas.append(("lemma1", "slope", fit.slope, fit.verdict))
    res.verdicts.extend([v2, v3, fit.verdict])
    res.text.append(f"lemma probes: lemma2 {v2}, lemma3 {v3}, lemma1 {fit.verdict}")


def run_replicate(config: ExperimentConfig, command: str, replicate: int, workers: int = 1) -> ReplicateResult:
    res = ReplicateResult(replicate)
    checks = config.checks.checks
    if command == "lemma-probe":
        _step_lemmas(res, config)
        return res
    model = build_model(config, replicate)
    if command == "simulate":
        _simulate(res, config, model)
        return res
    if command == "lyapunov":
        _step_lyapunov(res, config, model, workers)
        return res
    if command == "converge":
        _step_coupling(res, config, model)
        if model.perturbed is not None:
            _step_perturbed(res, config, model)
        return res
    # verify
    if "p1" in checks or "p3" in checks:
        _step_conditions(res, config, model, "p3" in checks, workers)
    if "p2" in checks:
        _step_coupling(res, config, model)
    if "p3" in checks:
        _step_perturbed(res, config, model)
    if "lyapunov" in checks:
        _step_lyapunov(res, config, model, workers)
    if "lemma_probes" in checks:
        _step_lemmas(res, config)
    return res


def _simulate(res, config, model):
    m, run = config.model, config.run
    if m.model_id == "joint_filter":
        obs = model.seq.observations
        res.trajectory = (obs.labels, obs.states, obs.t0)
    elif m.model_id == "garch":
        obs = garch_observations(config.params(), run.seed, run.T, run.path_burn_in, res.replicate)
        res.trajectory = (obs.labels, obs.states, obs.t0)
    else:
        traj = simulate_observations(model.seq, model.y0, run.T)
        res.trajectory = (("y",), traj.states, traj.t0)
    res.text.append(f"simulated {run.T} steps")


# output ---------------------------------------------------------------------------


def _tables(results: list[ReplicateResult], command: str) -> list[Table]:
    tables = []
    if any(r.conditions for r in results):
        t = Table("conditions.csv", ("replicate", "condition_id", "n", "estimate", "std_error", "verdict"))
        for r in results:
            t.rows.extend((r.replicate, *row) for row in r.conditions)
        tables.append(t)
    if any(r.ratefits for r in results):
        t = Table("ratefits.csv", ("replicate", "series", *RATEFIT_COLUMNS))
        for r in results:
            for name, fit in r.ratefits:
                t.rows.append((r.replicate, name, *(getattr(fit, c) for c in RATEFIT_COLUMNS)))
        tables.append(t)
    names = []
    for r in results:
        names.extend(n for n in r.gaps if n not in names)
    for name in names:
        t = Table(f"gaps_{name}.csv", ("replicate", "t", "gap", "floored"))
        for r in results:
            g = r.gaps.get(name)
            if g is not None:
                t.rows.extend(zip([r.replicate] * len(g), g.t.tolist(), g.gaps.tolist(), g.floored.tolist()))
        tables.append(t)
    if any(r.lyapunov for r in results):
        t = Table("lyapunov.csv", ("replicate", "r", "n_blocks", "estimate", "std_error", "verdict", "witness_kind"))
        for r in results:
            t.rows.extend(
                (r.replicate, rep.r, rep.n_blocks, rep.estimate, rep.std_error, rep.verdict, rep.witness_kind)
                for rep in r.lyapunov
            )
        tables.append(t)
    if any(r.lemmas for r in results):
        t = Table("lemmas.csv", ("replicate", "lemma", "quantity", "value", "verdict"))
        for r in results:
            t.rows.extend((r.replicate, *row) for row in r.lemmas)
        tables.append(t)
    if any(r.trajectory for r in results):
        labels = results[0].trajectory[0]
        t = Table("trajectory.csv", ("replicate", "t", *labels))
        for r in results:
            _, states, t0 = r.trajectory
            for k, row in enumerate(states.tolist()):
                t.rows.append((r.replicate, t0 + k, *row))
        tables.append(t)
    return tables


def execute(config: ExperimentConfig, command: str = "verify", jobs: int = 1) -> RunResult:
    """Run all replicates, write the outputs and return the exit code.

    Replicates may run on ``jobs`` threads; results are gathered in replicate
    order before anything is written, so outputs do not depend on scheduling.
    """
    reps = list(range(config.run.replicates))
    jobs = max(1, int(jobs))
    if jobs == 1 or len(reps) == 1:
        results = [run_replicate(config, command, r, workers=jobs) for r in reps]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda r: run_replicate(config, command, r), reps))

    verdicts = [v for r in results for v in r.verdicts]
    code = exit_code_for(verdicts)
    report_lines = [f"srekit {__version__} {command}: model={config.model.model_id} seed={config.run.seed}"]
    for r in results:
        report_lines.append(f"--- replicate {r.replicate}")
        report_lines.extend(r.text)
    report_lines.append(f"exit code {code}")
    report = "\n".join(report_lines) + "\n"

    out = config.output.directory
    files = []
    if config.output.csv or config.output.report:
        os.makedirs(out, exist_ok=True)
    if config.output.csv:
        for table in _tables(results, command):
            path = os.path.join(out, table.name)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(table.render(config.run.seed))
            files.append(path)
    if config.output.report:
        path = os.path.join(out, "report.txt")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report)
        files.append(path)
    return RunResult(code, files, verdicts, report)
