import math

import numpy as np
import pytest

from oracles import E_LOG_GARCH_SLOPE, E_LOGPLUS_ABS_NORMAL, log_garch_slope, logplus_abs_normal
from srekit.core import AffineMap, GeneralMap, ProbePlan, StateSpace
from srekit.errors import ConfigurationError, DomainError
from srekit.lyapunov import (
    CONTRACTIVE,
    INCONCLUSIVE,
    NOT_CONTRACTIVE,
    ConditionBundle,
    ConditionSettings,
    check_logplus_moment,
    contraction_verdict,
    estimate_contraction,
    find_contraction_order,
    lemma2_violations,
    log_plus,
    verify_conditions,
)
from srekit.models import ArParams, GarchParams, JointFilterParams, NoiseSpec, make_ar, make_garch
from srekit.models import garch_observations, make_joint_filter
from srekit.sequences import ConstantAffineSequence, NoiseDrivenSequence, decaying_intercept


def test_oracles_reproduce():
    assert logplus_abs_normal() == pytest.approx(E_LOGPLUS_ABS_NORMAL, abs=1e-13)
    assert log_garch_slope() == pytest.approx(E_LOG_GARCH_SLOPE, abs=1e-13)


def test_log_plus():
    assert log_plus([0.0, 0.5, 1.0, math.e]).tolist() == [0.0, 0.0, 0.0, 1.0]


@pytest.mark.parametrize("value, mean", [(1.0, 0.0), (math.exp(2.0), 2.0)])
def test_constant_moment(value, mean):
    rep = check_logplus_moment(lambda rng, n: np.full(n, value), 200, seed=0)
    assert rep.empirical_mean == pytest.approx(mean, abs=1e-15)
    assert rep.std_error == 0.0
    assert rep.verdict == "finite"


def test_moment_errors():
    with pytest.raises(DomainError):
        check_logplus_moment(lambda rng, n: -np.ones(n), 100, seed=0)
    with pytest.raises(ConfigurationError):
        check_logplus_moment(lambda rng, n: np.ones(n), 99, seed=0)


def test_ar_step_moment_matches_quadrature():
    seq = make_ar(ArParams(0.0, 0.5), seed=12)
    a, _ = seq.coefficients(1, 100_001)
    rep = check_logplus_moment(lambda rng, n: np.abs(a[:n, 0]), 100_000, seed=0, condition_id="p1_i")
    assert abs(rep.empirical_mean - E_LOGPLUS_ABS_NORMAL) < 3 * rep.std_error


def test_heavy_tails_are_flagged():
    # log+ X is |Cauchy|, so about 1.6% of draws exceed 40
    sampler = lambda rng, n: np.exp(np.minimum(np.abs(rng.standard_cauchy(n)), 700.0))
    rep = check_logplus_moment(sampler, 1000, seed=1)
    fr = [f for _, f in rep.tail_fractions]
    assert fr == sorted(fr, reverse=True)
    assert rep.verdict == INCONCLUSIVE


@pytest.mark.parametrize(
    "est, se, verdict",
    [(-1.0, 0.1, CONTRACTIVE), (1.0, 0.1, NOT_CONTRACTIVE), (0.1, 0.1, INCONCLUSIVE), (-math.inf, math.nan, CONTRACTIVE)],
)
def test_verdict_arithmetic(est, se, verdict):
    assert contraction_verdict(est, se) == verdict


@pytest.mark.parametrize(
    "seq, expected",
    [
        (make_ar(ArParams(0.0, 0.5), seed=1), math.log(0.5)),
        (make_garch(GarchParams(0.1, 0.2, 0.7), 1, "filter_given_path",
                    garch_observations(GarchParams(0.1, 0.2, 0.7), 1, 500)), math.log(0.7)),
    ],
)
def test_constant_lipschitz_is_exact(seq, expected):
    rep = estimate_contraction(seq, 1, 400)
    assert rep.estimate == pytest.approx(expected, abs=1e-12)
    assert rep.std_error == 0.0 and rep.verdict == CONTRACTIVE


def test_estimate_is_additive_in_r():
    seq = make_ar(ArParams(0.0, 0.5), seed=0)
    base = estimate_contraction(seq, 1, 50).estimate
    for r in range(2, 7):
        assert estimate_contraction(seq, r, 50).estimate == r * base


def test_zero_slope_gives_minus_infinity():
    seq = ConstantAffineSequence(StateSpace.real(1), [1.0], [[0.0]])
    rep = estimate_contraction(seq, 2, 30)
    assert rep.estimate == -math.inf and math.isnan(rep.std_error)
    assert rep.verdict == CONTRACTIVE


def test_garch_data_view_matches_oracle():
    rep = estimate_contraction(make_garch(GarchParams(0.1, 0.2, 0.7), seed=21), 1, 100_000)
    assert abs(rep.estimate - E_LOG_GARCH_SLOPE) < 3 * rep.std_error


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_parallel_blocks_are_identical(workers):
    seq = make_garch(GarchParams(0.1, 0.2, 0.7), seed=4)
    serial = estimate_contraction(seq, 3, 1000)
    parallel = estimate_contraction(seq, 3, 1000, workers=workers)
    assert (serial.estimate, serial.std_error) == (parallel.estimate, parallel.std_error)


def test_two_dimensional_products():
    space = StateSpace.real(2)
    seq = ConstantAffineSequence(space, [0.0, 0.0], [[0.0, 2.0], [0.25, 0.0]])
    # B^2 = diag(0.5, 0.5): one step is expanding in sup norm, two steps contract
    assert estimate_contraction(seq, 1, 30).verdict == NOT_CONTRACTIVE
    assert estimate_contraction(seq, 2, 30).estimate == pytest.approx(math.log(0.5))


def test_find_order():
    assert find_contraction_order(make_ar(ArParams(0.0, 0.5), seed=1), 4, 100).r == 1
    res = find_contraction_order(make_ar(ArParams(0.0, 1.5), seed=1), 4, 100)
    assert res.r is None and len(res.reports) == 4
    assert all(rep.verdict == NOT_CONTRACTIVE for rep in res.reports)
    with pytest.raises(ConfigurationError):
        find_contraction_order(make_ar(ArParams(0.0, 0.5), seed=1), 0, 100)


def test_lower_bound_witness_downgrades():
    space = StateSpace.real(1)
    seq = NoiseDrivenSequence(space, lambda t, u: GeneralMap(space, lambda y: 0.5 * np.tanh(y) + u[0],
                                                             vectorized=True), seed=0)
    with pytest.raises(ConfigurationError):
        estimate_contraction(seq, 1, 30)
    rep = estimate_contraction(seq, 1, 30, probe=ProbePlan([-1.0], [1.0], n_pairs=200))
    assert rep.estimate < 0
    assert rep.verdict == INCONCLUSIVE and rep.note == "lower-bound witness"


def test_declared_upper_bound_stays_contractive():
    space = StateSpace.real(1)
    seq = NoiseDrivenSequence(space, lambda t, u: GeneralMap(space, lambda y: 0.5 * np.tanh(y) + u[0],
                                                             lipschitz=0.5, lipschitz_kind="upper_bound",
                                                             vectorized=True), seed=0)
    rep = estimate_contraction(seq, 2, 30, probe=ProbePlan([-1.0], [1.0], n_pairs=200))
    assert rep.witness_kind == "upper_bound" and rep.verdict == CONTRACTIVE


def test_arguments_validated():
    seq = make_ar(ArParams(0.0, 0.5), seed=1)
    with pytest.raises(ConfigurationError):
        estimate_contraction(seq, 0, 100)
    with pytest.raises(ConfigurationError):
        estimate_contraction(seq, 1, 29)


def test_lemma2_pointwise():
    rng = np.random.default_rng(0)
    x, y = rng.lognormal(0.0, 20.0, size=(2, 100_000))
    assert lemma2_violations(x, y) == (0, 0)
    assert lemma2_violations([0.0, 1.0], [0.0, 0.0]) == (0, 0)
    with pytest.raises(DomainError):
        lemma2_violations([-1.0], [1.0])


def test_dossier_for_joint_filter():
    jf = make_joint_filter(JointFilterParams(), seed=3, T=200)
    dossier = verify_conditions(ConditionBundle(jf.exact, jf.perturbed), ConditionSettings(n_moment=200, n_blocks=50))
    ids = [m.condition_id for m in dossier.moments]
    assert ids == ["p1_i", "p1_ii_logplus", "p3_i"]
    assert dossier.contraction.r == 1
    assert dossier.rate_fits["p3_iii"].verdict == "identically_zero"
    assert dossier.rate_fits["p3_ii"].verdict == "eas"
    assert dossier.rate_fits["p3_ii"].slope <= math.log(0.5) + 0.05
    assert "identically_zero" in dossier.render_text()
    assert dossier.rows()[0][0] == "p1_i"


def test_self_perturbation_is_zero():
    jf = make_joint_filter(JointFilterParams(), seed=3, T=200)
    dossier = verify_conditions(ConditionBundle(jf.exact, jf.exact), ConditionSettings(n_moment=200, n_blocks=50))
    assert dossier.rate_fits["p3_ii"].verdict == "identically_zero"
    assert dossier.rate_fits["p3_iii"].verdict == "identically_zero"


def test_dossier_without_perturbation():
    seq = make_ar(ArParams(0.0, 1.5), seed=0)
    dossier = verify_conditions(ConditionBundle(seq), ConditionSettings(n_moment=500, n_blocks=50))
    assert [m.condition_id for m in dossier.moments] == ["p1_i", "p1_ii_logplus"]
    assert dossier.contraction.r is None
    assert NOT_CONTRACTIVE in dossier.verdicts()
    assert not dossier.rate_fits


def test_dossier_decaying_perturbation():
    seq = make_ar(ArParams(0.0, 0.5), seed=0)
    dossier = verify_conditions(ConditionBundle(seq, decaying_intercept(seq, 1.0, 0.6)),
                                ConditionSettings(n_moment=500, n_blocks=50, T=200))
    assert dossier.rate_fits["p3_ii"].slope == pytest.approx(math.log(0.6), abs=1e-9)


def test_dossier_refuses_degenerate_noise():
    seq = make_ar(ArParams(0.0, 0.5, NoiseSpec("degenerate")), seed=0)
    with pytest.raises(ConfigurationError, match="degenerate"):
        verify_conditions(ConditionBundle(seq))
