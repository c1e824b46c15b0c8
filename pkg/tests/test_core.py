import math

import numpy as np
import pytest

from srekit.core import (
    EXACT,
    SAMPLED_LOWER_BOUND,
    UPPER_BOUND,
    AffineMap,
    GeneralMap,
    PerturbedAffineMap,
    ProbePlan,
    StateSpace,
    Trajectory,
    compose,
    difference_at,
    evaluate,
    lipschitz_coefficient,
    lipschitz_difference,
    sampled_lipschitz,
)
from srekit.errors import ConfigurationError, DomainError, NumericError

R1 = StateSpace.real(1)
HALF = StateSpace.half_line()


def square_map():
    return GeneralMap(HALF, lambda y: y * y, vectorized=True)


def test_state_space_rejects_bad_bounds():
    with pytest.raises(ConfigurationError):
        StateSpace(1, (1.0,), (0.0,))
    with pytest.raises(ConfigurationError):
        StateSpace(0, (), ())
    with pytest.raises(ConfigurationError):
        StateSpace(1, (0.0,), (1.0,), norm_kind="l7")


def test_check_names_coordinate():
    box = StateSpace.box([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(DomainError) as info:
        box.check([0.5, 2.0], t=4)
    assert info.value.coordinate == 1
    assert info.value.t == 4
    with pytest.raises(NumericError):
        box.check([math.nan, 0.5])


def test_zero_anchor_is_clipped():
    box = StateSpace.box([1.0], [3.0])
    assert box.zero_anchor().tolist() == [1.0]
    assert HALF.zero_anchor().tolist() == [0.0]


@pytest.mark.parametrize(
    "norm_kind, matrix, expected",
    [
        ("sup", [[1.0, -2.0], [0.5, 0.5]], 3.0),
        ("euclidean", [[3.0, 0.0], [0.0, -4.0]], 4.0),
    ],
)
def test_operator_norm(norm_kind, matrix, expected):
    space = StateSpace.real(2, norm_kind)
    assert space.operator_norm(matrix) == pytest.approx(expected)
    assert space.operator_norms(np.array([matrix]))[0] == pytest.approx(expected)


def test_affine_map_is_exact():
    phi = AffineMap(R1, [1.0], [[-0.5]])
    assert phi([2.0]).tolist() == [0.0]
    est = lipschitz_coefficient(phi)
    assert (est.value, est.witness_kind) == (0.5, EXACT)


def test_affine_arrays_are_read_only():
    phi = AffineMap(R1, [1.0], [[0.5]])
    with pytest.raises(ValueError):
        phi.slope[0, 0] = 2.0


def test_composition_order_is_most_recent_first():
    f = AffineMap(R1, [1.0], [[1.0]], t=2)  # y + 1
    g = AffineMap(R1, [0.0], [[2.0]], t=1)  # 2y
    both = compose([f, g])
    assert both([3.0]).tolist() == [7.0]
    assert both.collapse().intercept.tolist() == [1.0]
    assert both.t == 2
    est = lipschitz_coefficient(both)
    assert (est.value, est.witness_kind) == (2.0, EXACT)


def test_empty_composition_rejected():
    with pytest.raises(ConfigurationError):
        compose([])


def test_evaluate_catches_leaving_the_space():
    phi = AffineMap(HALF, [-5.0], [[1.0]], t=9)
    with pytest.raises(DomainError) as info:
        evaluate(phi, [1.0])
    assert info.value.t == 9


def test_evaluate_catches_overflow():
    phi = AffineMap(R1, [0.0], [[1e300]], t=3)
    with pytest.raises(NumericError, match="t=3"):
        evaluate(compose([phi, phi]), [1e10])


def test_sampled_lipschitz_of_square_against_grid():
    probe = ProbePlan([0.0], [2.0], n_pairs=10_000, seed=1)
    sampled = sampled_lipschitz(square_map(), probe)
    grid = np.linspace(0.0, 2.0, 2001)
    x, y = np.meshgrid(grid, grid)
    mask = x != y
    oracle = np.max(np.abs(x[mask] ** 2 - y[mask] ** 2) / np.abs(x[mask] - y[mask]))
    assert sampled <= 4.0 + 1e-12
    assert sampled >= oracle - 0.01


def test_unknown_coefficient_needs_probe():
    with pytest.raises(ConfigurationError):
        lipschitz_coefficient(square_map())
    est = lipschitz_coefficient(square_map(), ProbePlan([0.0], [1.0], n_pairs=500))
    assert est.witness_kind == SAMPLED_LOWER_BOUND


def test_mixed_composition_reports_upper_bound_with_lower():
    g = GeneralMap(R1, np.sin, lipschitz=1.0, vectorized=True)
    f = AffineMap(R1, [0.0], [[0.5]])
    est = lipschitz_coefficient(compose([f, g]), ProbePlan([-1.0], [1.0], n_pairs=2000))
    assert est.witness_kind == UPPER_BOUND
    assert est.value == 0.5
    assert 0.45 < est.lower_bound <= 0.5


def test_probe_outside_space():
    with pytest.raises(DomainError):
        ProbePlan([-1.0], [1.0]).validate(HALF)
    with pytest.raises(ConfigurationError):
        ProbePlan([0.0], [math.inf])


def test_difference_of_perturbed_map_is_cancellation_free():
    base = AffineMap(R1, [1e8], [[0.5]])
    pert = PerturbedAffineMap(base, [1e-20], [[0.0]])
    assert difference_at(pert, base, [3.0]).tolist() == [1e-20]
    assert difference_at(base, pert, [3.0]).tolist() == [-1e-20]
    est = lipschitz_difference(pert, base)
    assert (est.value, est.witness_kind) == (0.0, EXACT)


def test_difference_of_general_maps():
    f = GeneralMap(R1, np.sin, lipschitz=1.0, vectorized=True)
    g = GeneralMap(R1, np.cos, lipschitz=1.0, vectorized=True)
    assert lipschitz_difference(f, f).value == 0.0
    est = lipschitz_difference(f, g, ProbePlan([-3.0], [3.0], n_pairs=2000))
    assert est.witness_kind == UPPER_BOUND and est.value == 2.0
    assert 1.3 < est.lower_bound <= math.sqrt(2) + 1e-9


def test_trajectory_accessors():
    tr = Trajectory(5, [[1.0, 2.0], [3.0, 4.0]], labels=("a", "b"))
    assert len(tr) == 2 and tr.t_end == 6
    assert tr.at(6).tolist() == [3.0, 4.0]
    assert tr.column("b").tolist() == [2.0, 4.0]
    with pytest.raises(DomainError):
        tr.at(7)
    with pytest.raises(ValueError):
        tr.states[0, 0] = 1.0
