import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpdtr.rules import (
    DEFAULT_TAU1,
    DEFAULT_TAU2,
    BelowRule,
    FeasibleSet,
    HistoryView,
    RuleConfigError,
    ThresholdRuleParams,
    apply_rule,
    fixed_rule,
    parse_rule,
    parse_value_list,
    rule_grid,
    threshold_rule,
)


def view(k, ef_path):
    ef = np.atleast_2d(np.asarray(ef_path, dtype=float))
    B = ef.shape[0]
    return HistoryView(k, {"ef": ef[:, :k]}, np.ones((B, k - 1)), np.ones((B, k - 1)))


def decide(params, k, ef_path, feasible=FeasibleSet()):
    return int(apply_rule(threshold_rule(ThresholdRuleParams(*params)), view(k, ef_path), feasible, k)[0])


def test_course3_always_withholds():
    for path in ([0.9, 0.9, 0.9], [0.2, 0.1, 0.05]):
        assert decide((0.0, 0.9), 3, path) == 0
        assert decide((-0.5, 0.1), 3, path) == 0


def test_threshold_examples():
    ef1 = 0.5625  # EF_k / EF_1 - 1 = -0.2 at EF_k = 0.45
    assert decide((-0.1, 0.5), 2, [ef1, 0.45]) == 0
    assert decide((-0.1, 0.5), 2, [0.75, 0.60]) == 1
    assert decide((0.0, 0.7), 1, [0.65]) == 0
    assert decide((0.0, 0.7), 4, [0.70, 0.7, 0.7, 0.72]) == 1


def test_strict_inequalities():
    # EF_k equal to tau2 is not "below"; gives treatment
    assert decide((0.0, 0.5), 1, [0.5]) == 1
    # relative change exactly tau1 is not a decline below it
    assert decide((-0.5, 0.9), 2, [0.8, 0.4]) == 1


def test_feasible_set_coercion_and_errors():
    r = fixed_rule([1, 1, 1, 1])
    v = view(3, [[0.5, 0.5, 0.5]] * 4)
    out, flags = apply_rule(r, v, FeasibleSet.no_act_at_course3(), 3, return_flags=True)
    assert np.all(out == 0) and np.all(flags)
    with pytest.raises(RuleConfigError):
        apply_rule(fixed_rule([2, 2, 2]), v, FeasibleSet(), 3)
    with pytest.raises(RuleConfigError):
        FeasibleSet(((2, ()),))
    assert FeasibleSet.parse("3:0; 4:0|1").allowed(3) == (0,)
    assert FeasibleSet.parse("3:0; 4:0|1").allowed(4) == (0, 1)


def test_params_validation():
    with pytest.raises(RuleConfigError):
        ThresholdRuleParams(0.1, 0.5)
    with pytest.raises(RuleConfigError):
        ThresholdRuleParams(-0.1, 1.0)


def test_rule_grid():
    grid = rule_grid(DEFAULT_TAU1, DEFAULT_TAU2)
    assert len(grid) == 36
    assert grid[0] == ThresholdRuleParams(0.0, 0.4) and grid[1] == ThresholdRuleParams(0.0, 0.5)
    assert grid == rule_grid(DEFAULT_TAU1, DEFAULT_TAU2)
    assert len(rule_grid([0.0], [0.5])) == 1
    with pytest.raises(RuleConfigError):
        rule_grid([], [0.5])


def test_parse_rule_and_lists():
    assert parse_rule("threshold(-0.1, 0.5)") == threshold_rule(ThresholdRuleParams(-0.1, 0.5))
    assert parse_rule("fixed(1,0,0,1)") == fixed_rule([1, 0, 0, 1])
    assert parse_rule("below(l1,0)") == BelowRule("l1", 0.0)
    for bad in ("threshold(1)", "nope(1)", "threshold"):
        with pytest.raises(RuleConfigError):
            parse_rule(bad)
    assert parse_value_list("0,-0.1,...,-0.5") == list(DEFAULT_TAU1)
    assert parse_value_list("0.4,...,0.9") == list(DEFAULT_TAU2)
    assert parse_value_list("1,2,5") == [1.0, 2.0, 5.0]


def test_below_rule():
    v = HistoryView(2, {"l1": np.array([[1.0, -0.5], [0.0, 0.0], [0.0, 0.3]])}, np.ones((3, 1)), np.ones((3, 1)))
    np.testing.assert_array_equal(BelowRule("l1", 0.0)(v), [1, 0, 0])


ef = st.floats(0.01, 0.99)


@given(st.sampled_from(DEFAULT_TAU1), ef, st.integers(1, 4), st.lists(ef, min_size=4, max_size=4), st.booleans())
def test_output_always_feasible(tau1, tau2, k, path, restrict):
    feasible = FeasibleSet.no_act_at_course3() if restrict else FeasibleSet()
    d = decide((tau1, tau2), k, path, feasible)
    assert d in feasible.allowed(k)


@given(st.sampled_from(DEFAULT_TAU1), ef, ef, st.integers(1, 4), st.lists(ef, min_size=4, max_size=4))
def test_monotone_in_tau2(tau1, t_a, t_b, k, path):
    lo, hi = sorted((t_a, t_b))
    # raising tau2 never turns a withhold into a give
    if decide((tau1, lo), k, path) == 0:
        assert decide((tau1, hi), k, path) == 0
