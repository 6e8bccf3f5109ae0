import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptsgd.convex import (
    ConvexConfig, FixedStepConfig, accel_coefficients, agd_adaptive, batch_size_convex,
    line_search_round, sgd_adaptive, sgd_fixed,
)
from adaptsgd.errors import ConfigError, DivergenceError, LineSearchFailed
from adaptsgd.linesearch import verify_certificate
from adaptsgd.oracle import RandomStream

from conftest import quad


def test_batch_size_convex_examples():
    assert batch_size_convex(100.0, 10.0, 0.1) == 100
    assert batch_size_convex(0.0, 10.0, 0.1) == 1
    assert batch_size_convex(1.0, 1.0, 0.3) == 4
    for bad in ((1.0, 0.0, 0.1), (1.0, 1.0, 0.0), (1.0, -1.0, 0.1)):
        with pytest.raises(ConfigError):
            batch_size_convex(*bad)


def test_sgd_fixed_halves_on_unit_quadratic():
    p, o = quad([1.0, 1.0])
    rep = sgd_fixed(o, p, FixedStepConfig(L=1.0, D=0.0, epsilon=1.0, max_iterations=2, keep_iterates=True),
                    [1.0, 0.0], RandomStream(0))
    assert np.array_equal(rep.iterates[1], [0.5, 0.0])
    assert np.array_equal(rep.iterates[2], [0.25, 0.0])
    assert np.array_equal(rep.output_point, [0.375, 0.0])
    one = sgd_fixed(o, p, FixedStepConfig(L=1.0, max_iterations=1), [1.0, 0.0], RandomStream(0))
    assert np.array_equal(one.output_point, [0.5, 0.0])
    assert one.output_rule == "uniform_average"


def test_sgd_fixed_budget_LR2_over_eps():
    p, o = quad([10.0, 3.0, 1.0])
    x0 = np.array([1.0, 0.0, 0.0])
    eps = 1e-3
    N = math.ceil(10.0 * 1.0 / eps)
    rep = sgd_fixed(o, p, FixedStepConfig(L=10.0, D=0.0, epsilon=eps, max_iterations=N), x0, RandomStream(0))
    assert rep.iterations == N
    assert p.gap(rep.output_point) <= eps


def test_one_step_decrease_exact_oracle():
    diag = np.array([5.0, 2.0, 0.5, 0.01])
    p, o = quad(diag, x_star=[1.0, -1.0, 2.0, 0.0])
    L = 5.0
    rep = sgd_fixed(o, p, FixedStepConfig(L=L, max_iterations=50, keep_iterates=True),
                    [3.0, 3.0, 3.0, 3.0], RandomStream(0))
    for a, b in zip(rep.iterates[:-1], rep.iterates[1:]):
        g = p.gradient(a)
        assert p.value(b) - p.value(a) <= -(g @ g) / (4 * L) + 1e-15


def test_sgd_fixed_divergence_carries_trace():
    p, o = quad([10.0])
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError) as info:
            sgd_fixed(o, p, FixedStepConfig(L=1e-3, max_iterations=500), [1.0], RandomStream(0))
    assert len(info.value.trace) > 10


def test_line_search_first_trial_accepts():
    p, o = quad([1.0])
    cfg = ConvexConfig(epsilon=0.1, D0=0.0, L0=4.0)
    res = line_search_round(np.array([1.0]), 4.0, cfg, o, RandomStream(0))
    assert (res.x[0], res.L, res.r, res.trials) == (0.75, 2.0, 1, 1)


def test_line_search_three_trials():
    p, o = quad([1.0])
    cfg = ConvexConfig(epsilon=0.01, D0=0.0, L0=0.25)
    res = line_search_round(np.array([1.0]), 0.25, cfg, o, RandomStream(0))
    assert (res.x[0], res.L, res.trials) == (0.0, 0.5, 3)


def test_line_search_zero_variance_unit_batches():
    p, o = quad([10.0, 1.0], D=0.0)
    rep = sgd_adaptive(o, p, ConvexConfig(epsilon=0.01, D0=0.0, L0=1.0, max_iterations=30),
                       [1.0, 1.0], RandomStream(0))
    assert all(row.r_k == 1 for row in rep.trace[1:])


def test_line_search_failure_is_reported():
    p, o = quad([100.0])
    cfg = ConvexConfig(epsilon=1e-6, L0=1.0, L_cap=8.0)
    with pytest.raises(LineSearchFailed):
        line_search_round(np.array([1.0]), 1.0, cfg, o, RandomStream(0))
    rep = sgd_adaptive(o, p, cfg, [1.0], RandomStream(0))
    assert rep.termination == "linesearch_failed"
    assert rep.iterations == 0


def test_adaptive_L_descends_from_64():
    # f = x^2 / 2 (L_true = 1): the estimate halves each iteration from 64 and
    # reaches L_true after log2(64) = 6 iterations. The 7th step (L = 1/2) is
    # the exact minimizer, after which the slack accepts ever smaller L.
    p, o = quad([1.0])
    rep = sgd_adaptive(o, p, ConvexConfig(epsilon=1e-3, L0=64.0, max_iterations=12), [1.0], RandomStream(0))
    L = rep.accepted_L
    assert list(L[:7]) == [32.0, 16.0, 8.0, 4.0, 2.0, 1.0, 0.5]
    assert rep.trace[7].objective_exact == 0.0
    assert np.all(L <= 2.0 * 1.0 * 16)
    assert np.all(L[5:] <= 1.0)


def test_adaptive_single_iteration_output():
    p, o = quad([1.0, 2.0])
    rep = sgd_adaptive(o, p, ConvexConfig(epsilon=0.01, L0=4.0, max_iterations=1, keep_iterates=True),
                       [1.0, 1.0], RandomStream(0))
    assert np.array_equal(rep.output_point, rep.iterates[1])
    assert rep.output_rule == "weighted_average"


def test_weighted_average_identity():
    p, o = quad([10.0, 4.0, 1.0], D=0.5)
    rep = sgd_adaptive(o, p, ConvexConfig(epsilon=0.05, D0=0.5, L0=3.0, max_iterations=200, keep_iterates=True),
                       [1.0, -1.0, 0.5], RandomStream(3, 1))
    w = 1.0 / rep.accepted_L
    recomputed = (w[:, None] * np.array(rep.iterates[1:])).sum(axis=0) / w.sum()
    assert np.max(np.abs(recomputed - rep.output_point)) <= 1e-12


def test_oracle_budget_accounting_alg2():
    p, o = quad([10.0, 1.0], D=1.0)
    rep = sgd_adaptive(o, p, ConvexConfig(epsilon=0.05, D0=1.0, L0=10.0, max_iterations=100),
                       [1.0, 0.0], RandomStream(1))
    # practical batches shrink as L doubles, so one gradient per round
    assert rep.total_oracle_calls == sum(row.r_k for row in rep.trace[1:])
    T = [row.cumulative_T for row in rep.trace]
    assert all(a <= b for a, b in zip(T, T[1:]))


def test_oracle_budget_accounting_alg3():
    p, o = quad([10.0, 1.0], D=1.0)
    rep = agd_adaptive(o, p, ConvexConfig(epsilon=0.05, D0=1.0, L0=10.0, max_iterations=100),
                       [1.0, 0.0], RandomStream(1))
    # one gradient per trial, all on the round's first batch
    assert rep.total_oracle_calls == sum(row.r_k * row.inner_trials for row in rep.trace[1:])


def test_certificates_reverify_both_solvers():
    p, o = quad([8.0, 2.0, 0.5], D=1.0)
    x0 = [1.0, 1.0, -1.0]
    for solver in (sgd_adaptive, agd_adaptive):
        rep = solver(o, p, ConvexConfig(epsilon=0.05, D0=1.0, L0=1.0, max_iterations=60, keep_certificates=True),
                     x0, RandomStream(5, 9))
        assert len(rep.certificates) == rep.iterations
        assert all(verify_certificate(o, c) for c in rep.certificates)


def test_tampered_certificate_fails():
    p, o = quad([8.0, 2.0], D=1.0)
    rep = sgd_adaptive(o, p, ConvexConfig(epsilon=0.05, D0=1.0, L0=1.0, max_iterations=5, keep_certificates=True),
                       [1.0, 1.0], RandomStream(0))
    c = rep.certificates[0]
    c.point = c.point + 1e-9
    assert not verify_certificate(o, c)


def test_accel_coefficients_examples():
    assert accel_coefficients(0.0, 1.0) == (1.0, 1.0)
    a, A = accel_coefficients(1.0, 1.0)
    assert a == pytest.approx(1.6180339887, abs=1e-10)
    assert A == pytest.approx(2.6180339887, abs=1e-10)
    with pytest.raises(ConfigError):
        accel_coefficients(-1.0, 1.0)


@settings(max_examples=500, deadline=None)
@given(st.floats(0.0, 1e8), st.floats(1e-6, 1e6))
def test_accel_identity(A, L):
    a, A_next = accel_coefficients(A, L)
    assert A_next == A + a
    assert abs(L * a * a - A_next) <= 1e-10 * A_next


def test_agd_first_point_is_start():
    p, o = quad([4.0, 1.0], D=0.3)
    rep = agd_adaptive(o, p, ConvexConfig(epsilon=0.1, D0=0.3, L0=2.0, max_iterations=3, keep_certificates=True),
                       [1.0, 2.0], RandomStream(0))
    assert np.array_equal(rep.certificates[0].base, [1.0, 2.0])
    assert rep.output_rule == "last_iterate"


def test_agd_accelerated_rate_unit_quadratic():
    p, o = quad([1.0, 1.0])
    eps = 1e-4
    N = math.ceil(3 * math.sqrt(1.0 / eps))
    rep = agd_adaptive(o, p, ConvexConfig(epsilon=eps, L0=1.0, max_iterations=N), [1.0, 0.0], RandomStream(0))
    assert p.gap(rep.output_point) <= eps


def test_agd_recurrences_along_run():
    p, o = quad([10.0, 1.0, 0.1], D=0.2)
    rep = agd_adaptive(o, p, ConvexConfig(epsilon=0.01, D0=0.2, L0=5.0, max_iterations=150),
                       [1.0, 1.0, 1.0], RandomStream(2))
    prev = 0.0
    for h in rep.accel_history:
        assert h["A_prev"] == prev
        assert h["A"] == h["A_prev"] + h["alpha"]
        assert abs(h["L"] * h["alpha"] ** 2 - h["A"]) <= 1e-10 * h["A"]
        assert h["A"] > prev
        prev = h["A"]


def test_agd_main_text_coefficient_diverges():
    # with coefficient 1 on L||x - y||^2 the test accepts L well below the
    # curvature the estimate sequence needs; the default 1/2 converges
    d = np.logspace(-4, 2, 20)
    p, o = quad(d)
    x0 = np.ones(20) / math.sqrt(20)
    kw = dict(epsilon=1e-4, L0=1.0, max_iterations=400)
    good = agd_adaptive(o, p, ConvexConfig(**kw), x0, RandomStream(0))
    with np.errstate(over="ignore", invalid="ignore"):
        bad = agd_adaptive(o, p, ConvexConfig(quad_coef=1.0, **kw), x0, RandomStream(0))
    assert p.gap(good.output_point) <= 1e-4
    assert p.gap(bad.output_point) > 1e100


def test_high_probability_config_validation():
    base = dict(epsilon=0.1, L0=2.0, mode="high_probability")
    with pytest.raises(ConfigError):
        ConvexConfig(**base)
    with pytest.raises(ConfigError):
        ConvexConfig(L_lo=1.0, L_hi=3.0, **base)
    with pytest.raises(ConfigError):
        ConvexConfig(L_lo=1.0, L_hi=1.0, **base)
    with pytest.raises(ConfigError):
        ConvexConfig(L_lo=4.0, L_hi=16.0, **base)
    cfg = ConvexConfig(L_lo=1.0, L_hi=8.0, max_iterations=100, **base)
    assert cfg.m == 3
    assert cfg.confidence_factor == pytest.approx(math.log(20.0) + 3 * math.log(100))


def test_high_probability_mode_stays_clipped():
    p, o = quad([10.0, 1.0], D=1.0)
    cfg = ConvexConfig(epsilon=0.05, D0=1.0, L0=8.0, mode="high_probability", L_lo=2.0, L_hi=32.0,
                       max_iterations=40)
    for solver in (sgd_adaptive, agd_adaptive):
        rep = solver(o, p, cfg, [1.0, 0.0], RandomStream(0))
        L = rep.accepted_L
        assert np.all((L >= 2.0) & (L <= 32.0))
        assert rep.contract_violations == 0
        assert p.gap(rep.output_point) <= 0.05


def test_high_probability_ceiling_flags_violation():
    p, o = quad([10.0, 1.0], D=1.0)
    cfg = ConvexConfig(epsilon=0.05, D0=1.0, L0=2.0, mode="high_probability", L_lo=1.0, L_hi=4.0,
                       max_iterations=50)
    rep = sgd_adaptive(o, p, cfg, [1.0, 0.0], RandomStream(0))
    assert rep.contract_violations > 0
    assert sum(row.contract_violation for row in rep.trace) == rep.contract_violations
    assert np.all(rep.accepted_L <= 4.0)


def test_accuracy_stop_wins():
    p, o = quad([1.0, 1.0])
    rep = sgd_adaptive(o, p, ConvexConfig(epsilon=1e-2, L0=1.0, max_iterations=1000, stop_on_accuracy=True,
                                          max_oracle_calls=1), [1.0, 0.0], RandomStream(0))
    assert rep.termination == "accuracy_reached"


def test_unknown_config_field():
    with pytest.raises(ConfigError):
        ConvexConfig.from_dict({"epsilon": 0.1, "bogus": 1})
