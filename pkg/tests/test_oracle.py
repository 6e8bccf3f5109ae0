import math

import numpy as np
import pytest
from scipy import integrate, stats

from adaptsgd.errors import ConfigError, OracleFault
from adaptsgd.oracle import (
    FiniteSumOracle, OracleCounter, RandomStream, SampleBatch, StochasticOracle,
    gaussian_sub_gaussian_parameter, make_additive_gaussian_oracle, mini_batch_gradient,
    mini_batch_value,
)
from adaptsgd.problems import logistic_problem, make_logistic_data, quadratic_problem

from conftest import quad


class ListOracle(StochasticOracle):
    """Realizations are scalars v; f(x, v) = v, grad f(x, v) = v * ones."""

    def __init__(self, values, dim=2):
        self.values = np.asarray(values, dtype=float)
        self.dim = dim
        self.declared_variance = 0.0

    def _draw(self, r, generator):
        return self.values[:r]

    def sample_gradients(self, x, batch):
        return batch.realizations[:, None] * np.ones(self.dim)

    def sample_values(self, x, batch):
        return batch.realizations


def test_single_sample_batch_is_the_raw_sample():
    _, oracle = quad([1.0, 3.0], D=2.0)
    x = np.array([0.3, -1.0])
    raw = oracle.sample_gradient(x, RandomStream(7, 3))
    avg = mini_batch_gradient(oracle, x, 1, RandomStream(7, 3))
    assert np.array_equal(raw, avg)


def test_zero_noise_batch_gradient_is_exact():
    _, oracle = quad([1.0, 1.0], D=0.0)
    for r in (1, 5, 64):
        g = mini_batch_gradient(oracle, [2.0, 0.0], r, RandomStream(0))
        assert np.array_equal(g, [2.0, 0.0])


def test_zero_noise_sample_gradient_equals_exact():
    problem, oracle = quad([2.0, 5.0, 1.0], D=0.0)
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(oracle.sample_gradient(x, RandomStream(1)), problem.gradient(x))


def test_draw_accounting():
    _, oracle = quad([1.0, 1.0], D=1.0)
    counter = OracleCounter()
    mini_batch_gradient(oracle, [0.0, 0.0], 17, RandomStream(0), counter)
    mini_batch_gradient(oracle, [0.0, 0.0], 3, RandomStream(1), counter)
    assert counter.gradient_calls == 20
    assert counter.batches_drawn == 2


def test_batch_mean_variance_D4_r4():
    # D / r = 1; Monte-Carlo over 1e5 repeats
    _, oracle = quad([1.0, 1.0, 1.0, 1.0], D=4.0)
    stream = RandomStream(2024, 1)
    x = np.array([0.5, -0.5, 1.0, 0.0])
    exact = oracle.exact_gradient(x)
    M = 100_000
    err = np.empty(M)
    for i in range(M):
        err[i] = np.sum((mini_batch_gradient(oracle, x, 4, stream) - exact) ** 2)
    assert abs(err.mean() - 1.0) <= 0.05


def test_per_coordinate_noise_variance():
    _, oracle = quad([1.0, 1.0], D=2.0)
    assert oracle.noise_std ** 2 == pytest.approx(1.0)
    z = oracle.draw(200_000, RandomStream(5)).realizations
    assert np.allclose(z.var(axis=0), 1.0, rtol=0.02)


def test_single_draw_second_moment_matches_D():
    D = 3.0
    _, oracle = quad([4.0, 1.0, 2.0], D=D)
    x = np.array([1.0, 2.0, 3.0])
    batch = oracle.draw(100_000, RandomStream(9))
    dev = oracle.sample_gradients(x, batch) - oracle.exact_gradient(x)
    m2 = np.mean(np.sum(dev ** 2, axis=1))
    assert 0.95 * D <= m2 <= 1.05 * D


def test_unbiased_mean():
    D = 1.0
    _, oracle = quad([1.0, 2.0], D=D)
    x = np.array([1.0, 1.0])
    M = 40_000
    g = mini_batch_gradient(oracle, x, M, RandomStream(3))
    # each coordinate of the mean has std sqrt(D / (n M))
    assert np.all(np.abs(g - oracle.exact_gradient(x)) <= 5 * math.sqrt(D / (2 * M)))


def test_negative_variance_rejected():
    with pytest.raises(ConfigError):
        make_additive_gaussian_oracle(quadratic_problem([1.0]), -1.0)


def test_streams_reproduce_and_differ():
    a = RandomStream(11, 2).generator.normal(size=5)
    b = RandomStream(11, 2).generator.normal(size=5)
    c = RandomStream(11, 3).generator.normal(size=5)
    d = RandomStream(12, 2).generator.normal(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_redraw_reproduces_batch():
    _, oracle = quad([1.0, 2.0], D=1.0)
    stream = RandomStream(4)
    oracle.draw(3, stream)
    batch = oracle.draw(10, stream)
    again = oracle.redraw(10, batch.state)
    assert np.array_equal(batch.realizations, again.realizations)


def test_mini_batch_value_mean_and_deterministic():
    oracle = ListOracle([1.0, 3.0])
    batch = oracle.draw(2, RandomStream(0))
    assert mini_batch_value(oracle, [0.0, 0.0], batch) == 2.0
    problem, det = quad([1.0, 1.0])
    b1 = det.draw(1, RandomStream(0))
    assert mini_batch_value(det, [2.0, 0.0], b1) == problem.value(np.array([2.0, 0.0]))


def test_mini_batch_value_reuses_realizations():
    _, oracle = quad([1.0, 1.0], D=1.0)
    batch = oracle.draw(5, RandomStream(1))
    x, y = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    zbar = batch.realizations.mean(axis=0)
    assert mini_batch_value(oracle, x, batch) == pytest.approx(0.5 + zbar[0], rel=1e-14)
    assert mini_batch_value(oracle, y, batch) == pytest.approx(0.5 + zbar[1], rel=1e-14)


def test_empty_batch_rejected():
    oracle = ListOracle([])
    empty = SampleBatch(np.empty(0))
    with pytest.raises(ConfigError):
        mini_batch_value(oracle, [0.0, 0.0], empty)
    with pytest.raises(ConfigError):
        oracle.batch_gradient(np.zeros(2), empty)
    with pytest.raises(ConfigError):
        oracle.draw(0, RandomStream(0))


def test_oracle_fault_names_draw_index():
    oracle = ListOracle([1.0, 2.0, np.inf, np.nan])
    batch = oracle.draw(4, RandomStream(0))
    with pytest.raises(OracleFault) as info:
        oracle.batch_gradient(np.zeros(2), batch)
    assert info.value.draw_index == 2
    with pytest.raises(OracleFault) as info:
        oracle.batch_value(np.zeros(2), batch)
    assert info.value.draw_index == 2


def _sub_gaussian_mgf(D, n, sigma2):
    # E exp(||z||^2 / sigma^2), ||z||^2 = (D/n) chi2_n, by quadrature against the chi2 density
    t = D / (n * sigma2)
    val, _ = integrate.quad(lambda q: math.exp(t * q + stats.chi2.logpdf(q, n)), 0, np.inf, limit=400)
    return val


@pytest.mark.parametrize("D,n", [(1.0, 1), (2.0, 2), (0.5, 5), (4.0, 20)])
def test_sub_gaussian_parameter_is_tight(D, n):
    s2 = gaussian_sub_gaussian_parameter(D, n)
    assert _sub_gaussian_mgf(D, n, s2) == pytest.approx(math.e, rel=1e-7)
    assert _sub_gaussian_mgf(D, n, 1.05 * s2) < math.e
    assert gaussian_sub_gaussian_parameter(0.0, 3) == 0.0


def test_finite_sum_full_batch_equals_objective():
    A, y, _, _ = make_logistic_data(60, 4, seed=3)
    problem = logistic_problem(A, y, l2=0.01)
    oracle = FiniteSumOracle(problem)
    x = np.array([0.3, -0.2, 1.0, 0.5])
    full = SampleBatch(np.arange(60))
    assert abs(mini_batch_value(oracle, x, full) - problem.value(x)) <= 1e-12
    assert np.allclose(oracle.batch_gradient(x, full), problem.gradient(x), rtol=0, atol=1e-12)


def test_finite_sum_variance_law():
    A, y, _, _ = make_logistic_data(80, 3, seed=1)
    problem = logistic_problem(A, y)
    x0 = np.array([0.5, -1.0, 0.2])
    oracle = FiniteSumOracle(problem, x_ref=x0)
    stream = RandomStream(8)
    exact = problem.gradient(x0)
    r = 5
    err = np.array([np.sum((mini_batch_gradient(oracle, x0, r, stream) - exact) ** 2)
                    for _ in range(20_000)])
    assert err.mean() <= 1.1 * oracle.declared_variance / r
    assert err.mean() >= 0.9 * oracle.declared_variance / r
