"""Armijo-type adaptive stochastic gradient methods with mini-batch control."""

from .baselines import BaselineConfig, adagrad_step, adam_step, run_adagrad, run_adam
from .convex import (
    ConvexConfig, FixedStepConfig, accel_coefficients, agd_adaptive, batch_size_convex,
    line_search_round, sgd_adaptive, sgd_fixed,
)
from .errors import (
    ConfigError, DataError, DivergenceError, InvariantError, LineSearchFailed, OracleFault,
    OracleUnavailable,
)
from .nonconvex import (
    NonconvexConfig, StationarityTracker, batch_size_nonconvex, sgd_nonconvex_adaptive,
    sgd_nonconvex_fixed,
)
from .oracle import (
    AdditiveGaussianOracle, FiniteSumOracle, OracleCounter, RandomStream, SampleBatch,
    StochasticOracle, make_additive_gaussian_oracle, mini_batch_gradient, mini_batch_value,
)
from .problems import ProblemSpec, logistic_problem, nonconvex_problem, quadratic_problem
from .trace import RunReport, TraceRow

__version__ = "0.1.0"
