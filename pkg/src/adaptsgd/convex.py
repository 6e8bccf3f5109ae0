"""Stochastic gradient methods for convex objectives.

``sgd_fixed`` needs the smoothness constant; ``sgd_adaptive`` and
``agd_adaptive`` estimate it on the fly with the doubling line search, either
in the practical parameterization (quartering warm start, unclipped) or the
high-probability one (halving warm start, L clipped to [L_lo, L_hi], inflated
batches).
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvariantError, LineSearchFailed
from .linesearch import (
    RoundResult, SolverOptions, armijo_round, ceil_batch, evaluate_values,
    gradient_certificate, upper_bound_holds,
)
from .oracle import OracleCounter, RandomStream, StochasticOracle
from .trace import Certificate, Recorder, RunReport

MODES = ("practical", "high_probability")
_TINY = sys.float_info.min  # keeps warm starts positive after exact convergence


def batch_size_convex(D: float, L: float, eps: float) -> int:
    """r = ceil(max(D / (L eps), 1))."""
    if not L > 0 or not eps > 0:
        raise ConfigError("L and eps must be positive")
    if D < 0:
        raise ConfigError("D must be >= 0")
    return ceil_batch(D / (L * eps))


@dataclass
class FixedStepConfig(SolverOptions):
    L: float = 1.0
    D: float = 0.0
    epsilon: float = 1e-3

    def __post_init__(self):
        self._check_options()
        if not self.L > 0 or not self.epsilon > 0 or self.D < 0:
            raise ConfigError("need L > 0, epsilon > 0, D >= 0")


@dataclass
class ConvexConfig(SolverOptions):
    epsilon: float = 1e-3
    D0: float = 0.0
    L0: float = 1.0
    mode: str = "practical"
    L_lo: float | None = None
    L_hi: float | None = None
    alpha_conf: float = 0.05
    sigma2_0: float | None = None   # sub-Gaussian bound; falls back to D0
    theta: float = 1.0              # constant hidden in the high-probability batch rules
    L_cap: float | None = None      # practical-mode ceiling, default 2^30 L0
    L_floor: float | None = None    # optional practical-mode lower cut-off
    quad_coef: float | None = None  # coefficient of L ||.||^2 in the test; solver default if None

    def __post_init__(self):
        self._check_options()
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.D0 < 0:
            raise ConfigError("D0 must be >= 0")
        if not self.L0 > 0:
            raise ConfigError("L0 must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.L_cap is None:
            self.L_cap = 2.0 ** 30 * self.L0
        if self.mode == "high_probability":
            if self.L_lo is None or self.L_hi is None:
                raise ConfigError("high_probability mode needs L_lo and L_hi")
            if not 0 < self.L_lo <= self.L0 <= self.L_hi:
                raise ConfigError("need 0 < L_lo <= L0 <= L_hi")
            m = math.log2(self.L_hi / self.L_lo)
            if m < 1 or abs(m - round(m)) > 1e-12:
                raise ConfigError("log2(L_hi / L_lo) must be a positive integer")
            if not 0 < self.alpha_conf < 1:
                raise ConfigError("alpha_conf must lie in (0, 1)")
        if self.theta <= 0:
            raise ConfigError("theta must be positive")

    @property
    def m(self) -> int:
        return int(round(math.log2(self.L_hi / self.L_lo)))

    @property
    def confidence_factor(self) -> float:
        """ln(1/alpha) + m ln N."""
        return math.log(1.0 / self.alpha_conf) + self.m * math.log(self.max_iterations)

    @property
    def sigma2(self) -> float:
        return self.D0 if self.sigma2_0 is None else self.sigma2_0


def _finish(solver, recorder, counter, output, rule, termination, iterations, message="",
            violations=0, config=None, accel=None):
    return RunReport(
        solver=solver, output_point=np.array(output), output_rule=rule, trace=recorder.trace,
        total_oracle_calls=counter.gradient_calls, termination=termination, iterations=iterations,
        message=message, contract_violations=violations,
        verification_calls=counter.verification_calls, value_calls=counter.value_calls,
        iterates=recorder.iterates, certificates=recorder.certificates, accel_history=accel,
        config=config.to_dict() if config is not None else {},
    )


def _stop(cfg, counter, problem, output_value):
    """Termination check after an outer iteration; accuracy wins ties."""
    if cfg.stop_on_accuracy and problem is not None and problem.known_opt_value is not None:
        if output_value - problem.known_opt_value <= cfg.epsilon:
            return "accuracy_reached"
    if cfg.max_oracle_calls is not None and counter.gradient_calls >= cfg.max_oracle_calls:
        return "budget_exhausted"
    return None


def _output_value(recorder, oracle, point):
    row = recorder.trace[-1]
    if not math.isnan(row.output_objective):
        return row.output_objective
    return recorder.exact(point)[0] if oracle.has_exact else math.nan


def sgd_fixed(oracle: StochasticOracle, problem, config: FixedStepConfig, x0,
              stream: RandomStream) -> RunReport:
    """Mini-batch SGD with step 1/(2L); returns the uniform average of x^1..x^N."""
    cfg = config
    x = np.array(x0, dtype=float)
    r = batch_size_convex(cfg.D, cfg.L, cfg.epsilon)
    counter = OracleCounter()
    rec = Recorder(oracle, problem, counter, cfg, x)
    rec.add(0, x, cfg.L, r)
    total = np.zeros_like(x)
    termination = "budget_exhausted"
    k = 0
    for k in range(1, cfg.max_iterations + 1):
        batch = oracle.draw(r, stream, counter)
        g = oracle.batch_gradient(x, batch, counter)
        x = x - g / (2.0 * cfg.L)
        total += x
        avg = total / k
        rec.add(k, x, cfg.L, r, grad_norm_batch=np.linalg.norm(g), output_point=avg)
        stop = _stop(cfg, counter, problem, _output_value(rec, oracle, avg)) if (
            cfg.stop_on_accuracy or cfg.max_oracle_calls) else None
        if stop:
            termination = stop
            break
    return _finish("sgd_fixed", rec, counter, total / k, "uniform_average", termination, k, config=cfg)


def _convex_round_rules(cfg: ConvexConfig, L_prev: float):
    """(warm_start, grow, clip_ceiling) for the configured mode."""
    if cfg.mode == "practical":
        floor = cfg.L_floor or 0.0
        return (lambda L: max(L / 4.0, _TINY)), (lambda L: max(2.0 * L, floor)), None
    return (lambda L: max(L / 2.0, cfg.L_lo)), (lambda L: min(2.0 * L, cfg.L_hi)), cfg.L_hi


def line_search_round(x_k, L_k: float, config: ConvexConfig, oracle: StochasticOracle,
                      stream: RandomStream, counter: OracleCounter | None = None) -> RoundResult:
    """One adaptive round of the non-accelerated method.

    Returns the accepted point, constant, batch size and trial count (plus
    the batch and gradient used, for certificates).
    """
    cfg = config
    counter = OracleCounter() if counter is None else counter
    warm, grow, ceiling = _convex_round_rules(cfg, L_k)
    if cfg.mode == "practical":
        batch_size = lambda L: ceil_batch(cfg.D0 / (L * cfg.epsilon))
    else:
        # uses the previous accepted constant, so r is fixed within the round
        r_hp = ceil_batch(cfg.theta * cfg.sigma2 * cfg.L_hi ** 2 * cfg.confidence_factor
                          / (L_k * cfg.epsilon * cfg.L_lo ** 2))
        batch_size = lambda L: r_hp
    return armijo_round(
        oracle, np.asarray(x_k, dtype=float), L_k, warm_start=warm, grow=grow,
        batch_size=batch_size, slack=lambda L: cfg.epsilon / 2.0, stream=stream, counter=counter,
        L_cap=cfg.L_cap, clip_ceiling=ceiling, value_source=cfg.value_source,
        quad_coef=1.0 if cfg.quad_coef is None else cfg.quad_coef,
    )


def sgd_adaptive(oracle: StochasticOracle, problem, config: ConvexConfig, x0,
                 stream: RandomStream) -> RunReport:
    """Adaptive SGD; output is the 1/L-weighted average of x^1..x^N."""
    cfg = config
    x = np.array(x0, dtype=float)
    counter = OracleCounter()
    rec = Recorder(oracle, problem, counter, cfg, x)
    rec.add(0, x, cfg.L0, 0)
    L = cfg.L0
    num = np.zeros_like(x)
    den = 0.0
    termination, message, violations = "budget_exhausted", "", 0
    k = 0
    quad = 1.0 if cfg.quad_coef is None else cfg.quad_coef
    for k in range(1, cfg.max_iterations + 1):
        try:
            res = line_search_round(x, L, cfg, oracle, stream, counter)
        except LineSearchFailed as exc:
            termination, message, k = "linesearch_failed", str(exc), k - 1
            break
        rec.certify(gradient_certificate(k, res, x, quad, cfg.value_source))
        x, L = res.x, res.L
        violations += res.contract_violation
        num += x / L
        den += 1.0 / L
        avg = num / den
        rec.add(k, x, L, res.r, res.trials, res.f_new, np.linalg.norm(res.g), avg,
                res.contract_violation)
        stop = _stop(cfg, counter, problem, _output_value(rec, oracle, avg)) if (
            cfg.stop_on_accuracy or cfg.max_oracle_calls) else None
        if stop:
            termination = stop
            break
    output = num / den if den > 0 else x
    return _finish("sgd_adaptive", rec, counter, output, "weighted_average", termination, k,
                   message, violations, cfg)


def accel_coefficients(A_k: float, L: float) -> tuple[float, float]:
    """Positive root alpha of L alpha^2 = A_k + alpha, and A_k + alpha."""
    if A_k < 0 or not L > 0:
        raise ConfigError("need A_k >= 0 and L > 0")
    alpha = (1.0 + math.sqrt(1.0 + 4.0 * A_k * L)) / (2.0 * L)
    return alpha, A_k + alpha


def agd_adaptive(oracle: StochasticOracle, problem, config: ConvexConfig, x0,
                 stream: RandomStream) -> RunReport:
    """Adaptive stochastic accelerated gradient method; returns the last iterate.

    The acceptance test uses ``quad_coef * L ||x - y||^2`` with default
    ``quad_coef = 0.5``, the form that the accelerated estimate sequence
    requires; ``quad_coef = 1`` is known to diverge on quadratics.
    """
    cfg = config
    quad = 0.5 if cfg.quad_coef is None else cfg.quad_coef
    x = np.array(x0, dtype=float)
    u = x.copy()
    A = 0.0
    L = cfg.L0
    counter = OracleCounter()
    rec = Recorder(oracle, problem, counter, cfg, x)
    rec.add(0, x, L, 0)
    warm, grow, ceiling = _convex_round_rules(cfg, L)
    accel = []
    termination, message, violations = "budget_exhausted", "", 0
    k = 0
    for k in range(1, cfg.max_iterations + 1):
        Lt = warm(L)
        batch = None
        trials = 0
        violated = False
        failed = False
        while True:
            L_next = grow(Lt)
            if ceiling is None and L_next > cfg.L_cap:
                failed = True
                break
            Lt = L_next
            trials += 1
            alpha, A_next = accel_coefficients(A, Lt)
            if not A_next > A:
                raise InvariantError(f"A did not increase at k={k}: {A} -> {A_next}")
            if cfg.mode == "practical":
                r = ceil_batch(alpha * cfg.D0 / cfg.epsilon)
            else:
                r = ceil_batch(cfg.theta * alpha * cfg.sigma2 * cfg.L_hi ** 2 * cfg.confidence_factor
                               / (cfg.epsilon * cfg.L_lo ** 2))
            if batch is None or r > batch.size:
                batch = oracle.draw(r, stream, counter)
            y = (alpha * u + A * x) / A_next
            g = oracle.batch_gradient(y, batch, counter)
            u_new = u - alpha * g
            x_new = (alpha * u_new + A * x) / A_next
            f_y, f_x = evaluate_values(oracle, (y, x_new), batch, counter, cfg.value_source)
            slack = alpha / (2.0 * A_next) * cfg.epsilon
            ok, _, _ = upper_bound_holds(f_x, f_y, g, x_new - y, Lt, quad, slack)
            if ok:
                break
            if ceiling is not None and Lt >= ceiling:
                violated = True
                break
        if failed:
            termination = "linesearch_failed"
            message = f"no acceptable L up to cap {cfg.L_cap:g}"
            k -= 1
            break
        rec.certify(Certificate(k=k, kind="accelerated", base=y, point=x_new, L=Lt, slack=slack,
                                r=batch.size, state=batch.state, quad_coef=quad,
                                value_source=cfg.value_source, u_prev=u, x_prev=x, A_prev=A,
                                alpha=alpha))
        accel.append({"k": k, "alpha": alpha, "A": A_next, "A_prev": A, "L": Lt})
        x, u, A, L = x_new, u_new, A_next, Lt
        violations += violated
        rec.add(k, x, L, batch.size, trials, f_x, np.linalg.norm(g), x, violated)
        stop = _stop(cfg, counter, problem, _output_value(rec, oracle, x)) if (
            cfg.stop_on_accuracy or cfg.max_oracle_calls) else None
        if stop:
            termination = stop
            break
    return _finish("agd_adaptive", rec, counter, x, "last_iterate", termination, k, message,
                   violations, cfg, accel)
