"""SGD for smooth, possibly non-convex objectives, targeting ||grad f|| <= eps."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

from .convex import _finish
from .errors import ConfigError, LineSearchFailed
from .linesearch import SolverOptions, armijo_round, ceil_batch, gradient_certificate
from .oracle import OracleCounter, RandomStream, StochasticOracle
from .trace import Recorder, RunReport

GRAD_CHECKS = ("exact_when_available", "batch_estimate")
NONCONVEX_MODES = ("practical", "clipped")


def batch_size_nonconvex(D: float, eps: float, variant: str) -> int:
    """ceil(max(12 D / eps^2, 1)) for ``fixed_12``, ceil(max(8 D / eps^2, 1)) for ``adaptive_8``."""
    if not eps > 0:
        raise ConfigError("eps must be positive")
    if D < 0:
        raise ConfigError("D must be >= 0")
    factor = {"fixed_12": 12.0, "adaptive_8": 8.0}.get(variant)
    if factor is None:
        raise ConfigError(f"unknown batch variant {variant!r}")
    return ceil_batch(factor * D / eps ** 2)


@dataclass
class NonconvexConfig(SolverOptions):
    epsilon: float = 0.1
    D0: float = 0.0
    L: float | None = None          # fixed-step solver
    L0: float = 1.0                 # adaptive solver
    mode: str = "practical"
    L_lo: float | None = None
    L_hi: float | None = None
    L_cap: float | None = None
    grad_check: str = "exact_when_available"

    def __post_init__(self):
        self._check_options()
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.D0 < 0:
            raise ConfigError("D0 must be >= 0")
        if self.L is not None and not self.L > 0:
            raise ConfigError("L must be positive")
        if not self.L0 > 0:
            raise ConfigError("L0 must be positive")
        if self.mode not in NONCONVEX_MODES:
            raise ConfigError(f"mode must be one of {NONCONVEX_MODES}")
        if self.mode == "clipped":
            if self.L_lo is None or self.L_hi is None or not 0 < self.L_lo <= self.L_hi:
                raise ConfigError("clipped mode needs 0 < L_lo <= L_hi")
        if self.grad_check not in GRAD_CHECKS:
            raise ConfigError(f"grad_check must be one of {GRAD_CHECKS}")
        if self.L_cap is None:
            self.L_cap = 2.0 ** 30 * self.L0


class StationarityTracker:
    """Keeps the point with the smallest recorded gradient norm."""

    def __init__(self, rule: str):
        self.rule = rule
        self.best_point = None
        self.best_grad_norm = math.inf
        self.history: list[float] = []

    def update(self, point, grad_norm: float):
        self.history.append(float(grad_norm))
        if grad_norm < self.best_grad_norm:
            self.best_grad_norm = float(grad_norm)
            self.best_point = np.array(point, dtype=float)


def _resolve_rule(cfg, oracle):
    if cfg.grad_check == "exact_when_available" and oracle.has_exact:
        return "exact"
    return "batch"


def _run(name, oracle, problem, cfg, x0, stream, make_step):
    """Outer loop shared by both solvers.

    ``make_step(counter)`` returns ``step(x, L) -> RoundResult`` bound to the run's counter.
    """
    rule = _resolve_rule(cfg, oracle)
    x = np.array(x0, dtype=float)
    counter = OracleCounter()
    rec = Recorder(oracle, problem, counter, cfg, x, record_exact=True if rule == "exact" else None)
    tracker = StationarityTracker(rule)
    step_round = make_step(counter)
    L = cfg.L if cfg.L is not None and name == "sgd_nonconvex_fixed" else cfg.L0
    row = rec.add(0, x, L, 0)
    if rule == "exact":
        tracker.update(x, row.grad_norm)
    termination, message, violations = "budget_exhausted", "", 0
    k = 0
    last_r = 1
    for k in range(1, cfg.max_iterations + 1):
        prev = x
        try:
            res = step_round(x, L)
        except LineSearchFailed as exc:
            termination, message, k = "linesearch_failed", str(exc), k - 1
            break
        if res.slack is not None and not math.isnan(res.slack):
            rec.certify(gradient_certificate(k, res, prev, 1.0, cfg.value_source))
        x, L, last_r = res.x, res.L, res.r
        violations += res.contract_violation
        gnorm_batch = float(np.linalg.norm(res.g))
        if rule == "batch":
            tracker.update(prev, gnorm_batch)
        row = rec.add(k, x, L, res.r, res.trials, res.f_new, gnorm_batch,
                      None, res.contract_violation)
        if rule == "exact":
            tracker.update(x, row.grad_norm)
        if cfg.stop_on_accuracy and rule == "exact" and tracker.best_grad_norm <= cfg.epsilon:
            termination = "accuracy_reached"
            break
        if cfg.max_oracle_calls is not None and counter.gradient_calls >= cfg.max_oracle_calls:
            break
    if rule == "batch" and termination != "linesearch_failed":
        # the last iterate has no batch gradient yet
        batch = oracle.draw(last_r, stream, counter)
        tracker.update(x, float(np.linalg.norm(oracle.batch_gradient(x, batch, counter))))
    report = _finish(name, rec, counter, tracker.best_point, "min_grad_norm", termination, k,
                     message, violations, cfg)
    report.best_grad_norm = tracker.best_grad_norm
    report.grad_norm_history = tracker.history
    return report


class _FixedRound:
    """Plain step x - g/(2L) dressed as a RoundResult (no acceptance test)."""

    def __init__(self, x, L, r, g, batch):
        self.x, self.L, self.r, self.g, self.batch = x, L, r, g, batch
        self.trials = 1
        self.f_new = math.nan
        self.slack = math.nan
        self.contract_violation = False


def sgd_nonconvex_fixed(oracle: StochasticOracle, problem, config: NonconvexConfig, x0,
                        stream: RandomStream) -> RunReport:
    """Fixed step 1/(2L), batch max(12 D / eps^2, 1); returns the min-gradient-norm iterate."""
    cfg = config
    if cfg.L is None:
        raise ConfigError("sgd_nonconvex_fixed needs a known L")
    r = batch_size_nonconvex(cfg.D0, cfg.epsilon, "fixed_12")

    def make_step(counter):
        def step(x, L):
            batch = oracle.draw(r, stream, counter)
            g = oracle.batch_gradient(x, batch, counter)
            return _FixedRound(x - g / (2.0 * cfg.L), cfg.L, r, g, batch)
        return step

    return _run("sgd_nonconvex_fixed", oracle, problem, cfg, x0, stream, make_step)


def sgd_nonconvex_adaptive(oracle: StochasticOracle, problem, config: NonconvexConfig, x0,
                           stream: RandomStream) -> RunReport:
    """Adaptive non-convex SGD with slack eps^2 / (32 L) and a batch fixed for the whole run."""
    cfg = config
    r = batch_size_nonconvex(cfg.D0, cfg.epsilon, "adaptive_8")
    if cfg.mode == "practical":
        warm, grow, ceiling = (lambda L: max(L / 4.0, sys.float_info.min)), (lambda L: 2.0 * L), None
    else:
        warm = lambda L: max(L / 4.0, cfg.L_lo)
        grow = lambda L: min(2.0 * L, 2.0 * cfg.L_hi)
        ceiling = 2.0 * cfg.L_hi
    eps2 = cfg.epsilon ** 2

    def make_step(counter):
        def step(x, L):
            return armijo_round(
                oracle, x, L, warm_start=warm, grow=grow, batch_size=lambda _L: r,
                slack=lambda Lt: eps2 / (32.0 * Lt), stream=stream, counter=counter,
                L_cap=cfg.L_cap, clip_ceiling=ceiling, value_source=cfg.value_source,
            )
        return step

    return _run("sgd_nonconvex_adaptive", oracle, problem, cfg, x0, stream, make_step)
