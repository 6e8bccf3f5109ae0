"""Doubling line search on the quadratic upper bound, shared by the adaptive solvers.

One round starts from a warm-started constant below the previous accepted one
and doubles it until the candidate step passes

    f(x+) <= f(x) + <g, x+ - x> + c * L * ||x+ - x||^2 + slack(L)

where f is evaluated on the same realizations as g. The realizations are drawn
once per round, at the first (largest) required batch size, and reused for all
later trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, fields
from typing import Callable

import numpy as np

from .errors import ConfigError, LineSearchFailed, OracleFault
from .oracle import OracleCounter, RandomStream, SampleBatch, StochasticOracle
from .trace import Certificate

VALUE_SOURCES = ("stochastic", "exact")


@dataclass
class SolverOptions:
    """Run controls common to every solver."""

    max_iterations: int = 1000
    max_oracle_calls: int | None = None
    stop_on_accuracy: bool = False
    value_source: str = "stochastic"
    record_exact: bool = True
    record_timing: bool = False
    keep_iterates: bool = False
    keep_certificates: bool = False

    def _check_options(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.max_oracle_calls is not None and self.max_oracle_calls < 1:
            raise ConfigError("max_oracle_calls must be >= 1")
        if self.value_source not in VALUE_SOURCES:
            raise ConfigError(f"value_source must be one of {VALUE_SOURCES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{cls.__name__}: unknown fields {sorted(unknown)}")
        return cls(**data)


def ceil_batch(value: float) -> int:
    """Batch size from a real-valued rule: ceil(max(value, 1))."""
    if not math.isfinite(value):
        raise ConfigError(f"batch-size rule produced {value}")
    return max(int(math.ceil(value)), 1)


def evaluate_values(oracle, points, batch, counter, value_source):
    """Values at several points on one batch (or exactly, for ``value_source='exact'``).

    A non-finite value returns ``inf`` so that the candidate is rejected
    instead of aborting the run.
    """
    out = []
    for p in points:
        if not np.all(np.isfinite(p)):
            out.append(math.inf)
            continue
        try:
            if value_source == "exact":
                counter.verification_calls += 1
                v = float(oracle.exact_value(p))
            else:
                with np.errstate(over="ignore", invalid="ignore"):
                    v = oracle.batch_value(p, batch, counter)
        except (OracleFault, FloatingPointError):
            v = math.inf
        out.append(v if math.isfinite(v) else math.inf)
    return out


def upper_bound_holds(f_new, f_base, g, step, L, quad_coef, slack):
    with np.errstate(over="ignore", invalid="ignore"):
        rhs = f_base + float(g @ step) + quad_coef * L * float(step @ step) + slack
    return bool(f_new <= rhs), f_new, rhs


@dataclass
class RoundResult:
    x: np.ndarray
    L: float
    r: int
    trials: int
    g: np.ndarray
    batch: SampleBatch
    f_base: float
    f_new: float
    slack: float
    contract_violation: bool = False


def armijo_round(
    oracle: StochasticOracle,
    x: np.ndarray,
    L_prev: float,
    *,
    warm_start: Callable[[float], float],
    grow: Callable[[float], float],
    batch_size: Callable[[float], int],
    slack: Callable[[float], float],
    stream: RandomStream,
    counter: OracleCounter,
    L_cap: float,
    clip_ceiling: float | None = None,
    value_source: str = "stochastic",
    quad_coef: float = 1.0,
) -> RoundResult:
    """One round for the plain gradient step x+ = x - g / (2L).

    With ``clip_ceiling`` set, trials never exceed it; if the trial at the
    ceiling is rejected the step is accepted anyway and flagged as a contract
    violation (the assumed bound on L does not hold). Without it, exceeding
    ``L_cap`` raises ``LineSearchFailed``.
    """
    L = warm_start(L_prev)
    batch = g = None
    f_base = math.nan
    trials = 0
    while True:
        L_next = grow(L)
        if clip_ceiling is None and L_next > L_cap:
            raise LineSearchFailed(
                f"no acceptable L up to cap {L_cap:g} (D0 underestimated or objective not smooth?)",
                last_L=L, trials=trials)
        L = L_next
        trials += 1
        r = batch_size(L)
        if batch is None or r > batch.size:
            batch = oracle.draw(r, stream, counter)
            g = oracle.batch_gradient(x, batch, counter)
            f_base = None
        with np.errstate(over="ignore", invalid="ignore"):
            x_new = x - g / (2.0 * L)
        if f_base is None:
            f_base, f_new = evaluate_values(oracle, (x, x_new), batch, counter, value_source)
        else:
            (f_new,) = evaluate_values(oracle, (x_new,), batch, counter, value_source)
        s = slack(L)
        ok, _, _ = upper_bound_holds(f_new, f_base, g, x_new - x, L, quad_coef, s)
        if ok:
            return RoundResult(x_new, L, batch.size, trials, g, batch, f_base, f_new, s)
        if clip_ceiling is not None and L >= clip_ceiling:
            return RoundResult(x_new, L, batch.size, trials, g, batch, f_base, f_new, s,
                               contract_violation=True)
        if trials > 2000:
            raise LineSearchFailed("line search did not terminate", last_L=L, trials=trials)


def gradient_certificate(k, res: RoundResult, base, quad_coef, value_source) -> Certificate:
    return Certificate(k=k, kind="gradient", base=np.array(base), point=np.array(res.x), L=res.L,
                       slack=res.slack, r=res.r, state=res.batch.state, quad_coef=quad_coef,
                       value_source=value_source)


def verify_certificate(oracle: StochasticOracle, cert: Certificate, rtol: float = 0.0) -> bool:
    """Regenerate the batch from its stream snapshot and re-run the acceptance test.

    Also checks that the stored candidate is exactly what the update rule
    produces from the regenerated gradient.
    """
    batch = oracle.redraw(cert.r, cert.state)
    counter = OracleCounter()
    g = oracle.batch_gradient(cert.base, batch, counter)
    if cert.kind == "gradient":
        expected = cert.base - g / (2.0 * cert.L)
    elif cert.kind == "accelerated":
        u_new = cert.u_prev - cert.alpha * g
        A_next = cert.A_prev + cert.alpha
        expected = (cert.alpha * u_new + cert.A_prev * cert.x_prev) / A_next
    else:
        raise ValueError(f"unknown certificate kind {cert.kind!r}")
    if not np.array_equal(expected, cert.point):
        return False
    f_base, f_new = evaluate_values(oracle, (cert.base, cert.point), batch, counter, cert.value_source)
    ok, lhs, rhs = upper_bound_holds(f_new, f_base, g, cert.point - cert.base, cert.L,
                                     cert.quad_coef, cert.slack)
    return ok or lhs <= rhs + rtol * abs(rhs)
