"""Per-iteration records, run reports and the versioned CSV trace format."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

import numpy as np

from .errors import DivergenceError, OracleUnavailable

SCHEMA_VERSION = 1

OUTPUT_RULES = ("uniform_average", "weighted_average", "last_iterate", "min_grad_norm")
TERMINATIONS = ("budget_exhausted", "accuracy_reached", "linesearch_failed")

NAN = float("nan")


@dataclass
class TraceRow:
    k: int
    cumulative_T: int
    L_k: float
    r_k: int
    objective_estimate: float = NAN
    objective_exact: float = NAN
    grad_norm: float = NAN
    inner_trials: int = 0
    wall_clock_ns: int = 0
    output_objective: float = NAN
    grad_norm_batch: float = NAN
    test_accuracy: float = NAN
    contract_violation: int = 0


COLUMNS = tuple(f.name for f in fields(TraceRow))
_INT_COLUMNS = {"k", "cumulative_T", "r_k", "inner_trials", "wall_clock_ns", "contract_violation"}


@dataclass
class Certificate:
    """Everything needed to re-check one accepted line-search step.

    The batch is not stored; it is regenerated from the stream snapshot
    ``state``. ``kind`` is ``"gradient"`` (candidate = base - g/(2L)) or
    ``"accelerated"`` (candidate rebuilt from u, x, A, alpha).
    """

    k: int
    kind: str
    base: np.ndarray
    point: np.ndarray
    L: float
    slack: float
    r: int
    state: dict
    quad_coef: float = 1.0
    value_source: str = "stochastic"
    u_prev: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    A_prev: float | None = None
    alpha: float | None = None


@dataclass
class RunReport:
    solver: str
    output_point: np.ndarray
    output_rule: str
    trace: list[TraceRow]
    total_oracle_calls: int
    termination: str
    iterations: int = 0
    message: str = ""
    contract_violations: int = 0
    verification_calls: int = 0
    value_calls: int = 0
    iterates: list[np.ndarray] | None = None
    certificates: list[Certificate] | None = None
    accel_history: list[dict] | None = None
    best_grad_norm: float | None = None
    grad_norm_history: list[float] | None = None
    config: dict = field(default_factory=dict)

    @property
    def accepted_L(self) -> np.ndarray:
        return np.array([row.L_k for row in self.trace[1:]])

    @property
    def mean_trials(self) -> float:
        rows = self.trace[1:]
        return float(np.mean([r.inner_trials for r in rows])) if rows else 0.0


class Recorder:
    """Builds the trace of a run and evaluates test-only diagnostics.

    Exact evaluations go to ``counter.verification_calls``; they never touch
    the oracle budget T.
    """

    def __init__(self, oracle, problem, counter, settings, x0, record_exact=None):
        self.oracle = oracle
        self.problem = problem
        self.counter = counter
        want = settings.record_exact if record_exact is None else record_exact
        self.record_exact = want and oracle.has_exact
        self.record_timing = settings.record_timing
        self.keep_iterates = settings.keep_iterates
        self.keep_certificates = settings.keep_certificates
        self.trace: list[TraceRow] = []
        self.iterates = [np.array(x0, dtype=float)] if self.keep_iterates else None
        self.certificates = [] if self.keep_certificates else None
        self.t0 = time.perf_counter_ns()

    def exact(self, x):
        if not self.oracle.has_exact:
            raise OracleUnavailable("oracle has no exact values")
        self.counter.verification_calls += 1
        return float(self.oracle.exact_value(x)), float(np.linalg.norm(self.oracle.exact_gradient(x)))

    def add(self, k, x, L, r, trials=0, objective_estimate=NAN, grad_norm_batch=NAN,
            output_point=None, contract_violation=False):
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite iterate at k={k}", trace=self.trace)
        row = TraceRow(k=k, cumulative_T=self.counter.gradient_calls, L_k=float(L), r_k=int(r),
                       objective_estimate=float(objective_estimate), inner_trials=int(trials),
                       grad_norm_batch=float(grad_norm_batch),
                       contract_violation=int(bool(contract_violation)))
        if self.record_exact:
            row.objective_exact, row.grad_norm = self.exact(x)
            if output_point is None or output_point is x:
                row.output_objective = row.objective_exact
            else:
                self.counter.verification_calls += 1
                row.output_objective = float(self.oracle.exact_value(output_point))
        if self.problem is not None and self.problem.test_accuracy is not None:
            row.test_accuracy = self.problem.test_accuracy(x if output_point is None else output_point)
        if self.record_timing:
            row.wall_clock_ns = time.perf_counter_ns() - self.t0
        self.trace.append(row)
        if self.keep_iterates and k > 0:
            self.iterates.append(np.array(x, dtype=float))
        return row

    def certify(self, cert: Certificate):
        if self.keep_certificates:
            self.certificates.append(cert)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def trace_to_csv_text(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"schema={SCHEMA_VERSION}"])
    w.writerow(COLUMNS)
    for row in trace:
        w.writerow([_fmt(getattr(row, c)) for c in COLUMNS])
    return buf.getvalue()


def write_trace_csv(path, trace):
    Path(path).write_text(trace_to_csv_text(trace), encoding="utf-8")


def read_trace_csv(path) -> list[TraceRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != [f"schema={SCHEMA_VERSION}"]:
        raise ValueError(f"{path}: missing or unsupported schema header")
    header = rows[1]
    if tuple(header) != COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    out = []
    for r in rows[2:]:
        kw = {c: (int(v) if c in _INT_COLUMNS else float(v)) for c, v in zip(header, r)}
        out.append(TraceRow(**kw))
    return out


def rows_equal(a: TraceRow, b: TraceRow, ignore=("wall_clock_ns",)) -> bool:
    for c in COLUMNS:
        if c in ignore:
            continue
        x, y = getattr(a, c), getattr(b, c)
        if isinstance(x, float) and math.isnan(x) and isinstance(y, float) and math.isnan(y):
            continue
        if x != y:
            return False
    return True


def row_dict(row: TraceRow) -> dict:
    return asdict(row)
