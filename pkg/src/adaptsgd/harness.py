"""Experiment orchestration: config parsing, seeded runs, traces, summaries, plots.

Output layout of ``run_experiment``::

    <out>/traces/<run_id>.csv    per-run trace (schema=1)
    <out>/traces/<run_id>.json   run metadata, enough to replay the run
    <out>/summary.json           final metrics per run + aggregated curves
    <out>/plots/*.svg
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, run_adagrad, run_adam
from .convex import ConvexConfig, FixedStepConfig, agd_adaptive, sgd_adaptive, sgd_fixed
from .errors import AdaptSGDError, ConfigError
from .nonconvex import NonconvexConfig, sgd_nonconvex_adaptive, sgd_nonconvex_fixed
from .oracle import AdditiveGaussianOracle, FiniteSumOracle, RandomStream
from .problems import (
    logistic_problem, make_logistic_data, nonconvex_problem, quadratic_problem, read_dataset_csv,
)
from .trace import read_trace_csv, write_trace_csv

log = logging.getLogger(__name__)

SOLVERS = {
    "sgd_fixed": (sgd_fixed, FixedStepConfig),
    "sgd_adaptive": (sgd_adaptive, ConvexConfig),
    "agd_adaptive": (agd_adaptive, ConvexConfig),
    "sgd_nonconvex_fixed": (sgd_nonconvex_fixed, NonconvexConfig),
    "sgd_nonconvex_adaptive": (sgd_nonconvex_adaptive, NonconvexConfig),
    "adam": (run_adam, BaselineConfig),
    "adagrad": (run_adagrad, BaselineConfig),
}

# hyperparameters reported for the logistic-regression comparison
REPORTED_DEFAULTS = {
    "sgd_adaptive": {"D0": 0.01, "epsilon": 1e-5, "L0": 100.0},
    "agd_adaptive": {"D0": 0.01, "epsilon": 1e-5, "L0": 100.0},
    "sgd_nonconvex_adaptive": {"D0": 0.1, "L0": 1.0, "epsilon": 0.002},
    "adam": {"learning_rate": 0.001, "batch_size": 128, "beta1": 0.9, "beta2": 0.999},
    "adagrad": {"learning_rate": 0.001, "batch_size": 128},
}

REPORTED_GRIDS = {
    "adaptive": {"D0": [0.1, 0.01, 0.001, 0.0001], "epsilon": [0.01, 0.001, 0.0001, 0.00001],
                 "L0": [1000.0, 10000.0], "L_floor": [101.0, 11.0, 2.0]},
    "baseline": {"learning_rate": [0.00001, 0.0001, 0.001, 0.01, 0.1],
                 "batch_size": [32, 64, 128, 256, 512, 1024]},
}

DEFAULT_DRAW_QUANTUM = 1000


@dataclass
class SolverEntry:
    name: str
    label: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    problem: dict
    solvers: list[SolverEntry]
    seeds: list[int]
    x0: object = None
    budget: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    epoch_size: int | None = None
    metric: str = "output_objective"
    output_dir: str | None = None

    def __post_init__(self):
        if not self.solvers:
            raise ConfigError("experiment needs at least one solver")
        if not self.seeds:
            raise ConfigError("experiment needs at least one seed")
        labels = [s.label for s in self.solvers]
        if len(set(labels)) != len(labels):
            raise ConfigError("solver labels must be unique")
        for s in self.solvers:
            if s.name not in SOLVERS:
                raise ConfigError(f"unknown solver {s.name!r}; choose from {sorted(SOLVERS)}")
        for label in self.grid:
            if label not in labels:
                raise ConfigError(f"grid refers to unknown solver label {label!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            solvers = [SolverEntry(name=s["name"], label=s.get("label", s["name"]),
                                   params=dict(s.get("params", {}))) for s in data["solvers"]]
            return cls(problem=dict(data["problem"]), solvers=solvers,
                       seeds=[int(v) for v in data.get("seeds", [0])], x0=data.get("x0"),
                       budget=dict(data.get("budget", {})), grid=dict(data.get("grid", {})),
                       epoch_size=data.get("epoch_size"),
                       metric=data.get("metric", "output_objective"),
                       output_dir=data.get("output_dir"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed experiment config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "solvers": [{"name": s.name, "label": s.label, "params": s.params} for s in self.solvers],
            "seeds": self.seeds, "x0": self.x0, "budget": self.budget, "grid": self.grid,
            "epoch_size": self.epoch_size, "metric": self.metric,
        }


# --- problem / start construction -------------------------------------------------

def build_problem(spec: dict):
    """Problem from its config block. Returns (problem, oracle_factory(x0))."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "quadratic":
        problem = quadratic_problem(spec["diag"], spec.get("x_star"))
        noise = float(spec.get("noise_D", 0.0))
        oracle = AdditiveGaussianOracle(problem, noise)
        return problem, lambda x0: oracle
    if kind in ("sigmoid_sum", "rosenbrock_smoothed"):
        kw = {k: spec[k] for k in ("n", "b", "radius") if k in spec}
        problem = nonconvex_problem(kind, **kw)
        oracle = AdditiveGaussianOracle(problem, float(spec.get("noise_D", 0.0)))
        return problem, lambda x0: oracle
    if kind == "logistic":
        if "data_csv" in spec:
            A, y = read_dataset_csv(spec["data_csv"])
            At = yt = None
            if "test_csv" in spec:
                At, yt = read_dataset_csv(spec["test_csv"])
        else:
            A, y, At, yt = make_logistic_data(int(spec.get("m", 500)), int(spec.get("n", 20)),
                                              seed=int(spec.get("data_seed", 0)),
                                              flip=float(spec.get("flip", 0.05)),
                                              m_test=int(spec.get("m_test", 0)))
            if At.size == 0:
                At = yt = None
        problem = logistic_problem(A, y, float(spec.get("l2", 0.0)), At, yt)
        return problem, lambda x0: FiniteSumOracle(problem, x_ref=x0)
    raise ConfigError(f"unknown problem kind {kind!r}")


def starting_point(x0_spec, problem, seed: int) -> np.ndarray:
    """Start for a given seed; the same for every solver so comparisons are paired."""
    rng = RandomStream(seed, 0).generator
    center = problem.known_optimum if problem.known_optimum is not None else np.zeros(problem.dim)
    if x0_spec is None:
        x0_spec = {"kind": "uniform", "scale": 1.0}
    if isinstance(x0_spec, list):
        x0 = np.asarray(x0_spec, dtype=float)
        if x0.shape != (problem.dim,):
            raise ConfigError("x0 has wrong dimension")
        return x0
    kind = x0_spec.get("kind")
    if kind == "uniform":
        s = float(x0_spec.get("scale", 1.0))
        return center + rng.uniform(-s, s, size=problem.dim)
    if kind == "sphere":
        d = rng.normal(size=problem.dim)
        return center + float(x0_spec.get("radius", 1.0)) * d / np.linalg.norm(d)
    raise ConfigError(f"unknown x0 kind {kind!r}")


def expand_grid(grid: dict) -> list[dict]:
    if not grid:
        return [{}]
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


@dataclass
class RunSpec:
    run_id: str
    solver: str
    label: str
    params: dict
    hparams: dict
    hparam_index: int
    seed: int
    stream_id: int
    problem: dict
    x0: object


def plan_runs(cfg: ExperimentConfig) -> list[RunSpec]:
    runs = []
    for entry in cfg.solvers:
        for hi, hp in enumerate(expand_grid(cfg.grid.get(entry.label, {}))):
            params = {**cfg.budget, **entry.params, **hp}
            for seed in cfg.seeds:
                run_id = f"{entry.label}__h{hi:03d}__s{seed}"
                stream_id = zlib.crc32(f"{entry.label}/{hi}".encode()) + 1
                runs.append(RunSpec(run_id, entry.name, entry.label, params, hp, hi, seed,
                                    stream_id, cfg.problem, cfg.x0))
    return runs


def make_solver_config(solver: str, params: dict, problem, oracle):
    """Config object for a solver, filling problem-derived defaults (L, D)."""
    _, cls = SOLVERS[solver]
    params = dict(params)
    if solver == "sgd_fixed":
        params.setdefault("L", problem.known_L)
        params.setdefault("D", oracle.declared_variance)
    if solver == "sgd_nonconvex_fixed":
        params.setdefault("L", problem.known_L)
        params.setdefault("D0", oracle.declared_variance)
    try:
        return cls.from_dict(params)
    except TypeError as exc:
        raise ConfigError(f"{solver}: {exc}") from exc


def execute(spec: RunSpec, keep_certificates: bool = False):
    """Run one (solver, hyperparameters, seed) triple. Returns (report, problem, oracle, x0)."""
    problem, oracle_for = build_problem(spec.problem)
    x0 = starting_point(spec.x0, problem, spec.seed)
    oracle = oracle_for(x0)
    params = dict(spec.params)
    if keep_certificates:
        params["keep_certificates"] = True
    cfg = make_solver_config(spec.solver, params, problem, oracle)
    fn, _ = SOLVERS[spec.solver]
    report = fn(oracle, problem, cfg, x0, RandomStream(spec.seed, spec.stream_id))
    return report, problem, oracle, x0


def _run_and_persist(spec: RunSpec, trace_dir: str) -> dict:
    trace_dir = Path(trace_dir)
    meta = {"run_id": spec.run_id, "solver": spec.solver, "label": spec.label,
            "params": spec.params, "hparams": spec.hparams, "hparam_index": spec.hparam_index,
            "seed": spec.seed, "stream_id": spec.stream_id, "problem": spec.problem, "x0": spec.x0}
    trace = []
    try:
        report, problem, oracle, x0 = execute(spec)
    except ConfigError:
        raise
    except AdaptSGDError as exc:
        trace = getattr(exc, "trace", [])
        meta.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    else:
        trace = report.trace
        status = "failed" if report.termination == "linesearch_failed" else "ok"
        last = trace[-1]
        meta.update(
            status=status, error=report.message or None, termination=report.termination,
            iterations=report.iterations, total_oracle_calls=report.total_oracle_calls,
            final_objective=last.output_objective, final_grad_norm=last.grad_norm,
            final_test_accuracy=last.test_accuracy, mean_trials=report.mean_trials,
            contract_violations=report.contract_violations,
            declared_variance=oracle.declared_variance,
        )
        if report.best_grad_norm is not None:
            meta["best_grad_norm"] = report.best_grad_norm
    write_trace_csv(trace_dir / f"{spec.run_id}.csv", trace)
    (trace_dir / f"{spec.run_id}.json").write_text(_dumps(meta), encoding="utf-8")
    return meta


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


# --- aggregation ------------------------------------------------------------------

@dataclass
class GridCurve:
    family: str
    hparams_key: str
    start: int
    values: np.ndarray


PROTOCOLS = ("mean_over_starts_then_median_over_hparams",)


def resample_by_oracle_calls(trace, epoch_size: int, n_epochs: int,
                             metric: str = "output_objective") -> np.ndarray:
    """Metric at epochs 0..n_epochs: value of the last row with T <= e * epoch_size.

    Runs that stopped early carry their final value forward.
    """
    T = np.array([row.cumulative_T for row in trace])
    vals = np.array([getattr(row, metric) for row in trace], dtype=float)
    marks = np.arange(n_epochs + 1) * epoch_size
    idx = np.searchsorted(T, marks, side="right") - 1
    return vals[np.clip(idx, 0, len(vals) - 1)]


def aggregate_grid(reports: list[GridCurve],
                   protocol: str = "mean_over_starts_then_median_over_hparams") -> dict:
    """Average over starting points per hyperparameter set, then take the per-epoch median."""
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    if not reports:
        raise ConfigError("no reports to aggregate")
    lengths = {len(r.values) for r in reports}
    if len(lengths) != 1:
        raise ConfigError("curves must share one epoch axis")
    grouped: dict[str, dict[str, list[np.ndarray]]] = {}
    for r in reports:
        grouped.setdefault(r.family, {}).setdefault(r.hparams_key, []).append(
            np.asarray(r.values, dtype=float))
    out = {}
    for family in sorted(grouped):
        per_h = [np.mean(np.vstack(c), axis=0) for _, c in sorted(grouped[family].items())]
        out[family] = np.median(np.vstack(per_h), axis=0)
    return out


def _epoch_size(cfg_epoch, problem_spec):
    if cfg_epoch:
        return int(cfg_epoch)
    if problem_spec.get("kind") == "logistic":
        return int(problem_spec.get("m", 500)) if "data_csv" not in problem_spec else DEFAULT_DRAW_QUANTUM
    return DEFAULT_DRAW_QUANTUM


def aggregate_runs(metas: list[dict], traces: dict, epoch_size: int, metric: str) -> dict:
    ok = [m for m in metas if m.get("status") == "ok" and traces.get(m["run_id"])]
    if not ok:
        return {"epoch_size": epoch_size, "epochs": [], "curves": {}}
    max_T = max(traces[m["run_id"]][-1].cumulative_T for m in ok)
    n_epochs = max(int(math.ceil(max_T / epoch_size)), 1)
    curves = [GridCurve(m["label"], json.dumps(m["hparams"], sort_keys=True), m["seed"],
                        resample_by_oracle_calls(traces[m["run_id"]], epoch_size, n_epochs, metric))
              for m in ok]
    agg = aggregate_grid(curves)
    return {"epoch_size": epoch_size, "metric": metric, "epochs": list(range(n_epochs + 1)),
            "curves": {k: v.tolist() for k, v in agg.items()}}


# --- plots --------------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "adaptsgd"
    return plt


def _save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_traces(traces: dict, metas: list[dict], out_dir, metric="output_objective"):
    """Objective against iteration and against oracle calls, one line per run."""
    plt = _pyplot()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for xcol, name in (("k", "objective_vs_iteration"), ("cumulative_T", "objective_vs_oracle_calls")):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for m in metas:
            rows = traces.get(m["run_id"]) or []
            pts = [(getattr(r, xcol), getattr(r, metric)) for r in rows
                   if math.isfinite(getattr(r, metric))]
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, lw=1, label=m["run_id"])
        ax.set_xlabel("iteration" if xcol == "k" else "oracle calls")
        ax.set_ylabel(metric)
        ax.set_yscale("symlog", linthresh=1e-8)
        if len(metas) <= 12:
            ax.legend(fontsize=6)
        fig.tight_layout()
        path = out_dir / f"{name}.svg"
        _save_svg(fig, path)
        plt.close(fig)
        written.append(path)
    return written


def plot_aggregate(agg: dict, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for family, ys in agg["curves"].items():
        ax.plot(agg["epochs"], ys, label=family)
    ax.set_xlabel(f"epoch ({agg['epoch_size']} oracle calls)")
    ax.set_ylabel(f"median over hyperparameters of mean {agg.get('metric', '')}")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)
    return Path(path)


# --- orchestration ------------------------------------------------------------------

@dataclass
class ExperimentResult:
    runs: list[dict]
    summary: dict
    failed: int
    out_dir: Path


def run_experiment(config: ExperimentConfig, out_dir=None, parallel: int = 1) -> ExperimentResult:
    """Execute every (solver, hyperparameter set, seed) and persist traces, summary, plots.

    Solver failures are recorded per run; IO errors remove this invocation's
    outputs and re-raise.
    """
    out = Path(out_dir or config.output_dir or "results")
    specs = plan_runs(config)
    # validate every config before spending compute
    for spec in specs:
        problem, oracle_for = build_problem(spec.problem)
        x0 = starting_point(spec.x0, problem, spec.seed)
        make_solver_config(spec.solver, spec.params, problem, oracle_for(x0))
    created: list[Path] = []
    trace_dir = out / "traces"
    try:
        for d in (out, trace_dir, out / "plots"):
            if not d.exists():
                d.mkdir(parents=True)
                created.append(d)
        if parallel > 1:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                metas = list(pool.map(_run_and_persist, specs, [str(trace_dir)] * len(specs)))
        else:
            metas = [_run_and_persist(s, str(trace_dir)) for s in specs]
        for m in metas:
            created += [trace_dir / f"{m['run_id']}.csv", trace_dir / f"{m['run_id']}.json"]
        traces = {m["run_id"]: read_trace_csv(trace_dir / f"{m['run_id']}.csv") for m in metas}
        agg = aggregate_runs(metas, traces, _epoch_size(config.epoch_size, config.problem),
                             config.metric)
        summary = {"schema": 1, "config": config.to_dict(), "runs": metas, "aggregate": agg}
        (out / "summary.json").write_text(_dumps(summary), encoding="utf-8")
        created.append(out / "summary.json")
        created += plot_traces(traces, metas, out / "plots", config.metric)
    except OSError:
        for p in reversed(created):
            try:
                p.rmdir() if p.is_dir() else p.unlink()
            except OSError:
                pass
        raise
    failed = sum(m.get("status") != "ok" for m in metas)
    for m in metas:
        if m.get("status") != "ok":
            log.warning("run %s failed: %s", m["run_id"], m.get("error"))
    return ExperimentResult(metas, summary, failed, out)


def load_run_dir(out_dir):
    trace_dir = Path(out_dir) / "traces"
    metas = [json.loads(p.read_text(encoding="utf-8")) for p in sorted(trace_dir.glob("*.json"))]
    if not metas:
        raise ConfigError(f"no runs found under {trace_dir}")
    traces = {m["run_id"]: read_trace_csv(trace_dir / f"{m['run_id']}.csv") for m in metas}
    return metas, traces


def compare(out_dir, epoch_size: int | None = None, metric: str = "output_objective") -> dict:
    """Aggregate an existing run directory and write aggregate.json + plots."""
    out = Path(out_dir)
    metas, traces = load_run_dir(out)
    problem = metas[0].get("problem", {})
    agg = aggregate_runs(metas, traces, _epoch_size(epoch_size, problem), metric)
    finals = {}
    for m in metas:
        if m.get("status") == "ok":
            finals.setdefault(m["label"], []).append(m.get("final_objective"))
    agg["final_median"] = {k: float(np.median([v for v in vs if v is not None]))
                           for k, vs in sorted(finals.items()) if any(v is not None for v in vs)}
    (out / "aggregate.json").write_text(_dumps(agg), encoding="utf-8")
    (out / "plots").mkdir(exist_ok=True)
    plot_aggregate(agg, out / "plots" / "aggregate_by_epoch.svg")
    plot_traces(traces, metas, out / "plots", metric)
    return agg


@dataclass
class VerifyResult:
    run_id: str
    rows_checked: int
    rows_matching: bool
    certificates: int
    certificates_failed: int
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.rows_matching and self.certificates_failed == 0


def verify_trace(trace_path) -> VerifyResult:
    """Replay a persisted run from its metadata and seed.

    Checks that the regenerated trace equals the CSV (timing column excluded)
    and that every accepted line-search step re-passes its acceptance test on
    the batch regenerated from the stored stream state.
    """
    from .linesearch import verify_certificate
    from .trace import rows_equal

    trace_path = Path(trace_path)
    meta_path = trace_path.with_suffix(".json")
    if not meta_path.exists():
        raise ConfigError(f"missing run metadata {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    stored = read_trace_csv(trace_path)
    spec = RunSpec(meta["run_id"], meta["solver"], meta["label"], meta["params"], meta["hparams"],
                   meta["hparam_index"], meta["seed"], meta["stream_id"], meta["problem"], meta["x0"])
    try:
        report, _, oracle, _ = execute(spec, keep_certificates=True)
        replay = report.trace
        certs = report.certificates or []
    except AdaptSGDError as exc:
        replay = getattr(exc, "trace", [])
        certs = []
        if not isinstance(exc, ConfigError) and not replay:
            return VerifyResult(spec.run_id, 0, False, 0, 0, str(exc))
    matching = len(replay) == len(stored) and all(rows_equal(a, b) for a, b in zip(replay, stored))
    failed = sum(not verify_certificate(oracle, c) for c in certs)
    return VerifyResult(spec.run_id, len(stored), matching, len(certs), failed)
