"""AdaGrad and Adam reference optimizers driven by the same oracle accounting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convex import _finish
from .errors import ConfigError
from .linesearch import SolverOptions
from .oracle import OracleCounter, RandomStream, StochasticOracle
from .trace import Recorder, RunReport


@dataclass
class BaselineConfig(SolverOptions):
    learning_rate: float = 0.001
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_num: float = 1e-8

    def __post_init__(self):
        self._check_options()
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon_num < 0:
            raise ConfigError("epsilon_num must be >= 0")


@dataclass(frozen=True)
class AdagradState:
    sum_sq: np.ndarray


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray


def _same_shape(x, g):
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if x.shape != g.shape:
        raise ConfigError(f"shape mismatch: x {x.shape} vs g {g.shape}")
    return x, g


def adagrad_step(state: AdagradState | None, x, g, config: BaselineConfig):
    """Diagonal AdaGrad: s' = s + g*g, x' = x - lr g / (sqrt(s') + eps)."""
    x, g = _same_shape(x, g)
    s = np.zeros_like(x) if state is None else state.sum_sq
    if s.shape != x.shape:
        raise ConfigError("state shape does not match x")
    s_new = s + g * g
    denom = np.sqrt(s_new) + config.epsilon_num
    # coordinates that never saw a gradient stay put (avoids 0/0 with eps = 0)
    step = np.divide(g, denom, out=np.zeros_like(g), where=denom > 0)
    return x - config.learning_rate * step, AdagradState(s_new)


def adam_step(state: AdamState | None, x, g, t: int, config: BaselineConfig):
    """Adam with bias-corrected moments; ``t`` counts steps from 1."""
    if t < 1:
        raise ConfigError("Adam step index t must be >= 1")
    x, g = _same_shape(x, g)
    if state is None:
        state = AdamState(np.zeros_like(x), np.zeros_like(x))
    if state.m.shape != x.shape or state.v.shape != x.shape:
        raise ConfigError("state shape does not match x")
    b1, b2 = config.beta1, config.beta2
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    denom = np.sqrt(v_hat) + config.epsilon_num
    step = np.divide(m_hat, denom, out=np.zeros_like(m_hat), where=denom > 0)
    return x - config.learning_rate * step, AdamState(m, v)


def _run_baseline(name, update, oracle: StochasticOracle, problem, config: BaselineConfig, x0,
                  stream: RandomStream) -> RunReport:
    cfg = config
    x = np.array(x0, dtype=float)
    counter = OracleCounter()
    rec = Recorder(oracle, problem, counter, cfg, x)
    rec.add(0, x, cfg.learning_rate, 0)
    state = None
    k = 0
    for k in range(1, cfg.max_iterations + 1):
        batch = oracle.draw(cfg.batch_size, stream, counter)
        g = oracle.batch_gradient(x, batch, counter)
        x, state = update(state, x, g, k)
        rec.add(k, x, cfg.learning_rate, cfg.batch_size, 1, grad_norm_batch=np.linalg.norm(g))
        if cfg.max_oracle_calls is not None and counter.gradient_calls >= cfg.max_oracle_calls:
            break
    return _finish(name, rec, counter, x, "last_iterate", "budget_exhausted", k, config=cfg)


def run_adagrad(oracle, problem, config: BaselineConfig, x0, stream) -> RunReport:
    return _run_baseline("adagrad", lambda s, x, g, t: adagrad_step(s, x, g, config),
                         oracle, problem, config, x0, stream)


def run_adam(oracle, problem, config: BaselineConfig, x0, stream) -> RunReport:
    return _run_baseline("adam", lambda s, x, g, t: adam_step(s, x, g, t, config),
                         oracle, problem, config, x0, stream)
