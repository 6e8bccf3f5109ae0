"""Stochastic first-order oracles and mini-batch aggregation.

An oracle separates *drawing* realizations (``draw``) from *evaluating* them
(``batch_gradient`` / ``batch_value``). Solvers draw a batch once per
line-search round and re-evaluate it at every trial point, which is what makes
the stochastic acceptance test consistent.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigError, OracleFault, OracleUnavailable

_U64 = (1 << 64) - 1


class RandomStream:
    """Seeded source of randomness owned by a single run.

    Streams with distinct ``(seed, stream_id)`` pairs are independent (they are
    spawned from one ``SeedSequence`` with different spawn keys); identical
    pairs reproduce identical sequences.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not (0 <= seed <= _U64 and 0 <= stream_id <= _U64):
            raise ConfigError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def snapshot(self) -> dict[str, Any]:
        """Bit-generator state, sufficient to regenerate the next draws."""
        return self.generator.bit_generator.state

    @classmethod
    def from_snapshot(cls, state: dict[str, Any]) -> "RandomStream":
        stream = cls.__new__(cls)
        stream.seed = -1
        stream.stream_id = -1
        bg = np.random.PCG64()
        bg.state = state
        stream.generator = np.random.Generator(bg)
        return stream

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass
class SampleBatch:
    """A cached set of realizations xi_1..xi_r.

    ``state`` is the stream snapshot taken right before the draw, so the batch
    can be regenerated bit-for-bit by ``StochasticOracle.redraw``.
    """

    realizations: np.ndarray
    state: dict[str, Any] | None = None

    @property
    def size(self) -> int:
        return int(self.realizations.shape[0])


@dataclass
class OracleCounter:
    """Per-run bookkeeping of oracle usage.

    ``gradient_calls`` is the budget T: one unit per realization per gradient
    evaluation. Value samples and exact (test-only) evaluations are tracked
    separately and never enter T.
    """

    gradient_calls: int = 0
    value_calls: int = 0
    verification_calls: int = 0
    batches_drawn: int = 0
    realizations_drawn: int = 0


def _check_point(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ConfigError(f"points must be 1-D vectors, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("point has non-finite coordinates")
    return x


class StochasticOracle(ABC):
    """Unbiased stochastic gradient/value source.

    Subclasses declare ``dim`` and ``declared_variance`` (the bound D on
    E||grad f(x, xi) - grad f(x)||^2) and, optionally, ``sub_gaussian``
    (sigma^2 with E exp(||noise||^2 / sigma^2) <= e).
    """

    dim: int
    declared_variance: float
    sub_gaussian: float | None = None

    @abstractmethod
    def _draw(self, r: int, generator: np.random.Generator) -> np.ndarray:
        """Return ``r`` realizations stacked along axis 0."""

    @abstractmethod
    def sample_gradients(self, x: np.ndarray, batch: SampleBatch) -> np.ndarray:
        """Per-realization gradients, shape (r, dim)."""

    @abstractmethod
    def sample_values(self, x: np.ndarray, batch: SampleBatch) -> np.ndarray:
        """Per-realization values, shape (r,)."""

    def exact_gradient(self, x: np.ndarray) -> np.ndarray:
        raise OracleUnavailable("exact gradient not available for this oracle")

    def exact_value(self, x: np.ndarray) -> float:
        raise OracleUnavailable("exact value not available for this oracle")

    @property
    def has_exact(self) -> bool:
        return False

    def draw(self, r: int, stream: RandomStream, counter: OracleCounter | None = None) -> SampleBatch:
        if r < 1:
            raise ConfigError(f"batch size must be >= 1, got {r}")
        state = stream.snapshot()
        batch = SampleBatch(self._draw(int(r), stream.generator), state)
        if counter is not None:
            counter.batches_drawn += 1
            counter.realizations_drawn += batch.size
        return batch

    def redraw(self, r: int, state: dict[str, Any]) -> SampleBatch:
        """Regenerate the batch that ``draw`` produced from ``state``."""
        return self.draw(r, RandomStream.from_snapshot(state))

    def batch_gradient(self, x, batch: SampleBatch, counter: OracleCounter | None = None) -> np.ndarray:
        """Mini-batch gradient (1/r) sum_l grad f(x, xi_l) on a cached batch."""
        if batch.size < 1:
            raise ConfigError("empty batch")
        grads = self.sample_gradients(x, batch)
        bad = ~np.all(np.isfinite(grads), axis=1)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise OracleFault(f"non-finite gradient sample at draw {idx}", draw_index=idx)
        if counter is not None:
            counter.gradient_calls += batch.size
        return grads.mean(axis=0)

    def batch_value(self, x, batch: SampleBatch, counter: OracleCounter | None = None) -> float:
        if batch.size < 1:
            raise ConfigError("empty batch")
        vals = self.sample_values(x, batch)
        bad = ~np.isfinite(vals)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise OracleFault(f"non-finite value sample at draw {idx}", draw_index=idx)
        if counter is not None:
            counter.value_calls += batch.size
        return float(vals.mean())

    def sample_gradient(self, x, stream: RandomStream) -> np.ndarray:
        """One fresh draw of grad f(x, xi)."""
        return self.batch_gradient(_check_point(x), self.draw(1, stream))

    def sample_value(self, x, stream: RandomStream) -> float:
        """One fresh draw of f(x, xi)."""
        return self.batch_value(_check_point(x), self.draw(1, stream))


def mini_batch_gradient(oracle: StochasticOracle, x, r: int, stream: RandomStream,
                        counter: OracleCounter | None = None) -> np.ndarray:
    """Average of ``r`` fresh gradient samples at ``x``.

    Exactly ``r`` draws are consumed and added to ``counter.gradient_calls``.
    """
    x = _check_point(x)
    return oracle.batch_gradient(x, oracle.draw(r, stream, counter), counter)


def mini_batch_value(oracle: StochasticOracle, x, batch: SampleBatch,
                     counter: OracleCounter | None = None) -> float:
    """Sample-average value on an existing batch (same xi_l at every point)."""
    return oracle.batch_value(_check_point(x), batch, counter)


def gaussian_sub_gaussian_parameter(D: float, n: int) -> float:
    """Smallest sigma^2 with E exp(||z||^2 / sigma^2) <= e for z ~ N(0, (D/n) I_n).

    ||z||^2 = (D/n) chi^2_n and E exp(t chi^2_n) = (1 - 2t)^(-n/2).
    """
    if D == 0:
        return 0.0
    return 2.0 * D / (n * -math.expm1(-2.0 / n))


class AdditiveGaussianOracle(StochasticOracle):
    """Deterministic problem plus i.i.d. N(0, (D/n) I) gradient noise.

    A realization is a noise vector z; the matching stochastic objective is
    f(x, z) = f(x) + <z, x>, whose gradient is grad f(x) + z. Each f(., z) has
    the same smoothness constant as f.
    """

    def __init__(self, base, D: float, sub_gaussian: float | None = None):
        if not D >= 0:
            raise ConfigError(f"variance D must be >= 0, got {D}")
        self.base = base
        self.dim = int(base.dim)
        self.declared_variance = float(D)
        self.noise_std = math.sqrt(D / self.dim)
        self.sub_gaussian = (gaussian_sub_gaussian_parameter(D, self.dim)
                             if sub_gaussian is None else float(sub_gaussian))

    def _draw(self, r, generator):
        if self.noise_std == 0.0:
            return np.zeros((r, self.dim))
        return generator.normal(0.0, self.noise_std, size=(r, self.dim))

    def sample_gradients(self, x, batch):
        return self.base.gradient(x)[None, :] + batch.realizations

    def sample_values(self, x, batch):
        return self.base.value(x) + batch.realizations @ x

    def batch_gradient(self, x, batch, counter=None):
        if self.noise_std == 0.0 and batch.size > 0:
            # zero noise: skip building the (r, n) sample matrix
            g = np.asarray(self.base.gradient(x), dtype=float)
            if not np.all(np.isfinite(g)):
                raise OracleFault("non-finite gradient sample at draw 0", draw_index=0)
            if counter is not None:
                counter.gradient_calls += batch.size
            return g
        return super().batch_gradient(x, batch, counter)

    def exact_gradient(self, x):
        return self.base.gradient(x)

    def exact_value(self, x):
        return float(self.base.value(x))

    @property
    def has_exact(self):
        return True


def make_additive_gaussian_oracle(base, D: float) -> AdditiveGaussianOracle:
    return AdditiveGaussianOracle(base, D)


class FiniteSumOracle(StochasticOracle):
    """f(x) = (1/m) sum_i f_i(x); a realization is a uniformly drawn index.

    ``declared_variance`` is the exact per-example gradient variance at
    ``x_ref`` (one full pass), unless given explicitly.
    """

    def __init__(self, problem, x_ref=None, D: float | None = None):
        if problem.n_samples is None:
            raise ConfigError("finite-sum oracle needs a problem with per-example terms")
        self.base = problem
        self.dim = int(problem.dim)
        self.m = int(problem.n_samples)
        if D is None:
            x_ref = np.zeros(self.dim) if x_ref is None else _check_point(x_ref)
            D = self.variance_at(x_ref)
        if D < 0:
            raise ConfigError(f"variance D must be >= 0, got {D}")
        self.declared_variance = float(D)
        self.sub_gaussian = None

    def variance_at(self, x) -> float:
        grads = self.base.example_gradients(x, np.arange(self.m))
        return float(np.mean(np.sum((grads - grads.mean(axis=0)) ** 2, axis=1)))

    def _draw(self, r, generator):
        return generator.integers(0, self.m, size=r)

    def sample_gradients(self, x, batch):
        return self.base.example_gradients(x, batch.realizations)

    def sample_values(self, x, batch):
        return self.base.example_values(x, batch.realizations)

    def exact_gradient(self, x):
        return self.base.gradient(x)

    def exact_value(self, x):
        return float(self.base.value(x))

    @property
    def has_exact(self):
        return True
