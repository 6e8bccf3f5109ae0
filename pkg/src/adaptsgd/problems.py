"""Test objectives with certified constants.

Every problem knows its gradient Lipschitz constant ``known_L`` (globally, or
on the documented ``box``), and, where applicable, its minimizer and optimal
value, so solver runs can be checked against closed-form quantities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError


@dataclass
class ProblemSpec:
    name: str
    dim: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    known_L: float
    convexity: str = "convex"
    known_optimum: np.ndarray | None = None
    known_opt_value: float | None = None
    # axis-aligned region (lo, hi) on which known_L is certified; None = all of R^n
    box: tuple[np.ndarray, np.ndarray] | None = None
    # finite-sum structure: f = (1/m) sum_i f_i
    n_samples: int | None = None
    example_values: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    example_gradients: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    test_accuracy: Callable[[np.ndarray], float] | None = None
    params: dict = field(default_factory=dict)

    def initial_distance(self, x0) -> float | None:
        """R = ||x0 - x*|| when the minimizer is known."""
        if self.known_optimum is None:
            return None
        return float(np.linalg.norm(np.asarray(x0, float) - self.known_optimum))

    def gap(self, x) -> float | None:
        if self.known_opt_value is None:
            return None
        return float(self.value(x)) - self.known_opt_value

    def sample_point(self, rng: np.random.Generator, scale: float = 2.0) -> np.ndarray:
        if self.box is not None:
            lo, hi = self.box
            return rng.uniform(lo, hi)
        center = self.known_optimum if self.known_optimum is not None else np.zeros(self.dim)
        return center + rng.uniform(-scale, scale, size=self.dim)


def quadratic_problem(diag, x_star=None) -> ProblemSpec:
    """f(x) = 1/2 sum_i d_i (x_i - x*_i)^2 with L = max d_i."""
    d = np.asarray(diag, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise ConfigError("diag must be a non-empty vector")
    if not np.all(d > 0):
        raise ConfigError("quadratic diagonal entries must be positive")
    xs = np.zeros_like(d) if x_star is None else np.asarray(x_star, dtype=float)
    if xs.shape != d.shape:
        raise ConfigError("x_star has wrong dimension")

    def value(x):
        e = x - xs
        return 0.5 * float(np.dot(d * e, e))

    def gradient(x):
        return d * (x - xs)

    return ProblemSpec(
        name="quadratic", dim=d.size, value=value, gradient=gradient,
        known_L=float(d.max()), known_optimum=xs.copy(), known_opt_value=0.0,
        params={"diag": d.tolist(), "x_star": xs.tolist()},
    )


def logistic_problem(features, labels, l2: float = 0.0, test_features=None, test_labels=None) -> ProblemSpec:
    """Binary logistic regression, f(x) = (1/m) sum log(1 + exp(-y_i <a_i, x>)) + l2/2 ||x||^2.

    ``known_L`` = ||A||_F^2 / (4m) + l2, an upper bound on ||A||_2^2 / (4m) + l2.
    """
    A = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1:
        raise DataError("features must be a non-empty m x n matrix")
    if y.shape != (A.shape[0],):
        raise DataError("labels must have one entry per row of features")
    if not np.all((y == 1.0) | (y == -1.0)):
        raise DataError("labels must be +1 or -1")
    if l2 < 0:
        raise ConfigError("l2 must be >= 0")
    m, n = A.shape
    yA = y[:, None] * A

    def example_values(x, idx):
        return np.logaddexp(0.0, -(yA[idx] @ x)) + 0.5 * l2 * float(x @ x)

    def example_gradients(x, idx):
        rows = yA[idx]
        return -expit(-(rows @ x))[:, None] * rows + l2 * x

    def value(x):
        return float(np.mean(np.logaddexp(0.0, -(yA @ x)))) + 0.5 * l2 * float(x @ x)

    def gradient(x):
        return -(expit(-(yA @ x)) @ yA) / m + l2 * x

    test_accuracy = None
    if test_features is not None:
        At = np.asarray(test_features, dtype=float)
        yt = np.asarray(test_labels, dtype=float)

        def test_accuracy(x):
            pred = np.where(At @ x >= 0.0, 1.0, -1.0)
            return float(np.mean(pred == yt))

    return ProblemSpec(
        name="logistic", dim=n, value=value, gradient=gradient,
        known_L=float(np.sum(A * A)) / (4.0 * m) + l2,
        n_samples=m, example_values=example_values, example_gradients=example_gradients,
        test_accuracy=test_accuracy, params={"m": m, "n": n, "l2": l2},
    )


def _sigmoid_sum(n: int) -> ProblemSpec:
    # f(x) = sum_i s(x_i)(1 - s(x_i)) = sum_i s'(x_i).
    # f'' per coordinate is s'(1 - 6s + 6s^2) = v(1 - 6v) with v = s(1-s) in (0, 1/4];
    # its modulus peaks at v = 1/4 (x = 0), so L = 1/8 globally. inf f = 0 (not attained).
    def value(x):
        s = expit(x)
        return float(np.sum(s * (1.0 - s)))

    def gradient(x):
        s = expit(x)
        return s * (1.0 - s) * (1.0 - 2.0 * s)

    return ProblemSpec(
        name="sigmoid_sum", dim=n, value=value, gradient=gradient, known_L=0.125,
        convexity="nonconvex", known_opt_value=0.0, params={"n": n},
    )


def _rosenbrock(b: float, radius: float) -> ProblemSpec:
    # f(x, y) = (1 - x)^2 + b (y - x^2)^2. Hessian:
    #   [[2 - 4b y + 12 b x^2, -4 b x], [-4 b x, 2 b]]
    # Gershgorin on [-c, c]^2 gives L <= max(2 + 8bc + 12bc^2, 4bc + 2b).
    c = radius
    L = max(2.0 + 8.0 * b * c + 12.0 * b * c * c, 4.0 * b * c + 2.0 * b)

    def value(x):
        return float((1.0 - x[0]) ** 2 + b * (x[1] - x[0] ** 2) ** 2)

    def gradient(x):
        t = x[1] - x[0] ** 2
        return np.array([-2.0 * (1.0 - x[0]) - 4.0 * b * x[0] * t, 2.0 * b * t])

    lo = np.full(2, -c)
    return ProblemSpec(
        name="rosenbrock_smoothed", dim=2, value=value, gradient=gradient, known_L=L,
        convexity="nonconvex", known_optimum=np.ones(2), known_opt_value=0.0,
        box=(lo, -lo), params={"b": b, "radius": c},
    )


def nonconvex_problem(kind: str, n: int = 10, b: float = 100.0, radius: float = 2.0) -> ProblemSpec:
    """Smooth non-convex objectives.

    ``sigmoid_sum``: sum of logistic densities, L = 1/8 on all of R^n.
    ``rosenbrock_smoothed``: 2-D Rosenbrock with L certified on [-radius, radius]^2.
    """
    if kind == "sigmoid_sum":
        return _sigmoid_sum(n)
    if kind == "rosenbrock_smoothed":
        return _rosenbrock(b, radius)
    raise ConfigError(f"unknown non-convex problem kind {kind!r}")


def make_logistic_data(m: int, n: int, seed: int = 0, flip: float = 0.05, m_test: int = 0):
    """Seeded synthetic classification data from a planted separator.

    Returns (A, y, A_test, y_test); test arrays are empty when ``m_test=0``.
    Rows are standard normal scaled by 1/sqrt(n), so ||a_i|| is about 1.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(size=n)
    w *= 3.0 / np.linalg.norm(w)

    def sample(k):
        A = rng.normal(size=(k, n)) / math.sqrt(n)
        y = np.where(A @ w >= 0.0, 1.0, -1.0)
        y[rng.random(k) < flip] *= -1.0
        return A, y

    A, y = sample(m)
    At, yt = sample(m_test) if m_test else (np.empty((0, n)), np.empty(0))
    return A, y, At, yt


def write_dataset_csv(path, features, labels):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"a{j}" for j in range(features.shape[1])])
        for yi, row in zip(labels, features):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in row])


def read_dataset_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    if data.size == 0:
        raise DataError(f"{path}: no data rows")
    return data[:, 1:], data[:, 0]
