"""Per-source AoI distributions in matrix-exponential form.

For a model with blocks (alpha, W, beta) the AoI density is

    f(x) = eps * alpha e^{Wx} beta,     1/eps = -alpha W^{-1} beta,

with CDF F(x) = 1 + eps * (alpha e^{Wx}) W^{-1} beta and moments
E[D^k] = (-1)^{k+1} k! eps alpha W^{-(k+1)} beta.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import Policy, SourceParams
from .expm import expm_left_action, expm_left_action_grid
from .mfq import MfqModel, build_all
from .observer import NumericalError


class AoiDistribution:
    """Matrix-exponential AoI law; immutable after construction."""

    def __init__(self, alpha, W, beta):
        self.alpha = np.asarray(alpha, dtype=float).ravel()
        self.beta = np.asarray(beta, dtype=float).ravel()
        self.W = W
        try:
            if sp.issparse(W):
                lu = spla.splu(sp.csc_matrix(W))
                self._solve = lu.solve
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                    lu = scipy.linalg.lu_factor(np.asarray(W, dtype=float), check_finite=True)
                self._solve = lambda b: scipy.linalg.lu_solve(lu, b)
        except (RuntimeError, ValueError, np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise NumericalError(f"cannot factorize W: {exc}") from exc
        # u = W^{-1} beta, the only right-hand side ever needed
        self._u = self._solve(self.beta)
        total = -float(self.alpha @ self._u)
        if not (math.isfinite(total) and total > 0):
            raise NumericalError("alpha W^-1 beta is not negative and finite", total)
        self.epsilon = 1.0 / total

    @classmethod
    def from_model(cls, model: MfqModel) -> "AoiDistribution":
        return cls(model.alpha, model.W, model.beta)

    @property
    def normalization_error(self) -> float:
        return abs(self.epsilon * -float(self.alpha @ self._u) - 1.0)

    def pdf(self, x):
        """Density at scalar or array ``x``; arrays must be nondecreasing."""
        scalar = np.ndim(x) == 0
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        _check_nonnegative(xs)
        if scalar:
            return self.epsilon * float(expm_left_action(self.alpha, self.W, xs[0]) @ self.beta)
        rows = self._actions(xs)
        return np.clip(self.epsilon * (rows @ self.beta), 0.0, None)

    def cdf(self, x):
        scalar = np.ndim(x) == 0
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        _check_nonnegative(xs)
        if scalar:
            if xs[0] == 0.0:
                return 0.0
            v = expm_left_action(self.alpha, self.W, xs[0])
            return float(np.clip(1.0 + self.epsilon * (v @ self._u), 0.0, 1.0))
        out = 1.0 + self.epsilon * (self._actions(xs) @ self._u)
        out[xs == 0.0] = 0.0
        return np.clip(out, 0.0, 1.0)

    def sf(self, x):
        """Violation probability Pr{AoI > x}."""
        return 1.0 - self.cdf(x)

    def moment(self, k: int) -> float:
        if k < 1 or int(k) != k:
            raise ValueError(f"moment order must be a positive integer, got {k}")
        v = self._u
        for _ in range(int(k)):
            v = self._solve(v)
        return (-1.0) ** (k + 1) * math.factorial(k) * self.epsilon * float(self.alpha @ v)

    @property
    def mean(self) -> float:
        return self.moment(1)

    def quantile_bracket(self, p: float = 0.9999, rtol: float = 1e-6) -> float:
        """Smallest x (to ``rtol``) with F(x) >= p, by doubling then bisection."""
        hi = max(self.mean, 1e-12)
        while self.cdf(hi) < p:
            hi *= 2.0
        lo = 0.0
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) < p:
                lo = mid
            else:
                hi = mid
        return hi

    def _actions(self, xs: np.ndarray) -> np.ndarray:
        order = np.argsort(xs, kind="stable")
        rows = expm_left_action_grid(self.alpha, self.W, xs[order])
        out = np.empty_like(rows)
        out[order] = rows
        return out


def _check_nonnegative(xs: np.ndarray) -> None:
    if not np.all(np.isfinite(xs)) or (xs < 0).any():
        raise ValueError("AoI arguments must be finite and nonnegative")


def pdf_at(dist: AoiDistribution, x: float) -> float:
    return dist.pdf(float(x))


def cdf_at(dist: AoiDistribution, x: float) -> float:
    return dist.cdf(float(x))


def moment(dist: AoiDistribution, k: int) -> float:
    return dist.moment(k)


def violation_probability(dist: AoiDistribution, gamma: float) -> float:
    return 1.0 - dist.cdf(float(gamma))


@dataclass(frozen=True)
class AggregateMetrics:
    per_source_mean: np.ndarray
    mean_aoi: float
    gamma_grid: np.ndarray
    theta_grid: np.ndarray
    violation: Callable[[float], float]


def aggregate_metrics(dists: Sequence[AoiDistribution], gamma_grid=()) -> AggregateMetrics:
    """Source-averaged mean AoI and age-violation probability."""
    if not dists:
        raise ValueError("need at least one distribution")
    means = np.array([d.mean for d in dists])
    grid = np.asarray(gamma_grid, dtype=float)
    theta = np.mean([d.sf(grid) for d in dists], axis=0) if grid.size else np.empty(0)

    def violation(gamma: float) -> float:
        return float(np.mean([violation_probability(d, gamma) for d in dists]))

    return AggregateMetrics(means, float(means.mean()), grid, np.asarray(theta), violation)


def analyze(policy: Policy | str, params: SourceParams) -> list[AoiDistribution]:
    """AoI distribution of every source."""
    return [AoiDistribution.from_model(m) for m in build_all(policy, params)]


def default_grid(dists: Sequence[AoiDistribution], points: int = 400, p: float = 0.9999) -> np.ndarray:
    """Uniform grid on [0, x_p] where x_p is the largest per-source p-quantile."""
    upper = max(d.quantile_bracket(p) for d in dists)
    return np.linspace(0.0, upper, points)
