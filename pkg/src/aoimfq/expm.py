"""Left action v e^{Wt} of a sub-generator by uniformization.

With Lam >= max|W_ii| the matrix P = I + W/Lam is nonnegative and
substochastic, so

    v e^{Wt} = sum_k Poisson(k; Lam t) v P^k

is a sum of nonnegative terms for nonnegative v.  The interval is split
into steps of Poisson mass at most ``MAX_STEP_MASS`` so e^{-Lam dt} never
underflows.  Within a step, summation stops once the remaining Poisson
tail times the current term norm drops below ``tol`` times the partial
sum; since ||v P^k||_1 is nonincreasing in k, that bounds the relative
truncation error of the step in the 1-norm.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

MAX_STEP_MASS = 30.0
DEFAULT_TOL = 1e-14


class _Uniformized:
    def __init__(self, W):
        if sp.issparse(W):
            W = sp.csr_matrix(W)
            diag = W.diagonal()
        else:
            W = np.asarray(W, dtype=float)
            diag = np.diag(W)
        self.rate = float(max(-diag.min(), 0.0)) if diag.size else 0.0
        if not math.isfinite(self.rate):
            raise ValueError("W has non-finite diagonal entries")
        if self.rate == 0.0:
            self.P = None
        elif sp.issparse(W):
            self.P = (sp.identity(W.shape[0], format="csr") + W / self.rate).T.tocsr()
        else:
            self.P = np.eye(W.shape[0]) + W / self.rate

    def _apply(self, v):
        # row vector times P
        if sp.issparse(self.P):
            return self.P @ v
        return v @ self.P

    def step_plan(self, t: float):
        mass = self.rate * t
        steps = max(1, math.ceil(mass / MAX_STEP_MASS))
        m = mass / steps
        kmax = int(m + 12.0 * math.sqrt(m) + 60)
        k = np.arange(kmax + 1)
        return steps, poisson.pmf(k, m), poisson.sf(k, m)

    def advance(self, v: np.ndarray, t: float, tol: float) -> np.ndarray:
        if t == 0.0 or self.P is None:
            return v.copy()
        steps, pmf, tail = self.step_plan(t)
        for _ in range(steps):
            term = v
            acc = pmf[0] * term
            for k in range(1, len(pmf)):
                term = self._apply(term)
                acc += pmf[k] * term
                tnorm = np.abs(term).sum()
                if tail[k] * tnorm <= tol * np.abs(acc).sum() or tnorm == 0.0:
                    break
            v = acc
        return v


def expm_left_action(alpha, W, x: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Row vector ``alpha @ expm(W * x)`` without forming the exponential."""
    x = float(x)
    v = np.asarray(alpha, dtype=float).ravel()
    if not (math.isfinite(x) and x >= 0):
        raise ValueError(f"x must be finite and nonnegative, got {x}")
    if not np.all(np.isfinite(v)):
        raise ValueError("alpha has non-finite entries")
    if x == 0.0:
        return v.copy()
    return _Uniformized(W).advance(v, x, tol)


def expm_left_action_grid(alpha, W, xs, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Rows ``alpha @ expm(W * x)`` for a nondecreasing grid, marching forward."""
    xs = np.asarray(xs, dtype=float)
    if xs.size and (xs[0] < 0 or np.any(np.diff(xs) < 0) or not np.all(np.isfinite(xs))):
        raise ValueError("grid must be finite, nonnegative and nondecreasing")
    u = _Uniformized(W)
    v = np.asarray(alpha, dtype=float).ravel().copy()
    out = np.empty((xs.size, v.size))
    t = 0.0
    for k, x in enumerate(xs):
        v = u.advance(v, x - t, tol)
        t = x
        out[k] = v
    return out
