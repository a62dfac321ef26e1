"""Observer chain: the system state a Poisson arrival finds, per policy.

By PASTA the stationary vector of this chain is also the distribution seen
by an arriving packet of any source, which is what the phase-4 exits of the
fluid model need.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .core import (
    EsfsState,
    FsfsState,
    Policy,
    SbrState,
    SourceParams,
    StateSpace,
    esfs_pick,
    serialize,
    upsilon,
)


class NumericalError(RuntimeError):
    """A linear solve failed or produced an unacceptable residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _sequences(symbols, max_len):
    """All ordered sequences of distinct symbols, lengths 0..max_len."""
    for m in range(max_len + 1):
        yield from itertools.permutations(symbols, m)


def _subsets(symbols):
    for m in range(len(symbols) + 1):
        yield from itertools.combinations(sorted(symbols), m)


def enumerate_observer_states(policy: Policy | str, n: int) -> StateSpace:
    policy = Policy.parse(policy)
    if n < 1:
        raise ValueError(f"source count must be >= 1, got {n}")
    sources = range(1, n + 1)
    states: list = []
    if policy is Policy.FSFS:
        states.append(FsfsState(0, ()))
        for i in sources:
            states.extend(FsfsState(i, q) for q in _sequences(sources, n))
    elif policy is Policy.ESFS:
        for order in itertools.permutations(sources):
            states.append(EsfsState(order, None))
            states.extend(EsfsState(order, c) for c in _subsets(sources))
    else:
        states.append(SbrState(0, 0))
        for i in sources:
            states.extend(SbrState(i, j) for j in range(n + 1))
    return StateSpace(states)


def observer_transitions(policy: Policy, state, params: SourceParams) -> Iterator[tuple[object, float]]:
    """Yield ``(target, rate)`` for every state-changing event out of ``state``."""
    n = params.n
    sources = range(1, n + 1)
    lam, mu = params.lambdas, params.mus
    if policy is Policy.FSFS:
        i, q = state
        if i == 0:
            for k in sources:
                yield FsfsState(k, ()), lam[k - 1]
            return
        for j in sources:
            if j not in q:
                yield FsfsState(i, q + (j,)), lam[j - 1]
        if q:
            yield FsfsState(q[0], q[1:]), mu[i - 1]
        else:
            yield FsfsState(0, ()), mu[i - 1]
    elif policy is Policy.ESFS:
        order, c = state
        if c is None:
            for k in sources:
                yield EsfsState(upsilon(order, k), ()), lam[k - 1]
            return
        for j in sources:
            if j not in c:
                yield EsfsState(order, tuple(sorted(c + (j,)))), lam[j - 1]
        rate = mu[order[-1] - 1]
        if c:
            pick = esfs_pick(order, c)
            yield EsfsState(upsilon(order, pick), tuple(s for s in c if s != pick)), rate
        else:
            yield EsfsState(order, None), rate
    else:
        i, j = state
        if i == 0:
            for k in sources:
                yield SbrState(k, 0), lam[k - 1]
            return
        for k in sources:
            if k != j:
                yield SbrState(i, k), lam[k - 1]
        yield (SbrState(j, 0) if j else SbrState(0, 0)), mu[i - 1]


@dataclass(frozen=True)
class ObserverChain:
    policy: Policy
    params: SourceParams
    states: StateSpace
    rows: np.ndarray
    cols: np.ndarray
    rates: np.ndarray
    stationary: np.ndarray | None = field(default=None, compare=False)

    @property
    def size(self) -> int:
        return len(self.states)

    def rate_matrix(self) -> sp.csr_matrix:
        """Off-diagonal rates only (zero diagonal)."""
        k = self.size
        return sp.csr_matrix((self.rates, (self.rows, self.cols)), shape=(k, k))

    def generator(self) -> np.ndarray:
        q = self.rate_matrix().toarray()
        np.fill_diagonal(q, -q.sum(axis=1))
        return q

    def probability(self, state) -> float:
        if self.stationary is None:
            raise ValueError("stationary distribution not computed")
        return float(self.stationary[self.states.index(state)])

    def dump(self, path: str | Path) -> None:
        """Write ``state_from | state_to | rate`` lines in canonical order."""
        order = np.lexsort((self.cols, self.rows))
        with open(path, "w", encoding="utf-8") as fh:
            for k in order:
                a, b = self.states[self.rows[k]], self.states[self.cols[k]]
                fh.write(f"{serialize(a)} | {serialize(b)} | {float(self.rates[k])!r}\n")


def build_observer_generator(policy: Policy | str, params: SourceParams) -> ObserverChain:
    policy = Policy.parse(policy)
    space = enumerate_observer_states(policy, params.n)
    rows, cols, rates = [], [], []
    for a, state in enumerate(space):
        for target, rate in observer_transitions(policy, state, params):
            b = space.index(target)
            if b == a:
                continue
            rows.append(a)
            cols.append(b)
            rates.append(rate)
    return ObserverChain(
        policy,
        params,
        space,
        np.asarray(rows, dtype=np.int64),
        np.asarray(cols, dtype=np.int64),
        np.asarray(rates, dtype=float),
    )


def stationary_distribution(chain: ObserverChain, tol: float = 1e-10) -> np.ndarray:
    """Solve pi Q = 0, sum(pi) = 1 by replacing one balance equation."""
    q = chain.generator()
    a = q.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(chain.size)
    b[-1] = 1.0
    try:
        pi = scipy.linalg.solve(a, b)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"stationary solve failed: {exc}") from exc
    residual = float(np.abs(pi @ q).max()) if chain.size else 0.0
    if not np.all(np.isfinite(pi)) or residual > tol * max(1.0, np.abs(q).max()):
        raise NumericalError("stationary solve did not converge", residual)
    # round-off can leave -1e-17 entries
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def solve_observer(policy: Policy | str, params: SourceParams) -> ObserverChain:
    """Build the observer chain and attach its stationary vector."""
    chain = build_observer_generator(policy, params)
    return replace(chain, stationary=stationary_distribution(chain))
