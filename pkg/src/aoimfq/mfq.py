"""Four-phase fluid model of one tagged source.

The cycle of the fluid level opened by a tagged arrival (packet 1c):

* phase 1 -- 1c waits in the queue; ends when it enters service (phase 2)
  or is replaced by a fresher tagged arrival (phase 4);
* phase 2 -- 1c in service; ends at its delivery (phase 3);
* phase 3 -- from delivery of 1c until delivery of the next tagged packet
  1n; the fluid level equals the tagged AoI here; ends in phase 4;
* phase 4 -- a single down-drift state that resets the level and restarts
  the cycle according to the state an arriving tagged packet sees.

The tagged source is always modelled as source 1; other sources are
handled by swapping rate entries before the build.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import (
    PHASE4,
    EsfsState,
    FsfsState,
    MembershipError,
    PhaseState,
    Policy,
    SbrState,
    SourceParams,
    StateSpace,
    Tag,
    esfs_pick,
    relabel,
    serialize,
    sort_key,
    swap_permutation,
    upsilon,
)
from .observer import ObserverChain, solve_observer

P, C, NX = Tag.PREV, Tag.CUR, Tag.NEXT

# W is kept dense up to this order, sparse above it
DENSE_LIMIT = 2000
ALPHA_SLACK = 1e-9


class ModelConstructionError(RuntimeError):
    pass


def _seqs(symbols, lengths):
    for m in lengths:
        yield from itertools.permutations(symbols, m)


def _subsets(symbols, lengths):
    for m in lengths:
        yield from itertools.combinations(sorted(symbols), m)


def _fsfs_after_tagged_queue(n: int):
    """Queue contents in phases 2/3: no 1n (length <= n-1) or 1n last."""
    others = range(2, n + 1)
    for q in _seqs(others, range(n)):
        yield q
        yield q + (NX,)


def enumerate_phase_states(policy: Policy | str, n: int, tagged: int = 1):
    """Return the phase lists (Q1, Q2, Q3, Q4), each canonically ordered."""
    policy = Policy.parse(policy)
    if n < 1:
        raise ValueError(f"source count must be >= 1, got {n}")
    if not 1 <= tagged <= n:
        raise ValueError(f"tagged source must be in 1..{n}, got {tagged}")
    others = tuple(range(2, n + 1))
    q1, q2, q3 = [], [], []
    if policy is Policy.FSFS:
        for i in (P,) + others:
            for q in _seqs((C,) + others, range(1, n + 1)):
                if C in q:
                    q1.append(FsfsState(i, q))
        q2 = [FsfsState(C, q) for q in _fsfs_after_tagged_queue(n)]
        q3 = [FsfsState(0, ()), FsfsState(NX, ())]
        q3 += [FsfsState(i, q) for i in others for q in _fsfs_after_tagged_queue(n)]
    elif policy is Policy.ESFS:
        for order in itertools.permutations((P,) + others):
            for c in _subsets(others, range(n)):
                q1.append(EsfsState(order, tuple(sorted(c + (C,)))))
        for head in itertools.permutations(others):
            for c in _subsets((NX,) + others, range(n + 1)):
                q2.append(EsfsState(head + (C,), c))
        for order in itertools.permutations((NX,) + others):
            q3.append(EsfsState(order, None))
            if order[-1] == NX:
                q3.append(EsfsState(order, ()))
            else:
                q3.extend(EsfsState(order, c) for c in _subsets((NX,) + others, range(n + 1)))
    else:
        q1 = [SbrState(i, C) for i in (P,) + others]
        q2 = [SbrState(C, j) for j in (0, NX) + others]
        q3 = [SbrState(0, 0), SbrState(NX, 0)]
        q3 += [SbrState(i, j) for i in others for j in (0, NX) + others]
    wrap = lambda phase, xs: sorted((PhaseState(phase, s) for s in xs), key=sort_key)
    return wrap(1, q1), wrap(2, q2), wrap(3, q3), [PHASE4]


# -- transition tables ---------------------------------------------------------
#
# Each function yields (target, rate) for one phase state, with rates looked
# up on the renumbered parameters (tags resolve to source 1).


def _fsfs_moves(state: PhaseState, prm: SourceParams):
    phase, (srv, q) = state
    n = prm.n
    others = range(2, n + 1)
    if phase == 1:
        for j in others:
            if j not in q:
                yield PhaseState(1, FsfsState(srv, q + (j,))), prm.lam(j)
        yield PHASE4, prm.lam(C)
        if q[0] == C:
            yield PhaseState(2, FsfsState(C, q[1:])), prm.mu(srv)
        else:
            yield PhaseState(1, FsfsState(q[0], q[1:])), prm.mu(srv)
        return
    if phase == 3 and srv == 0:
        for j in (NX,) + tuple(others):
            yield PhaseState(3, FsfsState(j, ())), prm.lam(j)
        return
    if phase == 3 and srv == NX:
        yield PHASE4, prm.mu(NX)
        return
    # busy with 1c (phase 2) or with an ordinary source (phase 3)
    if not q or q[-1] != NX:
        for j in (NX,) + tuple(others):
            if j not in q:
                yield PhaseState(phase, FsfsState(srv, q + (j,))), prm.lam(j)
    if not q:
        nxt = FsfsState(0, ())
    elif q[0] == NX:
        nxt = FsfsState(NX, ())
    else:
        nxt = FsfsState(q[0], q[1:])
    yield PhaseState(3, nxt), prm.mu(srv)


def _esfs_moves(state: PhaseState, prm: SourceParams):
    phase, (order, c) = state
    n = prm.n
    others = tuple(range(2, n + 1))
    if phase == 1:
        for j in others:
            if j not in c:
                yield PhaseState(1, EsfsState(order, tuple(sorted(c + (j,))))), prm.lam(j)
        yield PHASE4, prm.lam(C)
        # 1p in the order and 1c in the queue are the same source
        view = tuple(C if h == P else h for h in order)
        pick = esfs_pick(view, c)
        rate = prm.mu(order[-1])
        if pick == C:
            rest = tuple(s for s in c if s != C)
            yield PhaseState(2, EsfsState(upsilon(view, C), rest)), rate
        else:
            rest = tuple(s for s in c if s != pick)
            yield PhaseState(1, EsfsState(upsilon(order, pick), rest)), rate
        return
    if phase == 3 and c is None:
        for i in (NX,) + others:
            yield PhaseState(3, EsfsState(upsilon(order, i), ())), prm.lam(i)
        return
    if phase == 3 and order[-1] == NX:
        yield PHASE4, prm.mu(NX)
        return
    for j in (NX,) + others:
        if j not in c:
            yield PhaseState(phase, EsfsState(order, tuple(sorted(c + (j,))))), prm.lam(j)
    rate = prm.mu(order[-1])
    if phase == 2:
        order = tuple(NX if h == C else h for h in order)
    if not c:
        yield PhaseState(3, EsfsState(order, None)), rate
        return
    pick = esfs_pick(order, c)
    rest = () if pick == NX else tuple(s for s in c if s != pick)
    yield PhaseState(3, EsfsState(upsilon(order, pick), rest)), rate


def _sbr_moves(state: PhaseState, prm: SourceParams):
    phase, (srv, buf) = state
    n = prm.n
    others = tuple(range(2, n + 1))
    if phase == 1:
        # any arrival overwrites 1c in the shared slot
        yield PHASE4, sum(prm.lambdas)
        yield PhaseState(2, SbrState(C, 0)), prm.mu(srv)
        return
    if phase == 3 and srv == 0:
        for i in (NX,) + others:
            yield PhaseState(3, SbrState(i, 0)), prm.lam(i)
        return
    if phase == 3 and srv == NX:
        yield PHASE4, prm.mu(NX)
        return
    for k in (NX,) + others:
        if k != buf:
            yield PhaseState(phase, SbrState(srv, k)), prm.lam(k)
    yield PhaseState(3, SbrState(buf, 0) if buf else SbrState(0, 0)), prm.mu(srv)


_MOVES = {Policy.FSFS: _fsfs_moves, Policy.ESFS: _esfs_moves, Policy.SBR: _sbr_moves}


def phase_transitions(policy: Policy | str, state: PhaseState, params: SourceParams):
    """``(target, rate)`` pairs out of a phase-1..3 state (tagged = source 1)."""
    return list(_MOVES[Policy.parse(policy)](state, params))


def arrival_image(policy: Policy, seen) -> PhaseState:
    """Phase state entered when a tagged arrival finds observer state ``seen``.

    Source-1 labels in ``seen`` become 1p (server / service order) and the
    arriving packet becomes 1c; a queued source-1 packet is replaced by 1c in
    place.  Several observer states can map to the same phase state.
    """
    tag = lambda s: P if s == 1 else s
    if policy is Policy.FSFS:
        srv, q = seen
        if srv == 0:
            return PhaseState(2, FsfsState(C, ()))
        if 1 in q:
            q = tuple(C if s == 1 else s for s in q)
        else:
            q = q + (C,)
        return PhaseState(1, FsfsState(tag(srv), q))
    if policy is Policy.ESFS:
        order, c = seen
        if c is None:
            served = tuple(C if h == 1 else h for h in upsilon(order, 1))
            return PhaseState(2, EsfsState(served, ()))
        c = tuple(sorted(set(c) - {1} | {C}))
        return PhaseState(1, EsfsState(tuple(tag(h) for h in order), c))
    srv, _ = seen
    if srv == 0:
        return PhaseState(2, SbrState(C, 0))
    return PhaseState(1, SbrState(tag(srv), C))


# -- assembled model -----------------------------------------------------------


@dataclass(frozen=True)
class MfqModel:
    """Blocks of the fluid model for one tagged source.

    ``W`` is the generator restricted to the up-drift states, ``h`` the rates
    into the phase-4 state, ``alpha`` the phase-4 exit probabilities and
    ``beta`` the indicator of phase-3 states.
    """

    policy: Policy
    params: SourceParams
    tagged: int
    space: StateSpace
    sizes: tuple[int, int, int]
    W: np.ndarray | sp.csr_matrix = field(repr=False)
    h: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)

    @property
    def L(self) -> int:
        return sum(self.sizes)

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.W)

    def phase_of(self, index: int) -> int:
        return self.space[index].phase

    def dense_W(self) -> np.ndarray:
        return self.W.toarray() if self.is_sparse else np.asarray(self.W)

    def dump(self, path: str | Path) -> None:
        """Text dump: state table, then sparse W, h and alpha triplets."""
        w = sp.coo_matrix(self.W)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# state | phase | index\n")
            for k, s in enumerate(self.space):
                fh.write(f"{serialize(s)} | {s.phase} | {k}\n")
            fh.write("# W: row | col | value\n")
            for r, c, v in sorted(zip(w.row, w.col, w.data)):
                fh.write(f"{r} | {c} | {float(v)!r}\n")
            fh.write("# h: row | value\n")
            for r in np.flatnonzero(self.h):
                fh.write(f"{r} | {float(self.h[r])!r}\n")
            fh.write("# alpha: col | value\n")
            for r in np.flatnonzero(self.alpha):
                fh.write(f"{r} | {float(self.alpha[r])!r}\n")


def build_mfq(
    policy: Policy | str,
    params: SourceParams,
    tagged: int = 1,
    observer: ObserverChain | None = None,
    dense_limit: int = DENSE_LIMIT,
) -> MfqModel:
    """Assemble (W, h, alpha, beta) for ``tagged``.

    ``observer`` must be solved for the same policy and (original, not
    renumbered) parameters; it is built when omitted.
    """
    policy = Policy.parse(policy)
    n = params.n
    perm = swap_permutation(n, tagged)
    prm = params.swapped(tagged)
    if observer is None:
        observer = solve_observer(policy, params)
    if observer.policy is not policy or observer.params != params:
        raise ValueError("observer chain was built for a different policy or parameters")
    if observer.stationary is None:
        raise ValueError("observer chain has no stationary distribution")

    q1, q2, q3, q4 = enumerate_phase_states(policy, n)
    space = StateSpace(q1 + q2 + q3 + q4)
    L = len(space) - 1

    rows, cols, vals = [], [], []
    h = np.zeros(L)
    out = np.zeros(L)
    moves = _MOVES[policy]
    for a in range(L):
        for target, rate in moves(space[a], prm):
            out[a] += rate
            if target == PHASE4:
                h[a] += rate
                continue
            try:
                b = space.index(target)
            except MembershipError:
                raise ModelConstructionError(
                    f"{serialize(space[a])} leads to {serialize(target)}, which is outside the phase space"
                ) from None
            if b == a:
                raise ModelConstructionError(f"self-loop at {serialize(target)}")
            rows.append(a)
            cols.append(b)
            vals.append(rate)
    rows += range(L)
    cols += range(L)
    vals = np.concatenate([vals, -out])
    W = sp.csr_matrix((vals, (rows, cols)), shape=(L, L))
    W.sum_duplicates()
    if L <= dense_limit:
        W = W.toarray()

    alpha = np.zeros(L)
    for state, prob in zip(observer.states, observer.stationary):
        alpha[space.index(arrival_image(policy, relabel(state, perm)))] += prob
    mass = alpha.sum()
    if abs(mass - 1.0) > ALPHA_SLACK:
        raise ModelConstructionError(f"phase-4 exit probabilities sum to {mass!r}, expected 1")
    alpha /= mass

    beta = np.zeros(L)
    lo = len(q1) + len(q2)
    beta[lo : lo + len(q3)] = 1.0
    return MfqModel(policy, params, tagged, space, (len(q1), len(q2), len(q3)), W, h, alpha, beta)


def build_all(policy: Policy | str, params: SourceParams, **kw) -> list[MfqModel]:
    """Models for every source, sharing one observer solve."""
    policy = Policy.parse(policy)
    observer = solve_observer(policy, params)
    return [build_mfq(policy, params, n, observer, **kw) for n in range(1, params.n + 1)]


def state_count(policy: Policy | str, n: int) -> int:
    """Order L of W for ``n`` sources."""
    return sum(len(q) for q in enumerate_phase_states(policy, n)[:3])


# -- validation ----------------------------------------------------------------


@dataclass
class Violation:
    check: str
    state: str | None
    detail: str

    def __str__(self) -> str:
        where = f" at {self.state}" if self.state else ""
        return f"{self.check}{where}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation]
    max_row_residual: float
    alpha_mass: float
    beta_support_ok: bool
    solvable: bool

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_failed(self) -> None:
        if self.violations:
            raise ModelValidationError(self)


class ModelValidationError(ModelConstructionError):
    def __init__(self, report: ValidationReport):
        self.report = report
        lines = "\n  ".join(map(str, report.violations[:20]))
        super().__init__(f"{len(report.violations)} invariant violation(s):\n  {lines}")


def validate_mfq(model: MfqModel, tol: float = 1e-9) -> ValidationReport:
    """Check every structural invariant of an assembled model."""
    L = model.L
    bad: list[Violation] = []
    name = lambda k: serialize(model.space[k])
    W = sp.csr_matrix(model.W)

    diag = W.diagonal()
    off = W - sp.diags(diag)
    off.eliminate_zeros()
    neg = off.data < 0
    if neg.any():
        r = np.repeat(np.arange(L), np.diff(off.indptr))[neg]
        bad.extend(Violation("negative off-diagonal", name(k), "W has a negative rate") for k in sorted(set(r)))
    for k in np.flatnonzero(diag >= 0):
        bad.append(Violation("diagonal", name(k), f"W diagonal {diag[k]!r} is not negative"))

    rowsum = np.asarray(W.sum(axis=1)).ravel()
    resid = np.abs(rowsum + model.h)
    scale = np.maximum(1.0, np.abs(diag))
    for k in np.flatnonzero(resid > tol * scale):
        bad.append(Violation("row sum", name(k), f"W*1 + h = {rowsum[k] + model.h[k]:.3e}"))
    if (model.h < 0).any():
        for k in np.flatnonzero(model.h < 0):
            bad.append(Violation("h sign", name(k), f"h = {model.h[k]!r}"))
    if not model.h.any():
        bad.append(Violation("h support", None, "no transition into phase 4"))

    mass = float(model.alpha.sum())
    if abs(mass - 1.0) > tol:
        bad.append(Violation("alpha mass", None, f"sum(alpha) = {mass!r}"))
    for k in np.flatnonzero(model.alpha < 0):
        bad.append(Violation("alpha sign", name(k), f"alpha = {model.alpha[k]!r}"))
    for k in np.flatnonzero(model.alpha):
        if model.phase_of(k) not in (1, 2):
            bad.append(Violation("alpha support", name(k), "phase-4 exit into a phase-3 state"))

    expected = np.array([1.0 if model.phase_of(k) == 3 else 0.0 for k in range(L)])
    beta_ok = bool(np.array_equal(expected, model.beta))
    if not beta_ok:
        for k in np.flatnonzero(expected != model.beta):
            bad.append(Violation("beta", name(k), f"beta = {model.beta[k]!r}"))

    solvable = True
    try:
        x = spla.splu(W.tocsc()).solve(-np.ones(L))
        if not np.all(np.isfinite(x)) or (x <= 0).any():
            solvable = False
            bad.append(Violation("solvability", None, "W x = -1 has a non-positive or non-finite solution"))
    except RuntimeError as exc:
        solvable = False
        bad.append(Violation("solvability", None, f"W is singular: {exc}"))

    return ValidationReport(bad, float(resid.max(initial=0.0)), mass, beta_ok, solvable)
