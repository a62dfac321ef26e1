"""Event-driven simulation of the N-source single-server update system.

Each source keeps its own exponential next-arrival clock and the server a
service-completion clock; the earliest clock fires next, with ties going to
the service completion and then to the lower source index.  Nothing here
depends on the fluid model: the per-source AoI is integrated exactly along
its piecewise-linear sawtooth, and the empirical CDF on a grid is the exact
fraction of observed time the AoI spends at or below each grid point.

Initial condition: empty system, idle server, every AoI zero and (ESFS)
service order 1, 2, ..., N.  The first ``warmup`` fraction of the budget is
discarded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba
import numpy as np

from .core import EsfsState, FsfsState, Policy, SbrState, SourceParams, StateSpace
from .observer import enumerate_observer_states

_POLICY_CODE = {Policy.FSFS: 0, Policy.ESFS: 1, Policy.SBR: 2}
# largest N for which observer-state occupancy is tracked
MAX_TRACKED_N = 5


@dataclass(frozen=True)
class SimConfig:
    params: SourceParams
    policy: Policy
    horizon: float | None = None  # simulated seconds
    events: int | None = None  # event budget (alternative to horizon)
    seed: int = 0
    cdf_grid: tuple[float, ...] = ()
    warmup: float = 0.1
    track_observer: bool = True

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy.parse(self.policy))
        object.__setattr__(self, "cdf_grid", tuple(float(x) for x in self.cdf_grid))
        if (self.horizon is None) == (self.events is None):
            raise ValueError("give exactly one of horizon (seconds) or events")
        if self.horizon is not None and not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.events is not None and int(self.events) < 1:
            raise ValueError(f"event budget must be positive, got {self.events}")
        if not 0.0 <= self.warmup < 0.5:
            raise ValueError(f"warmup fraction must be in [0, 0.5), got {self.warmup}")
        g = np.asarray(self.cdf_grid)
        if g.size and ((g < 0).any() or (np.diff(g) <= 0).any()):
            raise ValueError("cdf grid must be nonnegative and strictly increasing")


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    per_source_mean: np.ndarray
    per_source_cdf: np.ndarray  # N x len(grid)
    observed_time: float
    event_count: int
    observer_states: StateSpace | None = field(default=None, repr=False)
    observer_occupancy: np.ndarray | None = field(default=None, repr=False)
    arrival_seen: np.ndarray | None = field(default=None, repr=False)  # N x states
    deliveries: np.ndarray | None = field(default=None, repr=False)
    arrival_counts: np.ndarray | None = field(default=None, repr=False)  # N x states

    @property
    def grid(self) -> np.ndarray:
        return np.asarray(self.config.cdf_grid)

    @property
    def mean_aoi(self) -> float:
        return float(self.per_source_mean.mean())

    def violation(self, gamma: float) -> np.ndarray:
        """Per-source empirical Pr{AoI > gamma}; gamma must be a grid point."""
        k = np.flatnonzero(np.isclose(self.grid, gamma, rtol=0, atol=1e-12))
        if not k.size:
            raise ValueError(f"gamma {gamma} is not on the simulation grid")
        return 1.0 - self.per_source_cdf[:, k[0]]

    def arrival_seen_pooled(self) -> np.ndarray:
        counts = self.arrival_counts.sum(axis=0)
        return counts / counts.sum()


# -- kernel --------------------------------------------------------------------


@numba.njit(cache=True)
def _fsfs_code(busy, queue, qlen, n):
    code = busy + 1
    base = n + 1
    mult = base
    for k in range(qlen):
        code += (queue[k] + 1) * mult
        mult *= base
    return code


@numba.njit(cache=True)
def _esfs_code(busy, order, has, n):
    oc = 0
    mult = 1
    for k in range(n):
        oc += order[k] * mult
        mult *= n
    if busy < 0:
        status = 0
    else:
        status = 1
        bit = 1
        for s in range(n):
            if has[s]:
                status += bit
            bit *= 2
    return oc * ((1 << n) + 1) + status


@numba.njit(cache=True)
def _sbr_code(busy, sbr_src, n):
    return (busy + 1) * (n + 1) + (sbr_src + 1)


@numba.njit(cache=True)
def _close_segment(s, t_end, ws, seg_start, u, area, grid, st_cnt, st_sum, en_cnt, en_sum):
    """Account the linear AoI piece of source s on [seg_start[s], t_end] within the window."""
    a = seg_start[s]
    if t_end <= ws:
        return
    if a < ws:
        a = ws
    d = t_end - a
    if d <= 0.0:
        return
    a0 = a - u[s]
    a1 = a0 + d
    area[s] += a0 * d + 0.5 * d * d
    k0 = np.searchsorted(grid, a0)
    k1 = np.searchsorted(grid, a1)
    st_cnt[s, k0] += 1.0
    st_sum[s, k0] += a0
    en_cnt[s, k1] += 1.0
    en_sum[s, k1] += a1


@numba.njit(cache=True)
def _run(policy, lam, mu, seed, t_budget, ev_budget, t_warm, ev_warm, grid, track, n_codes):
    np.random.seed(seed)
    n = lam.size
    G = grid.size
    inf = np.inf

    next_arr = np.empty(n)
    for s in range(n):
        next_arr[s] = np.random.exponential(1.0 / lam[s])
    svc_end = inf
    busy = -1  # source in service, -1 idle
    busy_gen = 0.0

    has = np.zeros(n, dtype=np.bool_)  # per-source waiting packet (FSFS/ESFS)
    gen = np.zeros(n)
    queue = np.zeros(n, dtype=np.int64)  # FSFS first-arrival order
    qlen = 0
    order = np.arange(n)  # ESFS, least recently served first
    sbr_src = -1
    sbr_gen = 0.0

    u = np.zeros(n)  # generation time of freshest delivered packet
    seg_start = np.zeros(n)
    area = np.zeros(n)
    st_cnt = np.zeros((n, G + 1))
    st_sum = np.zeros((n, G + 1))
    en_cnt = np.zeros((n, G + 1))
    en_sum = np.zeros((n, G + 1))
    delivered = np.zeros(n, dtype=np.int64)

    size = n_codes if track else 1
    occ = np.zeros(size)
    seen = np.zeros((n, size))

    ws = t_warm if t_budget > 0 else inf
    t = 0.0
    events = 0
    code = 0
    while True:
        if ev_budget > 0 and events == ev_warm and ws == inf:
            ws = t
        # next event: service completion wins ties, then lowest source index
        t_next = svc_end
        who = -1
        for s in range(n):
            if next_arr[s] < t_next:
                t_next = next_arr[s]
                who = s
        stop = False
        if t_budget > 0 and t_next > t_budget:
            t_next = t_budget
            stop = True
        if track:
            if policy == 0:
                code = _fsfs_code(busy, queue, qlen, n)
            elif policy == 1:
                code = _esfs_code(busy, order, has, n)
            else:
                code = _sbr_code(busy, sbr_src, n)
            lo = t if t > ws else ws
            if t_next > lo:
                occ[code] += t_next - lo
        if stop:
            t = t_next
            break
        t = t_next
        events += 1
        measuring = t > ws

        if who >= 0:
            s = who
            next_arr[s] = t + np.random.exponential(1.0 / lam[s])
            if track and measuring:
                seen[s, code] += 1.0
            if busy < 0:
                busy = s
                busy_gen = t
                svc_end = t + np.random.exponential(1.0 / mu[s])
                if policy == 1:
                    k = 0
                    while order[k] != s:
                        k += 1
                    for m in range(k, n - 1):
                        order[m] = order[m + 1]
                    order[n - 1] = s
            elif policy == 2:
                sbr_src = s
                sbr_gen = t
            else:
                if not has[s]:
                    has[s] = True
                    if policy == 0:
                        queue[qlen] = s
                        qlen += 1
                gen[s] = t
        else:
            s = busy
            _close_segment(s, t, ws, seg_start, u, area, grid, st_cnt, st_sum, en_cnt, en_sum)
            seg_start[s] = t
            u[s] = busy_gen
            if measuring:
                delivered[s] += 1
            nxt = -1
            if policy == 0:
                if qlen > 0:
                    nxt = queue[0]
                    for m in range(qlen - 1):
                        queue[m] = queue[m + 1]
                    qlen -= 1
            elif policy == 1:
                for k in range(n):
                    if has[order[k]]:
                        nxt = order[k]
                        for m in range(k, n - 1):
                            order[m] = order[m + 1]
                        order[n - 1] = nxt
                        break
            else:
                nxt = sbr_src
                sbr_src = -1
            if nxt >= 0:
                busy = nxt
                if policy == 2:
                    busy_gen = sbr_gen
                else:
                    busy_gen = gen[nxt]
                    has[nxt] = False
                svc_end = t + np.random.exponential(1.0 / mu[nxt])
            else:
                busy = -1
                svc_end = inf
        if ev_budget > 0 and events >= ev_budget:
            break

    for s in range(n):
        _close_segment(s, t, ws, seg_start, u, area, grid, st_cnt, st_sum, en_cnt, en_sum)
    window = t - ws if ws < t else 0.0

    cdf = np.zeros((n, G))
    for s in range(n):
        c0 = 0.0
        s0 = 0.0
        c1 = 0.0
        s1 = 0.0
        for j in range(G):
            c0 += st_cnt[s, j]
            s0 += st_sum[s, j]
            c1 += en_cnt[s, j]
            s1 += en_sum[s, j]
            # time with AoI <= grid[j]: ramps started minus ramps ended below it
            cdf[s, j] = (grid[j] * c0 - s0) - (grid[j] * c1 - s1)
    return area, cdf, window, events, occ, seen, delivered


# -- observer-state decoding ---------------------------------------------------


def _code_count(policy: Policy, n: int) -> int:
    if policy is Policy.FSFS:
        return (n + 1) ** (n + 1)
    if policy is Policy.ESFS:
        return n**n * (2**n + 1)
    return (n + 1) ** 2


def _decode(policy: Policy, code: int, n: int):
    if policy is Policy.FSFS:
        base = n + 1
        server = code % base - 1
        code //= base
        queue = []
        while code:
            queue.append(code % base)
            code //= base
        return FsfsState(server + 1, tuple(queue)) if server >= 0 else FsfsState(0, ())
    if policy is Policy.ESFS:
        oc, status = divmod(code, 2**n + 1)
        order = []
        for _ in range(n):
            oc, d = divmod(oc, n)
            order.append(d + 1)
        if status == 0:
            return EsfsState(tuple(order), None)
        bits = status - 1
        return EsfsState(tuple(order), tuple(s + 1 for s in range(n) if bits >> s & 1))
    server, buf = divmod(code, n + 1)
    return SbrState(server, buf)


def _occupancy(policy: Policy, n: int, occ: np.ndarray, seen: np.ndarray):
    space = enumerate_observer_states(policy, n)
    occupancy = np.zeros(len(space))
    counts = np.zeros((n, len(space)))
    for code in np.flatnonzero((occ > 0) | (seen.sum(axis=0) > 0)):
        k = space.index(_decode(policy, int(code), n))
        occupancy[k] += occ[code]
        counts[:, k] += seen[:, code]
    return space, occupancy, counts


def simulate(config: SimConfig) -> SimResult:
    params = config.params
    n = params.n
    lam = np.asarray(params.lambdas, dtype=float)
    mu = np.asarray(params.mus, dtype=float)
    grid = np.asarray(config.cdf_grid, dtype=float)
    track = config.track_observer and n <= MAX_TRACKED_N
    n_codes = _code_count(config.policy, n) if track else 1
    if config.horizon is not None:
        t_budget, ev_budget = float(config.horizon), 0
        t_warm, ev_warm = config.warmup * t_budget, 0
    else:
        t_budget, ev_budget = 0.0, int(config.events)
        t_warm, ev_warm = 0.0, int(config.warmup * ev_budget)
    area, ramp, window, events, occ, seen, delivered = _run(
        _POLICY_CODE[config.policy], lam, mu, int(config.seed), t_budget, ev_budget,
        t_warm, ev_warm, grid, track, n_codes,
    )
    if window <= 0:
        raise ValueError("simulation budget left no observation window")
    result = SimResult(
        config,
        per_source_mean=area / window,
        per_source_cdf=np.clip(ramp / window, 0.0, 1.0),
        observed_time=float(window),
        event_count=int(events),
        deliveries=delivered,
    )
    if track:
        space, occupancy, counts = _occupancy(config.policy, n, occ, seen)
        totals = counts.sum(axis=1, keepdims=True)
        result = replace(
            result,
            observer_states=space,
            observer_occupancy=occupancy / occupancy.sum(),
            arrival_seen=counts / np.where(totals > 0, totals, 1.0),
            arrival_counts=counts,
        )
    return result


# -- replications --------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationSummary:
    runs: int
    mean_aoi: float
    mean_aoi_stderr: float
    per_source_mean: np.ndarray
    per_source_stderr: np.ndarray
    cdf_mean: np.ndarray
    cdf_stderr: np.ndarray


def replicate(config: SimConfig, runs: int) -> tuple[list[SimResult], ReplicationSummary]:
    """Independent runs with seeds spawned from ``config.seed``."""
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(runs)]
    results = [simulate(replace(config, seed=s)) for s in seeds]
    return results, summarize(results)


def summarize(results: Sequence[SimResult]) -> ReplicationSummary:
    means = np.array([r.per_source_mean for r in results])
    overall = means.mean(axis=1)
    cdfs = np.array([r.per_source_cdf for r in results])
    k = len(results)

    def stderr(x):
        if k < 2:
            return np.zeros_like(x.mean(axis=0))
        return x.std(axis=0, ddof=1) / math.sqrt(k)

    return ReplicationSummary(
        runs=k,
        mean_aoi=float(overall.mean()),
        mean_aoi_stderr=float(stderr(overall)),
        per_source_mean=means.mean(axis=0),
        per_source_stderr=stderr(means),
        cdf_mean=cdfs.mean(axis=0),
        cdf_stderr=stderr(cdfs),
    )
