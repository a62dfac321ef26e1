"""Shared domain types: source parameters, policies, packet tags and states.

States are plain immutable tuples so they hash, compare and serialize
cheaply.  Every state has a textual serialization (``serialize``) and a
canonical sort key (``sort_key``).  The sort key compares the serialized
token sequence token-by-token, where a token is ordered as

    -1 (idle/sentinel) < 0 (empty) < 1 < 2 < ... < N < 1p < 1c < 1n

so the ordering is lexicographic on the serialization without the
"10" < "2" artefact of raw string comparison.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence, Union


class Policy(str, enum.Enum):
    FSFS = "fsfs"
    ESFS = "esfs"
    SBR = "sbr"

    @classmethod
    def parse(cls, value: "str | Policy") -> "Policy":
        if isinstance(value, Policy):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown policy {value!r}; expected one of fsfs, esfs, sbr") from None

    def __str__(self) -> str:
        return self.name


class Tag(enum.IntEnum):
    """Labels for tagged-source packets inside the phase chain.

    Values sit above any realistic source index so that plain integer
    comparison gives the canonical token order.
    """

    PREV = 1_000_001  # 1_p: tagged packet already in service when 1_c arrives
    CUR = 1_000_002  # 1_c: packet that opened the cycle
    NEXT = 1_000_003  # 1_n: next tagged packet to reach the monitor

    def __str__(self) -> str:
        return _TAG_TEXT[self]

    __repr__ = __str__


_TAG_TEXT = {Tag.PREV: "1p", Tag.CUR: "1c", Tag.NEXT: "1n"}
TAGGED_SOURCE = 1


def source_of(token: int) -> int:
    """Physical source index behind a token (tags all belong to source 1)."""
    return TAGGED_SOURCE if token >= Tag.PREV else int(token)


def token_text(token: int) -> str:
    if token >= Tag.PREV:
        return str(Tag(token))
    return str(int(token))


@dataclass(frozen=True)
class SourceParams:
    """Per-source Poisson arrival rates and exponential service rates."""

    lambdas: tuple[float, ...]
    mus: tuple[float, ...]

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        mu = tuple(float(x) for x in self.mus)
        if len(lam) != len(mu):
            raise ValueError(f"got {len(lam)} arrival rates but {len(mu)} service rates")
        if not lam:
            raise ValueError("at least one source is required")
        for name, values in (("arrival", lam), ("service", mu)):
            for k, v in enumerate(values, start=1):
                if not (math.isfinite(v) and v > 0):
                    raise ValueError(f"{name} rate of source {k} must be positive and finite, got {v}")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "mus", mu)

    @classmethod
    def balanced(cls, n: int, rho: float, mu: float = 1.0) -> "SourceParams":
        """All sources share load rho/n and service rate mu."""
        return cls((rho * mu / n,) * n, (mu,) * n)

    @property
    def n(self) -> int:
        return len(self.lambdas)

    @property
    def loads(self) -> tuple[float, ...]:
        return tuple(l / m for l, m in zip(self.lambdas, self.mus))

    @property
    def load(self) -> float:
        return sum(self.loads)

    def lam(self, token: int) -> float:
        return self.lambdas[source_of(token) - 1]

    def mu(self, token: int) -> float:
        return self.mus[source_of(token) - 1]

    def swapped(self, source: int) -> "SourceParams":
        """Rates with source 1 and ``source`` exchanged."""
        perm = swap_permutation(self.n, source)
        return SourceParams(
            tuple(self.lambdas[perm[k] - 1] for k in range(1, self.n + 1)),
            tuple(self.mus[perm[k] - 1] for k in range(1, self.n + 1)),
        )


def swap_permutation(n: int, source: int) -> dict[int, int]:
    """Map of source labels exchanging 1 and ``source``; other labels fixed."""
    if not 1 <= source <= n:
        raise ValueError(f"tagged source must be in 1..{n}, got {source}")
    perm = {k: k for k in range(-1, n + 1)}
    perm[1], perm[source] = source, 1
    return perm


# -- observer / phase payloads -------------------------------------------------


class FsfsState(NamedTuple):
    """Server content and queue in first-arrival order; ``(0, ())`` is idle."""

    server: int
    queue: tuple[int, ...]


class EsfsState(NamedTuple):
    """Service order (least recently served first) and queued sources.

    ``queue`` is ``None`` when the server is idle, ``()`` when busy with an
    empty waiting room, otherwise the sorted tuple of queued sources.
    """

    order: tuple[int, ...]
    queue: tuple[int, ...] | None


class SbrState(NamedTuple):
    """Server content and the single shared buffer slot (0 when empty)."""

    server: int
    buffer: int


ObserverState = Union[FsfsState, EsfsState, SbrState]


class PhaseState(NamedTuple):
    phase: int
    payload: ObserverState | None


PHASE4 = PhaseState(4, None)


def serialize(state) -> str:
    if isinstance(state, PhaseState):
        if state.phase == 4:
            return "P4:(-1,(-1))"
        return f"P{state.phase}:{serialize(state.payload)}"
    if isinstance(state, FsfsState):
        q = ",".join(map(token_text, state.queue)) if state.queue else "0"
        return f"({token_text(state.server)},({q}))"
    if isinstance(state, EsfsState):
        h = ",".join(map(token_text, state.order))
        if state.queue is None:
            c = "-1"
        else:
            c = ",".join(map(token_text, state.queue)) if state.queue else "0"
        return f"(({h}),{{{c}}})"
    if isinstance(state, SbrState):
        return f"({token_text(state.server)},({token_text(state.buffer)}))"
    raise TypeError(f"not a state: {state!r}")


def sort_key(state) -> tuple:
    if isinstance(state, PhaseState):
        return (state.phase, () if state.payload is None else sort_key(state.payload))
    if isinstance(state, FsfsState):
        return (int(state.server), tuple(state.queue) or (0,))
    if isinstance(state, EsfsState):
        c = (-1,) if state.queue is None else (tuple(state.queue) or (0,))
        return (tuple(state.order), c)
    if isinstance(state, SbrState):
        return (int(state.server), int(state.buffer))
    raise TypeError(f"not a state: {state!r}")


class MembershipError(KeyError):
    """Raised when a state is looked up in a space that does not contain it."""


class StateSpace(Sequence):
    """Canonically ordered, indexable collection of distinct states."""

    def __init__(self, states: Iterable):
        ordered = sorted(set(states), key=sort_key)
        self._states = tuple(ordered)
        self._index = {s: k for k, s in enumerate(self._states)}

    def __len__(self) -> int:
        return len(self._states)

    def __getitem__(self, k):
        return self._states[k]

    def __contains__(self, state) -> bool:
        return state in self._index

    def __iter__(self):
        return iter(self._states)

    def index(self, state, *args) -> int:
        try:
            return self._index[state]
        except (KeyError, TypeError):
            try:
                text = serialize(state)
            except TypeError:
                text = repr(state)
            raise MembershipError(f"state {text} is not in this space") from None


def canonical_index(state, space: StateSpace) -> int:
    return space.index(state)


# -- policy mechanics shared by the observer and phase chains -------------------


def upsilon(order: tuple[int, ...], served: int) -> tuple[int, ...]:
    """Move ``served`` to the back of the service order (most recently served)."""
    k = order.index(served)
    return order[:k] + order[k + 1 :] + (served,)


def esfs_pick(order: Sequence[int], queued: Iterable[int]) -> int:
    """Queued source that has gone longest without service."""
    members = set(queued)
    for h in order:
        if h in members:
            return h
    raise ValueError("no queued source to select")


def relabel(state: ObserverState, perm: dict[int, int]) -> ObserverState:
    """Apply a source relabeling to an observer state (sentinels untouched)."""
    if isinstance(state, FsfsState):
        return FsfsState(perm[state.server], tuple(perm[s] for s in state.queue))
    if isinstance(state, EsfsState):
        q = None if state.queue is None else tuple(sorted(perm[s] for s in state.queue))
        return EsfsState(tuple(perm[h] for h in state.order), q)
    if isinstance(state, SbrState):
        return SbrState(perm[state.server], perm[state.buffer])
    raise TypeError(f"not an observer state: {state!r}")
