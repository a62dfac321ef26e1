import numpy as np
import pytest
import scipy.linalg

from aoimfq import Policy, SourceParams, solve_observer
from aoimfq.core import FsfsState, SbrState
from aoimfq.observer import NumericalError, enumerate_observer_states, stationary_distribution

OBSERVER_SIZES = {Policy.FSFS: (3, 11, 49), Policy.ESFS: (3, 10, 54), Policy.SBR: (3, 7, 13)}


def _brute_observer_size(policy, n):
    from math import comb, factorial, perm
    if policy is Policy.SBR:
        return 1 + n * (n + 1)
    if policy is Policy.FSFS:
        # idle, or a server source plus an ordered queue of distinct sources
        return 1 + n * sum(perm(n, k) for k in range(n + 1))
    # full service order, idle or busy with any subset queued
    return factorial(n) * (1 + sum(comb(n, k) for k in range(n + 1)))


@pytest.mark.parametrize("policy", list(Policy))
def test_observer_state_counts(policy):
    got = tuple(len(enumerate_observer_states(policy, n)) for n in (1, 2, 3))
    assert got == tuple(_brute_observer_size(policy, n) for n in (1, 2, 3))
    assert got == OBSERVER_SIZES[policy]


def test_sbr_single_source_stationary():
    chain = solve_observer(Policy.SBR, SourceParams((1.0,), (1.0,)))
    assert list(chain.states) == [SbrState(0, 0), SbrState(1, 0), SbrState(1, 1)]
    np.testing.assert_allclose(chain.stationary, [1 / 3] * 3, atol=1e-15)


def test_fsfs_two_sources_matches_nullspace(hetero):
    prm = SourceParams((1.0, 2.0), (3.0, 1.0))
    chain = solve_observer(Policy.FSFS, prm)
    q = chain.generator()
    ns = scipy.linalg.null_space(q.T)
    assert ns.shape[1] == 1
    ref = ns[:, 0] / ns[:, 0].sum()
    np.testing.assert_allclose(chain.stationary, ref, atol=1e-13)
    assert chain.probability(FsfsState(0, ())) == pytest.approx(ref[0])


@pytest.mark.parametrize("policy", list(Policy))
def test_generator_rows_sum_to_zero(policy, hetero):
    chain = solve_observer(policy, hetero)
    q = chain.generator()
    np.testing.assert_allclose(q.sum(axis=1), 0, atol=1e-12)
    assert (chain.rates > 0).all()
    assert abs(chain.stationary @ q).max() < 1e-12


def _idle(chain):
    return sum(p for s, p in zip(chain.states, chain.stationary) if s[-1] is None or s[0] == 0)


def test_fsfs_and_esfs_idle_equally_often():
    # with identical sources the admission rate depends only on how many
    # sources are waiting, not which, so the packet count has the same law
    prm = SourceParams.balanced(3, 0.9, 1.5)
    idle = {p: _idle(solve_observer(p, prm)) for p in Policy}
    assert idle[Policy.FSFS] == pytest.approx(idle[Policy.ESFS], abs=1e-12)
    # a shared slot admits fewer packets, so SBR idles at least as often
    assert idle[Policy.SBR] >= idle[Policy.FSFS]


def test_single_source_idle_probability():
    # N=1: the observer chain is birth-death with states idle, busy, busy+1
    r = 0.7
    for p in Policy:
        assert _idle(solve_observer(p, SourceParams((r,), (1.0,)))) == pytest.approx(1 / (1 + r + r * r))


def test_dump_format(tmp_path):
    chain = solve_observer(Policy.SBR, SourceParams((1.0,), (2.0,)))
    path = tmp_path / "obs.txt"
    chain.dump(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "(0,(0)) | (1,(0)) | 1.0"
    assert all(line.count(" | ") == 2 for line in lines)
    assert len(lines) == chain.rates.size


def test_singular_generator_is_reported():
    chain = solve_observer(Policy.SBR, SourceParams((1.0,), (1.0,)))
    from dataclasses import replace
    broken = replace(chain, rates=np.zeros_like(chain.rates))
    with pytest.raises(NumericalError):
        stationary_distribution(broken)
