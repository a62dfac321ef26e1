import pytest

from aoimfq.core import (
    EsfsState,
    FsfsState,
    MembershipError,
    PHASE4,
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

C, P, N = Tag.CUR, Tag.PREV, Tag.NEXT


def test_policy_parse():
    assert Policy.parse(" ESFS ") is Policy.ESFS
    assert Policy.parse(Policy.SBR) is Policy.SBR
    assert str(Policy.FSFS) == "FSFS"
    with pytest.raises(ValueError, match="unknown policy"):
        Policy.parse("lcfs")


@pytest.mark.parametrize("lam, mu", [((1, 2), (1,)), ((), ()), ((1, 0), (1, 1)), ((1,), (float("inf"),)), ((-1,), (1,))])
def test_source_params_rejects_bad_rates(lam, mu):
    with pytest.raises(ValueError):
        SourceParams(lam, mu)


def test_source_params_views():
    prm = SourceParams((1, 2, 3), (2, 4, 6))
    assert prm.n == 3 and prm.loads == (0.5, 0.5, 0.5) and prm.load == 1.5
    assert prm.lam(C) == 1.0 and prm.mu(3) == 6.0
    sw = prm.swapped(3)
    assert sw.lambdas == (3.0, 2.0, 1.0) and sw.mus == (6.0, 4.0, 2.0)
    bal = SourceParams.balanced(4, 2.0, 3.0)
    assert bal.lambdas == (1.5,) * 4 and bal.load == pytest.approx(2.0)


def test_swap_permutation():
    assert swap_permutation(3, 2) == {-1: -1, 0: 0, 1: 2, 2: 1, 3: 3}
    with pytest.raises(ValueError):
        swap_permutation(3, 4)


def test_serialization():
    assert serialize(PHASE4) == "P4:(-1,(-1))"
    assert serialize(FsfsState(0, ())) == "(0,(0))"
    assert serialize(PhaseState(1, FsfsState(P, (2, C)))) == "P1:(1p,(2,1c))"
    assert serialize(EsfsState((1, 2), None)) == "((1,2),{-1})"
    assert serialize(EsfsState((2, 1), ())) == "((2,1),{0})"
    assert serialize(EsfsState((N, 2), (2,))) == "((1n,2),{2})"
    assert serialize(SbrState(C, 0)) == "(1c,(0))"


def test_sort_key_is_tokenwise():
    # raw string order would put 10 before 2
    states = [FsfsState(10, ()), FsfsState(2, ()), FsfsState(C, ()), FsfsState(0, ()), FsfsState(P, ())]
    ordered = [s.server for s in sorted(states, key=sort_key)]
    assert ordered == [0, 2, 10, P, C]
    assert sort_key(EsfsState((1, 2), None)) < sort_key(EsfsState((1, 2), ())) < sort_key(EsfsState((1, 2), (1,)))
    assert sort_key(PhaseState(3, SbrState(9, 9))) < sort_key(PHASE4)


def test_state_space_lookup():
    space = StateSpace([SbrState(1, 0), SbrState(0, 0), SbrState(1, 0)])
    assert len(space) == 2 and space[0] == SbrState(0, 0)
    assert space.index(SbrState(1, 0)) == 1
    with pytest.raises(MembershipError):
        space.index(SbrState(2, 2))
    with pytest.raises(KeyError):
        space.index("not a state")


def test_esfs_mechanics():
    assert upsilon((3, 1, 2), 1) == (3, 2, 1)
    assert esfs_pick((3, 1, 2), {2, 1}) == 1
    with pytest.raises(ValueError):
        esfs_pick((1, 2), ())


def test_relabel():
    perm = swap_permutation(3, 3)
    assert relabel(FsfsState(3, (1, 2)), perm) == FsfsState(1, (3, 2))
    assert relabel(EsfsState((3, 1, 2), (1, 3)), perm) == EsfsState((1, 3, 2), (1, 3))
    assert relabel(EsfsState((1, 2, 3), None), perm).queue is None
    assert relabel(SbrState(0, 3), perm) == SbrState(0, 1)
