from dataclasses import replace

import numpy as np
import pytest

from aoimfq import Policy, SourceParams, build_all, build_mfq, solve_observer, state_count, validate_mfq
from aoimfq.core import PHASE4, FsfsState, PhaseState, SbrState, Tag, serialize
from aoimfq.distribution import AoiDistribution
from aoimfq.mfq import ModelConstructionError, ModelValidationError, enumerate_phase_states

C, P = Tag.CUR, Tag.PREV


def test_single_source_sbr_blocks():
    m = build_mfq(Policy.SBR, SourceParams((1.0,), (1.0,)))
    names = [serialize(s) for s in m.space]
    assert names == ["P1:(1p,(1c))", "P2:(1c,(0))", "P2:(1c,(1n))", "P3:(0,(0))", "P3:(1n,(0))", "P4:(-1,(-1))"]
    assert m.L == 5 and m.sizes == (1, 2, 2)
    alpha = dict(zip(names, m.alpha))
    assert alpha["P2:(1c,(0))"] == pytest.approx(1 / 3, abs=1e-15)
    assert alpha["P1:(1p,(1c))"] == pytest.approx(2 / 3, abs=1e-15)
    assert m.beta.tolist() == [0, 0, 0, 1, 1]


@pytest.mark.parametrize("policy", list(Policy))
@pytest.mark.parametrize("n", [1, 2, 3])
def test_models_validate(policy, n, hetero):
    prm = SourceParams(hetero.lambdas[:n], hetero.mus[:n])
    for m in build_all(policy, prm):
        rep = validate_mfq(m)
        assert rep.ok, [str(v) for v in rep.violations]
        assert rep.max_row_residual < 1e-12
        assert m.L == state_count(policy, n)


def test_phase_spaces_are_disjoint_and_ordered():
    q1, q2, q3, q4 = enumerate_phase_states(Policy.FSFS, 2)
    assert q4 == [PHASE4]
    assert {s.phase for s in q1} == {1} and {s.phase for s in q3} == {3}
    assert PhaseState(2, FsfsState(C, ())) in q2
    assert PhaseState(1, FsfsState(P, (C,))) in q1


def test_mutated_row_is_reported():
    m = build_mfq(Policy.FSFS, SourceParams((1.0, 2.0), (3.0, 1.0)))
    W = m.dense_W().copy()
    k = 3
    W[k, k] *= 1.5
    rep = validate_mfq(replace(m, W=W))
    assert not rep.ok
    assert [v.check for v in rep.violations] == ["row sum"]
    assert rep.violations[0].state == serialize(m.space[k])
    with pytest.raises(ModelValidationError, match="row sum"):
        rep.raise_if_failed()


def test_validation_catches_bad_alpha_and_beta():
    m = build_mfq(Policy.SBR, SourceParams((1.0, 2.0), (1.0, 1.0)))
    alpha = np.zeros(m.L)
    alpha[-1] = 1.0  # a phase-3 state
    beta = m.beta.copy()
    beta[0] = 1.0
    checks = {v.check for v in validate_mfq(replace(m, alpha=alpha, beta=beta)).violations}
    assert checks == {"alpha support", "beta"}


def test_observer_mismatch_rejected():
    prm = SourceParams((1.0, 2.0), (3.0, 1.0))
    other = solve_observer(Policy.FSFS, SourceParams((1.0, 2.5), (3.0, 1.0)))
    with pytest.raises(ValueError):
        build_mfq(Policy.FSFS, prm, observer=other)
    with pytest.raises(ValueError):
        build_mfq(Policy.ESFS, prm, observer=solve_observer(Policy.FSFS, prm))


@pytest.mark.parametrize("policy", list(Policy))
def test_tagging_another_source_equals_swapping_rates(policy):
    prm = SourceParams((0.7, 1.9, 0.4), (2.0, 1.1, 3.3))
    via_tag = AoiDistribution.from_model(build_mfq(policy, prm, tagged=3))
    via_swap = AoiDistribution.from_model(build_mfq(policy, prm.swapped(3), tagged=1))
    xs = np.linspace(0, 10, 41)
    np.testing.assert_allclose(via_tag.cdf(xs), via_swap.cdf(xs), atol=1e-12)
    assert via_tag.mean == pytest.approx(via_swap.mean, rel=1e-12)


def test_sparse_and_dense_assembly_agree():
    prm = SourceParams((1.0, 2.0, 0.5), (3.0, 1.0, 2.0))
    dense = build_mfq(Policy.ESFS, prm)
    sparse = build_mfq(Policy.ESFS, prm, dense_limit=0)
    assert not dense.is_sparse and sparse.is_sparse
    np.testing.assert_array_equal(dense.W, sparse.W.toarray())
    a, b = AoiDistribution.from_model(dense), AoiDistribution.from_model(sparse)
    assert a.mean == pytest.approx(b.mean, rel=1e-12)
    xs = np.linspace(0, 8, 9)
    np.testing.assert_allclose(a.cdf(xs), b.cdf(xs), atol=1e-13)


def test_dump(tmp_path):
    m = build_mfq(Policy.SBR, SourceParams((1.0,), (1.0,)))
    path = tmp_path / "m.txt"
    m.dump(path)
    text = path.read_text()
    assert "P4:(-1,(-1)) | 4 | 5" in text
    assert "np.float64" not in text
    assert text.count("# ") == 4


def test_construction_error_is_runtime_error():
    assert issubclass(ModelConstructionError, RuntimeError)
    assert SbrState(0, 0) != SbrState(0, C)
