import itertools

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiernas.clustering import (
    ClusterAssignment,
    CorrelationAccumulator,
    CorrelationMatrix,
    cluster,
    estimate_correlation,
    pearson,
    reference_groups,
    reference_matrix,
    select_representatives,
)
from hiernas.io import write_ht1
from hiernas.operators import OperatorKind as K, space


def mp_pearson(x, y):
    with mpmath.workdps(50):
        x = [mpmath.mpf(v) for v in x]
        y = [mpmath.mpf(v) for v in y]
        mx, my = sum(x) / len(x), sum(y) / len(y)
        sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
        sxx = sum((a - mx) ** 2 for a in x)
        syy = sum((b - my) ** 2 for b in y)
        return float(sxy / mpmath.sqrt(sxx * syy))


def test_pearson_trivial():
    x = np.array([1.0, 5.0, 2.0, 8.0])
    assert pearson(x, x) == pytest.approx(1.0, abs=1e-15)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)


def test_pearson_matches_extended_precision():
    assert abs(pearson([1, 2, 3, 4], [1, 3, 2, 5]) - mp_pearson([1, 2, 3, 4], [1, 3, 2, 5])) < 1e-12


def test_pearson_errors():
    with pytest.raises(ValueError, match="variance"):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError, match="mismatch"):
        pearson([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=30), st.floats(0.1, 100), st.floats(-50, 50))
def test_pearson_affine_invariance(pairs, a, b):
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
        return
    assert abs(pearson(a * x + b, y) - pearson(x, y)) < 1e-9


def test_estimate_duplicate_streams():
    x = np.random.default_rng(0).standard_normal((10, 4))
    corr = estimate_correlation({"SepConv3": x, "SepConv5": x.copy()})
    assert corr["SepConv3", "SepConv5"] == pytest.approx(1.0, abs=1e-12)


def test_estimate_independent_streams_near_zero():
    rng = np.random.default_rng(42)
    corr = estimate_correlation({"MaxPool3": rng.standard_normal(10**5), "AvgPool3": rng.standard_normal(10**5)})
    assert abs(corr["MaxPool3", "AvgPool3"]) < 0.02


def test_estimate_matches_pearson_of_concatenation(tmp_path):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((50, 2, 3)) + 3
    b = a * 0.5 + rng.standard_normal((50, 2, 3))
    write_ht1(tmp_path / "a.ht1", a.astype(np.float32))
    corr = estimate_correlation({"SepConv3": str(tmp_path / "a.ht1"), "DilConv3": b.astype(np.float32)}, chunk_rows=7)
    expect = mp_pearson(a.astype(np.float32).ravel().tolist(), b.astype(np.float32).ravel().tolist())
    assert corr["SepConv3", "DilConv3"] == pytest.approx(expect, abs=1e-9)
    np.testing.assert_array_equal(corr.values, corr.values.T)


def test_estimate_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        estimate_correlation({"SepConv3": np.ones(5), "SepConv5": np.ones(6)})


def test_accumulator_matches_batch():
    rng = np.random.default_rng(2)
    data = rng.standard_normal((3, 1000)) + np.array([[100.0], [0.0], [-7.0]])
    data[1] += 0.3 * data[0]
    acc = CorrelationAccumulator(["a", "b", "c"])
    for chunk in np.array_split(data, 7, axis=1):
        acc.update(list(chunk))
    np.testing.assert_allclose(acc.result().values, np.corrcoef(data), atol=1e-10)


def test_matrix_invariants_enforced():
    with pytest.raises(ValueError, match="symmetric"):
        CorrelationMatrix(("a", "b"), [[1, 0.5], [0.4, 1]])
    with pytest.raises(ValueError, match="diagonal"):
        CorrelationMatrix(("a", "b"), [[0.9, 0.5], [0.5, 1]])


def test_csv_roundtrip():
    m = reference_matrix("S1")
    back = CorrelationMatrix.from_csv(m.to_csv())
    assert back.labels == m.labels
    np.testing.assert_allclose(back.values, m.values, atol=1e-6)


def test_all_zero_off_diagonal_gives_singletons():
    labels = ["SepConv3", "SepConv5", "MaxPool3"]
    a = cluster(CorrelationMatrix(labels, np.eye(3)), 0.2)
    assert a.as_sets() == {frozenset([K(l)]) for l in labels}


def test_zero_excluded():
    labels = ["SepConv3", "Zero"]
    a = cluster(CorrelationMatrix(labels, [[1, 0.9], [0.9, 1]]), 0.2)
    assert a.as_sets() == {frozenset([K.SepConv3])}


def test_single_linkage_chains():
    labels = ["SepConv3", "SepConv5", "DilConv3"]
    v = np.array([[1, 0.3, 0.0], [0.3, 1, 0.25], [0.0, 0.25, 1]])
    assert cluster(CorrelationMatrix(labels, v), 0.2).as_sets() == {frozenset([K.SepConv3, K.SepConv5, K.DilConv3])}


def test_space_members_missing_from_matrix_become_singletons():
    m = CorrelationMatrix(["SepConv3"], [[1.0]])
    a = cluster(m, 0.2, space("S5"))
    assert a.as_sets() == {frozenset([K.SepConv3]), frozenset([K.SkipConnect])}


@pytest.mark.parametrize("sid", ["S1", "S2", "S3", "S4", "S5"])
def test_fixture_groups_and_key_operators(sid):
    expect = reference_groups(sid)
    got = select_representatives(cluster(reference_matrix(sid), 0.2, space(sid)), space(sid))
    assert got.as_sets() == expect.as_sets()
    assert {r: frozenset(got.group_of(r)) for r in got.representatives} == {
        r: frozenset(expect.group_of(r)) for r in expect.representatives
    }


def test_s1_key_operators():
    a = select_representatives(cluster(reference_matrix("S1"), 0.2, space("S1")), space("S1"))
    assert set(a.representatives) == {K.MaxPool3, K.SkipConnect, K.SepConv3, K.DilConv3}


def test_s2_key_operators():
    a = select_representatives(cluster(reference_matrix("S2"), 0.2, space("S2")), space("S2"))
    assert set(a.representatives) == {K.SkipConnect, K.SepConv3}


def test_singleton_representative():
    a = select_representatives(ClusterAssignment([["DilConv5"]], []), space("S1"))
    assert a.representatives == [K.DilConv5]


def _random_matrix(rng, labels):
    n = len(labels)
    v = rng.uniform(-0.3, 0.6, size=(n, n))
    v = np.triu(v, 1)
    v = v + v.T
    np.fill_diagonal(v, 1.0)
    return v


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.permutations(list(range(7))))
def test_permutation_invariance(seed, perm):
    labels = [k.value for k in space("S1").functional_kinds]
    v = _random_matrix(np.random.default_rng(seed), labels)
    a = cluster(CorrelationMatrix(labels, v), 0.2).as_sets()
    p = list(perm)
    b = cluster(CorrelationMatrix([labels[i] for i in p], v[np.ix_(p, p)]), 0.2).as_sets()
    assert a == b


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_raising_tau_refines(seed, t1, t2):
    lo, hi = sorted((t1, t2))
    labels = [k.value for k in space("S1").functional_kinds]
    m = CorrelationMatrix(labels, _random_matrix(np.random.default_rng(seed), labels))
    coarse = cluster(m, lo).groups
    for g in cluster(m, hi).groups:
        assert any(set(g) <= set(c) for c in coarse)


def test_invalid_tau():
    with pytest.raises(ValueError):
        cluster(reference_matrix("S1"), 1.5)


def test_assignment_validation():
    with pytest.raises(ValueError, match="not a member"):
        ClusterAssignment([["SepConv3"]], ["SepConv5"])
    with pytest.raises(ValueError, match="overlap"):
        ClusterAssignment([["SepConv3"], ["SepConv3", "SepConv5"]], [])
