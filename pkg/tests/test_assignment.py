import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfglmb.assignment import enumerate_assignments, kbest_subsets, murty


def brute_assignments(cost):
    n, m = cost.shape
    out = []
    for p in itertools.permutations(range(m), n):
        t = sum(cost[i, j] for i, j in enumerate(p))
        if np.isfinite(t):
            out.append(t)
    return sorted(out)


def _random_cost(r, n, m, p_inf=0.2):
    c = r.exponential(3.0, (n, m))
    c[r.random((n, m)) < p_inf] = np.inf
    return c


def test_murty_matches_brute_force():
    r = np.random.default_rng(0)
    for _ in range(150):
        n = int(r.integers(1, 4))
        m = int(r.integers(n, 6))
        c = _random_cost(r, n, m)
        k = int(r.integers(1, 30))
        got = [t for t, _ in murty(c, k)]
        want = brute_assignments(c)[:k]
        np.testing.assert_allclose(got, want, rtol=1e-12)


def test_murty_solutions_are_distinct_and_consistent():
    r = np.random.default_rng(1)
    c = _random_cost(r, 3, 6, 0.0)
    sols = murty(c, 40)
    seen = set()
    for total, cols in sols:
        assert len(set(cols)) == len(cols)
        assert total == pytest.approx(c[np.arange(3), cols].sum())
        seen.add(tuple(cols))
    assert len(seen) == len(sols)


def test_infeasible_returns_empty():
    c = np.full((2, 3), np.inf)
    assert murty(c, 5) == []
    assert enumerate_assignments(c, 5) == []


def test_enumeration_agrees_with_murty():
    r = np.random.default_rng(2)
    for _ in range(50):
        c = _random_cost(r, 2, 4)
        a = [t for t, _ in enumerate_assignments(c, 6)]
        b = [t for t, _ in murty(c, 6)]
        np.testing.assert_allclose(a, b, rtol=1e-12)


def brute_subsets(q):
    out = []
    for inc in itertools.product([False, True], repeat=len(q)):
        with np.errstate(divide="ignore"):
            lp = sum(np.log(p) if i else np.log1p(-p) for p, i in zip(q, inc))
        if np.isfinite(lp):
            out.append(lp)
    return sorted(out, reverse=True)


@settings(max_examples=100, deadline=None)
@given(q=st.lists(st.sampled_from([0.0, 0.05, 0.1, 0.3, 0.5, 0.75, 0.9, 1.0]), max_size=7),
       k=st.integers(1, 40))
def test_kbest_subsets_matches_brute_force(q, k):
    got = kbest_subsets(q, k)
    want = brute_subsets(q)[:k]
    np.testing.assert_allclose([lp for lp, _ in got], want, atol=1e-12)
    for lp, inc in got:
        with np.errstate(divide="ignore"):
            ref = sum(np.log(p) if i else np.log1p(-p) for p, i in zip(q, inc))
        assert lp == pytest.approx(ref, abs=1e-12)
    assert len({tuple(inc) for _, inc in got}) == len(got)
