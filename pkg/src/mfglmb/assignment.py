"""Ranked assignment (Murty) and k-best Bernoulli subsets for hypothesis generation."""
from __future__ import annotations

import heapq
import itertools
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment


def _solve(cost):
    """Optimal row-complete assignment or None when every completion is infinite."""
    try:
        r, c = linear_sum_assignment(cost)
    except ValueError:
        return None
    total = cost[r, c].sum()
    if not np.isfinite(total):
        return None
    cols = np.empty(cost.shape[0], dtype=int)
    cols[r] = c
    return float(total), cols


def murty(cost, k: int):
    """The ``k`` cheapest assignments of every row to a distinct column.

    Parameters
    ----------
    cost : (n, m) array with ``n <= m``; ``inf`` marks forbidden pairs.
    k : number of solutions requested.

    Returns
    -------
    list of ``(total_cost, cols)`` in non-decreasing cost, ``cols[i]`` being
    the column of row ``i``. Fewer than ``k`` entries when fewer feasible
    assignments exist.
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n > m:
        raise ValueError("more rows than columns")
    if k <= 0:
        return []
    if n == 0:
        return [(0.0, np.zeros(0, dtype=int))]
    first = _solve(cost)
    if first is None:
        return []
    tie = itertools.count()
    # node: (cost, tiebreak, cols, masked cost matrix, number of rows already fixed)
    heap = [(first[0], next(tie), first[1], cost, 0)]
    out = []
    while heap and len(out) < k:
        total, _, cols, mat, fixed = heapq.heappop(heap)
        out.append((total, cols))
        if len(out) == k:
            break
        base = mat.copy()
        for t in range(fixed, n):
            child = base.copy()
            child[t, cols[t]] = np.inf
            sol = _solve(child)
            if sol is not None:
                heapq.heappush(heap, (sol[0], next(tie), sol[1], child, t))
            # fix row t to its current column for the remaining children
            keep = base[t, cols[t]]
            base[t, :] = np.inf
            base[:, cols[t]] = np.inf
            base[t, cols[t]] = keep
    return out


@lru_cache(maxsize=64)
def _perms(n, m):
    return np.array(list(itertools.permutations(range(m), n)), dtype=int).reshape(-1, n)


def enumerate_assignments(cost, k: int | None = None):
    """Exhaustive counterpart of :func:`murty` for small problems."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    perms = _perms(n, m)
    totals = cost[np.arange(n), perms].sum(axis=1) if n else np.zeros(len(perms))
    ok = np.flatnonzero(np.isfinite(totals))
    ok = ok[np.argsort(totals[ok], kind="stable")]
    if k is not None:
        ok = ok[:k]
    return [(float(totals[i]), perms[i]) for i in ok]


def kbest_subsets(probs, k: int):
    """The ``k`` most probable outcomes of independent Bernoulli trials.

    Returns a list of ``(log_prob, included)`` with ``included`` a boolean
    array, in non-increasing probability. Trials with probability 0 or 1 are
    fixed.
    """
    q = np.asarray(probs, dtype=float)
    if k <= 0:
        return []
    with np.errstate(divide="ignore"):
        lin = np.log(q)
        lout = np.log1p(-q)
    best = lin > lout
    base = float(np.where(best, lin, lout).sum())
    free = np.flatnonzero(np.isfinite(lin) & np.isfinite(lout))
    delta = np.abs(lin[free] - lout[free])
    order = np.argsort(delta, kind="stable")
    free, delta = free[order], delta[order]
    out = [(base, best.copy())]
    if len(free) == 0:
        return out
    # subsets of flips in increasing total cost: extend by next index, or slide the last one
    heap = [(delta[0], (0,))]
    while heap and len(out) < k:
        c, flips = heapq.heappop(heap)
        inc = best.copy()
        inc[free[list(flips)]] ^= True
        out.append((base - c, inc))
        last = flips[-1]
        if last + 1 < len(free):
            heapq.heappush(heap, (c + delta[last + 1], flips + (last + 1,)))
            heapq.heappush(heap, (c - delta[last] + delta[last + 1], flips[:-1] + (last + 1,)))
    return out
