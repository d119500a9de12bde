"""Optimal static cache contents.

Three regimes: unit-size documents (keep the ``x`` most popular), retrieval
costs (keep the ``x`` largest ``q_i * f(i)``), and variable sizes (density
prefix in ``q_i / s_i`` order).  :func:`exact_knapsack` is the brute-force
oracle the heuristics are checked against.

Documents are 1-based throughout.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceedsUniverse, CostOutOfRange, InstanceTooLarge, PlacementError

Q_SUM_TOL = 1e-9
EXHAUSTIVE_MAX_N = 25
DP_MAX_CELLS = 20_000_000


@dataclass(frozen=True)
class PlacementProblem:
    q: np.ndarray
    budget: float
    cost: np.ndarray | None = None
    cost_bound: float | None = None
    sizes: np.ndarray | None = None

    def __init__(self, q: Sequence[float], budget: float, cost: Sequence[float] | None = None,
                 cost_bound: float | None = None, sizes: Sequence[float] | None = None):
        q = np.asarray(q, dtype=float)
        if q.ndim != 1 or len(q) == 0:
            raise PlacementError("q must be a non-empty vector")
        if np.any(q <= 0) or abs(q.sum() - 1.0) > Q_SUM_TOL:
            raise PlacementError("q must be strictly positive and sum to 1")
        if budget < 0:
            raise PlacementError(f"budget must be >= 0, got {budget}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "budget", budget)
        if cost is not None:
            cost = np.asarray(cost, dtype=float)
            if cost.shape != q.shape:
                raise PlacementError("cost vector length differs from q")
            if cost_bound is None:
                raise CostOutOfRange("a finite cost bound K must be declared with the costs")
            if not (0 < cost_bound < math.inf):
                raise CostOutOfRange(f"cost bound must be finite and positive, got {cost_bound}")
            if np.any(cost <= 0) or np.any(cost > cost_bound):
                bad = int(np.flatnonzero((cost <= 0) | (cost > cost_bound))[0])
                raise CostOutOfRange(f"cost of document {bad + 1} is {cost[bad]}, outside (0, {cost_bound}]")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "cost_bound", cost_bound)
        if sizes is not None:
            sizes = np.asarray(sizes, dtype=float)
            if sizes.shape != q.shape:
                raise PlacementError("sizes vector length differs from q")
            if np.any(sizes <= 0) or not np.all(np.isfinite(sizes)):
                raise PlacementError("sizes must be finite and strictly positive")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n(self) -> int:
        return len(self.q)

    def value(self) -> np.ndarray:
        """Per-document mass saved by caching it: ``q`` or ``q * f``."""
        return self.q if self.cost is None else self.q * self.cost


@dataclass(frozen=True)
class PlacementResult:
    chosen: frozenset[int]
    predicted_objective: float
    used_budget: float
    split_index: int | None = None  # document that first fails to fit
    split_rank: int | None = None  # its 1-based position in density order


def _missed(values: np.ndarray, chosen: Sequence[int]) -> float:
    mask = np.ones(len(values), dtype=bool)
    mask[np.asarray(list(chosen), dtype=np.int64) - 1] = False
    return float(values[mask].sum())


def _top_by(values: np.ndarray, x: int) -> list[int]:
    order = np.argsort(-values, kind="stable")
    return (order[:x] + 1).tolist()


def _integral_budget(problem: PlacementProblem) -> int:
    x = problem.budget
    if x != int(x):
        raise PlacementError(f"document-count budget must be an integer, got {x}")
    x = int(x)
    if x > problem.n:
        raise BudgetExceedsUniverse(f"budget {x} exceeds universe size {problem.n}")
    return x


def top_x(problem: PlacementProblem) -> PlacementResult:
    """Cache the ``x`` most popular documents."""
    if problem.cost is not None or problem.sizes is not None:
        raise PlacementError("top_x takes neither costs nor sizes")
    x = _integral_budget(problem)
    chosen = _top_by(problem.q, x)
    return PlacementResult(frozenset(chosen), _missed(problem.q, chosen), float(x))


def cost_weighted_set(problem: PlacementProblem) -> PlacementResult:
    """Cache the ``x`` documents of largest ``q_i * f(i)``."""
    if problem.cost is None:
        raise PlacementError("cost_weighted_set needs a cost vector")
    if problem.sizes is not None:
        raise PlacementError("cost_weighted_set takes no sizes")
    x = _integral_budget(problem)
    v = problem.value()
    chosen = _top_by(v, x)
    return PlacementResult(frozenset(chosen), _missed(v, chosen), float(x))


def density_order(problem: PlacementProblem) -> np.ndarray:
    """1-based documents by non-increasing ``q_i / s_i``, lowest index first on ties."""
    return np.argsort(-(problem.q / problem.sizes), kind="stable") + 1


def size_aware_prefix(problem: PlacementProblem) -> PlacementResult:
    """Fill the cache in density order and stop at the first document that does not fit.

    Later, smaller documents are not back-filled.
    """
    if problem.sizes is None:
        raise PlacementError("size_aware_prefix needs a sizes vector")
    if problem.cost is not None:
        raise PlacementError("size_aware_prefix takes no costs")
    order = density_order(problem)
    cum = np.cumsum(problem.sizes[order - 1])
    k = int(np.searchsorted(cum, problem.budget, side="right"))
    chosen = order[:k].tolist()
    used = float(cum[k - 1]) if k else 0.0
    split = int(order[k]) if k < len(order) else None
    return PlacementResult(frozenset(chosen), _missed(problem.q, chosen), used,
                           split_index=split, split_rank=k + 1 if split is not None else None)


def prefix_sizes(problem: PlacementProblem, result: PlacementResult) -> tuple[float, float | None]:
    """Cumulative size in density order before and including the split document."""
    if result.split_rank is None:
        return result.used_budget, None
    order = density_order(problem)
    cum = np.cumsum(problem.sizes[order - 1])
    return result.used_budget, float(cum[result.split_rank - 1])


# --------------------------------------------------------------------------
# Exact oracle


def _subset_sums(items: np.ndarray, sizes: np.ndarray, values: np.ndarray):
    """All subsets of ``items`` as (mask, size, value) arrays."""
    k = len(items)
    masks = np.zeros(1, dtype=np.int64)
    ss = np.zeros(1)
    vv = np.zeros(1)
    for b in range(k):
        masks = np.concatenate([masks, masks | (1 << b)])
        ss = np.concatenate([ss, ss + sizes[b]])
        vv = np.concatenate([vv, vv + values[b]])
    return masks, ss, vv


def _exact_mitm(sizes: np.ndarray, values: np.ndarray, budget: float) -> list[int]:
    n = len(sizes)
    h = n // 2
    lo_idx = np.arange(h)
    hi_idx = np.arange(h, n)
    m1, s1, v1 = _subset_sums(lo_idx, sizes[:h], values[:h])
    m2, s2, v2 = _subset_sums(hi_idx, sizes[h:], values[h:])
    # best value in the upper half for every size limit
    o = np.argsort(s2, kind="stable")
    m2, s2, v2 = m2[o], s2[o], v2[o]
    best = np.maximum.accumulate(v2)
    arg = np.zeros(len(v2), dtype=np.int64)
    cur = 0
    for i in range(len(v2)):  # index achieving the running max
        if v2[i] > v2[cur]:
            cur = i
        arg[i] = cur
    ok = s1 <= budget
    m1, s1, v1 = m1[ok], s1[ok], v1[ok]
    j = np.searchsorted(s2, budget - s1, side="right") - 1
    total = np.where(j >= 0, v1 + best[np.maximum(j, 0)], -np.inf)
    i = int(np.argmax(total))
    chosen = [b + 1 for b in range(h) if m1[i] >> b & 1]
    jj = j[i]
    if jj >= 0:
        mask = int(m2[arg[jj]])
        chosen += [h + b + 1 for b in range(n - h) if mask >> b & 1]
    return sorted(chosen)


def _exact_dp(sizes: np.ndarray, values: np.ndarray, budget: int) -> list[int]:
    n = len(sizes)
    w = sizes.astype(np.int64)
    table = np.zeros((n + 1, budget + 1))
    for i in range(n):
        prev = table[i]
        row = prev.copy()
        if w[i] <= budget:
            cand = prev[: budget + 1 - w[i]] + values[i]
            row[w[i]:] = np.maximum(prev[w[i]:], cand)
        table[i + 1] = row
    chosen = []
    c = budget
    for i in range(n, 0, -1):
        if table[i, c] != table[i - 1, c]:
            chosen.append(i)
            c -= int(w[i - 1])
    return sorted(chosen)


def exact_knapsack(problem: PlacementProblem) -> PlacementResult:
    """Exactly maximize cached mass (``q`` or ``q * f``) under the size budget.

    Unit sizes are assumed when ``sizes`` is absent.  Uses meet-in-the-middle
    enumeration for up to 25 documents, otherwise a dynamic program over
    integral sizes and budget.
    """
    n = problem.n
    sizes = problem.sizes if problem.sizes is not None else np.ones(n)
    values = problem.value()
    budget = problem.budget
    if n <= EXHAUSTIVE_MAX_N:
        chosen = _exact_mitm(sizes, values, budget)
    else:
        integral = np.all(sizes == np.round(sizes))
        b = int(math.floor(budget))
        if not integral or (n + 1) * (b + 1) > DP_MAX_CELLS:
            raise InstanceTooLarge(f"{n} documents: need N <= {EXHAUSTIVE_MAX_N} or a small integral DP")
        chosen = _exact_dp(sizes, values, b)
    used = float(sizes[np.asarray(chosen, dtype=np.int64) - 1].sum()) if chosen else 0.0
    return PlacementResult(frozenset(chosen), _missed(values, chosen), used)

