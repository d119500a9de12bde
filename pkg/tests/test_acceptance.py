"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (also repeated in the
terminal summary).  Workloads live in ``_specs.py``:

* A1: i.i.d. Zipf(0.8), N = 10^4
* A2: two alternating states, exponential means 1 and 4, state 2 reverses the top 400 ranks
* A3: three states with exponential, Pareto and deterministic sojourns, N = 2000
* A4: i.i.d. Zipf(1.4), N = 10^5
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

import _specs
from _report import record
from corrcache.estimators import EULER_GAP, lemma1_probe, regenerative_fault, time_average_fault
from corrcache.placement import (
    PlacementProblem,
    cost_weighted_set,
    prefix_sizes,
    size_aware_prefix,
)
from corrcache.policies import PolicyKind, new_policy, replay
from corrcache.workload import MaxRequests, generate, state_occupancy

SEED = 20240601
TOL = 1e-12

SPECS = {
    "A1": (_specs.a1, 1_000_000, [100, 500, 1000]),
    "A2": (_specs.a2, 1_000_000, [50, 200]),
    "A3": (_specs.a3, 1_000_000, [20, 100, 200]),
    "A4": (_specs.a4, 10_000_000, [100, 1000]),
}


class Runs:
    """Lazily generated traces and replay summaries shared by criteria 1, 2, 4, 5 and 7."""

    def __init__(self):
        self.specs, self.traces, self.cells = {}, {}, {}

    def spec(self, name):
        if name not in self.specs:
            self.specs[name] = SPECS[name][0]()
        return self.specs[name]

    def trace(self, name):
        if name not in self.traces:
            self.traces[name] = generate(self.spec(name), MaxRequests(SPECS[name][1]), SEED)
        return self.traces[name]

    def cell(self, name, kind, x):
        key = (name, PolicyKind(kind), x)
        if key not in self.cells:
            v, t = self.spec(name), self.trace(name)
            if key[1] is PolicyKind.STATIC_TOP_X:
                ctx = v.marginal
            elif key[1] is PolicyKind.STATIC_GIVEN_SET:
                ctx = range(1, x + 1)  # top of state 1's law, not of the marginal
            else:
                ctx = None
            rep = replay(new_policy(kind, x, ctx, seed=SEED), t.docs, t.cycle_index)
            self.cells[key] = {
                "regen": regenerative_fault(t, rep),
                "time": time_average_fault(t, rep),
                "violations": rep.violations,
                "cycles": len(rep.lower_bound),
            }
        return self.cells[key]

    def all_cells(self):
        for name, (_, _, grid) in SPECS.items():
            for kind in PolicyKind:
                for x in grid:
                    yield name, kind, x, self.cell(name, kind, x)


@pytest.fixture(scope="module")
def runs():
    return Runs()


def test_criterion_1_static_exactness(runs):
    t0 = time.perf_counter()
    v = runs.spec("A1")
    parts, ok = [], True
    for x in SPECS["A1"][2]:
        est = runs.cell("A1", "static_top_x", x)["regen"]
        exact = v.tail_mass(x)
        z = (est.point - exact) / est.stderr
        ok &= abs(z) <= 3
        parts.append(f"x={x}: {est.point:.5f} vs {exact:.5f} (z={z:+.2f})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30
    record(1, ok, "; ".join(parts) + f"; {elapsed:.1f}s")
    assert ok


def test_criterion_2_estimator_agreement(runs):
    c = runs.cell("A2", "lru", 200)
    a, b = c["regen"], c["time"]
    joint = math.hypot(a.stderr, b.stderr)
    diff = a.point - b.point
    ok = abs(diff) < 3 * joint
    record(2, ok, f"regenerative {a.point:.5f}+-{a.stderr:.5f}, time average {b.point:.5f}+-{b.stderr:.5f}, "
                  f"diff/joint se = {diff / joint:+.2f}")
    assert ok


def test_criterion_3_cycle_hit_identity():
    v = _specs.a3()
    probes = lemma1_probe(v, [10, 100, 1000], 100_000, SEED)
    gaps = [abs(p.ratio - 1) for p in probes]
    ident = all(p.identity_holds(3.0) for p in probes)
    trend = all(a >= b for a, b in zip(gaps, gaps[1:]))
    ok = ident and trend
    detail = "; ".join(f"i={p.doc}: hit {p.hit_prob:.5f} product {p.product_form:.5f} "
                       f"(z={p.identity_gap / p.identity_stderr:+.2f}) |ratio-1|={g:.3f}"
                       for p, g in zip(probes, gaps))
    record(3, ok, detail + f"; mean cycle length {probes[0].mean_cycle_length:.1f}")
    assert ok


def test_criterion_4_lru_gap_trend(runs):
    t0 = time.perf_counter()
    v = runs.spec("A4")
    ratios = {x: runs.cell("A4", "lru", x)["regen"].point / v.tail_mass(x) for x in (100, 1000)}
    in_range = 1.6 <= ratios[1000] <= 2.0
    closer = abs(ratios[1000] - EULER_GAP) < abs(ratios[100] - EULER_GAP)
    elapsed = time.perf_counter() - t0
    ok = in_range and closer and elapsed < 300
    record(4, ok, f"ratio x=100: {ratios[100]:.4f}, x=1000: {ratios[1000]:.4f}; "
                  f"in [1.6, 2.0]: {in_range}; closer to {EULER_GAP:.4f}: {closer}; {elapsed:.0f}s")
    assert ok


def test_criterion_5_dominance(runs):
    worst, bad = None, []
    for name, kind, x, c in runs.all_cells():
        ps = runs.spec(name).tail_mass(x)
        est = c["regen"]
        slack = (est.point - ps) / est.stderr if est.stderr > 0 else math.inf
        if est.point < ps - 3 * est.stderr:
            bad.append(f"{name}/{kind.value}/x={x}")
        if worst is None or slack < worst[0]:
            worst = (slack, f"{name}/{kind.value}/x={x}")
    ok = not bad
    record(5, ok, f"{len(runs.cells)} (spec, policy, x) cells; smallest (P - P_s)/se = {worst[0]:+.2f} at "
                  f"{worst[1]}" + (f"; violations: {bad}" if bad else ""))
    assert ok


def _all_subsets(n):
    return ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(bool)


def test_criterion_6_placement_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    size_set = np.array([1.0, 2.0, 3.0, 5.0, 8.0])
    cost_fail = bracket_fail = ties = 0
    for _ in range(200):
        n = int(rng.integers(2, 16))
        q = rng.dirichlet(np.full(n, 0.7))
        q = np.maximum(q, 1e-12)
        q /= q.sum()
        k_bound = 10.0
        f = rng.uniform(0.05, k_bound, n)
        s = rng.choice(size_set, n)
        masks = _all_subsets(n)
        count = masks.sum(axis=1)
        # cost-weighted set against every x-subset
        x = int(rng.integers(0, n + 1))
        res = cost_weighted_set(PlacementProblem(q, x, cost=f, cost_bound=k_bound))
        missed = (~masks[count == x]) @ (q * f)
        best = missed.min()
        cost_fail += not abs(res.predicted_objective - best) <= TOL
        ties += int(np.sum(np.abs(missed - best) <= TOL)) > 1
        # size-aware prefix against the exhaustive knapsack bracket
        budget = float(rng.uniform(0, s.sum()))
        prob = PlacementProblem(q, budget, sizes=s)
        pre = size_aware_prefix(prob)
        tot = masks @ s
        missed_q = (~masks) @ q

        def opt(b):
            return missed_q[tot <= b + TOL].min()

        below, upto = prefix_sizes(prob, pre)
        hi = opt(below)
        lo = opt(upto) if upto is not None else 0.0
        ok_here = lo - TOL <= pre.predicted_objective <= hi + TOL
        ok_here &= opt(budget) - TOL <= pre.predicted_objective  # lower end at the actual budget
        bracket_fail += not ok_here
    elapsed = time.perf_counter() - t0
    ok = cost_fail == 0 and bracket_fail == 0 and elapsed < 60
    record(6, ok, f"200 instances (N<=15): cost_weighted_set mismatches {cost_fail} ({ties} tied optima), "
                  f"bracket failures {bracket_fail}; {elapsed:.1f}s")
    assert ok


def test_criterion_7_lower_bound(runs):
    total_cycles = violations = 0
    for _, _, _, c in runs.all_cells():
        total_cycles += c["cycles"]
        violations += c["violations"]
    ok = violations == 0 and total_cycles > 0
    record(7, ok, f"{violations} violations over {total_cycles} audited (policy, cycle) pairs "
                  f"in {len(runs.cells)} replays")
    assert ok


def test_criterion_8_workload_fidelity():
    parts, ok = [], True
    for name in ("A2", "A3"):
        v = getattr(_specs, name.lower())()
        frac, se = state_occupancy(v, 1e5, SEED)
        z = (frac - v.stationary) / se
        ok &= bool(np.all(np.abs(z) <= 3))
        parts.append(f"{name} occupancy z=[{', '.join(f'{u:+.2f}' for u in z)}]")
    for name in ("A1", "A2"):
        v = getattr(_specs, name.lower())()
        n = 10_000_000
        docs = generate(v, MaxRequests(n), SEED + 1).docs
        top = v.order[:50]
        counts = np.bincount(docs, minlength=v.universe_size + 1)
        obs = np.append(counts[top], n - counts[top].sum())
        p = v.marginal[top - 1]
        exp = n * np.append(p, 1 - p.sum())
        chi2, pval = stats.chisquare(obs, exp)
        ok &= pval > 0.001
        parts.append(f"{name} chi2={chi2:.1f} (50 df) p={pval:.3f}")
    record(8, ok, "; ".join(parts))
    assert ok
