import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from corrcache.errors import (
    BadPopularityParameters,
    BadSojournParameters,
    NonStochasticMatrix,
    NotIrreducible,
    PopularityLengthMismatch,
    ZeroMarginalPopularity,
)
from corrcache.workload import (
    Deterministic,
    Explicit,
    Exponential,
    MaxCycles,
    MaxRequests,
    MaxTime,
    Pareto,
    PermutedZipf,
    SemiMarkovSpec,
    Zipf,
    embedded_stationary,
    embedded_stationary_of,
    generate,
    marginal_popularity,
    spec_from_dict,
    spec_hash,
    spec_to_dict,
    state_occupancy,
    time_stationary,
    validate_spec,
)


def two_state(p, means, pops=None, n=4):
    pops = pops or [Zipf(1.0, n), Zipf(1.0, n)]
    return validate_spec(SemiMarkovSpec(p, [Exponential(m) for m in means], pops, n))


# ---------------------------------------------------------------- validation


def test_single_state_valid():
    v = validate_spec(SemiMarkovSpec([[1.0]], [Exponential(1.0)], [Zipf(1.0, 4)], 4))
    assert time_stationary(v).tolist() == [1.0]
    assert embedded_stationary(v).tolist() == [1.0]


def test_row_not_summing_to_one():
    with pytest.raises(NonStochasticMatrix):
        validate_spec(SemiMarkovSpec([[0.5, 0.4], [0.5, 0.5]], [Exponential(1)] * 2, [Zipf(1, 4)] * 2, 4))


def test_negative_entry_rejected():
    with pytest.raises(NonStochasticMatrix):
        validate_spec(SemiMarkovSpec([[1.5, -0.5], [0.5, 0.5]], [Exponential(1)] * 2, [Zipf(1, 4)] * 2, 4))


def test_reducible_rejected():
    with pytest.raises(NotIrreducible):
        validate_spec(SemiMarkovSpec([[0.5, 0.5], [0.0, 1.0]], [Exponential(1)] * 2, [Zipf(1, 4)] * 2, 4))
    with pytest.raises(NotIrreducible):
        p = [[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0]]
        validate_spec(SemiMarkovSpec(p, [Exponential(1)] * 4, [Zipf(1, 4)] * 4, 4))


def test_zero_marginal_rejected():
    w = [0.5, 0.5, 0.0, 0.0]
    with pytest.raises(ZeroMarginalPopularity, match="document 3"):
        validate_spec(SemiMarkovSpec([[0, 1], [1, 0]], [Exponential(1)] * 2,
                                     [Explicit(w), Explicit([0.2, 0.3, 0.0, 0.5])], 4))


def test_popularity_length_mismatch():
    with pytest.raises(PopularityLengthMismatch):
        validate_spec(SemiMarkovSpec([[1.0]], [Exponential(1)], [Zipf(1, 5)], 4))
    with pytest.raises(PopularityLengthMismatch):
        validate_spec(SemiMarkovSpec([[0, 1], [1, 0]], [Exponential(1)] * 2, [Zipf(1, 4)], 4))


@pytest.mark.parametrize("make", [
    lambda: Exponential(0.0),
    lambda: Exponential(math.inf),
    lambda: Deterministic(-1.0),
    lambda: Pareto(1.0, 1.0),
    lambda: Pareto(2.0, 0.0),
])
def test_bad_sojourn(make):
    with pytest.raises(BadSojournParameters):
        make()


def test_bad_popularity():
    with pytest.raises(BadPopularityParameters):
        Zipf(0.0, 10)
    with pytest.raises(BadPopularityParameters):
        Explicit([0.0, 0.0])
    with pytest.raises(BadPopularityParameters):
        PermutedZipf(1.0, 10, [1, 3])


# ------------------------------------------------------ stationary vectors


def test_embedded_symmetric():
    assert np.allclose(embedded_stationary(two_state([[0, 1], [1, 0]], [1, 1])), [0.5, 0.5])
    assert np.allclose(embedded_stationary(two_state([[0.5, 0.5], [0.5, 0.5]], [1, 1])), [0.5, 0.5])


def test_embedded_two_by_two():
    # balance: 0.1 nu1 = 0.5 nu2  =>  nu = [5/6, 1/6]
    p = np.array([[0.9, 0.1], [0.5, 0.5]])
    nu = embedded_stationary(two_state(p, [2, 1]))
    assert np.allclose(nu, [5 / 6, 1 / 6], atol=1e-14)
    power = np.array([1.0, 0.0]) @ np.linalg.matrix_power(p, 200)
    assert np.allclose(nu, power, atol=1e-12)


def test_time_stationary_examples():
    assert np.allclose(time_stationary(two_state([[0, 1], [1, 0]], [1, 3])), [0.25, 0.75])
    # nu = [5/6, 1/6], means [2, 1]  =>  [10/6, 1/6] / (11/6)
    assert np.allclose(time_stationary(two_state([[0.9, 0.1], [0.5, 0.5]], [2, 1])), [10 / 11, 1 / 11])


def test_marginal_zipf_four():
    v = validate_spec(SemiMarkovSpec.iid(Zipf(1.0, 4)))
    q, order = marginal_popularity(v)
    assert np.allclose(q, [0.48, 0.24, 0.16, 0.12], atol=1e-15)
    assert order.tolist() == [1, 2, 3, 4]


def test_marginal_identical_states():
    w = [0.1, 0.6, 0.3]
    v = two_state([[0.2, 0.8], [0.7, 0.3]], [1.0, 7.0], [Explicit(w), Explicit(w)], 3)
    q, order = marginal_popularity(v)
    assert np.allclose(q, w)
    assert order.tolist() == [2, 3, 1]


def test_marginal_convex_mixture():
    eps = 1e-9
    pops = [Explicit([1 - eps, eps]), Explicit([eps, 1 - eps])]
    v = two_state([[0, 1], [1, 0]], [1, 3], pops, 2)
    assert np.allclose(v.marginal, [0.25, 0.75], atol=1e-8)


def test_marginal_ties_lowest_index_first():
    v = validate_spec(SemiMarkovSpec.iid(Explicit([1, 2, 2, 1, 2])))
    assert v.order.tolist() == [2, 3, 5, 1, 4]


def test_readonly_arrays():
    v = validate_spec(SemiMarkovSpec.iid(Zipf(1.0, 4)))
    with pytest.raises(ValueError):
        v.marginal[0] = 1.0
    q, _ = marginal_popularity(v)
    q[0] = 5.0  # copies are writable and do not alias
    assert v.marginal[0] == pytest.approx(0.48)


@st.composite
def stochastic_matrix(draw):
    m = draw(st.integers(1, 6))
    rows = []
    for _ in range(m):
        w = draw(st.lists(st.floats(0.01, 1.0), min_size=m, max_size=m))
        s = sum(w)
        rows.append([x / s for x in w])
    return np.array(rows)


@given(stochastic_matrix())
def test_stationary_vector_properties(p):
    nu = embedded_stationary_of(p)
    assert np.all(nu > 0)
    assert abs(nu.sum() - 1) < 1e-12
    assert np.max(np.abs(nu @ p - nu)) <= 1e-10


@given(stochastic_matrix(), st.lists(st.floats(0.1, 50.0), min_size=6, max_size=6))
def test_time_stationary_properties(p, means):
    m = len(p)
    p = p.copy()
    if m > 1:
        np.fill_diagonal(p, 0.0)
        p /= p.sum(axis=1, keepdims=True)
    spec = SemiMarkovSpec(p, [Exponential(x) for x in means[:m]], [Zipf(1.0, 5)] * m, 5)
    v = validate_spec(spec)
    expect = v.embedded * np.array(means[:m])
    assert np.allclose(v.stationary, expect / expect.sum())
    assert v.stationary.min() > 0
    assert abs(v.marginal.sum() - 1) < 1e-12


def test_spec_dict_roundtrip_and_hash():
    spec = SemiMarkovSpec([[0, 1], [1, 0]], [Pareto(2.5, 3.0), Deterministic(2.0)],
                          [PermutedZipf(0.9, 8, [2, 1, 3]), Explicit([1, 2, 3, 4, 5, 6, 7, 8])], 8)
    back = spec_from_dict(spec_to_dict(spec))
    assert back == spec
    assert spec_hash(back) == spec_hash(spec)
    other = SemiMarkovSpec([[0, 1], [1, 0]], [Pareto(2.5, 3.0), Deterministic(2.5)],
                           spec.popularity, 8)
    assert spec_hash(other) != spec_hash(spec)


def test_permuted_zipf_moves_top_ranks():
    base = Zipf(1.0, 6).weights()
    w = PermutedZipf(1.0, 6, [3, 1, 2]).weights()
    assert w[2] == base[0] and w[0] == base[1] and w[1] == base[2]
    assert np.array_equal(w[3:], base[3:])


# ---------------------------------------------------------------- sampling


def test_deterministic_stream():
    v = two_state([[0.3, 0.7], [0.6, 0.4]], [1.0, 2.0], n=4)
    bufs = []
    for _ in range(2):
        fh = io.StringIO()
        generate(v, MaxRequests(5000), seed=11).write_csv(fh)
        bufs.append(fh.getvalue())
    assert bufs[0] == bufs[1]
    fh = io.StringIO()
    generate(v, MaxRequests(5000), seed=12).write_csv(fh)
    assert fh.getvalue() != bufs[0]


def test_stop_rules_share_one_stream():
    v = two_state([[0.3, 0.7], [0.6, 0.4]], [1.0, 2.0], n=4)
    long = generate(v, MaxRequests(200_000), seed=3)
    short = generate(v, MaxRequests(1000), seed=3)
    assert np.array_equal(long.docs[:1000], short.docs)
    by_time = generate(v, MaxTime(500.0), seed=3)
    n = len(by_time)
    assert np.array_equal(long.times[:n], by_time.times)
    assert long.times[n] >= 500.0 > by_time.times[-1]
    by_cycles = generate(v, MaxCycles(40), seed=3)
    assert by_cycles.num_cycles == 40
    assert np.array_equal(by_cycles.cycles.start, long.cycles.start[:40])
    assert by_cycles.horizon == pytest.approx(long.cycles.end[39])


def test_csv_format():
    v = validate_spec(SemiMarkovSpec.iid(Zipf(1.0, 4)))
    fh = io.StringIO()
    t = generate(v, MaxRequests(3), seed=0)
    t.write_csv(fh)
    lines = fh.getvalue().splitlines()
    assert lines[0] == "time,doc,state,cycle_index"
    assert len(lines) == 4
    time, doc, state, cyc = lines[1].split(",")
    assert float(time) == pytest.approx(t.times[0], abs=1e-9)
    # one state: every sojourn closes a cycle, so the first request need not be in cycle 0
    assert 1 <= int(doc) <= 4 and state == "1" and int(cyc) == t.cycle_index[0]


def test_events_are_one_based():
    v = two_state([[0, 1], [1, 0]], [1.0, 1.0], n=4)
    t = generate(v, MaxRequests(2000), seed=1)
    ev = list(t.events())
    assert ev[0].cycle_index == 0
    assert {e.state for e in ev} == {1, 2}
    assert min(e.doc for e in ev) >= 1 and max(e.doc for e in ev) <= 4
    assert all(a.time < b.time for a, b in zip(ev, ev[1:]))


def test_poisson_counts():
    v = validate_spec(SemiMarkovSpec.iid(Zipf(1.0, 4)))
    t = 20.0
    counts = np.array([len(generate(v, MaxTime(t), seed=s)) for s in range(1000)])
    assert abs(counts.mean() - t) <= 3 * math.sqrt(t / 1000)
    assert abs(counts.var(ddof=1) - t) <= 0.2 * t  # Poisson: variance equals mean


def test_doc_one_frequency():
    v = validate_spec(SemiMarkovSpec.iid(Zipf(1.0, 4)))
    n = 1_000_000
    docs = generate(v, MaxRequests(n), seed=2).docs
    freq = np.mean(docs == 1)
    assert abs(freq - 0.48) <= 3 * math.sqrt(0.48 * 0.52 / n)


def test_deterministic_cycles_have_length_two():
    v = validate_spec(SemiMarkovSpec([[0, 1], [1, 0]], [Deterministic(1.0)] * 2, [Zipf(1, 4)] * 2, 4))
    t = generate(v, MaxCycles(50), seed=0)
    assert np.array_equal(t.cycles.length, np.full(50, 2.0))
    assert np.allclose(t.cycles.per_state_time, 1.0)


def test_cycle_stats_invariants():
    spec = SemiMarkovSpec([[0.2, 0.5, 0.3], [0.4, 0.0, 0.6], [0.5, 0.5, 0.0]],
                          [Exponential(2.0), Pareto(1.8, 1.0), Deterministic(0.7)],
                          [Zipf(0.9, 50), PermutedZipf(0.9, 50, [5, 4, 3, 2, 1]), Zipf(1.5, 50)], 50)
    t = generate(validate_spec(spec), MaxTime(5000.0), seed=4)
    assert t.num_cycles > 100
    prev_end = 0.0
    for c in t.iter_cycles():
        assert c.start == prev_end
        prev_end = c.end
        assert c.total_count == sum(c.per_state_counts)
        assert len(c.distinct_docs) <= c.total_count
        assert abs(sum(c.per_state_time) - (c.end - c.start)) <= 1e-9 * max(1.0, c.end)
    # requests of cycle j fall inside [start_j, end_j)
    c = t.cycles
    for j in range(0, t.num_cycles, 7):
        lo, hi = c.offsets[j], c.offsets[j + 1]
        assert np.all((t.times[lo:hi] >= c.start[j]) & (t.times[lo:hi] < c.end[j]))
        assert np.all(t.cycle_index[lo:hi] == j)


def test_occupancy_matches_pi():
    v = two_state([[0.9, 0.1], [0.5, 0.5]], [2.0, 1.0], n=4)
    frac, se = state_occupancy(v, 1e5, seed=8)
    assert np.all(np.abs(frac - [10 / 11, 1 / 11]) <= 3 * se)


def test_state_occupancy_deterministic_alternation():
    v = validate_spec(SemiMarkovSpec([[0, 1], [1, 0]], [Deterministic(1.0), Deterministic(3.0)],
                                     [Zipf(1, 4)] * 2, 4))
    frac, se = state_occupancy(v, 400.0, seed=0, num_batches=25)  # 16 = 4 periods per batch
    assert np.allclose(frac, [0.25, 0.75]) and np.allclose(se, 0.0)


def test_cycle_counts_match_lengths():
    v = two_state([[0.1, 0.9], [0.8, 0.2]], [1.5, 4.0], n=20)
    t = generate(v, MaxCycles(20_000), seed=6)
    n = t.cycles.total_count.astype(float)
    ell = t.cycles.length
    k = len(n)
    joint = math.sqrt(n.var(ddof=1) / k + ell.var(ddof=1) / k)
    assert abs(n.mean() - ell.mean()) <= 3 * joint


def test_cycle_counts_uncorrelated():
    v = two_state([[0.1, 0.9], [0.8, 0.2]], [1.5, 4.0], n=20)
    t = generate(v, MaxCycles(20_000), seed=7)
    n = t.cycles.total_count.astype(float)
    d = n - n.mean()
    r1 = float(d[:-1] @ d[1:] / (d @ d))
    assert abs(r1) < 3 / math.sqrt(len(n))
