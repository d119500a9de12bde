"""Long-run fault and cost estimators.

Two routes to the same long-run quantity: a plain time average over the
requests (with batch-means error bars) and a regenerative ratio estimator
over the i.i.d. cycles between jumps into state 1 (with delta-method error
bars).  On a long stream they must agree.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .errors import StreamTooShort, TooFewCycles
from .policies import CacheState, PolicyKind, Replay, new_policy, replay
from .workload import RequestSampler, StopRule, ValidatedSpec, generate

EULER_GAP = math.exp(np.euler_gamma)  # 1.7810724...

MIN_BATCHES = 20
MIN_BATCH_SIZE = 100
DEFAULT_BATCHES = 30
MIN_CYCLES = 30
MIN_PROBE_CYCLES = 10_000


@dataclass(frozen=True)
class FaultEstimate:
    point: float
    stderr: float
    count: int  # cycles for regenerative estimates, requests for time averages
    method: str

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        return self.point - z * self.stderr, self.point + z * self.stderr


def ratio_estimate(y: np.ndarray, l: np.ndarray) -> tuple[float, float]:
    """``sum(y) / sum(l)`` over i.i.d. pairs, with its delta-method standard error."""
    y = np.asarray(y, dtype=float)
    l = np.asarray(l, dtype=float)
    n = len(y)
    r = float(y.sum() / l.sum())
    resid = y - r * l
    s = math.sqrt(float(resid @ resid) / (n - 1))
    return r, s / (float(l.mean()) * math.sqrt(n))


def batch_means(values: np.ndarray, num_batches: int = DEFAULT_BATCHES) -> float:
    """Standard error of ``values.mean()`` from non-overlapping batch means."""
    size = len(values) // num_batches
    means = values[: size * num_batches].reshape(num_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(num_batches))


def _as_replay(trace, policy: CacheState | Replay) -> Replay:
    return policy if isinstance(policy, Replay) else replay(policy, trace.docs, trace.cycle_index)


def _time_average(rewards: np.ndarray, warmup_fraction: float, num_batches: int) -> FaultEstimate:
    if not 0 <= warmup_fraction <= 0.5:
        raise ValueError(f"warmup_fraction must lie in [0, 0.5], got {warmup_fraction}")
    if num_batches < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches")
    kept = rewards[int(len(rewards) * warmup_fraction):]
    if len(kept) < num_batches * MIN_BATCH_SIZE:
        raise StreamTooShort(f"{len(kept)} requests after warm-up; need {num_batches} batches "
                             f"of at least {MIN_BATCH_SIZE}")
    return FaultEstimate(float(kept.sum() / len(kept)), batch_means(kept, num_batches),
                         len(kept), "time_average")


def _regenerative(trace, rewards: np.ndarray) -> FaultEstimate:
    k = trace.num_cycles
    if k < MIN_CYCLES:
        raise TooFewCycles(f"{k} completed cycles; need at least {MIN_CYCLES}")
    done = trace.cycles.offsets[-1]
    y = np.bincount(trace.cycle_index[:done], weights=rewards[:done], minlength=k)
    l = trace.cycles.total_count
    point, se = ratio_estimate(y, l)
    return FaultEstimate(point, se, k, "regenerative")


def time_average_fault(trace, policy: CacheState | Replay, warmup_fraction: float = 0.0, *,
                       num_batches: int = DEFAULT_BATCHES) -> FaultEstimate:
    """Fraction of requests after the warm-up prefix that missed."""
    rep = _as_replay(trace, policy)
    return _time_average(rep.miss.astype(float), warmup_fraction, num_batches)


def regenerative_fault(trace, policy: CacheState | Replay) -> FaultEstimate:
    """Misses over requests, summed across completed cycles."""
    rep = _as_replay(trace, policy)
    return _regenerative(trace, rep.miss.astype(float))


def cost_average(trace, policy: CacheState | Replay, costs: Sequence[float] | np.ndarray,
                 method: str = "regenerative", *, cost_bound: float | None = None,
                 warmup_fraction: float = 0.0, num_batches: int = DEFAULT_BATCHES) -> FaultEstimate:
    """Long-run average retrieval cost per request; ``costs[i - 1]`` is paid on a miss of ``i``."""
    f = np.asarray(costs, dtype=float)
    if np.any(f <= 0) or (cost_bound is not None and np.any(f > cost_bound)):
        raise ValueError("costs must lie in (0, K]")
    rep = _as_replay(trace, policy)
    rewards = rep.miss * f[trace.docs - 1]
    if method == "regenerative":
        return _regenerative(trace, rewards)
    if method == "time_average":
        return _time_average(rewards, warmup_fraction, num_batches)
    raise ValueError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# Per-document cycle probe


@dataclass(frozen=True)
class Lemma1Probe:
    """Per-document probe of the probability of being requested within a cycle.

    ``hit_prob`` is the fraction of cycles that request ``doc``;
    ``product_form`` averages ``1 - prod_r (1 - q_doc^(r)) ** N_r`` over the
    same cycles, which has the same expectation.  ``ratio`` compares
    ``hit_prob`` with ``q_doc * E[cycle length]`` and tends to 1 for
    unpopular documents.
    """

    doc: int
    hit_prob: float
    hit_stderr: float
    product_form: float
    product_stderr: float
    identity_gap: float
    identity_stderr: float
    ratio: float
    ratio_stderr: float
    mean_cycle_length: float
    num_cycles: int

    def identity_holds(self, z: float = 3.0) -> bool:
        return abs(self.identity_gap) <= z * self.identity_stderr


def _cycle_scan(spec: ValidatedSpec, docs: Sequence[int], num_cycles: int, seed: int):
    """Per-cycle state counts, cycle lengths and probe indicators for the first cycles."""
    m = spec.num_states
    k = num_cycles
    sampler = RequestSampler(spec, seed)
    end_time = sampler.regeneration_epoch(k)
    counts = np.zeros(k * m, dtype=np.int64)
    hits = np.zeros((len(docs), k), dtype=bool)
    while True:
        times, d, st, cyc = sampler.next_block()
        sel = times < end_time
        c = cyc[sel]
        counts += np.bincount(c * m + (st[sel].astype(np.int64) - 1), minlength=k * m)
        ds = d[sel]
        for j, doc in enumerate(docs):
            hits[j, c[ds == doc]] = True
        if times[-1] >= end_time:
            break
    start, end, _ = sampler.completed_cycles(end_time)
    return counts.reshape(k, m), end - start, hits


def lemma1_probe(spec: ValidatedSpec, docs: Sequence[int], num_cycles: int, seed: int, *,
                 min_cycles: int = MIN_PROBE_CYCLES) -> list[Lemma1Probe]:
    if num_cycles < min_cycles:
        raise TooFewCycles(f"{num_cycles} cycles requested; need at least {min_cycles}")
    docs = [int(d) for d in docs]
    for d in docs:
        if not 1 <= d <= spec.universe_size:
            raise ValueError(f"document {d} outside 1..{spec.universe_size}")
    counts, lengths, hits = _cycle_scan(spec, docs, num_cycles, seed)
    k = num_cycles
    root = math.sqrt(k)
    out = []
    for j, doc in enumerate(docs):
        qr = spec.state_popularity[:, doc - 1]
        with np.errstate(divide="ignore"):
            logs = np.log1p(-qr)
        # 0 * -inf would poison states with q = 1 that were never visited
        expo = np.where(counts > 0, counts * logs, 0.0).sum(axis=1)
        prod = -np.expm1(expo)
        ind = hits[j].astype(float)
        gap = ind - prod
        ratio, ratio_se = ratio_estimate(ind, spec.marginal[doc - 1] * lengths)
        out.append(Lemma1Probe(
            doc=doc,
            hit_prob=float(ind.mean()),
            hit_stderr=float(ind.std(ddof=1) / root),
            product_form=float(prod.mean()),
            product_stderr=float(prod.std(ddof=1) / root),
            identity_gap=float(gap.mean()),
            identity_stderr=float(gap.std(ddof=1) / root),
            ratio=ratio,
            ratio_stderr=ratio_se,
            mean_cycle_length=float(lengths.mean()),
            num_cycles=k,
        ))
    return out


# --------------------------------------------------------------------------
# Ratio curves


@dataclass
class RatioCurve:
    policy: str
    xs: list[int]
    static: list[float]  # exact tail mass beyond the x most popular documents
    estimates: list[FaultEstimate]
    violations: list[int]
    euler_gap: float = EULER_GAP

    @property
    def ratios(self) -> list[float]:
        return [e.point / s for e, s in zip(self.estimates, self.static)]

    @property
    def ratio_stderr(self) -> list[float]:
        return [e.stderr / s for e, s in zip(self.estimates, self.static)]


def ratio_curve(spec: ValidatedSpec, kind: PolicyKind | str, xs: Sequence[int], stop: StopRule,
                seed: int, *, method: str = "regenerative", context=None, policy_seed: int | None = None,
                trace=None) -> RatioCurve:
    """Simulate ``kind`` at each cache size and divide by the optimal static fault probability."""
    xs = [int(x) for x in xs]
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise ValueError("cache sizes must be strictly increasing")
    if xs and xs[-1] > spec.universe_size / 10:
        raise ValueError(f"largest cache size {xs[-1]} exceeds a tenth of the universe "
                         f"({spec.universe_size})")
    kind = PolicyKind(kind)
    if trace is None:
        trace = generate(spec, stop, seed)
    pseed = seed if policy_seed is None else policy_seed
    estimates, static, violations = [], [], []
    for x in xs:
        ctx = spec.marginal if kind is PolicyKind.STATIC_TOP_X and context is None else context
        rep = replay(new_policy(kind, x, ctx, pseed), trace.docs, trace.cycle_index)
        if method == "regenerative":
            est = regenerative_fault(trace, rep)
        else:
            est = time_average_fault(trace, rep)
        estimates.append(est)
        static.append(spec.tail_mass(x))
        violations.append(rep.violations)
    return RatioCurve(kind.value, xs, static, estimates, violations)


# --------------------------------------------------------------------------
# Result rows


RESULT_COLUMNS = ("experiment_id", "policy", "x", "point", "stderr", "n_cycles", "seed", "spec_hash")


@dataclass(frozen=True)
class ResultRow:
    experiment_id: str
    policy: str
    x: float
    point: float
    stderr: float
    n_cycles: int
    seed: str
    spec_hash: str
    extra: dict = field(default_factory=dict, compare=False)


def aggregate(rows: Iterable[ResultRow]) -> ResultRow:
    """Combine per-seed rows of one (policy, x) cell by inverse-variance weighting.

    Independent of the order of ``rows``.
    """
    rows = sorted(rows, key=lambda r: r.seed)
    w = np.array([1.0 / r.stderr**2 if r.stderr > 0 else np.inf for r in rows])
    pts = np.array([r.point for r in rows])
    if np.isinf(w).any():
        # zero-variance cells (e.g. every request missed) are exact
        sel = np.isinf(w)
        point, se = float(pts[sel].mean()), 0.0
    else:
        point = float((w * pts).sum() / w.sum())
        se = float(1.0 / math.sqrt(w.sum()))
    first = rows[0]
    return ResultRow(first.experiment_id, first.policy, first.x, point, se,
                     sum(r.n_cycles for r in rows), "all", first.spec_hash)


def write_results(rows: Iterable[ResultRow], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        x = int(r.x) if float(r.x).is_integer() else r.x
        w.writerow([r.experiment_id, r.policy, x, repr(r.point), repr(r.stderr), r.n_cycles, r.seed,
                    r.spec_hash])
