"""Semi-Markov modulated request streams.

Requests arrive at the points of a unit-rate Poisson process.  A finite-state
semi-Markov process runs in the background; while it sits in state ``r`` each
request picks document ``i`` with probability ``popularity[r][i]``,
independently of everything else given the state trajectory.

Documents are numbered ``1..N`` and states ``1..M`` in every public
structure.  Streams always start at a regeneration instant: state 1 is
entered at time 0, and every later jump into state 1 closes a cycle.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from typing import IO, Union

import numpy as np

from . import rng as _rng
from .errors import (
    BadPopularityParameters,
    BadSojournParameters,
    CycleCapExceeded,
    NonStochasticMatrix,
    NotIrreducible,
    PopularityLengthMismatch,
    SingularSolve,
    SpecError,
    ZeroMarginalPopularity,
)

ROW_SUM_TOL = 1e-12
STATIONARY_RESIDUAL_TOL = 1e-10
DEFAULT_REQUEST_CAP = 500_000_000

# Fixed block sizes keep streams identical whatever the stop rule.
ARRIVAL_BLOCK = 1 << 16
JUMP_BLOCK = 1 << 14


# --------------------------------------------------------------------------
# Sojourn laws


@dataclass(frozen=True)
class Exponential:
    mean: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and self.mean > 0):
            raise BadSojournParameters(f"exponential mean must be finite and > 0, got {self.mean}")

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return gen.exponential(self.mean, n)


@dataclass(frozen=True)
class Deterministic:
    value: float

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value > 0):
            raise BadSojournParameters(f"deterministic sojourn must be finite and > 0, got {self.value}")

    @property
    def mean(self) -> float:
        return self.value

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, self.value)


@dataclass(frozen=True)
class Pareto:
    """Pareto type I: ``P[X > t] = (scale / t) ** shape`` for ``t >= scale``."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (math.isfinite(self.shape) and self.shape > 1):
            raise BadSojournParameters(f"pareto shape must exceed 1 for a finite mean, got {self.shape}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise BadSojournParameters(f"pareto scale must be > 0, got {self.scale}")

    @property
    def mean(self) -> float:
        return self.shape * self.scale / (self.shape - 1.0)

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        # numpy's pareto() is the Lomax form, shifted by one from type I.
        return self.scale * (1.0 + gen.pareto(self.shape, n))


SojournLaw = Union[Exponential, Deterministic, Pareto]


# --------------------------------------------------------------------------
# Popularity laws


def zipf_weights(alpha: float, universe: int) -> np.ndarray:
    """Normalized ``i ** -alpha`` over ``i = 1..universe``."""
    w = np.arange(1, universe + 1, dtype=float) ** -float(alpha)
    return w / w.sum()


@dataclass(frozen=True)
class Zipf:
    alpha: float
    universe: int

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise BadPopularityParameters(f"zipf alpha must be > 0, got {self.alpha}")
        if int(self.universe) != self.universe or self.universe < 1:
            raise BadPopularityParameters(f"zipf universe must be an integer >= 1, got {self.universe}")

    def weights(self) -> np.ndarray:
        return zipf_weights(self.alpha, int(self.universe))


@dataclass(frozen=True)
class Explicit:
    weights_: tuple[float, ...]

    def __init__(self, weights: Sequence[float]):
        w = tuple(float(v) for v in weights)
        if not w or any(not math.isfinite(v) or v < 0 for v in w) or sum(w) <= 0:
            raise BadPopularityParameters("explicit weights must be finite, non-negative, and not all zero")
        object.__setattr__(self, "weights_", w)

    @property
    def universe(self) -> int:
        return len(self.weights_)

    def weights(self) -> np.ndarray:
        w = np.asarray(self.weights_, dtype=float)
        return w / w.sum()


@dataclass(frozen=True)
class PermutedZipf:
    """Zipf law whose first ``K`` ranks are assigned to documents by ``permutation``.

    ``permutation[k]`` is the (1-based) document receiving the weight of rank
    ``k + 1``; it must be a permutation of ``1..K``.  Ranks beyond ``K`` keep
    their own document.
    """

    alpha: float
    universe: int
    permutation: tuple[int, ...]

    def __init__(self, alpha: float, universe: int, permutation: Sequence[int]):
        object.__setattr__(self, "alpha", float(alpha))
        object.__setattr__(self, "universe", int(universe))
        object.__setattr__(self, "permutation", tuple(int(p) for p in permutation))
        Zipf(self.alpha, self.universe)  # parameter checks
        k = len(self.permutation)
        if k > self.universe or sorted(self.permutation) != list(range(1, k + 1)):
            raise BadPopularityParameters("permutation must rearrange 1..K with K <= universe")

    def weights(self) -> np.ndarray:
        base = zipf_weights(self.alpha, self.universe)
        out = base.copy()
        k = len(self.permutation)
        out[np.asarray(self.permutation, dtype=np.int64) - 1] = base[:k]
        return out


PopularityLaw = Union[Zipf, Explicit, PermutedZipf]


# --------------------------------------------------------------------------
# Specification


@dataclass(frozen=True)
class SemiMarkovSpec:
    transition: tuple[tuple[float, ...], ...]
    sojourn: tuple[SojournLaw, ...]
    popularity: tuple[PopularityLaw, ...]
    universe_size: int

    def __init__(self, transition, sojourn, popularity, universe_size: int):
        object.__setattr__(self, "transition", tuple(tuple(float(p) for p in row) for row in transition))
        object.__setattr__(self, "sojourn", tuple(sojourn))
        object.__setattr__(self, "popularity", tuple(popularity))
        object.__setattr__(self, "universe_size", int(universe_size))

    @property
    def num_states(self) -> int:
        return len(self.transition)

    @classmethod
    def iid(cls, popularity: PopularityLaw, sojourn: SojournLaw | None = None) -> SemiMarkovSpec:
        """Single-state spec: requests are i.i.d. draws from ``popularity``."""
        n = popularity.universe
        return cls([[1.0]], [sojourn or Exponential(1.0)], [popularity], n)


@dataclass(frozen=True, eq=False)
class ValidatedSpec:
    """A checked spec with its stationary quantities precomputed.

    Arrays are read-only so one instance can be shared between replications.
    """

    spec: SemiMarkovSpec
    transition: np.ndarray
    embedded: np.ndarray
    stationary: np.ndarray
    sojourn_means: np.ndarray
    state_popularity: np.ndarray  # M x N
    marginal: np.ndarray
    order: np.ndarray  # 1-based documents sorted by non-increasing marginal

    @property
    def num_states(self) -> int:
        return self.spec.num_states

    @property
    def universe_size(self) -> int:
        return self.spec.universe_size

    def tail_mass(self, x: int) -> float:
        """Static fault probability of caching the ``x`` most popular documents."""
        return float(self.marginal[self.order[x:] - 1].sum()) if x < self.universe_size else 0.0

    def hash(self) -> str:
        return spec_hash(self.spec)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _is_irreducible(p: np.ndarray) -> bool:
    m = len(p)
    adj = p > 0

    def reach(mat):
        seen = {0}
        todo = [0]
        while todo:
            i = todo.pop()
            for j in np.flatnonzero(mat[i]):
                if j not in seen:
                    seen.add(int(j))
                    todo.append(int(j))
        return len(seen) == m

    return reach(adj) and reach(adj.T)


def validate_spec(spec: SemiMarkovSpec) -> ValidatedSpec:
    m = spec.num_states
    if m < 1:
        raise SpecError("at least one state is required")
    p = np.asarray(spec.transition, dtype=float)
    if p.shape != (m, m):
        raise NonStochasticMatrix(f"transition must be {m}x{m}, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise NonStochasticMatrix("transition entries must be finite and non-negative")
    bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > ROW_SUM_TOL)
    if bad.size:
        r = int(bad[0])
        raise NonStochasticMatrix(f"row {r + 1} sums to {p[r].sum()!r}, not 1")
    if m > 1 and np.any(np.diag(p) == 1.0):
        raise NotIrreducible("a state with p_ii = 1 is absorbing")
    if not _is_irreducible(p):
        raise NotIrreducible("embedded chain is not irreducible")
    if len(spec.sojourn) != m:
        raise BadSojournParameters(f"need {m} sojourn laws, got {len(spec.sojourn)}")
    for law in spec.sojourn:
        if not isinstance(law, (Exponential, Deterministic, Pareto)):
            raise BadSojournParameters(f"unsupported sojourn law {law!r}")
    if len(spec.popularity) != m:
        raise PopularityLengthMismatch(f"need {m} popularity laws, got {len(spec.popularity)}")
    n = spec.universe_size
    if n < 1:
        raise PopularityLengthMismatch("universe_size must be >= 1")
    pop = np.empty((m, n))
    for r, law in enumerate(spec.popularity):
        w = law.weights()
        if len(w) != n:
            raise PopularityLengthMismatch(f"state {r + 1} popularity has length {len(w)}, universe is {n}")
        pop[r] = w

    nu = embedded_stationary_of(p)
    means = np.array([law.mean for law in spec.sojourn], dtype=float)
    pi = nu * means
    pi /= pi.sum()
    q = pi @ pop
    zero = np.flatnonzero(q <= 0)
    if zero.size:
        raise ZeroMarginalPopularity(f"document {int(zero[0]) + 1} has zero marginal popularity")
    order = np.argsort(-q, kind="stable") + 1
    return ValidatedSpec(
        spec=spec,
        transition=_readonly(p),
        embedded=_readonly(nu),
        stationary=_readonly(pi),
        sojourn_means=_readonly(means),
        state_popularity=_readonly(pop),
        marginal=_readonly(q),
        order=_readonly(order.astype(np.int64)),
    )


def _gth(p: np.ndarray) -> np.ndarray:
    """Grassmann-Taksar-Heyman elimination; subtraction-free, so stable."""
    a = np.array(p, dtype=float)
    m = len(a)
    for k in range(m - 1, 0, -1):
        s = a[k, :k].sum()
        if s <= 0:
            raise SingularSolve(f"state {k + 1} has no exit to lower states during elimination")
        a[:k, k] /= s
        a[:k, :k] += np.outer(a[:k, k], a[k, :k])
    x = np.zeros(m)
    x[0] = 1.0
    for k in range(1, m):
        x[k] = x[:k] @ a[:k, k]
    return x / x.sum()


def embedded_stationary_of(p: np.ndarray) -> np.ndarray:
    nu = _gth(p)
    resid = np.max(np.abs(nu @ p - nu))
    if not np.all(nu > 0) or resid > STATIONARY_RESIDUAL_TOL:
        raise SingularSolve(f"stationary solve failed (residual {resid:.3g})")
    return nu


def embedded_stationary(spec: ValidatedSpec) -> np.ndarray:
    """Stationary vector of the jump chain."""
    return spec.embedded.copy()


def time_stationary(spec: ValidatedSpec) -> np.ndarray:
    """Long-run fraction of time spent in each state."""
    return spec.stationary.copy()


def marginal_popularity(spec: ValidatedSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(q, order)``: marginal request law and 1-based ranking by it."""
    return spec.marginal.copy(), spec.order.copy()


# --------------------------------------------------------------------------
# Serialization


def _law_to_dict(law) -> dict:
    if isinstance(law, Exponential):
        return {"kind": "exponential", "mean": law.mean}
    if isinstance(law, Deterministic):
        return {"kind": "deterministic", "value": law.value}
    if isinstance(law, Pareto):
        return {"kind": "pareto", "shape": law.shape, "scale": law.scale}
    if isinstance(law, Zipf):
        return {"kind": "zipf", "alpha": law.alpha, "universe": law.universe}
    if isinstance(law, Explicit):
        return {"kind": "explicit", "weights": list(law.weights_)}
    if isinstance(law, PermutedZipf):
        return {"kind": "permuted_zipf", "alpha": law.alpha, "universe": law.universe,
                "permutation": list(law.permutation)}
    raise TypeError(f"unknown law {law!r}")


def sojourn_from_dict(d: dict) -> SojournLaw:
    kind = d.get("kind")
    try:
        if kind == "exponential":
            return Exponential(float(d["mean"]))
        if kind == "deterministic":
            return Deterministic(float(d["value"]))
        if kind == "pareto":
            return Pareto(float(d["shape"]), float(d["scale"]))
    except KeyError as e:
        raise BadSojournParameters(f"{kind} sojourn is missing field {e}") from None
    raise BadSojournParameters(f"unknown sojourn kind {kind!r}")


def popularity_from_dict(d: dict, universe: int | None = None) -> PopularityLaw:
    kind = d.get("kind")
    try:
        if kind == "zipf":
            return Zipf(float(d["alpha"]), int(d.get("universe", universe)))
        if kind == "explicit":
            return Explicit(d["weights"])
        if kind == "permuted_zipf":
            return PermutedZipf(float(d["alpha"]), int(d.get("universe", universe)), d["permutation"])
    except (KeyError, TypeError) as e:
        raise BadPopularityParameters(f"{kind} popularity is missing field {e}") from None
    raise BadPopularityParameters(f"unknown popularity kind {kind!r}")


def spec_to_dict(spec: SemiMarkovSpec) -> dict:
    return {
        "transition": [list(r) for r in spec.transition],
        "sojourn": [_law_to_dict(s) for s in spec.sojourn],
        "popularity": [_law_to_dict(p) for p in spec.popularity],
        "universe_size": spec.universe_size,
    }


def spec_from_dict(d: dict) -> SemiMarkovSpec:
    n = int(d["universe_size"])
    return SemiMarkovSpec(
        transition=d["transition"],
        sojourn=[sojourn_from_dict(s) for s in d["sojourn"]],
        popularity=[popularity_from_dict(p, n) for p in d["popularity"]],
        universe_size=n,
    )


def spec_hash(spec: SemiMarkovSpec) -> str:
    blob = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# Stop rules and stream containers


@dataclass(frozen=True)
class MaxRequests:
    n: int


@dataclass(frozen=True)
class MaxTime:
    t: float


@dataclass(frozen=True)
class MaxCycles:
    k: int


StopRule = Union[MaxRequests, MaxTime, MaxCycles]


@dataclass(frozen=True)
class RequestEvent:
    time: float
    doc: int
    state: int
    cycle_index: int


@dataclass(frozen=True)
class CycleStats:
    cycle_index: int
    start: float
    end: float
    per_state_counts: tuple[int, ...]
    total_count: int
    distinct_docs: frozenset[int]
    per_state_time: tuple[float, ...]


@dataclass
class CycleTable:
    """Columnar statistics for the completed regenerative cycles of a trace.

    Row ``j`` describes cycle ``j``; ``offsets[j]:offsets[j + 1]`` slices the
    trace's request arrays down to that cycle's requests.
    """

    start: np.ndarray
    end: np.ndarray
    per_state_counts: np.ndarray  # K x M
    per_state_time: np.ndarray  # K x M
    offsets: np.ndarray  # K + 1

    def __len__(self) -> int:
        return len(self.start)

    @property
    def total_count(self) -> np.ndarray:
        return self.per_state_counts.sum(axis=1)

    @property
    def length(self) -> np.ndarray:
        return self.end - self.start


@dataclass
class Trace:
    """A generated request stream plus its completed-cycle statistics."""

    times: np.ndarray
    docs: np.ndarray
    states: np.ndarray
    cycle_index: np.ndarray
    cycles: CycleTable
    horizon: float
    seed: int
    spec_hash: str
    rng_algorithm: str = _rng.RNG_ALGORITHM
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def num_cycles(self) -> int:
        return len(self.cycles)

    def events(self) -> Iterator[RequestEvent]:
        for t, d, s, c in zip(self.times.tolist(), self.docs.tolist(), self.states.tolist(),
                              self.cycle_index.tolist()):
            yield RequestEvent(t, d, s, c)

    def distinct_docs(self, j: int) -> frozenset[int]:
        lo, hi = self.cycles.offsets[j], self.cycles.offsets[j + 1]
        return frozenset(self.docs[lo:hi].tolist())

    def iter_cycles(self) -> Iterator[CycleStats]:
        c = self.cycles
        for j in range(len(c)):
            counts = c.per_state_counts[j]
            yield CycleStats(
                cycle_index=j,
                start=float(c.start[j]),
                end=float(c.end[j]),
                per_state_counts=tuple(int(v) for v in counts),
                total_count=int(counts.sum()),
                distinct_docs=self.distinct_docs(j),
                per_state_time=tuple(float(v) for v in c.per_state_time[j]),
            )

    def write_csv(self, fh: IO[str]) -> None:
        """Write one ``time,doc,state,cycle_index`` row per request."""
        fh.write("time,doc,state,cycle_index\n")
        chunk = 1 << 16
        for lo in range(0, len(self), chunk):
            sl = slice(lo, lo + chunk)
            rows = zip(self.times[sl].tolist(), self.docs[sl].tolist(),
                       self.states[sl].tolist(), self.cycle_index[sl].tolist())
            fh.write("".join(f"{t:.9f},{d},{s},{c}\n" for t, d, s, c in rows))


# --------------------------------------------------------------------------
# Sampling


class _Grow:
    """Append-only numpy buffer with amortized doubling."""

    def __init__(self, dtype):
        self.buf = np.empty(1024, dtype=dtype)
        self.n = 0

    def extend(self, values: np.ndarray) -> None:
        need = self.n + len(values)
        if need > len(self.buf):
            cap = max(need, 2 * len(self.buf))
            new = np.empty(cap, dtype=self.buf.dtype)
            new[: self.n] = self.buf[: self.n]
            self.buf = new
        self.buf[self.n:need] = values
        self.n = need

    @property
    def view(self) -> np.ndarray:
        return self.buf[: self.n]


class RequestSampler:
    """Incremental sampler for one stream; pull blocks with :meth:`next_block`.

    Three named random streams drive the arrival clock, the modulating
    chain and sojourns, and the document draws.  Block sizes are fixed, so
    request ``n`` is the same no matter how far the stream is pulled.
    """

    def __init__(self, spec: ValidatedSpec, seed: int, request_cap: int = DEFAULT_REQUEST_CAP):
        self.spec = spec
        self.seed = int(seed)
        self.request_cap = request_cap
        self._arrivals = _rng.stream(seed, "arrivals")
        self._modulation = _rng.stream(seed, "modulation")
        self._documents = _rng.stream(seed, "documents")
        m = spec.num_states
        cum = np.cumsum(spec.transition, axis=1)
        cum[:, -1] = 1.0
        self._cum_rows = [list(row) for row in cum]
        cdf = np.cumsum(spec.state_popularity, axis=1)
        cdf[:, -1] = 1.0
        self._cdf = cdf
        self._m = m
        self._clock = 0.0
        self.num_requests = 0
        # jump k: sojourn in state jump_state[k] over [jump_start[k], jump_start[k+1])
        self.jump_start = _Grow(np.float64)
        self.jump_state = _Grow(np.int16)
        self.jump_regen = _Grow(np.int64)  # cumulative count of jumps into state 1
        self._t_end = 0.0
        self._next_state = 0
        self._regen_total = 0

    # modulating process ---------------------------------------------------
    def _extend_jumps(self) -> None:
        b = JUMP_BLOCK
        states = np.empty(b, dtype=np.int16)
        s = self._next_state
        if self._m == 1:
            states[:] = 0
        else:
            u = self._modulation.random(b).tolist()
            rows = self._cum_rows
            for k in range(b):
                states[k] = s
                s = bisect.bisect_right(rows[s], u[k])
            self._next_state = s
        dur = np.empty(b)
        for r in range(self._m):
            mask = states == r
            cnt = int(mask.sum())
            if cnt:
                dur[mask] = self.spec.spec.sojourn[r].sample(self._modulation, cnt)
        ends = self._t_end + np.cumsum(dur)
        starts = np.concatenate(([self._t_end], ends[:-1]))
        regen = self._regen_total + np.cumsum(states == 0)
        self.jump_start.extend(starts)
        self.jump_state.extend(states)
        self.jump_regen.extend(regen)
        self._t_end = float(ends[-1])
        self._regen_total = int(regen[-1])

    @property
    def trajectory_end(self) -> float:
        return self._t_end

    def cover_time(self, t: float) -> None:
        """Extend the trajectory strictly past time ``t``."""
        while self._t_end <= t:
            self._extend_jumps()

    def regeneration_epoch(self, k: int) -> float:
        """Time of the ``k``-th jump into state 1 (``k = 0`` is time 0)."""
        while self._regen_total < k + 1:
            self._extend_jumps()
            if self.jump_start.n > 50 * self.request_cap:
                raise CycleCapExceeded(f"no {k}-th regeneration within the jump cap")
        regen = self.jump_regen.view
        idx = int(np.searchsorted(regen, k + 1, side="left"))
        return float(self.jump_start.view[idx])

    # requests -------------------------------------------------------------
    def next_block(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(times, docs, states, cycle_index)`` for the next block."""
        if self.num_requests >= self.request_cap:
            raise CycleCapExceeded(f"request cap {self.request_cap} reached")
        b = ARRIVAL_BLOCK
        times = self._clock + np.cumsum(self._arrivals.exponential(1.0, b))
        self._clock = float(times[-1])
        self.cover_time(self._clock)
        jumps = np.searchsorted(self.jump_start.view, times, side="right") - 1
        st = self.jump_state.view[jumps]
        cyc = self.jump_regen.view[jumps] - 1
        u = self._documents.random(b)
        if self._m == 1:
            docs = np.searchsorted(self._cdf[0], u, side="right")
        else:
            docs = np.empty(b, dtype=np.int64)
            for r in range(self._m):
                mask = st == r
                if mask.any():
                    docs[mask] = np.searchsorted(self._cdf[r], u[mask], side="right")
        docs = np.minimum(docs, self.spec.universe_size - 1).astype(np.int32) + 1
        self.num_requests += b
        return times, docs, (st + 1).astype(np.int16), cyc

    # cycle bookkeeping ----------------------------------------------------
    def completed_cycles(self, horizon: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(start, end, per_state_time)`` of cycles closing at or before ``horizon``.

        The trajectory must already cover ``horizon``.
        """
        m = self._m
        starts = self.jump_start.view
        states = self.jump_state.view
        regen = self.jump_regen.view
        nj = int(np.searchsorted(starts, horizon, side="right"))
        ep_idx = np.flatnonzero(states[:nj] == 0)
        ep = starts[ep_idx]
        k = max(len(ep) - 1, 0)
        # a cycle is complete when its closing epoch is <= horizon
        cstart = ep[:k]
        cend = ep[1: k + 1]
        last = int(ep_idx[k]) if k else 0
        jstate = states[:last].astype(np.int64)
        jcycle = regen[:last] - 1
        jdur = np.diff(starts[: last + 1])
        if k:
            ptime = np.bincount(jcycle * m + jstate, weights=jdur, minlength=k * m).reshape(k, m)
        else:
            ptime = np.zeros((0, m))
        return cstart.copy(), cend.copy(), ptime


def _counts_table(cycle_index: np.ndarray, states: np.ndarray, k: int, m: int) -> np.ndarray:
    if k == 0:
        return np.zeros((0, m), dtype=np.int64)
    sel = cycle_index < k
    key = cycle_index[sel] * m + (states[sel].astype(np.int64) - 1)
    return np.bincount(key, minlength=k * m).reshape(k, m)


def generate(spec: ValidatedSpec, stop: StopRule, seed: int, *,
             request_cap: int = DEFAULT_REQUEST_CAP) -> Trace:
    """Sample a request stream and the statistics of its completed cycles."""
    sampler = RequestSampler(spec, seed, request_cap)
    blocks: list[tuple] = []
    total = 0

    if isinstance(stop, MaxRequests):
        if stop.n < 0:
            raise ValueError("MaxRequests needs n >= 0")
        while total < stop.n:
            blk = sampler.next_block()
            blocks.append(blk)
            total += len(blk[0])
        cut = stop.n
        horizon = None
    elif isinstance(stop, MaxTime):
        if not stop.t >= 0:
            raise ValueError("MaxTime needs t >= 0")
        horizon = float(stop.t)
        while not blocks or blocks[-1][0][-1] < horizon:
            blocks.append(sampler.next_block())
        cut = None
    elif isinstance(stop, MaxCycles):
        if stop.k < 1:
            raise ValueError("MaxCycles needs k >= 1")
        horizon = sampler.regeneration_epoch(stop.k)
        while not blocks or blocks[-1][0][-1] < horizon:
            blocks.append(sampler.next_block())
        cut = None
    else:
        raise TypeError(f"unknown stop rule {stop!r}")

    if blocks:
        times, docs, states, cyc = (np.concatenate(parts) for parts in zip(*blocks))
    else:
        times = np.empty(0)
        docs = np.empty(0, dtype=np.int32)
        states = np.empty(0, dtype=np.int16)
        cyc = np.empty(0, dtype=np.int64)
    if cut is None:
        cut = int(np.searchsorted(times, horizon, side="left"))
    else:
        horizon = float(times[cut - 1]) if cut else 0.0
    times, docs, states, cyc = times[:cut], docs[:cut], states[:cut], cyc[:cut]

    sampler.cover_time(horizon)
    cstart, cend, ptime = sampler.completed_cycles(horizon)
    k = len(cstart)
    table = CycleTable(
        start=cstart,
        end=cend,
        per_state_counts=_counts_table(cyc, states, k, spec.num_states),
        per_state_time=ptime,
        offsets=np.searchsorted(cyc, np.arange(k + 1), side="left"),
    )
    return Trace(times=times, docs=docs, states=states, cycle_index=cyc, cycles=table,
                 horizon=horizon, seed=int(seed), spec_hash=spec.hash())


def state_occupancy(spec: ValidatedSpec, horizon: float, seed: int, *,
                    num_batches: int = 30) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of ``[0, horizon)`` spent in each state, with batch-means standard errors.

    The window is cut into ``num_batches`` equal slices; the spread of the
    per-slice fractions gives the error bars.  Uses the same modulation
    stream as :func:`generate` for this seed.
    """
    if not horizon > 0 or num_batches < 2:
        raise ValueError("need horizon > 0 and at least 2 batches")
    sampler = RequestSampler(spec, seed)
    sampler.cover_time(horizon)
    starts = sampler.jump_start.view
    states = sampler.jump_state.view.astype(np.int64)
    m = spec.num_states
    edges = np.linspace(0.0, horizon, num_batches + 1)
    # cumulative time in each state at every jump epoch
    dur = np.diff(starts)
    cum = np.zeros((len(starts), m))
    np.add.at(cum, (np.arange(1, len(starts)), states[:-1]), dur)
    cum = np.cumsum(cum, axis=0)
    j = np.searchsorted(starts, edges, side="right") - 1
    at_edge = cum[j].copy()
    at_edge[np.arange(len(edges)), states[j]] += edges - starts[j]
    frac = np.diff(at_edge, axis=0) / np.diff(edges)[:, None]
    se = frac.std(axis=0, ddof=1) / math.sqrt(num_batches)
    return frac.mean(axis=0), se
