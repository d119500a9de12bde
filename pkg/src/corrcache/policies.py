"""Cache replacement policies and stream replay.

Every policy decides using only the requests seen so far and its own past
decisions.  Static policies never change their contents (a miss is served
without replacement); the adaptive ones insert every missed document and
evict a victim when full.
"""

from __future__ import annotations

import enum
import heapq
from collections import OrderedDict, deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .errors import MissingContext, PolicyError, SetTooLarge

# _step() return codes; any positive value is the evicted document.
HIT = -1
MISS_KEEP = -2
INSERTED = 0


class PolicyKind(str, enum.Enum):
    STATIC_TOP_X = "static_top_x"
    STATIC_GIVEN_SET = "static_given_set"
    LRU = "lru"
    LFU = "lfu"
    FIFO = "fifo"
    RANDOM_EVICT = "random_evict"


@dataclass(frozen=True)
class AccessOutcome:
    hit: bool
    evicted: int | None = None
    inserted: bool = False


def _outcome(code: int) -> AccessOutcome:
    if code == HIT:
        return AccessOutcome(True)
    if code == MISS_KEEP:
        return AccessOutcome(False)
    return AccessOutcome(False, code if code > 0 else None, True)


class CacheState:
    """Base class: a cache of ``capacity`` unit-size documents."""

    kind: PolicyKind

    def __init__(self, capacity: int):
        if capacity < 0:
            raise PolicyError(f"capacity must be >= 0, got {capacity}")
        self.capacity = int(capacity)

    def access(self, doc: int) -> AccessOutcome:
        return _outcome(self._step(doc))

    def _step(self, doc: int) -> int:
        raise NotImplementedError

    @property
    def contents(self) -> frozenset[int]:
        raise NotImplementedError

    def __contains__(self, doc: int) -> bool:
        return doc in self.contents

    def __len__(self) -> int:
        return len(self.contents)

    def check_invariants(self) -> None:
        """Raise AssertionError if internal bookkeeping is inconsistent."""
        assert len(self.contents) <= self.capacity


class StaticCache(CacheState):
    def __init__(self, capacity: int, contents: Iterable[int], kind: PolicyKind):
        super().__init__(capacity)
        self._contents = frozenset(int(d) for d in contents)
        if len(self._contents) > capacity:
            raise SetTooLarge(f"{len(self._contents)} documents do not fit capacity {capacity}")
        self.kind = kind

    def _step(self, doc):
        return HIT if doc in self._contents else MISS_KEEP

    @property
    def contents(self):
        return self._contents


class LRUCache(CacheState):
    kind = PolicyKind.LRU

    def __init__(self, capacity: int):
        super().__init__(capacity)
        self._order: OrderedDict[int, None] = OrderedDict()

    def _step(self, doc):
        order = self._order
        if doc in order:
            order.move_to_end(doc)
            return HIT
        if self.capacity == 0:
            return MISS_KEEP
        victim = INSERTED
        if len(order) >= self.capacity:
            victim = order.popitem(last=False)[0]
        order[doc] = None
        return victim

    @property
    def contents(self):
        return frozenset(self._order)

    @property
    def recency(self) -> list[int]:
        """Residents from least to most recently used."""
        return list(self._order)

    def check_invariants(self):
        super().check_invariants()
        assert len(self._order) <= self.capacity


class LFUCache(CacheState):
    """Evicts the resident with the smallest request count over the whole history.

    Counters cover every document ever requested, resident or not.  Ties go
    to the least recently requested resident: each count bucket keeps its
    members in the order they reached that count, which is the order of
    their latest requests.
    """

    kind = PolicyKind.LFU

    def __init__(self, capacity: int):
        super().__init__(capacity)
        self.counts: dict[int, int] = {}
        self._resident: dict[int, int] = {}
        self._buckets: dict[int, OrderedDict[int, None]] = {}
        self._heap: list[int] = []

    def _bucket_add(self, c, doc):
        b = self._buckets.get(c)
        if b is None:
            b = self._buckets[c] = OrderedDict()
            heapq.heappush(self._heap, c)
            if len(self._heap) > 2 * len(self._buckets) + 64:
                self._heap = sorted(self._buckets)
        b[doc] = None

    def _bucket_remove(self, c, doc):
        b = self._buckets[c]
        del b[doc]
        if not b:
            del self._buckets[c]

    def _step(self, doc):
        c = self.counts.get(doc, 0) + 1
        self.counts[doc] = c
        resident = self._resident
        if doc in resident:
            self._bucket_remove(c - 1, doc)
            self._bucket_add(c, doc)
            resident[doc] = c
            return HIT
        if self.capacity == 0:
            return MISS_KEEP
        victim = INSERTED
        if len(resident) >= self.capacity:
            heap = self._heap
            while heap[0] not in self._buckets:
                heapq.heappop(heap)
            low = heap[0]
            bucket = self._buckets[low]
            victim = next(iter(bucket))
            self._bucket_remove(low, victim)
            del resident[victim]
        resident[doc] = c
        self._bucket_add(c, doc)
        return victim

    @property
    def contents(self):
        return frozenset(self._resident)

    def check_invariants(self):
        super().check_invariants()
        members = {d for b in self._buckets.values() for d in b}
        assert members == set(self._resident)
        for c, b in self._buckets.items():
            assert all(self._resident[d] == c == self.counts[d] for d in b)


class FIFOCache(CacheState):
    kind = PolicyKind.FIFO

    def __init__(self, capacity: int):
        super().__init__(capacity)
        self._queue: deque[int] = deque()
        self._members: set[int] = set()

    def _step(self, doc):
        if doc in self._members:
            return HIT
        if self.capacity == 0:
            return MISS_KEEP
        victim = INSERTED
        if len(self._queue) >= self.capacity:
            victim = self._queue.popleft()
            self._members.remove(victim)
        self._queue.append(doc)
        self._members.add(doc)
        return victim

    @property
    def contents(self):
        return frozenset(self._members)

    @property
    def queue(self) -> list[int]:
        return list(self._queue)

    def check_invariants(self):
        super().check_invariants()
        assert len(self._queue) == len(self._members) == len(set(self._queue))
        assert set(self._queue) == self._members


class RandomEvictCache(CacheState):
    """Evicts a uniformly chosen resident, using its own named random stream."""

    kind = PolicyKind.RANDOM_EVICT
    _DRAWS = 4096

    def __init__(self, capacity: int, seed: int = 0, policy_id: str = "random_evict"):
        super().__init__(capacity)
        self._rng = _rng.stream(seed, f"policy:{policy_id}")
        self._slots: list[int] = []
        self._pos: dict[int, int] = {}
        self._u: list[float] = []

    def _uniform(self) -> float:
        if not self._u:
            self._u = self._rng.random(self._DRAWS).tolist()[::-1]
        return self._u.pop()

    def _step(self, doc):
        pos = self._pos
        if doc in pos:
            return HIT
        if self.capacity == 0:
            return MISS_KEEP
        slots = self._slots
        if len(slots) < self.capacity:
            pos[doc] = len(slots)
            slots.append(doc)
            return INSERTED
        i = int(self._uniform() * len(slots))
        victim = slots[i]
        del pos[victim]
        slots[i] = doc
        pos[doc] = i
        return victim

    @property
    def contents(self):
        return frozenset(self._slots)

    def check_invariants(self):
        super().check_invariants()
        assert all(self._slots[i] == d for d, i in self._pos.items())
        assert len(self._pos) == len(self._slots)


def top_documents(q: Sequence[float] | np.ndarray, x: int) -> list[int]:
    """The ``x`` documents (1-based) of largest ``q``, lowest index first on ties."""
    q = np.asarray(q, dtype=float)
    order = np.argsort(-q, kind="stable")
    return (order[: min(x, len(q))] + 1).tolist()


def new_policy(kind: PolicyKind | str, capacity: int, context=None, seed: int = 0) -> CacheState:
    """Build a cache.

    ``context`` is the marginal popularity vector for ``static_top_x`` and the
    document set for ``static_given_set``; other kinds ignore it.
    """
    kind = PolicyKind(kind)
    if kind is PolicyKind.STATIC_TOP_X:
        if context is None:
            raise MissingContext("static_top_x needs the popularity vector")
        return StaticCache(capacity, top_documents(context, capacity), kind)
    if kind is PolicyKind.STATIC_GIVEN_SET:
        if context is None:
            raise MissingContext("static_given_set needs a document set")
        return StaticCache(capacity, context, kind)
    if kind is PolicyKind.LRU:
        return LRUCache(capacity)
    if kind is PolicyKind.LFU:
        return LFUCache(capacity)
    if kind is PolicyKind.FIFO:
        return FIFOCache(capacity)
    return RandomEvictCache(capacity, seed)


# --------------------------------------------------------------------------
# Replay


@dataclass
class Replay:
    """Outcome of running one policy over one request stream.

    ``lower_bound[j]`` is the number of distinct documents requested in cycle
    ``j`` that were absent from the cache when the cycle began; each of them
    must have missed at least once, so ``cycle_misses >= lower_bound`` must
    hold for every cycle.
    """

    miss: np.ndarray
    cycle_misses: np.ndarray
    lower_bound: np.ndarray
    policy: str
    capacity: int

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(self.cycle_misses < self.lower_bound))


def replay(state: CacheState, docs: np.ndarray, cycle_index: np.ndarray) -> Replay:
    """Feed ``docs`` through ``state`` and audit the per-cycle miss lower bound."""
    n = len(docs)
    ncyc = int(cycle_index[-1]) + 1 if n else 0
    if isinstance(state, StaticCache):
        miss, lb = _replay_static(state, docs, cycle_index, ncyc)
    else:
        miss, lb = _replay_adaptive(state, docs, cycle_index, ncyc)
    cm = np.bincount(cycle_index[miss], minlength=ncyc) if n else np.zeros(0, dtype=np.int64)
    return Replay(miss, cm, lb, state.kind.value, state.capacity)


def _replay_static(state, docs, cycle_index, ncyc):
    n_docs = int(docs.max()) + 1 if len(docs) else 1
    member = np.zeros(max(n_docs, max(state.contents, default=0) + 1), dtype=bool)
    if state.contents:
        member[np.fromiter(state.contents, dtype=np.int64)] = True
    miss = ~member[docs]
    key = np.unique(cycle_index[miss].astype(np.int64) * n_docs + docs[miss])
    lb = np.bincount(key // n_docs, minlength=ncyc)
    return miss, lb


def _replay_adaptive(state, docs, cycle_index, ncyc):
    step = state._step
    miss = np.zeros(len(docs), dtype=bool)
    lb = np.zeros(ncyc, dtype=np.int64)
    cur = -1
    seen: set[int] = set()
    at_start: dict[int, bool] = {}  # membership at cycle start of docs changed since
    lb_cur = 0
    for n, (d, c) in enumerate(zip(docs.tolist(), cycle_index.tolist())):
        if c != cur:
            if cur >= 0:
                lb[cur] = lb_cur
            cur = c
            lb_cur = 0
            seen.clear()
            at_start.clear()
        r = step(d)
        if r != HIT:
            miss[n] = True
        if d not in seen:
            seen.add(d)
            if not at_start.get(d, r == HIT):
                lb_cur += 1
        if r >= INSERTED:
            if d not in at_start:
                at_start[d] = False
            if r > 0 and r not in at_start:
                at_start[r] = True
    if cur >= 0:
        lb[cur] = lb_cur
    return miss, lb
