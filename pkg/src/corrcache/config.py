"""Experiment configuration files (TOML).

Schema, with units and defaults::

    [experiment]
    id = "name"                # required; copied into every result row
    seeds = [1, 2]             # required, non-empty list of non-negative ints
    cache_sizes = [10, 100]    # required; document counts (or size budgets for placement)
    method = "regenerative"    # or "time_average"
    warmup_fraction = 0.0      # time_average only, in [0, 0.5]
    workers = 1                # parallel seeds; --workers and CORRCACHE_WORKERS override

    [experiment.stop]          # exactly one key
    max_requests = 100000      # or max_time = 1e5 (time units) or max_cycles = 1000

    [[policies]]               # at least one
    kind = "lru"               # static_top_x | static_given_set | lru | lfu | fifo | random_evict
    name = "lru"               # optional label in outputs; defaults to kind, must be unique
    documents = [1, 2]         # static_given_set only
    seed = 7                   # random_evict only; defaults to the run seed

    [spec]
    universe_size = 1000
    transition = [[1.0]]
    [[spec.states]]            # one table per state, in state order
    sojourn = { kind = "exponential", mean = 1.0 }   # | deterministic(value) | pareto(shape, scale)
    popularity = { kind = "zipf", alpha = 0.8 }      # | explicit(weights) | permuted_zipf(alpha, permutation)

    [outputs]
    dir = "results"            # --out overrides

    [lemma1]                   # optional
    docs = [10, 100]
    num_cycles = 10000

    [costs]                    # optional: values = [...] or rule = "power"
    rule = "power"             # f(i) = c * i ** -beta
    c = 1.0
    beta = 0.5
    bound = 1.0                # declared K; defaults to the largest cost (at least c for the power rule)

    [sizes]                    # optional: values = [...] or a seeded draw from a finite set
    choices = [1, 2, 4]
    weights = [0.5, 0.3, 0.2]
    seed = 3
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import rng as _rng
from .errors import ConfigInvalid, ConfigParse, CorrCacheError, IoFailure
from .policies import PolicyKind
from .workload import (
    MaxCycles,
    MaxRequests,
    MaxTime,
    SemiMarkovSpec,
    StopRule,
    ValidatedSpec,
    popularity_from_dict,
    sojourn_from_dict,
    validate_spec,
)


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind
    documents: tuple[int, ...] | None = None
    seed: int | None = None
    name: str | None = None

    @property
    def label(self) -> str:
        return self.name or self.kind.value


@dataclass
class ExperimentConfig:
    id: str
    spec: SemiMarkovSpec
    validated: ValidatedSpec
    policies: list[PolicyConfig]
    cache_sizes: list[float]
    stop: StopRule
    seeds: list[int]
    out_dir: Path
    method: str = "regenerative"
    warmup_fraction: float = 0.0
    workers: int = 1
    probe_docs: list[int] = field(default_factory=list)
    probe_cycles: int = 10_000
    costs: np.ndarray | None = None
    cost_bound: float | None = None
    sizes: np.ndarray | None = None
    source: Path | None = None


def _need(table: dict, key: str, where: str):
    if not isinstance(table, dict) or key not in table:
        name = f"{where}.{key}" if where else key
        raise ConfigInvalid(f"{name}: required field is missing")
    return table[key]


def _int_list(value, where: str, min_len: int = 1) -> list[int]:
    if not isinstance(value, list) or len(value) < min_len or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ConfigInvalid(f"{where}: must be a list of at least {min_len} integer(s)")
    return list(value)


def _parse_stop(table: dict) -> StopRule:
    where = "experiment.stop"
    keys = [k for k in ("max_requests", "max_time", "max_cycles") if k in table]
    if len(keys) != 1:
        raise ConfigInvalid(f"{where}: exactly one of max_requests, max_time, max_cycles is required")
    k = keys[0]
    v = table[k]
    if k == "max_time":
        if not isinstance(v, (int, float)) or v <= 0:
            raise ConfigInvalid(f"{where}.max_time: must be a positive number")
        return MaxTime(float(v))
    if not isinstance(v, int) or v < 1:
        raise ConfigInvalid(f"{where}.{k}: must be a positive integer")
    return MaxRequests(v) if k == "max_requests" else MaxCycles(v)


def _parse_spec(table: dict) -> tuple[SemiMarkovSpec, ValidatedSpec]:
    n = _need(table, "universe_size", "spec")
    if not isinstance(n, int) or n < 1:
        raise ConfigInvalid("spec.universe_size: must be a positive integer")
    transition = _need(table, "transition", "spec")
    states = _need(table, "states", "spec")
    if not isinstance(states, list) or not states:
        raise ConfigInvalid("spec.states: must list one table per state")
    sojourns, pops = [], []
    try:
        for r, st in enumerate(states):
            sojourns.append(sojourn_from_dict(_need(st, "sojourn", f"spec.states[{r}]")))
            pops.append(popularity_from_dict(_need(st, "popularity", f"spec.states[{r}]"), n))
        spec = SemiMarkovSpec(transition, sojourns, pops, n)
        return spec, validate_spec(spec)
    except CorrCacheError as e:
        if isinstance(e, ConfigInvalid):
            raise
        raise ConfigInvalid(f"spec: {type(e).__name__}: {e}") from e
    except (TypeError, ValueError) as e:
        raise ConfigInvalid(f"spec: {e}") from e


def _parse_policies(items) -> list[PolicyConfig]:
    if not isinstance(items, list) or not items:
        raise ConfigInvalid("policies: at least one [[policies]] table is required")
    out = []
    for i, p in enumerate(items):
        where = f"policies[{i}]"
        try:
            kind = PolicyKind(_need(p, "kind", where))
        except ValueError:
            raise ConfigInvalid(f"{where}.kind: unknown policy {p.get('kind')!r}; expected one of "
                                f"{[k.value for k in PolicyKind]}") from None
        docs = None
        if kind is PolicyKind.STATIC_GIVEN_SET:
            docs = tuple(_int_list(_need(p, "documents", where), f"{where}.documents", 0))
        seed = p.get("seed")
        if seed is not None and (not isinstance(seed, int) or seed < 0):
            raise ConfigInvalid(f"{where}.seed: must be a non-negative integer")
        name = p.get("name")
        if name is not None and (not isinstance(name, str) or not name or "," in name):
            raise ConfigInvalid(f"{where}.name: must be a non-empty string without commas")
        out.append(PolicyConfig(kind, docs, seed, name))
    labels = [p.label for p in out]
    dup = sorted({lab for lab in labels if labels.count(lab) > 1})
    if dup:
        raise ConfigInvalid(f"policies: duplicate policy label(s) {dup}; give each a distinct name")
    return out


def _parse_costs(table: dict, n: int) -> tuple[np.ndarray, float]:
    if "values" in table:
        f = np.asarray(table["values"], dtype=float)
        if f.shape != (n,):
            raise ConfigInvalid(f"costs.values: length {len(f)} differs from universe size {n}")
        bound = float(table.get("bound", f.max()))
    elif table.get("rule") == "power":
        c = float(table.get("c", 1.0))
        beta = float(table.get("beta", 0.0))
        f = c * np.arange(1, n + 1, dtype=float) ** -beta
        bound = float(table.get("bound", max(c, float(f.max()))))
    else:
        raise ConfigInvalid("costs: give either values = [...] or rule = \"power\"")
    if np.any(f <= 0) or np.any(f > bound):
        raise ConfigInvalid(f"costs: every cost must lie in (0, {bound}]")
    return f, bound


def _parse_sizes(table: dict, n: int) -> np.ndarray:
    if "values" in table:
        s = np.asarray(table["values"], dtype=float)
        if s.shape != (n,):
            raise ConfigInvalid(f"sizes.values: length {len(s)} differs from universe size {n}")
    else:
        choices = np.asarray(_need(table, "choices", "sizes"), dtype=float)
        weights = np.asarray(table.get("weights", np.ones(len(choices))), dtype=float)
        if weights.shape != choices.shape or np.any(weights < 0) or weights.sum() <= 0:
            raise ConfigInvalid("sizes.weights: must be non-negative, one per choice")
        gen = _rng.stream(int(table.get("seed", 0)), "sizes")
        s = gen.choice(choices, size=n, p=weights / weights.sum())
    if np.any(s <= 0):
        raise ConfigInvalid("sizes: every size must be positive")
    return s


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read config {path}: {e}") from e
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigParse(f"{path}: {e}") from e
    return config_from_dict(doc, source=path)


def config_from_dict(doc: dict, source: Path | None = None) -> ExperimentConfig:
    exp = _need(doc, "experiment", "")
    exp_id = _need(exp, "id", "experiment")
    if not isinstance(exp_id, str) or not exp_id:
        raise ConfigInvalid("experiment.id: must be a non-empty string")
    seeds = _int_list(_need(exp, "seeds", "experiment"), "experiment.seeds")
    if any(s < 0 for s in seeds):
        raise ConfigInvalid("experiment.seeds: seeds must be non-negative")
    sizes_raw = _need(exp, "cache_sizes", "experiment")
    if not isinstance(sizes_raw, list) or not sizes_raw or not all(
            isinstance(v, (int, float)) and v >= 0 for v in sizes_raw):
        raise ConfigInvalid("experiment.cache_sizes: must be a non-empty list of non-negative numbers")
    stop = _parse_stop(_need(exp, "stop", "experiment"))
    method = exp.get("method", "regenerative")
    if method not in ("regenerative", "time_average"):
        raise ConfigInvalid("experiment.method: must be \"regenerative\" or \"time_average\"")
    warm = float(exp.get("warmup_fraction", 0.0))
    if not 0 <= warm <= 0.5:
        raise ConfigInvalid("experiment.warmup_fraction: must lie in [0, 0.5]")
    workers = exp.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigInvalid("experiment.workers: must be a positive integer")

    spec, validated = _parse_spec(_need(doc, "spec", ""))
    n = spec.universe_size
    policies = _parse_policies(doc.get("policies"))
    for i, p in enumerate(policies):
        if p.documents is not None and any(not 1 <= d <= n for d in p.documents):
            raise ConfigInvalid(f"policies[{i}].documents: every document must lie in 1..{n}")
        if p.documents is not None and len(set(p.documents)) > min(sizes_raw):
            raise ConfigInvalid(f"policies[{i}].documents: {len(set(p.documents))} documents exceed "
                                f"the smallest cache size {min(sizes_raw)}")

    base = source.parent if source is not None else Path.cwd()
    out_dir = Path(doc.get("outputs", {}).get("dir", "results"))
    if not out_dir.is_absolute():
        out_dir = base / out_dir

    cfg = ExperimentConfig(
        id=exp_id, spec=spec, validated=validated, policies=policies,
        cache_sizes=[int(v) if float(v).is_integer() else float(v) for v in sizes_raw],
        stop=stop, seeds=seeds, out_dir=out_dir, method=method, warmup_fraction=warm,
        workers=workers, source=source,
    )
    if max(cfg.cache_sizes) * 10 > n:
        warnings.warn(f"universe_size {n} is smaller than 10x the largest cache size "
                      f"{max(cfg.cache_sizes)}; asymptotic comparisons will be off", stacklevel=2)
    if "lemma1" in doc:
        lt = doc["lemma1"]
        cfg.probe_docs = _int_list(_need(lt, "docs", "lemma1"), "lemma1.docs")
        if any(not 1 <= d <= n for d in cfg.probe_docs):
            raise ConfigInvalid(f"lemma1.docs: every document must lie in 1..{n}")
        cfg.probe_cycles = lt.get("num_cycles", 10_000)
        if not isinstance(cfg.probe_cycles, int) or cfg.probe_cycles < 1:
            raise ConfigInvalid("lemma1.num_cycles: must be a positive integer")
    if "costs" in doc:
        cfg.costs, cfg.cost_bound = _parse_costs(doc["costs"], n)
    if "sizes" in doc:
        cfg.sizes = _parse_sizes(doc["sizes"], n)
    return cfg
