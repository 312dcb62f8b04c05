"""Iterative ranking search, random search and regularized evolution.

A ranking search evaluates ``n_init`` random codes, then repeatedly shows
the ranker the evaluated history plus a fresh pool of unevaluated codes,
evaluates the chosen one and appends it to the history.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .evaluators import Evaluator, EvaluatorError
from .rankers import RankDecision
from .space import (
    ArchRecord,
    NCode,
    Provenance,
    SearchSpace,
    iter_codes,
    random_code,
    space_cardinality,
)


CANDIDATE_MODES = ("random", "mixed")
# spaces up to this size may be enumerated to find the last unevaluated codes
ENUMERATION_LIMIT = 10**6
_MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class SearchConfig:
    n_init: int = 10
    n_candidates: int = 10
    n_iters: int = 200
    candidate_mode: str = "random"
    history_window: int | None = None
    seed: int = 0
    tournament_size: int = 10

    def __post_init__(self):
        for name in ("n_init", "n_candidates", "tournament_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_iters < 0:
            raise ValueError("n_iters must be >= 0")
        if self.candidate_mode not in CANDIDATE_MODES:
            raise ValueError(f"candidate_mode must be one of {CANDIDATE_MODES}")
        if self.history_window is not None and self.history_window < 1:
            raise ValueError("history_window must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SearchConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown search settings: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class IterationLog:
    candidates: tuple[tuple[NCode, Provenance], ...]
    decision: RankDecision
    evaluated: ArchRecord
    best_so_far: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidates": [[str(c), p.value] for c, p in self.candidates],
            "decision": self.decision.to_dict(),
            "evaluated": self.evaluated.to_dict(),
            "best_so_far": self.best_so_far,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "IterationLog":
        return cls(
            tuple((NCode(tuple(int(ch) for ch in c)), Provenance(p)) for c, p in data["candidates"]),
            RankDecision.from_dict(data["decision"]),
            ArchRecord.from_dict(data["evaluated"]),
            float(data["best_so_far"]),
        )


@dataclass
class SearchTrace:
    algorithm: str
    space_name: str
    space_cardinality: int
    config: dict[str, Any]
    seeds: list[ArchRecord] = field(default_factory=list)
    iterations: list[IterationLog] = field(default_factory=list)
    status: str = "completed"
    error: str | None = None
    n_unique: int = 0

    @property
    def records(self) -> list[ArchRecord]:
        return self.seeds + [it.evaluated for it in self.iterations]

    @property
    def best(self) -> ArchRecord | None:
        records = self.records
        if not records:
            return None
        return min(records, key=lambda r: (-r.performance, str(r.ncode)))

    @property
    def final_best(self) -> float:
        best = self.best
        return best.performance if best is not None else -math.inf

    def best_curve(self) -> list[float]:
        """Best canonical value after each evaluation, seeds included."""
        curve, best = [], -math.inf
        for record in self.records:
            best = max(best, record.performance)
            curve.append(best)
        return curve

    @property
    def fallback_count(self) -> int:
        return sum(it.decision.fallback_used for it in self.iterations)

    def to_dict(self) -> dict[str, Any]:
        best = self.best
        return {
            "algorithm": self.algorithm,
            "space": {"name": self.space_name, "cardinality": self.space_cardinality},
            "config": self.config,
            "status": self.status,
            "error": self.error,
            "seeds": [r.to_dict() for r in self.seeds],
            "iterations": [it.to_dict() for it in self.iterations],
            "summary": {
                "best": best.to_dict() if best is not None else None,
                "n_unique": self.n_unique,
                "n_iterations": len(self.iterations),
                "fallback_count": self.fallback_count,
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SearchTrace":
        return cls(
            algorithm=data["algorithm"],
            space_name=data["space"]["name"],
            space_cardinality=int(data["space"]["cardinality"]),
            config=dict(data["config"]),
            seeds=[ArchRecord.from_dict(r) for r in data["seeds"]],
            iterations=[IterationLog.from_dict(it) for it in data["iterations"]],
            status=data["status"],
            error=data.get("error"),
            n_unique=int(data["summary"]["n_unique"]),
        )

    def to_json(self, manifest: Mapping[str, Any] | None = None) -> str:
        data = self.to_dict()
        if manifest is not None:
            data = {"manifest": manifest, **data}
        return json.dumps(data, indent=2) + "\n"


def sample_unseen(space: SearchSpace, rng: np.random.Generator, k: int,
                  exclude: set[NCode]) -> list[NCode]:
    """Up to ``k`` distinct uniform codes outside ``exclude``; fewer only if the space runs out."""
    size = space_cardinality(space)
    remaining = size - len(exclude)
    k = min(k, remaining)
    if k <= 0:
        return []
    out: list[NCode] = []
    taken = set()
    if size > ENUMERATION_LIMIT or k < 0.25 * remaining:
        for _ in range(_MAX_ATTEMPTS * k):
            code = random_code(space, rng)
            if code not in exclude and code not in taken:
                taken.add(code)
                out.append(code)
                if len(out) == k:
                    return out
        if size > ENUMERATION_LIMIT:
            return out
    left = [c for c in iter_codes(space) if c not in exclude and c not in taken]
    picks = rng.choice(len(left), size=k - len(out), replace=False)
    return out + [left[i] for i in picks]


def mutable_dims(space: SearchSpace) -> list[int]:
    return [i for i, r in enumerate(space.radices) if r > 1]


def mutate(code: NCode, space: SearchSpace, rng: np.random.Generator,
           dims: Sequence[int] | None = None) -> NCode:
    """Resample one uniformly chosen multi-option dimension to a different option."""
    dims = mutable_dims(space) if dims is None else dims
    if not dims:
        raise ValueError("every dimension has a single option; nothing to mutate")
    i = dims[int(rng.integers(len(dims)))]
    shift = 1 + int(rng.integers(space.radices[i] - 1))
    digits = list(code.digits)
    digits[i] = (digits[i] + shift) % space.radices[i]
    return NCode(tuple(digits))


def tournament_select(population: Sequence[ArchRecord], size: int,
                      rng: np.random.Generator) -> ArchRecord:
    size = min(size, len(population))
    picks = rng.choice(len(population), size=size, replace=False)
    return min((population[i] for i in picks), key=lambda r: (-r.performance, str(r.ncode)))


def window_history(history: Sequence[ArchRecord], window: int | None) -> list[ArchRecord]:
    """Top ``ceil(window/2)`` by performance plus the most recent others, in chronological order."""
    if window is None or len(history) <= window:
        return list(history)
    n_top = math.ceil(window / 2)
    by_perf = sorted(range(len(history)), key=lambda i: (-history[i].performance, str(history[i].ncode)))
    keep = set(by_perf[:n_top])
    for i in range(len(history) - 1, -1, -1):
        if len(keep) == window:
            break
        keep.add(i)
    return [history[i] for i in sorted(keep)]


def shuffle_records(history: Sequence[ArchRecord], rng: np.random.Generator) -> list[ArchRecord]:
    """Same codes, performances permuted among them."""
    if len(history) < 2:
        return list(history)
    perm = rng.permutation(len(history))
    return [
        ArchRecord(r.ncode, history[j].performance, history[j].raw_metrics, r.provenance)
        for r, j in zip(history, perm)
    ]


def _build_pool(space, cfg, history, evaluated, rng, dims):
    n = cfg.n_candidates
    if cfg.candidate_mode == "random":
        return [(c, Provenance.RANDOM) for c in sample_unseen(space, rng, n, evaluated)]
    n_random = math.ceil(n / 2)
    pool = [(c, Provenance.RANDOM) for c in sample_unseen(space, rng, n_random, evaluated)]
    in_pool = {c for c, _ in pool}
    for _ in range(n - n_random):
        for _ in range(_MAX_ATTEMPTS):
            parent = tournament_select(history, cfg.tournament_size, rng)
            child = mutate(parent.ncode, space, rng, dims)
            if child not in evaluated and child not in in_pool:
                pool.append((child, Provenance.EVOLVED))
                in_pool.add(child)
                break
    if len(pool) < n:
        extra = sample_unseen(space, rng, n - len(pool), evaluated | in_pool)
        pool.extend((c, Provenance.RANDOM) for c in extra)
    return pool


def _spawn(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def run_search(space: SearchSpace, evaluator: Evaluator, ranker, cfg: SearchConfig,
               shuffle_history: bool = False) -> SearchTrace:
    """Ranking search. Evaluator failures stop the run with ``status='aborted'``.

    With ``shuffle_history`` the ranker sees the history with performances
    permuted across codes; bookkeeping still uses the true values.
    """
    init_rng, pool_rng, rank_rng, shuffle_rng = _spawn(cfg.seed, 4)
    dims = mutable_dims(space)
    if cfg.candidate_mode == "mixed" and not dims:
        raise ValueError("mixed candidate mode needs at least one multi-option dimension")
    algorithm = "ranking_search_shuffled" if shuffle_history else "ranking_search"
    config = {**cfg.to_dict(), "ranker": getattr(ranker, "name", type(ranker).__name__)}
    trace = SearchTrace(algorithm, space.name, space_cardinality(space), config)
    evaluated: set[NCode] = set()
    history: list[ArchRecord] = []
    try:
        for code in sample_unseen(space, init_rng, cfg.n_init, evaluated):
            history.append(evaluator.evaluate(code, Provenance.SEED))
            evaluated.add(code)
        trace.seeds = list(history)
        best = max((r.performance for r in history), default=-math.inf)
        for _ in range(cfg.n_iters):
            pool = _build_pool(space, cfg, history, evaluated, pool_rng, dims)
            if not pool:
                trace.status = "exhausted"
                break
            presented = window_history(history, cfg.history_window)
            if shuffle_history:
                presented = shuffle_records(presented, shuffle_rng)
            codes = [c for c, _ in pool]
            decision = ranker.rank(presented, codes, rank_rng)
            provenance = dict(pool).get(decision.chosen)
            if provenance is None:
                raise RuntimeError(f"ranker chose {decision.chosen}, which is not in the pool")
            record = evaluator.evaluate(decision.chosen, provenance)
            evaluated.add(decision.chosen)
            history.append(record)
            best = max(best, record.performance)
            trace.iterations.append(IterationLog(tuple(pool), decision, record, best))
    except EvaluatorError as exc:
        trace.status = "aborted"
        trace.error = f"{type(exc).__name__}: {exc}"
    trace.n_unique = len(evaluated)
    return trace


def shuffled_history_search(space: SearchSpace, evaluator: Evaluator, ranker,
                            cfg: SearchConfig) -> SearchTrace:
    return run_search(space, evaluator, ranker, cfg, shuffle_history=True)


def _as_rng(rng: np.random.Generator | int | None) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), rng


def _clamp_budget(space: SearchSpace, budget: int) -> int:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    size = space_cardinality(space)
    if budget > size:
        warnings.warn(f"budget {budget} exceeds space cardinality {size}; clamped", stacklevel=3)
        return size
    return budget


def run_random_search(space: SearchSpace, evaluator: Evaluator, budget: int,
                      rng: np.random.Generator | int | None = None) -> SearchTrace:
    rng, seed = _as_rng(rng)
    budget = _clamp_budget(space, budget)
    trace = SearchTrace("random_search", space.name, space_cardinality(space),
                        {"budget": budget, "seed": seed})
    best = -math.inf
    try:
        for code in sample_unseen(space, rng, budget, set()):
            record = evaluator.evaluate(code, Provenance.RANDOM)
            best = max(best, record.performance)
            trace.iterations.append(
                IterationLog(((code, Provenance.RANDOM),), RankDecision(code), record, best)
            )
    except EvaluatorError as exc:
        trace.status = "aborted"
        trace.error = f"{type(exc).__name__}: {exc}"
    trace.n_unique = len(trace.iterations)
    return trace


class RegularizedEvolution:
    """Aging evolution over a fixed-size population.

    Each step picks the best of ``tournament`` uniformly sampled members,
    mutates one site, evaluates the child, appends it and evicts the oldest
    member. Children already evaluated in this run are redrawn, so every
    step spends one unique evaluation.
    """

    def __init__(self, space: SearchSpace, evaluator: Evaluator, pop_size: int = 50,
                 tournament: int = 10, rng: np.random.Generator | None = None):
        if not pop_size >= tournament >= 1:
            raise ValueError("need pop_size >= tournament >= 1")
        self.dims = mutable_dims(space)
        if not self.dims:
            raise ValueError("every dimension has a single option; mutation is impossible")
        self.space = space
        self.evaluator = evaluator
        self.pop_size = pop_size
        self.tournament = tournament
        self.rng = rng if rng is not None else np.random.default_rng()
        self.population: deque[ArchRecord] = deque()
        self.evaluated: set[NCode] = set()

    def initialize(self) -> list[ArchRecord]:
        codes = sample_unseen(self.space, self.rng, self.pop_size, self.evaluated)
        records = []
        for code in codes:
            record = self.evaluator.evaluate(code, Provenance.RANDOM)
            self.evaluated.add(code)
            self.population.append(record)
            records.append(record)
        return records

    def propose(self) -> NCode | None:
        members = list(self.population)
        for _ in range(_MAX_ATTEMPTS):
            parent = tournament_select(members, self.tournament, self.rng)
            child = mutate(parent.ncode, self.space, self.rng, self.dims)
            if child not in self.evaluated:
                return child
        return None

    def step(self) -> ArchRecord | None:
        """One aging step; ``None`` when no unevaluated child could be found."""
        child = self.propose()
        if child is None:
            return None
        record = self.evaluator.evaluate(child, Provenance.EVOLVED)
        self.evaluated.add(child)
        self.population.append(record)
        self.population.popleft()
        return record


def run_regularized_evolution(space: SearchSpace, evaluator: Evaluator, budget: int,
                              pop_size: int = 50, tournament: int = 10,
                              rng: np.random.Generator | int | None = None) -> SearchTrace:
    rng, seed = _as_rng(rng)
    budget = _clamp_budget(space, budget)
    if not budget >= pop_size >= tournament >= 1:
        raise ValueError("need budget >= pop_size >= tournament >= 1")
    evo = RegularizedEvolution(space, evaluator, pop_size, tournament, rng)
    trace = SearchTrace("regularized_evolution", space.name, space_cardinality(space),
                        {"budget": budget, "pop_size": pop_size, "tournament": tournament, "seed": seed})
    best = -math.inf

    def log(record: ArchRecord) -> None:
        nonlocal best
        best = max(best, record.performance)
        code = record.ncode
        trace.iterations.append(
            IterationLog(((code, record.provenance),), RankDecision(code), record, best)
        )

    try:
        for record in evo.initialize():
            log(record)
        while len(trace.iterations) < budget:
            record = evo.step()
            if record is None:
                trace.status = "exhausted"
                break
            log(record)
    except EvaluatorError as exc:
        trace.status = "aborted"
        trace.error = f"{type(exc).__name__}: {exc}"
    trace.n_unique = len(evo.evaluated)
    return trace


def provenance_ratio(trace: SearchTrace, window: int) -> list[tuple[int, float]]:
    """Sliding-window share of chosen candidates that came from random generation.

    Points start at the first full window; iteration numbers are 1-based.
    """
    if trace.config.get("candidate_mode") != "mixed":
        raise ValueError("provenance ratio needs a trace run with candidate_mode='mixed'")
    if window < 1:
        raise ValueError("window must be >= 1")
    flags = [it.evaluated.provenance == Provenance.RANDOM for it in trace.iterations]
    series = []
    running = 0
    for i, flag in enumerate(flags):
        running += flag
        if i >= window:
            running -= flags[i - window]
        if i >= window - 1:
            series.append((i + 1, running / window))
    return series
