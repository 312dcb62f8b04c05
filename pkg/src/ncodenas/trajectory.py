"""Instruction-tuning samples: evaluated history, candidates, best candidate.

Each sample comes from one pruned subspace. History and candidates are
disjoint draws from it; the answer is the candidate with the highest
canonical performance, smaller code text on ties.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .evaluators import Evaluator
from .pruner import iter_members, prune_space, sample_from_subspace, subspace_cardinality
from .space import ArchRecord, NCode, SearchSpace

logger = logging.getLogger(__name__)

INSTRUCTION = (
    "Please analyze the history, rank the candidate and output the highest-performing candidate."
)
# enumerate members instead of rejection-sampling when the draw covers this share of the subspace
_ENUMERATE_FRACTION = 0.25


@dataclass(frozen=True)
class HistoryEntry:
    code: str
    raw: float
    performance: float

    @classmethod
    def from_record(cls, record: ArchRecord) -> "HistoryEntry":
        return cls(str(record.ncode), record.raw, record.performance)


@dataclass(frozen=True)
class TrajectorySample:
    history: tuple[HistoryEntry, ...]
    candidates: tuple[str, ...]
    answer: str
    subspace_provenance: Mapping[str, Any] = field(default_factory=dict)
    seed: int | None = None


@dataclass(frozen=True)
class GenConfig:
    n_history_range: tuple[int, int] = (100, 200)
    n_candidates_range: tuple[int, int] = (100, 200)
    n_samples: int = 1
    performance_decimals: int = 2
    dim_keep_prob: float = 0.5
    option_keep_prob: float = 0.5
    min_candidates: int = 1
    max_retries: int = 100

    def __post_init__(self):
        for name in ("n_history_range", "n_candidates_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} must satisfy 1 <= low <= high, got {(lo, hi)}")
            object.__setattr__(self, name, (int(lo), int(hi)))
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        if self.min_candidates < 1:
            raise ValueError("min_candidates must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GenConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown generation settings: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}


def best_candidate(candidates: Iterable[str], performance: Mapping[str, float]) -> str:
    return min(candidates, key=lambda c: (-performance[c], c))


def _draw_distinct(sub, k: int, rng: np.random.Generator) -> list[NCode]:
    size = subspace_cardinality(sub)
    if k > size:
        raise ValueError(f"cannot draw {k} distinct codes from {size} members")
    if k >= _ENUMERATE_FRACTION * size:
        members = list(iter_members(sub))
        picks = rng.choice(len(members), size=k, replace=False)
        return [members[i] for i in picks]
    seen: set[NCode] = set()
    out: list[NCode] = []
    while len(out) < k:
        code = sample_from_subspace(sub, rng)
        if code not in seen:
            seen.add(code)
            out.append(code)
    return out


def generate_sample(
    space: SearchSpace,
    evaluator: Evaluator,
    cfg: GenConfig,
    rng: np.random.Generator | int,
) -> TrajectorySample:
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    for _ in range(cfg.max_retries):
        sub = prune_space(space, cfg.dim_keep_prob, cfg.option_keep_prob, rng)
        size = subspace_cardinality(sub)
        n_hist = int(rng.integers(cfg.n_history_range[0], cfg.n_history_range[1] + 1))
        n_cand = int(rng.integers(cfg.n_candidates_range[0], cfg.n_candidates_range[1] + 1))
        if n_hist + n_cand > size:
            # shrink both sets in proportion; at least one candidate survives
            requested = n_hist + n_cand
            n_cand = max(1, n_cand * size // requested)
            n_hist = min(n_hist * size // requested, size - n_cand)
            logger.debug("subspace has %d members; clamped to %d history / %d candidates",
                         size, n_hist, n_cand)
            warnings.warn("pruned subspace smaller than the requested sample; counts clamped",
                          stacklevel=2)
        if n_cand < cfg.min_candidates:
            continue
        codes = _draw_distinct(sub, n_hist + n_cand, rng)
        records = [evaluator.evaluate(c) for c in codes]
        history = sorted(
            (HistoryEntry.from_record(r) for r in records[:n_hist]),
            key=lambda e: (-e.performance, e.code),
        )
        cand_records = records[n_hist:]
        candidates = tuple(str(r.ncode) for r in cand_records)
        answer = best_candidate(candidates, {str(r.ncode): r.performance for r in cand_records})
        return TrajectorySample(tuple(history), candidates, answer, sub.to_dict(), seed)
    raise RuntimeError(f"no usable subspace after {cfg.max_retries} attempts")


def _format_value(value: float, decimals: int) -> str:
    text = f"{value:.{decimals}f}"
    return "0" + text[2:] if text.startswith("-0") and float(text) == 0 else text


def format_prompt(history: Sequence[HistoryEntry], candidates: Sequence[str], decimals: int = 2) -> str:
    """Instruction, ``History:`` block and ``Candidate:`` block separated by blank lines.

    History lines read ``NCode: <code>, accuracy: <raw value>;`` in the order
    given; no trailing newline.
    """
    history_block = "\n".join(
        ["History:"] + [f"NCode: {e.code}, accuracy: {_format_value(e.raw, decimals)};" for e in history]
    )
    candidate_block = "\n".join(["Candidate:", *candidates])
    return "\n\n".join([INSTRUCTION, history_block, candidate_block])


def render_prompt(sample: TrajectorySample, decimals: int = 2) -> str:
    return format_prompt(sample.history, sample.candidates, decimals)


def expected_output(sample: TrajectorySample) -> str:
    return sample.answer


def shuffle_mapping(sample: TrajectorySample, rng: np.random.Generator) -> TrajectorySample:
    """Permute history performances across codes, then re-sort descending."""
    if len(sample.history) < 2:
        raise ValueError("shuffling needs at least two history records")
    values = [(e.raw, e.performance) for e in sample.history]
    perm = rng.permutation(len(values))
    shuffled = [
        HistoryEntry(e.code, *values[j]) for e, j in zip(sample.history, perm)
    ]
    shuffled.sort(key=lambda e: (-e.performance, e.code))
    return replace(sample, history=tuple(shuffled))


def sample_seed(seed: int, index: int) -> int:
    """Per-sample seed derived from the dataset seed; independent of worker layout."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def sample_to_record(sample: TrajectorySample, cfg: GenConfig, dataset_seed: int, index: int) -> dict[str, Any]:
    return {
        "instruction": render_prompt(sample, cfg.performance_decimals),
        "output": expected_output(sample),
        "meta": {
            "dataset_seed": dataset_seed,
            "index": index,
            "seed": sample.seed,
            "n_history": len(sample.history),
            "n_candidates": len(sample.candidates),
            "subspace": dict(sample.subspace_provenance),
        },
    }


def generate_dataset(
    space: SearchSpace,
    evaluator: Evaluator,
    cfg: GenConfig,
    seed: int,
    out_path: str | Path,
) -> int:
    """Write ``cfg.n_samples`` JSON Lines records; bytes depend only on inputs and seed."""
    count = 0
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(cfg.n_samples):
            sample = generate_sample(space, evaluator, cfg, sample_seed(seed, i))
            record = sample_to_record(sample, cfg, seed, i)
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            count += 1
    return count


def parse_prompt(text: str) -> tuple[list[tuple[str, float]], list[str]]:
    """Recover (history pairs, candidate codes) from a rendered prompt."""
    history_part, _, candidate_part = text.partition("\n\nCandidate:")
    history = []
    for line in history_part.splitlines():
        if line.startswith("NCode: "):
            code, _, rest = line[len("NCode: "):].partition(", accuracy: ")
            history.append((code, float(rest.rstrip(";"))))
    candidates = [ln for ln in candidate_part.splitlines() if ln.strip()]
    return history, candidates


def verify_dataset(path: str | Path, evaluator: Evaluator) -> int:
    """Re-check every line of a dataset file; returns the number of lines.

    Candidates are re-scored through ``evaluator.score`` and the stored
    output must be the exhaustive argmax over them.
    """
    n = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            record = json.loads(line)
            history, candidates = parse_prompt(record["instruction"])
            if len(set(candidates)) != len(candidates):
                raise AssertionError(f"line {lineno}: duplicate candidates")
            if set(candidates) & {c for c, _ in history}:
                raise AssertionError(f"line {lineno}: candidate also in history")
            best_code, best_value = None, -math.inf
            for text in sorted(candidates):
                value = evaluator.score(NCode(tuple(int(c) for c in text)))
                if value > best_value:
                    best_code, best_value = text, value
            if record["output"] != best_code:
                raise AssertionError(f"line {lineno}: output {record['output']} but best is {best_code}")
            n += 1
    return n
