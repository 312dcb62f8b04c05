"""Pruned subspaces for training-data diversity.

A dropped dimension is pinned (to its null option when the space declares
one, mirroring removal of a DAG edge). Kept dimensions lose each option
independently; an emptied dimension gets one random option back.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Iterator, Mapping, Union

import numpy as np

from .space import NCode, SearchSpace


@dataclass(frozen=True)
class Fixed:
    index: int


DimState = Union[Fixed, tuple]


@dataclass(frozen=True)
class Subspace:
    parent: str
    labels: tuple[str, ...]
    states: tuple[DimState, ...]

    def allowed(self, i: int) -> tuple[int, ...]:
        state = self.states[i]
        return (state.index,) if isinstance(state, Fixed) else state

    def contains(self, code: NCode) -> bool:
        return len(code) == len(self.states) and all(
            d in self.allowed(i) for i, d in enumerate(code.digits)
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for label, state in zip(self.labels, self.states):
            out[label] = f"fixed:{state.index}" if isinstance(state, Fixed) else list(state)
        return out


def full_subspace(space: SearchSpace) -> Subspace:
    return Subspace(space.name, space.labels, tuple(tuple(range(r)) for r in space.radices))


def subspace_from_dict(space: SearchSpace, data: Mapping[str, Any]) -> Subspace:
    states: list[DimState] = []
    for dim in space.dimensions:
        value = data[dim.label]
        if isinstance(value, str):
            if not value.startswith("fixed:"):
                raise ValueError(f"bad subspace state {value!r} for {dim.label!r}")
            states.append(Fixed(int(value[len("fixed:"):])))
        else:
            states.append(tuple(sorted(int(v) for v in value)))
    return Subspace(space.name, space.labels, tuple(states))


def prune_space(
    space: SearchSpace,
    dim_keep_prob: float = 0.5,
    option_keep_prob: float = 0.5,
    rng: np.random.Generator | None = None,
) -> Subspace:
    for p in (dim_keep_prob, option_keep_prob):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
    rng = np.random.default_rng() if rng is None else rng
    states: list[DimState] = []
    for dim in space.dimensions:
        if rng.random() >= dim_keep_prob:
            index = dim.null_index if dim.null_index is not None else int(rng.integers(dim.radix))
            states.append(Fixed(index))
            continue
        kept = np.flatnonzero(rng.random(dim.radix) < option_keep_prob)
        if kept.size == 0:
            kept = np.array([rng.integers(dim.radix)])
        states.append(tuple(int(i) for i in kept))
    return Subspace(space.name, space.labels, tuple(states))


def sample_from_subspace(sub: Subspace, rng: np.random.Generator) -> NCode:
    digits = []
    for i in range(len(sub.states)):
        allowed = sub.allowed(i)
        digits.append(allowed[0] if len(allowed) == 1 else allowed[int(rng.integers(len(allowed)))])
    return NCode(tuple(digits))


def subspace_cardinality(sub: Subspace) -> int:
    return math.prod(len(sub.allowed(i)) for i in range(len(sub.states)))


def iter_members(sub: Subspace) -> Iterator[NCode]:
    for digits in itertools.product(*(sub.allowed(i) for i in range(len(sub.states)))):
        yield NCode(digits)
