"""Search spaces and the NCode codec.

An architecture in a space with ``d`` dimensions is a string of ``d`` decimal
digits; digit ``i`` is the index of the chosen option in dimension ``i``.
Option labels are opaque text and are never interpreted.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

MAX_RADIX = 10


class SpaceError(ValueError):
    """Invalid search-space definition. ``path`` locates the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class AssignmentError(ValueError):
    """An assignment cannot be encoded. ``dimension`` names the culprit."""

    def __init__(self, message: str, dimension: str):
        self.dimension = dimension
        super().__init__(f"dimension {dimension!r}: {message}")


class UnknownOptionError(AssignmentError):
    pass


class MissingDimensionError(AssignmentError):
    pass


class ExtraDimensionError(AssignmentError):
    pass


class NCodeError(ValueError):
    pass


class NCodeCharacterError(NCodeError):
    pass


class NCodeLengthError(NCodeError):
    pass


class NCodeRadixError(NCodeError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(message)


@dataclass(frozen=True)
class Dimension:
    label: str
    options: tuple[str, ...]
    null_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(str(o) for o in self.options))

    @property
    def radix(self) -> int:
        return len(self.options)

    @cached_property
    def option_index(self) -> dict[str, int]:
        return {o: i for i, o in enumerate(self.options)}


@dataclass(frozen=True)
class SearchSpace:
    name: str
    dimensions: tuple[Dimension, ...]

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        _validate_space(self)

    def __len__(self) -> int:
        return len(self.dimensions)

    @cached_property
    def radices(self) -> tuple[int, ...]:
        return tuple(d.radix for d in self.dimensions)

    @cached_property
    def labels(self) -> tuple[str, ...]:
        return tuple(d.label for d in self.dimensions)

    @cached_property
    def null_option_index(self) -> tuple[int | None, ...]:
        return tuple(d.null_index for d in self.dimensions)

    def to_dict(self) -> dict[str, Any]:
        dims = []
        for d in self.dimensions:
            entry: dict[str, Any] = {"label": d.label, "options": list(d.options)}
            if d.null_index is not None:
                entry["null_option_index"] = d.null_index
            dims.append(entry)
        return {"name": self.name, "dimensions": dims}


@dataclass(frozen=True, order=True)
class NCode:
    """Option-index sequence. Ordering and ``str`` follow the canonical text."""

    digits: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "digits", tuple(map(int, self.digits)))

    def __str__(self) -> str:
        return "".join(str(d) for d in self.digits)

    def __len__(self) -> int:
        return len(self.digits)

    @property
    def text(self) -> str:
        return str(self)


class Provenance(str, Enum):
    SEED = "seed"
    RANDOM = "random"
    EVOLVED = "evolved"
    EXTERNAL = "external"


@dataclass(frozen=True)
class ArchRecord:
    """An evaluated architecture.

    ``performance`` is the canonical (higher-is-better) value; ``raw_metrics``
    keeps the metric values as reported, primary metric first.
    """

    ncode: NCode
    performance: float
    raw_metrics: Mapping[str, float] = field(default_factory=dict)
    provenance: Provenance = Provenance.EXTERNAL

    def __post_init__(self):
        if not math.isfinite(self.performance):
            raise ValueError(f"performance of {self.ncode} is not finite: {self.performance}")
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        object.__setattr__(self, "raw_metrics", dict(self.raw_metrics))

    @property
    def raw(self) -> float:
        """Primary raw metric, or the canonical value when none was recorded."""
        for value in self.raw_metrics.values():
            return value
        return self.performance

    def to_dict(self) -> dict[str, Any]:
        return {
            "ncode": str(self.ncode),
            "performance": self.performance,
            "raw_metrics": dict(self.raw_metrics),
            "provenance": self.provenance.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ArchRecord":
        return cls(
            ncode=NCode(tuple(int(c) for c in data["ncode"])),
            performance=float(data["performance"]),
            raw_metrics={k: float(v) for k, v in data.get("raw_metrics", {}).items()},
            provenance=Provenance(data.get("provenance", "external")),
        )


def _validate_space(space: SearchSpace) -> None:
    if not isinstance(space.name, str) or not space.name:
        raise SpaceError("name must be a non-empty string", "name")
    if not space.dimensions:
        raise SpaceError("at least one dimension is required", "dimensions")
    seen: set[str] = set()
    for i, dim in enumerate(space.dimensions):
        path = f"dimensions[{i}]"
        if not isinstance(dim.label, str) or not dim.label:
            raise SpaceError("label must be a non-empty string", f"{path}.label")
        if dim.label in seen:
            raise SpaceError(f"duplicate dimension label {dim.label!r}", f"{path}.label")
        seen.add(dim.label)
        if not 1 <= dim.radix <= MAX_RADIX:
            raise SpaceError(
                f"dimension {dim.label!r} has {dim.radix} options; "
                f"each dimension needs 1 to {MAX_RADIX} options (one decimal digit)",
                f"{path}.options",
            )
        if len(set(dim.options)) != dim.radix:
            raise SpaceError(f"duplicate option label in {dim.label!r}", f"{path}.options")
        if dim.null_index is not None and not 0 <= dim.null_index < dim.radix:
            raise SpaceError(
                f"null option index {dim.null_index} outside [0, {dim.radix})",
                f"{path}.null_option_index",
            )


def space_from_dict(data: Mapping[str, Any]) -> SearchSpace:
    """Build a space from its JSON form, reporting the first violation with a path."""
    if not isinstance(data, Mapping):
        raise SpaceError("space document must be a JSON object")
    if "name" not in data:
        raise SpaceError("missing field", "name")
    dims_raw = data.get("dimensions")
    if not isinstance(dims_raw, list):
        raise SpaceError("must be an array", "dimensions")
    dims = []
    for i, entry in enumerate(dims_raw):
        path = f"dimensions[{i}]"
        if not isinstance(entry, Mapping):
            raise SpaceError("must be an object", path)
        if "label" not in entry:
            raise SpaceError("missing field", f"{path}.label")
        options = entry.get("options")
        if not isinstance(options, list):
            raise SpaceError("must be an array", f"{path}.options")
        null = entry.get("null_option_index")
        if null is not None and (isinstance(null, bool) or not isinstance(null, int)):
            raise SpaceError("must be an integer", f"{path}.null_option_index")
        dims.append(Dimension(entry["label"], tuple(options), null))
    return SearchSpace(data["name"], tuple(dims))


def load_space(path: str | Path) -> SearchSpace:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpaceError(f"invalid JSON: {exc}") from exc
    return space_from_dict(data)


def encode(space: SearchSpace, assignment: Mapping[str, str]) -> NCode:
    """Map ``{dimension label: option label}`` to its NCode."""
    known = set(space.labels)
    for label in assignment:
        if label not in known:
            raise ExtraDimensionError("not a dimension of this space", label)
    digits = []
    for dim in space.dimensions:
        if dim.label not in assignment:
            raise MissingDimensionError("no option chosen", dim.label)
        choice = str(assignment[dim.label])
        index = dim.option_index.get(choice)
        if index is None:
            raise UnknownOptionError(f"unknown option {choice!r}", dim.label)
        digits.append(index)
    return NCode(tuple(digits))


def validate_ncode(space: SearchSpace, code: NCode | Sequence[int]) -> NCode:
    digits = code.digits if isinstance(code, NCode) else tuple(code)
    if len(digits) != len(space):
        raise NCodeLengthError(f"code has {len(digits)} digits, space has {len(space)} dimensions")
    for pos, (digit, radix) in enumerate(zip(digits, space.radices)):
        if not 0 <= digit < radix:
            raise NCodeRadixError(
                f"digit {digit} at position {pos} outside [0, {radix}) "
                f"for dimension {space.dimensions[pos].label!r}",
                pos,
            )
    return code if isinstance(code, NCode) else NCode(digits)


def decode(space: SearchSpace, code: NCode) -> dict[str, str]:
    validate_ncode(space, code)
    return {dim.label: dim.options[d] for dim, d in zip(space.dimensions, code.digits)}


def render(code: NCode) -> str:
    return str(code)


def parse_ncode(space: SearchSpace, text: str) -> NCode:
    """Parse canonical NCode text: exactly one ASCII digit per dimension."""
    if not isinstance(text, str) or not all(c in "0123456789" for c in text):
        raise NCodeCharacterError(f"NCode must contain only digits 0-9, got {text!r}")
    if len(text) != len(space):
        raise NCodeLengthError(f"code {text!r} has {len(text)} digits, space has {len(space)} dimensions")
    return validate_ncode(space, NCode(tuple(int(c) for c in text)))


def space_cardinality(space: SearchSpace) -> int:
    return math.prod(space.radices)


def iter_codes(space: SearchSpace) -> Iterator[NCode]:
    """All codes of the space in lexicographic order."""
    for digits in itertools.product(*(range(r) for r in space.radices)):
        yield NCode(digits)


def random_code(space: SearchSpace, rng: np.random.Generator) -> NCode:
    return NCode(tuple(int(rng.integers(r)) for r in space.radices))


def canonical_performance(raw: float, direction: str) -> float:
    """Map a raw metric to the internal higher-is-better scale."""
    raw = float(raw)
    if not math.isfinite(raw):
        raise ValueError(f"raw metric must be finite, got {raw}")
    if direction == "maximize":
        return raw
    if direction == "minimize":
        return -raw if raw != 0 else 0.0
    raise ValueError(f"direction must be 'maximize' or 'minimize', got {direction!r}")


def uniform_space(name: str, n_dims: int, radix: int, null_index: int | None = None) -> SearchSpace:
    """Space of ``n_dims`` dimensions sharing ``radix`` numbered options."""
    options = tuple(str(i) for i in range(radix))
    return SearchSpace(
        name,
        tuple(Dimension(f"d{i}", options, null_index) for i in range(n_dims)),
    )


NAS_BENCH_201_OPS = ("none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3")


def nas_bench_201_space() -> SearchSpace:
    """The six-edge cell space; option 0 (``none``) zeroizes an edge."""
    edges = ("1<-0", "2<-0", "2<-1", "3<-0", "3<-1", "3<-2")
    return SearchSpace(
        "nas-bench-201",
        tuple(Dimension(f"edge {e}", NAS_BENCH_201_OPS, 0) for e in edges),
    )
