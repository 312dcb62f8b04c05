"""Performance sources behind a single contract.

Every evaluator maps an NCode to raw metric values, canonicalizes the primary
metric (higher is better) and memoizes by code text. ``evaluate`` counts
unique evaluations; ``peek`` and ``score`` read the same values without
counting, for oracles and tests.
"""

from __future__ import annotations

import csv
import math
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .space import (
    ArchRecord,
    NCode,
    NCodeError,
    Provenance,
    SearchSpace,
    canonical_performance,
    iter_codes,
    parse_ncode,
    space_cardinality,
    validate_ncode,
)

DIRECTIONS = ("maximize", "minimize")


class EvaluatorError(RuntimeError):
    pass


class MissingCodeError(EvaluatorError):
    pass


class ExternalCommandError(EvaluatorError):
    pass


class ExternalExitError(ExternalCommandError):
    pass


class ExternalTimeoutError(ExternalCommandError):
    pass


class ExternalOutputError(ExternalCommandError):
    pass


class TableError(ValueError):
    pass


class Evaluator:
    """Base class; subclasses implement ``_compute(code) -> {metric: raw}``."""

    deterministic = True

    def __init__(self, space: SearchSpace, metric_name: str, direction: str = "maximize"):
        if direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
        self.space = space
        self.metric_name = metric_name
        self.direction = direction
        self._cache: dict[str, dict[str, float]] = {}
        self._evaluated: set[str] = set()
        self._lock = threading.Lock()

    def _compute(self, code: NCode) -> dict[str, float]:
        raise NotImplementedError

    def _metrics(self, code: NCode) -> dict[str, float]:
        key = str(code)
        cached = self._cache.get(key)
        if cached is None:
            validate_ncode(self.space, code)
            computed = self._compute(code)
            with self._lock:
                cached = self._cache.setdefault(key, computed)
        return cached

    def peek(self, code: NCode, provenance: Provenance | str = Provenance.EXTERNAL) -> ArchRecord:
        metrics = self._metrics(code)
        return ArchRecord(
            code,
            canonical_performance(metrics[self.metric_name], self.direction),
            metrics,
            Provenance(provenance),
        )

    def score(self, code: NCode) -> float:
        return canonical_performance(self._metrics(code)[self.metric_name], self.direction)

    def evaluate(self, code: NCode, provenance: Provenance | str = Provenance.EXTERNAL) -> ArchRecord:
        record = self.peek(code, provenance)
        with self._lock:
            self._evaluated.add(str(code))
        return record

    @property
    def n_unique(self) -> int:
        return len(self._evaluated)

    def reset_counter(self) -> None:
        with self._lock:
            self._evaluated.clear()


@dataclass(frozen=True)
class Table:
    metrics: tuple[str, ...]
    rows: Mapping[str, tuple[float, ...]]

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, metric: str) -> int:
        try:
            return self.metrics.index(metric)
        except ValueError:
            raise KeyError(f"table has no metric {metric!r}; columns are {self.metrics}") from None

    def best(self, metric: str, direction: str = "maximize") -> tuple[str, float]:
        """Best row under ``direction``; ties go to the smaller code text."""
        col = self.column(metric)
        key = (lambda kv: (-kv[1][col], kv[0])) if direction == "maximize" else (lambda kv: (kv[1][col], kv[0]))
        code, values = min(self.rows.items(), key=key)
        return code, values[col]


def load_table(path: str | Path, space: SearchSpace) -> Table:
    """Read a ``ncode,<metric>[,...]`` CSV, validating every row against ``space``."""
    rows: dict[str, tuple[float, ...]] = {}
    first_line: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "ncode":
            raise TableError(f"{path}:1: header must be 'ncode,<metric>[,<metric>...]', got {header}")
        metrics = tuple(header[1:])
        if len(set(metrics)) != len(metrics):
            raise TableError(f"{path}:1: duplicate metric column")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise TableError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            text = row[0].strip()
            try:
                parse_ncode(space, text)
            except NCodeError as exc:
                raise TableError(f"{path}:{line}: invalid ncode {text!r}: {exc}") from None
            if text in rows:
                raise TableError(
                    f"{path}: duplicate ncode {text!r} on lines {first_line[text]} and {line}"
                )
            values = []
            for name, cell in zip(metrics, row[1:]):
                try:
                    value = float(cell)
                except ValueError:
                    value = math.nan
                if not math.isfinite(value):
                    raise TableError(f"{path}:{line}: non-numeric value {cell!r} in column {name!r}")
                values.append(value)
            rows[text] = tuple(values)
            first_line[text] = line
    return Table(metrics, rows)


class TabularEvaluator(Evaluator):
    def __init__(
        self,
        space: SearchSpace,
        table: Table,
        metric_name: str | None = None,
        direction: str = "maximize",
        impute_missing: bool = False,
    ):
        metric_name = metric_name or table.metrics[0]
        super().__init__(space, metric_name, direction)
        self.table = table
        self.impute_missing = impute_missing
        self._col = table.column(metric_name)
        # primary metric first in every record
        self._order = [self._col] + [i for i in range(len(table.metrics)) if i != self._col]

    def _compute(self, code: NCode) -> dict[str, float]:
        values = self.table.rows.get(str(code))
        if values is None:
            if not self.impute_missing:
                raise MissingCodeError(f"code {code} not present in table")
            pick = min if self.direction == "maximize" else max
            return {self.metric_name: pick(v[self._col] for v in self.table.rows.values())}
        return {self.table.metrics[i]: values[i] for i in self._order}


@dataclass(frozen=True)
class SyntheticLandscape:
    """Additive option utilities plus sparse pairwise terms and Gaussian noise.

    ``interactions`` maps ``((dim_i, opt), (dim_j, opt))`` to a bonus added
    when both options are selected. Noise for a code is drawn from a stream
    seeded by ``(noise_seed, digits)``, so a noisy landscape is still a fixed
    function of the code for a given seed.
    """

    utilities: tuple[tuple[float, ...], ...]
    interactions: Mapping[tuple[tuple[int, int], tuple[int, int]], float] = field(default_factory=dict)
    noise_sd: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        utilities = tuple(tuple(float(u) for u in row) for row in self.utilities)
        if not all(math.isfinite(u) for row in utilities for u in row):
            raise ValueError("utilities must be finite")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        object.__setattr__(self, "utilities", utilities)
        object.__setattr__(self, "interactions", dict(self.interactions))

    def mean_value(self, digits: Sequence[int]) -> float:
        total = math.fsum(self.utilities[i][d] for i, d in enumerate(digits))
        for ((i, a), (j, b)), bonus in self.interactions.items():
            if digits[i] == a and digits[j] == b:
                total += bonus
        return total

    def value(self, digits: Sequence[int]) -> float:
        mean = self.mean_value(digits)
        if self.noise_sd == 0:
            return mean
        rng = np.random.default_rng([self.noise_seed, *digits])
        return mean + self.noise_sd * float(rng.standard_normal())

    def to_dict(self) -> dict[str, Any]:
        return {
            "utilities": [list(row) for row in self.utilities],
            "interactions": [
                {"a": list(a), "b": list(b), "value": v} for (a, b), v in self.interactions.items()
            ],
            "noise_sd": self.noise_sd,
            "noise_seed": self.noise_seed,
        }


def separable_landscape(space: SearchSpace, utilities: Sequence[Sequence[float]] | None = None,
                        noise_sd: float = 0.0, noise_seed: int = 0) -> SyntheticLandscape:
    """Utilities default to the option index, so the all-max-digit code is optimal."""
    if utilities is None:
        utilities = [list(range(r)) for r in space.radices]
    return SyntheticLandscape(tuple(tuple(row) for row in utilities), {}, noise_sd, noise_seed)


def random_landscape(space: SearchSpace, seed: int, n_interactions: int = 0,
                     interaction_scale: float = 1.0, noise_sd: float = 0.0) -> SyntheticLandscape:
    rng = np.random.default_rng(seed)
    utilities = tuple(tuple(rng.normal(size=r).tolist()) for r in space.radices)
    interactions = {}
    if len(space) >= 2:
        for _ in range(n_interactions):
            i, j = sorted(rng.choice(len(space), size=2, replace=False).tolist())
            a = int(rng.integers(space.radices[i]))
            b = int(rng.integers(space.radices[j]))
            interactions[((i, a), (j, b))] = float(rng.normal(scale=interaction_scale))
    return SyntheticLandscape(utilities, interactions, noise_sd, seed)


def landscape_from_dict(space: SearchSpace, data: Mapping[str, Any]) -> SyntheticLandscape:
    noise_sd = float(data.get("noise_sd", 0.0))
    noise_seed = int(data.get("noise_seed", 0))
    utilities = data.get("utilities", "index")
    if utilities == "index":
        landscape = separable_landscape(space, None, noise_sd, noise_seed)
    elif utilities == "random":
        landscape = random_landscape(
            space,
            int(data.get("utility_seed", 0)),
            int(data.get("n_interactions", 0)),
            float(data.get("interaction_scale", 1.0)),
            noise_sd,
        )
        landscape = SyntheticLandscape(landscape.utilities, landscape.interactions, noise_sd, noise_seed)
    else:
        if len(utilities) != len(space) or any(
            len(row) != r for row, r in zip(utilities, space.radices)
        ):
            raise ValueError("utilities must have one row per dimension, one entry per option")
        interactions = {
            (tuple(t["a"]), tuple(t["b"])): float(t["value"]) for t in data.get("interactions", [])
        }
        landscape = SyntheticLandscape(tuple(map(tuple, utilities)), interactions, noise_sd, noise_seed)
    for (i, a), (j, b) in landscape.interactions:
        if not (0 <= a < space.radices[i] and 0 <= b < space.radices[j]):
            raise ValueError(f"interaction {(i, a)}-{(j, b)} outside the space")
    return landscape


class SyntheticEvaluator(Evaluator):
    def __init__(self, space: SearchSpace, landscape: SyntheticLandscape,
                 metric_name: str = "score", direction: str = "maximize"):
        if len(landscape.utilities) != len(space):
            raise ValueError("landscape and space disagree on dimension count")
        super().__init__(space, metric_name, direction)
        self.landscape = landscape
        self.deterministic = landscape.noise_sd == 0

    def _compute(self, code: NCode) -> dict[str, float]:
        return {self.metric_name: self.landscape.value(code.digits)}


class ExternalEvaluator(Evaluator):
    """Runs a command per code; the last non-empty stdout line is the metric.

    ``{ncode}`` in the command template is replaced with the code text.
    """

    deterministic = False

    def __init__(self, space: SearchSpace, command: str | Sequence[str], metric_name: str = "metric",
                 direction: str = "maximize", timeout: float = 3600.0, cwd: str | Path | None = None):
        super().__init__(space, metric_name, direction)
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("empty command template")
        self.timeout = timeout
        self.cwd = cwd

    def _compute(self, code: NCode) -> dict[str, float]:
        args = [part.replace("{ncode}", str(code)) for part in self.command]
        try:
            proc = subprocess.run(
                args, capture_output=True, text=True, timeout=self.timeout, cwd=self.cwd
            )
        except subprocess.TimeoutExpired:
            raise ExternalTimeoutError(f"command for {code} exceeded {self.timeout}s") from None
        except OSError as exc:
            raise ExternalExitError(f"command for {code} could not start: {exc}") from None
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-1:] or [""]
            raise ExternalExitError(f"command for {code} exited with {proc.returncode}: {tail[0]}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        try:
            value = float(lines[-1])
        except (IndexError, ValueError):
            raise ExternalOutputError(
                f"command for {code} did not end its output with a number: {lines[-1:]!r}"
            ) from None
        if not math.isfinite(value):
            raise ExternalOutputError(f"command for {code} printed non-finite value {value}")
        return {self.metric_name: value}


@dataclass(frozen=True)
class EvaluatorSpec:
    kind: str
    metric_name: str
    direction: str = "maximize"
    settings: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvaluatorSpec":
        kind = data.get("kind")
        if kind not in ("tabular", "synthetic", "external"):
            raise ValueError(f"evaluator kind must be tabular, synthetic or external, got {kind!r}")
        direction = data.get("direction", "maximize")
        if direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
        settings = {k: v for k, v in data.items() if k not in ("kind", "metric_name", "direction")}
        default_metric = {"tabular": "", "synthetic": "score", "external": "metric"}[kind]
        return cls(kind, data.get("metric_name", default_metric), direction, settings)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "metric_name": self.metric_name, "direction": self.direction,
                **self.settings}

    def build(self, space: SearchSpace, base_dir: str | Path = ".") -> Evaluator:
        base = Path(base_dir)
        s = self.settings
        if self.kind == "tabular":
            table = load_table(base / s["table_path"], space)
            return TabularEvaluator(space, table, self.metric_name or None, self.direction,
                                    bool(s.get("impute_missing", False)))
        if self.kind == "synthetic":
            landscape = landscape_from_dict(space, s.get("landscape", {}))
            return SyntheticEvaluator(space, landscape, self.metric_name, self.direction)
        cwd = s.get("cwd")
        return ExternalEvaluator(space, s["command"], self.metric_name, self.direction,
                                 float(s.get("timeout", 3600.0)),
                                 base / cwd if cwd is not None else None)


def enumerate_optimum(evaluator: Evaluator, cap: int = 10**6) -> ArchRecord:
    """Exhaustive argmax over the evaluator's space; ties go to the smaller code."""
    space = evaluator.space
    size = space_cardinality(space)
    if size > cap:
        raise ValueError(f"space has {size} members, above the enumeration cap {cap}")
    if not evaluator.deterministic:
        raise ValueError("enumerate_optimum needs a deterministic evaluator")
    best_code, best_value = None, -math.inf
    for code in iter_codes(space):
        value = evaluator.score(code)
        # lexicographic iteration order keeps the first maximum on ties
        if value > best_value:
            best_code, best_value = code, value
    return evaluator.peek(best_code)
