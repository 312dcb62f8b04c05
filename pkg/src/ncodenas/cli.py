"""Command-line entry point.

Subcommands: ``space validate``, ``gen-data``, ``search``, ``baseline``,
``ablate-shuffle`` and ``report``. Configuration lives in JSON files; every
dataset and trace carries a manifest with the resolved configuration, and
``--from-manifest`` reruns ``gen-data``/``search`` from it.

Exit codes: 0 success, 2 usage, 3 validation, 4 evaluator failure,
5 endpoint/ranker configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__
from .evaluators import EvaluatorError, EvaluatorSpec, TableError
from .rankers import LlmRanker, RankerConfigError, ranker_from_dict
from .search import (
    SearchConfig,
    SearchTrace,
    provenance_ratio,
    run_random_search,
    run_regularized_evolution,
    run_search,
)
from .space import NCodeError, SpaceError, load_space, space_cardinality, space_from_dict
from .stats import mean_sd, paired_sign_test
from .trajectory import GenConfig, generate_dataset

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_EVALUATOR, EXIT_ENDPOINT = 0, 2, 3, 4, 5

logger = logging.getLogger("ncodenas")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        self.code = code
        super().__init__(message)


def _read_json(path: str | Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_VALIDATION) from None


def _write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def _resolve_evaluator(path: str | Path) -> dict[str, Any]:
    """Evaluator spec with file-relative paths made absolute, so snapshots are self-contained."""
    data = dict(_read_json(path))
    base = Path(path).resolve().parent
    for key in ("table_path", "cwd"):
        if key in data:
            data[key] = str((base / data[key]).resolve())
    return data


def _manifest(command: str, seed: int | None, inputs: Mapping[str, Any], config: Mapping[str, Any],
              outputs: Mapping[str, str]) -> dict[str, Any]:
    return {
        "tool": "ncodenas",
        "version": __version__,
        "command": command,
        "seed": seed,
        "inputs": dict(inputs),
        "config": dict(config),
        "outputs": dict(outputs),
    }


def _build(config: Mapping[str, Any]):
    space = space_from_dict(config["space"])
    spec = EvaluatorSpec.from_dict(config["evaluator"])
    return space, spec.build(space)


# -- space ------------------------------------------------------------------

def cmd_space_validate(args) -> int:
    try:
        space = load_space(args.space_file)
    except OSError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from None
    print(f"ok, cardinality {space_cardinality(space)}")
    return EXIT_OK


# -- gen-data ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if args.from_manifest:
        manifest = _read_json(args.from_manifest)
    else:
        if not (args.space and args.evaluator):
            raise CliError("gen-data needs --space and --evaluator (or --from-manifest)", EXIT_USAGE)
        gen = _read_json(args.config) if args.config else {}
        if args.n_samples is not None:
            gen["n_samples"] = args.n_samples
        manifest = _manifest(
            "gen-data",
            args.seed,
            {"space": args.space, "evaluator": args.evaluator, "config": args.config},
            {
                "space": load_space(args.space).to_dict(),
                "evaluator": _resolve_evaluator(args.evaluator),
                "gen": GenConfig.from_dict(gen).to_dict(),
            },
            {"dataset": "JSON Lines, one sample per line", "manifest": "<dataset>.manifest.json"},
        )
    space, evaluator = _build(manifest["config"])
    cfg = GenConfig.from_dict(manifest["config"]["gen"])
    out.parent.mkdir(parents=True, exist_ok=True)
    count = generate_dataset(space, evaluator, cfg, int(manifest["seed"]), out)
    _write_json(out.with_name(out.name + ".manifest.json"), manifest)
    print(f"wrote {count} samples to {out}")
    return EXIT_OK


# -- search -----------------------------------------------------------------

def _run_one_search(config: Mapping[str, Any], shuffle: bool = False) -> SearchTrace:
    space, evaluator = _build(config)
    cfg = SearchConfig.from_dict(config["search"])
    ranker = ranker_from_dict(config["ranker"], evaluator)
    try:
        return run_search(space, evaluator, ranker, cfg, shuffle_history=shuffle)
    finally:
        if isinstance(ranker, LlmRanker):
            ranker.close()


def _summary_line(trace: SearchTrace) -> str:
    best = trace.best
    if best is None:
        return f"no evaluations ({trace.status})"
    metrics = ", ".join(f"{k}={v:g}" for k, v in best.raw_metrics.items())
    return (f"best {best.ncode} ({metrics}) unique_evaluations={trace.n_unique} "
            f"fallbacks={trace.fallback_count} status={trace.status}")


def cmd_search(args) -> int:
    out = Path(args.out)
    if args.from_manifest:
        manifest = _read_json(args.from_manifest)
        manifest = manifest.get("manifest", manifest)
    else:
        if not (args.space and args.evaluator and args.ranker):
            raise CliError("search needs --space, --evaluator and --ranker (or --from-manifest)",
                           EXIT_USAGE)
        search = _read_json(args.config) if args.config else {}
        search["seed"] = args.seed
        if args.n_iters is not None:
            search["n_iters"] = args.n_iters
        manifest = _manifest(
            "search",
            args.seed,
            {"space": args.space, "evaluator": args.evaluator, "ranker": args.ranker,
             "config": args.config},
            {
                "space": load_space(args.space).to_dict(),
                "evaluator": _resolve_evaluator(args.evaluator),
                "ranker": _read_json(args.ranker),
                "search": SearchConfig.from_dict(search).to_dict(),
            },
            {"trace": "JSON document with the manifest embedded"},
        )
    trace = _run_one_search(manifest["config"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(trace.to_json(manifest), encoding="utf-8")
    print(_summary_line(trace))
    print(f"trace written to {out}")
    if trace.status == "aborted":
        print(f"search aborted: {trace.error}", file=sys.stderr)
        return EXIT_EVALUATOR
    return EXIT_OK


# -- baseline ---------------------------------------------------------------

def _baseline_job(config: Mapping[str, Any], algo: str, budget: int, seed: int,
                  pop_size: int, tournament: int) -> dict[str, Any]:
    space, evaluator = _build(config)
    if algo == "random":
        trace = run_random_search(space, evaluator, budget, seed)
    else:
        budget = min(budget, space_cardinality(space))
        pop = min(pop_size, budget)
        trace = run_regularized_evolution(space, evaluator, budget, pop, min(tournament, pop), seed)
    return trace.to_dict()


def _map(fn, jobs: int, argsets: Sequence[tuple]) -> list:
    if jobs <= 1 or len(argsets) <= 1:
        return [fn(*a) for a in argsets]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *a) for a in argsets]
        return [f.result() for f in futures]


def _trace_stats(traces: Sequence[SearchTrace]) -> dict[str, Any]:
    finals = [t.final_best for t in traces]
    mean, sd = mean_sd(finals)
    return {"final_best": finals, "mean": mean, "sd": sd}


def cmd_baseline(args) -> int:
    out = Path(args.out)
    config = {
        "space": load_space(args.space).to_dict(),
        "evaluator": _resolve_evaluator(args.evaluator),
    }
    space_from_dict(config["space"])
    argsets = [(config, args.algo, args.budget, s, args.pop_size, args.tournament) for s in args.seeds]
    results = _map(_baseline_job, args.jobs, argsets)
    traces = []
    for seed, data in zip(args.seeds, results):
        trace = SearchTrace.from_dict(data)
        manifest = _manifest("baseline", seed, {"space": args.space, "evaluator": args.evaluator},
                             {**config, "algo": args.algo, "budget": args.budget,
                              "pop_size": args.pop_size, "tournament": args.tournament},
                             {"trace": "JSON document with the manifest embedded"})
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.algo}_seed{seed}.json").write_text(trace.to_json(manifest), encoding="utf-8")
        traces.append(trace)
    stats = {"algo": args.algo, "budget": args.budget, "seeds": list(args.seeds), **_trace_stats(traces)}
    _write_json(out / f"{args.algo}_stats.json", stats)
    print(f"{args.algo}: mean final best {stats['mean']:.6g} (sd {stats['sd']:.3g}) over {len(traces)} seeds")
    if any(t.status == "aborted" for t in traces):
        return EXIT_EVALUATOR
    return EXIT_OK


# -- ablate-shuffle ---------------------------------------------------------

def _ablation_job(config: Mapping[str, Any], seed: int) -> tuple[dict, dict]:
    config = {**config, "search": {**config["search"], "seed": seed}}
    return (_run_one_search(config).to_dict(), _run_one_search(config, shuffle=True).to_dict())


def cmd_ablate_shuffle(args) -> int:
    out = Path(args.out)
    search = _read_json(args.config) if args.config else {}
    if args.n_iters is not None:
        search["n_iters"] = args.n_iters
    config = {
        "space": load_space(args.space).to_dict(),
        "evaluator": _resolve_evaluator(args.evaluator),
        "ranker": _read_json(args.ranker),
        "search": SearchConfig.from_dict(search).to_dict(),
    }
    results = _map(_ablation_job, args.jobs, [(config, s) for s in args.seeds])
    truth, shuffled = [], []
    out.mkdir(parents=True, exist_ok=True)
    inputs = {"space": args.space, "evaluator": args.evaluator, "ranker": args.ranker,
              "config": args.config}
    for seed, (t_data, s_data) in zip(args.seeds, results):
        for tag, data, bucket in (("truth", t_data, truth), ("shuffled", s_data, shuffled)):
            trace = SearchTrace.from_dict(data)
            manifest = _manifest("ablate-shuffle", seed, inputs,
                                 {**config, "search": {**config["search"], "seed": seed},
                                  "shuffle_history": tag == "shuffled"},
                                 {"trace": "JSON document with the manifest embedded"})
            (out / f"seed{seed}_{tag}.json").write_text(trace.to_json(manifest), encoding="utf-8")
            bucket.append(trace)
    a = [t.final_best for t in truth]
    b = [t.final_best for t in shuffled]
    stats: dict[str, Any] = {
        "seeds": list(args.seeds),
        "truth": _trace_stats(truth),
        "shuffled": _trace_stats(shuffled),
        "mean_delta": mean_sd([x - y for x, y in zip(a, b)])[0],
        "sign_test": None,
    }
    if len(args.seeds) < 2:
        print("warning: a single seed gives no significance test", file=sys.stderr)
    else:
        test = paired_sign_test(a, b)
        stats["sign_test"] = {"truth_better": test.n_greater, "shuffled_better": test.n_less,
                              "ties": test.n_ties, "p_value_one_sided": test.p_value}
    _write_json(out / "ablation_stats.json", stats)
    line = f"truth mean {stats['truth']['mean']:.6g}, shuffled mean {stats['shuffled']['mean']:.6g}, " \
           f"mean delta {stats['mean_delta']:.6g}"
    if stats["sign_test"]:
        line += f", sign test p = {stats['sign_test']['p_value_one_sided']:.4g}"
    print(line)
    return EXIT_OK


# -- report -----------------------------------------------------------------

def _load_trace(path: str) -> SearchTrace:
    data = _read_json(path)
    try:
        return SearchTrace.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: not a search trace ({exc})", EXIT_VALIDATION) from None


def cmd_report(args) -> int:
    traces = [(Path(p).stem, _load_trace(p)) for p in args.traces]
    spaces = {(t.space_name, t.space_cardinality) for _, t in traces}
    if len(spaces) > 1:
        raise CliError(f"traces come from different spaces: {sorted(spaces)}", EXIT_VALIDATION)
    algos = {t.algorithm for _, t in traces}
    if len(algos) > 1:
        print(f"warning: mixing traces of different algorithms: {sorted(algos)}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curves = [(name, t.best_curve()) for name, t in traces]
    length = max((len(c) for _, c in curves), default=0)
    with open(out / "best_so_far.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["evaluation"] + [name for name, _ in curves])
        for i in range(length):
            writer.writerow([i + 1] + [repr(c[i]) if i < len(c) else "" for _, c in curves])
    mixed = [(name, t) for name, t in traces if t.config.get("candidate_mode") == "mixed"]
    if mixed and len(mixed) < len(traces):
        print("warning: only mixed-mode traces enter the provenance-ratio report", file=sys.stderr)
    if mixed:
        series = [(name, dict(provenance_ratio(t, args.window))) for name, t in mixed]
        its = sorted(set().union(*(s.keys() for _, s in series)))
        with open(out / "provenance_ratio.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration"] + [name for name, _ in series])
            for it in its:
                writer.writerow([it] + [repr(s[it]) if it in s else "" for _, s in series])
    outputs = {"best_so_far": "best_so_far.csv"}
    if mixed:
        outputs["provenance_ratio"] = "provenance_ratio.csv"
    _write_json(out / "report.manifest.json",
                _manifest("report", None, {"traces": [str(Path(p).resolve()) for p in args.traces]},
                          {"window": args.window}, outputs))
    print(f"report for {len(traces)} trace(s) written to {out}"
          + (" (with provenance ratio)" if mixed else ""))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncodenas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("space", help="search-space utilities")
    space_sub = p.add_subparsers(dest="space_command", required=True)
    v = space_sub.add_parser("validate", help="check a space file and print its cardinality")
    v.add_argument("space_file")
    v.set_defaults(func=cmd_space_validate)

    g = sub.add_parser("gen-data", help="write an instruction-tuning dataset")
    g.add_argument("--space")
    g.add_argument("--evaluator")
    g.add_argument("--config", help="generation settings JSON")
    g.add_argument("--n-samples", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--from-manifest")
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("search", help="run the ranking search loop")
    s.add_argument("--space")
    s.add_argument("--evaluator")
    s.add_argument("--ranker")
    s.add_argument("--config", help="search settings JSON")
    s.add_argument("--n-iters", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--from-manifest")
    s.set_defaults(func=cmd_search)

    b = sub.add_parser("baseline", help="random search or regularized evolution over seeds")
    b.add_argument("--space", required=True)
    b.add_argument("--evaluator", required=True)
    b.add_argument("--algo", choices=("random", "regevo"), required=True)
    b.add_argument("--budget", type=int, required=True)
    b.add_argument("--seeds", type=int, nargs="+", required=True)
    b.add_argument("--pop-size", type=int, default=50)
    b.add_argument("--tournament", type=int, default=10)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)

    a = sub.add_parser("ablate-shuffle", help="paired runs with true vs shuffled history")
    a.add_argument("--space", required=True)
    a.add_argument("--evaluator", required=True)
    a.add_argument("--ranker", required=True)
    a.add_argument("--config")
    a.add_argument("--n-iters", type=int)
    a.add_argument("--seeds", type=int, nargs="+", required=True)
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate_shuffle)

    r = sub.add_parser("report", help="best-so-far and provenance-ratio CSVs from traces")
    r.add_argument("traces", nargs="+")
    r.add_argument("--window", type=int, default=20)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except RankerConfigError as exc:
        print(f"ranker configuration error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except EvaluatorError as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except (SpaceError, TableError, NCodeError, ValueError, KeyError, OSError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
