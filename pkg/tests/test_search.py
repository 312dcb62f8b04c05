import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncodenas.evaluators import (
    MissingCodeError,
    SyntheticEvaluator,
    enumerate_optimum,
    random_landscape,
    separable_landscape,
)
from ncodenas.rankers import KnnRanker, OracleRanker, RandomRanker, RankDecision
from ncodenas.search import (
    IterationLog,
    RegularizedEvolution,
    SearchConfig,
    SearchTrace,
    mutate,
    provenance_ratio,
    run_random_search,
    run_regularized_evolution,
    run_search,
    shuffle_records,
    shuffled_history_search,
    window_history,
)
from ncodenas.space import ArchRecord, Dimension, NCode, Provenance, SearchSpace, parse_ncode, uniform_space


def small_problem(seed=0):
    space = uniform_space("cube", 3, 3)
    return space, SyntheticEvaluator(space, random_landscape(space, seed, n_interactions=2))


def brute_optimum(space, ev):
    return max(ev.score(NCode(d)) for d in itertools.product(*(range(r) for r in space.radices)))


@pytest.mark.parametrize("seed", range(10))
def test_oracle_reaches_enumerated_optimum(seed):
    space, ev = small_problem(seed)
    cfg = SearchConfig(n_init=1, n_candidates=10, n_iters=20, seed=seed)
    trace = run_search(space, ev, OracleRanker(ev), cfg)
    assert trace.final_best == brute_optimum(space, ev)


def test_zero_iterations_keeps_seed_best(space_6x5, separable_6x5):
    trace = run_search(space_6x5, separable_6x5, RandomRanker(), SearchConfig(n_iters=0, seed=3))
    assert trace.iterations == []
    assert len(trace.seeds) == 10
    assert trace.final_best == max(r.performance for r in trace.seeds)


def test_mixed_pool_split(space_6x5, separable_6x5):
    cfg = SearchConfig(n_iters=30, candidate_mode="mixed", seed=1)
    trace = run_search(space_6x5, separable_6x5, OracleRanker(separable_6x5), cfg)
    for it in trace.iterations:
        provs = [p for _, p in it.candidates]
        assert provs.count(Provenance.RANDOM) == 5
        assert provs.count(Provenance.EVOLVED) == 5


def test_odd_pool_gives_extra_random(space_6x5, separable_6x5):
    cfg = SearchConfig(n_candidates=7, n_iters=5, candidate_mode="mixed", seed=2)
    trace = run_search(space_6x5, separable_6x5, RandomRanker(), cfg)
    for it in trace.iterations:
        assert [p for _, p in it.candidates].count(Provenance.RANDOM) == 4


def check_trace_invariants(trace, cfg):
    curve = [it.best_so_far for it in trace.iterations]
    assert curve == sorted(curve)
    seen = {r.ncode for r in trace.seeds}
    for it in trace.iterations:
        pool = [c for c, _ in it.candidates]
        assert it.decision.chosen in pool
        assert it.evaluated.ncode == it.decision.chosen
        assert not seen & set(pool)
        assert len(set(pool)) == len(pool)
        seen.add(it.evaluated.ncode)
    assert trace.n_unique == len(trace.seeds) + len(trace.iterations) == len(seen)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["random", "mixed"]), st.sampled_from(["random", "oracle", "knn"]))
def test_search_invariants(seed, mode, kind):
    space = uniform_space("u", 5, 4)
    ev = SyntheticEvaluator(space, random_landscape(space, seed % 7, noise_sd=0.3))
    ranker = {"random": RandomRanker(), "oracle": OracleRanker(ev), "knn": KnnRanker()}[kind]
    cfg = SearchConfig(n_iters=25, candidate_mode=mode, seed=seed)
    trace = run_search(space, ev, ranker, cfg)
    check_trace_invariants(trace, cfg)
    assert ev.n_unique == trace.n_unique


def test_search_is_reproducible(space_6x5):
    def once():
        ev = SyntheticEvaluator(space_6x5, separable_landscape(space_6x5, noise_sd=0.5, noise_seed=2))
        return run_search(space_6x5, ev, KnnRanker(), SearchConfig(n_iters=40, candidate_mode="mixed", seed=9)).to_json()
    assert once() == once()


def test_trace_json_round_trip(space_6x5, separable_6x5):
    trace = run_search(space_6x5, separable_6x5, KnnRanker(), SearchConfig(n_iters=5, seed=0))
    again = SearchTrace.from_dict(json.loads(trace.to_json()))
    assert again.to_json() == trace.to_json()


def test_exhausted_space_is_flagged():
    space, ev = small_problem()
    trace = run_search(space, ev, RandomRanker(), SearchConfig(n_init=5, n_iters=100, seed=0))
    assert trace.status == "exhausted"
    assert trace.n_unique == 27
    assert trace.final_best == brute_optimum(space, ev)


class FailingEvaluator(SyntheticEvaluator):
    def __init__(self, space, fail_after):
        super().__init__(space, separable_landscape(space))
        self.calls = 0
        self.fail_after = fail_after

    def _compute(self, code):
        self.calls += 1
        if self.calls > self.fail_after:
            raise MissingCodeError(f"no entry for {code}")
        return super()._compute(code)


def test_evaluator_failure_keeps_partial_trace(space_6x5):
    ev = FailingEvaluator(space_6x5, 15)
    trace = run_search(space_6x5, ev, RandomRanker(), SearchConfig(n_iters=20, seed=0))
    assert trace.status == "aborted"
    assert "MissingCodeError" in trace.error
    assert len(trace.seeds) == 10 and len(trace.iterations) == 5


def test_window_history_keeps_top_and_recent():
    history = [ArchRecord(NCode((i,)), float(v), {"m": float(v)}) for i, v in enumerate([9, 1, 8, 2, 3, 4])]
    kept = window_history(history, 4)
    assert [r.ncode.digits[0] for r in kept] == [0, 2, 4, 5]
    assert window_history(history, None) == history


def test_shuffle_single_record_is_identity():
    one = [ArchRecord(NCode((1,)), 2.0, {"m": 2.0})]
    assert shuffle_records(one, np.random.default_rng(0)) == one


def test_shuffle_with_random_ranker_changes_nothing(space_6x5, separable_6x5):
    cfg = SearchConfig(n_iters=30, seed=4)
    plain = run_search(space_6x5, separable_6x5, RandomRanker(), cfg)
    shuffled = shuffled_history_search(space_6x5, separable_6x5, RandomRanker(), cfg)
    assert [it.evaluated for it in plain.iterations] == [it.evaluated for it in shuffled.iterations]


def test_random_search_budget_one(space_6x5, separable_6x5):
    trace = run_random_search(space_6x5, separable_6x5, 1, 0)
    assert len(trace.iterations) == 1
    assert trace.final_best == trace.iterations[0].evaluated.performance


def test_random_search_full_budget_finds_optimum():
    space, ev = small_problem(3)
    trace = run_random_search(space, ev, 27, 0)
    assert trace.final_best == brute_optimum(space, ev)
    with pytest.warns(UserWarning, match="clamped"):
        assert len(run_random_search(space, ev, 40, 0).iterations) == 27


def test_random_search_rarely_hits_optimum(space_6x5, separable_6x5):
    finals = [run_random_search(space_6x5, separable_6x5, 200, s).final_best for s in range(30)]
    assert np.mean(finals) < enumerate_optimum(separable_6x5).performance


def test_mutation_changes_one_digit(nb201):
    parent = parse_ncode(nb201, "333123")
    rng = np.random.default_rng(0)
    for _ in range(500):
        child = mutate(parent, nb201, rng)
        diff = [i for i, (a, b) in enumerate(zip(parent.digits, child.digits)) if a != b]
        assert len(diff) == 1
        assert child.digits[diff[0]] < 5


def test_mutation_skips_single_option_dimensions():
    space = SearchSpace("s", (Dimension("a", ("x",)), Dimension("b", ("p", "q", "r")), Dimension("c", ("y",))))
    rng = np.random.default_rng(1)
    children = {mutate(NCode((0, 0, 0)), space, rng) for _ in range(100)}
    assert children == {NCode((0, 1, 0)), NCode((0, 2, 0))}


def test_regevo_rejects_unmutable_space():
    space = uniform_space("flat", 4, 1)
    ev = SyntheticEvaluator(space, separable_landscape(space))
    with pytest.raises(ValueError, match="mutation"):
        run_regularized_evolution(space, ev, 1, pop_size=1, tournament=1, rng=0)


def test_regevo_population_stays_fixed(space_6x5, separable_6x5):
    evo = RegularizedEvolution(space_6x5, separable_6x5, pop_size=20, tournament=5, rng=np.random.default_rng(0))
    evo.initialize()
    for _ in range(100):
        oldest = evo.population[0]
        record = evo.step()
        assert len(evo.population) == 20
        assert evo.population[-1] is record and oldest not in evo.population


def test_regevo_pop_equal_budget_is_random(space_6x5, separable_6x5):
    trace = run_regularized_evolution(space_6x5, separable_6x5, 30, pop_size=30, tournament=5, rng=0)
    assert len(trace.iterations) == 30
    assert all(it.evaluated.provenance == Provenance.RANDOM for it in trace.iterations)


def test_regevo_spends_unique_budget(space_6x5, separable_6x5):
    trace = run_regularized_evolution(space_6x5, separable_6x5, 200, rng=1)
    codes = [it.evaluated.ncode for it in trace.iterations]
    assert len(codes) == len(set(codes)) == trace.n_unique == 200


def fake_trace(provenances):
    logs = []
    for i, p in enumerate(provenances):
        code = NCode((i,))
        rec = ArchRecord(code, 0.0, {"m": 0.0}, p)
        logs.append(IterationLog(((code, p),), RankDecision(code), rec, 0.0))
    return SearchTrace("ranking_search", "s", 10, {"candidate_mode": "mixed"}, iterations=logs)


def test_provenance_ratio_examples():
    R, E = Provenance.RANDOM, Provenance.EVOLVED
    assert {v for _, v in provenance_ratio(fake_trace([R] * 8), 3)} == {1.0}
    series = provenance_ratio(fake_trace([R, E] * 5), 2)
    assert {v for _, v in series} == {0.5}
    assert series[0][0] == 2 and series[-1][0] == 10


def test_provenance_ratio_needs_mixed_mode(space_6x5, separable_6x5):
    trace = run_search(space_6x5, separable_6x5, RandomRanker(), SearchConfig(n_iters=3))
    with pytest.raises(ValueError, match="mixed"):
        provenance_ratio(trace, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(n_candidates=0)
    with pytest.raises(ValueError):
        SearchConfig(candidate_mode="greedy")
    with pytest.raises(ValueError):
        SearchConfig(history_window=0)
    with pytest.raises(ValueError, match="unknown"):
        SearchConfig.from_dict({"iters": 5})
