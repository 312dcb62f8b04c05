import itertools
import json
import sys

import numpy as np
import pytest

from ncodenas.evaluators import (
    EvaluatorSpec,
    ExternalEvaluator,
    ExternalExitError,
    ExternalOutputError,
    ExternalTimeoutError,
    MissingCodeError,
    SyntheticEvaluator,
    SyntheticLandscape,
    TableError,
    TabularEvaluator,
    enumerate_optimum,
    load_table,
    random_landscape,
    separable_landscape,
)
from ncodenas.space import NCode, Provenance, iter_codes, parse_ncode, uniform_space


def write_table(path, rows, header="ncode,acc"):
    path.write_text("\n".join([header] + [f"{c},{v}" for c, v in rows]) + "\n")
    return path


@pytest.fixture
def nb201_table(tmp_path, nb201):
    rng = np.random.default_rng(0)
    rows = [(str(c), f"{v:.2f}") for c, v in zip(iter_codes(nb201), rng.uniform(10, 94, 15625))]
    rows = [(c, "91.45" if c == "333123" else v) for c, v in rows]
    rows[4321] = (rows[4321][0], "94.37")
    return write_table(tmp_path / "nb201.csv", rows)


def test_tabular_lookup(nb201, nb201_table):
    table = load_table(nb201_table, nb201)
    assert len(table) == 15625
    ev = TabularEvaluator(nb201, table, "acc")
    record = ev.evaluate(parse_ncode(nb201, "333123"))
    assert record.performance == 91.45
    assert record.raw_metrics == {"acc": 91.45}


def test_tabular_best_row(nb201, nb201_table):
    table = load_table(nb201_table, nb201)
    code, value = table.best("acc")
    assert value == 94.37
    linear = max(table.rows.items(), key=lambda kv: (kv[1][0], [-ord(ch) for ch in kv[0]]))
    assert code == linear[0]


def test_enumerate_optimum_on_table_matches_linear_scan(nb201, nb201_table):
    table = load_table(nb201_table, nb201)
    ev = TabularEvaluator(nb201, table)
    best = enumerate_optimum(ev)
    top = max(v[0] for v in table.rows.values())
    assert best.performance == top
    assert str(best.ncode) == min(c for c, v in table.rows.items() if v[0] == top)


def test_duplicate_codes_cite_both_lines(tmp_path, nb201):
    # the header is line 1, so rows[5] and rows[7] sit on lines 7 and 9
    rows = [("000000", 1), ("000001", 1), ("000002", 1), ("000003", 1), ("000004", 1),
            ("000012", 1), ("000011", 1), ("000012", 5)]
    path = write_table(tmp_path / "dup.csv", rows)
    with pytest.raises(TableError, match="lines 7 and 9"):
        load_table(path, nb201)


@pytest.mark.parametrize("rows, match", [
    ([("000000", 1), ("00000", 2)], ":3: invalid ncode"),
    ([("000000", 1), ("000009", 2)], ":3: invalid ncode"),
    ([("000000", "abc")], ":2: non-numeric"),
    ([("000000", "nan")], ":2: non-numeric"),
])
def test_table_errors_have_line_numbers(tmp_path, nb201, rows, match):
    path = write_table(tmp_path / "bad.csv", rows)
    with pytest.raises(TableError, match=match):
        load_table(path, nb201)


def test_table_header_checked(tmp_path, nb201):
    path = write_table(tmp_path / "bad.csv", [("000000", 1)], header="code,acc")
    with pytest.raises(TableError, match="header"):
        load_table(path, nb201)


def test_missing_code_policy(tmp_path, nb201):
    path = write_table(tmp_path / "part.csv", [("000000", 50.0), ("000001", 70.0)])
    table = load_table(path, nb201)
    with pytest.raises(MissingCodeError):
        TabularEvaluator(nb201, table).evaluate(parse_ncode(nb201, "444444"))
    imputed = TabularEvaluator(nb201, table, impute_missing=True).evaluate(parse_ncode(nb201, "444444"))
    assert imputed.performance == 50.0
    worst_min = TabularEvaluator(nb201, table, direction="minimize", impute_missing=True)
    assert worst_min.evaluate(parse_ncode(nb201, "444444")).raw == 70.0


def test_minimize_metric_is_negated(tmp_path, nb201):
    path = write_table(tmp_path / "err.csv", [("000000", 3.10), ("000001", 3.34)], header="ncode,test_err")
    ev = TabularEvaluator(nb201, load_table(path, nb201), "test_err", "minimize")
    rec = ev.evaluate(parse_ncode(nb201, "000000"))
    assert rec.performance == -3.10 and rec.raw == 3.10


def test_multi_metric_primary_first(tmp_path, nb201):
    path = tmp_path / "multi.csv"
    path.write_text("ncode,latency,acc\n000000,12.5,91.0\n")
    ev = TabularEvaluator(nb201, load_table(path, nb201), "acc")
    rec = ev.evaluate(parse_ncode(nb201, "000000"))
    assert list(rec.raw_metrics) == ["acc", "latency"]
    assert rec.raw == 91.0


def test_zero_landscape_scores_zero(space_6x5):
    zero = SyntheticLandscape(tuple((0.0,) * 5 for _ in range(6)))
    ev = SyntheticEvaluator(space_6x5, zero)
    rng = np.random.default_rng(0)
    for _ in range(50):
        code = NCode(tuple(rng.integers(5, size=6)))
        assert ev.evaluate(code).performance == 0.0


def test_separable_index_landscape_optimum(space_6x5, separable_6x5):
    # exhaustive oracle: the value is the digit sum
    best = max(itertools.product(range(5), repeat=6), key=sum)
    assert "".join(map(str, best)) == "444444" and sum(best) == 24
    opt = enumerate_optimum(separable_6x5)
    assert str(opt.ncode) == "444444"
    assert opt.performance == 24


def test_enumerate_optimum_single_member():
    space = uniform_space("one", 3, 1)
    ev = SyntheticEvaluator(space, separable_landscape(space))
    assert str(enumerate_optimum(ev).ncode) == "000"


@pytest.mark.parametrize("seed", range(5))
def test_enumerate_optimum_matches_per_dimension_argmax(seed):
    space = uniform_space("u", 5, 4)
    landscape = random_landscape(space, seed)
    ev = SyntheticEvaluator(space, landscape)
    per_dim = "".join(str(int(np.argmax(row))) for row in landscape.utilities)
    assert str(enumerate_optimum(ev).ncode) == per_dim


def test_synthetic_matches_closed_form_with_interactions():
    space = uniform_space("u", 3, 3)
    landscape = random_landscape(space, 4, n_interactions=4)
    ev = SyntheticEvaluator(space, landscape)
    for digits in itertools.product(range(3), repeat=3):
        expected = sum(landscape.utilities[i][d] for i, d in enumerate(digits))
        expected += sum(v for ((i, a), (j, b)), v in landscape.interactions.items()
                        if digits[i] == a and digits[j] == b)
        assert ev.score(NCode(digits)) == pytest.approx(expected, abs=1e-12)


def test_noise_is_seeded_and_fixed_per_code(space_6x5):
    code = NCode((1, 2, 3, 4, 0, 1))
    a = SyntheticEvaluator(space_6x5, separable_landscape(space_6x5, noise_sd=0.5, noise_seed=3))
    b = SyntheticEvaluator(space_6x5, separable_landscape(space_6x5, noise_sd=0.5, noise_seed=3))
    c = SyntheticEvaluator(space_6x5, separable_landscape(space_6x5, noise_sd=0.5, noise_seed=4))
    assert a.score(code) == b.score(code) != c.score(code)
    assert not a.deterministic
    with pytest.raises(ValueError, match="deterministic"):
        enumerate_optimum(a)


def test_noise_has_requested_spread():
    space = uniform_space("u", 8, 10)
    ev = SyntheticEvaluator(space, SyntheticLandscape(tuple((0.0,) * 10 for _ in range(8)), noise_sd=2.0))
    rng = np.random.default_rng(1)
    values = [ev.score(NCode(tuple(rng.integers(10, size=8)))) for _ in range(4000)]
    assert abs(np.mean(values)) < 0.1
    assert abs(np.std(values) - 2.0) < 0.1


def test_memoization_counts_unique(separable_6x5):
    code = NCode((1, 1, 1, 1, 1, 1))
    first = separable_6x5.evaluate(code, Provenance.RANDOM)
    again = separable_6x5.evaluate(code, Provenance.RANDOM)
    assert first == again
    assert separable_6x5.n_unique == 1
    separable_6x5.score(NCode((2, 2, 2, 2, 2, 2)))
    assert separable_6x5.n_unique == 1


def script(tmp_path, body):
    path = tmp_path / "proxy.py"
    path.write_text(body)
    return f"{sys.executable} {path} {{ncode}}"


def test_external_command_last_line(tmp_path, nb201):
    cmd = script(tmp_path, "import sys\nprint('epoch 1 done')\nprint(sum(map(int, sys.argv[1])) / 2)\n")
    ev = ExternalEvaluator(nb201, cmd, "proxy", timeout=30)
    assert ev.evaluate(parse_ncode(nb201, "333123")).performance == 7.5


def test_external_failures_are_distinct(tmp_path, nb201):
    code = parse_ncode(nb201, "000000")
    failing = ExternalEvaluator(nb201, script(tmp_path, "import sys\nsys.exit(3)\n"), timeout=30)
    with pytest.raises(ExternalExitError):
        failing.evaluate(code)
    chatty = ExternalEvaluator(nb201, script(tmp_path, "print('accuracy was good')\n"), timeout=30)
    with pytest.raises(ExternalOutputError):
        chatty.evaluate(code)
    slow = ExternalEvaluator(nb201, script(tmp_path, "import time\ntime.sleep(5)\n"), timeout=0.3)
    with pytest.raises(ExternalTimeoutError):
        slow.evaluate(code)


def test_spec_builds_each_kind(tmp_path, nb201):
    write_table(tmp_path / "t.csv", [("333123", 91.45)])
    tab = EvaluatorSpec.from_dict({"kind": "tabular", "metric_name": "acc", "table_path": "t.csv"})
    assert tab.build(nb201, tmp_path).evaluate(parse_ncode(nb201, "333123")).performance == 91.45

    syn = EvaluatorSpec.from_dict({"kind": "synthetic", "landscape": {"utilities": "index"}})
    assert syn.build(nb201).score(parse_ncode(nb201, "444444")) == 24

    ext = EvaluatorSpec.from_dict({"kind": "external", "command": script(tmp_path, "print(1.5)\n"),
                                   "timeout": 30, "direction": "minimize"})
    assert ext.build(nb201).evaluate(parse_ncode(nb201, "000000")).performance == -1.5

    round_trip = EvaluatorSpec.from_dict(json.loads(json.dumps(syn.to_dict())))
    assert round_trip == syn


def test_spec_rejects_unknown_kind():
    with pytest.raises(ValueError, match="kind"):
        EvaluatorSpec.from_dict({"kind": "oracle"})
