import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from blockflow.bench import (
    CSV_HEADER,
    BenchResult,
    OracleChecker,
    Scenario,
    export_results,
    load_grid,
    render_csv,
    run_benchmark,
    trim_count,
    trimmed_mean,
)
from blockflow.builtin import idle_gap_model
from blockflow.costalloc import CostProfile
from blockflow.errors import EmptyInput, OracleMismatch
from blockflow.model import RandomSpec, generate_random_model
from blockflow.nodeconfig import EventAll, EventTimeSync, TimerDriven
from blockflow.runtime import RunResult

from conftest import chain


class TestTrimmedMean:
    def test_one_to_ten(self):
        assert trimmed_mean(list(range(1, 11)), 0.8) == 5.5

    def test_single_sample(self):
        assert trimmed_mean([42.0]) == 42.0

    def test_constant(self):
        assert trimmed_mean([7] * 33) == 7

    def test_empty(self):
        with pytest.raises(EmptyInput):
            trimmed_mean([])

    @pytest.mark.parametrize("f", [0.0, -0.1, 1.5])
    def test_bad_fraction(self, f):
        with pytest.raises(ValueError):
            trimmed_mean([1, 2], f)

    @pytest.mark.parametrize("n, dropped", [(1, 0), (9, 0), (10, 1), (19, 1), (20, 2), (1000, 100)])
    def test_trim_count(self, n, dropped):
        assert trim_count(n, 0.8) == dropped

    @given(st.lists(st.integers(-10**6, 10**6), min_size=1, max_size=60), st.randoms())
    @settings(max_examples=200, deadline=None)
    def test_permutation_invariant_and_bounded(self, xs, rnd):
        ys = list(xs)
        rnd.shuffle(ys)
        assert trimmed_mean(xs) == trimmed_mean(ys)
        assert min(xs) <= trimmed_mean(xs) <= max(xs)

    @given(st.lists(st.integers(0, 1000), min_size=1, max_size=40))
    @settings(max_examples=200, deadline=None)
    def test_matches_direct_formula(self, xs):
        n = len(xs)
        k = n // 10  # floor(n * 0.1) without float rounding
        kept = sorted(xs)[k: n - k]
        assert trimmed_mean(xs) == pytest.approx(sum(kept) / len(kept))


def result(sid, mean=1.0):
    return BenchResult(sid, "m", 1, 1, "event_all", [1, 2, 3], mean, 1, 3, 2.0, 0, 0, 3)


class TestExport:
    def test_single_result(self, tmp_path):
        path = tmp_path / "r.csv"
        export_results([result("a")], path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2 and lines[0] == ",".join(CSV_HEADER)
        assert lines[1] == "a,m,1,1,event_all,3,1.0,1,3,0,0"

    def test_ordered_by_scenario(self, tmp_path):
        rs = [result("c"), result("a"), result("b")]
        for perm in itertools.permutations(rs):
            assert [l.split(",")[0] for l in render_csv(perm).splitlines()[1:]] == ["a", "b", "c"]

    def test_reexport_is_byte_identical(self, tmp_path):
        rs = [result("x", 1.25), result("y", 2.5)]
        export_results(rs, tmp_path / "1.csv")
        export_results(list(reversed(rs)), tmp_path / "2.csv")
        assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "2.csv").read_bytes()

    def test_no_results(self, tmp_path):
        with pytest.raises(EmptyInput):
            export_results([], tmp_path / "r.csv")
        assert not list(tmp_path.iterdir())

    def test_failed_write_leaves_nothing(self, tmp_path):
        target = tmp_path / "missing" / "r.csv"
        with pytest.raises(OSError):
            export_results([result("a")], target)
        assert not target.exists()


class TestOracleChecker:
    def test_detects_a_wrong_output(self, gain_chain):
        oc = OracleChecker(gain_chain)
        oc.check(RunResult(0, 0, 1, {"out1": 6.0}, {"in1": 3.0}))
        with pytest.raises(OracleMismatch):
            oc.check(RunResult(1, 0, 1, {"out1": 6.000000000000001}, {"in1": 3.0}))

    def test_tracks_delay_state(self):
        oc = OracleChecker(chain(("d", "Delay", {"state": 0.0})))
        oc.check(RunResult(0, 0, 1, {"out1": 0.0}, {"in1": 1.0}))
        oc.check(RunResult(1, 0, 1, {"out1": 1.0}, {"in1": 2.0}))
        assert oc.checked == 2


class TestRunBenchmark:
    def test_sample_count(self):
        g = generate_random_model(RandomSpec(15, 2, 2, 0.3, seed=3))
        s = Scenario("s", g, CostProfile({"Gain": 1000, "Sum": 1000}), 2, 2, EventAll(), reps=100, warmup=5)
        r = run_benchmark(s)
        assert r.reps == 100 and r.averaged == 80
        assert r.min_ns <= r.trimmed_mean_ns <= r.max_ns

    def test_pinning_does_not_change_outputs(self):
        g = generate_random_model(RandomSpec(15, 2, 2, 0.3, seed=8))
        runs = []
        for pin in (True, False):
            s = Scenario("s", g, CostProfile({"Gain": 500}), 2, 4, EventTimeSync("exact"), reps=20,
                         warmup=0, pinning=pin)
            runs.append(run_benchmark(s))
        assert all(r.reps == 20 for r in runs)

    def test_timer_scenario(self):
        s = Scenario("t", idle_gap_model(), CostProfile({}, 10), 2, 2, TimerDriven(2_000_000), reps=10, warmup=1)
        r = run_benchmark(s)
        assert r.reps == 10 and r.pattern == "timer"


class TestGrid:
    def test_loads_sample_grid(self, samples_dir):
        scenarios = load_grid(samples_dir / "grid.json")
        assert [s.id for s in scenarios] == ["sample-1core", "sample-2core", "chains-2x2"]
        assert scenarios[2].virtual_cores == 4 and scenarios[2].model_label == "chains4"

    def test_random_source(self, tmp_path):
        grid = {"scenarios": [{"id": "r", "model": {"random": {"n_blocks": 12, "n_inports": 2, "seed": 4}},
                               "cores": 2, "reps": 3}]}
        (tmp_path / "g.json").write_text(json.dumps(grid))
        (s,) = load_grid(tmp_path / "g.json")
        assert len(s.model.blocks) == 12 and s.reps == 3

    def test_rejects_bad_scenarios(self):
        with pytest.raises(ValueError):
            Scenario("x", idle_gap_model(), CostProfile(), 2, 1, EventAll())
        with pytest.raises(ValueError):
            Scenario("x", idle_gap_model(), CostProfile(), 1, 1, EventAll(), reps=0)
