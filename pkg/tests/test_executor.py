import random
import threading

import numpy as np
import pytest

from conftest import SLEEP_ENVELOPE, sha256
from oracles import two_pass_mean
from warpdiff.errors import EmptyMatrix, ProbeParseFailure, SpawnFailure
from warpdiff.executor import ExecutionPlan, build_command, build_matrix, parse_profile, run_case, run_plan
from warpdiff.model import RunRecord, RuntimeSpec, StageTiming, TestCase


def case_for(wasm, name, **kw):
    return TestCase(name, wasm_path=str(wasm), expected_stdout_digest=sha256(f"output of {name}\n"), **kw)


def test_plan_validation():
    with pytest.raises(ValueError):
        ExecutionPlan((), (), repetitions=0)
    with pytest.raises(ValueError):
        ExecutionPlan((), (), timeout_s=0)
    with pytest.raises(ValueError):
        ExecutionPlan((), (), interleaving="random")
    plan = ExecutionPlan((), ())
    assert (plan.repetitions, plan.timeout_s, plan.warmup_runs, plan.interleaving) == (10, 300.0, 1, "by_case")


def test_build_command_is_shell_free():
    rt = RuntimeSpec("w", "wasmtime run --dir=. {wasm} {args}")
    case = TestCase("c", wasm_path="/a dir/m.wasm", args=("x y", "$HOME"))
    assert build_command(rt, case) == ["wasmtime", "run", "--dir=.", "/a dir/m.wasm", "x y", "$HOME"]
    rt = RuntimeSpec("p", "perf-wrap --out={profile} {wasm}", stage_probe="external_profile")
    assert build_command(rt, case, "/tmp/p.json") == ["perf-wrap", "--out=/tmp/p.json", "/a dir/m.wasm"]


def test_run_case_ok_within_envelope(fake_runtimes, wasm_modules):
    rt = RuntimeSpec("good", f"{fake_runtimes['good']} {{wasm}}")
    plan = ExecutionPlan([rt], [], repetitions=3)
    recs = run_case(case_for(wasm_modules["a"], "a"), rt, plan)
    assert [r.rep_index for r in recs] == [0, 1, 2]
    assert all(r.status == "ok" for r in recs)
    lo, hi = SLEEP_ENVELOPE
    assert all(lo <= r.timing.total_s <= hi for r in recs)
    assert all(not r.timing.stages_present for r in recs)


def test_run_case_runtime_error(fake_runtimes, wasm_modules):
    rt = RuntimeSpec("fail", f"{fake_runtimes['failing']} {{wasm}}")
    recs = run_case(case_for(wasm_modules["a"], "a"), rt, ExecutionPlan([rt], [], repetitions=2, warmup_runs=0))
    assert [r.status for r in recs] == ["runtime_error"] * 2
    assert recs[0].exit_code == 1
    assert "unreachable" in recs[0].detail


def test_run_case_wrong_output(fake_runtimes, wasm_modules):
    rt = RuntimeSpec("bad", f"{fake_runtimes['bad_d']} {{wasm}}")
    plan = ExecutionPlan([rt], [], repetitions=1, warmup_runs=0)
    assert run_case(case_for(wasm_modules["d"], "d"), rt, plan)[0].status == "wrong_output"
    assert run_case(case_for(wasm_modules["a"], "a"), rt, plan)[0].status == "ok"


def test_run_case_timeout(tmp_path, wasm_modules):
    script = tmp_path / "slow.sh"
    script.write_text("#!/bin/sh\nsleep 5\n")
    script.chmod(0o755)
    rt = RuntimeSpec("slow", f"{script} {{wasm}}")
    rec = run_case(case_for(wasm_modules["a"], "a"), rt, ExecutionPlan([rt], [], repetitions=1, warmup_runs=0,
                                                                       timeout_s=0.2))[0]
    assert rec.status == "timeout"
    assert rec.timing.total_s < 2


def test_run_case_spawn_failure(tmp_path, wasm_modules):
    rt = RuntimeSpec("missing", f"{tmp_path}/no-such-runtime {{wasm}}")
    with pytest.raises(SpawnFailure):
        run_case(case_for(wasm_modules["a"], "a"), rt, ExecutionPlan([rt], [], repetitions=1))


def test_stdin_is_fed(tmp_path):
    script = tmp_path / "echo.sh"
    script.write_text("#!/bin/sh\ncat\n")
    script.chmod(0o755)
    wasm = tmp_path / "m.wasm"
    wasm.write_bytes(b"")
    rt = RuntimeSpec("cat", f"{script} {{wasm}}")
    case = TestCase("c", wasm_path=str(wasm), stdin_data=b"hello\n", expected_stdout_digest=sha256("hello\n"))
    assert run_case(case, rt, ExecutionPlan([rt], [case], repetitions=1, warmup_runs=0))[0].status == "ok"


def test_external_profile_stages(fake_runtimes, wasm_modules):
    rt = RuntimeSpec("prof", f"{fake_runtimes['profiled']} {{wasm}} {{profile}}", stage_probe="external_profile")
    recs = run_case(case_for(wasm_modules["a"], "a"), rt, ExecutionPlan([rt], [], repetitions=2))
    for r in recs:
        t = r.timing
        assert t.stages_present
        assert t.init_s == pytest.approx(0.005)
        assert t.load_s == pytest.approx(0.007)
        assert t.init_s + t.load_s + t.exec_s == pytest.approx(t.total_s)


def test_profile_ignored_without_probe(fake_runtimes, wasm_modules, tmp_path):
    rt = RuntimeSpec("prof", f"{fake_runtimes['profiled']} {{wasm}} {tmp_path}/p.json")
    rec = run_case(case_for(wasm_modules["a"], "a"), rt, ExecutionPlan([rt], [], repetitions=1, warmup_runs=0))[0]
    assert not rec.timing.stages_present


def test_parse_profile_errors():
    with pytest.raises(ProbeParseFailure):
        parse_profile({"marks": [{"label": "init_end", "t_s": 0.1}]}, 1.0)
    with pytest.raises(ProbeParseFailure):
        parse_profile({"marks": [{"label": "init_end", "t_s": 0.5}, {"label": "load_end", "t_s": 0.2}]}, 1.0)
    with pytest.raises(ProbeParseFailure):
        parse_profile({"nope": []}, 1.0)


def test_runs_are_sequential_even_from_threads(fake_runtimes, wasm_modules):
    rt = RuntimeSpec("good", f"{fake_runtimes['good']} {{wasm}}")
    plan = ExecutionPlan([rt], [], repetitions=2, warmup_runs=0)
    results = []

    def work(name):
        results.extend(run_case(case_for(wasm_modules[name], name), rt, plan))

    threads = [threading.Thread(target=work, args=(n,)) for n in "abc"]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    spans = sorted((r.started_s, r.ended_s) for r in results)
    assert len(spans) == 6
    for (_, end), (start, _) in zip(spans, spans[1:]):
        assert end <= start


def test_run_plan_interleaving(fake_runtimes, wasm_modules):
    rts = [RuntimeSpec(n, f"{fake_runtimes['good']} {{wasm}}") for n in ("r1", "r2")]
    cases = [case_for(wasm_modules[n], n) for n in "ab"]
    by_case = run_plan(ExecutionPlan(rts, cases, repetitions=1, warmup_runs=0))
    assert [(r.case_id, r.runtime_id) for r in by_case] == [("a", "r1"), ("a", "r2"), ("b", "r1"), ("b", "r2")]
    by_rt = run_plan(ExecutionPlan(rts, cases, repetitions=1, warmup_runs=0, interleaving="by_runtime"))
    assert [(r.case_id, r.runtime_id) for r in by_rt] == [("a", "r1"), ("b", "r1"), ("a", "r2"), ("b", "r2")]


# --- build_matrix (no processes) ------------------------------------------------

def rec(case, rt, rep, total, status="ok", stages=None):
    timing = StageTiming(total_s=total) if stages is None else StageTiming(
        total_s=total, init_s=stages[0], load_s=stages[1], exec_s=stages[2], stages_present=True)
    return RunRecord(case, rt, rep, timing, 0 if status == "ok" else 1, "00" * 32, status,
                     detail="" if status == "ok" else "boom")


def grid_plan(cases, runtimes, reps):
    return ExecutionPlan([RuntimeSpec(r, "x {wasm}") for r in runtimes], [TestCase(c) for c in cases],
                         repetitions=reps)


def test_build_matrix_means():
    recs = [rec("A", "r1", 0, 1.0), rec("A", "r1", 1, 3.0), rec("A", "r2", 0, 2.0), rec("A", "r2", 1, 2.5),
            rec("B", "r1", 0, 0.5), rec("B", "r1", 1, 0.7), rec("B", "r2", 0, 4.0), rec("B", "r2", 1, 6.0)]
    bundle = build_matrix(recs, grid_plan("AB", ["r1", "r2"], 2))
    assert bundle.total.case_ids == ("A", "B")
    np.testing.assert_allclose(bundle.total.values, [[2.0, 2.25], [0.6, 5.0]], rtol=1e-15)
    assert bundle.exclusions == []
    assert bundle.stages == {}


def test_build_matrix_excludes_failing_case_everywhere():
    recs = [rec("A", "r1", 0, 1.0, "runtime_error"), rec("A", "r2", 0, 1.0),
            rec("B", "r1", 0, 1.0), rec("B", "r2", 0, 2.0)]
    bundle = build_matrix(recs, grid_plan("AB", ["r1", "r2"], 1))
    assert bundle.total.case_ids == ("B",)
    [ex] = bundle.exclusions
    assert (ex.case_id, ex.reason, ex.runtime_id) == ("A", "runtime_error", "r1")


def test_build_matrix_missing_cell_is_excluded():
    recs = [rec("A", "r1", 0, 1.0), rec("B", "r1", 0, 1.0), rec("B", "r2", 0, 2.0)]
    bundle = build_matrix(recs, grid_plan("AB", ["r1", "r2"], 1))
    assert bundle.total.case_ids == ("B",)
    assert bundle.exclusions[0].runtime_id == "r2"


def test_build_matrix_all_excluded():
    recs = [rec("A", "r1", 0, 1.0, "timeout"), rec("A", "r2", 0, 1.0)]
    with pytest.raises(EmptyMatrix):
        build_matrix(recs, grid_plan("A", ["r1", "r2"], 1))


def test_build_matrix_stage_matrices():
    recs = [rec(c, r, 0, 1.0, stages=(0.1, 0.2, 0.7)) for c in "AB" for r in ("r1", "r2")]
    bundle = build_matrix(recs, grid_plan("AB", ["r1", "r2"], 1))
    assert set(bundle.stages) == {"init", "load", "exec"}
    np.testing.assert_allclose(bundle.stages["exec"].values, 0.7)
    recs[0] = rec("A", "r1", 0, 1.0)
    assert build_matrix(recs, grid_plan("AB", ["r1", "r2"], 1)).stages == {}


def test_build_matrix_shuffle_invariant_and_exact_means():
    rng = np.random.default_rng(11)
    cases, rts, reps = "ABCDE", ["x", "y", "z"], 7
    recs = [rec(c, r, i, float(rng.lognormal())) for c in cases for r in rts for i in range(reps)]
    plan = grid_plan(cases, rts, reps)
    base = build_matrix(recs, plan)
    for seed in range(5):
        shuffled = recs[:]
        random.Random(seed).shuffle(shuffled)
        assert build_matrix(shuffled, plan).total == base.total
    for i, c in enumerate(cases):
        for j, r in enumerate(rts):
            samples = [x.timing.total_s for x in recs if x.case_id == c and x.runtime_id == r]
            assert base.total.values[i, j] == pytest.approx(two_pass_mean(samples), rel=1e-12)
