"""Run test cases under each runtime setting and assemble timing matrices.

Measurement is wall-clock from spawn to exit of the runtime process, one
child at a time. Stage breakdowns come from an external profiler: when a
runtime's ``stage_probe`` is ``external_profile`` the harness hands the child
a per-run profile path (``{profile}`` in the command template and the
``WARPDIFF_PROFILE`` environment variable) and reads back a JSON file of
timestamp marks relative to process start::

    {"marks": [{"label": "init_end", "t_s": 0.004}, {"label": "load_end", "t_s": 0.031}]}
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import resource
import signal
import subprocess
import tempfile
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import EmptyMatrix, ProbeParseFailure, SpawnFailure
from .model import (
    STAGES,
    ExclusionRecord,
    RunRecord,
    RuntimeSpec,
    StageTiming,
    TestCase,
    TimingMatrix,
)

log = logging.getLogger(__name__)

INTERLEAVINGS = ("by_case", "by_runtime")
PROFILE_ENV = "WARPDIFF_PROFILE"
DETAIL_LIMIT = 2000

# Held for the whole lifetime of a measured child, so runs never overlap even
# if callers drive the executor from several threads.
_RUN_LOCK = threading.Lock()


@dataclass(frozen=True)
class ExecutionPlan:
    runtimes: tuple[RuntimeSpec, ...]
    cases: tuple[TestCase, ...]
    repetitions: int = 10
    timeout_s: float = 300.0
    interleaving: str = "by_case"
    warmup_runs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "runtimes", tuple(self.runtimes))
        object.__setattr__(self, "cases", tuple(self.cases))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.timeout_s > 0:
            raise ValueError("timeout_s must be > 0")
        if self.warmup_runs < 0:
            raise ValueError("warmup_runs must be >= 0")
        if self.interleaving not in INTERLEAVINGS:
            raise ValueError(f"interleaving must be one of {INTERLEAVINGS}")


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def build_command(rt: RuntimeSpec, case: TestCase, profile_path: str | None = None) -> list[str]:
    """Expand ``rt.command_template`` into an argv list, without a shell.

    The template is split on whitespace first, then placeholders are filled
    per token: a bare ``{args}`` token expands to the case arguments (one argv
    entry each), so paths and arguments containing spaces survive intact.
    """
    argv: list[str] = []
    for token in rt.command_template.split():
        if token == "{args}":
            argv.extend(case.args)
            continue
        token = token.replace("{wasm}", str(case.wasm_path))
        token = token.replace("{args}", " ".join(case.args))
        token = token.replace("{profile}", profile_path or "")
        argv.append(token)
    return argv


def parse_profile(data: dict, total_s: float) -> StageTiming:
    try:
        marks = {m["label"]: float(m["t_s"]) for m in data["marks"]}
        init_end, load_end = marks["init_end"], marks["load_end"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProbeParseFailure(f"malformed stage profile: {exc!r}") from exc
    if not 0 <= init_end <= load_end <= total_s:
        raise ProbeParseFailure(
            f"stage marks out of order: init_end={init_end}, load_end={load_end}, total={total_s}"
        )
    return StageTiming(
        total_s=total_s,
        init_s=init_end,
        load_s=load_end - init_end,
        exec_s=total_s - load_end,
        stages_present=True,
    )


def _excerpt(data: bytes) -> str:
    text = data.decode("utf-8", errors="replace")
    return text if len(text) <= DETAIL_LIMIT else text[:DETAIL_LIMIT] + "...[truncated]"


def _run_once(case: TestCase, rt: RuntimeSpec, plan: ExecutionPlan, rep_index: int, workdir: str) -> RunRecord:
    profile_path = None
    if rt.stage_probe == "external_profile":
        profile_path = os.path.join(workdir, f"profile-{rep_index}.json")
        if os.path.exists(profile_path):  # left over from a warmup run
            os.unlink(profile_path)
    argv = build_command(rt, case, profile_path)
    env = dict(os.environ)
    if profile_path:
        env[PROFILE_ENV] = profile_path

    with _RUN_LOCK:
        cpu_before = resource.getrusage(resource.RUSAGE_CHILDREN)
        started = time.monotonic()
        try:
            proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                env=env,
                start_new_session=True,
            )
        except OSError as exc:
            raise SpawnFailure(f"cannot start runtime {rt.id!r} ({argv[0]}): {exc}") from exc
        timed_out = False
        try:
            out, err = proc.communicate(case.stdin_data, timeout=plan.timeout_s)
        except subprocess.TimeoutExpired:
            # kill the whole group: a wrapper's children would hold the pipes open
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                proc.kill()
            out, err = proc.communicate()
            timed_out = True
        ended = time.monotonic()
        cpu_after = resource.getrusage(resource.RUSAGE_CHILDREN)

    total = max(ended - started, 1e-9)
    cpu = (cpu_after.ru_utime - cpu_before.ru_utime) + (cpu_after.ru_stime - cpu_before.ru_stime)
    out_digest = digest(out)

    if timed_out:
        status, detail = "timeout", f"killed after {plan.timeout_s}s"
    elif proc.returncode != case.expected_exit_code:
        status = "runtime_error"
        detail = f"exit code {proc.returncode} (expected {case.expected_exit_code}); stderr: {_excerpt(err)}"
    elif case.expected_stdout_digest and out_digest != case.expected_stdout_digest:
        status, detail = "wrong_output", f"stdout digest {out_digest} != expected; stdout: {_excerpt(out)}"
    else:
        status, detail = "ok", ""

    timing = StageTiming(total_s=total)
    if profile_path and status == "ok" and os.path.exists(profile_path):
        try:
            with open(profile_path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ProbeParseFailure(f"unreadable stage profile {profile_path}: {exc}") from exc
        timing = parse_profile(data, total)
        os.unlink(profile_path)

    return RunRecord(
        case_id=case.id,
        runtime_id=rt.id,
        rep_index=rep_index,
        timing=timing,
        exit_code=proc.returncode,
        stdout_digest=out_digest,
        status=status,
        started_s=started,
        ended_s=ended,
        cpu_s=cpu,
        detail=detail,
    )


def run_case(case: TestCase, rt: RuntimeSpec, plan: ExecutionPlan) -> list[RunRecord]:
    """Run ``case`` on ``rt`` for the plan's warmup runs plus repetitions.

    Warmup runs are discarded; the measured records come back in rep order.
    """
    if case.wasm_path is None or not Path(case.wasm_path).exists():
        raise FileNotFoundError(f"case {case.id!r}: wasm module {case.wasm_path!r} does not exist")
    records = []
    with tempfile.TemporaryDirectory(prefix="warpdiff-") as workdir:
        for _ in range(plan.warmup_runs):
            _run_once(case, rt, plan, 0, workdir)
        for rep in range(plan.repetitions):
            records.append(_run_once(case, rt, plan, rep, workdir))
    return records


def run_plan(
    plan: ExecutionPlan,
    progress: Callable[[TestCase, RuntimeSpec, list[RunRecord]], None] | None = None,
) -> list[RunRecord]:
    if plan.interleaving == "by_case":
        pairs = [(c, rt) for c in plan.cases for rt in plan.runtimes]
    else:
        pairs = [(c, rt) for rt in plan.runtimes for c in plan.cases]
    records: list[RunRecord] = []
    for case, rt in pairs:
        recs = run_case(case, rt, plan)
        log.debug("%s on %s: %s", case.id, rt.id, [r.status for r in recs])
        if progress:
            progress(case, rt, recs)
        records.extend(recs)
    return records


@dataclass
class MatrixBundle:
    """Output of :func:`build_matrix`."""

    total: TimingMatrix
    exclusions: list[ExclusionRecord]
    stages: dict[str, TimingMatrix] = field(default_factory=dict)


def build_matrix(records: Iterable[RunRecord], plan: ExecutionPlan) -> MatrixBundle:
    """Average surviving runs into a total-time matrix (plus stage matrices).

    A case that fails anywhere is excluded everywhere. Stage matrices are only
    produced when every surviving record carries a stage breakdown.
    """
    runtime_ids = sorted(rt.id for rt in plan.runtimes)
    case_ids = sorted(c.id for c in plan.cases)
    cells: dict[tuple[str, str], list[RunRecord]] = defaultdict(list)
    for r in records:
        cells[(r.case_id, r.runtime_id)].append(r)
    for recs in cells.values():
        recs.sort(key=lambda r: r.rep_index)

    exclusions: list[ExclusionRecord] = []
    surviving = []
    for cid in case_ids:
        failures = []
        for rid in runtime_ids:
            recs = cells.get((cid, rid), [])
            bad = [r for r in recs if r.status != "ok"]
            if bad:
                reason = bad[0].status
                detail = f"{len(bad)}/{len(recs)} runs failed; first: {bad[0].detail or bad[0].status}"
                failures.append(ExclusionRecord(cid, reason, detail, rid))
            elif not recs:
                failures.append(ExclusionRecord(cid, "runtime_error", "no measurements recorded", rid))
        if failures:
            exclusions.extend(failures)
        else:
            surviving.append(cid)

    if not surviving:
        raise EmptyMatrix(f"all {len(case_ids)} cases were excluded")

    def mean_matrix(stage: str) -> TimingMatrix:
        values = np.empty((len(surviving), len(runtime_ids)))
        for i, cid in enumerate(surviving):
            for j, rid in enumerate(runtime_ids):
                samples = [r.timing.stage(stage) for r in cells[(cid, rid)]]
                values[i, j] = math.fsum(samples) / len(samples)
        return TimingMatrix(surviving, runtime_ids, values, stage)

    bundle = MatrixBundle(mean_matrix("total"), exclusions)
    kept = [r for cid in surviving for rid in runtime_ids for r in cells[(cid, rid)]]
    if all(r.timing.stages_present for r in kept):
        bundle.stages = {s: mean_matrix(s) for s in STAGES}
    return bundle

