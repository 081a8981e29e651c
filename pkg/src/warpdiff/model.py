"""Domain types shared across the harness, their validation and file formats.

All types are frozen; ``to_dict``/``from_dict`` give the canonical JSON form
and ``from_dict(x.to_dict()) == x`` for every value.
"""

from __future__ import annotations

import base64
import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import DuplicateId, EmptyMatrix, NonPositiveEntry, TooFewRuntimes

MODES = ("aot", "interpreter")
STAGE_PROBES = ("none", "external_profile")
STAGES = ("init", "load", "exec")
MATRIX_STAGES = ("total",) + STAGES
RUN_STATUSES = ("ok", "wrong_output", "runtime_error", "timeout")
EXCLUSION_REASONS = ("wrong_output", "runtime_error", "timeout", "compile_failure")

# tolerated gap between the stage sum and the measured total, as a fraction of total
STAGE_SUM_RTOL = 0.05


def _check_choice(name: str, value: str, choices: Sequence[str]) -> None:
    if value not in choices:
        raise ValueError(f"{name} must be one of {', '.join(choices)}; got {value!r}")


@dataclass(frozen=True)
class RuntimeSpec:
    """One runtime setting, e.g. WAMR in AOT mode."""

    id: str
    command_template: str
    display_name: str = ""
    mode: str = "aot"
    stage_probe: str = "none"

    def __post_init__(self):
        if not self.id:
            raise ValueError("runtime id must be non-empty")
        if self.command_template.count("{wasm}") != 1:
            raise ValueError(
                f"runtime {self.id!r}: command_template must contain {{wasm}} exactly once"
            )
        _check_choice("mode", self.mode, MODES)
        _check_choice("stage_probe", self.stage_probe, STAGE_PROBES)
        if not self.display_name:
            object.__setattr__(self, "display_name", self.id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "display_name": self.display_name,
            "command_template": self.command_template,
            "mode": self.mode,
            "stage_probe": self.stage_probe,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RuntimeSpec:
        return cls(
            id=d["id"],
            command_template=d["command_template"],
            display_name=d.get("display_name", ""),
            mode=d.get("mode", "aot"),
            stage_probe=d.get("stage_probe", "none"),
        )


@dataclass(frozen=True)
class TestCase:
    """A program to run on every runtime."""

    __test__ = False  # keep pytest from collecting this class

    id: str
    wasm_path: str | None = None
    source_path: str | None = None
    args: tuple[str, ...] = ()
    stdin_data: bytes | None = None
    expected_stdout_digest: str | None = None
    expected_exit_code: int = 0
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("case id must be non-empty")
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "tags", tuple(self.tags))
        if self.expected_stdout_digest is not None:
            object.__setattr__(self, "expected_stdout_digest", self.expected_stdout_digest.lower())

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source_path": self.source_path,
            "wasm_path": self.wasm_path,
            "args": list(self.args),
            "stdin_data": (
                base64.b64encode(self.stdin_data).decode("ascii")
                if self.stdin_data is not None
                else None
            ),
            "expected_stdout_digest": self.expected_stdout_digest,
            "expected_exit_code": self.expected_exit_code,
            "tags": list(self.tags),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TestCase:
        stdin = d.get("stdin_data")
        return cls(
            id=d["id"],
            wasm_path=d.get("wasm_path"),
            source_path=d.get("source_path"),
            args=tuple(d.get("args", ())),
            stdin_data=base64.b64decode(stdin) if stdin is not None else None,
            expected_stdout_digest=d.get("expected_stdout_digest"),
            expected_exit_code=int(d.get("expected_exit_code", 0)),
            tags=tuple(d.get("tags", ())),
        )


@dataclass(frozen=True)
class StageTiming:
    total_s: float
    init_s: float = 0.0
    load_s: float = 0.0
    exec_s: float = 0.0
    stages_present: bool = False

    def __post_init__(self):
        parts = (self.init_s, self.load_s, self.exec_s, self.total_s)
        if not all(math.isfinite(p) and p >= 0 for p in parts):
            raise ValueError(f"stage timings must be finite and non-negative: {parts}")
        if self.total_s <= 0:
            raise ValueError("total_s must be > 0")
        if self.stages_present:
            gap = abs(self.init_s + self.load_s + self.exec_s - self.total_s)
            if gap > STAGE_SUM_RTOL * self.total_s:
                raise ValueError(
                    f"stage times sum to {self.total_s - gap:.6g}s, "
                    f"more than {STAGE_SUM_RTOL:.0%} away from total {self.total_s:.6g}s"
                )

    def stage(self, name: str) -> float:
        return {"total": self.total_s, "init": self.init_s, "load": self.load_s, "exec": self.exec_s}[name]

    def to_dict(self) -> dict[str, Any]:
        return {
            "init_s": self.init_s,
            "load_s": self.load_s,
            "exec_s": self.exec_s,
            "total_s": self.total_s,
            "stages_present": self.stages_present,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StageTiming:
        return cls(
            total_s=float(d["total_s"]),
            init_s=float(d.get("init_s", 0.0)),
            load_s=float(d.get("load_s", 0.0)),
            exec_s=float(d.get("exec_s", 0.0)),
            stages_present=bool(d.get("stages_present", False)),
        )


@dataclass(frozen=True)
class RunRecord:
    """One measured (non-warmup) run.

    ``started_s``/``ended_s`` are monotonic-clock stamps around spawn and exit;
    ``detail`` keeps stdout/stderr excerpts for failing runs only.
    """

    case_id: str
    runtime_id: str
    rep_index: int
    timing: StageTiming
    exit_code: int
    stdout_digest: str
    status: str = "ok"
    started_s: float = 0.0
    ended_s: float = 0.0
    cpu_s: float | None = None
    detail: str = ""

    def __post_init__(self):
        if self.rep_index < 0:
            raise ValueError("rep_index must be >= 0")
        _check_choice("status", self.status, RUN_STATUSES)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "runtime_id": self.runtime_id,
            "rep_index": self.rep_index,
            "timing": self.timing.to_dict(),
            "exit_code": self.exit_code,
            "stdout_digest": self.stdout_digest,
            "status": self.status,
            "started_s": self.started_s,
            "ended_s": self.ended_s,
            "cpu_s": self.cpu_s,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunRecord:
        return cls(
            case_id=d["case_id"],
            runtime_id=d["runtime_id"],
            rep_index=int(d["rep_index"]),
            timing=StageTiming.from_dict(d["timing"]),
            exit_code=int(d["exit_code"]),
            stdout_digest=d["stdout_digest"],
            status=d.get("status", "ok"),
            started_s=float(d.get("started_s", 0.0)),
            ended_s=float(d.get("ended_s", 0.0)),
            cpu_s=d.get("cpu_s"),
            detail=d.get("detail", ""),
        )


@dataclass(frozen=True)
class ExclusionRecord:
    case_id: str
    reason: str
    detail: str
    runtime_id: str | None = None

    def __post_init__(self):
        _check_choice("reason", self.reason, EXCLUSION_REASONS)
        if not self.detail:
            raise ValueError("exclusion detail must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "reason": self.reason,
            "runtime_id": self.runtime_id,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExclusionRecord:
        return cls(
            case_id=d["case_id"],
            reason=d["reason"],
            detail=d["detail"],
            runtime_id=d.get("runtime_id"),
        )


@dataclass(frozen=True, eq=False)
class TimingMatrix:
    """Cases x runtime settings matrix of mean times in seconds.

    Construction only checks shape; :func:`validate_matrix` enforces the value
    invariants and canonical (id-sorted) ordering.
    """

    case_ids: tuple[str, ...]
    runtime_ids: tuple[str, ...]
    values: np.ndarray = field(repr=False)
    stage: str = "total"

    def __post_init__(self):
        object.__setattr__(self, "case_ids", tuple(self.case_ids))
        object.__setattr__(self, "runtime_ids", tuple(self.runtime_ids))
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape != (len(self.case_ids), len(self.runtime_ids)):
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"{len(self.case_ids)} cases x {len(self.runtime_ids)} runtimes"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        _check_choice("stage", self.stage, MATRIX_STAGES)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def row(self, case_id: str) -> np.ndarray:
        return self.values[self.case_ids.index(case_id)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimingMatrix):
            return NotImplemented
        return (
            self.case_ids == other.case_ids
            and self.runtime_ids == other.runtime_ids
            and self.stage == other.stage
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "case_ids": list(self.case_ids),
            "runtime_ids": list(self.runtime_ids),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TimingMatrix:
        return cls(d["case_ids"], d["runtime_ids"], np.asarray(d["values"], dtype=np.float64).reshape(
            len(d["case_ids"]), len(d["runtime_ids"])), d.get("stage", "total"))


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            raise DuplicateId(f"duplicate {what} id {i!r}")
        seen.add(i)


def validate_matrix(m: TimingMatrix) -> TimingMatrix:
    """Check every TimingMatrix invariant; return the matrix in canonical order.

    Rows and columns are sorted by id, so the result of validating an already
    canonical matrix is that same matrix (the operation is idempotent).
    """
    n, k = m.shape
    if n < 1:
        raise EmptyMatrix("timing matrix has no cases")
    if k < 2:
        raise TooFewRuntimes(f"differential testing needs at least 2 runtimes, got {k}")
    _check_unique(m.case_ids, "case")
    _check_unique(m.runtime_ids, "runtime")
    v = m.values
    if not np.all(np.isfinite(v)):
        i, j = np.argwhere(~np.isfinite(v))[0]
        raise NonPositiveEntry(f"non-finite entry at ({m.case_ids[i]!r}, {m.runtime_ids[j]!r})")
    if m.stage == "total":
        if np.any(v <= 0):
            i, j = np.argwhere(v <= 0)[0]
            raise NonPositiveEntry(
                f"total time {v[i, j]!r} at ({m.case_ids[i]!r}, {m.runtime_ids[j]!r}) is not positive"
            )
    else:
        if np.any(v < 0):
            i, j = np.argwhere(v < 0)[0]
            raise NonPositiveEntry(f"negative {m.stage} time at ({m.case_ids[i]!r}, {m.runtime_ids[j]!r})")
        dead = np.flatnonzero(~np.any(v > 0, axis=1))
        if dead.size:
            raise NonPositiveEntry(f"{m.stage} row {m.case_ids[dead[0]]!r} has no positive entry")

    row_order = sorted(range(n), key=m.case_ids.__getitem__)
    col_order = sorted(range(k), key=m.runtime_ids.__getitem__)
    if row_order == list(range(n)) and col_order == list(range(k)):
        return m
    return TimingMatrix(
        [m.case_ids[i] for i in row_order],
        [m.runtime_ids[j] for j in col_order],
        v[np.ix_(row_order, col_order)],
        m.stage,
    )


# --- file formats -----------------------------------------------------------

def matrix_to_csv(m: TimingMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case_id", *m.runtime_ids])
    for cid, row in zip(m.case_ids, m.values):
        w.writerow([cid, *(repr(float(x)) for x in row)])
    return buf.getvalue()


def matrix_from_csv(text: str, stage: str = "total") -> TimingMatrix:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows or rows[0][0] != "case_id":
        raise ValueError("timing matrix CSV must start with a 'case_id,...' header")
    header, body = rows[0], rows[1:]
    for r in body:
        if len(r) != len(header):
            raise ValueError(f"row {r[0]!r} has {len(r) - 1} values, header names {len(header) - 1} runtimes")
    values = np.array([[float(x) for x in r[1:]] for r in body], dtype=np.float64).reshape(
        len(body), len(header) - 1
    )
    return TimingMatrix([r[0] for r in body], header[1:], values, stage)


def write_matrix_csv(m: TimingMatrix, path: str | Path) -> None:
    Path(path).write_text(matrix_to_csv(m))


def read_matrix_csv(path: str | Path, stage: str = "total") -> TimingMatrix:
    return matrix_from_csv(Path(path).read_text(), stage)


def write_exclusions(exclusions: Iterable[ExclusionRecord], path: str | Path) -> None:
    Path(path).write_text(json.dumps([e.to_dict() for e in exclusions], indent=2) + "\n")


def read_exclusions(path: str | Path) -> list[ExclusionRecord]:
    return [ExclusionRecord.from_dict(d) for d in json.loads(Path(path).read_text())]


def write_records(records: Iterable[RunRecord], path: str | Path) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path: str | Path) -> list[RunRecord]:
    with open(path) as f:
        return [RunRecord.from_dict(json.loads(line)) for line in f if line.strip()]
