"""Report assembly and rendering (JSON, Markdown, plain text).

The tables list one row per abnormal case and one column per runtime setting,
with each cell holding that runtime's deviation degree and the issue-related
runtime marked (``*0.702`` in text, ``**0.702**`` in Markdown).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

from .analysis import CaseAnalysis, OracleVector, StageLocation, analyze_matrix, locate_abnormal_stage
from .model import ExclusionRecord, TimingMatrix, validate_matrix

FORMATS = ("json", "md", "txt")
NO_CASES = "no abnormal cases"


@dataclass(frozen=True)
class Report:
    generated_at: str
    oracle: OracleVector
    top_cases: tuple[CaseAnalysis, ...]
    exclusions: tuple[ExclusionRecord, ...] = ()
    stage_locations: tuple[StageLocation, ...] | None = None
    config_digest: str | None = None
    runtime_names: Mapping[str, str] = field(default_factory=dict)

    @property
    def abnormal_cases(self) -> list[CaseAnalysis]:
        """Cases with an issue-related runtime, in rank order."""
        return [c for c in self.top_cases if c.located_runtime is not None]

    def to_dict(self) -> dict[str, Any]:
        return {
            "generated_at": self.generated_at,
            "config_digest": self.config_digest,
            "oracle": self.oracle.to_dict(),
            "runtime_names": dict(self.runtime_names),
            "top_cases": [c.to_dict() for c in self.top_cases],
            "exclusions": [e.to_dict() for e in self.exclusions],
            "stage_locations": (
                [s.to_dict() for s in self.stage_locations] if self.stage_locations is not None else None
            ),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Report:
        stages = d.get("stage_locations")
        return cls(
            generated_at=d["generated_at"],
            oracle=OracleVector.from_dict(d["oracle"]),
            top_cases=tuple(CaseAnalysis.from_dict(c) for c in d["top_cases"]),
            exclusions=tuple(ExclusionRecord.from_dict(e) for e in d.get("exclusions", ())),
            stage_locations=tuple(StageLocation.from_dict(s) for s in stages) if stages is not None else None,
            config_digest=d.get("config_digest"),
            runtime_names=dict(d.get("runtime_names", {})),
        )


def build_report(
    matrix: TimingMatrix,
    exclusions: Sequence[ExclusionRecord] = (),
    stage_matrices: Mapping[str, TimingMatrix] | None = None,
    config_digest: str | None = None,
    runtime_names: Mapping[str, str] | None = None,
    now: datetime | None = None,
) -> Report:
    """Rank every case and, given stage matrices, locate the abnormal stage
    of each case that has an issue-related runtime."""
    matrix = validate_matrix(matrix)
    oracle, ranked = analyze_matrix(matrix)
    locations = None
    if stage_matrices:
        locations = tuple(
            locate_abnormal_stage(stage_matrices, a.case_id, a.located_runtime)
            for a in ranked
            if a.located_runtime is not None
        )
    stamp = (now or datetime.now(timezone.utc)).isoformat(timespec="seconds")
    return Report(
        generated_at=stamp,
        oracle=oracle,
        top_cases=tuple(ranked),
        exclusions=tuple(exclusions),
        stage_locations=locations,
        config_digest=config_digest,
        runtime_names=dict(runtime_names or {}),
    )


def report_json(report: Report) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def write_report(report: Report, path: str | Path) -> None:
    Path(path).write_text(report_json(report))


def read_report(path: str | Path) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text()))


def _cells(case: CaseAnalysis, mark: str, close: str = "") -> list[str]:
    out = []
    for rid, d in zip(case.runtime_ids, case.deviation_degrees):
        cell = f"{d:.3f}"
        out.append(f"{mark}{cell}{close}" if rid == case.located_runtime else cell)
    return out


def render_table(report: Report, top_n: int = 10, fmt: str = "txt") -> str:
    """Deviation-degree table of the ``top_n`` highest-ranked abnormal cases."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    if fmt not in ("md", "txt"):
        raise ValueError(f"table format must be md or txt, got {fmt!r}")
    names = [report.runtime_names.get(r, r) for r in report.oracle.runtime_ids]
    rows = report.abnormal_cases[:top_n]
    lines: list[str] = []

    if fmt == "txt":
        lines.append(" | ".join(["case", *names]))
        lines.append("-" * len(lines[0]))
        if not rows:
            lines.append(NO_CASES)
        for c in rows:
            lines.append(" | ".join([c.case_id, *_cells(c, "*")]))
    else:
        lines.append("| " + " | ".join(["Case", *names]) + " |")
        lines.append("|" + "---|" + "---:|" * len(names))
        if not rows:
            lines.append(f"| _{NO_CASES}_ |" + " |" * len(names))
        for c in rows:
            lines.append("| " + " | ".join([f"`{c.case_id}`", *_cells(c, "**", "**")]) + " |")

    if report.stage_locations:
        shown = {c.case_id for c in rows}
        locs = [s for s in report.stage_locations if s.case_id in shown]
        if locs:
            lines.append("")
            lines.append("abnormal stages:" if fmt == "txt" else "**Abnormal stages**")
            lines.append("")
            for s in locs:
                degrees = ", ".join(f"{k}={v:.3f}" for k, v in s.per_stage_degrees.items())
                prefix = "- " if fmt == "md" else "  "
                rt = report.runtime_names.get(s.runtime_id, s.runtime_id)
                lines.append(f"{prefix}{s.case_id} on {rt}: {s.stage} ({degrees})")

    if report.exclusions:
        lines.append("")
        lines.append(f"excluded cases: {len({e.case_id for e in report.exclusions})}")
    return "\n".join(lines) + "\n"


def render(report: Report, fmt: str = "txt", top_n: int = 10) -> str:
    if fmt == "json":
        return report_json(report)
    return render_table(report, top_n, fmt)
