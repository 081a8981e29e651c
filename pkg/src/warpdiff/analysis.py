"""Oracle-ratio estimation, abnormal-case ranking and issue localization.

Each case's time vector is L2-normalized so that cases with the same
cross-runtime ratio coincide. The oracle is the (un-renormalized) mean of
those unit vectors. A case's distance to the oracle identifies anomalies; the
deviation degree of runtime j answers "how much would runtime j's time have to
change, holding the others fixed, for this case to sit as close to the oracle
as possible", expressed as a fraction of the vector's length.

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    AllStagesNonPositive,
    DegenerateOracle,
    DimensionMismatch,
    MissingCase,
    MissingRuntime,
    NonPositiveEntry,
    TooFewRuntimes,
)
from .model import STAGES, TimingMatrix, validate_matrix

# Degrees and distances at or below this are rounding noise; a case whose
# largest degree does not exceed it has no issue-related runtime.
DEGREE_EPS = 1e-12
# Zero stage times (e.g. an interpreter with a negligible load stage) are
# floored to this before normalization.
STAGE_FLOOR_S = 1e-6


@dataclass(frozen=True)
class OracleVector:
    runtime_ids: tuple[str, ...]
    components: tuple[float, ...]
    n_cases: int

    def __post_init__(self):
        object.__setattr__(self, "runtime_ids", tuple(self.runtime_ids))
        object.__setattr__(self, "components", tuple(float(c) for c in self.components))
        if len(self.runtime_ids) != len(self.components):
            raise DimensionMismatch("oracle ids and components differ in length")
        if any(not c > 0 for c in self.components):
            raise DegenerateOracle("oracle components must all be positive")
        norm = float(np.linalg.norm(self.components))
        if not 0 < norm <= 1 + 1e-12:
            raise DegenerateOracle(f"oracle norm {norm!r} outside (0, 1]")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.components, dtype=np.float64)

    def to_dict(self) -> dict[str, Any]:
        return {
            "runtime_ids": list(self.runtime_ids),
            "components": list(self.components),
            "n_cases": self.n_cases,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> OracleVector:
        return cls(d["runtime_ids"], d["components"], int(d["n_cases"]))


@dataclass(frozen=True)
class CaseAnalysis:
    case_id: str
    runtime_ids: tuple[str, ...]
    raw_vector: tuple[float, ...]
    unit_vector: tuple[float, ...]
    distance: float
    deviation_degrees: tuple[float, ...]
    located_runtime: str | None = None
    located_degree: float | None = None

    def degree_of(self, runtime_id: str) -> float:
        try:
            return self.deviation_degrees[self.runtime_ids.index(runtime_id)]
        except ValueError:
            raise MissingRuntime(runtime_id) from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "runtime_ids": list(self.runtime_ids),
            "raw_vector": list(self.raw_vector),
            "unit_vector": list(self.unit_vector),
            "distance": self.distance,
            "deviation_degrees": list(self.deviation_degrees),
            "located_runtime": self.located_runtime,
            "located_degree": self.located_degree,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CaseAnalysis:
        return cls(
            case_id=d["case_id"],
            runtime_ids=tuple(d["runtime_ids"]),
            raw_vector=tuple(d["raw_vector"]),
            unit_vector=tuple(d["unit_vector"]),
            distance=d["distance"],
            deviation_degrees=tuple(d["deviation_degrees"]),
            located_runtime=d.get("located_runtime"),
            located_degree=d.get("located_degree"),
        )


@dataclass(frozen=True)
class StageLocation:
    case_id: str
    runtime_id: str
    stage: str
    per_stage_degrees: Mapping[str, float]

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "runtime_id": self.runtime_id,
            "stage": self.stage,
            "per_stage_degrees": dict(self.per_stage_degrees),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> StageLocation:
        return cls(d["case_id"], d["runtime_id"], d["stage"], dict(d["per_stage_degrees"]))


def _positive_vector(v: Sequence[float]) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise TooFewRuntimes(f"need a vector over at least 2 runtimes, got shape {arr.shape}")
    if not np.all(np.isfinite(arr) & (arr > 0)):
        raise NonPositiveEntry(f"time vector entries must be finite and > 0: {arr.tolist()}")
    return arr


def normalize_vector(v: Sequence[float]) -> np.ndarray:
    """Scale ``v`` to unit Euclidean length."""
    arr = _positive_vector(v)
    return arr / np.linalg.norm(arr)


def _unit_rows(values: np.ndarray) -> np.ndarray:
    return values / np.linalg.norm(values, axis=1, keepdims=True)


def estimate_oracle(m: TimingMatrix) -> OracleVector:
    m = validate_matrix(m)
    if m.stage != "total" and np.any(m.values <= 0):
        raise NonPositiveEntry(f"{m.stage} matrix has zero entries; floor it before estimating an oracle")
    centre = _unit_rows(m.values).mean(axis=0)
    return OracleVector(m.runtime_ids, centre, m.shape[0])


def case_distance(unit_v: Sequence[float], oracle: OracleVector | Sequence[float]) -> float:
    u = np.asarray(unit_v, dtype=np.float64)
    o = oracle.array if isinstance(oracle, OracleVector) else np.asarray(oracle, dtype=np.float64)
    if u.shape != o.shape:
        raise DimensionMismatch(f"vector has {u.size} dimensions, oracle has {o.size}")
    return float(np.linalg.norm(u - o))


def optimal_replacements(raw_v: Sequence[float], oracle: OracleVector | Sequence[float]) -> np.ndarray:
    """Per dimension j, the value for raw_v[j] that brings the re-normalized
    vector closest to the oracle when every other coordinate is held fixed.

    Maximizing the cosine (x*o_j + c) / sqrt(x^2 + s) over x > 0 gives the
    stationary point x = o_j * s / c, where s and c are the squared norm of
    the other coordinates and their dot product with the oracle.
    """
    v = _positive_vector(raw_v)
    o = oracle.array if isinstance(oracle, OracleVector) else np.asarray(oracle, dtype=np.float64)
    if o.shape != v.shape:
        raise DimensionMismatch(f"vector has {v.size} dimensions, oracle has {o.size}")
    if not np.all(o > 0):
        raise DegenerateOracle("oracle components must all be positive")
    # sum over i != j explicitly: subtracting v_j^2 from the full sum cancels
    # catastrophically when v_j dominates
    others = ~np.eye(v.size, dtype=bool)
    s = np.where(others, v * v, 0.0).sum(axis=1)
    c = np.where(others, v * o, 0.0).sum(axis=1)
    if np.any(c <= 0):
        raise DegenerateOracle("oracle has no positive overlap with the fixed coordinates")
    return o * s / c


def deviation_degrees(raw_v: Sequence[float], oracle: OracleVector | Sequence[float]) -> np.ndarray:
    """Signed adjustment per runtime, as a fraction of ``||raw_v||``.

    Positive means the runtime took longer than the oracle ratio predicts.
    """
    v = _positive_vector(raw_v)
    return (v - optimal_replacements(v, oracle)) / np.linalg.norm(v)


def analyze_case(case_id: str, raw_v: Sequence[float], oracle: OracleVector) -> CaseAnalysis:
    v = _positive_vector(raw_v)
    if v.size != len(oracle.runtime_ids):
        raise DimensionMismatch(f"case {case_id!r} has {v.size} times, oracle has {len(oracle.runtime_ids)}")
    unit = v / np.linalg.norm(v)
    degrees = deviation_degrees(v, oracle)
    best = max(degrees)
    located = degree = None
    if best > DEGREE_EPS:
        # ties go to the lexicographically smallest runtime id
        located = min(rid for rid, d in zip(oracle.runtime_ids, degrees) if d == best)
        degree = float(best)
    return CaseAnalysis(
        case_id=case_id,
        runtime_ids=oracle.runtime_ids,
        raw_vector=tuple(v.tolist()),
        unit_vector=tuple(unit.tolist()),
        distance=case_distance(unit, oracle),
        deviation_degrees=tuple(degrees.tolist()),
        located_runtime=located,
        located_degree=degree,
    )


def _rank_key(a: CaseAnalysis) -> tuple:
    if a.located_degree is not None:
        return (0, -a.located_degree, a.case_id)
    distance = a.distance if a.distance > DEGREE_EPS else 0.0
    return (1, -distance, a.case_id)


def sort_analyses(analyses: Sequence[CaseAnalysis]) -> list[CaseAnalysis]:
    """Located cases by degree descending, then unlocated ones by distance."""
    return sorted(analyses, key=_rank_key)


def analyze_matrix(m: TimingMatrix) -> tuple[OracleVector, list[CaseAnalysis]]:
    """Oracle plus the full ranking; see :func:`rank_cases`."""
    m = validate_matrix(m)
    oracle = estimate_oracle(m)
    analyses = [analyze_case(cid, row, oracle) for cid, row in zip(m.case_ids, m.values)]
    return oracle, sort_analyses(analyses)


def rank_cases(m: TimingMatrix) -> list[CaseAnalysis]:
    """Analyze every case against the corpus oracle, most abnormal first.

    No threshold is applied; callers take the top N.
    """
    return analyze_matrix(m)[1]


def floor_stage_matrix(m: TimingMatrix, floor: float = STAGE_FLOOR_S) -> TimingMatrix:
    """Raise every entry below ``floor`` to ``floor``; negatives are still rejected."""
    if np.any(m.values < 0) or not np.all(np.isfinite(m.values)):
        raise NonPositiveEntry(f"{m.stage} matrix has negative or non-finite entries")
    return validate_matrix(TimingMatrix(m.case_ids, m.runtime_ids, np.maximum(m.values, floor), m.stage))


def locate_abnormal_stage(
    stage_matrices: Mapping[str, TimingMatrix], case_id: str, runtime_id: str
) -> StageLocation:
    """Find the stage in which ``runtime_id`` deviates most for ``case_id``.

    Each stage gets its own oracle, computed from that stage's floored
    matrix. Stages in which the case's row is entirely zero are skipped.
    """
    degrees: dict[str, float] = {}
    for stage in STAGES:
        if stage not in stage_matrices:
            continue
        m = stage_matrices[stage]
        if case_id not in m.case_ids:
            raise MissingCase(f"case {case_id!r} not in {stage} matrix")
        if runtime_id not in m.runtime_ids:
            raise MissingRuntime(f"runtime {runtime_id!r} not in {stage} matrix")
        if not np.any(m.row(case_id) > 0):
            continue
        floored = floor_stage_matrix(m)
        oracle = estimate_oracle(floored)
        analysis = analyze_case(case_id, floored.row(case_id), oracle)
        degrees[stage] = analysis.degree_of(runtime_id)
    if not degrees:
        raise AllStagesNonPositive(f"case {case_id!r} has no positive stage time in any stage")
    best = max(degrees, key=lambda s: degrees[s])  # first maximum in init/load/exec order
    return StageLocation(case_id, runtime_id, best, degrees)
