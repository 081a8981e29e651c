"""Synthetic timing matrices with controllable anomalies.

Each cell is ``workload[i] * speed[j] * exp(sigma * z_ij)``: a per-case cost
times a systematic per-runtime factor, with multiplicative lognormal noise.
Random numbers come from numpy's PCG64 bit generator, seeded directly with the
profile seed (``numpy.random.default_rng(seed)``), whose output stream is
fixed across platforms for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange
from .model import STAGES, TimingMatrix

DEFAULT_CASES = 120
DEFAULT_RUNTIMES = 7


def runtime_ids(k: int) -> list[str]:
    width = max(2, len(str(k)))
    return [f"rt{j + 1:0{width}d}" for j in range(k)]


def case_ids(n: int) -> list[str]:
    width = max(3, len(str(n)))
    return [f"case{i + 1:0{width}d}" for i in range(n)]


@dataclass(frozen=True)
class SimProfile:
    seed: int
    runtime_speeds: tuple[float, ...]
    case_workloads: tuple[float, ...]
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "runtime_speeds", tuple(float(s) for s in self.runtime_speeds))
        object.__setattr__(self, "case_workloads", tuple(float(w) for w in self.case_workloads))
        if len(self.runtime_speeds) < 2:
            raise ValueError("need at least 2 runtime speeds")
        if len(self.case_workloads) < 1:
            raise ValueError("need at least 1 case workload")
        if not all(s > 0 for s in self.runtime_speeds + self.case_workloads):
            raise ValueError("speeds and workloads must be positive")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class InjectedAnomaly:
    case_index: int
    runtime_index: int
    factor: float

    def __post_init__(self):
        if not self.factor > 1:
            raise ValueError(f"anomaly factor must be > 1, got {self.factor}")


def random_profile(
    seed: int,
    n_cases: int = DEFAULT_CASES,
    n_runtimes: int = DEFAULT_RUNTIMES,
    noise_sigma: float = 0.05,
) -> SimProfile:
    """Profile with speeds log-uniform in [1, 10] and workloads in [0.01, 10] s.

    Drawn from a stream derived from ``[seed, 1]`` so they are independent of
    the noise that :func:`generate` draws from ``seed``.
    """
    rng = np.random.default_rng([seed, 1])
    speeds = np.exp(rng.uniform(0.0, np.log(10.0), n_runtimes))
    workloads = np.exp(rng.uniform(np.log(0.01), np.log(10.0), n_cases))
    return SimProfile(seed, tuple(speeds), tuple(workloads), noise_sigma)


def generate(profile: SimProfile) -> TimingMatrix:
    speeds = np.asarray(profile.runtime_speeds)
    workloads = np.asarray(profile.case_workloads)
    values = np.outer(workloads, speeds)
    if profile.noise_sigma > 0:
        z = np.random.default_rng(profile.seed).standard_normal(values.shape)
        values = values * np.exp(profile.noise_sigma * z)
    return TimingMatrix(case_ids(len(workloads)), runtime_ids(len(speeds)), values)


def inject(m: TimingMatrix, anomaly: InjectedAnomaly) -> TimingMatrix:
    """Copy of ``m`` with one cell multiplied by ``anomaly.factor``."""
    n, k = m.shape
    if not (0 <= anomaly.case_index < n and 0 <= anomaly.runtime_index < k):
        raise IndexOutOfRange(
            f"cell ({anomaly.case_index}, {anomaly.runtime_index}) outside {n}x{k} matrix"
        )
    values = m.values.copy()
    values[anomaly.case_index, anomaly.runtime_index] *= anomaly.factor
    return TimingMatrix(m.case_ids, m.runtime_ids, values, m.stage)


def split_stages(m: TimingMatrix, fractions: np.ndarray) -> dict[str, TimingMatrix]:
    """Split total times into init/load/exec with fixed per-runtime fractions.

    ``fractions`` has shape (3, k); each column must sum to 1.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (len(STAGES), m.shape[1]):
        raise ValueError(f"fractions must have shape (3, {m.shape[1]})")
    if np.any(fractions < 0) or not np.allclose(fractions.sum(axis=0), 1.0):
        raise ValueError("stage fractions must be non-negative and sum to 1 per runtime")
    return {
        stage: TimingMatrix(m.case_ids, m.runtime_ids, m.values * fractions[s], stage)
        for s, stage in enumerate(STAGES)
    }
