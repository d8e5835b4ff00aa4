"""Stochastic runtime model: compute times Y, communication delay D = D0 * s(m).

Monte-Carlo estimates draw from one substream per fixed-size block of sample
indices, so a given (seed, n_samples) yields bit-identical samples however
the blocks are scheduled.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

COMPUTE_KINDS = ("Constant", "Exponential", "ShiftedExponential")
SCALING_KINDS = ("Constant", "Log2Tree", "Linear", "Custom")

SAMPLE_BLOCK = 1024
# spawn-key namespaces for SeedSequence substreams
STREAM_WORKER = 1
STREAM_DELAY = 2
STREAM_MONTE_CARLO = 3


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...), independent of call order."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


@dataclass(frozen=True)
class ComputeTime:
    """Distribution F_Y of one local-step compute time.

    ``mean`` is E[Y] for every kind; ShiftedExponential is shift + Exp(mean - shift).
    """
    kind: str = "Constant"
    mean: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in COMPUTE_KINDS:
            raise ValueError(f"Unknown compute-time kind: {self.kind} (expected one of {COMPUTE_KINDS})")
        if not self.mean > 0:
            raise ValueError(f"compute-time mean must be > 0, got {self.mean}")
        if self.kind == "ShiftedExponential" and not 0 <= self.shift < self.mean:
            raise ValueError(f"shift must be in [0, mean), got shift={self.shift}, mean={self.mean}")

    @property
    def is_deterministic(self) -> bool:
        return self.kind == "Constant"

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "Constant":
            return np.full(size, self.mean)
        if self.kind == "Exponential":
            return rng.exponential(self.mean, size)
        return self.shift + rng.exponential(self.mean - self.shift, size)


@dataclass(frozen=True)
class DelayModel:
    """Y distribution plus communication delay D = D0 * s(m)."""
    compute: ComputeTime = field(default_factory=ComputeTime)
    D0: float = 1.0
    scaling: str = "Constant"
    table: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.D0 < 0:
            raise ValueError(f"D0 must be >= 0, got {self.D0}")
        if self.scaling not in SCALING_KINDS:
            raise ValueError(f"Unknown scaling: {self.scaling} (expected one of {SCALING_KINDS})")
        if self.scaling == "Custom":
            if not self.table:
                raise ValueError("Custom scaling needs a non-empty table {m: s(m)}")
            bad = {m: s for m, s in self.table.items() if s < 0 or int(m) < 1}
            if bad:
                raise ValueError(f"Custom scaling entries must have m >= 1 and s(m) >= 0: {bad}")

    def scale(self, m: int) -> float:
        if m < 1:
            raise ValueError(f"worker count m must be >= 1, got {m}")
        if self.scaling == "Constant":
            return 1.0
        if self.scaling == "Log2Tree":
            return 2.0 * math.log2(m)
        if self.scaling == "Linear":
            return float(m)
        if m not in self.table:
            raise ValueError(f"Custom scaling table has no entry for m={m}")
        return float(self.table[m])

    @property
    def y(self) -> float:
        return self.compute.mean


@dataclass
class RuntimeStats:
    """Mean round/iteration times for one (m, tau) configuration."""
    m: int
    tau: int
    mean_round_time: float
    mean_iteration_time: float
    stderr: float = 0.0
    n_samples: int = 0
    seed: Optional[int] = None
    samples: Optional[np.ndarray] = None  # per-iteration times

    def quantile(self, q: float) -> float:
        if self.samples is None:
            return self.mean_iteration_time
        return float(np.quantile(self.samples, q))


@dataclass
class EmpiricalCDF:
    """Empirical distribution of per-iteration runtime."""
    values: np.ndarray  # sorted
    seed: Optional[int] = None

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def cdf(self, t: float) -> float:
        return float(np.searchsorted(self.values, t, side="right") / self.n)

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.values, q))

    def points(self):
        """(value, probability) pairs of the step function."""
        probs = np.arange(1, self.n + 1) / self.n
        return self.values, probs


def comm_delay(dm: DelayModel, m: int) -> float:
    """D = D0 * s(m)."""
    return dm.D0 * dm.scale(m)


def _check_m_tau(m: int, tau: int):
    if m < 1:
        raise ValueError(f"worker count m must be >= 1, got {m}")
    if tau < 1:
        raise ValueError(f"communication period tau must be >= 1, got {tau}")


def sample_round_time(dm: DelayModel, m: int, tau: int, rng: np.random.Generator) -> float:
    """max_i(sum_{k<=tau} Y_ik) + D for one averaging round."""
    _check_m_tau(m, tau)
    d = comm_delay(dm, m)
    if dm.compute.is_deterministic:
        return tau * dm.compute.mean + d
    y = dm.compute.sample(rng, (m, tau))
    return float(y.sum(axis=1).max() + d)


def sample_round_times(dm: DelayModel, m: int, tau: int, n_samples: int, seed: int = 0) -> np.ndarray:
    """n_samples independent round times, block-wise substreams keyed by seed."""
    _check_m_tau(m, tau)
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    d = comm_delay(dm, m)
    if dm.compute.is_deterministic:
        return np.full(n_samples, tau * dm.compute.mean + d)
    out = np.empty(n_samples)
    for block, start in enumerate(range(0, n_samples, SAMPLE_BLOCK)):
        size = min(SAMPLE_BLOCK, n_samples - start)
        rng = substream(seed, STREAM_MONTE_CARLO, m, tau, block)
        y = dm.compute.sample(rng, (size, m, tau))
        out[start:start + size] = y.sum(axis=2).max(axis=1) + d
    return out


def sample_average_compute(dm: DelayModel, tau: int, n_samples: int, seed: int = 0) -> np.ndarray:
    """Samples of one worker's average step time Ybar = (1/tau) sum_k Y_k."""
    times = sample_round_times(DelayModel(dm.compute, D0=0.0), 1, tau, n_samples, seed)
    return times / tau


def expected_iteration_time(
    dm: DelayModel, m: int, tau: int, n_samples: int = 100_000, seed: int = 0
) -> RuntimeStats:
    """E[T_P-Avg] = E[Ybar_{m:m}] + E[D]/tau, closed form for Constant Y."""
    _check_m_tau(m, tau)
    if dm.compute.is_deterministic:
        round_time = tau * dm.compute.mean + comm_delay(dm, m)
        return RuntimeStats(m, tau, round_time, dm.compute.mean + comm_delay(dm, m) / tau)
    per_iter = sample_round_times(dm, m, tau, n_samples, seed) / tau
    mean = float(np.mean(per_iter))
    stderr = float(stats.sem(per_iter)) if n_samples > 1 else float("nan")
    logger.debug("expected_iteration_time m=%d tau=%d: %.5f +/- %.5f (n=%d)", m, tau, mean, stderr, n_samples)
    return RuntimeStats(m, tau, mean * tau, mean, stderr, n_samples, seed, per_iter)


def runtime_tail(
    dm: DelayModel, m: int, tau: int, n_samples: int = 100_000, seed: int = 0
) -> EmpiricalCDF:
    """Empirical CDF of per-iteration runtime."""
    if n_samples < 1000:
        raise ValueError(f"runtime_tail needs n_samples >= 1000, got {n_samples}")
    per_iter = sample_round_times(dm, m, tau, n_samples, seed) / tau
    return EmpiricalCDF(np.sort(per_iter), seed)


def speedup_ratio(alpha: float, tau: float) -> float:
    """E[T_sync] / E[T_P-Avg] = (1 + alpha) / (1 + alpha / tau) for constant Y, D."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    if math.isinf(tau):
        return 1.0 + alpha
    return (1.0 + alpha) / (1.0 + alpha / tau)


def harmonic_number(m: int) -> float:
    return float(sum(1.0 / i for i in range(1, m + 1)))


def expected_max_exponential(y: float, m: int) -> float:
    """E[Y_{m:m}] for Y ~ Exponential(mean y): y * H_m."""
    return y * harmonic_number(m)


def communication_ratio(dm: DelayModel, m: int) -> float:
    """alpha = D / E[Y]."""
    return comm_delay(dm, m) / dm.y
