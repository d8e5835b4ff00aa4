"""Closed-form error-runtime bounds, step-size conditions and convergence checks."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

logger = logging.getLogger(__name__)


class RateDescriptorError(ValueError):
    """Raised for a malformed learning-rate / period family descriptor."""


@dataclass(frozen=True)
class BoundParams:
    F1: float
    F_inf: float
    L: float
    C: float
    M: float = 0.0
    m: int = 1
    Y: float = 1.0
    D: float = 1.0
    approximate: bool = False  # Y, D are means of stochastic delays

    def __post_init__(self):
        if not self.F1 > self.F_inf:
            raise ValueError(f"F1 ({self.F1}) must exceed F_inf ({self.F_inf})")
        if self.L < 0 or self.C < 0 or self.M < 0:
            raise ValueError(f"L, C, M must be >= 0 (L={self.L}, C={self.C}, M={self.M})")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not self.Y > 0:
            raise ValueError(f"Y must be > 0, got {self.Y}")
        if self.D < 0:
            raise ValueError(f"D must be >= 0, got {self.D}")

    @property
    def gap(self) -> float:
        return self.F1 - self.F_inf


def fixed_period_lr_condition(lr: float, L: float, tau: int) -> float:
    """lr L + lr^2 L^2 tau (tau - 1); the bound needs this <= 1."""
    return lr * L + lr ** 2 * L ** 2 * tau * (tau - 1)


def adaptive_lr_condition(lr: float, L: float, tau: int, M: float, m: int) -> float:
    """lr^2 L^2 (tau - 1)(2M + tau) + lr L (M/m + 1); must be <= 1 per local period.

    At tau = 1 with M = 0 the quadratic term vanishes and the value is exactly lr L
    (0.08 for lr = 0.08, L = 1), the same as the fixed-period condition.
    """
    return lr ** 2 * L ** 2 * (tau - 1) * (2 * M + tau) + lr * L * (M / m + 1)


def error_floor(p: BoundParams, lr: float, tau: int) -> float:
    """T -> infinity residual lr L C / m + lr^2 L^2 C (tau - 1)."""
    return lr * p.L * p.C / p.m + lr ** 2 * p.L ** 2 * p.C * (tau - 1)


def error_runtime_bound(p: BoundParams, lr: float, tau: float, T: float, warn: bool = True) -> float:
    """2 (F1 - F_inf) / (lr T) * (Y + D / tau) + lr L C / m + lr^2 L^2 C (tau - 1)."""
    if not T > 0:
        raise ValueError(f"T must be > 0, got {T}")
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    if not lr > 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    if warn and fixed_period_lr_condition(lr, p.L, tau) > 1:
        logger.warning("lr=%.4g, tau=%s violate lr*L + lr^2*L^2*tau*(tau-1) <= 1; bound may not hold", lr, tau)
    return 2.0 * p.gap / (lr * T) * (p.Y + p.D / tau) + error_floor(p, lr, tau)


def bound_derivative_tau(p: BoundParams, lr: float, tau: float, T: float) -> float:
    """d/dtau of the error-runtime bound."""
    return -2.0 * p.gap * p.D / (lr * T * tau ** 2) + lr ** 2 * p.L ** 2 * p.C


def bound_curve(p: BoundParams, lr: float, taus: Sequence[int], times: Sequence[float]) -> List[Tuple[float, int, float]]:
    """(T, tau, bound) rows for plotting error-vs-runtime curves."""
    for tau in taus:
        if fixed_period_lr_condition(lr, p.L, tau) > 1:
            logger.warning("tau=%d: lr=%.4g violates the step-size condition; curve is indicative only", tau, lr)
    return [(float(T), int(tau), error_runtime_bound(p, lr, tau, T, warn=False))
            for tau in taus for T in times]


def crossover_time(p: BoundParams, lr: float, tau_a: int, tau_b: int,
                   t_lo: float = 1e-9, t_hi: float = 1e12) -> Optional[float]:
    """Wall-clock time where the bounds for tau_a and tau_b meet (bisection via brentq).

    Returns None when the curves do not cross (equal periods or D = 0).
    """
    if tau_a == tau_b or p.D == 0 or p.C == 0 or p.L == 0:
        return None

    def diff(T):
        return (error_runtime_bound(p, lr, tau_a, T, warn=False)
                - error_runtime_bound(p, lr, tau_b, T, warn=False))

    if diff(t_lo) * diff(t_hi) > 0:
        return None
    root = optimize.brentq(diff, t_lo, t_hi, xtol=1e-12, rtol=1e-14, maxiter=500)
    logger.debug("crossover tau=%d vs tau=%d at T=%.6g", tau_a, tau_b, root)
    return float(root)


def simplified_fixed_lr_bound(p: BoundParams, lr: float, tau_seq: Sequence[int], K: int) -> float:
    """Fixed-lr bound for a variable period sequence with K = sum(tau_seq).

    2 (F1 - F_inf) / (lr K) + lr L C / m + lr^2 L^2 C (sum tau^2 / sum tau - 1)
    """
    taus = np.asarray(tau_seq, dtype=np.float64)
    if taus.size == 0:
        raise ValueError("tau_seq must be nonempty")
    if np.any(taus < 1):
        raise ValueError("tau_seq entries must be >= 1")
    total = float(taus.sum())
    if K != total:
        raise ValueError(f"K ({K}) must equal sum(tau_seq) ({total:g})")
    noise = float((taus ** 2).sum() / total - 1.0)
    return 2.0 * p.gap / (lr * K) + lr * p.L * p.C / p.m + lr ** 2 * p.L ** 2 * p.C * noise


def adaptive_bound(p: BoundParams, lr_seq: Sequence[float], tau_seq: Sequence[int]) -> float:
    """Non-asymptotic bound on the lr-weighted average squared gradient norm.

    2 (F1 - F_inf) / S1 + (L C / m) sum lr^2 tau / S1 + L^2 C sum lr^3 tau (tau - 1) / S1,
    with S1 = sum lr tau over the periods.
    """
    lrs, taus = _as_sequences(lr_seq, tau_seq)
    s1 = float(np.sum(lrs * taus))
    s2 = float(np.sum(lrs ** 2 * taus))
    s3 = float(np.sum(lrs ** 3 * taus * (taus - 1)))
    return 2.0 * p.gap / s1 + p.L * p.C / p.m * s2 / s1 + p.L ** 2 * p.C * s3 / s1


def _as_sequences(lr_seq, tau_seq) -> Tuple[np.ndarray, np.ndarray]:
    lrs = np.asarray(lr_seq, dtype=np.float64)
    taus = np.asarray(tau_seq, dtype=np.float64)
    if lrs.size == 0 or lrs.shape != taus.shape:
        raise ValueError(f"lr_seq and tau_seq must be nonempty and equally long ({lrs.size} vs {taus.size})")
    if np.any(lrs <= 0) or np.any(taus <= 0):
        raise ValueError("lr_seq and tau_seq must be positive")
    return lrs, taus


# --- convergence conditions for (lr_r, tau_r) families ---

RATE_KINDS = ("constant", "power", "bounded")


@dataclass(frozen=True)
class RateFamily:
    """lr_r = a / (r+1)^p (power, p >= 0; constant is p = 0), or tau_r bounded in [1, b].

    For tau, ``power`` means b / (r+1)^q taken as a real-valued sequence.
    """
    kind: str
    scale: float = 1.0
    exponent: float = 0.0

    def __post_init__(self):
        if self.kind not in RATE_KINDS:
            raise RateDescriptorError(f"rate kind must be one of {RATE_KINDS}, got {self.kind!r}")
        if not self.scale > 0:
            raise RateDescriptorError(f"rate scale must be > 0, got {self.scale}")
        if self.exponent < 0:
            raise RateDescriptorError(f"rate exponent must be >= 0, got {self.exponent}")

    @property
    def decay(self) -> float:
        """Tail exponent e with term ~ (r+1)^-e; bounded and constant families have e = 0."""
        return self.exponent if self.kind == "power" else 0.0

    def term(self, r: int) -> float:
        if self.kind == "power":
            return self.scale / (r + 1) ** self.exponent
        return self.scale

    @classmethod
    def parse(cls, text: str) -> "RateFamily":
        """Parse 'constant:a=0.1', 'power:a=0.1,p=1' or 'bounded:b=16'."""
        if not isinstance(text, str) or not text.strip():
            raise RateDescriptorError(f"empty rate descriptor: {text!r}")
        kind, _, rest = text.strip().partition(":")
        params: Dict[str, float] = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, sep, value = item.partition("=")
            if not sep:
                raise RateDescriptorError(f"expected key=value in {text!r}, got {item!r}")
            try:
                params[key.strip()] = float(value)
            except ValueError:
                raise RateDescriptorError(f"non-numeric value {value!r} in {text!r}") from None
        unknown = set(params) - {"a", "b", "p", "q"}
        if unknown:
            raise RateDescriptorError(f"unknown parameters {sorted(unknown)} in {text!r}")
        scale = params.get("a", params.get("b", 1.0))
        exponent = params.get("p", params.get("q", 0.0))
        if kind.strip() != "power" and exponent:
            raise RateDescriptorError(f"{kind!r} family takes no exponent: {text!r}")
        return cls(kind.strip(), scale, exponent)

    def describe(self) -> str:
        if self.kind == "power":
            return f"{self.scale:g}/(r+1)^{self.exponent:g}"
        if self.kind == "bounded":
            return f"bounded in [1, {self.scale:g}]"
        return f"{self.scale:g}"


def _series_converges(exponent: float) -> bool:
    # sum (r+1)^-e converges iff e > 1
    return exponent > 1.0


@dataclass
class ConditionReport:
    """Verdicts for sum lr tau = inf, sum lr^2 tau < inf, sum lr^3 tau^2 < inf.

    Verdict fields are None when only finite partial sums are known.
    """
    lr_family: str
    tau_family: str
    sum_lr_tau_diverges: Optional[bool]
    sum_lr2_tau_converges: Optional[bool]
    sum_lr3_tau2_converges: Optional[bool]
    partial_sums: Optional[Tuple[float, float, float]] = None

    @property
    def determined(self) -> bool:
        return self.sum_lr_tau_diverges is not None

    @property
    def passed(self) -> Optional[bool]:
        if not self.determined:
            return None
        return self.sum_lr_tau_diverges and self.sum_lr2_tau_converges and self.sum_lr3_tau2_converges

    @property
    def verdict(self) -> str:
        if not self.determined:
            return "UNDETERMINED"
        return "PASS" if self.passed else "FAIL"

    def as_row(self) -> list:
        return [self.lr_family, self.tau_family, self.sum_lr_tau_diverges,
                self.sum_lr2_tau_converges, self.sum_lr3_tau2_converges, self.verdict]


CONDITION_COLUMNS = ("lr_family", "tau_family", "sum_lr_tau_diverges",
                     "sum_lr2_tau_converges", "sum_lr3_tau2_converges", "verdict")


def check_adaptive_conditions(
    lr_seq: Union[RateFamily, Sequence[float], str],
    tau_seq: Union[RateFamily, Sequence[float], str],
    tail_model: Optional[Tuple[RateFamily, RateFamily]] = None,
) -> ConditionReport:
    """Check the three series conditions that make the averaged model converge.

    Families are decided analytically with p-series tests on the tail
    exponents (bounded tau in [1, b] compares exactly like a constant). For
    finite sequences the partial sums are reported; a ``tail_model``
    (lr family, tau family) supplies the verdict, otherwise it stays
    undetermined.
    """
    if isinstance(lr_seq, str):
        lr_seq = RateFamily.parse(lr_seq)
    if isinstance(tau_seq, str):
        tau_seq = RateFamily.parse(tau_seq)

    partial = None
    if not isinstance(lr_seq, RateFamily) or not isinstance(tau_seq, RateFamily):
        if isinstance(lr_seq, RateFamily) or isinstance(tau_seq, RateFamily):
            raise RateDescriptorError("pass either two rate families or two finite sequences")
        lrs, taus = _as_sequences(lr_seq, tau_seq)
        partial = (float(np.sum(lrs * taus)), float(np.sum(lrs ** 2 * taus)),
                   float(np.sum(lrs ** 3 * taus ** 2)))
        if tail_model is None:
            logger.debug("finite sequences without tail model: partial sums %s", partial)
            return ConditionReport(f"finite(n={lrs.size})", f"finite(n={taus.size})", None, None, None, partial)
        lr_seq, tau_seq = tail_model

    if lr_seq.kind == "bounded":
        raise RateDescriptorError("'bounded' applies to the period sequence only")
    p, q = lr_seq.decay, tau_seq.decay
    report = ConditionReport(
        lr_family=lr_seq.describe(),
        tau_family=tau_seq.describe(),
        sum_lr_tau_diverges=not _series_converges(p + q),
        sum_lr2_tau_converges=_series_converges(2 * p + q),
        sum_lr3_tau2_converges=_series_converges(3 * p + 2 * q),
        partial_sums=partial,
    )
    logger.debug("conditions lr=%s tau=%s -> %s", report.lr_family, report.tau_family, report.verdict)
    return report


def sgd_conditions(lr_family: RateFamily) -> Tuple[bool, bool]:
    """Mini-batch SGD conditions: (sum lr diverges, sum lr^2 converges)."""
    p = lr_family.decay
    return not _series_converges(p), _series_converges(2 * p)


def weighted_grad_stat(
    trace,
    lr_seq: Optional[Sequence[float]] = None,
    tau_seq: Optional[Sequence[int]] = None,
    start: int = 0,
    stop: Optional[int] = None,
    dense: bool = False,
) -> float:
    """lr*tau-weighted average of ||grad F(xbar)||^2 over records[start:stop].

    Each synchronization record stands in for the tau iterates of its round.
    With dense=True the per-iteration values recorded in dense mode are used
    with lr weights instead.
    """
    if dense:
        rows = trace.dense[start:stop]
        if not rows:
            raise ValueError("trace has no dense records (run with dense=True)")
        weights = np.array([lr for _, lr, _ in rows])
        values = np.array([g for _, _, g in rows])
        return float(np.sum(weights * values) / np.sum(weights))

    records = trace.records[start:stop]
    if not records:
        raise ValueError("weighted_grad_stat needs a nonempty trace")
    lrs = np.array(lr_seq[start:stop] if lr_seq is not None else [r.lr_used for r in records], dtype=float)
    taus = np.array(tau_seq[start:stop] if tau_seq is not None else [r.tau_used for r in records], dtype=float)
    if lrs.shape[0] != len(records) or taus.shape[0] != len(records):
        raise ValueError("lr_seq/tau_seq must match the trace length")
    values = np.array([r.grad_norm_sq for r in records])
    weights = lrs * taus
    return float(np.sum(weights * values) / np.sum(weights))
