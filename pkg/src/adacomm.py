"""AdaComm controller: re-selects the communication period at T0-spaced checkpoints."""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

MODES = ("Basic", "LrCoupledExact", "LrCoupledApprox")


@dataclass(frozen=True)
class AdaCommConfig:
    T0: float
    tau0: int
    gamma: float = 0.5
    slack: int = 0
    mode: str = "LrCoupledApprox"
    defer_lr_decay: bool = True
    tau_max: int = 100
    tau0_grid: Tuple[int, ...] = ()
    grid_budget: Optional[float] = None

    def __post_init__(self):
        if not self.T0 > 0:
            raise ValueError(f"T0 must be > 0, got {self.T0}")
        if self.tau0 < 1:
            raise ValueError(f"tau0 must be >= 1, got {self.tau0}")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0,1)")
        if self.slack < 0:
            raise ValueError(f"slack must be >= 0, got {self.slack}")
        if self.mode not in MODES:
            raise ValueError(f"Unknown AdaComm mode: {self.mode} (expected one of {MODES})")
        if self.tau_max < self.tau0:
            raise ValueError(f"tau_max ({self.tau_max}) must be >= tau0 ({self.tau0})")
        if any(c < 1 for c in self.tau0_grid):
            raise ValueError(f"tau0_grid entries must be >= 1, got {list(self.tau0_grid)}")
        if self.grid_budget is not None and not self.grid_budget > 0:
            raise ValueError(f"grid_budget must be > 0, got {self.grid_budget}")


@dataclass
class AdaCommState:
    F0: float
    lr0: float
    tau_prev: int
    l: int = 0
    next_checkpoint: float = 0.0

    def __post_init__(self):
        if not self.F0 > 0:
            raise ValueError(f"initial loss F0 must be > 0, got {self.F0}")
        if self.tau_prev < 1:
            raise ValueError(f"tau_prev must be >= 1, got {self.tau_prev}")


@dataclass(frozen=True)
class AdaCommEvent:
    """One controller decision, as written to the events CSV."""
    wall_clock: float
    interval: int
    F_ratio: float
    lr_ratio: float
    candidate: int
    branch: str  # "formula" or "gamma"
    tau_out: int

    CSV_COLUMNS = ("wall_clock", "interval", "F_ratio", "lr_ratio", "candidate", "branch", "tau_out")

    def as_row(self) -> list:
        return [self.wall_clock, self.interval, self.F_ratio, self.lr_ratio,
                self.candidate, self.branch, self.tau_out]


def optimal_tau(F1: float, F_inf: float, D: float, lr: float, L: float, C: float, T: float) -> float:
    """Continuous minimizer of the error-runtime bound at time T.

    tau* = sqrt(2 (F1 - F_inf) D / (lr^3 L^2 C T)).
    """
    for name, value in (("D", D), ("lr", lr), ("L", L), ("C", C), ("T", T)):
        if not value > 0:
            raise ValueError(f"{name} must be > 0, got {value}")
    if not F1 > F_inf:
        raise ValueError(f"F1 ({F1}) must exceed F_inf ({F_inf})")
    return math.sqrt(2.0 * (F1 - F_inf) * D / (lr ** 3 * L ** 2 * C * T))


def initial_tau(F1: float, F_inf: float, D: float, lr: float, L: float, C: float, T0: float) -> int:
    """First-interval period from the closed-form optimum evaluated at T = T0."""
    return max(1, math.ceil(optimal_tau(F1, F_inf, D, lr, L, C, T0)))


def _ceil(value: float) -> int:
    # sqrt(0.25) * 20 must give 10, not 11
    return math.ceil(round(value, 9))


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def candidate_tau(state: AdaCommState, cfg: AdaCommConfig, F_now: float, lr_now: float) -> Tuple[int, float, float]:
    """ceil(sqrt(ratio) * tau0) for the configured mode; returns (candidate, F_ratio, lr_ratio)."""
    if not F_now > 0:
        raise ValueError(f"F_now must be > 0, got {F_now}")
    if not lr_now > 0:
        raise ValueError(f"lr_now must be > 0, got {lr_now}")
    f_ratio = F_now / state.F0
    lr_ratio = state.lr0 / lr_now
    if cfg.mode == "Basic":
        ratio = f_ratio
    elif cfg.mode == "LrCoupledExact":
        ratio = lr_ratio ** 3 * f_ratio
    else:
        ratio = lr_ratio * f_ratio
    return _ceil(math.sqrt(ratio) * cfg.tau0), f_ratio, lr_ratio


def decide(state: AdaCommState, cfg: AdaCommConfig, F_now: float, lr_now: float,
           wall_clock: float = 0.0) -> AdaCommEvent:
    """Apply the refined update rule and advance state.tau_prev."""
    candidate, f_ratio, lr_ratio = candidate_tau(state, cfg, F_now, lr_now)
    candidate = min(candidate, cfg.tau_max)
    if candidate + cfg.slack < state.tau_prev:
        tau_out, branch = max(1, candidate), "formula"
    else:
        tau_out, branch = max(1, _round_half_up(cfg.gamma * state.tau_prev)), "gamma"
    tau_out = min(tau_out, cfg.tau_max)
    event = AdaCommEvent(wall_clock, state.l, f_ratio, lr_ratio, candidate, branch, tau_out)
    state.tau_prev = tau_out
    return event


def next_tau(state: AdaCommState, cfg: AdaCommConfig, F_now: float, lr_now: float) -> int:
    return decide(state, cfg, F_now, lr_now).tau_out


def should_defer_lr_decay(current_tau: int, cfg: Optional[AdaCommConfig] = None) -> bool:
    """True while a scheduled lr decay must wait for tau to reach 1."""
    if current_tau < 1:
        raise ValueError(f"current_tau must be >= 1, got {current_tau}")
    enabled = True if cfg is None else cfg.defer_lr_decay
    return enabled and current_tau > 1


class AdaCommController:
    """Sequential state machine owned by one run's round loop."""

    def __init__(self, cfg: AdaCommConfig, F0: float, lr0: float):
        self.cfg = cfg
        self.state = AdaCommState(F0=F0, lr0=lr0, tau_prev=cfg.tau0, l=0, next_checkpoint=cfg.T0)
        self.events: List[AdaCommEvent] = []
        if cfg.mode == "LrCoupledExact":
            logger.warning(
                "AdaComm mode LrCoupledExact scales tau with (lr0/lr)^(3/2); "
                "after a 10x lr decay tau can jump past tau_max=%d and training may diverge",
                cfg.tau_max,
            )
        logger.debug("AdaCommController init: %s, F0=%.6g, lr0=%.6g", cfg, F0, lr0)

    @property
    def tau(self) -> int:
        return self.state.tau_prev

    def due(self, wall_clock: float) -> bool:
        return wall_clock >= self.state.next_checkpoint

    def checkpoint(self, wall_clock: float, F_now: float, lr_now: float) -> AdaCommEvent:
        """Decide the next period at the first sync boundary past l * T0."""
        self.state.l = int(math.floor(wall_clock / self.cfg.T0))
        event = decide(self.state, self.cfg, F_now, lr_now, wall_clock)
        self.events.append(event)
        self.state.next_checkpoint = (self.state.l + 1) * self.cfg.T0
        logger.info(
            "AdaComm l=%d t=%.1f F/F0=%.4g lr0/lr=%.3g candidate=%d -> tau=%d (%s)",
            event.interval, wall_clock, event.F_ratio, event.lr_ratio,
            event.candidate, event.tau_out, event.branch,
        )
        return event

    def should_defer_lr_decay(self, current_tau: Optional[int] = None) -> bool:
        return should_defer_lr_decay(self.tau if current_tau is None else current_tau, self.cfg)


def grid_search_tau0(
    candidates: Sequence[int],
    budget_seconds: float,
    cfg,
    obj,
    dm,
    seed: Optional[int] = None,
    rel_tol: float = 1e-9,
) -> int:
    """Pick tau0 by running each fixed-period candidate for budget_seconds.

    Returns the candidate with the lowest final averaged-model loss; losses
    equal within rel_tol count as ties and go to the smaller tau.
    """
    from .engine import DivergenceError, FixedPeriod, run_pasgd

    if not candidates:
        raise ValueError("grid_search_tau0 needs at least one candidate")
    if not budget_seconds > 0:
        raise ValueError(f"budget_seconds must be > 0, got {budget_seconds}")

    results = []
    for tau in sorted(set(int(c) for c in candidates)):
        trial = replace(cfg, schedule=FixedPeriod(tau), max_time=budget_seconds, max_iterations=None,
                        seed=cfg.seed if seed is None else seed)
        trace = run_pasgd(trial, obj, dm)
        final = trace.final_loss
        logger.info("grid tau0=%d: final loss=%s diverged=%s", tau, final, trace.diverged)
        if not trace.diverged and final is not None:
            results.append((tau, final))

    if not results:
        raise DivergenceError(f"all tau0 candidates diverged: {sorted(candidates)}")

    best_tau, best_loss = results[0]
    for tau, loss in results[1:]:
        if loss < best_loss and not math.isclose(loss, best_loss, rel_tol=rel_tol):
            best_tau, best_loss = tau, loss
    logger.info("grid search selected tau0=%d (loss=%.6g)", best_tau, best_loss)
    return best_tau
