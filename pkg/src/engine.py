"""PASGD simulator: m virtual workers, tau local steps, model averaging, simulated wall clock."""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .adacomm import AdaCommConfig, AdaCommController, AdaCommEvent
from .bounds import adaptive_lr_condition, fixed_period_lr_condition
from .delay import STREAM_DELAY, STREAM_WORKER, DelayModel, sample_round_time, substream
from .objectives import BaseObjective, DimensionMismatchError, ModelVector, NonFiniteError

logger = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6
LR_UNITS = ("iteration", "epoch", "time")
MOMENTUM_KINDS = ("none", "local", "block")
BUFFER_SYNC = ("clear", "average")


class DivergenceError(RuntimeError):
    """Raised when a caller needs a converged run and none is available."""


@dataclass(frozen=True)
class FixedPeriod:
    tau: int = 1

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")


CommSchedule = Union[FixedPeriod, AdaCommConfig]


@dataclass(frozen=True)
class LrSchedule:
    """Initial lr decayed by ``factor`` at each milestone (iterations, epochs or seconds)."""
    initial: float
    milestones: Tuple[float, ...] = ()
    unit: str = "epoch"
    factor: float = 0.1

    def __post_init__(self):
        if not self.initial > 0:
            raise ValueError(f"lr must be > 0, got {self.initial}")
        if self.unit not in LR_UNITS:
            raise ValueError(f"lr decay unit must be one of {LR_UNITS}, got {self.unit}")
        if not 0 < self.factor <= 1:
            raise ValueError(f"lr decay factor must be in (0,1], got {self.factor}")
        if list(self.milestones) != sorted(self.milestones):
            raise ValueError(f"lr milestones must be sorted, got {list(self.milestones)}")

    def milestones_passed(self, iteration: int, wall_clock: float,
                          iters_per_epoch: Optional[float] = None) -> int:
        if not self.milestones:
            return 0
        if self.unit == "time":
            position = wall_clock
        elif self.unit == "iteration":
            position = iteration
        else:
            if iters_per_epoch is None:
                raise ValueError("epoch-based lr decay needs a dataset objective (N unknown)")
            position = iteration / iters_per_epoch
        return sum(1 for mark in self.milestones if position >= mark)


@dataclass(frozen=True)
class Momentum:
    kind: str = "none"
    beta_loc: float = 0.0
    beta_glob: float = 0.0
    buffer_sync: str = "clear"

    def __post_init__(self):
        if self.kind not in MOMENTUM_KINDS:
            raise ValueError(f"momentum kind must be one of {MOMENTUM_KINDS}, got {self.kind}")
        for name in ("beta_loc", "beta_glob"):
            beta = getattr(self, name)
            if not 0 <= beta < 1:
                raise ValueError(f"{name} must be in [0,1), got {beta}")
        if self.buffer_sync not in BUFFER_SYNC:
            raise ValueError(f"buffer_sync must be one of {BUFFER_SYNC}, got {self.buffer_sync}")

    @property
    def uses_buffer(self) -> bool:
        return self.kind == "local" or (self.kind == "block" and self.beta_loc > 0)


@dataclass(frozen=True)
class TrainConfig:
    workers: int
    batch_size: int
    lr_schedule: LrSchedule
    schedule: CommSchedule = field(default_factory=FixedPeriod)
    momentum: Momentum = field(default_factory=Momentum)
    max_time: Optional[float] = None
    max_iterations: Optional[int] = None
    seed: int = 0
    lipschitz: Optional[float] = None
    record_local_loss: bool = False
    dense: bool = False

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.max_time or self.max_iterations):
            raise ValueError("at least one stop criterion (max_time T or max_iterations K) must be > 0")
        if self.max_time is not None and self.max_time < 0:
            raise ValueError(f"max_time must be > 0, got {self.max_time}")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ValueError(f"max_iterations must be > 0, got {self.max_iterations}")

    @property
    def m(self) -> int:
        return self.workers

    @property
    def initial_tau(self) -> int:
        return self.schedule.tau0 if isinstance(self.schedule, AdaCommConfig) else self.schedule.tau


@dataclass(frozen=True)
class WorkerState:
    x: ModelVector
    buf: ModelVector
    stream_id: int = 0


@dataclass(frozen=True)
class TraceRecord:
    wall_clock: float
    iteration: int
    round: int
    tau_used: int
    lr_used: float
    train_loss: float
    grad_norm_sq: float
    local_loss: Optional[float] = None


TRACE_COLUMNS = ("wall_clock", "iteration", "round", "tau_used", "lr_used", "train_loss", "grad_norm_sq")


@dataclass
class RunTrace:
    initial_loss: float
    initial_grad_norm_sq: float
    records: List[TraceRecord] = field(default_factory=list)
    events: List[AdaCommEvent] = field(default_factory=list)
    # (iteration, lr, ||grad F(xbar_k)||^2) after every local step, dense mode only
    dense: List[Tuple[int, float, float]] = field(default_factory=list)
    diverged: bool = False
    divergence_reason: str = ""
    tau0: Optional[int] = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_loss(self) -> Optional[float]:
        return self.records[-1].train_loss if self.records else None

    @property
    def wall_clock(self) -> float:
        return self.records[-1].wall_clock if self.records else 0.0

    @property
    def taus(self) -> List[int]:
        return [r.tau_used for r in self.records]

    @property
    def lrs(self) -> List[float]:
        return [r.lr_used for r in self.records]

    def time_to_target(self, target: float) -> Optional[float]:
        """First synchronization time with train_loss <= target, None if never reached."""
        for rec in self.records:
            if rec.train_loss <= target:
                return rec.wall_clock
        return None

    def loss_at(self, wall_clock: float) -> Optional[float]:
        """Loss of the last averaged model synchronized at or before wall_clock."""
        loss = self.initial_loss
        for rec in self.records:
            if rec.wall_clock > wall_clock:
                break
            loss = rec.train_loss
        return loss

    def plateau_loss(self, from_time: float) -> Optional[float]:
        """Mean train_loss over records with wall_clock >= from_time."""
        tail = [r.train_loss for r in self.records if r.wall_clock >= from_time]
        return float(np.mean(tail)) if tail else None

    def columns(self) -> Tuple[str, ...]:
        if any(r.local_loss is not None for r in self.records):
            return TRACE_COLUMNS + ("local_loss",)
        return TRACE_COLUMNS

    def rows(self) -> List[list]:
        with_local = len(self.columns()) > len(TRACE_COLUMNS)
        out = []
        for r in self.records:
            row = [r.wall_clock, r.iteration, r.round, r.tau_used, r.lr_used, r.train_loss, r.grad_norm_sq]
            if with_local:
                row.append(r.local_loss)
            out.append(row)
        return out


@dataclass(frozen=True)
class LrReport:
    """Both step-size conditions evaluated for one (lr, L, tau, M, m)."""
    fixed_value: float
    fixed_ok: bool
    adaptive_value: float
    adaptive_ok: bool

    @property
    def ok(self) -> bool:
        return self.fixed_ok and self.adaptive_ok


def validate_lr(lr: float, L: float, tau: int, M: float = 0.0, m: int = 1) -> LrReport:
    """Evaluate lr L + lr^2 L^2 tau(tau-1) <= 1 and the variable-period condition."""
    if not lr > 0 or not L > 0:
        raise ValueError(f"lr and L must be > 0 (lr={lr}, L={L})")
    if tau < 1 or m < 1 or M < 0:
        raise ValueError(f"need tau >= 1, m >= 1, M >= 0 (tau={tau}, m={m}, M={M})")
    fixed = fixed_period_lr_condition(lr, L, tau)
    adaptive = adaptive_lr_condition(lr, L, tau, M, m)
    return LrReport(fixed, fixed <= 1.0, adaptive, adaptive <= 1.0)


def worker_rng(seed: int, worker: int, round_index: int) -> np.random.Generator:
    return substream(seed, STREAM_WORKER, worker, round_index)


def delay_rng(seed: int, round_index: int) -> np.random.Generator:
    return substream(seed, STREAM_DELAY, round_index)


def local_step(
    w: WorkerState,
    obj: BaseObjective,
    lr: float,
    batch_size: int,
    momentum: Momentum,
    rng: np.random.Generator,
) -> WorkerState:
    """One mini-batch SGD step, heavy-ball when a local momentum buffer is in use."""
    if not lr > 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    g = obj.stochastic_gradient(w.x, batch_size, rng).values
    if not momentum.uses_buffer:
        return replace(w, x=ModelVector(w.x.values - lr * g))
    buf = momentum.beta_loc * w.buf.values + g
    return replace(w, x=ModelVector(w.x.values - lr * buf), buf=ModelVector(buf))


def _mean_vectors(vectors: Sequence[ModelVector]) -> ModelVector:
    if not vectors:
        raise ValueError("cannot average an empty list of models")
    d = vectors[0].dimension
    total = vectors[0].values.copy()
    for v in vectors[1:]:
        if v.dimension != d:
            raise DimensionMismatchError(f"cannot average models of dimension {d} and {v.dimension}")
        total += v.values
    return ModelVector(total / len(vectors))


def average_models(workers: Sequence[WorkerState]) -> ModelVector:
    """Arithmetic mean in worker-index order (fixed reduction order)."""
    return _mean_vectors([w.x for w in workers])


def block_momentum_round(
    global_buf: ModelVector,
    x_round_start: ModelVector,
    accumulated_G: ModelVector,
    beta_glob: float,
    lr: float,
) -> Tuple[ModelVector, ModelVector]:
    """buf <- beta_glob * buf + G; x <- x_start - lr * buf."""
    dims = {global_buf.dimension, x_round_start.dimension, accumulated_G.dimension}
    if len(dims) != 1:
        raise DimensionMismatchError(f"block momentum inputs have mismatched dimensions {sorted(dims)}")
    buf = beta_glob * global_buf.values + accumulated_G.values
    return ModelVector(buf), ModelVector(x_round_start.values - lr * buf)


def accumulated_update(x_round_start: ModelVector, workers: Sequence[WorkerState], lr: float) -> ModelVector:
    """G_j = mean_i (x_start - x_end^(i)) / lr, i.e. the applied local steps per unit lr."""
    return _mean_vectors([ModelVector((x_round_start.values - w.x.values) / lr) for w in workers])


class PasgdSimulator:
    """Round-by-round PASGD on a virtual cluster with simulated wall clock."""

    def __init__(self, cfg: TrainConfig, obj: BaseObjective, dm: DelayModel):
        n = obj.n_points
        if n is not None and cfg.batch_size > n:
            raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size N={n}")
        self.cfg = cfg
        self.obj = obj
        self.dm = dm
        self.iters_per_epoch = n / (cfg.workers * cfg.batch_size) if n is not None else None
        if cfg.lr_schedule.unit == "epoch" and cfg.lr_schedule.milestones and self.iters_per_epoch is None:
            raise ValueError(f"epoch-based lr decay needs a dataset objective, got {obj.kind}")

        x0 = obj.initial_point()
        zeros = ModelVector.zeros(obj.dimension)
        self.workers: List[WorkerState] = [WorkerState(x0, zeros, i) for i in range(cfg.workers)]
        self.x_bar = x0
        self.global_buf = zeros
        self.lr = cfg.lr_schedule.initial
        self.decays_applied = 0
        self.lr_deferred = False
        self.wall_clock = 0.0
        self.iteration = 0
        self.round = 0

        F0 = obj.evaluate_loss(x0)
        self.trace = RunTrace(initial_loss=F0, initial_grad_norm_sq=obj.grad_norm_sq(x0),
                              tau0=cfg.initial_tau)
        self.controller: Optional[AdaCommController] = None
        if isinstance(cfg.schedule, AdaCommConfig):
            self.controller = AdaCommController(cfg.schedule, F0, self.lr)
            self.trace.events = self.controller.events
        self.tau = cfg.initial_tau
        self._check_lr()

    def _check_lr(self):
        L = self.cfg.lipschitz if self.cfg.lipschitz is not None else self.obj.lipschitz
        if L is None:
            return
        M = getattr(self.obj, "M", 0.0)
        report = validate_lr(self.lr, L, self.tau, M, self.cfg.workers)
        if not report.fixed_ok:
            logger.warning(
                "lr=%.4g violates lr*L + lr^2*L^2*tau*(tau-1) <= 1 (value %.4g, L=%.4g, tau=%d); "
                "bound-based reasoning does not apply, run proceeds",
                self.lr, report.fixed_value, L, self.tau,
            )
        if not report.adaptive_ok:
            logger.warning("lr=%.4g violates the variable-period step-size condition (value %.4g)",
                           self.lr, report.adaptive_value)

    @property
    def finished(self) -> bool:
        cfg = self.cfg
        if self.trace.diverged:
            return True
        if cfg.max_iterations and self.iteration >= cfg.max_iterations:
            return True
        if cfg.max_time and self.wall_clock >= cfg.max_time:
            return True
        return False

    def _diverge(self, reason: str):
        self.trace.diverged = True
        self.trace.divergence_reason = reason
        logger.warning("Run diverged at round %d (t=%.1f): %s", self.round, self.wall_clock, reason)

    def step_round(self) -> Optional[TraceRecord]:
        """Run one local-update period plus averaging; None when the run stops."""
        cfg = self.cfg
        if self.finished:
            return None
        tau = self.tau
        if cfg.max_iterations:
            tau = min(tau, cfg.max_iterations - self.iteration)
        round_time = sample_round_time(self.dm, cfg.workers, tau, delay_rng(cfg.seed, self.round))
        if cfg.max_time and self.wall_clock + round_time > cfg.max_time:
            # next sync would land past the budget
            self.wall_clock = cfg.max_time
            return None

        x_start = self.x_bar
        momentum = cfg.momentum
        if momentum.kind == "block" or (momentum.uses_buffer and momentum.buffer_sync == "clear"):
            zeros = ModelVector.zeros(self.obj.dimension)
            self.workers = [replace(w, buf=zeros) for w in self.workers]

        rngs = [worker_rng(cfg.seed, w.stream_id, self.round) for w in self.workers]
        try:
            for step in range(tau):
                self.workers = [
                    local_step(w, self.obj, self.lr, cfg.batch_size, momentum, rng)
                    for w, rng in zip(self.workers, rngs)
                ]
                if cfg.dense:
                    xbar_k = average_models(self.workers)
                    self.trace.dense.append(
                        (self.iteration + step + 1, self.lr, self.obj.grad_norm_sq(xbar_k))
                    )
            local_loss = None
            if cfg.record_local_loss:
                local_loss = float(np.mean([self.obj.evaluate_loss(w.x) for w in self.workers]))
            if momentum.kind == "block":
                G = accumulated_update(x_start, self.workers, self.lr)
                self.global_buf, self.x_bar = block_momentum_round(
                    self.global_buf, x_start, G, momentum.beta_glob, self.lr)
            else:
                self.x_bar = average_models(self.workers)
        except NonFiniteError as exc:
            self._diverge(f"non-finite model or gradient in round {self.round}: {exc}")
            return None

        if momentum.uses_buffer and momentum.buffer_sync == "average" and momentum.kind == "local":
            avg_buf = _mean_vectors([w.buf for w in self.workers])
            self.workers = [replace(w, x=self.x_bar, buf=avg_buf) for w in self.workers]
        else:
            self.workers = [replace(w, x=self.x_bar) for w in self.workers]

        lr_used = self.lr
        self.wall_clock += round_time
        self.iteration += tau
        self.round += 1
        loss = self.obj.evaluate_loss(self.x_bar)
        gns = self.obj.grad_norm_sq(self.x_bar)
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            self._diverge(f"loss {loss:.4g} exceeds {DIVERGENCE_LOSS:g}")
            return None

        record = TraceRecord(self.wall_clock, self.iteration, self.round, tau, lr_used, loss, gns, local_loss)
        self.trace.records.append(record)
        logger.debug("round %d t=%.2f k=%d tau=%d lr=%.4g loss=%.6g", self.round, self.wall_clock,
                     self.iteration, tau, lr_used, loss)

        checkpoint = False
        if self.controller is not None and self.controller.due(self.wall_clock):
            self.tau = self.controller.checkpoint(self.wall_clock, loss, self.lr).tau_out
            checkpoint = True
        self._apply_lr_decay(checkpoint)
        return record

    def _apply_lr_decay(self, checkpoint: bool):
        """Scheduled decays take effect at sync boundaries; AdaComm may defer them until tau == 1."""
        due = self.cfg.lr_schedule.milestones_passed(self.iteration, self.wall_clock, self.iters_per_epoch)
        pending = due - self.decays_applied
        if pending <= 0:
            return
        ctl = self.controller
        if ctl is None or not ctl.cfg.defer_lr_decay:
            self._decay(pending)
        elif ctl.should_defer_lr_decay(self.tau):
            if not self.lr_deferred:
                logger.info("lr decay deferred at t=%.1f until tau reaches 1 (tau=%d)", self.wall_clock, self.tau)
            self.lr_deferred = True
        elif not self.lr_deferred:
            self._decay(pending)
        elif checkpoint:
            # deferred decays are released one per checkpoint
            self._decay(1)
            self.lr_deferred = pending > 1

    def _decay(self, count: int):
        old = self.lr
        self.lr *= self.cfg.lr_schedule.factor ** count
        self.decays_applied += count
        logger.info("lr decay at t=%.1f k=%d: %.4g -> %.4g", self.wall_clock, self.iteration, old, self.lr)

    def run(self) -> RunTrace:
        logger.info("PASGD start: m=%d tau0=%d lr=%.4g obj=%s T=%s K=%s seed=%d",
                    self.cfg.workers, self.tau, self.lr, self.obj.kind,
                    self.cfg.max_time, self.cfg.max_iterations, self.cfg.seed)
        while self.step_round() is not None:
            pass
        logger.info("PASGD done: %d rounds, k=%d, t=%.1f, final loss=%s%s",
                    self.round, self.iteration, self.wall_clock, self.trace.final_loss,
                    " (diverged)" if self.trace.diverged else "")
        return self.trace


def run_pasgd(cfg: TrainConfig, obj: BaseObjective, dm: DelayModel) -> RunTrace:
    return PasgdSimulator(cfg, obj, dm).run()
