"""Run orchestration: single simulations and concurrent parameter sweeps."""
import asyncio
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, List, Optional, Sequence

from .adacomm import grid_search_tau0
from .config_loader import ConfigError, SimulationConfig, dump_config, with_value
from .engine import RunTrace, run_pasgd
from .objectives import build_objective

logger = logging.getLogger(__name__)


def resolve_tau0(cfg: SimulationConfig, obj=None) -> SimulationConfig:
    """Replace adacomm.tau0 by the grid-search winner when a tau0_grid is configured."""
    ac = cfg.adacomm
    if ac is None or not ac.tau0_grid:
        return cfg
    obj = obj if obj is not None else build_objective(cfg.objective)
    budget = ac.grid_budget if ac.grid_budget is not None else ac.T0
    tau0 = grid_search_tau0(ac.tau0_grid, budget, cfg.train, obj, cfg.delay)
    ac = replace(ac, tau0=tau0, tau_max=max(ac.tau_max, tau0))
    return replace(cfg, adacomm=ac, train=replace(cfg.train, schedule=ac))


def run_simulation(cfg: SimulationConfig) -> RunTrace:
    """Build the objective, pick tau0 if needed, and run PASGD to completion."""
    obj = build_objective(cfg.objective)
    cfg = resolve_tau0(cfg, obj)
    return run_pasgd(cfg.train, obj, cfg.delay)


SUMMARY_FIXED = ("value", "seed", "final_loss")
SUMMARY_TAIL = ("diverged", "error")


@dataclass
class SweepRun:
    value: Any
    seed: int
    trace: Optional[RunTrace] = None
    error: str = ""
    trace_path: Optional[Path] = None

    def row(self, targets: Sequence[float]) -> list:
        trace = self.trace
        final = trace.final_loss if trace is not None else None
        # unreached targets stay empty in the CSV
        reached = [trace.time_to_target(t) if trace is not None else None for t in targets]
        diverged = trace.diverged if trace is not None else False
        return [self.value, self.seed, final, *reached, diverged, self.error]


@dataclass
class SweepResult:
    axis: str
    targets: Sequence[float]
    runs: List[SweepRun] = field(default_factory=list)

    def columns(self) -> tuple:
        return SUMMARY_FIXED + tuple(f"time_to_{t:g}" for t in self.targets) + SUMMARY_TAIL

    def rows(self) -> List[list]:
        return [r.row(self.targets) for r in self.runs]

    @property
    def failures(self) -> List[SweepRun]:
        return [r for r in self.runs if r.error]


def _child_seed(base_seed: int, index: int, seed_policy: str) -> int:
    if seed_policy == "same":
        return base_seed
    if seed_policy == "per_run":
        return base_seed + index
    raise ValueError(f"unknown seed_policy {seed_policy!r} (expected 'same' or 'per_run')")


async def run_sweep_async(
    base: SimulationConfig,
    axis: str,
    values: Sequence[Any],
    seed_policy: str = "same",
    targets: Sequence[float] = (),
    max_concurrency: int = 4,
    out_dir: Optional[Path] = None,
) -> SweepResult:
    """One child run per value, at most max_concurrency at a time; failures are recorded."""
    from .publisher import RunManifest, TracePublisher

    if not values:
        raise ValueError("sweep needs at least one value")
    semaphore = asyncio.Semaphore(max_concurrency)

    async def child(index: int, value: Any) -> SweepRun:
        seed = _child_seed(base.seed, index, seed_policy)
        run = SweepRun(value, seed)
        async with semaphore:
            try:
                cfg = with_value(base, axis, value, seed=seed)
                run.trace = await asyncio.to_thread(run_simulation, cfg)
                if out_dir is not None:
                    # manifest config is the complete single-run config for this child
                    publisher = TracePublisher(Path(out_dir) / f"run{index:03d}.csv")
                    run.trace_path = publisher.write_trace(run.trace)
                    publisher.write_manifest(RunManifest(
                        "simulate", seed, dump_config(cfg),
                        summary={"sweep_axis": axis, "sweep_value": value, "sweep_index": index,
                                 "final_loss": run.trace.final_loss, "diverged": run.trace.diverged},
                    ))
            except Exception as e:
                logger.warning("Sweep %s=%r failed: %s", axis, value, e)
                run.error = f"{type(e).__name__}: {e}"
        logger.info("Sweep %s=%r done: final loss=%s", axis, value,
                    run.trace.final_loss if run.trace else None)
        return run

    runs = await asyncio.gather(*(child(i, v) for i, v in enumerate(values)))
    result = SweepResult(axis, tuple(targets), list(runs))
    logger.info("Sweep over %s: %d runs, %d failed", axis, len(runs), len(result.failures))
    return result


def run_sweep(
    base: SimulationConfig,
    axis: Optional[str] = None,
    values: Optional[Sequence[Any]] = None,
    seed_policy: Optional[str] = None,
    targets: Optional[Sequence[float]] = None,
    max_concurrency: Optional[int] = None,
    out_dir: Optional[Path] = None,
) -> SweepResult:
    """Blocking sweep; unspecified arguments come from the config's sweep section."""
    sw = base.sweep
    if sw is None and (axis is None or values is None):
        raise ConfigError("sweep: no axis/values given and the config has no sweep section")
    return asyncio.run(run_sweep_async(
        base,
        axis if axis is not None else sw.axis,
        values if values is not None else sw.values,
        seed_policy if seed_policy is not None else (sw.seed_policy if sw else "same"),
        targets if targets is not None else (sw.targets if sw else ()),
        max_concurrency if max_concurrency is not None else (sw.max_concurrency if sw else 4),
        out_dir,
    ))
