"""Configuration loader: YAML/JSON run configs into validated dataclasses.

JSON is a subset of YAML, so one ``yaml.safe_load`` path reads both formats.
Unknown keys are rejected with their dotted path.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from .adacomm import AdaCommConfig
from .delay import ComputeTime, DelayModel
from .engine import FixedPeriod, LrSchedule, Momentum, TrainConfig
from .objectives import BUILTIN_OBJECTIVES, DATASET_KINDS, ObjectiveSpec

logger = logging.getLogger(__name__)

SEED_POLICIES = ("same", "per_run")


class ConfigError(ValueError):
    """Schema or invariant violation, with the offending field path."""


@dataclass(frozen=True)
class OutputConfig:
    trace: Optional[str] = None
    events: Optional[str] = None
    manifest: Optional[str] = None


@dataclass(frozen=True)
class SweepConfig:
    axis: str
    values: Tuple[Any, ...]
    seed_policy: str = "same"
    targets: Tuple[float, ...] = ()
    max_concurrency: int = 4


@dataclass(frozen=True)
class SimulationConfig:
    objective: ObjectiveSpec
    delay: DelayModel
    train: TrainConfig
    adacomm: Optional[AdaCommConfig] = None
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: Optional[SweepConfig] = None

    @property
    def seed(self) -> int:
        return self.train.seed


_TOP_KEYS = {"seed", "objective", "delay", "train", "adacomm", "output", "sweep"}
_OBJECTIVE_KEYS = {"kind", "dimension", "noise", "data_seed", "n_points", "init_scale", "hidden"}
_NOISE_KEYS = {"M", "C"}
_DELAY_KEYS = {"compute", "D0", "scaling"}
_COMPUTE_KEYS = {"kind", "mean", "shift"}
_SCALING_KEYS = {"kind", "table"}
_TRAIN_KEYS = {"workers", "batch_size", "lr", "lr_decay", "momentum", "tau", "max_time",
               "max_iterations", "lipschitz", "record_local_loss", "dense"}
_LR_DECAY_KEYS = {"unit", "milestones", "factor"}
_MOMENTUM_KEYS = {"kind", "beta_loc", "beta_glob", "buffer_sync"}
_ADACOMM_KEYS = {"T0", "tau0", "tau0_grid", "grid_budget", "gamma", "slack", "mode",
                 "defer_lr_decay", "tau_max"}
_OUTPUT_KEYS = {"trace", "events", "manifest"}
_SWEEP_KEYS = {"axis", "values", "seed_policy", "targets", "max_concurrency"}


def load_config(config_path: Path) -> dict:
    """Read a YAML or JSON config file into a plain dict."""
    config_path = Path(config_path)
    if not config_path.exists():
        raise ConfigError(f"Config file not found: {config_path}")
    with open(config_path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{config_path}: not valid YAML/JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{config_path}: top level must be a mapping")
    return data


def _section(data: Any, allowed: set, path: str) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")
    return data


def _require(section: dict, key: str, path: str):
    if key not in section or section[key] is None:
        raise ConfigError(f"{path}.{key}: required field missing")
    return section[key]


def _build(path: str, factory, **kwargs):
    """Construct a dataclass, turning its invariant errors into ConfigError."""
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def _number(value, path: str, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if kind is int and float(value) != int(value):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return kind(value)


def _opt_number(value, path: str, kind=float):
    return None if value is None else _number(value, path, kind)


def _parse_objective(data: Any) -> ObjectiveSpec:
    sec = _section(data, _OBJECTIVE_KEYS, "objective")
    kind = _require(sec, "kind", "objective")
    if kind not in BUILTIN_OBJECTIVES:
        raise ConfigError(f"objective.kind: unknown kind {kind!r}; available: {list(BUILTIN_OBJECTIVES)}")
    noise = _section(sec.get("noise"), _NOISE_KEYS, "objective.noise")
    dimension = _number(_require(sec, "dimension", "objective"), "objective.dimension", int)
    if dimension < 1:
        raise ConfigError("objective.dimension: must be a positive integer")
    n_points = _opt_number(sec.get("n_points"), "objective.n_points", int)
    if kind in DATASET_KINDS and n_points is None:
        n_points = 100
    if n_points is not None and n_points < 1:
        raise ConfigError("objective.n_points: must be a positive integer")
    M = _number(noise.get("M", 0.0), "objective.noise.M")
    C = _number(noise.get("C", 1.0), "objective.noise.C")
    if M < 0 or C < 0:
        raise ConfigError("objective.noise: M and C must be >= 0")
    hidden = _number(sec.get("hidden", 8), "objective.hidden", int)
    if not 1 <= hidden <= 32:
        raise ConfigError("objective.hidden: must be in [1, 32]")
    return ObjectiveSpec(
        kind=kind,
        dimension=dimension,
        M=M,
        C=C,
        data_seed=_number(sec.get("data_seed", 0), "objective.data_seed", int),
        n_points=n_points,
        init_scale=_number(sec.get("init_scale", 1.0), "objective.init_scale"),
        hidden=hidden,
    )


def _parse_delay(data: Any) -> DelayModel:
    sec = _section(data, _DELAY_KEYS, "delay")
    comp = _section(sec.get("compute"), _COMPUTE_KEYS, "delay.compute")
    compute = _build(
        "delay.compute", ComputeTime,
        kind=comp.get("kind", "Constant"),
        mean=_number(comp.get("mean", 1.0), "delay.compute.mean"),
        shift=_number(comp.get("shift", 0.0), "delay.compute.shift"),
    )
    scaling = sec.get("scaling", {"kind": "Constant"})
    if isinstance(scaling, str):
        scaling = {"kind": scaling}
    scaling = _section(scaling, _SCALING_KEYS, "delay.scaling")
    table = {}
    for m, s in (scaling.get("table") or {}).items():
        try:
            table[int(m)] = _number(s, f"delay.scaling.table.{m}")
        except ValueError:
            raise ConfigError(f"delay.scaling.table: worker count {m!r} is not an integer") from None
    return _build(
        "delay", DelayModel,
        compute=compute,
        D0=_number(sec.get("D0", 1.0), "delay.D0"),
        scaling=scaling.get("kind", "Constant"),
        table=table,
    )


def _parse_adacomm(data: Any) -> Optional[AdaCommConfig]:
    if data is None:
        return None
    sec = _section(data, _ADACOMM_KEYS, "adacomm")
    grid = tuple(_number(v, "adacomm.tau0_grid", int) for v in (sec.get("tau0_grid") or ()))
    return _build(
        "adacomm", AdaCommConfig,
        T0=_number(_require(sec, "T0", "adacomm"), "adacomm.T0"),
        tau0=_number(sec.get("tau0", max(grid) if grid else 1), "adacomm.tau0", int),
        gamma=_number(sec.get("gamma", 0.5), "adacomm.gamma"),
        slack=_number(sec.get("slack", 0), "adacomm.slack", int),
        mode=sec.get("mode", "LrCoupledApprox"),
        defer_lr_decay=bool(sec.get("defer_lr_decay", True)),
        tau_max=_number(sec.get("tau_max", 100), "adacomm.tau_max", int),
        tau0_grid=grid,
        grid_budget=_opt_number(sec.get("grid_budget"), "adacomm.grid_budget"),
    )


def _parse_train(data: Any, seed: int, adacomm: Optional[AdaCommConfig]) -> TrainConfig:
    sec = _section(data, _TRAIN_KEYS, "train")
    decay = _section(sec.get("lr_decay"), _LR_DECAY_KEYS, "train.lr_decay")
    lr_schedule = _build(
        "train.lr_decay", LrSchedule,
        initial=_number(_require(sec, "lr", "train"), "train.lr"),
        milestones=tuple(_number(v, "train.lr_decay.milestones") for v in (decay.get("milestones") or ())),
        unit=decay.get("unit", "epoch"),
        factor=_number(decay.get("factor", 0.1), "train.lr_decay.factor"),
    )
    mom = _section(sec.get("momentum"), _MOMENTUM_KEYS, "train.momentum")
    momentum = _build(
        "train.momentum", Momentum,
        kind=mom.get("kind", "none"),
        beta_loc=_number(mom.get("beta_loc", 0.0), "train.momentum.beta_loc"),
        beta_glob=_number(mom.get("beta_glob", 0.0), "train.momentum.beta_glob"),
        buffer_sync=mom.get("buffer_sync", "clear"),
    )
    tau = _number(sec.get("tau", 1), "train.tau", int)
    schedule = adacomm if adacomm is not None else _build("train.tau", FixedPeriod, tau=tau)
    return _build(
        "train", TrainConfig,
        workers=_number(_require(sec, "workers", "train"), "train.workers", int),
        batch_size=_number(sec.get("batch_size", 1), "train.batch_size", int),
        lr_schedule=lr_schedule,
        schedule=schedule,
        momentum=momentum,
        max_time=_opt_number(sec.get("max_time"), "train.max_time"),
        max_iterations=_opt_number(sec.get("max_iterations"), "train.max_iterations", int),
        seed=seed,
        lipschitz=_opt_number(sec.get("lipschitz"), "train.lipschitz"),
        record_local_loss=bool(sec.get("record_local_loss", False)),
        dense=bool(sec.get("dense", False)),
    )


def _parse_sweep(data: Any) -> Optional[SweepConfig]:
    if data is None:
        return None
    sec = _section(data, _SWEEP_KEYS, "sweep")
    values = _require(sec, "values", "sweep")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep.values: expected a nonempty list")
    policy = sec.get("seed_policy", "same")
    if policy not in SEED_POLICIES:
        raise ConfigError(f"sweep.seed_policy: must be one of {SEED_POLICIES}, got {policy!r}")
    concurrency = _number(sec.get("max_concurrency", 4), "sweep.max_concurrency", int)
    if concurrency < 1:
        raise ConfigError("sweep.max_concurrency: must be >= 1")
    return SweepConfig(
        axis=_require(sec, "axis", "sweep"),
        values=tuple(values),
        seed_policy=policy,
        targets=tuple(_number(t, "sweep.targets") for t in (sec.get("targets") or ())),
        max_concurrency=concurrency,
    )


def parse_config_dict(data: dict) -> SimulationConfig:
    """Validate a config mapping; all cross-field invariants are checked here."""
    top = _section(data, _TOP_KEYS, "config")
    seed = _number(top.get("seed", 0), "seed", int)
    objective = _parse_objective(_require(top, "objective", "config"))
    delay = _parse_delay(top.get("delay"))
    adacomm = _parse_adacomm(top.get("adacomm"))
    train = _parse_train(_require(top, "train", "config"), seed, adacomm)
    if objective.kind in DATASET_KINDS and train.batch_size > objective.n_points:
        raise ConfigError(
            f"train.batch_size: {train.batch_size} exceeds objective.n_points={objective.n_points}"
        )
    if (train.lr_schedule.unit == "epoch" and train.lr_schedule.milestones
            and objective.kind not in DATASET_KINDS):
        raise ConfigError("train.lr_decay.unit: 'epoch' needs a dataset objective (Logistic or TinyMLP)")
    output = OutputConfig(**_section(top.get("output"), _OUTPUT_KEYS, "output"))
    sweep = _parse_sweep(top.get("sweep"))
    cfg = SimulationConfig(objective, delay, train, adacomm, output, sweep)
    if sweep is not None:
        check_axis(cfg, sweep.axis)
    return cfg


def parse_config(path) -> SimulationConfig:
    """Load and validate a run config file."""
    cfg = parse_config_dict(load_config(Path(path)))
    logger.debug("Config loaded from %s: objective=%s, workers=%d, seed=%d",
                 path, cfg.objective.kind, cfg.train.workers, cfg.seed)
    return cfg


def parse_delay(data: Any) -> DelayModel:
    """Validate a standalone delay section (as stored in runtime manifests)."""
    return _parse_delay(data)


def dump_delay(dm: DelayModel) -> dict:
    return {
        "compute": {"kind": dm.compute.kind, "mean": dm.compute.mean, "shift": dm.compute.shift},
        "D0": dm.D0,
        "scaling": {"kind": dm.scaling, "table": {int(m): s for m, s in dm.table.items()}},
    }


def dump_config(cfg: SimulationConfig) -> dict:
    """Plain-dict form of a config; parse_config_dict(dump_config(c)) == c."""
    obj = cfg.objective
    dm = cfg.delay
    train = cfg.train
    out: Dict[str, Any] = {
        "seed": cfg.seed,
        "objective": {
            "kind": obj.kind, "dimension": obj.dimension,
            "noise": {"M": obj.M, "C": obj.C},
            "data_seed": obj.data_seed, "n_points": obj.n_points,
            "init_scale": obj.init_scale, "hidden": obj.hidden,
        },
        "delay": dump_delay(dm),
        "train": {
            "workers": train.workers,
            "batch_size": train.batch_size,
            "lr": train.lr_schedule.initial,
            "lr_decay": {
                "unit": train.lr_schedule.unit,
                "milestones": list(train.lr_schedule.milestones),
                "factor": train.lr_schedule.factor,
            },
            "momentum": {
                "kind": train.momentum.kind, "beta_loc": train.momentum.beta_loc,
                "beta_glob": train.momentum.beta_glob, "buffer_sync": train.momentum.buffer_sync,
            },
            "tau": train.schedule.tau if isinstance(train.schedule, FixedPeriod) else 1,
            "max_time": train.max_time,
            "max_iterations": train.max_iterations,
            "lipschitz": train.lipschitz,
            "record_local_loss": train.record_local_loss,
            "dense": train.dense,
        },
        "output": {"trace": cfg.output.trace, "events": cfg.output.events, "manifest": cfg.output.manifest},
    }
    if cfg.adacomm is not None:
        ac = cfg.adacomm
        out["adacomm"] = {
            "T0": ac.T0, "tau0": ac.tau0, "tau0_grid": list(ac.tau0_grid), "grid_budget": ac.grid_budget,
            "gamma": ac.gamma, "slack": ac.slack, "mode": ac.mode,
            "defer_lr_decay": ac.defer_lr_decay, "tau_max": ac.tau_max,
        }
    if cfg.sweep is not None:
        sw = cfg.sweep
        out["sweep"] = {
            "axis": sw.axis, "values": list(sw.values), "seed_policy": sw.seed_policy,
            "targets": list(sw.targets), "max_concurrency": sw.max_concurrency,
        }
    return out


def check_axis(cfg: SimulationConfig, axis: str):
    """Raise ConfigError unless axis is a dotted path to a scalar config field."""
    data = dump_config(cfg)
    if axis.startswith("adacomm.") and "adacomm" not in data:
        raise ConfigError(f"sweep.axis: {axis!r} needs an adacomm section")
    node: Any = data
    parts = axis.split(".")
    for part in parts:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"sweep.axis: {axis!r} is not a config field")
        node = node[part]
    if isinstance(node, dict):
        raise ConfigError(f"sweep.axis: {axis!r} names a section, not a field")
    if parts[0] == "sweep":
        raise ConfigError("sweep.axis: cannot sweep over the sweep section itself")


def with_sweep(cfg: SimulationConfig, axis: Optional[str] = None, values=None) -> SimulationConfig:
    """Copy of cfg whose sweep section carries the given axis/values overrides."""
    if axis is None and values is None:
        return cfg
    data = dump_config(cfg)
    sweep = data.get("sweep", {})
    if axis is not None:
        sweep["axis"] = axis
    if values is not None:
        sweep["values"] = list(values)
    data["sweep"] = sweep
    return parse_config_dict(data)


def with_value(cfg: SimulationConfig, axis: str, value: Any, seed: Optional[int] = None) -> SimulationConfig:
    """Copy of cfg with the dotted field ``axis`` set to value (re-validated)."""
    check_axis(cfg, axis)
    data = dump_config(cfg)
    node = data
    parts = axis.split(".")
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value
    if seed is not None:
        data["seed"] = seed
    data.pop("sweep", None)
    return parse_config_dict(data)
