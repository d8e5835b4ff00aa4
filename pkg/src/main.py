"""CLI entrypoint for the AdaComm / PASGD simulator."""
import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .bounds import RateDescriptorError
from .config_loader import ConfigError, SimulationConfig, dump_config, parse_config
from .engine import DivergenceError
from .objectives.base import NonFiniteError

logger = logging.getLogger(__name__)

CONFIG_PATH = Path(__file__).parent.parent / "config.yaml"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INTERNAL = 4

RUNTIME_COLUMNS = ("m", "tau", "alpha", "mean_time", "stderr", "p50", "p99")
CDF_COLUMNS = ("time_per_iteration", "probability")


def load_config(args) -> SimulationConfig:
    cfg = parse_config(Path(args.config) if getattr(args, "config", None) else CONFIG_PATH)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    return cfg


def emit(columns, rows, out, manifest=None):
    """Write a table to --out (plus manifest sidecar) or to stdout."""
    from .publisher import TracePublisher

    rows = list(rows)
    if not out:
        writer = csv.writer(sys.stdout)
        writer.writerow(columns)
        writer.writerows(["" if v is None else v for v in row] for row in rows)
        return
    publisher = TracePublisher(out)
    publisher.write_rows(out, columns, rows)
    if manifest is not None:
        publisher.write_manifest(manifest)


def _manifest(command: str, seed=None, config=None, **summary):
    from .publisher import RunManifest

    return RunManifest(command=command, seed=seed, config=config or {}, summary=summary)


def cmd_simulate(args) -> int:
    from .publisher import TracePublisher
    from .sweep import run_simulation

    cfg = load_config(args)
    trace = run_simulation(cfg)
    out = args.out or cfg.output.trace
    manifest = _manifest("simulate", cfg.seed, dump_config(cfg),
                         rounds=len(trace), final_loss=trace.final_loss,
                         tau0=trace.tau0, diverged=trace.diverged,
                         divergence_reason=trace.divergence_reason)
    if out:
        publisher = TracePublisher(out)
        publisher.write_trace(trace)
        if trace.events:
            events_path = cfg.output.events or str(Path(out).with_suffix(".events.csv"))
            publisher.write_events(trace.events, events_path)
        publisher.write_manifest(manifest, cfg.output.manifest)
    else:
        emit(trace.columns(), trace.rows(), None)
    if trace.diverged:
        logger.error("Run diverged: %s", trace.divergence_reason)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .config_loader import with_sweep
    from .sweep import run_sweep

    cfg = with_sweep(load_config(args), args.axis, args.values)
    out = args.out or cfg.output.trace
    out_dir = Path(out).with_suffix(".runs") if out else None
    result = run_sweep(cfg, out_dir=out_dir)
    emit(result.columns(), result.rows(), out,
         _manifest("sweep", cfg.seed, dump_config(cfg), axis=result.axis,
                   values=list(cfg.sweep.values), runs=len(result.runs),
                   failed=len(result.failures), run_dir=str(out_dir) if out_dir else None))
    if result.failures:
        logger.warning("%d of %d sweep runs failed", len(result.failures), len(result.runs))
    return EXIT_OK


def _delay_models(args):
    """(alpha label, DelayModel) pairs: the config's delay section or Constant Y=1 with D0=alpha."""
    from .delay import ComputeTime, DelayModel

    if args.config:
        cfg = load_config(args)
        return [(None, cfg.delay)]
    return [(alpha, DelayModel(ComputeTime("Constant", 1.0), D0=alpha)) for alpha in args.alpha]


def _runtime_rows(args, with_speedup: bool):
    from .delay import communication_ratio, expected_iteration_time

    for alpha, dm in _delay_models(args):
        for m in args.workers:
            a = alpha if alpha is not None else communication_ratio(dm, m)
            base = expected_iteration_time(dm, m, 1, args.samples, args.seed)
            for tau in args.tau:
                st = expected_iteration_time(dm, m, tau, args.samples, args.seed)
                row = [m, tau, a, st.mean_iteration_time, st.stderr, st.quantile(0.5), st.quantile(0.99)]
                if with_speedup:
                    row.append(base.mean_iteration_time / st.mean_iteration_time)
                yield row


def _runtime_manifest(command: str, args):
    from .config_loader import dump_delay

    config = vars_snapshot(args)
    config["delay_models"] = [dump_delay(dm) for _, dm in _delay_models(args)]
    return _manifest(command, args.seed, config)


def cmd_speedup(args) -> int:
    emit(RUNTIME_COLUMNS + ("speedup",), _runtime_rows(args, True), args.out,
         _runtime_manifest("speedup", args))
    return EXIT_OK


def cmd_runtime(args) -> int:
    from .delay import runtime_tail

    emit(RUNTIME_COLUMNS, _runtime_rows(args, False), args.out, _runtime_manifest("runtime", args))
    if args.cdf:
        from .config_loader import dump_delay
        from .publisher import TracePublisher

        alpha, dm = _delay_models(args)[0]
        m, tau, n_samples = args.workers[0], args.tau[0], max(args.samples, 1000)
        tail = runtime_tail(dm, m, tau, n_samples, args.seed)
        values, probs = tail.points()
        publisher = TracePublisher(args.cdf)
        publisher.write_rows(args.cdf, CDF_COLUMNS, zip(values, probs))
        publisher.write_manifest(_manifest("runtime-cdf", args.seed, {"delay": dump_delay(dm)},
                                           m=m, tau=tau, n_samples=n_samples))
    return EXIT_OK


def bound_params(args):
    """BoundParams from explicit flags, or derived from a run config."""
    from .bounds import BoundParams
    from .delay import comm_delay
    from .objectives import build_objective

    if not args.config:
        try:
            params = BoundParams(F1=args.F1, F_inf=args.F_inf, L=args.L, C=args.C, M=args.M,
                                 m=args.m, Y=args.Y, D=args.D)
        except ValueError as e:
            raise ConfigError(f"bound parameters: {e}") from None
        return params, args.lr
    cfg = load_config(args)
    obj = build_objective(cfg.objective)
    L = cfg.train.lipschitz or obj.lipschitz
    if L is None:
        raise ConfigError(f"objective {obj.kind} has no known Lipschitz constant; set train.lipschitz")
    try:
        params = BoundParams(
            F1=obj.evaluate_loss(obj.initial_point()),
            F_inf=obj.f_inf if obj.f_inf is not None else 0.0,
            L=L,
            C=cfg.objective.C,
            M=cfg.objective.M,
            m=cfg.train.workers,
            Y=cfg.delay.y,
            D=comm_delay(cfg.delay, cfg.train.workers),
            approximate=not cfg.delay.compute.is_deterministic,
        )
    except ValueError as e:
        raise ConfigError(f"bound parameters from {args.config}: {e}") from None
    return params, cfg.train.lr_schedule.initial


def cmd_bound(args) -> int:
    from .bounds import bound_curve, crossover_time

    p, lr = bound_params(args)
    times = [args.t_max * (i + 1) / args.points for i in range(args.points)]
    rows = [[T, tau, value, p.approximate] for T, tau, value in bound_curve(p, lr, args.tau, times)]
    emit(("T", "tau", "bound", "approximate"), rows, args.out,
         _manifest("bound", None, vars_snapshot(args)))
    for a, b in zip(args.tau, args.tau[1:]):
        t = crossover_time(p, lr, a, b)
        if t is not None:
            logger.info("tau=%d and tau=%d bounds cross at T=%.4g", a, b, t)
    return EXIT_OK


def cmd_opt_tau(args) -> int:
    from .adacomm import optimal_tau
    from .bounds import error_runtime_bound

    p, lr = bound_params(args)
    try:
        tau_star = optimal_tau(p.F1, p.F_inf, p.D, lr, p.L, p.C, args.T)
    except ValueError as e:
        # D = 0 or C = 0 leave no finite optimum
        raise ConfigError(f"opt-tau: {e}") from None
    label = " (approximate)" if p.approximate else ""
    print(f"tau* = {tau_star:.6g}{label}")
    for tau in sorted({max(1, math.floor(tau_star)), max(1, math.ceil(tau_star))}):
        print(f"  tau={tau}: bound={error_runtime_bound(p, lr, tau, args.T):.6g}")
    return EXIT_OK


def cmd_check_conditions(args) -> int:
    from .bounds import CONDITION_COLUMNS, check_adaptive_conditions

    if len(args.lr) != len(args.tau):
        raise RateDescriptorError(f"--lr and --tau need the same number of families ({len(args.lr)} vs {len(args.tau)})")
    rows = [check_adaptive_conditions(lr, tau).as_row() for lr, tau in zip(args.lr, args.tau)]
    emit(CONDITION_COLUMNS, rows, args.out, _manifest("check-conditions", None, vars_snapshot(args)))
    return EXIT_OK


def cmd_grid_tau0(args) -> int:
    from .adacomm import grid_search_tau0
    from .objectives import build_objective

    cfg = load_config(args)
    ac = cfg.adacomm
    candidates = args.candidates or (ac.tau0_grid if ac and ac.tau0_grid else (1, 4, 16))
    budget = args.budget or (ac.grid_budget if ac and ac.grid_budget else (ac.T0 if ac else 100.0))
    obj = build_objective(cfg.objective)
    tau0 = grid_search_tau0(candidates, budget, cfg.train, obj, cfg.delay)
    print(f"tau0 = {tau0} (candidates {sorted(candidates)}, budget {budget:g}s)")
    return EXIT_OK


def vars_snapshot(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "handler"}


def _checked(text: str, kind, minimum=None, strict=False):
    try:
        value = kind(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a valid {kind.__name__}: {text!r}") from None
    if minimum is not None and (value <= minimum if strict else value < minimum):
        bound = f"> {minimum}" if strict else f">= {minimum}"
        raise argparse.ArgumentTypeError(f"must be {bound}, got {text!r}")
    return value


def _split(text: str, kind, minimum=None, strict=False):
    values = [_checked(v.strip(), kind, minimum, strict) for v in text.split(",") if v.strip()]
    if not values:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}")
    return values


def _int_list(text: str):
    """Comma-separated counts (workers, periods, candidates), each >= 1."""
    return _split(text, int, 1)


def _float_list(text: str):
    return _split(text, float)


def _ratio_list(text: str):
    return _split(text, float, 0.0)


def _positive_int(text: str) -> int:
    return _checked(text, int, 1)


def _positive_float(text: str) -> float:
    return _checked(text, float, 0.0, strict=True)


def _add_bound_flags(p):
    # defaults: F(x1)=1, F_inf=0, lr=0.08, L=1, C=1, m=16, Y=1, D=1
    p.add_argument("--config", "-c", help="Derive parameters from a run config instead of flags")
    p.add_argument("--F1", type=float, default=1.0)
    p.add_argument("--F-inf", dest="F_inf", type=float, default=0.0)
    p.add_argument("--lr", type=_positive_float, default=0.08)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--M", type=float, default=0.0)
    p.add_argument("--m", type=_positive_int, default=16)
    p.add_argument("--Y", type=float, default=1.0)
    p.add_argument("--D", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="AdaComm simulator - periodic-averaging SGD under simulated compute/communication delays"
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable detailed debug logging")
    subparsers = parser.add_subparsers(dest="command")

    sim = subparsers.add_parser("simulate", help="Run one PASGD / AdaComm simulation")
    sim.add_argument("--config", "-c", help="Run config (YAML or JSON)")
    sim.add_argument("--out", "-o", help="Trace CSV path (stdout if omitted)")
    sim.add_argument("--seed", type=int, help="Override the config seed")
    sim.set_defaults(handler=cmd_simulate)

    sw = subparsers.add_parser("sweep", help="Run one simulation per value of a config field")
    sw.add_argument("--config", "-c", help="Run config with a sweep section")
    sw.add_argument("--out", "-o", help="Summary CSV path; per-run traces go to <out>.runs/")
    sw.add_argument("--seed", type=int, help="Override the base seed")
    sw.add_argument("--axis", help="Dotted config field, e.g. train.tau")
    sw.add_argument("--values", type=_float_list, help="Comma-separated values")
    sw.set_defaults(handler=cmd_sweep)

    for name, handler, help_text in (
        ("speedup", cmd_speedup, "Expected runtime per iteration and speedup over tau=1"),
        ("runtime", cmd_runtime, "Monte-Carlo runtime per iteration"),
    ):
        p = subparsers.add_parser(name, help=help_text)
        p.add_argument("--config", "-c", help="Take the delay model from a run config")
        p.add_argument("--alpha", type=_ratio_list, default=[0.9], help="D/Y ratios (Constant Y=1)")
        p.add_argument("--workers", "-m", type=_int_list, default=[16])
        p.add_argument("--tau", type=_int_list, default=[1, 2, 5, 10, 100])
        p.add_argument("--samples", type=_positive_int, default=100_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", "-o")
        if name == "runtime":
            p.add_argument("--cdf", help="Also write the empirical CDF for the first (m, tau)")
        p.set_defaults(handler=handler)

    bd = subparsers.add_parser("bound", help="Error-runtime bound vs wall-clock for a list of tau")
    _add_bound_flags(bd)
    bd.add_argument("--tau", type=_int_list, default=[1, 10])
    bd.add_argument("--t-max", dest="t_max", type=_positive_float, default=2000.0)
    bd.add_argument("--points", type=_positive_int, default=200)
    bd.add_argument("--out", "-o")
    bd.set_defaults(handler=cmd_bound)

    ot = subparsers.add_parser("opt-tau", help="Bound-minimizing tau at wall-clock T")
    _add_bound_flags(ot)
    ot.add_argument("--T", type=_positive_float, default=1000.0)
    ot.set_defaults(handler=cmd_opt_tau)

    cc = subparsers.add_parser("check-conditions", help="Convergence conditions for lr/tau families")
    cc.add_argument("--lr", nargs="+", default=["power:a=0.1,p=1", "constant:a=0.1"])
    cc.add_argument("--tau", nargs="+", default=["bounded:b=16", "constant:a=4"])
    cc.add_argument("--out", "-o")
    cc.set_defaults(handler=cmd_check_conditions)

    gt = subparsers.add_parser("grid-tau0", help="Grid-search the initial communication period")
    gt.add_argument("--config", "-c")
    gt.add_argument("--seed", type=int)
    gt.add_argument("--candidates", type=_int_list)
    gt.add_argument("--budget", type=_positive_float, help="Simulated seconds per candidate")
    gt.set_defaults(handler=cmd_grid_tau0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    # Configure logging
    log_level = logging.DEBUG if getattr(args, "verbose", False) else logging.INFO
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )

    if not getattr(args, "handler", None):
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.handler(args)
    except (DivergenceError, NonFiniteError) as e:
        logger.error("Run diverged: %s", e)
        return EXIT_DIVERGED
    except (ConfigError, RateDescriptorError) as e:
        logger.error("Invalid input: %s", e)
        return EXIT_CONFIG
    except Exception as e:
        logger.error("Internal error: %s", e)
        logger.debug("Traceback", exc_info=True)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
