"""Command-line entry points.

Subcommands: ``gen-traces``, ``calibrate``, ``train``, ``eval``,
``compare``.  Exit codes: 0 on success (a simulated node dying is a result,
not a failure), 1 on usage or configuration errors, 2 when a calibration is
infeasible.  Every run echoes its resolved configuration and a metadata
file (timestamps live there, keeping the reports byte-reproducible).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, experiments
from .agent import GreedyTablePolicy, QTable, train_day_by_day, train_one_time, transfer_init
from .energy import CalibrationError, NodeEnergyConfig
from .experiments import ExperimentConfig, default_output_root
from .metrics import write_report_rows
from .traces import ARCHETYPES, gen_events, gen_synthetic, get_archetype, save_events, save_trace
from .env import SLOT_SECONDS, rollout

USAGE_ERROR = 1
CALIBRATION_ERROR = 2


def _write_metadata(out: Path, command: str, args_dict: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "command": command,
        "arguments": {k: str(v) for k, v in args_dict.items() if v is not None},
        "completed_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_ini(args.config) if getattr(args, "config", None) else ExperimentConfig()
    # command-line flags override the file
    for attr, key in (
        ("trace", "trace_file"), ("archetype", "archetype"), ("days", "days"),
        ("trace_seed", "trace_seed"), ("strategy", "strategy"), ("policy", "policy"),
        ("mode", "mode"), ("features", "features"), ("actions", "actions"),
        ("seed", "seed"), ("eval_days", "eval_days"), ("donor", "donor"), ("out", "out"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "energy", None):
        for item in args.energy:
            key, _, value = item.partition("=")
            if not value:
                raise ValueError(f"--energy expects key=value, got {item!r}")
            cfg.energy_overrides[key.strip()] = value.strip()
    if getattr(args, "agent", None):
        for item in args.agent:
            key, _, value = item.partition("=")
            if not value:
                raise ValueError(f"--agent expects key=value, got {item!r}")
            cfg.agent_overrides[key.strip()] = value.strip()
    cfg.validate()
    return cfg


def _resolve_out(args, default_name: str) -> Path:
    out = getattr(args, "out", None)
    if out:
        return Path(out)
    return default_output_root() / default_name


def cmd_gen_traces(args) -> int:
    out = _resolve_out(args, "traces")
    names = list(ARCHETYPES) if args.archetype in (None, "all") else [get_archetype(args.archetype).name]
    out.mkdir(parents=True, exist_ok=True)
    for name in names:
        trace = gen_synthetic(get_archetype(name), args.days, args.seed, step=args.step)
        path = out / f"{name.lower()}_{args.days}d_seed{args.seed}.csv"
        save_trace(trace, path)
        print(f"wrote {path} ({trace.n_samples} rows, mean {trace.mean_lux():.0f} lux)")
        if args.events:
            events = gen_events(args.days, args.weekday_events, args.weekend_events,
                                seed=args.seed + 1)
            epath = out / f"{name.lower()}_{args.days}d_seed{args.seed}_events.csv"
            save_events(events, epath)
            print(f"wrote {epath} ({events.n_events} events)")
    _write_metadata(out, "gen-traces", vars(args))
    return 0


def cmd_calibrate(args) -> int:
    out = _resolve_out(args, "calibration")
    targets = None
    if args.targets:
        targets = []
        for item in args.targets:
            period, _, lifetime = item.partition(":")
            targets.append((float(period), float(lifetime)))
    try:
        report = experiments.run_calibration(event_mode=args.pir, capacitance=args.capacitance,
                                             targets=targets)
    except CalibrationError as exc:
        print(f"calibration infeasible: {exc}", file=sys.stderr)
        return CALIBRATION_ERROR
    out.mkdir(parents=True, exist_ok=True)
    (out / "calibration.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    base = NodeEnergyConfig.event_mode() if args.pir else NodeEnergyConfig()
    if args.capacitance is not None:
        base = base.replace(capacitance=args.capacitance)
    experiments.write_energy_ini(base.replace(t_active=report["t_active_s"]), out / "energy.ini")
    print(f"t_active = {report['t_active_s']:.2f} s "
          f"(worst lifetime error {report['max_relative_error']:.1%})")
    for row in report["targets"]:
        print(f"  period {row['sensing_period_s']:7.1f} s: "
              f"{row['simulated_lifetime_s'] / 3600:8.2f} h simulated vs "
              f"{row['target_lifetime_s'] / 3600:8.2f} h target "
              f"({row['relative_error']:.1%})")
    _write_metadata(out, "calibrate", vars(args))
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _resolve_out(args, f"train_{cfg.strategy}")
    out.mkdir(parents=True, exist_ok=True)
    cfg.out = str(out)
    cfg.save(out / "effective_config.ini")
    agent_cfg = cfg.agent_config()

    if cfg.strategy == "one_time":
        trace = cfg.resolve_trace()
        env = cfg.build_env(trace=trace)
        q, run = train_one_time(env, agent_cfg, cfg.seed)
        experiments.save_training_outputs(out, q, run)
        print(f"trained {run.episodes} episodes "
              f"({'converged' if run.converged else 'episode cap reached'}, "
              f"{run.elapsed:.1f} s)")
    else:
        initial = None
        if cfg.donor is not None:
            initial = QTable.load(cfg.donor)
        elif cfg.strategy == "transfer":
            print("transfer strategy needs --donor (a Q-table file)", file=sys.stderr)
            return USAGE_ERROR
        trace = cfg.resolve_trace()
        result = train_day_by_day(
            trace, agent_config=agent_cfg, seed=cfg.seed,
            energy=cfg.energy_config(), features=cfg.feature_set(),
            actions=cfg.action_set(), reward=cfg.reward_config(),
            mode=cfg.mode, events=cfg.resolve_events(), initial=initial,
        )
        for day, table in enumerate(result.tables):
            if table is not None:
                table.save(out / f"day{day:02d}.qtable")
        if result.tables[-1] is not None:
            experiments.save_training_outputs(out, result.tables[-1],
                                              result.training_runs[-1], name="qtable_final")
        result.deployment_log.write_csv(out / "deployment_log.csv")
        print(f"day-by-day over {len(result.logs)} days; "
              f"{sum(r.converged for r in result.training_runs)} nightly runs converged")
    _write_metadata(out, "train", vars(args))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _resolve_out(args, f"eval_{cfg.policy}")
    out.mkdir(parents=True, exist_ok=True)
    cfg.out = str(out)
    cfg.save(out / "effective_config.ini")
    rng = np.random.default_rng(cfg.seed)

    if args.qtable is not None:
        if not Path(args.qtable).exists():
            print(f"Q-table not found: {args.qtable}", file=sys.stderr)
            return USAGE_ERROR
        q = QTable.load(args.qtable)
        policy = GreedyTablePolicy(q, rng, epsilon=args.epsilon)
    elif cfg.policy == "fixed":
        policy = baselines.fixed_policy(args.period, cfg.action_set())
    elif cfg.policy == "mote_local":
        policy = baselines.mote_local_policy(cfg.action_set())
    else:
        print("eval needs --qtable for learned policies (aces/sc_only/...)", file=sys.stderr)
        return USAGE_ERROR

    trace = cfg.resolve_trace()
    n_days = cfg.eval_days if cfg.eval_days is not None else None
    log, report, detected = experiments.evaluate_policy(cfg, policy, trace=trace,
                                                        start_day=args.start_day,
                                                        n_days=n_days)
    log.write_csv(out / "episode_log.csv")
    report.to_json(out / "report.json")
    write_report_rows([{"policy": cfg.policy, **report.to_dict(),
                        "energy_neutrality": ""}], out / "report_row.csv")
    if detected.size:
        from .traces import EventTrace
        save_events(EventTrace(times=detected, horizon=trace.n_days * 86400.0),
                    out / "detected_events.csv")
    print(f"duty-cycle period {report.avg_duty_cycle_period:.1f} s, "
          f"dead time {report.dead_time_fraction:.2%}, deaths {report.deaths}")
    _write_metadata(out, "eval", vars(args))
    return 0


def cmd_compare(args) -> int:
    out = _resolve_out(args, f"compare_{args.suite}")
    out.mkdir(parents=True, exist_ok=True)
    agent_overrides = {}
    if args.episode_cap is not None:
        agent_overrides["episode_cap"] = args.episode_cap
    from .agent import AgentConfig

    agent_cfg = AgentConfig(**agent_overrides) if agent_overrides else None
    if args.suite == "table12":
        rows = experiments.run_suite_table12(trace_seed=args.trace_seed, seed=args.seed,
                                             agent_config=agent_cfg, workers=args.workers)
    elif args.suite == "table5":
        rows = experiments.run_suite_table5(trace_seed=args.trace_seed, seed=args.seed,
                                            agent_config=agent_cfg, workers=args.workers)
    elif args.suite == "table6":
        rows = experiments.run_suite_table6(trace_seed=args.trace_seed, seed=args.seed,
                                            agent_config=agent_cfg, workers=args.workers)
    else:
        print(f"unknown suite {args.suite!r}", file=sys.stderr)
        return USAGE_ERROR
    write_report_rows(rows, out / f"{args.suite}.csv")
    experiments.write_rows_json(rows, out / f"{args.suite}.json")
    print(f"wrote {len(rows)} rows to {out / (args.suite + '.csv')}")
    _write_metadata(out, "compare", vars(args))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harvestrl",
        description="Simulation lab for RL-configured solar-harvesting sensor nodes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-traces", help="synthesise archetype light traces")
    p.add_argument("--archetype", default="all",
                   help="archetype name or 'all' (conference, stairs, middle, window, door)")
    p.add_argument("--days", type=int, default=15)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--step", type=float, default=SLOT_SECONDS,
                   help="output sampling step in seconds (default 900)")
    p.add_argument("--events", action="store_true", help="also write a motion-event CSV")
    p.add_argument("--weekday-events", type=float, default=50.0)
    p.add_argument("--weekend-events", type=float, default=20.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_traces)

    p = sub.add_parser("calibrate", help="fit the active time against lifetime benchmarks")
    p.add_argument("--pir", action="store_true", help="event-mode benchmarks (PIR armed, 1.5 F)")
    p.add_argument("--capacitance", type=float, default=None)
    p.add_argument("--targets", nargs="*", metavar="PERIOD:LIFETIME",
                   help="override benchmarks, seconds (e.g. 15:32400)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    def add_run_flags(p):
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--trace", help="light trace CSV")
        p.add_argument("--archetype")
        p.add_argument("--days", type=int)
        p.add_argument("--trace-seed", type=int, dest="trace_seed")
        p.add_argument("--mode", choices=("periodic", "event"))
        p.add_argument("--features", help="comma list from sc,light,week,time")
        p.add_argument("--actions", help="comma list of sleep times in seconds")
        p.add_argument("--seed", type=int)
        p.add_argument("--energy", nargs="*", metavar="KEY=VALUE")
        p.add_argument("--agent", nargs="*", metavar="KEY=VALUE")
        p.add_argument("--out")

    p = sub.add_parser("train", help="train a policy (one_time, day_by_day, transfer)")
    add_run_flags(p)
    p.add_argument("--strategy", choices=experiments.STRATEGIES)
    p.add_argument("--donor", help="initial Q-table for the transfer strategy")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy or Q-table over a trace")
    add_run_flags(p)
    p.add_argument("--policy", choices=baselines.POLICY_NAMES)
    p.add_argument("--qtable", help="Q-table file to deploy greedily")
    p.add_argument("--epsilon", type=float, default=1.0,
                   help="exploitation probability during deployment (default 1.0)")
    p.add_argument("--period", type=float, default=60.0, help="period for the fixed policy")
    p.add_argument("--start-day", type=int, default=0, dest="start_day")
    p.add_argument("--eval-days", type=int, dest="eval_days")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run a comparison suite (table12, table5, table6)")
    p.add_argument("--suite", required=True, choices=("table12", "table5", "table6"))
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--trace-seed", type=int, default=7, dest="trace_seed")
    p.add_argument("--episode-cap", type=int, dest="episode_cap")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CALIBRATION_ERROR
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
