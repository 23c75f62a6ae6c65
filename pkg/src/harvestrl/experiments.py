"""Experiment orchestration: configs, runs, and comparison sweeps.

A run is fully described by an :class:`ExperimentConfig` (INI file plus
command-line overrides).  Given a config and its seed every run is
deterministic; the resolved effective config is echoed into the output
directory so any result can be reproduced by reloading it.

Comparison suites:

* ``table12`` -- five archetypes x six controllers, average duty-cycle
  period per (archetype, policy) cell.
* ``table5``  -- state-feature ablation (five feature sets, state-space
  sizes 11/22/121/242/5808).
* ``table6``  -- action-ladder ablation (2/4/8 actions, rewards normalised
  to the 0..3 scale).
"""

from __future__ import annotations

import configparser
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import baselines
from .agent import (
    AgentConfig,
    DayByDayResult,
    GreedyTablePolicy,
    QTable,
    TrainingRun,
    train,
    train_day_by_day,
    train_one_time,
    transfer_init,
)
from .energy import (
    EVENT_LIFETIME_TARGETS,
    PERIODIC_LIFETIME_TARGETS,
    CalibrationError,
    NodeEnergyConfig,
    calibrate_active_time,
    simulate_discharge,
)
from .env import (
    DEFAULT_ACTIONS,
    DEFAULT_FEATURES,
    EIGHT_ACTIONS,
    TWO_ACTIONS,
    ActionSet,
    EpisodeLog,
    NodeEnv,
    RewardConfig,
    StateFeatureSet,
    rollout,
)
from .metrics import MetricsReport, report_from_log, reward_curve, write_report_rows, write_series
from .traces import (
    ARCHETYPES,
    EventTrace,
    LightTrace,
    gen_events,
    gen_synthetic,
    get_archetype,
    load_trace,
    save_events,
    save_trace,
)

OUTPUT_ROOT_ENV = "HARVESTRL_OUT"

#: Default stochastic-event rates (events per day, weekdays / weekends).
DEFAULT_WEEKDAY_EVENTS = 50.0
DEFAULT_WEEKEND_EVENTS = 20.0

STRATEGIES = ("one_time", "day_by_day", "transfer")


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def scaled_penalty(actions: ActionSet, steps_per_day: int = 96) -> float:
    """Depletion penalty for a given ladder: -300 keeps the published margin
    over a 4-action day (288); larger ladders scale by the same ratio."""
    bound = steps_per_day * actions.max_index
    if bound <= 300:
        return -300.0
    return -float(round(bound * 300 / 288))


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run."""

    # trace source
    trace_file: str | None = None
    archetype: str | None = None
    days: int = 15
    trace_seed: int = 7
    # node / environment
    energy_overrides: dict = field(default_factory=dict)
    features: str = "sc,light,week"
    actions: str = "900,300,60,15"
    mode: str = "periodic"
    weekday_event_rate: float = DEFAULT_WEEKDAY_EVENTS
    weekend_event_rate: float = DEFAULT_WEEKEND_EVENTS
    # agent
    agent_overrides: dict = field(default_factory=dict)
    # run
    strategy: str = "one_time"
    policy: str = "aces"
    seed: int = 1
    eval_days: int | None = None
    donor: str | None = None
    out: str | None = None

    def validate(self) -> None:
        if self.trace_file is None and self.archetype is None:
            raise ValueError("config needs a trace file or an archetype")
        if self.trace_file is not None and not Path(self.trace_file).exists():
            raise ValueError(f"trace file not found: {self.trace_file}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.policy not in baselines.POLICY_NAMES:
            raise ValueError(f"unknown policy {self.policy!r}; choose from {baselines.POLICY_NAMES}")
        if self.mode not in ("periodic", "event"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.donor is not None and not Path(self.donor).exists():
            raise ValueError(f"donor Q-table not found: {self.donor}")
        # reward-bound invariant is enforced on every load
        RewardConfig(depletion_penalty=self.depletion_penalty()).validate(
            self.action_set().max_index
        )

    # -- resolved pieces ----------------------------------------------------

    def action_set(self) -> ActionSet:
        times = tuple(float(x) for x in str(self.actions).split(","))
        return ActionSet(times)

    def feature_set(self) -> StateFeatureSet:
        return StateFeatureSet.from_names(self.features.split(","))

    def energy_config(self) -> NodeEnergyConfig:
        base = NodeEnergyConfig.event_mode() if self.mode == "event" else NodeEnergyConfig()
        if self.energy_overrides:
            base = base.replace(**{k: float(v) for k, v in self.energy_overrides.items()})
        return base

    def depletion_penalty(self) -> float:
        if "depletion_penalty" in self.agent_overrides:
            return float(self.agent_overrides["depletion_penalty"])
        return scaled_penalty(self.action_set())

    def agent_config(self) -> AgentConfig:
        kwargs = {}
        valid = {f.name for f in dataclass_fields(AgentConfig)}
        for key, value in self.agent_overrides.items():
            if key == "depletion_penalty":
                continue
            if key not in valid:
                raise ValueError(f"unknown agent parameter {key!r}")
            current = getattr(AgentConfig, key)
            kwargs[key] = type(current)(value) if current is not None else float(value)
        return AgentConfig(**kwargs)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(depletion_penalty=self.depletion_penalty())

    def resolve_trace(self) -> LightTrace:
        if self.trace_file is not None:
            return load_trace(self.trace_file)
        return gen_synthetic(get_archetype(self.archetype), self.days, self.trace_seed)

    def resolve_events(self) -> EventTrace | None:
        if self.mode != "event":
            return None
        return gen_events(self.days, self.weekday_event_rate, self.weekend_event_rate,
                          seed=self.trace_seed + 1)

    def build_env(self, trace=None, **overrides) -> NodeEnv:
        trace = trace if trace is not None else self.resolve_trace()
        kwargs = dict(
            energy=self.energy_config(),
            features=self.feature_set(),
            actions=self.action_set(),
            reward=self.reward_config(),
            mode=self.mode,
            events=self.resolve_events(),
        )
        kwargs.update(overrides)
        return NodeEnv(trace, **kwargs)

    # -- INI round trip -------------------------------------------------------

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser["trace"] = {}
        if self.trace_file is not None:
            parser["trace"]["file"] = str(self.trace_file)
        if self.archetype is not None:
            parser["trace"]["archetype"] = str(self.archetype)
        parser["trace"]["days"] = str(self.days)
        parser["trace"]["seed"] = str(self.trace_seed)
        parser["energy"] = {k: str(v) for k, v in self.energy_overrides.items()}
        parser["agent"] = {k: str(v) for k, v in self.agent_overrides.items()}
        run = {
            "strategy": self.strategy,
            "policy": self.policy,
            "mode": self.mode,
            "features": self.features,
            "actions": self.actions,
            "seed": str(self.seed),
            "weekday_event_rate": str(self.weekday_event_rate),
            "weekend_event_rate": str(self.weekend_event_rate),
        }
        if self.eval_days is not None:
            run["eval_days"] = str(self.eval_days)
        if self.donor is not None:
            run["donor"] = str(self.donor)
        if self.out is not None:
            run["out"] = str(self.out)
        parser["run"] = run
        import io

        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini())

    @classmethod
    def from_ini(cls, path) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ValueError(f"config file not found: {path}")
        cfg = cls()
        if parser.has_section("trace"):
            sec = parser["trace"]
            cfg.trace_file = sec.get("file", None)
            cfg.archetype = sec.get("archetype", None)
            cfg.days = sec.getint("days", cfg.days)
            cfg.trace_seed = sec.getint("seed", cfg.trace_seed)
        if parser.has_section("energy"):
            cfg.energy_overrides = dict(parser["energy"])
        if parser.has_section("agent"):
            cfg.agent_overrides = dict(parser["agent"])
        if parser.has_section("run"):
            sec = parser["run"]
            cfg.strategy = sec.get("strategy", cfg.strategy)
            cfg.policy = sec.get("policy", cfg.policy)
            cfg.mode = sec.get("mode", cfg.mode)
            cfg.features = sec.get("features", cfg.features)
            cfg.actions = sec.get("actions", cfg.actions)
            cfg.seed = sec.getint("seed", cfg.seed)
            cfg.weekday_event_rate = sec.getfloat("weekday_event_rate", cfg.weekday_event_rate)
            cfg.weekend_event_rate = sec.getfloat("weekend_event_rate", cfg.weekend_event_rate)
            if sec.get("eval_days", None) is not None:
                cfg.eval_days = sec.getint("eval_days")
            cfg.donor = sec.get("donor", None)
            cfg.out = sec.get("out", None)
        return cfg


# ---------------------------------------------------------------------------
# Individual run drivers (shared by the CLI and the test suite)
# ---------------------------------------------------------------------------

def run_calibration(event_mode: bool = False, capacitance: float | None = None,
                    targets=None) -> dict:
    """Fit t_active against the lifetime benchmarks; returns a report dict."""
    if event_mode:
        config = NodeEnergyConfig.event_mode()
        targets = list(targets or EVENT_LIFETIME_TARGETS)
    else:
        config = NodeEnergyConfig()
        targets = list(targets or PERIODIC_LIFETIME_TARGETS)
    if capacitance is not None:
        config = config.replace(capacitance=capacitance)
    t_active = calibrate_active_time(targets, config, pir_armed=event_mode)
    fitted = config.replace(t_active=t_active)
    rows = []
    for period, expected in targets:
        got = simulate_discharge(period, fitted, pir_armed=event_mode)
        rows.append({
            "sensing_period_s": period,
            "target_lifetime_s": expected,
            "simulated_lifetime_s": got,
            "relative_error": abs(got - expected) / expected,
        })
    return {
        "mode": "event" if event_mode else "periodic",
        "capacitance_f": fitted.capacitance,
        "t_active_s": t_active,
        "targets": rows,
        "max_relative_error": max(r["relative_error"] for r in rows),
    }


def write_energy_ini(config: NodeEnergyConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser["energy"] = {
        f.name: repr(getattr(config, f.name)) for f in dataclass_fields(NodeEnergyConfig)
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        parser.write(fh)


def training_curve_rows(run: TrainingRun, window: int = 100):
    """(episode, total reward, smoothed reward) rows plus mean-Q checkpoints."""
    smoothed = reward_curve(run.episode_rewards, window=window)
    if smoothed.size == 1:
        smoothed = np.full(run.episodes, smoothed[0])
    rows = []
    for i in range(run.episodes):
        rows.append({
            "episode": i + 1,
            "total_reward": float(run.episode_rewards[i]),
            "smoothed_reward": float(smoothed[i]),
        })
    return rows


def save_training_outputs(out: Path, q: QTable, run: TrainingRun, name: str = "qtable") -> None:
    out.mkdir(parents=True, exist_ok=True)
    q.save(out / f"{name}.bin")
    rows = training_curve_rows(run)
    write_report_rows(rows, out / f"{name}_curve.csv")
    write_series(
        [((i + 1) * 100, m) for i, m in enumerate(run.mean_q_history)],
        out / f"{name}_mean_q.csv",
        header=("episode", "mean_q"),
    )


def evaluate_policy(
    config: ExperimentConfig,
    policy,
    trace: LightTrace | None = None,
    start_day: int = 0,
    n_days: int | None = None,
) -> tuple[EpisodeLog, MetricsReport, np.ndarray]:
    """Roll a policy over the trace and compute its report."""
    env = config.build_env(trace=trace)
    log = rollout(env, policy, start_day=start_day, n_days=n_days)
    detected = np.asarray(env.detected_times)
    ground = env.events
    report = report_from_log(
        log,
        actions=env.actions,
        config=env.energy,
        detected=detected if config.mode == "event" else None,
        ground_truth=ground.window(start_day * 86400.0,
                                   (start_day + (n_days or env.n_days - start_day)) * 86400.0)
        if config.mode == "event" and ground is not None else None,
    )
    return log, report, detected


# ---------------------------------------------------------------------------
# Comparison suites
# ---------------------------------------------------------------------------

SUITE_ARCHETYPES = ("Window", "ConferenceRoom", "MiddleOffice", "Door", "Stairs")


def _suite_trace(archetype: str, days: int, seed: int) -> LightTrace:
    return gen_synthetic(get_archetype(archetype), days, seed)


def _metrics_row(archetype, policy_name, log, actions, energy, extra=None) -> dict:
    report = report_from_log(log, actions=actions, config=energy)
    row = {
        "archetype": archetype,
        "policy": policy_name,
        "avg_duty_cycle_period_s": report.avg_duty_cycle_period,
        "duty_cycle_ratio": report.duty_cycle_ratio,
        "dead_time_fraction": report.dead_time_fraction,
        "deaths": report.deaths,
        "reward_total": report.reward_total,
    }
    if extra:
        row.update(extra)
    return row


def run_table12_cell(archetype: str, policy_name: str, *, history_days: int = 7,
                     eval_days: int = 7, trace_seed: int = 7, seed: int = 1,
                     agent_config: AgentConfig | None = None) -> dict:
    """One (archetype, policy) cell: controllers share the same trace; metrics
    cover the evaluation week that follows a history week."""
    agent_config = agent_config or AgentConfig()
    total_days = history_days + eval_days
    trace = _suite_trace(archetype, total_days, trace_seed)
    energy = NodeEnergyConfig()
    actions = DEFAULT_ACTIONS
    features = DEFAULT_FEATURES
    rng = np.random.default_rng(seed)

    def eval_env():
        return NodeEnv(trace, energy=energy, features=features, actions=actions)

    if policy_name == "aces":
        result = train_day_by_day(trace, agent_config=agent_config, seed=seed,
                                  energy=energy, features=features, actions=actions)
        log = EpisodeLog.concat(result.logs[history_days:])
        deaths_note = {"converged_nights": sum(r.converged for r in result.training_runs)}
        return _metrics_row(archetype, policy_name, log, actions, energy, deaths_note)
    if policy_name == "fixed":
        policy = baselines.fixed_policy(60.0, actions)
        env = eval_env()
        log = rollout(env, policy, start_day=history_days, n_days=eval_days)
        return _metrics_row(archetype, policy_name, log, actions, energy)
    if policy_name == "mote_local":
        policy = baselines.mote_local_policy(actions)
        env = eval_env()
        log = rollout(env, policy, start_day=history_days, n_days=eval_days)
        return _metrics_row(archetype, policy_name, log, actions, energy)
    if policy_name == "sc_only":
        q, _ = baselines.train_sc_only(trace, agent_config, seed, energy=energy,
                                       actions=actions, days=range(history_days))
        policy = baselines.sc_only_policy(q, rng)
        env = NodeEnv(trace, energy=energy, features=q.features, actions=actions)
        log = rollout(env, policy, start_day=history_days, n_days=eval_days)
        return _metrics_row(archetype, policy_name, log, actions, energy)
    if policy_name == "online3":
        # trains on the first half of the evaluation week, acts on the rest
        table, _ = baselines.train_online3(trace, agent_config, seed, energy=energy,
                                           features=features, actions=actions,
                                           days=range(history_days, history_days + eval_days // 2))
        policy = baselines.Online3Policy(table, rng)
        env = eval_env()
        log = rollout(env, policy, start_day=history_days + eval_days // 2,
                      n_days=eval_days - eval_days // 2)
        return _metrics_row(archetype, policy_name, log, actions, energy)
    if policy_name == "one_time_half":
        eval_trace = trace.slice_days(history_days, eval_days)
        q, _, half = baselines.train_one_time_half(eval_trace, agent_config, seed,
                                                   energy=energy, features=features,
                                                   actions=actions)
        policy = GreedyTablePolicy(q, rng)
        env = NodeEnv(eval_trace, energy=energy, features=features, actions=actions)
        log = rollout(env, policy, start_day=half, n_days=eval_trace.n_days - half)
        return _metrics_row(archetype, policy_name, log, actions, energy)
    raise ValueError(f"unknown policy {policy_name!r}")


def _table12_cell(args):
    archetype, policy, kwargs = args
    return run_table12_cell(archetype, policy, **kwargs)


def run_suite_table12(history_days: int = 7, eval_days: int = 7, trace_seed: int = 7,
                      seed: int = 1, agent_config: AgentConfig | None = None,
                      workers: int = 1, policies=baselines.POLICY_NAMES) -> list[dict]:
    kwargs = dict(history_days=history_days, eval_days=eval_days,
                  trace_seed=trace_seed, seed=seed, agent_config=agent_config)
    cells = [(arch, pol, kwargs) for arch in SUITE_ARCHETYPES for pol in policies]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_table12_cell, cells))
    else:
        rows = [_table12_cell(cell) for cell in cells]
    return rows


TABLE5_FEATURE_SETS = (
    ("sc", "SC"),
    ("sc,week", "SC-Week"),
    ("sc,light", "SC-Light"),
    ("sc,light,week", "SC-Light-Week"),
    ("sc,light,week,time", "SC-Light-Week-Time"),
)


def run_suite_table5(days: int = 15, train_days: int = 7, trace_seed: int = 7, seed: int = 1,
                     agent_config: AgentConfig | None = None, workers: int = 1) -> list[dict]:
    """Feature ablation: train on the first week, deploy greedily on the rest."""
    agent_config = agent_config or AgentConfig()
    jobs = []
    for arch in SUITE_ARCHETYPES:
        for names, label in TABLE5_FEATURE_SETS:
            jobs.append((arch, names, label, days, train_days, trace_seed, seed, agent_config))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_table5_cell, jobs))
    else:
        rows = [_table5_cell(job) for job in jobs]
    return rows


def _table5_cell(job) -> dict:
    arch, names, label, days, train_days, trace_seed, seed, agent_config = job
    trace = _suite_trace(arch, days, trace_seed)
    features = StateFeatureSet.from_names(names.split(","))
    env = NodeEnv(trace, features=features)
    q, run = train(env, agent_config, np.random.default_rng(seed),
                   allowed_days=range(train_days))
    policy = GreedyTablePolicy(q, np.random.default_rng(seed + 1), unseen_random=False)
    eval_env = NodeEnv(trace, features=features)
    log = rollout(eval_env, policy, start_day=train_days, n_days=days - train_days)
    return {
        "archetype": arch,
        "features": label,
        "n_states": features.n_states,
        "reward_total": log.total_reward,
        "episodes_trained": run.episodes,
        "converged": run.converged,
    }


TABLE6_LADDERS = (
    ("2", TWO_ACTIONS),
    ("4", DEFAULT_ACTIONS),
    ("8", EIGHT_ACTIONS),
)


def run_suite_table6(days: int = 15, train_days: int = 7, trace_seed: int = 7, seed: int = 1,
                     agent_config: AgentConfig | None = None, workers: int = 1) -> list[dict]:
    """Action ablation with rewards normalised to the 0..3 scale."""
    agent_config = agent_config or AgentConfig()
    jobs = []
    for arch in SUITE_ARCHETYPES:
        for label, ladder in TABLE6_LADDERS:
            jobs.append((arch, label, ladder, days, train_days, trace_seed, seed, agent_config))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_table6_cell, jobs))
    else:
        rows = [_table6_cell(job) for job in jobs]
    return rows


def _table6_cell(job) -> dict:
    arch, label, ladder, days, train_days, trace_seed, seed, agent_config = job
    trace = _suite_trace(arch, days, trace_seed)
    reward = RewardConfig(depletion_penalty=scaled_penalty(ladder))
    env = NodeEnv(trace, actions=ladder, reward=reward)
    q, run = train(env, agent_config, np.random.default_rng(seed),
                   allowed_days=range(train_days))
    policy = GreedyTablePolicy(q, np.random.default_rng(seed + 1), unseen_random=False)
    eval_env = NodeEnv(trace, actions=ladder, reward=reward)
    log = rollout(eval_env, policy, start_day=train_days, n_days=days - train_days)
    scale = 3.0 / ladder.max_index
    alive_steps = log.reward >= 0
    normalized = float(log.reward[alive_steps].sum() * scale + log.reward[~alive_steps].sum())
    return {
        "archetype": arch,
        "n_actions": ladder.n,
        "reward_total_raw": log.total_reward,
        "reward_total_normalized": normalized,
        "depletion_penalty": reward.depletion_penalty,
        "episodes_trained": run.episodes,
        "converged": run.converged,
    }


def write_rows_json(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
