"""Evaluation metrics computed from episode logs.

The quality-of-service figure is the average duty-cycle period: sleep time
plus active time of one completed node cycle, averaged over all completed
cycles (lower is better).  Dead time, event detection rate after a
two-minute debounce, and midnight-to-midnight energy neutrality round out
the report.  Everything here is a pure function of a log plus the explicit
node configuration; reports serialise to JSON and wide CSV rows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energy import NodeEnergyConfig
from .env import DEFAULT_ACTIONS, EPISODE_STEPS, ActionSet, EpisodeLog


class UndefinedMetricError(ValueError):
    """The log does not contain what the metric needs (e.g. zero cycles)."""


def duty_cycle_period(log: EpisodeLog, actions: ActionSet = DEFAULT_ACTIONS,
                      t_active: float | None = None,
                      config: NodeEnergyConfig | None = None) -> float:
    """Mean seconds per completed duty cycle: (1/tau) * sum(t_active + t_sleep).

    Each window at action ``a`` contributes ``sends`` cycles of period
    ``sleep_times[a] + t_active``; windows with no completed cycle (dead
    time) contribute nothing and are reported through :func:`dead_time`.
    """
    if t_active is None:
        t_active = (config or NodeEnergyConfig()).t_active
    sends = log.sends
    total_cycles = int(sends.sum())
    if total_cycles == 0:
        raise UndefinedMetricError("log contains no completed duty cycle")
    periods = np.asarray([actions.sleep_time(a) + t_active for a in range(actions.n)])
    return float((sends * periods[log.action]).sum() / total_cycles)


def duty_cycle_ratio(log: EpisodeLog, actions: ActionSet = DEFAULT_ACTIONS,
                     t_active: float | None = None,
                     config: NodeEnergyConfig | None = None) -> float:
    """Active fraction of the duty cycle: t_active / duty_cycle_period."""
    if t_active is None:
        t_active = (config or NodeEnergyConfig()).t_active
    return t_active / duty_cycle_period(log, actions, t_active)


def dead_time(log: EpisodeLog) -> tuple[float, int]:
    """(fraction of wall time spent dead, number of alive-to-dead transitions).

    A log that opens dead counts one death at time zero.
    """
    if len(log) == 0:
        return 0.0, 0
    alive = log.alive.astype(bool)
    fraction = float((~alive).mean())
    prev = np.concatenate(([True], alive[:-1]))
    deaths = int((prev & ~alive).sum())
    return fraction, deaths


def debounce_events(times, window: float = 120.0) -> np.ndarray:
    """Drop events closer than ``window`` seconds after the last counted event."""
    if window < 0:
        raise ValueError("debounce window must be non-negative")
    kept = []
    last = -np.inf
    for t in np.sort(np.asarray(times, dtype=float)):
        if t - last >= window:
            kept.append(t)
            last = t
    return np.asarray(kept)


def event_detection_rate(detected, ground_truth, debounce: float = 120.0) -> float:
    """Debounced detections over debounced ground truth.

    Both streams are debounced (at most one counted event per ``debounce``
    seconds) before taking the ratio.
    """
    detected = getattr(detected, "times", detected)
    ground_truth = getattr(ground_truth, "times", ground_truth)
    truth = debounce_events(ground_truth, debounce)
    if truth.size == 0:
        raise UndefinedMetricError("ground truth holds no events; rate undefined")
    got = debounce_events(detected, debounce)
    return float(got.size / truth.size)


def voltage_percent(v, config: NodeEnergyConfig) -> np.ndarray:
    """Voltage as percent of the operational range [v_min_operational, v_max]."""
    span = config.v_max - config.v_min_operational
    return (np.asarray(v, dtype=float) - config.v_min_operational) / span * 100.0


def energy_neutrality(log: EpisodeLog, config: NodeEnergyConfig | None = None) -> list[tuple[float, float]]:
    """Midnight series of (voltage % of operational range, delta vs previous midnight).

    The first midnight has delta 0 by convention.  Needs at least two
    midnights in the log.
    """
    config = config or NodeEnergyConfig()
    ends = log.timestamp + 900.0
    at_midnight = np.isclose(ends % 86400.0, 0.0) | np.isclose(ends % 86400.0, 86400.0)
    volts = log.voltage[at_midnight]
    if volts.size < 2:
        raise UndefinedMetricError("need a log spanning at least two midnights")
    pct = voltage_percent(volts, config)
    out = [(float(pct[0]), 0.0)]
    for prev, cur in zip(pct[:-1], pct[1:]):
        out.append((float(cur), float(cur - prev)))
    return out


def reward_curve(episode_rewards, window: int = 100) -> np.ndarray:
    """Trailing running average of per-episode total rewards.

    A window longer than the run collapses to a single averaged point.
    """
    rewards = np.asarray(episode_rewards, dtype=float)
    if rewards.size == 0:
        raise UndefinedMetricError("no episodes recorded")
    if window < 1:
        raise ValueError("window must be >= 1")
    if window >= rewards.size:
        return np.asarray([rewards.mean()])
    csum = np.concatenate(([0.0], np.cumsum(rewards)))
    out = np.empty(rewards.size)
    for i in range(rewards.size):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


@dataclass
class MetricsReport:
    """Aggregated quality-of-service numbers for one run."""

    avg_duty_cycle_period: float
    duty_cycle_ratio: float
    dead_time_fraction: float
    deaths: int
    reward_total: float
    event_detection_rate: float | None = None
    energy_neutrality: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "avg_duty_cycle_period_s": self.avg_duty_cycle_period,
            "duty_cycle_ratio": self.duty_cycle_ratio,
            "dead_time_fraction": self.dead_time_fraction,
            "deaths": self.deaths,
            "reward_total": self.reward_total,
            "event_detection_rate": self.event_detection_rate,
            "energy_neutrality": [list(pair) for pair in self.energy_neutrality],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text + "\n")
        return text


def report_from_log(
    log: EpisodeLog,
    actions: ActionSet = DEFAULT_ACTIONS,
    config: NodeEnergyConfig | None = None,
    detected=None,
    ground_truth=None,
    debounce: float = 120.0,
) -> MetricsReport:
    """Build the full report for a deployment log."""
    config = config or NodeEnergyConfig()
    try:
        period = duty_cycle_period(log, actions, config.t_active)
        ratio = config.t_active / period
    except UndefinedMetricError:
        period = float("nan")
        ratio = float("nan")
    fraction, deaths = dead_time(log)
    rate = None
    if detected is not None and ground_truth is not None:
        rate = event_detection_rate(detected, ground_truth, debounce)
    try:
        neutrality = energy_neutrality(log, config)
    except UndefinedMetricError:
        neutrality = []
    return MetricsReport(
        avg_duty_cycle_period=period,
        duty_cycle_ratio=ratio,
        dead_time_fraction=fraction,
        deaths=deaths,
        reward_total=log.total_reward,
        event_detection_rate=rate,
        energy_neutrality=neutrality,
    )


def write_report_rows(rows: list[dict], path) -> None:
    """Write sweep results as a wide CSV (one row per run, union of keys)."""
    if not rows:
        raise ValueError("no rows to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields: list[str] = []
    for row in rows:
        for key in row:
            if key not in fields:
                fields.append(key)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def write_series(series, path, header=("x", "y")) -> None:
    """Plot-ready (x, y) series as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for x, y in series:
            writer.writerow([x, y])
