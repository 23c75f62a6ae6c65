"""Electrical model of the harvesting sensor node.

Charge-based dynamics: the supercapacitor voltage follows ``dV = I dt / C``
with constant mode currents (sleep, PIR-armed sleep, transmit, PIR event
handling) and a harvest current linear in illuminance.  The one free
parameter is ``t_active``, the time a node spends awake per send cycle
(wake + sensor read + radio advertise/connect/transmit/ack); it is fitted
against measured zero-light lifetime benchmarks by
:func:`calibrate_active_time`.

The node dies when the capacitor drops below ``v_dead`` and halts all duty
cycling; it keeps harvesting and resumes at the first 15-minute boundary at
or above ``v_dead``.  Below ``v_min_operational`` the hardware cannot sense
at all, which is the cut-off used for lifetime measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np


class CalibrationError(RuntimeError):
    """No feasible active time reproduces the requested lifetime targets."""


#: Zero-light lifetime benchmarks for the periodic node with a 1 F capacitor:
#: (send-to-send sensing period in seconds, measured lifetime in seconds).
PERIODIC_LIFETIME_TARGETS = (
    (15.0, 9.0 * 3600.0),
    (60.0, 34.0 * 3600.0),
    (600.0, 6.25 * 86400.0),
)

#: Lifetime benchmarks for a PIR-armed node with a 1.5 F capacitor.
EVENT_LIFETIME_TARGETS = (
    (15.0, 9.6 * 3600.0),
    (600.0, 8.0 * 86400.0),
)

#: Fitted active time per send for the periodic node (see tests: matches
#: calibrate_active_time on PERIODIC_LIFETIME_TARGETS to the scan grid).
T_ACTIVE_PERIODIC = 7.82

#: Fitted active time for PIR-armed nodes.  The event benchmarks imply a
#: higher per-cycle cost than the periodic ones, so the event configuration
#: carries its own fitted constant.
T_ACTIVE_EVENT = 10.38


@dataclass(frozen=True)
class NodeEnergyConfig:
    """Electrical parameters of the node (SI units: farads, volts, amps, seconds)."""

    capacitance: float = 1.0
    v_max: float = 5.5
    v_min_operational: float = 2.1
    v_dead: float = 3.0
    i_sleep: float = 3.5e-6
    i_sleep_pir: float = 4.5e-6
    i_send: float = 199e-6
    i_pir_event: float = 102e-6
    t_pir_event: float = 2.5
    i_harvest_ref: float = 35.2e-6   # harvest current at lux_ref
    lux_ref: float = 200.0
    t_active: float = T_ACTIVE_PERIODIC

    def __post_init__(self):
        if not (0 < self.v_min_operational < self.v_dead < self.v_max):
            raise ValueError(
                "voltage thresholds must satisfy 0 < v_min_operational < v_dead < v_max, got "
                f"{self.v_min_operational}, {self.v_dead}, {self.v_max}"
            )
        if self.capacitance <= 0:
            raise ValueError(f"capacitance must be positive, got {self.capacitance}")
        for name in ("i_sleep", "i_sleep_pir", "i_send", "i_pir_event", "i_harvest_ref"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.t_active <= 0 or self.t_pir_event <= 0 or self.lux_ref <= 0:
            raise ValueError("t_active, t_pir_event and lux_ref must be positive")

    @classmethod
    def event_mode(cls, **overrides) -> "NodeEnergyConfig":
        """Default configuration for PIR event nodes (1.5 F, event-fitted t_active)."""
        params = dict(capacitance=1.5, t_active=T_ACTIVE_EVENT)
        params.update(overrides)
        return cls(**params)

    def replace(self, **changes) -> "NodeEnergyConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class SupercapState:
    """Capacitor voltage plus the dead/alive flag derived from ``v_dead``."""

    voltage: float
    alive: bool = True


def harvest_current(lux: float, config: NodeEnergyConfig) -> float:
    """Solar panel current in amps, linear in illuminance."""
    if lux < 0:
        raise ValueError(f"lux must be non-negative, got {lux}")
    return config.i_harvest_ref * lux / config.lux_ref


def step_capacitor(
    state: SupercapState, i_net: float, dt: float, config: NodeEnergyConfig
) -> SupercapState:
    """Advance the capacitor by ``dt`` seconds under net current ``i_net``.

    Voltage is clamped to [0, v_max]; the alive flag follows the ``v_dead``
    threshold (dies below it, revives at or above it).
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    v = state.voltage + i_net * dt / config.capacitance
    v = min(max(v, 0.0), config.v_max)
    return SupercapState(voltage=v, alive=v >= config.v_dead)


@dataclass(frozen=True)
class WindowLoad:
    """Activity summary of one control window."""

    n_sends: int
    sleep_seconds: float
    pir_events_detected: int = 0
    pir_armed_seconds: float = 0.0


class WindowLoadResult(NamedTuple):
    load: WindowLoad
    charge: float                 # coulombs drawn over the window
    carry: tuple                  # busy segments spilling into the next window
    detected_offsets: tuple       # event-mode detections (seconds into window)


def window_load(
    sleep_time: float,
    window: float,
    config: NodeEnergyConfig,
    mode: str = "periodic",
    event_offsets=(),
    carry=(),
) -> WindowLoadResult:
    """Charge drawn by the node over one window for a given sleep-time action.

    Periodic mode: the node cycles send / sleep; ``n_sends = floor(window /
    (sleep_time + t_active))``, except that a cycle longer than the window
    still yields one send (the cycle is credited to the window it starts in).

    Event mode: the node sits PIR-armed (``i_sleep_pir``); each detected
    event costs a PIR handling burst plus one send, then the node sleeps for
    ``sleep_time`` with the PIR off.  Events arriving during handling, send,
    or post-event sleep are missed.  Busy intervals straddling the window
    boundary are split exactly via ``carry`` segments.
    """
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    if sleep_time < 0:
        raise ValueError(f"sleep_time must be non-negative, got {sleep_time}")

    if mode == "periodic":
        cycle = sleep_time + config.t_active
        n_sends = max(1, int(math.floor(window / cycle + 1e-9)))
        active = n_sends * config.t_active
        sleep_seconds = max(window - active, 0.0)
        charge = config.i_send * active + config.i_sleep * sleep_seconds
        load = WindowLoad(n_sends=n_sends, sleep_seconds=sleep_seconds)
        return WindowLoadResult(load, charge, (), ())

    if mode != "event":
        raise ValueError(f"unknown mode {mode!r} (use 'periodic' or 'event')")

    charge = 0.0
    sleep_acc = 0.0
    armed = 0.0
    carry_out: list = []
    detected: list = []

    # Consume busy segments carried over from the previous window.
    blackout_end = 0.0
    for dur, cur, kind in carry:
        if blackout_end >= window:
            carry_out.append((dur, cur, kind))
            continue
        take = min(dur, window - blackout_end)
        charge += cur * take
        if kind == "sleep":
            sleep_acc += take
        blackout_end += take
        if dur - take > 1e-12:
            carry_out.append((dur - take, cur, kind))

    phases = (
        (config.t_pir_event, config.i_pir_event, "pir"),
        (config.t_active, config.i_send, "send"),
        (sleep_time, config.i_sleep, "sleep"),
    )
    for e in event_offsets:
        if e < blackout_end:
            continue  # node busy: event missed
        span = e - blackout_end
        armed += span
        charge += config.i_sleep_pir * span
        detected.append(float(e))
        cursor = e
        for dur, cur, kind in phases:
            start, end = cursor, cursor + dur
            in_window = max(0.0, min(end, window) - min(start, window))
            charge += cur * in_window
            if kind == "sleep":
                sleep_acc += in_window
            if end > window:
                carry_out.append((end - max(start, window), cur, kind))
            cursor = end
        blackout_end = cursor

    if blackout_end < window:
        span = window - blackout_end
        armed += span
        charge += config.i_sleep_pir * span

    load = WindowLoad(
        n_sends=len(detected),
        sleep_seconds=sleep_acc,
        pir_events_detected=len(detected),
        pir_armed_seconds=armed,
    )
    return WindowLoadResult(load, charge, tuple(carry_out), tuple(detected))


def cycle_charge(sensing_period: float, config: NodeEnergyConfig, pir_armed: bool = False) -> float:
    """Coulombs drawn per sensing cycle of ``sensing_period`` seconds (send included)."""
    i_base = config.i_sleep_pir if pir_armed else config.i_sleep
    active = min(config.t_active, sensing_period)
    return config.i_send * active + i_base * max(sensing_period - active, 0.0)


def simulate_discharge(
    sensing_period: float,
    config: NodeEnergyConfig,
    initial_v: float | None = None,
    pir_armed: bool = False,
) -> float:
    """Zero-light lifetime in seconds at a fixed send-to-send sensing period.

    ``sensing_period`` is the full interval between consecutive sends, active
    time included.  The node is stepped cycle by cycle until the voltage
    falls below ``v_min_operational``; the final partial cycle is
    interpolated linearly.
    """
    if sensing_period <= 0:
        raise ValueError(f"sensing_period must be positive, got {sensing_period}")
    v = config.v_max if initial_v is None else initial_v
    if v < config.v_min_operational:
        return 0.0
    q = cycle_charge(sensing_period, config, pir_armed)
    dv = q / config.capacitance
    if dv <= 0:
        raise ValueError("cycle draws no charge; lifetime is unbounded")
    state = SupercapState(voltage=v)
    elapsed = 0.0
    max_cycles = int(1e8)
    for _ in range(max_cycles):
        nxt = step_capacitor(state, -q / sensing_period, sensing_period, config)
        if nxt.voltage < config.v_min_operational:
            # fraction of the cycle survived before crossing the threshold
            elapsed += sensing_period * (state.voltage - config.v_min_operational) / dv
            return elapsed
        state = nxt
        elapsed += sensing_period
    raise RuntimeError("discharge did not terminate (cycle cap exceeded)")


def _lifetime_closed_form(
    period: float, t_active: np.ndarray, config: NodeEnergyConfig, pir_armed: bool
) -> np.ndarray:
    """Vectorised analytic lifetime for the constant-current discharge model."""
    i_base = config.i_sleep_pir if pir_armed else config.i_sleep
    active = np.minimum(t_active, period)
    q = config.i_send * active + i_base * np.maximum(period - active, 0.0)
    dq = config.capacitance * (config.v_max - config.v_min_operational)
    return dq * period / q


def calibrate_active_time(
    targets,
    config: NodeEnergyConfig,
    pir_armed: bool = False,
    t_max: float = 60.0,
    granularity: float = 0.01,
    max_rel_error: float = 0.25,
) -> float:
    """Fit ``t_active`` to a set of (sensing period, lifetime) benchmarks.

    Scans (0, t_max] at ``granularity`` and returns the active time that
    minimises the worst relative lifetime error over the targets.  Raises
    :class:`CalibrationError` when no candidate keeps every error at or
    below ``max_rel_error``.
    """
    targets = [(float(p), float(life)) for p, life in targets]
    if not targets:
        raise CalibrationError("no lifetime targets supplied")
    for p, life in targets:
        if p <= 0 or life <= 0:
            raise CalibrationError(f"bad target (period={p}, lifetime={life})")
    grid = np.arange(granularity, t_max + granularity / 2, granularity)
    worst = np.zeros_like(grid)
    for period, life in targets:
        predicted = _lifetime_closed_form(period, grid, config, pir_armed)
        worst = np.maximum(worst, np.abs(predicted - life) / life)
    best = int(np.argmin(worst))
    if worst[best] > max_rel_error:
        raise CalibrationError(
            f"no active time in (0, {t_max}] s fits the targets within "
            f"{max_rel_error:.0%} (best worst-case error {worst[best]:.1%})"
        )
    return float(round(grid[best] / granularity) * granularity)
