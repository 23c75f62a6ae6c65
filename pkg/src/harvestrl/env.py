"""Discretised control environment for the harvesting node.

The controller observes the node every 15 minutes and picks a sleep-time
action for the next window.  Observations are discretised: illuminance and
storage voltage to eleven levels each, plus a weekday/weekend flag and an
optional hour-of-day feature.  The per-step reward equals the chosen action
index; a window that ends with the capacitor below the death threshold is
penalised instead.  One episode is 24 hours (96 windows).

A dead node performs no sensing but keeps harvesting, and resumes duty
cycling at the first window boundary at or above the death threshold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .energy import NodeEnergyConfig, WindowLoadResult, window_load
from .traces import SECONDS_PER_DAY, SLOT_SECONDS, SLOTS_PER_DAY, EventTrace, LightTrace, resample

N_LEVELS = 11          # discretisation levels for light and storage (0..10)
LUX_PER_LEVEL = 200.0  # level 10 means 2000 lux or more
EPISODE_STEPS = SLOTS_PER_DAY


class TraceExhausted(RuntimeError):
    """Raised when stepping past the end of the backing light trace."""


@dataclass(frozen=True)
class ActionSet:
    """Sleep-time ladder; index 0 is the longest sleep, higher index = faster sensing."""

    sleep_times: tuple = (900.0, 300.0, 60.0, 15.0)

    def __post_init__(self):
        if len(self.sleep_times) < 1:
            raise ValueError("an action set needs at least one sleep time")
        if any(t <= 0 for t in self.sleep_times):
            raise ValueError("sleep times must be positive")
        if any(a <= b for a, b in zip(self.sleep_times, self.sleep_times[1:])):
            raise ValueError("sleep times must be strictly decreasing in action index")

    @property
    def n(self) -> int:
        return len(self.sleep_times)

    @property
    def max_index(self) -> int:
        return self.n - 1

    def sleep_time(self, index: int) -> float:
        return self.sleep_times[index]

    def action(self, index: int) -> "Action":
        return Action(index=index, sleep_time=self.sleep_times[index])

    def index_for_sleep(self, sleep_time: float) -> int | None:
        for i, t in enumerate(self.sleep_times):
            if abs(t - sleep_time) < 1e-9:
                return i
        return None


DEFAULT_ACTIONS = ActionSet()
TWO_ACTIONS = ActionSet((900.0, 15.0))
EIGHT_ACTIONS = ActionSet((900.0, 500.0, 300.0, 150.0, 60.0, 40.0, 25.0, 15.0))


@dataclass(frozen=True)
class Action:
    index: int
    sleep_time: float


@dataclass(frozen=True)
class EnvState:
    """Discretised observation tuple."""

    light_level: int
    storage_level: int
    is_weekend: bool
    hour: int | None = None


@dataclass(frozen=True)
class StateFeatureSet:
    """Which observation features feed the state id (storage is always included)."""

    light: bool = True
    week: bool = True
    time: bool = False

    @property
    def n_states(self) -> int:
        n = N_LEVELS
        if self.light:
            n *= N_LEVELS
        if self.week:
            n *= 2
        if self.time:
            n *= 24
        return n

    def encode(self, storage_level: int, light_level: int = 0,
               is_weekend: bool = False, hour: int = 0) -> int:
        """Dense state id; a bijection onto [0, n_states)."""
        if not 0 <= storage_level < N_LEVELS:
            raise ValueError(f"storage level {storage_level} out of range")
        sid = storage_level
        stride = N_LEVELS
        if self.light:
            if not 0 <= light_level < N_LEVELS:
                raise ValueError(f"light level {light_level} out of range")
            sid += stride * light_level
            stride *= N_LEVELS
        if self.week:
            sid += stride * (1 if is_weekend else 0)
            stride *= 2
        if self.time:
            if not 0 <= hour < 24:
                raise ValueError(f"hour {hour} out of range")
            sid += stride * hour
        return sid

    def encode_state(self, state: EnvState) -> int:
        return self.encode(state.storage_level, state.light_level,
                           state.is_weekend, state.hour or 0)

    def decode(self, sid: int) -> EnvState:
        if not 0 <= sid < self.n_states:
            raise ValueError(f"state id {sid} out of range [0, {self.n_states})")
        storage = sid % N_LEVELS
        sid //= N_LEVELS
        light = 0
        if self.light:
            light = sid % N_LEVELS
            sid //= N_LEVELS
        weekend = False
        if self.week:
            weekend = bool(sid % 2)
            sid //= 2
        hour = sid % 24 if self.time else None
        return EnvState(light_level=light, storage_level=storage,
                        is_weekend=weekend, hour=hour)

    @classmethod
    def from_names(cls, names) -> "StateFeatureSet":
        wanted = {str(n).strip().lower() for n in names}
        known = {"sc", "light", "week", "time"}
        unknown = wanted - known
        if unknown:
            raise ValueError(f"unknown state features {sorted(unknown)}; choose from {sorted(known)}")
        return cls(light="light" in wanted, week="week" in wanted, time="time" in wanted)


SC_ONLY = StateFeatureSet(light=False, week=False, time=False)
DEFAULT_FEATURES = StateFeatureSet()


def discretize_light(lux: float) -> int:
    """Illuminance level 0..10: one level per 200 lux, saturating at 2000 lux."""
    if lux < 0:
        raise ValueError(f"lux must be non-negative, got {lux}")
    return min(N_LEVELS - 1, int(lux // LUX_PER_LEVEL))


def discretize_voltage(v: float, config: NodeEnergyConfig) -> int:
    """Storage level 0..10 over [v_min_operational, v_max], rounded half-up."""
    span = config.v_max - config.v_min_operational
    level = math.floor((N_LEVELS - 1) * (v - config.v_min_operational) / span + 0.5)
    return min(N_LEVELS - 1, max(0, level))


@dataclass(frozen=True)
class RewardConfig:
    """Per-step reward is the action index; depletion overrides it with a penalty."""

    depletion_penalty: float = -300.0
    steps_per_day: int = EPISODE_STEPS

    def validate(self, max_action_index: int) -> None:
        """The penalty must outweigh the best possible day of rewards."""
        bound = self.steps_per_day * max_action_index
        if abs(self.depletion_penalty) < bound:
            raise ValueError(
                f"depletion penalty {self.depletion_penalty} too small: needs magnitude >= "
                f"{self.steps_per_day} steps/day * max action {max_action_index} = {bound}"
            )


class StepOutcome(NamedTuple):
    state: EnvState
    state_id: int
    reward: float
    sends: int
    events_detected: int
    events_missed: int
    died: bool
    voltage: float
    done: bool          # True at each midnight boundary (episode end)


class Observation(NamedTuple):
    """What a controller sees at a window boundary."""

    lux: float
    voltage: float
    state: EnvState
    state_id: int


def prepare_trace(trace: LightTrace) -> LightTrace:
    """Resample a trace to the 15-minute control step (window means)."""
    trace.require_whole_days()
    prepared = resample(trace, SLOT_SECONDS, how="mean") if trace.step != SLOT_SECONDS else trace
    return prepared


class NodeEnv:
    """Simulated node stepping over a light trace in 15-minute windows.

    The capacitor voltage carries across days (and across resets, matching a
    continuous deployment) unless a reset passes an explicit voltage.
    """

    def __init__(
        self,
        trace: LightTrace,
        energy: NodeEnergyConfig | None = None,
        features: StateFeatureSet = DEFAULT_FEATURES,
        actions: ActionSet = DEFAULT_ACTIONS,
        reward: RewardConfig | None = None,
        mode: str = "periodic",
        events: EventTrace | None = None,
        start_voltage: float | None = None,
        carry_voltage: bool = True,
    ):
        if mode not in ("periodic", "event"):
            raise ValueError(f"unknown mode {mode!r}")
        self.energy = energy or NodeEnergyConfig()
        self.features = features
        self.actions = actions
        self.reward_config = reward or RewardConfig()
        self.reward_config.validate(actions.max_index)
        self.mode = mode
        self.trace = prepare_trace(trace)
        self.events = events
        if mode == "event" and events is None:
            raise ValueError("event mode needs an EventTrace")
        self.carry_voltage = carry_voltage
        self.start_voltage = self.energy.v_max if start_voltage is None else start_voltage

        cfg = self.energy
        lux = self.trace.lux
        self.n_windows = lux.size
        self.n_days = self.n_windows // SLOTS_PER_DAY
        scale = cfg.i_harvest_ref / cfg.lux_ref * SLOT_SECONDS / cfg.capacitance
        self._harvest_dv = (lux * scale).tolist()
        self._lux = lux.tolist()

        weekend = self.trace.weekend_by_day
        light_levels = np.minimum(N_LEVELS - 1, (lux // LUX_PER_LEVEL).astype(int))
        base = []
        for w in range(self.n_windows):
            hour = int((w * SLOT_SECONDS) // 3600) % 24
            base.append(features.encode(0, int(light_levels[w]), bool(weekend[w // SLOTS_PER_DAY]), hour))
        self._id_base = base
        self._light_levels = light_levels.tolist()
        self._weekend = weekend.tolist()

        # Per-action window load is constant in periodic mode.
        self._sleep = list(actions.sleep_times)
        self._charge_dv = []
        self._sends = []
        for t_sleep in actions.sleep_times:
            res = window_load(t_sleep, SLOT_SECONDS, cfg, mode="periodic")
            self._charge_dv.append(res.charge / cfg.capacitance)
            self._sends.append(res.load.n_sends)

        self._span = cfg.v_max - cfg.v_min_operational
        self._started = False
        self.detected_times: list[float] = []
        self.reset(0)

    # -- state helpers ----------------------------------------------------

    def _storage_level(self, v: float) -> int:
        level = math.floor((N_LEVELS - 1) * (v - self.energy.v_min_operational) / self._span + 0.5)
        if level < 0:
            return 0
        if level > N_LEVELS - 1:
            return N_LEVELS - 1
        return level

    def _boundary_window(self) -> int:
        # The final boundary of the trace observes the last window's light.
        return self._window if self._window < self.n_windows else self.n_windows - 1

    def state_id(self) -> int:
        return self._id_base[self._boundary_window()] + self._storage_level(self.voltage)

    def observe(self) -> EnvState:
        w = self._boundary_window()
        hour = int((w * SLOT_SECONDS) // 3600) % 24
        return EnvState(
            light_level=self._light_levels[w],
            storage_level=self._storage_level(self.voltage),
            is_weekend=self._weekend[w // SLOTS_PER_DAY],
            hour=hour if self.features.time else None,
        )

    def observation(self) -> Observation:
        return Observation(
            lux=self._lux[self._boundary_window()],
            voltage=self.voltage,
            state=self.observe(),
            state_id=self.state_id(),
        )

    @property
    def day(self) -> int:
        return self._window // SLOTS_PER_DAY

    @property
    def slot(self) -> int:
        return self._window % SLOTS_PER_DAY

    @property
    def time_seconds(self) -> float:
        return self._window * SLOT_SECONDS

    # -- control ----------------------------------------------------------

    def reset(self, day_index: int = 0, voltage: float | None = None) -> EnvState:
        """Position the environment at the start of a day.

        The capacitor keeps its carried-over voltage unless ``voltage`` is
        given (or carry is disabled, or this is the first reset): then it
        starts at ``start_voltage``.
        """
        if not 0 <= day_index < self.n_days:
            raise ValueError(f"day {day_index} outside trace of {self.n_days} days")
        self._window = day_index * SLOTS_PER_DAY
        if voltage is not None:
            self.voltage = voltage
        elif not (self.carry_voltage and self._started):
            self.voltage = self.start_voltage
        self._started = True
        self.alive = self.voltage >= self.energy.v_dead
        self._carry = ()
        self.detected_times = []
        return self.observe()

    def _advance(self, a: int):
        """Advance one window under action index ``a``; the fast inner step."""
        w = self._window
        if w >= self.n_windows:
            raise TraceExhausted(f"no trace data past window {w}")
        cfg = self.energy
        alive = self.alive
        detected = 0
        missed = 0
        if self.mode == "periodic":
            if alive:
                dv = self._harvest_dv[w] - self._charge_dv[a]
                sends = self._sends[a]
            else:
                dv = self._harvest_dv[w]
                sends = 0
        else:
            t0 = w * SLOT_SECONDS
            offsets = self.events.window(t0, t0 + SLOT_SECONDS) - t0
            if alive:
                res: WindowLoadResult = window_load(
                    self._sleep[a], SLOT_SECONDS, cfg,
                    mode="event", event_offsets=offsets, carry=self._carry,
                )
                dv = self._harvest_dv[w] - res.charge / cfg.capacitance
                sends = res.load.n_sends
                detected = res.load.pir_events_detected
                missed = len(offsets) - detected
                self._carry = res.carry
                if detected:
                    self.detected_times.extend(t0 + off for off in res.detected_offsets)
            else:
                dv = self._harvest_dv[w]
                sends = 0
                missed = len(offsets)
                self._carry = ()

        v = self.voltage + dv
        if v < 0.0:
            v = 0.0
        elif v > cfg.v_max:
            v = cfg.v_max
        dead_at_end = v < cfg.v_dead
        died = alive and dead_at_end
        reward = self.reward_config.depletion_penalty if dead_at_end else float(a)
        self.voltage = v
        self.alive = not dead_at_end
        self._window = w + 1
        next_id = self._id_base[self._boundary_window()] + self._storage_level(v)
        return next_id, reward, sends, detected, missed, died

    def step(self, action) -> StepOutcome:
        """Apply one action over the next 15-minute window."""
        a = action.index if isinstance(action, Action) else int(action)
        if not 0 <= a < self.actions.n:
            raise ValueError(f"action index {a} outside 0..{self.actions.max_index}")
        next_id, reward, sends, detected, missed, died = self._advance(a)
        return StepOutcome(
            state=self.observe(),
            state_id=next_id,
            reward=reward,
            sends=sends,
            events_detected=detected,
            events_missed=missed,
            died=died,
            voltage=self.voltage,
            done=self._window % SLOTS_PER_DAY == 0,
        )


# ---------------------------------------------------------------------------
# Episode logs
# ---------------------------------------------------------------------------

LOG_COLUMNS = (
    "step", "timestamp", "lux", "voltage", "state_id", "action",
    "reward", "sends", "events_detected", "events_missed", "alive",
)


@dataclass
class EpisodeLog:
    """Per-window telemetry of a deployment run.

    ``voltage`` and ``alive`` describe the end of each window; ``timestamp``
    is the window start in seconds since trace start.
    """

    step: np.ndarray
    timestamp: np.ndarray
    lux: np.ndarray
    voltage: np.ndarray
    state_id: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    sends: np.ndarray
    events_detected: np.ndarray
    events_missed: np.ndarray
    alive: np.ndarray

    def __len__(self) -> int:
        return int(self.step.size)

    @property
    def total_reward(self) -> float:
        return float(self.reward.sum())

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
            for i in range(len(self)):
                writer.writerow([
                    int(self.step[i]), f"{self.timestamp[i]:.0f}", f"{self.lux[i]:.4f}",
                    f"{self.voltage[i]:.6f}", int(self.state_id[i]), int(self.action[i]),
                    f"{self.reward[i]:.1f}", int(self.sends[i]), int(self.events_detected[i]),
                    int(self.events_missed[i]), int(self.alive[i]),
                ])

    @classmethod
    def read_csv(cls, path) -> "EpisodeLog":
        rows = {name: [] for name in LOG_COLUMNS}
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(LOG_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing log columns {sorted(missing)}")
            for row in reader:
                for name in LOG_COLUMNS:
                    rows[name].append(float(row[name]))
        ints = {"step", "state_id", "action", "sends", "events_detected", "events_missed"}
        data = {}
        for name in LOG_COLUMNS:
            arr = np.asarray(rows[name])
            if name in ints:
                arr = arr.astype(int)
            elif name == "alive":
                arr = arr.astype(bool)
            data[name] = arr
        return cls(**data)

    @classmethod
    def concat(cls, logs) -> "EpisodeLog":
        logs = list(logs)
        if not logs:
            raise ValueError("nothing to concatenate")
        return cls(**{
            name: np.concatenate([getattr(log, name) for log in logs])
            for name in LOG_COLUMNS
        })

    def slice_steps(self, first: int, last: int) -> "EpisodeLog":
        return EpisodeLog(**{name: getattr(self, name)[first:last].copy() for name in LOG_COLUMNS})


class _LogBuilder:
    def __init__(self):
        self.rows = {name: [] for name in LOG_COLUMNS}

    def add(self, env: NodeEnv, window: int, lux: float, action: int, out: StepOutcome):
        r = self.rows
        r["step"].append(window)
        r["timestamp"].append(window * SLOT_SECONDS)
        r["lux"].append(lux)
        r["voltage"].append(out.voltage)
        r["state_id"].append(out.state_id)
        r["action"].append(action)
        r["reward"].append(out.reward)
        r["sends"].append(out.sends)
        r["events_detected"].append(out.events_detected)
        r["events_missed"].append(out.events_missed)
        r["alive"].append(not out.voltage < env.energy.v_dead)

    def build(self) -> EpisodeLog:
        ints = {"step", "state_id", "action", "sends", "events_detected", "events_missed"}
        data = {}
        for name in LOG_COLUMNS:
            arr = np.asarray(self.rows[name])
            if name in ints:
                arr = arr.astype(int)
            elif name == "alive":
                arr = arr.astype(bool)
            data[name] = arr
        return EpisodeLog(**data)


def rollout(
    env: NodeEnv,
    policy: Callable[[Observation], int],
    start_day: int = 0,
    n_days: int | None = None,
    reset: bool = True,
    voltage: float | None = None,
) -> EpisodeLog:
    """Drive the environment with a policy and record a per-window log.

    ``policy`` is any callable mapping an :class:`Observation` to an action
    index (objects with a ``reset`` method are reset first).  Detected event
    times, when in event mode, accumulate on ``env.detected_times``.
    """
    if reset:
        env.reset(start_day, voltage=voltage)
    if hasattr(policy, "reset"):
        policy.reset()
    n_days = env.n_days - start_day if n_days is None else n_days
    builder = _LogBuilder()
    for _ in range(n_days * SLOTS_PER_DAY):
        window = env._window
        obs = env.observation()
        a = policy(obs)
        out = env.step(a)
        builder.add(env, window, obs.lux, a, out)
    return builder.build()
