"""Tabular Q-learning trainer and the three training strategies.

Epsilon convention
------------------
Throughout this package ``epsilon`` is the probability of taking the
GREEDY (exploiting) action; the complement is a uniformly random action.
This is inverted from the textbook epsilon-greedy convention, so an
``epsilon`` of 1.0 means pure exploitation and the schedule *grows* from
``epsilon_min`` toward ``epsilon_max`` during training.

Strategies:

* one-time: train once on a multi-day trace, deploy the frozen table.
* day-by-day: deploy, then retrain every night on the past day's data,
  starting from the previous day's table.
* transfer: start from a donor table (copied verbatim) or from a general
  table trained on concatenated traces from several lighting contexts.
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import (
    DEFAULT_ACTIONS,
    DEFAULT_FEATURES,
    EPISODE_STEPS,
    ActionSet,
    EpisodeLog,
    NodeEnv,
    Observation,
    RewardConfig,
    StateFeatureSet,
    rollout,
)
from .traces import LightTrace

_MAGIC = b"HRLQ"
_VERSION = 1


class QTableLoadError(ValueError):
    """Q-table file is corrupt, truncated, or from an incompatible version."""


@dataclass
class AgentConfig:
    """Q-learning hyper-parameters (defaults used for all simulations)."""

    gamma: float = 0.99
    alpha: float = 0.1
    epsilon_min: float = 0.1
    epsilon_max: float = 1.0
    epsilon_increment: float = 0.0004
    episode_steps: int = EPISODE_STEPS       # 24 h of 15-minute windows
    training_days: int = 15                  # minimum trace length for one-time training
    deploy_epsilon: float = 1.0              # greedy deployment (0.9 keeps some exploration)
    convergence_threshold: float = 0.05      # relative mean-Q change per checkpoint
    convergence_checks: int = 3              # consecutive checkpoints below threshold
    checkpoint_every: int = 100              # episodes between mean-Q checkpoints
    episode_cap: int = 20000
    wall_clock_limit: float | None = 1800.0  # seconds; None disables the cap

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0 <= self.epsilon_min <= self.epsilon_max <= 1:
            raise ValueError("need 0 <= epsilon_min <= epsilon_max <= 1")
        if self.epsilon_increment < 0:
            raise ValueError("epsilon_increment must be non-negative")
        if self.episode_cap < 0 or self.checkpoint_every < 1:
            raise ValueError("bad episode_cap or checkpoint_every")


class QTable:
    """Dense (state, action) value table tied to a feature and action set."""

    def __init__(self, features: StateFeatureSet = DEFAULT_FEATURES,
                 actions: ActionSet = DEFAULT_ACTIONS,
                 values: np.ndarray | None = None):
        self.features = features
        self.actions = actions
        shape = (features.n_states, actions.n)
        if values is None:
            values = np.zeros(shape)
        else:
            values = np.asarray(values, dtype=float)
            if values.shape != shape:
                raise ValueError(f"values shape {values.shape} does not match {shape}")
        self.values = values
        self.version = _VERSION

    @classmethod
    def random_init(cls, features, actions, rng, scale: float = 0.01) -> "QTable":
        """Optional random initialisation (zero-init is the default everywhere)."""
        values = rng.normal(0.0, scale, (features.n_states, actions.n))
        return cls(features, actions, values)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "QTable":
        return QTable(self.features, self.actions, self.values.copy())

    def mean_value(self) -> float:
        return float(self.values.mean())

    def greedy(self, state_id: int) -> int:
        """Greedy action; ties break toward the lowest index (longest sleep)."""
        return int(self.values[state_id].argmax())

    def is_unseen(self, state_id: int) -> bool:
        """A never-updated state keeps its all-zero row (the table analogue of
        'state not listed')."""
        return not self.values[state_id].any()

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, QTable)
            and self.features == other.features
            and self.actions == other.actions
            and np.array_equal(self.values, other.values)
        )

    # -- serialization ----------------------------------------------------

    def to_bytes(self) -> bytes:
        flags = (1 if self.features.light else 0) | \
                (2 if self.features.week else 0) | \
                (4 if self.features.time else 0)
        head = _MAGIC + struct.pack("<HBH", _VERSION, flags, self.actions.n)
        head += struct.pack(f"<{self.actions.n}d", *self.actions.sleep_times)
        head += struct.pack("<I", self.n_states)
        payload = self.values.astype("<f8").tobytes()
        body = head + payload
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "QTable":
        if len(blob) < len(_MAGIC) + 9 or blob[:4] != _MAGIC:
            raise QTableLoadError("not a Q-table file")
        stored_crc = struct.unpack("<I", blob[-4:])[0]
        if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
            raise QTableLoadError("checksum mismatch (file truncated or corrupt)")
        version, flags, n_actions = struct.unpack_from("<HBH", blob, 4)
        if version != _VERSION:
            raise QTableLoadError(f"unsupported Q-table version {version}")
        off = 4 + 5
        sleep_times = struct.unpack_from(f"<{n_actions}d", blob, off)
        off += 8 * n_actions
        (n_states,) = struct.unpack_from("<I", blob, off)
        off += 4
        features = StateFeatureSet(light=bool(flags & 1), week=bool(flags & 2), time=bool(flags & 4))
        actions = ActionSet(tuple(sleep_times))
        expected = n_states * n_actions * 8
        payload = blob[off:-4]
        if len(payload) != expected:
            raise QTableLoadError(f"payload holds {len(payload)} bytes, expected {expected}")
        if n_states != features.n_states:
            raise QTableLoadError(
                f"state count {n_states} does not match feature set ({features.n_states})"
            )
        values = np.frombuffer(payload, dtype="<f8").reshape(n_states, n_actions).copy()
        return cls(features, actions, values)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "QTable":
        return cls.from_bytes(Path(path).read_bytes())


def save_qtable(q: QTable, path) -> None:
    q.save(path)


def load_qtable(path) -> QTable:
    return QTable.load(path)


# ---------------------------------------------------------------------------
# Core algorithm pieces
# ---------------------------------------------------------------------------

def select_action(q: QTable, state_id: int, epsilon: float, rng) -> int:
    """Pick the greedy action with probability ``epsilon``, else uniform random.

    Note the inverted convention: ``epsilon`` is the exploitation
    probability.  Greedy ties break toward the lowest action index.
    """
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() <= epsilon:
        return int(q.values[state_id].argmax())
    return int(rng.integers(q.n_actions))


def q_update(q: QTable, s: int, a: int, r: float, s_next: int,
             alpha: float, gamma: float) -> None:
    """One temporal-difference backup: Q(s,a) += alpha * (r + gamma*maxQ(s') - Q(s,a))."""
    values = q.values
    values[s, a] += alpha * (r + gamma * values[s_next].max() - values[s, a])


def epsilon_schedule(step_count: int, config: AgentConfig) -> float:
    """Exploitation probability after ``step_count`` training steps (monotone, capped)."""
    if step_count < 0:
        raise ValueError("step_count must be non-negative")
    return min(config.epsilon_max, config.epsilon_min + config.epsilon_increment * step_count)


def has_converged(mean_q_history, threshold: float = 0.05, checks: int = 3,
                  tiny: float = 1e-12) -> bool:
    """True when the mean Q value moved less than ``threshold`` (relative) over
    each of the last ``checks`` consecutive checkpoint pairs."""
    hist = list(mean_q_history)
    if len(hist) < checks + 1:
        return False
    for prev, cur in zip(hist[-checks - 1:-1], hist[-checks:]):
        if abs(cur - prev) / max(abs(prev), tiny) >= threshold:
            return False
    return True


@dataclass
class TrainingRun:
    """Bookkeeping of one training run."""

    episode_rewards: np.ndarray
    mean_q_history: np.ndarray
    episodes: int
    converged: bool
    elapsed: float
    steps: int


def train(env: NodeEnv, config: AgentConfig, rng, q: QTable | None = None,
          allowed_days=None) -> tuple[QTable, TrainingRun]:
    """Run Q-learning episodes on ``env`` until convergence or the episode cap.

    Episodes sample a uniformly random start day from ``allowed_days``
    (default: every day of the trace) and the capacitor voltage carries
    across episodes.  The epsilon schedule advances one increment per step
    across the whole run.
    """
    if q is None:
        q = QTable(env.features, env.actions)
    else:
        if q.features != env.features or q.actions != env.actions:
            raise ValueError("Q-table feature/action sets do not match the environment")
    days = list(allowed_days) if allowed_days is not None else list(range(env.n_days))
    if not days:
        raise ValueError("no days available for training")

    values = q.values
    n_actions = q.n_actions
    alpha = config.alpha
    gamma = config.gamma
    eps0 = config.epsilon_min
    eps_max = config.epsilon_max
    d_eps = config.epsilon_increment
    steps_per_episode = config.episode_steps
    advance = env._advance

    episode_rewards: list[float] = []
    mean_q: list[float] = []
    converged = False
    step_count = 0
    t_start = time.monotonic()

    for episode in range(config.episode_cap):
        env.reset(days[rng.integers(len(days))])
        s = env.state_id()
        total = 0.0
        for _ in range(steps_per_episode):
            eps = eps0 + d_eps * step_count
            if eps > eps_max:
                eps = eps_max
            if rng.random() <= eps:
                a = int(values[s].argmax())
            else:
                a = int(rng.integers(n_actions))
            s2, r, _, _, _, _ = advance(a)
            values[s, a] += alpha * (r + gamma * values[s2].max() - values[s, a])
            total += r
            s = s2
            step_count += 1
        episode_rewards.append(total)
        if (episode + 1) % config.checkpoint_every == 0:
            mean_q.append(float(values.mean()))
            if has_converged(mean_q, config.convergence_threshold, config.convergence_checks):
                converged = True
                break
        if config.wall_clock_limit is not None and time.monotonic() - t_start > config.wall_clock_limit:
            break

    run = TrainingRun(
        episode_rewards=np.asarray(episode_rewards),
        mean_q_history=np.asarray(mean_q),
        episodes=len(episode_rewards),
        converged=converged,
        elapsed=time.monotonic() - t_start,
        steps=step_count,
    )
    return q, run


def train_one_time(env: NodeEnv, config: AgentConfig, seed: int,
                   initial: QTable | None = None) -> tuple[QTable, TrainingRun]:
    """One-shot training over a historical trace of at least ``training_days`` days."""
    if env.n_days < config.training_days:
        raise ValueError(
            f"trace covers {env.n_days} days; one-time training needs {config.training_days}"
        )
    rng = np.random.default_rng(seed)
    q = initial.copy() if initial is not None else None
    return train(env, config, rng, q=q)


# ---------------------------------------------------------------------------
# Deployment helpers
# ---------------------------------------------------------------------------

class GreedyTablePolicy:
    """Deployment policy: greedy on the table, random on unseen states.

    With ``epsilon < 1`` the policy keeps exploring at deployment time (the
    one-time deployments use 0.9).  ``unseen_random=True`` mirrors how a
    deployed node handles a state missing from its table (random action);
    with ``unseen_random=False`` a never-updated all-zero row falls back to
    the argmax tie-break, i.e. the slowest action.
    """

    def __init__(self, q: QTable, rng, epsilon: float = 1.0, unseen_random: bool = True):
        self.q = q
        self.rng = rng
        self.epsilon = epsilon
        self.unseen_random = unseen_random

    def reset(self):
        pass

    def __call__(self, obs: Observation) -> int:
        s = obs.state_id
        if (self.unseen_random and self.q.is_unseen(s)) or self.rng.random() > self.epsilon:
            return int(self.rng.integers(self.q.n_actions))
        return self.q.greedy(s)


class FixedActionPolicy:
    """Always the same action index (day zero of a cold day-by-day run)."""

    def __init__(self, index: int = 0):
        self.index = index

    def reset(self):
        pass

    def __call__(self, obs: Observation) -> int:
        return self.index


@dataclass
class DayByDayResult:
    tables: list            # nightly snapshots: tables[d] is trained after day d
    logs: list              # one EpisodeLog per deployed day
    training_runs: list     # nightly TrainingRun objects, one per retrain
    initial: "QTable | None" = None   # table deployed on day 0 (None = fixed policy)
    detected_times: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def deployment_log(self) -> EpisodeLog:
        return EpisodeLog.concat(self.logs)

    def deployed_table(self, day: int):
        """Table that drove day ``day`` (None means the fixed day-0 policy)."""
        return self.initial if day == 0 else self.tables[day - 1]


def train_day_by_day(
    trace: LightTrace,
    *,
    agent_config: AgentConfig,
    seed: int,
    energy=None,
    features: StateFeatureSet = DEFAULT_FEATURES,
    actions: ActionSet = DEFAULT_ACTIONS,
    reward: RewardConfig | None = None,
    mode: str = "periodic",
    events=None,
    initial: QTable | None = None,
    n_days: int | None = None,
) -> DayByDayResult:
    """Deploy and retrain nightly.

    Day 0 runs a fixed slowest-action policy unless an initial table is
    supplied (the transfer path).  Every night a new table is trained in the
    simulator on the past day's light data, starting from the previous
    table, and drives the node greedily the next day.  Deployment voltage
    carries across days.
    """
    seeds = np.random.SeedSequence(seed).spawn(2)
    deploy_rng = np.random.default_rng(seeds[0])
    train_rng = np.random.default_rng(seeds[1])

    deploy_env = NodeEnv(trace, energy=energy, features=features, actions=actions,
                         reward=reward, mode=mode, events=events, carry_voltage=True)
    n_days = deploy_env.n_days if n_days is None else n_days
    if n_days < 1:
        raise ValueError("need at least one day of trace")

    # Nightly retraining runs in its own simulator instance over the same trace.
    sim_env = NodeEnv(trace, energy=energy, features=features, actions=actions,
                      reward=reward, mode=mode, events=events, carry_voltage=True)

    table = initial.copy() if initial is not None else None
    tables: list = []
    logs: list = []
    runs: list = []
    detected: list = []

    for day in range(n_days):
        if table is None:
            policy = FixedActionPolicy(0)
        else:
            policy = GreedyTablePolicy(table, deploy_rng, epsilon=1.0)
        deploy_env.reset(day)  # keeps the carried-over capacitor voltage
        day_start_voltage = deploy_env.voltage
        log = rollout(deploy_env, policy, start_day=day, n_days=1, reset=False)
        detected.extend(deploy_env.detected_times)
        logs.append(log)

        # Overnight: learn from today's data, inheriting the current table
        # (never reinitialised, so earlier days keep feeding later policies).
        # The first episode starts at the voltage the day actually opened
        # with; later episodes carry voltage, reaching the drained bands the
        # deployment can wander into.
        sim_env.reset(day, voltage=day_start_voltage)
        table, run = train(sim_env, agent_config, train_rng, q=table, allowed_days=[day])
        tables.append(table.copy())
        runs.append(run)

    return DayByDayResult(tables=tables, logs=logs, training_runs=runs,
                          initial=initial, detected_times=np.asarray(detected))


def transfer_copy(donor: QTable, features: StateFeatureSet, actions: ActionSet) -> QTable:
    """Verbatim copy of a donor table (similar-lighting transfer)."""
    if donor.features != features or donor.actions != actions:
        raise ValueError("donor table feature/action sets do not match the target node")
    return donor.copy()


def transfer_init(sources, *, agent_config: AgentConfig | None = None, seed: int = 0,
                  energy=None, features: StateFeatureSet = DEFAULT_FEATURES,
                  actions: ActionSet = DEFAULT_ACTIONS, reward: RewardConfig | None = None,
                  mode: str = "periodic", events=None) -> QTable:
    """Build an initial policy for a new node.

    ``sources`` may be an existing :class:`QTable` (copied verbatim) or a
    list of traces from multiple lighting contexts, which are concatenated
    into a single general training run.
    """
    if isinstance(sources, QTable):
        return transfer_copy(sources, features, actions)
    from .traces import concat_traces

    traces = list(sources)
    if not traces:
        raise ValueError("no transfer sources supplied")
    merged = concat_traces(traces)
    if agent_config is None:
        agent_config = AgentConfig()
    env = NodeEnv(merged, energy=energy, features=features, actions=actions,
                  reward=reward, mode=mode, events=events)
    q, _ = train(env, agent_config, np.random.default_rng(seed))
    return q
