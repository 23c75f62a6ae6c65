"""Reference controllers the learned policy is compared against.

Every controller maps a window-boundary :class:`~harvestrl.env.Observation`
to an action index, never looking ahead in the trace:

* fixed-period duty cycling (the battery-powered baseline),
* a local hill-climbing heuristic on light and voltage trend,
* Q-learning restricted to the storage level as its only state,
* online Q-learning that can only raise/hold/lower the current ladder level,
* one-time Q-learning trained on only the first half of the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import AgentConfig, GreedyTablePolicy, QTable, TrainingRun, train
from .env import (
    DEFAULT_ACTIONS,
    DEFAULT_FEATURES,
    SC_ONLY,
    ActionSet,
    NodeEnv,
    Observation,
    RewardConfig,
    StateFeatureSet,
)
from .traces import LightTrace

POLICY_NAMES = ("fixed", "mote_local", "sc_only", "online3", "one_time_half", "aces")


class FixedPolicy:
    """Always the same duty-cycle period, blind to the energy state."""

    def __init__(self, period: float, actions: ActionSet = DEFAULT_ACTIONS):
        index = actions.index_for_sleep(period)
        if index is None:
            raise ValueError(
                f"period {period} s is not in the action ladder {actions.sleep_times}; "
                "build the environment with an ActionSet containing it"
            )
        self.index = index

    def reset(self):
        pass

    def __call__(self, obs: Observation) -> int:
        return self.index


def fixed_policy(period: float, actions: ActionSet = DEFAULT_ACTIONS) -> FixedPolicy:
    return FixedPolicy(period, actions)


class MoteLocalPolicy:
    """Hill climbing on the action index, one move per window.

    Light available and the capacitor charging: sense faster (index + 1).
    Light off or the voltage falling: back off (index - 1).  Starts at the
    slowest action.  A capacitor pinned at ``v_max`` under light counts as
    charging (harvest exceeds the load); the strict falling/rising test
    would wedge the controller at the slowest action whenever the cap
    saturates.  On alternating charge/discharge windows the index
    oscillates by one step; that is inherent to the rule.
    """

    def __init__(self, actions: ActionSet = DEFAULT_ACTIONS, v_max: float = 5.5):
        self.actions = actions
        self.v_max = v_max
        self.reset()

    def reset(self):
        self.index = 0
        self._prev_voltage: float | None = None

    def __call__(self, obs: Observation) -> int:
        if self._prev_voltage is not None:
            charging = obs.voltage > self._prev_voltage or obs.voltage >= self.v_max
            if obs.lux > 0 and charging:
                self.index = min(self.actions.max_index, self.index + 1)
            else:
                self.index = max(0, self.index - 1)
        self._prev_voltage = obs.voltage
        return self.index


def mote_local_policy(actions: ActionSet = DEFAULT_ACTIONS) -> MoteLocalPolicy:
    return MoteLocalPolicy(actions)


def train_sc_only(
    trace: LightTrace,
    agent_config: AgentConfig,
    seed: int,
    *,
    energy=None,
    actions: ActionSet = DEFAULT_ACTIONS,
    reward: RewardConfig | None = None,
    mode: str = "periodic",
    events=None,
    days=None,
) -> tuple[QTable, TrainingRun]:
    """Same Q-learning pipeline with the storage level as the only state (11 states)."""
    env = NodeEnv(trace, energy=energy, features=SC_ONLY, actions=actions,
                  reward=reward, mode=mode, events=events)
    return train(env, agent_config, np.random.default_rng(seed), allowed_days=days)


def train_one_time_half(
    trace: LightTrace,
    agent_config: AgentConfig,
    seed: int,
    *,
    energy=None,
    features: StateFeatureSet = DEFAULT_FEATURES,
    actions: ActionSet = DEFAULT_ACTIONS,
    reward: RewardConfig | None = None,
    mode: str = "periodic",
    events=None,
) -> tuple[QTable, TrainingRun, int]:
    """One-time training restricted to the first half of the trace.

    Returns the table, the run, and the first evaluation day (= half point):
    a 7-day trace trains on days [0, 3) and is meant to be evaluated
    greedily on days [3, 7) with no retraining.
    """
    env = NodeEnv(trace, energy=energy, features=features, actions=actions,
                  reward=reward, mode=mode, events=events)
    if env.n_days < 2:
        raise ValueError("half-data training needs at least two days of trace")
    half = env.n_days // 2
    q, run = train(env, agent_config, np.random.default_rng(seed),
                   allowed_days=range(half))
    return q, run, half


# ---------------------------------------------------------------------------
# Online 3-action variant (raise / hold / lower the ladder level)
# ---------------------------------------------------------------------------

N_ONLINE_MOVES = 3  # lower, hold, raise


@dataclass
class Online3Table:
    """Q-table over (environment state x current ladder level) -> move."""

    values: np.ndarray          # (n_env_states * n_levels, 3)
    features: StateFeatureSet
    actions: ActionSet          # the underlying sleep ladder

    def state_of(self, env_state_id: int, level: int) -> int:
        return env_state_id * self.actions.n + level


def train_online3(
    trace: LightTrace,
    agent_config: AgentConfig,
    seed: int,
    *,
    energy=None,
    features: StateFeatureSet = DEFAULT_FEATURES,
    actions: ActionSet = DEFAULT_ACTIONS,
    reward: RewardConfig | None = None,
    mode: str = "periodic",
    events=None,
    days=None,
) -> tuple[Online3Table, TrainingRun]:
    """Q-learning over the moves {lower, hold, raise} applied to the sleep ladder.

    The current ladder level joins the state (the move semantics are not
    Markov without it); the reward is the resulting ladder level, with the
    usual depletion override coming from the environment.
    """
    import time as _time

    env = NodeEnv(trace, energy=energy, features=features, actions=actions,
                  reward=reward, mode=mode, events=events)
    rng = np.random.default_rng(seed)
    n_levels = actions.n
    table = Online3Table(
        values=np.zeros((features.n_states * n_levels, N_ONLINE_MOVES)),
        features=features,
        actions=actions,
    )
    values = table.values
    day_pool = list(days) if days is not None else list(range(env.n_days))

    alpha, gamma = agent_config.alpha, agent_config.gamma
    eps0, eps_max, d_eps = (agent_config.epsilon_min, agent_config.epsilon_max,
                            agent_config.epsilon_increment)
    rewards = []
    mean_q = []
    converged = False
    step_count = 0
    level = 0
    t0 = _time.monotonic()
    for episode in range(agent_config.episode_cap):
        env.reset(day_pool[rng.integers(len(day_pool))])
        s = env.state_id() * n_levels + level
        total = 0.0
        for _ in range(agent_config.episode_steps):
            eps = min(eps_max, eps0 + d_eps * step_count)
            if rng.random() <= eps:
                move = int(values[s].argmax())
            else:
                move = int(rng.integers(N_ONLINE_MOVES))
            level = min(n_levels - 1, max(0, level + move - 1))
            s2_env, r, _, _, _, _ = env._advance(level)
            s2 = s2_env * n_levels + level
            values[s, move] += alpha * (r + gamma * values[s2].max() - values[s, move])
            total += r
            s = s2
            step_count += 1
        rewards.append(total)
        if (episode + 1) % agent_config.checkpoint_every == 0:
            mean_q.append(float(values.mean()))
            from .agent import has_converged

            if has_converged(mean_q, agent_config.convergence_threshold,
                             agent_config.convergence_checks):
                converged = True
                break
    run = TrainingRun(
        episode_rewards=np.asarray(rewards),
        mean_q_history=np.asarray(mean_q),
        episodes=len(rewards),
        converged=converged,
        elapsed=_time.monotonic() - t0,
        steps=step_count,
    )
    return table, run


class Online3Policy:
    """Deploys an :class:`Online3Table`: greedy move, random on unseen states."""

    def __init__(self, table: Online3Table, rng):
        self.table = table
        self.rng = rng
        self.reset()

    def reset(self):
        self.level = 0

    def __call__(self, obs: Observation) -> int:
        s = obs.state_id * self.table.actions.n + self.level
        row = self.table.values[s]
        if row.any():
            move = int(row.argmax())
        else:
            move = int(self.rng.integers(N_ONLINE_MOVES))
        self.level = min(self.table.actions.n - 1, max(0, self.level + move - 1))
        return self.level


def sc_only_policy(q: QTable, rng) -> GreedyTablePolicy:
    return GreedyTablePolicy(q, rng, epsilon=1.0)
