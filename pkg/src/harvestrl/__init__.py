"""harvestrl: a desk-scale simulation lab for reinforcement-learning
duty-cycle control of solar-harvesting sensor nodes.

The package models a supercapacitor-backed BLE node (``energy``), drives it
over real or synthetic light traces (``traces``) through a discretised
15-minute control loop (``env``), trains tabular Q-learning policies with
one-time, day-by-day, and transfer strategies (``agent``), compares them
against reference controllers (``baselines``), and scores everything with
duty-cycle, dead-time, energy-neutrality, and event-detection metrics
(``metrics``).  ``experiments`` and ``cli`` tie the pieces into
reproducible, seeded runs.
"""

from .traces import (
    ARCHETYPES,
    Archetype,
    EventTrace,
    LightTrace,
    TraceParseError,
    TraceValidationError,
    concat_traces,
    gen_events,
    gen_synthetic,
    get_archetype,
    load_events,
    load_trace,
    resample,
    save_events,
    save_trace,
)
from .energy import (
    EVENT_LIFETIME_TARGETS,
    PERIODIC_LIFETIME_TARGETS,
    CalibrationError,
    NodeEnergyConfig,
    SupercapState,
    WindowLoad,
    calibrate_active_time,
    harvest_current,
    simulate_discharge,
    step_capacitor,
    window_load,
)
from .env import (
    DEFAULT_ACTIONS,
    DEFAULT_FEATURES,
    EIGHT_ACTIONS,
    EPISODE_STEPS,
    SC_ONLY,
    TWO_ACTIONS,
    Action,
    ActionSet,
    EnvState,
    EpisodeLog,
    NodeEnv,
    Observation,
    RewardConfig,
    StateFeatureSet,
    StepOutcome,
    TraceExhausted,
    discretize_light,
    discretize_voltage,
    prepare_trace,
    rollout,
)
from .agent import (
    AgentConfig,
    DayByDayResult,
    FixedActionPolicy,
    GreedyTablePolicy,
    QTable,
    QTableLoadError,
    TrainingRun,
    epsilon_schedule,
    has_converged,
    load_qtable,
    q_update,
    save_qtable,
    select_action,
    train,
    train_day_by_day,
    train_one_time,
    transfer_copy,
    transfer_init,
)
from .baselines import (
    POLICY_NAMES,
    FixedPolicy,
    MoteLocalPolicy,
    Online3Policy,
    Online3Table,
    fixed_policy,
    mote_local_policy,
    sc_only_policy,
    train_one_time_half,
    train_online3,
    train_sc_only,
)
from .metrics import (
    MetricsReport,
    UndefinedMetricError,
    dead_time,
    debounce_events,
    duty_cycle_period,
    duty_cycle_ratio,
    energy_neutrality,
    event_detection_rate,
    report_from_log,
    reward_curve,
    voltage_percent,
)
from .experiments import ExperimentConfig, scaled_penalty

__version__ = "0.1.0"
