"""Light and motion-event traces.

Everything downstream of this module runs off two kinds of input data:

* ``LightTrace`` -- a uniformly sampled illuminance record (lux) such as the
  ones exported by an indoor deployment logger.  Traces can be loaded from
  CSV, resampled to a coarser step, or synthesised from one of five indoor
  lighting archetypes (conference room, staircase, middle of an office,
  window, office door).
* ``EventTrace`` -- motion-event timestamps, generated as a Poisson process
  with separate weekday and weekend daily rates.

All generators are deterministic for a given seed: the same
``(archetype, days, seed)`` triple always produces a bit-identical trace.
Synthetic traces start on a Monday by convention so weekday/weekend flags
can be derived from the sample timestamps alone.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

SECONDS_PER_DAY = 86400.0
SLOT_SECONDS = 900.0  # decision interval of the control loop (15 min)
SLOTS_PER_DAY = 96

#: Synthetic traces are anchored here (a Monday, midnight).
SYNTHETIC_START = datetime(2024, 1, 1, 0, 0, 0)

#: Multiplicative per-sample sensor jitter applied to synthetic traces.
SAMPLE_JITTER = 0.02


class TraceParseError(ValueError):
    """A trace CSV row could not be parsed (carries the 1-based line number)."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TraceValidationError(ValueError):
    """Trace contents violate an invariant (ordering, sign, uniformity)."""


def _parse_timestamp(text: str) -> float:
    """Return epoch seconds from an integer/float epoch or an RFC-3339 string."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ValueError(f"unrecognised timestamp {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


@dataclass(frozen=True)
class LightTrace:
    """Uniformly sampled illuminance record.

    ``lux[i]`` is the illuminance at ``start + i * step``.  ``start`` is a
    naive UTC datetime; weekday/weekend flags are derived from it.
    """

    lux: np.ndarray
    step: float
    start: datetime = SYNTHETIC_START

    def __post_init__(self):
        lux = np.asarray(self.lux, dtype=float)
        object.__setattr__(self, "lux", lux)
        if lux.ndim != 1 or lux.size == 0:
            raise TraceValidationError("trace must hold at least one sample")
        if self.step <= 0:
            raise TraceValidationError(f"step must be positive, got {self.step}")
        if not np.all(np.isfinite(lux)):
            raise TraceValidationError("trace contains non-finite lux values")
        if np.any(lux < 0):
            i = int(np.argmax(lux < 0))
            raise TraceValidationError(f"negative lux {lux[i]} at sample {i}")

    @property
    def n_samples(self) -> int:
        return int(self.lux.size)

    @property
    def timestamps(self) -> np.ndarray:
        """Seconds since trace start, one per sample."""
        return np.arange(self.n_samples, dtype=float) * self.step

    @property
    def duration(self) -> float:
        """Covered span in seconds (each sample owns one step)."""
        return self.n_samples * self.step

    @property
    def n_days(self) -> int:
        """Number of calendar days touched by the trace."""
        return int(math.ceil(self.duration / SECONDS_PER_DAY - 1e-9))

    @property
    def weekend_by_day(self) -> np.ndarray:
        """Boolean weekend flag for each calendar day of the trace."""
        first = self.start.weekday()
        return np.array([(first + d) % 7 >= 5 for d in range(self.n_days)])

    def covers_whole_days(self) -> bool:
        return abs(self.duration / SECONDS_PER_DAY - round(self.duration / SECONDS_PER_DAY)) < 1e-9

    def require_whole_days(self) -> None:
        if not self.covers_whole_days():
            raise TraceValidationError(
                f"trace spans {self.duration / SECONDS_PER_DAY:.3f} days; "
                "an integer number of whole days is required here"
            )

    def mean_lux(self) -> float:
        return float(self.lux.mean())

    def slice_days(self, first_day: int, n_days: int) -> "LightTrace":
        """Sub-trace covering ``n_days`` whole days starting at ``first_day``."""
        per_day = SECONDS_PER_DAY / self.step
        if abs(per_day - round(per_day)) > 1e-9:
            raise TraceValidationError("step does not divide a day; cannot slice by days")
        per_day = int(round(per_day))
        if first_day < 0 or (first_day + n_days) * per_day > self.n_samples:
            raise TraceValidationError(
                f"day slice [{first_day}, {first_day + n_days}) outside trace of {self.n_days} days"
            )
        return LightTrace(
            lux=self.lux[first_day * per_day : (first_day + n_days) * per_day].copy(),
            step=self.step,
            start=self.start + timedelta(days=first_day),
        )


def concat_traces(traces: list[LightTrace]) -> LightTrace:
    """Concatenate whole-day traces end to end (calendar restarts at the first trace)."""
    if not traces:
        raise TraceValidationError("nothing to concatenate")
    step = traces[0].step
    for t in traces:
        if t.step != step:
            raise TraceValidationError("all traces must share the same step")
        t.require_whole_days()
    return LightTrace(lux=np.concatenate([t.lux for t in traces]), step=step, start=traces[0].start)


def load_trace(path) -> LightTrace:
    """Load a ``timestamp,lux`` CSV into a :class:`LightTrace`.

    Timestamps may be RFC-3339 strings or epoch seconds; sampling must be
    uniform and strictly increasing, lux must be non-negative.
    """
    path = Path(path)
    times: list[float] = []
    lux: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0].strip().lower() == "timestamp":
                continue  # header
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise TraceParseError(lineno, f"expected 'timestamp,lux', got {row!r}")
            try:
                t = _parse_timestamp(row[0])
            except ValueError as exc:
                raise TraceParseError(lineno, str(exc)) from exc
            try:
                value = float(row[1])
            except ValueError as exc:
                raise TraceParseError(lineno, f"bad lux value {row[1]!r}") from exc
            if value < 0:
                raise TraceValidationError(f"line {lineno}: negative lux {value}")
            times.append(t)
            lux.append(value)
    if len(times) < 2:
        raise TraceValidationError(f"{path}: need at least two samples to infer the step")
    ts = np.asarray(times)
    diffs = np.diff(ts)
    if np.any(diffs <= 0):
        i = int(np.argmax(diffs <= 0))
        raise TraceValidationError(f"timestamps not strictly increasing at row {i + 2}")
    step = float(diffs[0])
    if not np.allclose(diffs, step, rtol=1e-6, atol=1e-3):
        raise TraceValidationError("non-uniform sampling; resample the source export first")
    start = datetime.fromtimestamp(ts[0], tz=timezone.utc).replace(tzinfo=None)
    return LightTrace(lux=np.asarray(lux), step=step, start=start)


def save_trace(trace: LightTrace, path) -> None:
    """Write a trace as a ``timestamp,lux`` CSV (RFC-3339 UTC timestamps)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = trace.start.replace(tzinfo=timezone.utc)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "lux"])
        for i, value in enumerate(trace.lux):
            stamp = base + timedelta(seconds=i * trace.step)
            writer.writerow([stamp.isoformat(), f"{value:.6g}"])


def resample(trace: LightTrace, step: float, how: str = "mean") -> LightTrace:
    """Aggregate a trace to a coarser uniform step.

    ``how="mean"`` averages each destination window (default; preserves the
    harvested energy of a piecewise-constant signal). ``how="hold"`` keeps the
    first sample of each window (zero-order hold).  ``step`` must be a
    positive integer multiple of the source step and divide the trace evenly.
    """
    if trace.n_samples == 0:
        raise TraceValidationError("cannot resample an empty trace")
    ratio = step / trace.step
    if step <= 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise TraceValidationError(
            f"target step {step} is not a positive multiple of source step {trace.step}"
        )
    factor = int(round(ratio))
    if factor == 1:
        return trace
    if trace.n_samples % factor != 0:
        raise TraceValidationError(
            f"{trace.n_samples} samples do not split into windows of {factor}"
        )
    blocks = trace.lux.reshape(-1, factor)
    if how == "mean":
        lux = blocks.mean(axis=1)
    elif how == "hold":
        lux = blocks[:, 0].copy()
    else:
        raise ValueError(f"unknown aggregation {how!r} (use 'mean' or 'hold')")
    return LightTrace(lux=lux, step=step, start=trace.start)


# ---------------------------------------------------------------------------
# Synthetic archetypes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Archetype:
    """Parametric model of one indoor lighting context.

    Per 15-minute slot the illuminance is
    ``base_lux + diurnal_amplitude * shape(slot) * on(slot) * noise`` where
    ``shape`` is a half-sine between ``sunrise_hour`` and ``sunset_hour``
    (flat 1.0 when both are None) and ``on`` follows a bursty two-state
    occupancy chain with per-slot stationary probability ``occupancy``.
    """

    name: str
    target_mean_lux: float      # calibration target for the generated mean
    base_lux: float             # always-on floor (security lighting etc.)
    diurnal_amplitude: float    # lux contributed when lit, before noise
    occupancy: tuple            # stationary on-probability per 15-min slot (96,)
    weekend_occupancy: float = 1.0  # multiplier applied on weekend days
    burst_exit: float = 0.2     # per-slot probability that an on-burst ends
    switch_noise: float = 0.1   # lognormal sigma on the lit component
    sunrise_hour: float | None = None
    sunset_hour: float | None = None

    def __post_init__(self):
        if len(self.occupancy) != SLOTS_PER_DAY:
            raise ValueError(f"occupancy needs {SLOTS_PER_DAY} slots, got {len(self.occupancy)}")
        if not all(0.0 <= p <= 1.0 for p in self.occupancy):
            raise ValueError("occupancy probabilities must lie in [0, 1]")

    def slot_shape(self) -> np.ndarray:
        """Diurnal multiplier per slot (half-sine daylight curve or flat)."""
        if self.sunrise_hour is None or self.sunset_hour is None:
            return np.ones(SLOTS_PER_DAY)
        hours = (np.arange(SLOTS_PER_DAY) + 0.5) * (SLOT_SECONDS / 3600.0)
        phase = (hours - self.sunrise_hour) / (self.sunset_hour - self.sunrise_hour)
        return np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)


def _work_hours(start_hour: float, end_hour: float, p: float) -> tuple:
    hours = (np.arange(SLOTS_PER_DAY) + 0.5) * (SLOT_SECONDS / 3600.0)
    return tuple(np.where((hours >= start_hour) & (hours < end_hour), p, 0.0))


#: The five indoor lighting contexts.  Amplitudes are calibrated so the
#: long-run mean lux of generated traces lands on ``target_mean_lux``.
ARCHETYPES: dict[str, Archetype] = {
    "Window": Archetype(
        name="Window",
        target_mean_lux=4301.0,
        base_lux=0.0,
        diurnal_amplitude=12090.0,
        occupancy=tuple(np.ones(SLOTS_PER_DAY)),
        weekend_occupancy=1.0,
        switch_noise=0.25,
        sunrise_hour=6.5,
        sunset_hour=19.5,
    ),
    "Stairs": Archetype(
        name="Stairs",
        target_mean_lux=479.0,
        base_lux=200.0,           # security floor, never off
        diurnal_amplitude=418.5,  # stairwell lights, daily 08:00 to midnight
        occupancy=_work_hours(8.0, 24.0, 1.0),
        weekend_occupancy=1.0,    # security lighting ignores weekends
        switch_noise=0.02,
    ),
    "ConferenceRoom": Archetype(
        name="ConferenceRoom",
        target_mean_lux=1139.0,
        base_lux=0.0,
        diurnal_amplitude=7600.0,
        occupancy=_work_hours(8.0, 18.0, 0.5),
        weekend_occupancy=0.04,
        burst_exit=0.2,          # mean meeting length 75 min
        switch_noise=0.15,
    ),
    "MiddleOffice": Archetype(
        name="MiddleOffice",
        target_mean_lux=423.0,
        base_lux=0.0,
        diurnal_amplitude=1215.0,
        occupancy=_work_hours(8.0, 19.0, 0.95),
        weekend_occupancy=0.35,  # weekend workers keep some lights on
        burst_exit=0.1,
        switch_noise=0.10,
    ),
    "Door": Archetype(
        name="Door",
        target_mean_lux=554.0,
        base_lux=0.0,
        diurnal_amplitude=1427.0,
        occupancy=_work_hours(6.0, 20.0, 0.9),
        weekend_occupancy=0.08,
        burst_exit=0.15,
        switch_noise=0.20,
    ),
}

_ALIASES = {
    "window": "Window",
    "stairs": "Stairs",
    "conference": "ConferenceRoom",
    "conferenceroom": "ConferenceRoom",
    "conference_room": "ConferenceRoom",
    "middle": "MiddleOffice",
    "middleoffice": "MiddleOffice",
    "middle_office": "MiddleOffice",
    "door": "Door",
}


def get_archetype(name) -> Archetype:
    if isinstance(name, Archetype):
        return name
    key = str(name).strip().lower().replace("-", "_")
    if key not in _ALIASES:
        raise KeyError(f"unknown archetype {name!r}; choose from {sorted(set(_ALIASES.values()))}")
    return ARCHETYPES[_ALIASES[key]]


def gen_synthetic(archetype, days: int, seed: int, step: float = 300.0) -> LightTrace:
    """Generate ``days`` whole days of synthetic lux data for an archetype.

    Deterministic for a given seed.  The trace starts on a Monday at
    midnight and is sampled every ``step`` seconds (must divide 900).
    """
    arch = get_archetype(archetype)
    if days < 1:
        raise ValueError(f"days must be >= 1, got {days}")
    if step <= 0 or abs(SLOT_SECONDS / step - round(SLOT_SECONDS / step)) > 1e-9:
        raise ValueError(f"step must divide {SLOT_SECONDS:.0f} s, got {step}")
    per_slot = int(round(SLOT_SECONDS / step))
    rng = np.random.default_rng(seed)
    shape = arch.slot_shape()
    occupancy = np.asarray(arch.occupancy)

    day_lux = []
    for d in range(days):
        weekend = d % 7 >= 5  # Monday start
        occ = occupancy * (arch.weekend_occupancy if weekend else 1.0)
        on = np.empty(SLOTS_PER_DAY)
        state = rng.random() < occ[0]
        for s in range(SLOTS_PER_DAY):
            p = occ[s]
            if p <= 0.0:
                state = False
            elif p >= 1.0:
                state = True
            else:
                # two-state burst chain with exact stationary probability p:
                # when the nominal entry rate saturates at 1, shorten bursts
                # instead of drifting the stationary point
                p_entry = p * arch.burst_exit / (1.0 - p)
                p_exit = arch.burst_exit
                if p_entry > 1.0:
                    p_entry = 1.0
                    p_exit = (1.0 - p) / p
                u = rng.random()
                state = (u >= p_exit) if state else (u < p_entry)
            on[s] = 1.0 if state else 0.0
        lit_noise = np.exp(rng.normal(0.0, arch.switch_noise, SLOTS_PER_DAY))
        slot_lux = arch.base_lux + arch.diurnal_amplitude * shape * on * lit_noise
        samples = np.repeat(slot_lux, per_slot)
        samples = samples * (1.0 + rng.normal(0.0, SAMPLE_JITTER, samples.size))
        day_lux.append(np.clip(samples, 0.0, None))

    return LightTrace(lux=np.concatenate(day_lux), step=step, start=SYNTHETIC_START)


# ---------------------------------------------------------------------------
# Motion events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventTrace:
    """Motion-event timestamps in seconds since trace start, strictly increasing."""

    times: np.ndarray
    horizon: float                      # covered span in seconds
    day_rates: tuple = (0.0, 0.0)       # (weekday events/day, weekend events/day)
    start: datetime = SYNTHETIC_START

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.size and (np.any(np.diff(times) <= 0)):
            raise TraceValidationError("event timestamps must be strictly increasing")
        if times.size and (times[0] < 0 or times[-1] > self.horizon):
            raise TraceValidationError("event timestamps fall outside the trace horizon")

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def count_between(self, t0: float, t1: float) -> int:
        lo, hi = np.searchsorted(self.times, [t0, t1])
        return int(hi - lo)

    def window(self, t0: float, t1: float) -> np.ndarray:
        lo, hi = np.searchsorted(self.times, [t0, t1])
        return self.times[lo:hi]


def gen_events(
    days: int,
    weekday_rate: float,
    weekend_rate: float,
    seed: int,
    start: datetime = SYNTHETIC_START,
) -> EventTrace:
    """Poisson motion events over ``days`` whole days.

    Per-day counts are Poisson with the day-type rate; arrival times are
    uniform within the day.  Deterministic for a given seed.
    """
    if weekday_rate < 0 or weekend_rate < 0:
        raise ValueError("event rates must be non-negative")
    if days < 1:
        raise ValueError(f"days must be >= 1, got {days}")
    rng = np.random.default_rng(seed)
    first = start.weekday()
    chunks = []
    for d in range(days):
        rate = weekend_rate if (first + d) % 7 >= 5 else weekday_rate
        n = rng.poisson(rate)
        if n:
            chunks.append(np.sort(d * SECONDS_PER_DAY + rng.uniform(0, SECONDS_PER_DAY, n)))
    times = np.concatenate(chunks) if chunks else np.empty(0)
    return EventTrace(
        times=times,
        horizon=days * SECONDS_PER_DAY,
        day_rates=(weekday_rate, weekend_rate),
        start=start,
    )


def save_events(events: EventTrace, path) -> None:
    """Write an event trace as a single-column ``timestamp`` CSV (seconds)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"])
        for t in events.times:
            writer.writerow([f"{t:.3f}"])


def load_events(path, horizon: float, start: datetime = SYNTHETIC_START) -> EventTrace:
    """Read a single-column ``timestamp`` CSV of event times in seconds."""
    path = Path(path)
    times = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0].strip().lower() == "timestamp":
                continue
            if not row or not row[0].strip():
                continue
            try:
                times.append(float(row[0]))
            except ValueError as exc:
                raise TraceParseError(lineno, f"bad timestamp {row[0]!r}") from exc
    return EventTrace(times=np.asarray(sorted(times)), horizon=horizon, start=start)
