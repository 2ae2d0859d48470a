"""
Seeded measurement-noise generation and bad-data injection.

Every channel draws from its own Philox stream, keyed by the profile seed
and the channel's fixed position in ``CHANNELS``. Channel parameters are
stored in channel units (degrees for angles, pu otherwise); conversion to
radians happens only when a profile is applied to a series.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from app.core.exceptions import ScheduleOutOfRange

logger = logging.getLogger(__name__)

CHANNELS = ("delta", "omega", "U_t", "phi")
FAMILIES = ("gaussian", "gaussian_biased", "laplace", "cauchy")
UNITS = ("deg", "pu")
MODES = ("add", "replace")
PRNG_ALGORITHM = "Philox-4x64-10"

DEFAULT_BAD_DATA_MAGNITUDE = 20.0


@dataclass(frozen=True)
class NoiseSpec:
    family: str
    loc: float = 0.0
    scale: float = 1.0
    units: str = "pu"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family '{self.family}', expected one of {FAMILIES}")
        if self.units not in UNITS:
            raise ValueError(f"unknown units '{self.units}', expected one of {UNITS}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"noise scale must be positive, got {self.scale}")
        if not math.isfinite(self.loc):
            raise ValueError(f"noise location must be finite, got {self.loc}")

    @property
    def sigma_nominal(self) -> float:
        """Nominal channel sigma in channel units; bad-data magnitudes are multiples of it."""
        if self.family == "laplace":
            return self.scale * math.sqrt(2.0)
        return self.scale

    @property
    def unit_scale(self) -> float:
        return math.pi / 180.0 if self.units == "deg" else 1.0

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        return cls(family=data["family"], loc=float(data.get("loc", 0.0)),
                   scale=float(data["scale"]), units=data.get("units", "pu"))

    def to_dict(self) -> dict:
        return {"family": self.family, "loc": self.loc, "scale": self.scale, "units": self.units}


@dataclass(frozen=True)
class BadDataEvent:
    start_time: float
    count: int = 1
    magnitude: float = DEFAULT_BAD_DATA_MAGNITUDE
    mode: str = "add"

    def __post_init__(self):
        if not self.start_time >= 0:
            raise ValueError(f"bad-data start_time must be >= 0, got {self.start_time}")
        if self.count < 1:
            raise ValueError(f"bad-data count must be >= 1, got {self.count}")
        if self.mode not in MODES:
            raise ValueError(f"bad-data mode must be one of {MODES}, got '{self.mode}'")

    @classmethod
    def from_dict(cls, data: dict) -> "BadDataEvent":
        return cls(start_time=float(data["start_time"]), count=int(data.get("count", 1)),
                   magnitude=float(data.get("magnitude", DEFAULT_BAD_DATA_MAGNITUDE)),
                   mode=data.get("mode", "add"))

    def to_dict(self) -> dict:
        return {"start_time": self.start_time, "count": self.count,
                "magnitude": self.magnitude, "mode": self.mode}


@dataclass(frozen=True)
class BadDataSchedule:
    events: Tuple[BadDataEvent, ...] = ()

    def merge(self, other: "BadDataSchedule") -> "BadDataSchedule":
        merged = sorted(self.events + other.events, key=lambda e: e.start_time)
        return BadDataSchedule(tuple(merged))

    def __bool__(self):
        return bool(self.events)

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "BadDataSchedule":
        if not data:
            return cls()
        return cls(tuple(BadDataEvent.from_dict(e) for e in data.get("events", [])))

    def to_dict(self) -> dict:
        return {"events": [e.to_dict() for e in self.events]}


def parse_schedules(data: Optional[dict]) -> Dict[str, BadDataSchedule]:
    schedules = {}
    for channel, body in (data or {}).items():
        if channel not in CHANNELS:
            raise ValueError(f"bad-data schedule for unknown channel '{channel}'")
        schedules[channel] = BadDataSchedule.from_dict(body)
    return schedules


@dataclass(frozen=True)
class NoiseProfile:
    name: str
    seed: int
    channels: Dict[str, NoiseSpec]
    bad_data: Dict[str, BadDataSchedule] = field(default_factory=dict)

    def __post_init__(self):
        missing = [c for c in CHANNELS if c not in self.channels]
        if missing:
            raise ValueError(f"noise profile '{self.name}' lacks channels {missing}")
        unknown = set(self.channels) - set(CHANNELS)
        if unknown:
            raise ValueError(f"noise profile '{self.name}' has unknown channels {sorted(unknown)}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def schedule(self, channel: str) -> BadDataSchedule:
        return self.bad_data.get(channel, BadDataSchedule())

    def with_seed(self, seed: int) -> "NoiseProfile":
        return NoiseProfile(self.name, int(seed), dict(self.channels), dict(self.bad_data))

    def with_bad_data(self, extra: Dict[str, BadDataSchedule]) -> "NoiseProfile":
        merged = dict(self.bad_data)
        for channel, schedule in extra.items():
            merged[channel] = merged.get(channel, BadDataSchedule()).merge(schedule)
        return NoiseProfile(self.name, self.seed, dict(self.channels), merged)

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseProfile":
        return cls(
            name=data["name"],
            seed=int(data.get("seed", 0)),
            channels={k: NoiseSpec.from_dict(v) for k, v in data["channels"].items()},
            bad_data=parse_schedules(data.get("bad_data")),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "prng": PRNG_ALGORITHM,
            "channels": {c: self.channels[c].to_dict() for c in CHANNELS},
            "bad_data": {c: s.to_dict() for c, s in self.bad_data.items() if s},
        }


def channel_stream(seed: int, channel: str) -> np.random.Generator:
    """Independent Philox stream for one channel of one seed."""
    index = CHANNELS.index(channel)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(index,))))


def _scalar_or_array(values: np.ndarray, size):
    return float(values) if size is None else values


def _open_uniform(stream: np.random.Generator, low: float, high: float, size) -> np.ndarray:
    # numpy draws on [low, high); redraw the closed endpoint
    values = np.atleast_1d(stream.uniform(low, high, size=size))
    bad = values <= low
    while np.any(bad):
        values[bad] = stream.uniform(low, high, size=int(bad.sum()))
        bad = values <= low
    return values if size is not None else values[0]


def gaussian_sample(loc: float, scale: float, stream: np.random.Generator, size=None):
    if not scale > 0:
        raise ValueError("scale must be positive")
    return _scalar_or_array(loc + scale * np.asarray(stream.standard_normal(size)), size)


def laplace_transform(U, m: float, s: float):
    """m - s*sgn(U)*ln(1 - |U|) for U in (-1, 1)."""
    U = np.asarray(U, dtype=float)
    return m - s * np.sign(U) * np.log1p(-np.abs(U))


def laplace_sample(m: float, s: float, stream: np.random.Generator, size=None):
    if not s > 0:
        raise ValueError("s must be positive")
    U = _open_uniform(stream, -1.0, 1.0, size)
    return _scalar_or_array(laplace_transform(U, m, s), size)


def cauchy_transform(U2, a: float, b: float):
    """a + b*tan(pi*(U2 - 0.5)) for U2 in (0, 1)."""
    U2 = np.asarray(U2, dtype=float)
    return a + b * np.tan(np.pi * (U2 - 0.5))


def cauchy_sample(a: float, b: float, stream: np.random.Generator, size=None):
    if not b > 0:
        raise ValueError("b must be positive")
    U2 = _open_uniform(stream, 0.0, 1.0, size)
    return _scalar_or_array(cauchy_transform(U2, a, b), size)


def sample(spec: NoiseSpec, stream: np.random.Generator, size=None):
    """Draw from the family named by ``spec``, in channel units."""
    if spec.family in ("gaussian", "gaussian_biased"):
        return gaussian_sample(spec.loc, spec.scale, stream, size)
    if spec.family == "laplace":
        return laplace_sample(spec.loc, spec.scale, stream, size)
    return cauchy_sample(spec.loc, spec.scale, stream, size)


def event_indices(event: BadDataEvent, n: int, step: float) -> np.ndarray:
    start = int(round(event.start_time / step))
    if start >= n:
        raise ScheduleOutOfRange(
            f"bad-data event at t={event.start_time:g}s (sample {start}) is beyond the series end ({n} samples)")
    stop = start + event.count
    if stop > n:
        logger.warning(f"Bad-data event at t={event.start_time:g}s truncated from {event.count} to {n - start} samples")
        stop = n
    return np.arange(start, stop)


def corrupt_series(clean, spec: NoiseSpec, schedule: BadDataSchedule, stream: np.random.Generator,
                   step: float = 0.02) -> np.ndarray:
    """
    Noisy copy of ``clean``: family noise on every sample plus scheduled bad data.

    Noise is drawn for all samples before the schedule is applied, so a
    schedule never shifts the ambient noise of other samples. ``add`` events
    offset the noisy sample by magnitude * sigma_nominal; ``replace`` events
    set it to truth + magnitude * sigma_nominal.
    """
    clean = np.asarray(clean, dtype=float)
    n = clean.size
    out = clean + spec.unit_scale * np.asarray(sample(spec, stream, n))
    for event in schedule.events:
        idx = event_indices(event, n, step)
        deviation = event.magnitude * spec.sigma_nominal * spec.unit_scale
        if event.mode == "add":
            out[idx] = out[idx] + deviation
        else:
            out[idx] = clean[idx] + deviation
    return out
