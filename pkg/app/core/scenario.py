"""
Truth trajectories, synthetic PMU measurements and the dataset CSV format.

A scenario fixes the machine, the pre-disturbance operating point and a
piecewise schedule for the terminal phasor (U_t, phi). The generator is
driven through that schedule from its equilibrium with T_m and E_f held.
"""
import json
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from app.core.exceptions import ParseError, SchemaError
from app.core.machine_model import DEFAULT_STEP, MachineParams, electrical_power, solve_equilibrium, transition
from app.core.noise_lab import (BadDataSchedule, NoiseProfile, PRNG_ALGORITHM, channel_stream, corrupt_series,
                                parse_schedules)
from app.utils.utils import write_csv

logger = logging.getLogger(__name__)

DATASET_COLUMNS = ["t", "delta_true", "omega_true", "edp_true", "eqp_true", "Tm", "Ef", "Ut_true", "phi_true",
                   "Ut_meas", "phi_meas", "delta_z", "omega_z", "Pe_z"]
SIGNALS = ("U_t", "phi")
SEGMENT_KINDS = ("hold", "step", "ramp")


@dataclass(frozen=True)
class DisturbanceSegment:
    """Piece of the U_t or phi schedule over [start, end); phi values are in degrees."""
    signal: str
    kind: str
    start: float
    end: float
    value: Optional[float] = None
    ramp_from: Optional[float] = None
    ramp_to: Optional[float] = None

    def __post_init__(self):
        if self.signal not in SIGNALS:
            raise ValueError(f"segment signal must be one of {SIGNALS}, got '{self.signal}'")
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"segment kind must be one of {SEGMENT_KINDS}, got '{self.kind}'")
        if not 0 <= self.start < self.end:
            raise ValueError(f"segment needs 0 <= start < end, got [{self.start}, {self.end})")
        if self.kind == "step" and self.value is None:
            raise ValueError("step segment needs 'value'")
        if self.kind == "ramp" and (self.ramp_from is None or self.ramp_to is None):
            raise ValueError("ramp segment needs 'from' and 'to'")

    @classmethod
    def from_dict(cls, data: dict) -> "DisturbanceSegment":
        return cls(signal=data["signal"], kind=data["kind"], start=float(data["start"]), end=float(data["end"]),
                   value=data.get("value"), ramp_from=data.get("from"), ramp_to=data.get("to"))

    def to_dict(self) -> dict:
        d = {"signal": self.signal, "kind": self.kind, "start": self.start, "end": self.end}
        if self.value is not None:
            d["value"] = self.value
        if self.kind == "ramp":
            d["from"], d["to"] = self.ramp_from, self.ramp_to
        return d


@dataclass(frozen=True)
class Scenario:
    name: str
    params_ref: str
    duration: float
    U_t: float
    phi_deg: float
    P_target: float
    Q_target: float = 0.0
    step: float = DEFAULT_STEP
    disturbance: Tuple[DisturbanceSegment, ...] = ()
    noise_profile_ref: Optional[str] = None
    bad_data: Dict[str, BadDataSchedule] = field(default_factory=dict)

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not self.U_t > 0:
            raise ValueError(f"U_t must be positive, got {self.U_t}")
        for signal in SIGNALS:
            segments = sorted((s for s in self.disturbance if s.signal == signal), key=lambda s: s.start)
            for a, b in zip(segments, segments[1:]):
                if b.start < a.end:
                    raise ValueError(f"overlapping {signal} segments [{a.start}, {a.end}) and [{b.start}, {b.end})")
            if segments and segments[-1].end > self.duration + 1e-9:
                raise ValueError(f"{signal} segment ends after the scenario duration {self.duration}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.step)) + 1

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        op = data["operating_point"]
        return cls(
            name=data["name"],
            params_ref=data["params_ref"],
            duration=float(data["duration"]),
            step=float(data.get("step", DEFAULT_STEP)),
            U_t=float(op["U_t"]),
            phi_deg=float(op.get("phi_deg", 0.0)),
            P_target=float(op["P_target"]),
            Q_target=float(op.get("Q_target", 0.0)),
            disturbance=tuple(DisturbanceSegment.from_dict(s) for s in data.get("disturbance", [])),
            noise_profile_ref=data.get("noise_profile_ref"),
            bad_data=parse_schedules(data.get("bad_data")),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params_ref": self.params_ref,
            "duration": self.duration,
            "step": self.step,
            "operating_point": {"U_t": self.U_t, "phi_deg": self.phi_deg,
                                "P_target": self.P_target, "Q_target": self.Q_target},
            "disturbance": [s.to_dict() for s in self.disturbance],
            "noise_profile_ref": self.noise_profile_ref,
            "bad_data": {c: s.to_dict() for c, s in self.bad_data.items() if s},
        }


@dataclass
class Dataset:
    times: np.ndarray
    truth: np.ndarray
    inputs: np.ndarray
    measured_inputs: Optional[np.ndarray] = None
    measurements: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times)
        for name in ("truth", "inputs", "measured_inputs", "measurements"):
            value = getattr(self, name)
            if value is not None and len(value) != n:
                raise ValueError(f"{name} has {len(value)} samples, grid has {n}")

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n > 1 else DEFAULT_STEP

    @property
    def filter_inputs(self) -> np.ndarray:
        """[T_m, E_f, U_t, phi] with the measured terminal phasor, as the filter sees it."""
        u = self.inputs.copy()
        if self.measured_inputs is not None:
            u[:, 2:] = self.measured_inputs
        return u

    def to_frame(self) -> pd.DataFrame:
        if self.measurements is None:
            raise ValueError("dataset has no measurements yet")
        return pd.DataFrame(np.column_stack([self.times, self.truth, self.inputs, self.measured_inputs,
                                             self.measurements]), columns=DATASET_COLUMNS)


def input_schedule(sc: Scenario) -> Tuple[np.ndarray, np.ndarray]:
    """U_t (pu) and phi (rad) on the sample grid; uncovered samples hold the operating point."""
    n = sc.n_samples
    base = {"U_t": sc.U_t, "phi": sc.phi_deg}
    series = {s: np.full(n, base[s], dtype=float) for s in SIGNALS}
    for seg in sc.disturbance:
        i0 = int(round(seg.start / sc.step))
        i1 = min(int(round(seg.end / sc.step)), n)
        if seg.kind == "step":
            series[seg.signal][i0:i1] = seg.value
        elif seg.kind == "ramp":
            frac = (np.arange(i0, i1) - i0) / max(i1 - i0, 1)
            series[seg.signal][i0:i1] = seg.ramp_from + (seg.ramp_to - seg.ramp_from) * frac
    return series["U_t"], np.radians(series["phi"])


def generate_truth(sc: Scenario, params: MachineParams) -> Dataset:
    """Integrate the generator from equilibrium through the disturbance schedule."""
    U_t, phi = input_schedule(sc)
    x0, T_m, E_f = solve_equilibrium(np.array([0.0, 0.0, U_t[0], phi[0]]), params, sc.P_target, sc.Q_target)
    n = sc.n_samples
    inputs = np.column_stack([np.full(n, T_m), np.full(n, E_f), U_t, phi])
    truth = np.empty((n, 4))
    truth[0] = np.asarray(x0)
    for k in range(1, n):
        truth[k] = transition(truth[k - 1], inputs[k - 1], params, sc.step)
    logger.info(f"Generated truth for scenario '{sc.name}': {n} samples, T_m={T_m:.4f} E_f={E_f:.4f}")
    return Dataset(
        times=np.arange(n) * sc.step,
        truth=truth,
        inputs=inputs,
        meta={"scenario": sc.to_dict(), "params": params.to_dict()},
    )


def synthesize_measurements(ds: Dataset, profile: NoiseProfile, params: MachineParams) -> Dataset:
    """
    Fill the noisy channels from ``profile``.

    delta_z and omega_z are corrupted truth; U_t and phi are replaced by
    their noisy PMU versions, and P_e_z is computed from the true rotor
    quantities and that noisy terminal phasor.
    """
    step = ds.step
    noisy = {}
    clean = {"delta": ds.truth[:, 0], "omega": ds.truth[:, 1], "U_t": ds.inputs[:, 2], "phi": ds.inputs[:, 3]}
    for channel, series in clean.items():
        noisy[channel] = corrupt_series(series, profile.channels[channel], profile.schedule(channel),
                                        channel_stream(profile.seed, channel), step)
    measured_inputs = np.column_stack([noisy["U_t"], noisy["phi"]])
    u_meas = ds.inputs.copy()
    u_meas[:, 2:] = measured_inputs
    P_e = electrical_power(ds.truth, u_meas, params)
    measurements = np.column_stack([noisy["delta"], noisy["omega"], P_e])
    meta = dict(ds.meta)
    meta.update({"profile": profile.to_dict(), "seed": profile.seed, "prng": PRNG_ALGORITHM})
    return Dataset(times=ds.times, truth=ds.truth, inputs=ds.inputs, measured_inputs=measured_inputs,
                   measurements=measurements, meta=meta)


def meta_path(path: str) -> str:
    root, _ = os.path.splitext(path)
    return f"{root}.meta.json"


def save_dataset(ds: Dataset, path: str):
    write_csv(ds.to_frame(), path)
    with open(meta_path(path), "w", encoding="utf-8", newline="\n") as f:
        json.dump(ds.meta, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Wrote dataset {path} ({ds.n} samples)")


def _tokenizer_line(error: Exception) -> Optional[int]:
    match = re.search(r"line (\d+)", str(error))
    return int(match.group(1)) if match else None


def load_dataset(path: str) -> Dataset:
    """Read a dataset CSV (and its sidecar metadata when present)."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        raise ParseError(f"malformed dataset {path}", line=_tokenizer_line(e)) from e
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"empty dataset {path}", line=1) from e

    for column in DATASET_COLUMNS:
        if column not in frame.columns:
            raise SchemaError(column)
    if frame.empty:
        raise ParseError(f"dataset {path} has no samples", line=2)

    values = {}
    for column in DATASET_COLUMNS:
        raw = frame[column]
        numeric = pd.to_numeric(raw, errors="coerce")
        bad = np.flatnonzero(numeric.isna().to_numpy())
        if bad.size:
            # header is line 1
            raise ParseError(f"non-numeric value '{raw.iloc[bad[0]]}'", line=int(bad[0]) + 2, column=column)
        values[column] = np.array(raw.to_numpy(), dtype=float)

    meta = {}
    if os.path.exists(meta_path(path)):
        with open(meta_path(path), "r", encoding="utf-8") as f:
            meta = json.load(f)
    return Dataset(
        times=values["t"],
        truth=np.column_stack([values[c] for c in ["delta_true", "omega_true", "edp_true", "eqp_true"]]),
        inputs=np.column_stack([values[c] for c in ["Tm", "Ef", "Ut_true", "phi_true"]]),
        measured_inputs=np.column_stack([values[c] for c in ["Ut_meas", "phi_meas"]]),
        measurements=np.column_stack([values[c] for c in ["delta_z", "omega_z", "Pe_z"]]),
        meta=meta,
    )


def merged_profile(sc: Scenario, profile: NoiseProfile) -> NoiseProfile:
    """Profile with the scenario's own bad-data instants added per channel."""
    return profile.with_bad_data(sc.bad_data) if sc.bad_data else profile

