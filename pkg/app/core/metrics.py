"""
Estimation quality indices.

eps1 is the ratio of estimation error energy to measurement error energy
(< 1 means the filter beats the raw measurement); eps2 is the RMS of the
relative estimation error. Both are reported per state variable.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from app.core.exceptions import DegenerateDenominator, MetricError, ZeroTruthSample

logger = logging.getLogger(__name__)

VARIABLES = {"delta": 0, "omega": 1}
METRICS = ("eps1", "eps2", "rmse")
REPORT_COLUMNS = ["filter", "variable", "metric", "value"]


def _aligned(*series) -> Tuple[np.ndarray, ...]:
    arrays = tuple(np.asarray(s, dtype=float).ravel() for s in series)
    n = arrays[0].size
    if n < 1 or any(a.size != n for a in arrays):
        raise MetricError(f"series must share a non-zero length, got {[a.size for a in arrays]}")
    return arrays


def epsilon1(est, truth, meas) -> float:
    est, truth, meas = _aligned(est, truth, meas)
    denominator = np.sum((meas - truth) ** 2)
    if denominator == 0.0:
        raise DegenerateDenominator("measurements equal truth at every sample; eps1 undefined")
    return float(np.sqrt(np.sum((est - truth) ** 2) / denominator))


def epsilon2(est, truth) -> float:
    est, truth = _aligned(est, truth)
    zeros = np.flatnonzero(truth == 0.0)
    if zeros.size:
        raise ZeroTruthSample(int(zeros[0]))
    return float(np.sqrt(np.mean(((est - truth) / truth) ** 2)))


def rmse(est, truth) -> float:
    est, truth = _aligned(est, truth)
    return float(np.sqrt(np.mean((est - truth) ** 2)))


def cumulative_rms(est, truth) -> np.ndarray:
    """RMS error over samples 0..k for every k."""
    est, truth = _aligned(est, truth)
    return np.sqrt(np.cumsum((est - truth) ** 2) / np.arange(1, est.size + 1))


def improvement(baseline: float, candidate: float) -> float:
    """(1 - candidate / baseline) * 100."""
    if baseline == 0.0:
        if candidate == 0.0:
            return 0.0
        raise DegenerateDenominator("baseline index is zero; improvement undefined")
    return (1.0 - candidate / baseline) * 100.0


@dataclass
class MetricReport:
    filter_name: str
    values: Dict[Tuple[str, str], float]
    rms_traces: Dict[str, np.ndarray] = field(default_factory=dict)
    samples: int = 0

    def __getitem__(self, key: Tuple[str, str]) -> float:
        return self.values[key]

    def to_frame(self) -> pd.DataFrame:
        rows = [{"filter": self.filter_name, "variable": v, "metric": m, "value": value}
                for (v, m), value in self.values.items()]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def evaluate(filter_name: str, estimates, truth, measurements, warmup: int = 0,
             variables: Iterable[str] = ("delta", "omega")) -> MetricReport:
    """
    Indices for one filter run.

    ``estimates`` and ``truth`` are (N, 4) state series, ``measurements``
    the (N, 3) measured channels. The first ``warmup`` samples are skipped.
    """
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    measurements = np.asarray(measurements, dtype=float)
    if warmup < 0 or warmup >= len(truth):
        raise MetricError(f"warmup {warmup} leaves no samples out of {len(truth)}")
    window = slice(warmup, None)
    values, traces = {}, {}
    for name in variables:
        i = VARIABLES[name]
        est, tru, meas = estimates[window, i], truth[window, i], measurements[window, i]
        values[(name, "eps1")] = epsilon1(est, tru, meas)
        values[(name, "eps2")] = epsilon2(est, tru)
        values[(name, "rmse")] = rmse(est, tru)
        traces[name] = cumulative_rms(est, tru)
    return MetricReport(filter_name, values, traces, samples=len(truth) - warmup)


@dataclass
class Comparison:
    baseline: MetricReport
    candidate: MetricReport
    improvements: Dict[Tuple[str, str], float]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for key, pct in self.improvements.items():
            variable, metric = key
            rows.append({"variable": variable, "metric": metric, "baseline": self.baseline[key],
                         "candidate": self.candidate[key], "improvement_pct": pct})
        return pd.DataFrame(rows)


def compare_report(baseline: MetricReport, candidate: MetricReport,
                   metrics: Optional[Iterable[str]] = ("eps1", "eps2")) -> Comparison:
    """Improvement of ``candidate`` over ``baseline`` for every shared (variable, metric)."""
    wanted = set(metrics or METRICS)
    keys = [k for k in baseline.values if k in candidate.values and k[1] in wanted]
    if not keys:
        raise MetricError("reports share no (variable, metric) pair")
    return Comparison(baseline, candidate, {k: improvement(baseline[k], candidate[k]) for k in keys})


def format_table(frame: pd.DataFrame) -> str:
    """Aligned plain-text rendering for the terminal."""
    return frame.to_string(index=False, float_format=lambda v: f"{v:.6g}")
