"""
Orchestration of dataset generation, filter runs, comparison and sweeps.

Every (experiment, seed) pair is an independent task: it owns its dataset,
its filters and its output directory, so tasks can run in a process pool.
Aggregation and the run registry live in the parent process only.
"""
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sqlalchemy.orm import Session

from app.core.config_manager import ConfigManager
from app.core.cubature_filter import FilterBelief, Frame, run_filter
from app.core.exceptions import ConfigError, DataError, DatasetMismatch, DSEError, FilterStepError
from app.core.machine_model import GeneratorModel, MachineParams, ModelNoiseSettings
from app.core.metrics import MetricReport, compare_report, evaluate, improvement
from app.core.noise_lab import NoiseProfile
from app.core.robustifier import HuberConfig
from app.core.scenario import Dataset, Scenario, generate_truth, load_dataset, merged_profile, save_dataset, \
    synthesize_measurements
from app.db import crud
from app.utils.utils import read_csv, sha256_file, write_csv

logger = logging.getLogger(__name__)

FILTERS = ("ckf", "rckf")
DEFAULT_COV_DIAG = (1e-4, 1e-6, 1e-4, 1e-4)
SWEEP_PROFILES = ("gaussian", "gaussian_biased", "laplace", "cauchy")

TRACE_COLUMNS = ["t", "delta", "omega", "edp", "eqp", "std_delta", "std_omega", "std_edp", "std_eqp",
                 "w_delta", "w_omega", "w_pe", "innov_delta", "innov_omega", "innov_pe"]
SUMMARY_COLUMNS = ["filter", "variable", "metric", "mean", "std", "seeds"]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scenario_ref: str
    seeds: Tuple[int, ...]
    params_ref: Optional[str] = None
    profile_ref: Optional[str] = None
    filters: Tuple[str, ...] = FILTERS
    huber_c: float = 1.5
    out: str = "out"
    timing: bool = False
    workers: int = 1
    model_noise: Dict[str, float] = field(default_factory=dict)
    cov_diag: Tuple[float, ...] = DEFAULT_COV_DIAG
    offset: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    warmup: int = 0
    sweep_profiles: Tuple[str, ...] = SWEEP_PROFILES

    def __post_init__(self):
        if not self.filters:
            raise ValueError("at least one filter is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        unknown = set(self.filters) - set(FILTERS)
        if unknown:
            raise ValueError(f"unknown filters {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        initial = data.get("initial", {})
        return cls(
            name=data["name"],
            scenario_ref=data["scenario_ref"],
            seeds=tuple(int(s) for s in data["seeds"]),
            params_ref=data.get("params_ref"),
            profile_ref=data.get("profile_ref"),
            filters=tuple(data.get("filters", FILTERS)),
            huber_c=float(data.get("huber", {}).get("c", 1.5)),
            out=data.get("out", "out"),
            timing=bool(data.get("timing", False)),
            workers=int(data.get("workers", 1)),
            model_noise=dict(data.get("model_noise", {})),
            cov_diag=tuple(float(v) for v in initial.get("cov_diag", DEFAULT_COV_DIAG)),
            offset=tuple(float(v) for v in initial.get("offset", (0.0,) * 4)),
            warmup=int(data.get("metrics", {}).get("warmup", 0)),
            sweep_profiles=tuple(data.get("sweep", {}).get("profiles", SWEEP_PROFILES)),
        )

    @property
    def directory(self) -> str:
        return os.path.join(self.out, self.name)


@dataclass(frozen=True)
class SeedTask:
    """Everything one worker needs; plain values only so it pickles."""
    experiment: str
    out_dir: str
    scenario: Scenario
    params: MachineParams
    profile: NoiseProfile
    seed: int
    filters: Tuple[str, ...]
    huber_c: float
    noise: ModelNoiseSettings
    cov_diag: Tuple[float, ...]
    offset: Tuple[float, ...]
    warmup: int
    timing: bool


@dataclass
class FilterRun:
    filter_name: str
    means: Optional[np.ndarray] = None
    stds: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    innovations: Optional[np.ndarray] = None
    step_times: List[float] = field(default_factory=list)
    report: Optional[MetricReport] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def mean_step_ms(self) -> Optional[float]:
        return 1000.0 * float(np.mean(self.step_times)) if self.step_times else None

    @property
    def downweighted_steps(self) -> int:
        return int(np.count_nonzero(np.any(self.weights < 1.0, axis=1))) if self.weights is not None else 0


@dataclass
class SeedResult:
    experiment: str
    profile: str
    seed: int
    directory: str
    dataset_digest: str
    metrics: Dict[str, Dict[Tuple[str, str], float]] = field(default_factory=dict)
    timings: Dict[str, Optional[float]] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)


@dataclass
class RunSummary:
    experiment: str
    directory: str
    results: List[SeedResult]
    summary: pd.DataFrame

    @property
    def failures(self) -> List[Tuple[int, str, str]]:
        return [(r.seed, f, msg) for r in self.results for f, msg in r.failures.items()]


def build_dataset(scenario: Scenario, params: MachineParams, profile: NoiseProfile, seed: int,
                  truth: Optional[Dataset] = None) -> Dataset:
    truth = truth if truth is not None else generate_truth(scenario, params)
    return synthesize_measurements(truth, merged_profile(scenario, profile.with_seed(seed)), params)


def initial_belief(ds: Dataset, cov_diag: Sequence[float] = DEFAULT_COV_DIAG,
                   offset: Sequence[float] = (0.0, 0.0, 0.0, 0.0)) -> FilterBelief:
    return FilterBelief(mean=ds.truth[0] + np.asarray(offset, dtype=float), cov=np.diag(np.asarray(cov_diag)))


def dataset_frames(ds: Dataset) -> List[Frame]:
    """Frames k = 1..N-1; the prediction into t_k holds the input measured at t_{k-1}."""
    u = ds.filter_inputs
    return [Frame(u=u[k], z=ds.measurements[k], u_hold=u[k - 1]) for k in range(1, ds.n)]


def run_dataset_filter(filter_name: str, model: GeneratorModel, ds: Dataset, huber: HuberConfig,
                       cov_diag=DEFAULT_COV_DIAG, offset=(0.0,) * 4, timing: bool = False) -> FilterRun:
    """Runs one filter over a dataset; row 0 of every series is the initial belief."""
    initial = initial_belief(ds, cov_diag, offset)
    step_times = [] if timing else None
    beliefs = [initial] + run_filter(model, initial, dataset_frames(ds), robustify=(filter_name == "rckf"),
                                     huber=huber, step_times=step_times)
    m = model.m
    diag = [b.diagnostics for b in beliefs[1:]]
    return FilterRun(
        filter_name=filter_name,
        means=np.array([b.mean for b in beliefs]),
        stds=np.array([b.std for b in beliefs]),
        weights=np.vstack([np.ones(m)] + [d.weights for d in diag]),
        innovations=np.vstack([np.zeros(m)] + [d.innovation for d in diag]),
        step_times=step_times or [],
    )


def trace_frame(ds: Dataset, run: FilterRun) -> pd.DataFrame:
    return pd.DataFrame(np.column_stack([ds.times, run.means, run.stds, run.weights, run.innovations]),
                        columns=TRACE_COLUMNS)


def simulate_seed(task: SeedTask, truth: Optional[Dataset] = None) -> Tuple[Dataset, Dict[str, FilterRun]]:
    """Dataset plus one FilterRun per requested filter, in memory."""
    ds = build_dataset(task.scenario, task.params, task.profile, task.seed, truth)
    model = GeneratorModel(task.params, step=task.scenario.step, noise=task.noise)
    huber = HuberConfig(task.huber_c)
    runs = {}
    for name in task.filters:
        try:
            run = run_dataset_filter(name, model, ds, huber, task.cov_diag, task.offset, task.timing)
            run.report = evaluate(name, run.means, ds.truth, ds.measurements, warmup=task.warmup)
        except FilterStepError as e:
            error = FilterStepError(e.step_index, e.cause, seed=task.seed)
            logger.error(f"{task.experiment}: {name} failed at {error}")
            run = FilterRun(filter_name=name, error=str(error))
        except DSEError as e:
            logger.error(f"{task.experiment}: {name} failed for seed {task.seed}: {e}")
            run = FilterRun(filter_name=name, error=f"seed {task.seed}: {e}")
        runs[name] = run
    return ds, runs


def run_seed(task: SeedTask) -> SeedResult:
    """simulate_seed plus every per-seed artifact on disk."""
    ds, runs = simulate_seed(task)
    os.makedirs(task.out_dir, exist_ok=True)
    dataset_path = os.path.join(task.out_dir, "dataset.csv")
    save_dataset(ds, dataset_path)
    digest = sha256_file(dataset_path)

    result = SeedResult(task.experiment, task.profile.name, task.seed, task.out_dir, digest)
    metric_frames, timing_rows = [], []
    for name, run in runs.items():
        if not run.ok:
            result.failures[name] = run.error
            continue
        write_csv(trace_frame(ds, run), os.path.join(task.out_dir, f"trace_{name}.csv"))
        metric_frames.append(run.report.to_frame())
        result.metrics[name] = dict(run.report.values)
        result.timings[name] = run.mean_step_ms
        if run.mean_step_ms is not None:
            timing_rows.append({"filter": name, "mean_step_ms": run.mean_step_ms, "steps": len(run.step_times)})
        if name == "rckf":
            logger.info(f"{task.experiment} seed {task.seed}: rckf downweighted {run.downweighted_steps} "
                        f"of {ds.n - 1} steps")

    if metric_frames:
        write_csv(pd.concat(metric_frames, ignore_index=True), os.path.join(task.out_dir, "metrics.csv"))
    if timing_rows:
        write_csv(pd.DataFrame(timing_rows), os.path.join(task.out_dir, "timing.csv"))
    manifest = {
        "experiment": task.experiment,
        "profile": task.profile.name,
        "seed": task.seed,
        "filters": list(task.filters),
        "huber_c": task.huber_c,
        "warmup": task.warmup,
        "dataset_sha256": digest,
        "failures": result.failures,
    }
    with open(os.path.join(task.out_dir, "run.json"), "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Wrote run outputs to {task.out_dir}")
    return result


def summarize(results: Sequence[SeedResult]) -> pd.DataFrame:
    """Mean and std of each index across seeds, per filter."""
    rows = []
    for r in results:
        for name, values in r.metrics.items():
            for (variable, metric), value in values.items():
                rows.append({"filter": name, "variable": variable, "metric": metric, "value": value})
    if not rows:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    grouped = pd.DataFrame(rows).groupby(["filter", "variable", "metric"], sort=True)["value"]
    summary = grouped.agg(mean="mean", std=lambda v: float(np.std(v, ddof=0)), seeds="count").reset_index()
    return summary[SUMMARY_COLUMNS]


def _execute(tasks: Sequence[SeedTask], workers: int) -> List[SeedResult]:
    if workers <= 1 or len(tasks) <= 1:
        return [run_seed(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_seed, tasks))


def _run_directories(paths: Sequence[str]) -> List[str]:
    """Seed directories (those holding run.json), expanding experiment directories."""
    found = []
    for path in paths:
        if os.path.isfile(os.path.join(path, "run.json")):
            found.append(path)
            continue
        if not os.path.isdir(path):
            raise DataError(f"run directory '{path}' does not exist")
        children = sorted(os.path.join(path, d) for d in os.listdir(path)
                          if os.path.isfile(os.path.join(path, d, "run.json")))
        if not children:
            raise DataError(f"'{path}' holds no run outputs")
        found.extend(children)
    return found


def _read_manifest(directory: str) -> dict:
    with open(os.path.join(directory, "run.json"), "r", encoding="utf-8") as f:
        return json.load(f)


def _read_trace(directory: str, filter_name: str) -> pd.DataFrame:
    path = os.path.join(directory, f"trace_{filter_name}.csv")
    if not os.path.isfile(path):
        raise DataError(f"no {filter_name} trace in {directory}")
    return read_csv(path)


class ExperimentRunner:
    """Runs experiments resolved through a ConfigManager, recording runs when a session is given."""

    def __init__(self, config_manager: ConfigManager, db_session: Optional[Session] = None):
        self.config_manager = config_manager
        self.db = db_session

    def resolve(self, document: dict, profile_ref: Optional[str] = None):
        try:
            config = ExperimentConfig.from_dict(document)
        except ValueError as e:
            raise ConfigError(f"experiment '{document.get('name')}': {e}") from e
        scenario = self.config_manager.scenario(config.scenario_ref)
        params = self.config_manager.machine(config.params_ref or scenario.params_ref)
        ref = profile_ref or config.profile_ref or scenario.noise_profile_ref
        if not ref:
            raise ConfigError(f"experiment '{config.name}' names no noise profile")
        profile = self.config_manager.profile(ref)
        try:
            noise = ModelNoiseSettings.from_dict(config.model_noise)
            HuberConfig(config.huber_c)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"experiment '{config.name}': {e}") from e
        return config, scenario, params, profile, noise

    def _tasks(self, document: dict, name: Optional[str] = None, profile_ref: Optional[str] = None):
        config, scenario, params, profile, noise = self.resolve(document, profile_ref)
        name = name or config.name
        directory = os.path.join(config.out, name)
        tasks = [SeedTask(name, os.path.join(directory, str(seed)), scenario, params, profile, seed,
                          config.filters, config.huber_c, noise, config.cov_diag, config.offset, config.warmup,
                          config.timing) for seed in config.seeds]
        return config, directory, tasks

    def generate(self, document: dict) -> List[str]:
        """Writes dataset.csv for every seed; truth is computed once."""
        config, scenario, params, profile, _ = self.resolve(document)
        truth = generate_truth(scenario, params)
        paths = []
        for seed in config.seeds:
            path = os.path.join(config.directory, str(seed), "dataset.csv")
            save_dataset(build_dataset(scenario, params, profile, seed, truth), path)
            paths.append(path)
        return paths

    def run(self, document: dict, name: Optional[str] = None, profile_ref: Optional[str] = None) -> RunSummary:
        config, directory, tasks = self._tasks(document, name, profile_ref)
        logger.info(f"Running '{tasks[0].experiment}' ({tasks[0].profile.name}) over {len(tasks)} seed(s) "
                    f"with {', '.join(config.filters)}")
        results = _execute(tasks, config.workers)
        summary = summarize(results)
        write_csv(summary, os.path.join(directory, "summary.csv"))
        self._record(results)
        return RunSummary(tasks[0].experiment, directory, results, summary)

    def sweep(self, document: dict) -> Tuple[List[RunSummary], pd.DataFrame]:
        """One run per noise profile, then the family x metric x variable comparison table."""
        config, *_ = self.resolve(document)
        summaries, dirs = [], []
        for profile_ref in config.sweep_profiles:
            summary = self.run(document, name=f"{config.name}-{profile_ref}", profile_ref=profile_ref)
            summaries.append(summary)
            dirs.append(summary.directory)
        table = pd.DataFrame()
        if set(FILTERS) <= set(config.filters):
            table = self.compare(dirs, out_dir=config.directory)
        frames = [s.summary.assign(profile=p) for s, p in zip(summaries, config.sweep_profiles)]
        combined = pd.concat(frames, ignore_index=True)[["profile"] + SUMMARY_COLUMNS]
        write_csv(combined, os.path.join(config.directory, "summary.csv"))
        return summaries, table

    def compare(self, run_dirs: Sequence[str], baseline: str = "ckf", candidate: str = "rckf",
                against: Sequence[str] = (), out_dir: Optional[str] = None) -> pd.DataFrame:
        """
        Side-by-side indices of two filters, averaged over seeds per noise family.

        Without ``against`` both traces come from each run directory; with it,
        the candidate trace comes from the paired directory, which must have
        consumed the very same dataset.
        """
        base_dirs = _run_directories(run_dirs)
        cand_dirs = _run_directories(against) if against else base_dirs
        if len(cand_dirs) != len(base_dirs):
            raise DatasetMismatch(f"{len(base_dirs)} baseline runs but {len(cand_dirs)} candidate runs")

        rows = []
        for base_dir, cand_dir in zip(base_dirs, cand_dirs):
            manifest = _read_manifest(base_dir)
            if cand_dir != base_dir and _read_manifest(cand_dir)["dataset_sha256"] != manifest["dataset_sha256"]:
                raise DatasetMismatch(f"{base_dir} and {cand_dir} were run on different datasets")
            ds = load_dataset(os.path.join(base_dir, "dataset.csv"))
            base_trace = _read_trace(base_dir, baseline)
            cand_trace = _read_trace(cand_dir, candidate)
            if len(base_trace) != ds.n or len(cand_trace) != ds.n:
                raise DatasetMismatch(f"traces in {base_dir} do not align with its dataset")
            warmup = int(manifest.get("warmup", 0))
            state_cols = ["delta", "omega", "edp", "eqp"]
            base_report = evaluate(baseline, base_trace[state_cols].to_numpy(), ds.truth, ds.measurements, warmup)
            cand_report = evaluate(candidate, cand_trace[state_cols].to_numpy(), ds.truth, ds.measurements, warmup)
            comparison = compare_report(base_report, cand_report)
            for (variable, metric), _ in comparison.improvements.items():
                rows.append({"family": manifest["profile"], "metric": metric, "variable": variable,
                             "baseline": base_report[(variable, metric)],
                             "candidate": cand_report[(variable, metric)]})
            if out_dir:
                self._write_plot_data(ds, base_trace, cand_trace,
                                      os.path.join(out_dir, "plots", f"{manifest['profile']}-{manifest['seed']}"))

        table = pd.DataFrame(rows).groupby(["family", "metric", "variable"], sort=False)[
            ["baseline", "candidate"]].mean().reset_index()
        table["improvement_pct"] = [improvement(b, c) for b, c in zip(table["baseline"], table["candidate"])]
        if out_dir:
            write_csv(table, os.path.join(out_dir, "comparison.csv"))
        return table

    @staticmethod
    def _write_plot_data(ds: Dataset, base: pd.DataFrame, cand: pd.DataFrame, directory: str):
        for variable, i in (("delta", 0), ("omega", 1)):
            frame = pd.DataFrame({"t": ds.times, "truth": ds.truth[:, i], "measured": ds.measurements[:, i],
                                  "baseline": base[variable].to_numpy(), "candidate": cand[variable].to_numpy()})
            write_csv(frame, os.path.join(directory, f"plot_{variable}.csv"))

    def _record(self, results: Sequence[SeedResult]):
        if self.db is None:
            return
        for r in results:
            for name in list(r.metrics) + list(r.failures):
                db_run = crud.create_run(self.db, experiment=r.experiment, profile=r.profile, seed=r.seed,
                                         filter_name=name, dataset_digest=r.dataset_digest)
                if name in r.failures:
                    crud.update_run_status(self.db, db_run.id, "FAILED", error=r.failures[name])
                    continue
                crud.add_metrics(self.db, db_run.id, r.metrics[name])
                crud.update_run_status(self.db, db_run.id, "SUCCESS", mean_step_ms=r.timings.get(name))
