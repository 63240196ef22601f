"""
Monte-Carlo benchmark orchestration.

One replicate = generate (or load) a dataset, impute it with the chosen
method, fit the regression on every completed matrix, pool. Truth is only
handed to the metrics, never to an imputer.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baselines import colmean_impute
from .errors import ConfigError, DataError, MiganError, NumericError
from .gan import TrainConfig, multiple_impute_migan1, multiple_impute_migan2
from .inference import (METRIC_COLUMNS, McRun, MetricsReport, OlsFit, analyze,
                        compute_metrics, imputation_mse, ols_fit, single_estimate)
from .patterns import IncompleteMatrix, partition_patterns, read_csv
from .synthetic import SyntheticSpec, generate

log = logging.getLogger(__name__)

METHODS = ("migan1", "migan2", "colmean", "complete-case", "complete-data")
THREADS_ENV = "MIGAN_THREADS"

__all__ = ["ExperimentConfig", "RunRecord", "colmean_impute", "complete_case_fit",
           "impute", "run_experiment", "METHODS"]


@dataclass
class ExperimentConfig:
    """A benchmark description, usually loaded from JSON.

    ``scenario`` is either ``{"synthetic": {...SyntheticSpec fields...}}`` or
    ``{"csv": {"data": path, "truth": path, "predictors": [...], "response": j,
    "beta": [...], "header": true}}`` with 1-based column numbers.
    """

    scenario: dict
    method: str
    train: TrainConfig = field(default_factory=TrainConfig)
    mc_replicates: int = 1
    output_dir: str = "results"
    seed: int = 0
    parallel: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.mc_replicates < 1:
            raise ConfigError("mc_replicates must be >= 1")
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_dict(self.train)
        if set(self.scenario) == {"synthetic"}:
            SyntheticSpec.from_dict(self.scenario["synthetic"])
        elif set(self.scenario) == {"csv"}:
            c = self.scenario["csv"]
            missing = {"data", "predictors", "beta"} - set(c)
            if missing:
                raise ConfigError(f"csv scenario lacks {sorted(missing)}")
            for key in ("data", "truth"):
                if c.get(key) and not Path(c[key]).is_file():
                    raise DataError(f"{key} file {c[key]} not found")
        else:
            raise ConfigError("scenario must hold exactly one of 'synthetic' or 'csv'")
        if self.method == "migan1" and self.train.M < 1:
            raise ConfigError("migan1 needs M >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown experiment options: {sorted(unknown)}")
        if "scenario" not in d or "method" not in d:
            raise ConfigError("experiment config needs 'scenario' and 'method'")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"] = self.train.to_dict()
        return d

    def config_hash(self) -> str:
        # output location and scheduling do not change results
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("parallel")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    config_hash: str
    replicates: list
    software_version: str = __version__

    @property
    def n_failed(self) -> int:
        return sum(r["status"] != "ok" for r in self.replicates)


def complete_case_fit(data: IncompleteMatrix, predictors, response: int) -> OlsFit:
    """OLS on the rows with no missing cell (0-based columns)."""
    rows = data.mask.all(axis=1)
    d = len(predictors)
    if rows.sum() < d + 2:
        raise DataError(f"complete-case fit needs at least {d + 2} complete rows, "
                        f"found {int(rows.sum())}")
    vals = data.values[rows]
    return ols_fit(vals[:, list(predictors)], vals[:, response])


def impute(data: IncompleteMatrix, method: str, cfg: TrainConfig,
           min_pattern_size: Optional[int] = None) -> list:
    """Completed matrices for an imputation method (one for single imputation)."""
    if method == "colmean":
        return [colmean_impute(data)]
    part = partition_patterns(data, min_pattern_size)
    if method == "migan1":
        return multiple_impute_migan1(data, part, cfg).imputations
    if method == "migan2":
        return multiple_impute_migan2(data, part, cfg).imputations
    raise ConfigError(f"{method!r} is not an imputation method")


def _replicate_seeds(base: int, r: int) -> tuple[int, int]:
    data_ss, train_ss = np.random.SeedSequence(base + r).spawn(2)
    return int(data_ss.generate_state(1)[0]), int(train_ss.generate_state(1)[0])


def _load_scenario(cfg: ExperimentConfig, data_seed: int):
    """Return ``(data, truth or None, predictors, response, beta)`` with 0-based columns."""
    if "synthetic" in cfg.scenario:
        spec = SyntheticSpec.from_dict({**cfg.scenario["synthetic"], "seed": data_seed})
        ds = generate(spec)
        return ds.data, ds.truth, [q - 1 for q in spec.q], spec.p - 1, spec.beta[0]
    c = cfg.scenario["csv"]
    header = c.get("header", True)
    data, _ = read_csv(c["data"], header=header)
    truth = read_csv(c["truth"], header=header)[0].values if c.get("truth") else None
    response = c.get("response", data.p) - 1
    return data, truth, [q - 1 for q in c["predictors"]], response, float(c["beta"][0])


def run_replicate(cfg: ExperimentConfig, r: int) -> tuple[dict, Optional[McRun]]:
    seed = cfg.seed + r
    data_seed, train_seed = _replicate_seeds(cfg.seed, r)
    rec = {"replicate": r, "seed": seed, "status": "ok"}
    try:
        data, truth, predictors, response, beta = _load_scenario(cfg, data_seed)
        train = cfg.train.replace(seed=train_seed)
        imps, seconds = None, float("nan")
        if cfg.method == "complete-data":
            if truth is None:
                raise DataError("complete-data analysis needs a truth matrix")
            pooled = analyze([truth], predictors, response)
        elif cfg.method == "complete-case":
            fit = complete_case_fit(data, predictors, response)
            pooled = single_estimate(fit.coefficients[1], fit.se[1] ** 2, fit.df)
        else:
            t0 = time.perf_counter()
            imps = impute(data, cfg.method, train)
            seconds = (time.perf_counter() - t0) / len(imps)
            pooled = analyze(imps, predictors, response)
        run = McRun(pooled, imps or [], truth, data.mask, beta, seconds)
        rec.update(qbar=pooled.qbar, se=pooled.se, W=pooled.W, B=pooled.B, df=pooled.df,
                   ci95=list(pooled.ci95), M=pooled.M,
                   imp_mse=imputation_mse(imps, truth, data.mask) if imps and truth is not None
                   else None,
                   seconds_per_imputation=seconds)
        return rec, run
    except (MiganError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("replicate %d failed: %s", r, exc)
        rec.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return rec, None


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, os.cpu_count() or 1)))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer") from None


def _fmt(v) -> str:
    return repr(float(v))


def write_metrics_csv(path, method: str, report: MetricsReport, config_hash: str,
                      n_failed: int = 0) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *METRIC_COLUMNS, "n_runs", "n_failed", "config_hash"])
        w.writerow([method, *map(_fmt, report.row()), report.n_runs, n_failed, config_hash])


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> tuple[RunRecord, MetricsReport]:
    """Run all replicates, write ``metrics.csv``, ``runs.jsonl`` and ``provenance.json``."""
    reps = range(cfg.mc_replicates)
    if cfg.parallel and cfg.mc_replicates > 1:
        with ProcessPoolExecutor(max_workers=_threads()) as pool:
            results = list(pool.map(run_replicate, [cfg] * len(reps), reps))
    else:
        results = [run_replicate(cfg, r) for r in reps]

    chash = cfg.config_hash()
    record = RunRecord(chash, [rec for rec, _ in results])
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "runs.jsonl").open("w") as fh:
        for rec in record.replicates:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    runs = [run for _, run in results if run is not None]
    if not runs:
        raise NumericError(f"all {cfg.mc_replicates} replicates failed; see {out / 'runs.jsonl'}")
    report = compute_metrics(runs)
    if record.n_failed:
        report.flags.append(f"{record.n_failed} of {cfg.mc_replicates} replicates failed")
    write_metrics_csv(out / "metrics.csv", cfg.method, report, chash, record.n_failed)
    prov = {"config": cfg.to_dict(), "config_hash": chash, "software_version": __version__,
            "flags": report.flags}
    (out / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True))
    return record, report
