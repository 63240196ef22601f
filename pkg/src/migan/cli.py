"""
Command-line entry point: ``migan {generate,impute,evaluate,benchmark}``.

Exit codes: 0 success, 2 bad configuration, 3 bad data, 4 numerical failure.
Column numbers on the command line are 1-based.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, MiganError
from .gan import TrainConfig
from .harness import ExperimentConfig, impute, run_experiment, write_metrics_csv
from .inference import McRun, analyze, compute_metrics
from .patterns import read_csv, write_csv
from .synthetic import SyntheticSpec, generate, write_dataset

log = logging.getLogger("migan")


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _read(path, header=True):
    try:
        return read_csv(path, header=header)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_generate(args) -> None:
    d = _load_json(args.spec)
    if args.seed is not None:
        d["seed"] = args.seed
    spec = SyntheticSpec.from_dict(d)
    write_dataset(generate(spec), spec, args.out)
    log.info("wrote %s", args.out)


def cmd_impute(args) -> None:
    d = _load_json(args.config) if args.config else {}
    d = d.get("train", d)
    if args.seed is not None:
        d["seed"] = args.seed
    cfg = TrainConfig.from_dict(d)
    data, names = _read(args.data, header=not args.no_header)
    imps = impute(data, args.method, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, imp in enumerate(imps, start=1):
        write_csv(out / f"imp_{i}.csv", imp, None, names if not args.no_header else None)
    log.info("wrote %d imputations to %s", len(imps), out)


def _imputation_files(folder: Path) -> list[Path]:
    found = []
    for f in folder.glob("imp_*.csv"):
        m = re.fullmatch(r"imp_(\d+)\.csv", f.name)
        if m:
            found.append((int(m.group(1)), f))
    if not found:
        raise DataError(f"no imp_<i>.csv files in {folder}")
    return [f for _, f in sorted(found)]


def cmd_evaluate(args) -> None:
    header = not args.no_header
    imps = [_read(f, header)[0].values for f in _imputation_files(Path(args.imputations))]
    truth = _read(args.truth, header)[0].values
    if any(imp.shape != truth.shape for imp in imps):
        raise DataError("imputations and truth differ in shape")
    predictors = [q - 1 for q in _int_list(args.predictors)]
    response = (args.response or truth.shape[1]) - 1
    if not all(0 <= c < truth.shape[1] for c in predictors + [response]):
        raise ConfigError("predictor or response column out of range")
    beta = _float_list(args.beta)
    if not beta:
        raise ConfigError("--beta is empty")
    # without the incomplete data, a cell counts as observed when every
    # imputation reproduces the truth there exactly
    if args.data:
        mask = _read(args.data, header)[0].mask
    else:
        mask = np.logical_and.reduce([imp == truth for imp in imps])
    pooled = analyze(imps, predictors, response)
    report = compute_metrics([McRun(pooled, imps, truth, mask, beta[0])])
    out = Path(args.out) if args.out else Path(args.imputations) / "metrics.csv"
    write_metrics_csv(out, "evaluate", report, "")
    log.info("wrote %s", out)


def cmd_benchmark(args) -> None:
    cfg = ExperimentConfig.from_json(args.config)
    if args.parallel:
        cfg.parallel = True
    record, report = run_experiment(cfg, args.out)
    for flag in report.flags:
        log.warning(flag)
    log.info("%d replicates, %d failed, config %s", len(record.replicates), record.n_failed,
             record.config_hash)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="migan", description="Multiple imputation with per-pattern GANs.")
    ap.add_argument("--version", action="version", version=f"migan {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic blockwise-MAR dataset")
    g.add_argument("--spec", required=True, help="JSON file of synthetic-data options")
    g.add_argument("--out", required=True, help="output folder")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("impute", help="write imp_1.csv .. imp_M.csv")
    i.add_argument("--method", required=True, choices=("migan1", "migan2", "colmean"))
    i.add_argument("--config", help="JSON file of training options")
    i.add_argument("--data", required=True, help="CSV with NA for missing cells")
    i.add_argument("--out", required=True)
    i.add_argument("--no-header", action="store_true")
    i.add_argument("--seed", type=int)
    i.set_defaults(func=cmd_impute)

    e = sub.add_parser("evaluate", help="pool a regression over imputations, write metrics.csv")
    e.add_argument("--imputations", required=True, help="folder with imp_<i>.csv")
    e.add_argument("--truth", required=True)
    e.add_argument("--beta", required=True, help="true coefficients, comma separated")
    e.add_argument("--predictors", required=True, help="1-based columns, comma separated")
    e.add_argument("--response", type=int, help="1-based response column (default: last)")
    e.add_argument("--data", help="the incomplete CSV, to locate missing cells")
    e.add_argument("--out", help="metrics file (default: <imputations>/metrics.csv)")
    e.add_argument("--no-header", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("benchmark", help="run a Monte-Carlo experiment from a JSON config")
    b.add_argument("--config", required=True)
    b.add_argument("--out", help="output folder (default: the config's output_dir)")
    b.add_argument("--parallel", action="store_true",
                   help="run replicates in processes (MIGAN_THREADS sets the count)")
    b.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MiganError as exc:
        print(f"migan: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
