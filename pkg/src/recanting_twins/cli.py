"""Command-line interface.

Four subcommands::

    estimate   fit the estimator to a CSV file and write a report
    simulate   write a synthetic dataset from the structural model
    replicate  run a replication study and write records and metrics
    report     recompute metrics from a record file

Settings may come from a JSON config file (``--config``) whose keys are
the long option names with underscores; command-line flags override it.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

from .data import DatasetError, load_dataset, validate, write_csv
from .estimator import DegenerateVarianceError, estimate, test_intermediate_confounding
from .identification import PATHS, Contrast
from .nuisance import FAMILIES, FoldError, LearnerSpec
from .simulation import (SETTINGS, STUDY_SETTINGS, EstimatorConfig, StudyError,
                         compute_metrics, get_setting, run_study, simulate_observed,
                         write_metrics, write_plot_data)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
ROLE_KEYS = ("exposure", "intermediate", "mediator", "outcome")
PATH_LABELS = {
    "p1": "P1 (A -> Y)",
    "p2": "P2 (A -> Z -> Y)",
    "p3": "P3 (A -> Z -> M -> Y)",
    "p4": "P4 (A -> M -> Y)",
    "int": "Intermediate confounding",
    "ate": "ATE",
}

DEFAULTS = {
    "estimate": dict(input=None, output_dir=None, exposure="a", intermediate="z",
                     mediator="m", outcome="y", covariates=None, q=5, alpha=0.05, seed=0,
                     learner="cv-select", a_prime=1, a_star=0, clip=0.001),
    "simulate": dict(output=None, n=None, seed=0, setting="default", covariate_mode="X",
                     lambda1=None, lambda2=None, gamma1=None, gamma2=None),
    "replicate": dict(output_dir=None, settings=list(STUDY_SETTINGS), ns=[500, 1000, 5000],
                      reps=None, modes=["X", "W"], q=5, alpha=0.05, learner="cv-select",
                      base_seed=0, n_mc=2_000_000, resume=False, workers=1),
    "report": dict(records=None, output=None),
}
REQUIRED = {
    "estimate": ("input", "output_dir"),
    "simulate": ("output", "n"),
    "replicate": ("output_dir", "reps"),
    "report": ("records",),
}


class UsageError(Exception):
    """Invalid configuration; maps to exit code 2."""


def _csv_list(cast=str):
    def parse(s):
        return [cast(v.strip()) for v in s.split(",") if v.strip()]
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recanting-twins",
                                description="Recanting-twin path-specific effect estimation.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with default option values")

    e = sub.add_parser("estimate", help="estimate path effects from a CSV file")
    common(e)
    e.add_argument("--input")
    e.add_argument("--output-dir")
    for role in ROLE_KEYS:
        e.add_argument(f"--{role}", help=f"{role} column name")
    e.add_argument("--covariates", type=_csv_list(),
                   help="comma-separated covariate columns (default: all other columns)")
    e.add_argument("--q", type=int, help="cross-fitting folds (1 disables cross-fitting)")
    e.add_argument("--alpha", type=float)
    e.add_argument("--seed", type=int)
    e.add_argument("--learner", choices=("cv-select",) + FAMILIES)
    e.add_argument("--a-prime", type=int, choices=(0, 1))
    e.add_argument("--a-star", type=int, choices=(0, 1))
    e.add_argument("--clip", type=float)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    common(s)
    s.add_argument("--output")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--setting", choices=sorted(SETTINGS))
    s.add_argument("--covariate-mode", choices=("X", "W"))
    for coef in ("lambda1", "lambda2", "gamma1", "gamma2"):
        s.add_argument(f"--{coef}", type=float)

    r = sub.add_parser("replicate", help="run a replication study")
    common(r)
    r.add_argument("--output-dir")
    r.add_argument("--settings", type=_csv_list())
    r.add_argument("--ns", type=_csv_list(int))
    r.add_argument("--reps", type=int)
    r.add_argument("--modes", type=_csv_list())
    r.add_argument("--q", type=int)
    r.add_argument("--alpha", type=float)
    r.add_argument("--learner", choices=("cv-select",) + FAMILIES)
    r.add_argument("--base-seed", type=int)
    r.add_argument("--n-mc", type=int)
    r.add_argument("--resume", action="store_true", default=None,
                   help="keep existing records and run only the missing replications")
    r.add_argument("--workers", type=int)

    rp = sub.add_parser("report", help="recompute metrics from a record file")
    common(rp)
    rp.add_argument("--records")
    rp.add_argument("--output", help="metrics CSV (default: metrics.csv next to the records)")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and flags (flags win)."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(file_cfg) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
        cfg.update(file_cfg)
    for key in cfg:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    missing = [k for k in REQUIRED[cmd] if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): "
                         + ", ".join("--" + k.replace("_", "-") for k in missing))
    return cfg


def learner_from_name(name: str) -> LearnerSpec:
    if name == "cv-select":
        return LearnerSpec()
    if name in FAMILIES:
        return LearnerSpec(family=name, selection="fixed")
    raise UsageError(f"unknown learner {name!r}")


def _header(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        row = next(csv.reader(fh), None)
    if row is None:
        raise DatasetError("empty file: header row required")
    return [h.strip() for h in row]


def format_table(est) -> str:
    lines = [f"{'Effect':<28}{'Estimate (95% CI)' if est.alpha == 0.05 else 'Estimate (CI)':<32}"
             f"{'p-value':>10}"]
    for p in PATHS:
        inf = est.paths[p]
        lines.append(f"{PATH_LABELS[p]:<28}{inf.format():<32}{inf.p_value:>10.4g}")
    lines.append("")
    lines.append(f"{'Target mean':<28}{'Estimate (CI)':<32}{'plug-in':>10}")
    for t, inf in est.targets.items():
        lines.append(f"{t.value:<28}{inf.format():<32}{inf.plugin:>10.4f}")
    return "\n".join(lines)


def cmd_estimate(cfg: dict, out=None) -> int:
    out = out or sys.stdout
    covs = cfg["covariates"]
    roles = {k: cfg[k] for k in ROLE_KEYS}
    if covs is None:
        covs = [c for c in _header(cfg["input"]) if c not in roles.values()]
    schema = dict(roles, covariates=list(covs))
    data = load_dataset(cfg["input"], schema)
    try:
        contrast = Contrast(cfg["a_prime"], cfg["a_star"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    diag = validate(data)
    est = estimate(data, q=cfg["q"], spec=learner_from_name(cfg["learner"]),
                   alpha=cfg["alpha"], seed=cfg["seed"], contrast=contrast, clip=cfg["clip"])
    try:
        z, p = test_intermediate_confounding(est)
    except DegenerateVarianceError:
        z, p = float("nan"), float("nan")

    report = est.to_dict()
    report["formatted"] = {p_: est.paths[p_].format() for p_ in PATHS}
    report["intermediate_confounding_test"] = {"z": z, "p_value": p}
    report["diagnostics"] = {"warnings": diag.warnings, "level_counts": diag.level_counts,
                             "propensity_range": list(diag.propensity_range)}
    report["schema"] = schema
    table = format_table(est)
    table += f"\n\nTest of no intermediate confounding: z = {z:.3f}, p = {p:.4g}\n"

    os.makedirs(cfg["output_dir"], exist_ok=True)
    with open(os.path.join(cfg["output_dir"], "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(cfg["output_dir"], "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    out.write(table)
    for w in diag.warnings:
        out.write(f"warning: {w}\n")
    return EXIT_OK


def cmd_simulate(cfg: dict, out=None) -> int:
    out = out or sys.stdout
    n = cfg["n"]
    if not isinstance(n, int) or n < 1:
        raise UsageError(f"--n must be a positive integer, got {n!r}")
    try:
        scm = get_setting(cfg["setting"])
        over = {k: float(cfg[k]) for k in ("lambda1", "lambda2", "gamma1", "gamma2")
                if cfg[k] is not None}
        scm = replace(scm, covariate_mode=cfg["covariate_mode"], **over)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = simulate_observed(scm, n, cfg["seed"])
    write_csv(data, cfg["output"])
    out.write(f"wrote {n} rows to {cfg['output']}\n")
    return EXIT_OK


def cmd_replicate(cfg: dict, out=None) -> int:
    out = out or sys.stdout
    if not isinstance(cfg["reps"], int) or cfg["reps"] < 2:
        raise UsageError("--reps must be at least 2")
    for s in cfg["settings"]:
        if s not in SETTINGS:
            raise UsageError(f"unknown setting {s!r}")
    for m in cfg["modes"]:
        if m not in ("X", "W"):
            raise UsageError(f"unknown covariate mode {m!r}")
    if not cfg["ns"] or any(n < 2 for n in cfg["ns"]):
        raise UsageError("--ns must list sample sizes of at least 2")
    d = cfg["output_dir"]
    os.makedirs(d, exist_ok=True)
    est_cfg = EstimatorConfig(q=cfg["q"], alpha=cfg["alpha"],
                              spec=learner_from_name(cfg["learner"]))
    res = run_study(cfg["settings"], cfg["ns"], cfg["reps"], os.path.join(d, "records.csv"),
                    modes=tuple(cfg["modes"]), est_cfg=est_cfg, base_seed=cfg["base_seed"],
                    n_mc=cfg["n_mc"], resume=bool(cfg["resume"]), workers=cfg["workers"])
    write_metrics(res.metrics, os.path.join(d, "metrics.csv"))
    write_plot_data(res.metrics, os.path.join(d, "plot_data.csv"))
    out.write(f"{res.new_replications} new replications; "
              f"{len(res.metrics)} metric rows in {os.path.join(d, 'metrics.csv')}\n")
    return EXIT_OK


def cmd_report(cfg: dict, out=None) -> int:
    out = out or sys.stdout
    records = cfg["records"]
    if not os.path.exists(records):
        raise UsageError(f"record file {records} not found")
    dest = cfg["output"] or os.path.join(os.path.dirname(os.path.abspath(records)),
                                         "metrics.csv")
    metrics = compute_metrics(records)
    write_metrics(metrics, dest)
    out.write(f"{len(metrics)} metric rows in {dest}\n")
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate,
            "replicate": cmd_replicate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FoldError, StudyError, OSError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
