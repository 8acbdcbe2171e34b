"""Batch command-line front end.

Subcommands:
    simulate    write dataset CSV(s) drawn from a scenario
    fit         fit a dataset CSV with the ignorable or full likelihood
    info        Monte-Carlo information decomposition report
    experiment  the complete-vs-partial paired error comparison

Every run writes ``manifest.json`` (config digest, version, platform,
duration, output list) to the output directory, also on failure. All
CSVs are UTF-8, LF-terminated, with repr-round-trip floats, so a rerun
with an identical config reproduces every output byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    RawConfig,
    build_fit_options,
    build_scenario,
    parse_config,
)
from .em import FitResult, fit_full, fit_ignorable
from .errors import ConfigError, MissmixError
from .fisher import check_decomposition
from .mechanisms import MechanismFamily
from .mixture import MixtureParams, PartialDataset
from .simlab import ScenarioConfig, generate, run_experiment


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: list, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_dataset_csv(path: Path, data: PartialDataset):
    """Schema ``y_1..y_p,z,m``; z is ground truth even when m = 1 and
    consumers must respect the no-peek rule via the dataset accessors."""
    header = [f"y_{k + 1}" for k in range(data.p)] + ["z", "m"]
    rows = (
        list(data.features[j]) + [int(data.labels[j]), int(data.missing[j])]
        for j in range(data.n)
    )
    _write_csv(path, header, rows)


def read_dataset_csv(path: Path, g: int) -> PartialDataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 3 or header[-2:] != ["z", "m"]:
            raise ConfigError(f"dataset {path} must end with columns z,m")
        p = len(header) - 2
        feats, labels, missing = [], [], []
        for row in reader:
            feats.append([float(v) for v in row[:p]])
            labels.append(int(row[p]))
            missing.append(int(row[p + 1]))
    return PartialDataset(g=g, features=np.asarray(feats),
                          labels=np.asarray(labels), missing=np.asarray(missing))


def _write_theta_csv(path: Path, theta: MixtureParams):
    rows = []
    for i in range(theta.g):
        rows.append(["weight", i + 1, "", "", theta.weights[i]])
    for i in range(theta.g):
        for r in range(theta.p):
            rows.append(["mean", i + 1, r + 1, "", theta.means[i, r]])
    for i in range(theta.g):
        for r in range(theta.p):
            for c in range(theta.p):
                rows.append(["cov", i + 1, r + 1, c + 1, theta.covariances[i, r, c]])
    _write_csv(path, ["param", "component", "row", "col", "value"], rows)


def _write_matrix_csv(path: Path, matrix: np.ndarray, mc_se: np.ndarray):
    d = matrix.shape[0]
    rows = ([r + 1, c + 1, matrix[r, c], mc_se[r, c]]
            for r in range(d) for c in range(d))
    _write_csv(path, ["row", "col", "value", "mc_se"], rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(raw: RawConfig, out: Path, args) -> list[str]:
    cfg = build_scenario(raw, seed_override=args.seed)
    outputs = []
    for r in range(cfg.replicates):
        data = generate(cfg, r)
        name = f"dataset_{r:04d}.csv"
        write_dataset_csv(out / name, data)
        outputs.append(name)
    return outputs


def _cmd_fit(raw: RawConfig, out: Path, args) -> list[str]:
    view = raw.section("fit")
    data_path = view.get_str("data", required=True)
    family_str = view.get_str("family", default="IGNORABLE").strip().upper()
    g = view.get_int("g", default=2)
    homo = view.get_bool("homoscedastic", default=True)
    opts = build_fit_options(raw, seed_override=args.seed)
    base = Path(data_path)
    if not base.is_absolute():
        base = Path(args.config).parent / base
    data = read_dataset_csv(base, g=g)
    if family_str == "IGNORABLE":
        result: FitResult = fit_ignorable(data, opts, homoscedastic=homo)
    else:
        try:
            family = MechanismFamily(family_str)
        except ValueError:
            view.error(f"unknown family {family_str!r}", "family")
        result = fit_full(data, family, opts, homoscedastic=homo)
    _write_theta_csv(out / "theta_hat.csv", result.theta_hat)
    outputs = ["theta_hat.csv", "loglik_trace.csv", "fit_meta.csv"]
    _write_csv(out / "loglik_trace.csv", ["iteration", "loglik"],
               ((i + 1, ll) for i, ll in enumerate(result.loglik_trace)))
    _write_csv(out / "fit_meta.csv", ["field", "value"],
               [["converged", result.converged],
                ["restart_index", result.restart_index],
                ["n_iter", result.n_iter],
                ["final_loglik", float(result.loglik_trace[-1])]])
    if result.xi_hat is not None:
        _write_csv(out / "xi_hat.csv", ["family", "index", "value"],
                   ((result.xi_hat.family.value, k + 1, v)
                    for k, v in enumerate(result.xi_hat.xi)))
        outputs.append("xi_hat.csv")
    return outputs


def _cmd_info(raw: RawConfig, out: Path, args) -> list[str]:
    scen = raw.section("scenario")
    from .config import _build_mechanism, _build_theta
    theta = _build_theta(scen)
    mechanism = _build_mechanism(scen)
    seed = scen.get_int("seed", required=True)
    # scenario keys that only the sampling commands use
    for extra in ("n", "n_test", "replicates", "estimators"):
        if extra in scen.entries:
            scen.consumed.add(extra)
    scen.finish()
    view = raw.section("info")
    n_mc = view.get_int("n_mc", default=100_000)
    seed = view.get_int("seed", default=seed)
    view.finish()
    if args.seed is not None:
        seed = args.seed
    report = check_decomposition(theta, mechanism, n_mc, seed)
    d = report.decomposition
    outputs = []
    for name in ("i_cc", "i_uc", "i_cc_clr", "i_pc_full", "i_pc_miss"):
        fname = f"info_{name}.csv"
        _write_matrix_csv(out / fname, getattr(d, name), d.mc_se[name])
        outputs.append(fname)
    _write_csv(out / "decomposition_check.csv",
               ["row", "col", "residual", "mc_se", "z"],
               ([r + 1, c + 1, report.residuals[r, c], report.residual_se[r, c],
                 report.z_scores[r, c]]
                for r in range(report.residuals.shape[0])
                for c in range(report.residuals.shape[1])))
    _write_csv(out / "info_summary.csv", ["field", "value"],
               [["gamma", d.gamma], ["n_mc", d.n_mc],
                ["max_abs_z", report.max_abs_z],
                ["pc_miss_min_eig", report.pc_miss_min_eig],
                ["pc_miss_min_eig_se", report.pc_miss_min_eig_se],
                ["pc_miss_sub_min_eig", report.pc_miss_sub_min_eig],
                ["pc_miss_sub_min_eig_se", report.pc_miss_sub_min_eig_se],
                ["subspace_dim", report.subspace_dim]])
    outputs += ["decomposition_check.csv", "info_summary.csv"]
    return outputs


def _cmd_experiment(raw: RawConfig, out: Path, args) -> list[str]:
    cfg: ScenarioConfig = build_scenario(raw, seed_override=args.seed)
    report = run_experiment(cfg, jobs=args.jobs)
    _write_csv(out / "replicates.csv",
               ["replicate", "estimator", "error", "gamma", "converged"],
               ((rec.replicate, rec.estimator.value, rec.error, rec.gamma,
                 rec.converged) for rec in report.records))
    _write_csv(out / "summary.csv",
               ["estimator", "mean_error", "sd_error", "n_ok", "n_failed"],
               ((s.estimator.value, s.mean_error, s.sd_error, s.n_ok, s.n_failed)
                for s in report.summaries.values()))
    _write_csv(out / "differences.csv",
               ["estimator_a", "estimator_b", "mean_diff", "ci_low", "ci_high", "n"],
               ((dd.estimator_a.value, dd.estimator_b.value, dd.mean_diff,
                 dd.ci_low, dd.ci_high, dd.n)
                for dd in report.differences.values()))
    _write_csv(out / "scalars.csv", ["field", "value"],
               [["mean_gamma", report.mean_gamma],
                ["mean_bayes_error", report.mean_bayes_error],
                ["failure_flagged", report.failure_flagged],
                ["replicates", cfg.replicates]])
    return ["replicates.csv", "summary.csv", "differences.csv", "scalars.csv"]


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "info": _cmd_info,
    "experiment": _cmd_experiment,
}


def dispatch(subcommand: str, args) -> int:
    """Run one subcommand, always leaving a manifest in the output dir."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    outputs: list[str] = []
    status = 0
    error_msg = None
    digest = None
    try:
        raw = parse_config(args.config)
        digest = raw.digest
        outputs = _COMMANDS[subcommand](raw, out, args)
    except ConfigError as err:
        error_msg = f"config error: {err}"
        status = 1
    except MissmixError as err:
        error_msg = f"{type(err).__name__}: {err}"
        status = 2
    except OSError as err:
        error_msg = str(err)
        status = 1
    finally:
        manifest = {
            "config_digest": digest,
            "artifact_version": __version__,
            "platform": f"{platform.python_implementation()}-"
                        f"{platform.python_version()}-{platform.machine()}",
            "duration_seconds": time.monotonic() - t0,
            "outputs": sorted(outputs),
            "status": "ok" if status == 0 else "error",
        }
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if error_msg is not None:
        print(error_msg, file=sys.stderr)
    return status


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="missmix",
        description="Gaussian mixture classifiers under informative label "
                    "missingness: simulation, fitting, information analysis.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "draw datasets from a scenario config"),
        ("fit", "fit a dataset CSV (ignorable or full likelihood)"),
        ("info", "Monte-Carlo Fisher information decomposition"),
        ("experiment", "paired complete-vs-partial error comparison"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int,
                       default=int(os.environ.get("MISSMIX_JOBS", "1")),
                       help="worker processes (default $MISSMIX_JOBS or 1)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed")
    args = parser.parse_args(argv)
    return dispatch(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
