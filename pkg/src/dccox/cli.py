"""Command line driver.

Subcommands: fit, cv, test, gof, simulate. Options come from an INI config
(one section per command) overridden by flags. Unknown sections or keys are
rejected. Thread count falls back to the DCCOX_THREADS environment variable,
then to the machine's CPU count.

Exit status: 0 on success, 1 on any library error (an error.json with the
error class and message is written to the output directory), 3 when the fit
leaves unconverged grid points and allow_unconverged is false.
"""

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .bandwidth import select_bandwidth
from .bootstrap_tests import (default_test_grid, test_degree_heterogeneity,
                              test_temporal_eta, test_temporal_gamma)
from .errors import ConfigError, DccoxError
from .estimator import SolverConfig, fit_curve
from .gof import arjas_data
from .inference import enrich_fit
from .simulator import BUILTIN_SCENARIOS, simulate
from .types import CovariateSet, KernelSpec, TimeGrid

_COMMON = {"events", "covariates", "tau", "n", "kernel", "grid", "out",
           "threads", "stable", "tol", "max_iter"}
_KEYS = {
    "fit": _COMMON | {"h1", "h2", "level", "allow_unconverged", "no_heterogeneity"},
    "cv": _COMMON | {"h1_grid", "h2_grid", "folds", "seed"},
    "test": _COMMON | {"h1", "h2", "kind", "nu", "nboot", "seed", "test_times"},
    "gof": _COMMON | {"h1", "h2", "allow_unconverged", "no_heterogeneity"},
    "simulate": {"scenario", "n", "seed", "tau", "out", "grid",
                 "c0", "b", "c1", "c2", "c"},
}
_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def _to_bool(text, key):
    try:
        return _BOOL[str(text).strip().lower()]
    except KeyError:
        raise ConfigError(f"{key} must be a boolean, got {text!r}") from None


def _to_float(text, key):
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number, got {text!r}") from None


def _to_int(text, key):
    try:
        return int(str(text), 10)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be an integer, got {text!r}") from None


def _float_list(text, key):
    vals = [v.strip() for v in str(text).split(",") if v.strip()]
    if not vals:
        raise ConfigError(f"{key} must list at least one number")
    return [_to_float(v, key) for v in vals]


def _load_config(path, command):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cp.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc
    if cp.defaults():
        raise ConfigError("put keys under a command section, not [DEFAULT]")
    for section in cp.sections():
        if section not in _KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in cp.options(section):
            if key not in _KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    return dict(cp.items(command)) if cp.has_section(command) else {}


def _merge_options(args):
    cmd = args.command
    vals = _load_config(args.config, cmd) if args.config else {}
    # on cv the bandwidth flags take comma-separated candidate lists
    rename = {"h1": "h1_grid", "h2": "h2_grid"} if cmd == "cv" else {}
    for key in _KEYS[cmd] | {"h1", "h2", "kind", "scenario", "seed", "nboot",
                             "level", "nu"}:
        flag = getattr(args, key, None)
        if flag is not None:
            key = rename.get(key, key)
            if key not in _KEYS[cmd]:
                raise ConfigError(f"option {key!r} does not apply to {cmd!r}")
            vals[key] = flag
    return vals


def _solver_config(vals):
    stable = _to_bool(vals.get("stable", "true"), "stable")
    kw = {"gauss_seidel": stable, "gamma_uses_updated": stable}
    if "tol" in vals:
        kw["tol"] = _to_float(vals["tol"], "tol")
    if "max_iter" in vals:
        kw["max_iter"] = _to_int(vals["max_iter"], "max_iter")
    if _to_bool(vals.get("no_heterogeneity", "false"), "no_heterogeneity"):
        kw["no_heterogeneity"] = True
    return SolverConfig(**kw)


def _load_data(vals):
    if "events" not in vals:
        raise ConfigError("an events file is required")
    tau = _to_float(vals["tau"], "tau") if "tau" in vals else None
    n = _to_int(vals["n"], "n") if "n" in vals else None
    es, mapping = dio.read_events(vals["events"], tau=tau, n=n)
    if "covariates" in vals:
        zs = dio.ingest_covariates(vals["covariates"], es.n, mapping=mapping)
    else:
        zs = CovariateSet.empty(es.n)
    return es, zs, mapping


def _kernel(vals, p):
    family = vals.get("kernel", "gaussian")
    if "h1" not in vals:
        raise ConfigError("bandwidth h1 is required")
    h1 = _to_float(vals["h1"], "h1")
    if p > 0 and "h2" not in vals:
        raise ConfigError("bandwidth h2 is required when covariates are present")
    h2 = _to_float(vals["h2"], "h2") if "h2" in vals else h1
    return KernelSpec(family=family, h1=h1, h2=h2)


def _grid(vals, tau):
    m = _to_int(vals.get("grid", "100"), "grid")
    if m < 2:
        raise ConfigError("grid must be at least 2")
    return TimeGrid.default(tau, m=m)


def _threads(vals):
    return _to_int(vals["threads"], "threads") if "threads" in vals else None


def _outdir(vals):
    out = Path(vals.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_fit(vals):
    es, zs, mapping = _load_data(vals)
    k = _kernel(vals, zs.p)
    grid = _grid(vals, es.tau)
    fit = fit_curve(es, zs, k, grid, cfg=_solver_config(vals),
                    threads=_threads(vals))
    level = _to_float(vals.get("level", "0.95"), "level")
    enrich_fit(fit, es, zs, k, level=level)
    out = _outdir(vals)
    dio.emit_fit(out / "fit.csv", fit)
    dio.emit_fit_summary(out / "fit_summary.json", fit,
                         extra={"h1": k.h1, "h2": k.h2, "kernel": k.family,
                                "level": level})
    if mapping:
        dio.emit_node_map(out / "node_map.csv", mapping)
    if not _to_bool(vals.get("allow_unconverged", "false"), "allow_unconverged"):
        if not all(d.converged for d in fit.diagnostics):
            print("dccox: some grid points did not converge", file=sys.stderr)
            return 3
    return 0


def _run_cv(vals):
    es, zs, mapping = _load_data(vals)
    h1s = _float_list(vals["h1_grid"], "h1_grid") if "h1_grid" in vals else None
    h2s = _float_list(vals["h2_grid"], "h2_grid") if "h2_grid" in vals else None
    report = select_bandwidth(
        es, zs, family=vals.get("kernel", "gaussian"), h1_grid=h1s, h2_grid=h2s,
        K=_to_int(vals.get("folds", "5"), "folds"),
        seed=_to_int(vals.get("seed", "0"), "seed"),
        grid=_grid(vals, es.tau), cfg=_solver_config(vals),
        threads=_threads(vals))
    out = _outdir(vals)
    dio.emit_cv(out / "cv_surface.csv", report)
    dio.emit_cv_summary(out / "cv_summary.json", report)
    if mapping:
        dio.emit_node_map(out / "node_map.csv", mapping)
    return 0


_TESTS = {
    "temporal-eta": lambda **kw: test_temporal_eta(pair_grid=kw.pop("times"), **kw),
    "temporal-gamma": lambda **kw: test_temporal_gamma(pair_grid=kw.pop("times"), **kw),
    "degree-alpha": lambda **kw: test_degree_heterogeneity(
        which="alpha", t_grid=kw.pop("times"), **kw),
    "degree-beta": lambda **kw: test_degree_heterogeneity(
        which="beta", t_grid=kw.pop("times"), **kw),
}


def _run_test(vals):
    kind = vals.get("kind")
    if kind not in _TESTS:
        raise ConfigError(f"kind must be one of {sorted(_TESTS)}, got {kind!r}")
    es, zs, mapping = _load_data(vals)
    k = _kernel(vals, zs.p)
    if "test_times" in vals:
        times = np.asarray(_float_list(vals["test_times"], "test_times"))
    else:
        times = default_test_grid(es.tau)
    fit = fit_curve(es, zs, k, TimeGrid(times), cfg=_solver_config(vals),
                    threads=_threads(vals))
    report = _TESTS[kind](
        fit=fit, es=es, zs=zs, k=k, times=times,
        nu=_to_float(vals.get("nu", "0.05"), "nu"),
        n_boot=_to_int(vals.get("nboot", "1000"), "nboot"),
        seed=_to_int(vals.get("seed", "0"), "seed"),
        threads=_threads(vals))
    out = _outdir(vals)
    dio.emit_test_report(out / "test_report.json", report)
    if mapping:
        dio.emit_node_map(out / "node_map.csv", mapping)
    return 0


def _run_gof(vals):
    es, zs, mapping = _load_data(vals)
    k = _kernel(vals, zs.p)
    grid = _grid(vals, es.tau)
    fit = fit_curve(es, zs, k, grid, cfg=_solver_config(vals),
                    threads=_threads(vals))
    series = arjas_data(fit, es, zs)
    out = _outdir(vals)
    dio.emit_gof(out / "gof.csv", series)
    dio.emit_gof_summary(out / "gof_summary.json", series)
    if mapping:
        dio.emit_node_map(out / "node_map.csv", mapping)
    if not _to_bool(vals.get("allow_unconverged", "false"), "allow_unconverged"):
        if not all(d.converged for d in fit.diagnostics):
            print("dccox: some grid points did not converge", file=sys.stderr)
            return 3
    return 0


def _run_simulate(vals):
    name = vals.get("scenario")
    if name not in BUILTIN_SCENARIOS:
        raise ConfigError(
            f"scenario must be one of {sorted(BUILTIN_SCENARIOS)}, got {name!r}")
    if "n" not in vals:
        raise ConfigError("simulate requires n")
    kw = {"n": _to_int(vals["n"], "n"),
          "seed": _to_int(vals.get("seed", "0"), "seed"),
          "tau": _to_float(vals.get("tau", "1.0"), "tau")}
    for key in ("c0", "b", "c1", "c2", "c"):
        if key in vals:
            kw[key] = _to_float(vals[key], key)
    try:
        sc = BUILTIN_SCENARIOS[name](**kw)
    except TypeError:
        raise ConfigError(f"scenario {name!r} does not accept those options") from None
    es, zs, truth = simulate(sc)
    out = _outdir(vals)
    dio.emit_events(out / "events.csv", es)
    dio.emit_covariates(out / "covariates.csv", zs)
    dio.emit_truth(out / "truth.csv", truth, _grid(vals, sc.tau))
    dio._write_json(out / "scenario.json", {
        "scenario": name, "n": sc.n, "p": sc.p, "tau": sc.tau, "seed": sc.seed,
        "events": len(es)})
    return 0


_RUNNERS = {"fit": _run_fit, "cv": _run_cv, "test": _run_test,
            "gof": _run_gof, "simulate": _run_simulate}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="dccox",
        description="Degree-corrected Cox model for temporal interaction networks.")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "fit": "estimate parameter curves with confidence bands",
        "cv": "select bandwidths by K-fold dyad cross-validation",
        "test": "multiplier-bootstrap hypothesis test",
        "gof": "observed vs fitted cumulative-intensity diagnostics",
        "simulate": "draw synthetic event data from a built-in scenario",
    }
    for cmd in _RUNNERS:
        p = sub.add_parser(cmd, help=helps[cmd])
        p.add_argument("--config", help="INI file with a [%s] section" % cmd)
        p.add_argument("--out", help="output directory (default .)")
        p.add_argument("--tau", help="observation window end")
        p.add_argument("--seed", help="integer seed")
        p.add_argument("--threads", help="worker threads (default DCCOX_THREADS)")
        p.add_argument("--grid", help="grid resolution: evaluate at i*tau/grid")
        if cmd != "simulate":
            p.add_argument("--events", help="event CSV or JSONL file")
            p.add_argument("--covariates", help="covariate CSV file")
            p.add_argument("--h1", help="degree bandwidth")
            p.add_argument("--h2", help="homophily bandwidth")
        if cmd == "fit":
            p.add_argument("--level", help="confidence level (default 0.95)")
        if cmd == "test":
            p.add_argument("--kind", help="|".join(sorted(_TESTS)))
            p.add_argument("--nboot", help="bootstrap replicates (default 1000)")
        if cmd == "simulate":
            p.add_argument("--scenario", help="|".join(sorted(BUILTIN_SCENARIOS)))
            p.add_argument("--n", help="number of nodes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        vals = _merge_options(args)
        return _RUNNERS[args.command](vals)
    except DccoxError as exc:
        body = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, dio.ParseError) and exc.line is not None:
            body["line"] = exc.line
            body["column"] = exc.column
        try:
            out = Path(getattr(args, "out", None) or ".")
            out.mkdir(parents=True, exist_ok=True)
            dio._write_json(out / "error.json", body)
        except OSError:
            pass
        print(f"dccox: {body['error']}: {body['message']}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
