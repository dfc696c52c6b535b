"""Command-line entry point: simulate, solve and price from a JSON config.

Exit status: 0 success, 1 rerun mismatch, 2 invalid configuration,
3 numerical failure (a ``diagnostics.json`` is written), 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from importlib import metadata

import numpy as np
import scipy

from . import config as cfgmod
from .bsde import Basis, solve_linear_bsde_for_strategy, solve_power_bsde
from .drivers import StrategyBound, k_limit
from .errors import AdmissibilityError, ConfigError, DivergenceError, ModelError, OptimizerError, RegressionError
from .filtering import filter_paths
from .market import simulate_paths, simultaneous_default_frequency, write_paths_csv
from .pricing import exp_value, hodges_price, information_price, make_claim, zero_claim
from .strategies import log_value

log = logging.getLogger("defaultbsde")

SUBCOMMANDS = ("simulate", "log", "power", "exp", "price", "info-price")
NUMERICAL = (RegressionError, DivergenceError, AdmissibilityError, OptimizerError, ModelError, FloatingPointError)


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"artifact": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


class Outputs:
    """Collects artifacts written into one directory."""

    def __init__(self, directory, formats):
        self.directory = directory
        self.formats = set(formats)
        self.files = []
        os.makedirs(directory, exist_ok=True)

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.directory, name)

    def csv(self, name, header, rows):
        if "csv" not in self.formats:
            return
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])

    def json(self, name, payload):
        if "json" not in self.formats:
            return
        with open(self.path(name), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def digests(self):
        out = {}
        for name in sorted(set(self.files)):
            with open(os.path.join(self.directory, name), "rb") as fh:
                out[name] = hashlib.sha256(fh.read()).hexdigest()
        return out


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _prepare(cfg):
    spec = cfgmod.build_model(cfg)
    num = cfg["numerics"]
    paths = simulate_paths(spec, num["steps"], num["paths"], num["seed"])
    if spec.regime_model is not None:
        paths = paths.with_filter(filter_paths(spec, paths))
    basis = Basis(degree=num["basis_degree"], ridge=num["ridge"])
    return spec, paths, basis


def _claim(cfg):
    c = cfg["utility"].get("claim")
    return zero_claim() if c is None else make_claim(c["id"], **c.get("params", {}))


def _k_report(rows, direction):
    if len(rows) < 3:
        return None
    return k_limit(rows, direction=direction).as_dict()


def run_simulate(cfg, spec, paths, basis, out):
    limit = cfg["outputs"]["max_paths_csv"]
    if "csv" in out.formats:
        write_paths_csv(paths, out.path("paths.csv"), max_paths=limit)
        if paths.filter is not None:
            paths.filter.write_trace_csv(out.path("filter_trace.csv"), max_paths=limit)
    N_T = paths.N[:, -1]
    out.json("simulate.json", {
        "default_frequency": [float(v) for v in N_T.mean(axis=0)],
        "simultaneous_default_frequency": simultaneous_default_frequency(paths),
        "mean_terminal_price": [float(v) for v in paths.S[:, -1].mean(axis=0)],
    })


def run_log(cfg, spec, paths, basis, out):
    source = "filtered" if cfg["utility"]["information"] == "partial" else "exact"
    sol = log_value(spec, paths, x0=cfg["utility"]["x0"], coeff_source=source)
    out.csv("log_summary.csv", ["t", "pi_hat_mean", "epsilon_mean", "V", "SE"], sol.summary_rows())
    out.json("log.json", {"coeff_source": source, "V": sol.value_V, "SE": sol.std_error,
                          "pi_hat_t0_mean": float(sol.pi_hat[:, 0].mean())})
    print(f"V = {sol.value_V:.10g} (SE {sol.std_error:.3g})")


def run_power(cfg, spec, paths, basis, out):
    util = cfg["utility"]
    gamma, info = util["gamma"], util["information"]
    rows = []
    for k in cfg["bounds"]["k"]:
        sol = solve_power_bsde(spec, paths, StrategyBound(float(k)), gamma, basis, info)
        arg0 = float(sol.argopt[:, 0].mean()) if sol.argopt is not None else float("nan")
        rows.append((float(k), sol.Y0, sol.Y0_se, arg0))
        out.csv(f"bsde_trace_k{k:g}.csv", sol.header(), sol.summary_rows())
        print(f"k = {k:g}: Y0 = {sol.Y0:.10g} (SE {sol.Y0_se:.3g})")
    out.csv("power_k.csv", ["k", "Y0", "Y0_se", "argopt_t0_mean"], rows)
    payload = {"gamma": gamma, "information": info, "k": [r[0] for r in rows], "Y0": [r[1] for r in rows],
               "Y0_se": [r[2] for r in rows], "k_limit": _k_report([r[:3] for r in rows], "nondecreasing")}
    if "strategy" in util:
        lin = solve_linear_bsde_for_strategy(util["strategy"], spec, paths, gamma, basis, info)
        payload["fixed_strategy"] = {"pi": util["strategy"], "Y0": lin.Y0, "Y0_se": lin.Y0_se}
    out.json("power.json", payload)


def run_exp(cfg, spec, paths, basis, out):
    util = cfg["utility"]
    claim = _claim(cfg)
    rows = []
    for k in cfg["bounds"]["k"]:
        sol = exp_value(claim, util["information"], StrategyBound(float(k), "exponential"), spec, paths,
                        util["gamma"], basis)
        rows.append((float(k), sol.Y0, sol.Y0_se))
        print(f"k = {k:g}: J0 = {sol.Y0:.10g} (SE {sol.Y0_se:.3g})")
    out.csv("exp_k.csv", ["k", "J0", "J0_se"], rows)
    out.json("exp.json", {"gamma": util["gamma"], "claim": claim.name, "information": util["information"],
                          "k": [r[0] for r in rows], "J0": [r[1] for r in rows], "J0_se": [r[2] for r in rows],
                          "k_limit": _k_report(rows, "nonincreasing")})


def run_price(cfg, spec, paths, basis, out):
    util = cfg["utility"]
    h = hodges_price(_claim(cfg), spec, paths, util["gamma"], cfg["bounds"]["k"], util["information"], basis)
    out.csv("price.csv", ["k", "price", "price_se", "J0", "J_claim"],
            zip(h.ks, h.prices, h.price_se, h.J0, h.J_claim))
    lim = h.limit()
    out.json("price.json", {"gamma": h.gamma, "information": h.info, "k": list(h.ks), "price": list(h.prices),
                            "price_se": list(h.price_se), "J0": list(h.J0), "J_claim": list(h.J_claim),
                            "J0_se": list(h.J0_se), "J_claim_se": list(h.J_claim_se),
                            "k_limit": lim.as_dict() if lim else None})
    for k, p, s in zip(h.ks, h.prices, h.price_se):
        print(f"k = {k:g}: price = {p:.10g} (SE {s:.3g})")


def run_info_price(cfg, spec, paths, basis, out):
    if paths.filter is None:
        paths = paths.with_filter(filter_paths(spec, paths))
    num = cfg["numerics"]
    rep = information_price(_claim(cfg), spec, paths, cfg["utility"]["gamma"], cfg["bounds"]["k"], basis,
                            metadata={"paths": num["paths"], "steps": num["steps"], "seed": num["seed"]})
    if "json" in out.formats:
        rep.write_json(out.path("info_price.json"))
    if "csv" in out.formats:
        rep.write_csv(out.path("info_price.csv"))
    for k, d, s in zip(rep.ks, rep.d_k, rep.d_se):
        print(f"k = {k:g}: d = {d:.10g} (SE {s:.3g})")


RUNNERS = {"simulate": run_simulate, "log": run_log, "power": run_power, "exp": run_exp,
           "price": run_price, "info-price": run_info_price}


def execute(subcommand, cfg, out_dir):
    """Run one subcommand on a validated config; returns the manifest dict."""
    out = Outputs(out_dir, cfg["outputs"]["formats"])
    spec, paths, basis = _prepare(cfg)
    with np.errstate(over="ignore", under="ignore"):
        RUNNERS[subcommand](cfg, spec, paths, basis, out)
    manifest = {
        "subcommand": subcommand,
        "config": cfg,
        "config_sha256": cfgmod.config_hash(cfg),
        "seeds": {"paths": cfg["numerics"]["seed"], "generator": "philox, one stream per block and variate kind"},
        "versions": _versions(),
        "artifacts": out.digests(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _apply_overrides(cfg, args):
    cfg = json.loads(json.dumps(cfg))
    if args.seed is not None:
        cfg["numerics"]["seed"] = args.seed
    if args.paths is not None:
        cfg["numerics"]["paths"] = args.paths
    if args.steps is not None:
        cfg["numerics"]["steps"] = args.steps
    return cfgmod.validate(cfg)


def _parser():
    ap = argparse.ArgumentParser(prog="defaultbsde", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="output directory (overrides outputs.directory)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
    p = sub.add_parser("rerun", help="re-execute the run recorded in a manifest and compare artifacts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = args.out
    try:
        if args.command == "rerun":
            with open(args.manifest) as fh:
                recorded = json.load(fh)
            cfg = cfgmod.validate(recorded["config"])
            manifest = execute(recorded["subcommand"], cfg, out_dir)
            if manifest["artifacts"] != recorded["artifacts"]:
                print("artifacts differ from the recorded manifest", file=sys.stderr)
                return 1
            print("artifacts identical to the recorded manifest")
            return 0
        cfg = _apply_overrides(cfgmod.load(args.config), args)
        out_dir = out_dir or cfg["outputs"]["directory"]
        execute(args.command, cfg, out_dir)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        _diagnostics(out_dir, exc)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


def _diagnostics(out_dir, exc):
    if not out_dir:
        return
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "diagnostics.json"), "w") as fh:
            json.dump({"error": type(exc).__name__, "message": str(exc),
                       "step": getattr(exc, "step", None), "path": getattr(exc, "path", None),
                       "condition": getattr(exc, "condition", None)}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
