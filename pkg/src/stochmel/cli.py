"""Command line entry point: ``stochmel <subcommand> [flags]``.

Every experiment resolves to a flat JSON config (validated against
``CONFIG_SCHEMA``).  The run id is the experiment name plus a hash of the
canonical config, so the same config always lands in the same directory
``<out>/<run_id>/``.  ``manifest.json`` is written there before any
computation and rewritten with results, derived constants and warnings
when the run ends.  ``stochmel run --config manifest.json`` replays a run.

Exit codes: 0 success, 1 operational error, 2 tolerance breach (``--strict``).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
import traceback
import warnings

import jsonschema

from . import __version__
from .errors import DomainError
from .model import model_ids

log = logging.getLogger("stochmel")

SCHEMA_VERSION = 1
ENV_OUTPUT = "STOCHMEL_OUTPUT"
EXPERIMENTS = ("sample-noise", "simulate", "melnikov-scan", "rice", "splitting", "diffusion")
SEED_RULE = "child_seed(master, i) = splitmix64(splitmix64(master) ^ i)"
# keys that change how a run executes but not what it computes
EXECUTION_KEYS = ("workers",)

_num = {"type": "number"}
_int = {"type": "integer"}
CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "experiment"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": list(EXPERIMENTS)},
        "model": {"type": "string"},
        "model_params": {"type": "object", "additionalProperties": _num},
        "kernel": {"enum": ["pexp", "powered-exponential", "matern32", "matern-3/2"]},
        "a": _num,
        "eps": {"type": "array", "minItems": 1,
                "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.1}},
        "seed": {**_int, "minimum": 0},
        "master_seed": {**_int, "minimum": 0},
        "calibration_seed": {**_int, "minimum": 0},
        "n": {**_int, "minimum": 2},
        "n_paths": {**_int, "minimum": 2},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "h": {"type": "number", "exclusiveMinimum": 0},
        "t_start": _num,
        "t0": {"oneOf": [_num, {"const": "auto"}]},
        "t1": _num,
        "T": {"type": "number", "exclusiveMinimum": 0},
        "S": {"type": "number", "exclusiveMinimum": 0},
        "B": {"type": "number", "exclusiveMinimum": 0},
        "T_asym": {"type": "number", "exclusiveMinimum": 0},
        "seed_offset": {"type": "number", "exclusiveMinimum": 0},
        "I": _num,
        "phi": _num,
        "tau": _num,
        "p": _num,
        "q": _num,
        "v": {"oneOf": [_num, {"enum": ["auto", "sqrt_chi0"]}]},
        "kind": {"enum": ["P", "I"]},
        "refine": {**_int, "minimum": 1},
        "stride": {**_int, "minimum": 1},
        "workers": {**_int, "minimum": 1},
    },
}


class ConfigError(ValueError):
    pass


def validate_config(cfg):
    """Schema check plus resolvability of the model and kernel ids."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from None
    if "model" in cfg and cfg["model"] not in model_ids():
        raise ConfigError(f"unknown model id {cfg['model']!r}; known: {', '.join(model_ids())}")
    if "kernel" in cfg or "a" in cfg:
        from .noise import build_kernel

        try:
            build_kernel(cfg.get("kernel", "pexp"), cfg.get("a", 2.0))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def canonical(cfg):
    return json.dumps({k: v for k, v in cfg.items() if k not in EXECUTION_KEYS}, sort_keys=True,
                      separators=(",", ":"))


def run_id(cfg):
    return f"{cfg['experiment']}-{hashlib.sha256(canonical(cfg).encode()).hexdigest()[:12]}"


def output_root(arg=None):
    return arg or os.environ.get(ENV_OUTPUT) or os.path.join(os.getcwd(), "runs")


def _write_manifest(path, manifest):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def _json_default(o):
    from .experiments import _json_default as d

    return d(o)


def execute(cfg, out_root=None, strict=False):
    """Run one validated config; returns ``(exit_code, run_dir)``."""
    from .experiments import DRIVERS

    validate_config(cfg)
    rid = run_id(cfg)
    run_dir = os.path.join(output_root(out_root), rid)
    os.makedirs(run_dir, exist_ok=True)
    mpath = os.path.join(run_dir, "manifest.json")
    manifest = {
        "run_id": rid,
        "experiment": cfg["experiment"],
        "config": cfg,
        "code_version": __version__,
        "seed_rule": SEED_RULE,
        "status": "running",
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    _write_manifest(mpath, manifest)
    t_begin = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            derived, checks, warns = DRIVERS[cfg["experiment"]](cfg, run_dir)
        warns = list(warns) + [str(w.message) for w in caught]
    except Exception as exc:
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                        wall_clock_s=time.perf_counter() - t_begin)
        _write_manifest(mpath, manifest)
        log.debug("run failed\n%s", traceback.format_exc())
        raise
    breached = [c["name"] for c in checks if not c["passed"]]
    manifest.update(status="completed", derived=derived, tolerances=checks, warnings=warns,
                    breaches=breached, artifacts=sorted(f for f in os.listdir(run_dir) if f != "manifest.json"),
                    wall_clock_s=time.perf_counter() - t_begin)
    _write_manifest(mpath, manifest)
    for w in warns:
        log.warning(w)
    for c in checks:
        log.info("%s %s: %.6g %s %.6g", "PASS" if c["passed"] else "FAIL", c["name"], c["value"], c["op"],
                 c["threshold"])
    code = 2 if (strict and breached) else 0
    return code, run_dir


def load_config(file):
    """Config from a JSON file; a manifest is accepted and its config echo replayed."""
    try:
        with open(file) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {file}: {exc}") from None
    if isinstance(obj, dict) and "config" in obj and "run_id" in obj:
        obj = obj["config"]
    return obj


def report(run_dir, out=None):
    """Aggregate every manifest under ``run_dir`` into ``summary.json`` plus CSVs."""
    if not os.path.isdir(run_dir):
        raise ConfigError(f"not a directory: {run_dir}")
    entries = sorted(d for d in os.listdir(run_dir) if os.path.isfile(os.path.join(run_dir, d, "manifest.json")))
    if not entries:
        raise ConfigError(f"no manifests found under {run_dir}")
    sections = {}
    rows = []
    for d in entries:
        mfile = os.path.join(run_dir, d, "manifest.json")
        try:
            with open(mfile) as fh:
                m = json.load(fh)
            exp, rid, status = m["experiment"], m["run_id"], m["status"]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"corrupt manifest {mfile}: {exc}") from None
        checks = m.get("tolerances", [])
        entry = {"run_id": rid, "status": status, "all_passed": status == "completed" and all(c["passed"] for c in checks),
                 "checks": checks}
        derived = m.get("derived", {}) or {}
        if exp == "splitting":
            for name in ("splitting", "action"):
                if f"{name}_slope" in derived:
                    entry[f"{name}_slope"] = derived[f"{name}_slope"]
                    entry[f"{name}_slope_ok"] = derived[f"{name}_slope"] >= 1.2
        elif exp == "rice":
            for k in ("v", "T", "n_paths", "empirical_mean", "empirical_se", "predicted", "chi0", "chi2"):
                entry[k] = derived.get(k)
        elif exp == "diffusion":
            for k in ("deltaI", "eps_v", "rel_error"):
                entry[k] = derived.get(k)
        sections.setdefault(exp, []).append(entry)
        for c in checks:
            rows.append((rid, exp, c["name"], c["value"], c["op"], c["threshold"], int(c["passed"])))
    out = out or run_dir
    os.makedirs(out, exist_ok=True)
    summary = {"n_runs": len(entries), "code_version": __version__,
               "all_passed": all(e["all_passed"] for s in sections.values() for e in s),
               "experiments": {k: sections[k] for k in sorted(sections)}}
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    with open(os.path.join(out, "checks.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "experiment", "check", "value", "op", "threshold", "passed"])
        w.writerows(rows)
    if "splitting" in sections:
        with open(os.path.join(out, "splitting_sweeps.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run_id", "quantity", "eps", "seed", "measured", "predicted", "residual"])
            for e in sections["splitting"]:
                for qty, fname in (("splitting", "splitting.csv"), ("action", "action.csv")):
                    f = os.path.join(run_dir, e["run_id"], fname)
                    if os.path.isfile(f):
                        with open(f) as src:
                            for r in list(csv.reader(src))[1:]:
                                w.writerow([e["run_id"], qty, *r])
    return summary


def _add_common(p, experiment):
    def num(x):
        return float(x)

    g = p.add_argument_group("common")
    g.add_argument("--model", help="model id")
    g.add_argument("--kernel", help="kernel family: pexp or matern32")
    g.add_argument("--a", type=num, help="powered-exponential exponent in (1, 2]")
    g.add_argument("--seed", type=int)
    g.add_argument("--dt", type=num, help="noise grid step")
    g.add_argument("--config", help="JSON config whose keys seed the defaults (flags override)")
    if experiment in ("simulate", "splitting", "diffusion"):
        g.add_argument("--eps", type=num, nargs="+")
        g.add_argument("--h", type=num, help="RK4 step")
    if experiment in ("melnikov-scan", "rice", "splitting", "diffusion"):
        g.add_argument("--S", type=num, help="Melnikov truncation half-width")
        g.add_argument("--T", type=num, help="scan / counting window length")
        g.add_argument("--I", type=num)
        g.add_argument("--phi", type=num)
    if experiment in ("melnikov-scan", "rice"):
        g.add_argument("--tau", type=num)
        g.add_argument("--kind", choices=["P", "I"])
    if experiment in ("splitting", "diffusion"):
        g.add_argument("--B", type=num)
        g.add_argument("--T-asym", dest="T_asym", type=num)
        g.add_argument("--seed-offset", dest="seed_offset", type=num)
        g.add_argument("--calibration-seed", dest="calibration_seed", type=int)
    if experiment == "sample-noise":
        g.add_argument("--n", type=int)
        g.add_argument("--t-start", dest="t_start", type=num)
        g.add_argument("--B", type=num)
    if experiment == "simulate":
        g.add_argument("--t0", type=num)
        g.add_argument("--t1", type=num)
        for k in ("I", "phi", "p", "q"):
            g.add_argument(f"--{k}", type=num)
        g.add_argument("--stride", type=int)
    if experiment == "rice":
        g.add_argument("--n-paths", dest="n_paths", type=int)
        g.add_argument("--master-seed", dest="master_seed", type=int)
        g.add_argument("--v", help="level: number or sqrt_chi0")
        g.add_argument("--refine", type=int)
        g.add_argument("--workers", type=int)
    if experiment == "splitting":
        g.add_argument("--t0", help="section time or auto")
    if experiment == "diffusion":
        g.add_argument("--v", help="level: number or auto (half the scanned maximum)")


def _coerce_level(v):
    if v is None or v in ("auto", "sqrt_chi0"):
        return v
    return float(v)


def build_parser():
    parser = argparse.ArgumentParser(prog="stochmel", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"stochmel {__version__}")
    parser.add_argument("--out", help=f"output root (default ${ENV_OUTPUT} or ./runs)")
    parser.add_argument("--strict", action="store_true", help="exit 2 on any tolerance breach")
    parser.add_argument("--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for exp in EXPERIMENTS:
        p = sub.add_parser(exp, help=f"run the {exp} experiment")
        _add_common(p, exp)
    p = sub.add_parser("run", help="run a JSON config or replay a manifest")
    p.add_argument("--config", required=True)
    p = sub.add_parser("report", help="aggregate the manifests in a run directory")
    p.add_argument("run_dir", nargs="?", help="directory holding run subdirectories (default: output root)")
    p.add_argument("--summary-out", dest="summary_out", help="where to write summary files (default: run_dir)")
    return parser


def config_from_args(args):
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    cfg["schema_version"] = SCHEMA_VERSION
    cfg["experiment"] = args.command
    skip = {"command", "config", "out", "strict", "verbose", "run_dir", "summary_out"}
    for k, v in vars(args).items():
        if k in skip or v is None:
            continue
        if k == "v":
            v = _coerce_level(v)
        if k == "t0" and args.command == "splitting":
            v = v if v == "auto" else float(v)
        cfg[k] = v
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "report":
            summary = report(args.run_dir or output_root(args.out), args.summary_out)
            print(json.dumps({"n_runs": summary["n_runs"], "all_passed": summary["all_passed"]}))
            return 2 if (args.strict and not summary["all_passed"]) else 0
        if args.command == "run":
            cfg = load_config(args.config)
        else:
            cfg = config_from_args(args)
        code, run_dir = execute(cfg, args.out, args.strict)
        print(run_dir)
        return code
    except (ConfigError, DomainError, ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"stochmel: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
