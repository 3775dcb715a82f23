"""Command line front end: configuration, demos, verification runs and reports.

Exit codes: 0 all gating checks pass, 1 some check failed, 2 bad
configuration, 3 faithfulness failure, 4 internal invariant violated.
"""
import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .algebra import ChainOperator, save_operator
from .errors import ConfigError, ConstraintError, FaithfulnessError, InvariantError, WindowError
from .families import FAMILIES, build_family
from .hamiltonian import export_terms
from .markov_state import build_state, load_sequence, save_sequence
from .records import CheckRecord, all_passed
from .suites import NEEDS_REP, RUNNERS, SUITES, default_suites

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_FAITHFULNESS, EXIT_INVARIANT = 0, 1, 2, 3, 4
PARAM_KEYS = ("alpha", "beta", "gamma", "delta", "h", "occupation", "pattern", "path")


def load_config(path):
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


def merge_config(args):
    """Config file values overridden by command line flags."""
    cfg = load_config(getattr(args, "config", None))
    cfg = dict(cfg)
    params = dict(cfg.get("params") or {})
    for key in PARAM_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            params[key] = v
    if getattr(args, "occupations", None):
        params["occupations"] = [float(t) for t in args.occupations.split(",")]
    cfg["params"] = params
    for key in ("family", "L", "seed", "out", "sample"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "suites", None):
        cfg["suites"] = args.suites
    tols = dict(cfg.get("tolerances") or {})
    for item in getattr(args, "tol", None) or []:
        if "=" not in item:
            raise ConfigError(f"tolerance override {item!r} must look like check-prefix=value")
        k, v = item.split("=", 1)
        try:
            tols[k] = float(v)
        except ValueError:
            raise ConfigError(f"tolerance override {item!r} is not a number") from None
    cfg["tolerances"] = tols
    cfg.setdefault("family", "trivial")
    cfg.setdefault("L", 4)
    cfg.setdefault("seed", 0)
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    if cfg["family"] not in FAMILIES:
        raise ConfigError(f"unknown family {cfg['family']!r}; expected one of {FAMILIES}")
    return cfg


def resolve_suites(cfg, family):
    req = cfg.get("suites")
    if req is None:
        return default_suites(family)
    if isinstance(req, str):
        req = [s.strip() for s in req.split(",") if s.strip()]
    if req == ["all"]:
        req = [s for s in SUITES if family.rep is not None or s not in NEEDS_REP]
    unknown = [s for s in req if s not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suites {unknown}; expected a subset of {list(SUITES)}")
    if family.rep is None and any(s in NEEDS_REP for s in req):
        raise ConfigError(f"suites {list(NEEDS_REP)} need a constructed amplitude sequence")
    return [s for s in SUITES if s in req]


def apply_tolerances(records, tols):
    if not tols:
        return records
    out = []
    for r in records:
        for prefix, t in tols.items():
            if r.check.startswith(prefix):
                r = CheckRecord(r.check, r.anchor, r.residual, t, r.kind, r.detail)
        out.append(r)
    return out


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items() if not str(k).startswith("_")}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def _record_dict(r):
    d = r.as_dict()
    for k in ("residual", "tolerance"):
        d[k] = _jsonable(d[k])
    return d


def run_suites(cfg, family, suites):
    """Run suites in dependency order with one seeded generator per suite."""
    results, extras = {}, {}
    for i, name in enumerate(suites):
        rng = np.random.default_rng([cfg["seed"], i, SUITES.index(name)])
        recs, extra = RUNNERS[name](family, rng, cfg)
        results[name] = apply_tolerances(recs, cfg.get("tolerances"))
        extras[name] = extra
    return results, extras


def build_report(cfg, family, results, extras):
    allrecs = [r for recs in results.values() for r in recs]
    gating = [r for r in allrecs if r.gating]
    failed = [r for r in gating if not r.passed]
    return {
        "environment": {"L": family.window.length, "family": family.name, "params": _jsonable(family.params),
                        "seed": cfg["seed"], "tool_version": __version__, "suites": list(results)},
        "family_data": _jsonable(family.extra),
        "suites": {name: [_record_dict(r) for r in recs] for name, recs in results.items()},
        "extras": _jsonable(extras),
        "summary": {"records": len(allrecs), "gating": len(gating), "passed": len(gating) - len(failed),
                    "failed": len(failed), "info": len(allrecs) - len(gating),
                    "controls": sum(r.kind == "control" for r in allrecs),
                    "failures": [f"{r.check} ({r.anchor}): {r.residual:.3e} vs {r.tolerance:.1e}" for r in failed]},
        "status": "pass" if all_passed(allrecs) else "fail",
    }


def dump_report(report, out):
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _execute(cfg, suites_override=None, after=None):
    family = build_family(cfg["family"], cfg["L"], cfg["params"])
    suites = suites_override or resolve_suites(cfg, family)
    results, extras = run_suites(cfg, family, suites)
    report = build_report(cfg, family, results, extras)
    if after is not None:
        after(family, results, extras, report)
    dump_report(report, cfg.get("out"))
    return EXIT_OK if report["status"] == "pass" else EXIT_FAILED


def cmd_run(args):
    return _execute(merge_config(args))


def cmd_demo(args):
    cfg = merge_config(args)
    family = build_family(cfg["family"], cfg["L"], cfg["params"])
    d = Path(args.dir)
    if family.seq is not None:
        path = save_sequence(family.seq, d)
    else:
        d.mkdir(parents=True, exist_ok=True)
        st = family.state
        save_operator(d / "state", ChainOperator(st.window, st.rho, st.window.region(st.window.sites), "even"),
                      st.normalization)
        manifest = {"family": family.name, "params": _jsonable(family.params), "state": "state",
                    "window_first": st.window.first_site, "window_length": st.window.length}
        path = d / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(f"{path}\n")
    return EXIT_OK


def cmd_verify(args):
    cfg = merge_config(args)
    cfg["family"] = "from_files"
    cfg["params"] = {"path": args.path}

    def round_trip(family, results, extras, report):
        seq = family.seq
        if seq.family in ("trivial", "ising", "hopping"):
            fresh = build_family(seq.family, seq.window.length, seq.params)
            diff = float(np.abs(fresh.state.rho - family.state.rho).max())
            rec = CheckRecord("files:round-trip", "plumbing", diff, 1e-14)
            results.setdefault("files", []).append(rec)
            report.update(build_report(cfg, family, results, extras))

    cfg["suites"] = args.suites or "build,markov"
    return _execute(cfg, None, round_trip)


def cmd_hamiltonian(args):
    cfg = merge_config(args)

    def export(family, results, extras, report):
        if args.export:
            export_terms(extras["hamiltonian"]["_terms"], args.export)

    return _execute(cfg, ["hamiltonian"], export)


def cmd_correlations(args):
    cfg = merge_config(args)
    mix = dict(cfg.get("mixing") or {})
    if args.pi:
        try:
            mix["pi"] = [[float(v) for v in row.split(",")] for row in args.pi.split(";")]
        except ValueError:
            raise ConfigError(f"cannot parse transition matrix {args.pi!r}") from None
    if args.length:
        mix["length"] = args.length
    cfg["mixing"] = mix

    def write_csv(family, results, extras, report):
        if args.csv:
            m = extras["mixing"]
            with open(args.csv, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["r", "quantum", "classical"])
                for r, q, c in zip(m["distances"], m["correlations"], m["classical"]):
                    wr.writerow([r, repr(q), repr(c)])

    return _execute(cfg, ["mixing"], write_csv)


def cmd_disintegrate(args):
    cfg = merge_config(args)

    def write_csv(family, results, extras, report):
        if args.csv:
            cd = extras["structure"].get("_classical_data")
            with open(args.csv, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["j", "omega", "omega_prime", "value", "kind"])
                for row in (cd.csv_rows() if cd is not None else []):
                    wr.writerow([row[0], row[1], row[2], repr(row[3]), row[4]])

    return _execute(cfg, ["structure"], write_csv)


def _common(p):
    p.add_argument("--config", help="YAML config file; flags override its values")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--L", type=int, help="window length")
    for k in ("alpha", "beta", "gamma", "delta", "h", "occupation"):
        p.add_argument(f"--{k}", type=float)
    p.add_argument("--occupations", help="comma separated per-site occupations (product family)")
    p.add_argument("--pattern", choices=("Full", "Scalar"), help="product family range pattern")
    p.add_argument("--seed", type=int)
    p.add_argument("--sample", type=int, help="monomial sample size above the full-basis length")
    p.add_argument("--out", help="report path (default stdout)")
    p.add_argument("--tol", action="append", metavar="PREFIX=VALUE", help="tolerance override for checks by id prefix")


def make_parser():
    ap = argparse.ArgumentParser(prog="carmarkov", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("run", help="run verification suites")
    _common(p)
    p.add_argument("--suites", help="comma separated subset of " + ",".join(SUITES) + " or 'all'")
    p.add_argument("--path", help="sequence directory for the from_files family")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("demo", help="write a family's amplitudes or state to files")
    _common(p)
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_demo)
    p = sub.add_parser("verify", help="load a sequence directory and verify it")
    _common(p)
    p.add_argument("--path", required=True)
    p.add_argument("--suites")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("hamiltonian", help="local potentials and nearest-neighbour terms")
    _common(p)
    p.add_argument("--export", help="directory for term operator files")
    p.set_defaults(func=cmd_hamiltonian)
    p = sub.add_parser("correlations", help="correlation decay of a diagonal lift")
    _common(p)
    p.add_argument("--pi", help="transition matrix as 'a,b;c,d'")
    p.add_argument("--length", type=int)
    p.add_argument("--csv", help="write the correlation curve")
    p.set_defaults(func=cmd_correlations)
    p = sub.add_parser("disintegrate", help="classification, disintegration and reconstruction")
    _common(p)
    p.add_argument("--csv", help="write the classical chain data")
    p.set_defaults(func=cmd_disintegrate)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConstraintError, WindowError) as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    except FaithfulnessError as exc:
        sys.stderr.write(f"faithfulness error: {exc}\n")
        return EXIT_FAITHFULNESS
    except InvariantError as exc:
        sys.stderr.write(f"invariant error: {exc}\n")
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
