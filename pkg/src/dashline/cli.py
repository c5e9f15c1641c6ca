"""Command-line entry point.

Subcommands: run (attack x defense accuracy matrix), sweep (parameter
sweeps), verify (Monte-Carlo bound checks), bypass-demo (repeat-query bypass
of the randomized defense).  Every output file embeds the resolved config
and root seed; exit codes are the machine-readable result (0 ok, 1 failed
bound check, 2 config/IO error).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .config import (
    ConfigError,
    build_experiment_config,
    build_verify_config,
    load_config,
    resolved_dict,
)

PRESET_DIR = Path(__file__).parent / "presets"


def _json_dump(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(rows, path: Path, header_meta: dict) -> None:
    with open(path, "w") as fh:
        fh.write("# config: " + json.dumps(header_meta, sort_keys=True) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _result_payload(result: harness.ExperimentResult, meta: dict) -> dict:
    return {
        "config": meta,
        "defenses": result.defense_names,
        "tactics": result.tactic_names,
        "accuracy": {f"{d}|{t}": result.accuracy[(d, t)]
                     for d in result.defense_names for t in result.tactic_names},
        "reversal_stats": {f"{d}|{t}": list(result.reversal_stats[(d, t)])
                           for d in result.defense_names for t in result.tactic_names},
    }


def _write_matrix(result: harness.ExperimentResult, meta: dict,
                  outdir: Path, fmt: str, stem: str = "matrix") -> None:
    if fmt == "csv":
        _write_csv(result.accuracy_rows(), outdir / f"{stem}_accuracy.csv", meta)
        curve_rows = [["query"] + [f"{d}|{t}" for d in result.defense_names
                                   for t in result.tactic_names
                                   if t != "none"]]
        curves = [result.asr_curve(d, t) for d in result.defense_names
                  for t in result.tactic_names if t != "none"]
        for q in range(result.budget + 1):
            curve_rows.append([q] + [float(c[q]) for c in curves])
        _write_csv(curve_rows, outdir / f"{stem}_asr_curves.csv", meta)
    _json_dump(_result_payload(result, meta), outdir / f"{stem}.json")


def _print_matrix(result: harness.ExperimentResult) -> None:
    rows = result.accuracy_rows()
    widths = [max(len(_cell_str(r[i])) for r in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(_cell_str(v).rjust(w) for v, w in zip(row, widths)))


def _cell_str(v) -> str:
    return f"{v:.3f}" if isinstance(v, float) else str(v)


def cmd_run(raw: dict, args) -> int:
    cfg = build_experiment_config(raw)
    cfg = _apply_overrides(cfg, args)
    result = harness.run_matrix(cfg)
    meta = resolved_dict(cfg)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_matrix(result, meta, outdir, args.format)
    print(f"under-attack accuracy (seed {cfg.root_seed}):")
    _print_matrix(result)
    print(f"results written to {outdir}")
    return 0


def cmd_sweep(raw: dict, args) -> int:
    axis = raw.get("axis")
    values = raw.get("values")
    if not isinstance(axis, str) or not isinstance(values, list) or not values:
        raise ConfigError("sweep config requires 'axis' and a nonempty 'values' list")
    cfg = build_experiment_config(raw)
    cfg = _apply_overrides(cfg, args)
    results = harness.sweep(cfg, axis, values)
    meta = {"axis": axis, "values": values, **resolved_dict(cfg)}
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)

    header = [axis] + [f"{d}|{t}" for d in results[0][1].defense_names
                       for t in results[0][1].tactic_names]
    rows = [header]
    for v, res in results:
        rows.append([v] + [res.accuracy[(d, t)] for d in res.defense_names
                           for t in res.tactic_names])
    _write_csv(rows, outdir / "sweep_accuracy.csv", meta)
    _json_dump({"config": meta,
                "results": [{"value": v, **_result_payload(res, {})}
                            for v, res in results]},
               outdir / "sweep.json")
    print(f"sweep over {axis}: {len(values)} points")
    for v, res in results:
        worst = min(res.accuracy[(d, t)] for d in res.defense_names
                    for t in res.tactic_names if t != "none")
        print(f"  {axis}={v:g}: worst-cell accuracy {worst:.3f}")
    print(f"results written to {outdir}")
    return 0


def _run_checks(vcfg: dict) -> list[harness.BoundCheck]:
    rng = np.random.default_rng(np.random.SeedSequence([vcfg["root_seed"], 0xBC]))
    checks: list[harness.BoundCheck] = []
    for chk in vcfg["checks"]:
        kind = chk["check"]
        if kind == "theorem1":
            checks.append(harness.verify_theorem1(
                chk.get("tau", 6.0), chk.get("h", 0.3), chk.get("p", 0.5),
                chk.get("eps", 1.0), chk.get("trials", 10000), rng))
        elif kind == "theorem2":
            checks.append(harness.verify_theorem2(
                chk.get("tau", 6.0), chk.get("h", 0.3), chk.get("p", 0.5),
                chk.get("eps", 1.0), chk.get("t", 23), chk.get("trials", 10000), rng))
        elif kind == "bypass-expectation":
            p = chk.get("p", 0.5)
            trials = chk.get("trials", 10000)
            mean, stderr = harness.expected_bypass_probes(p, trials, rng)
            expected = chk.get("expected", 1.0 + 1.0 / (p * (1.0 - p)))
            tol = chk.get("tolerance", 0.2)
            checks.append(harness.BoundCheck(
                name=f"bypass-expectation(p={p})",
                empirical=mean, bound=expected, sigma=stderr, kind="interval",
                passed=abs(mean - expected) <= tol,
                details={"trials": trials, "tolerance": tol,
                         "stopping_time_mean": harness.two_distinct_expectation(p)}))
        elif kind == "branch-proportion":
            from .defenses import DldParams, build_interval_set
            tau, h = chk.get("tau", 6.0), chk.get("h", 0.3)
            step = chk.get("step", 0.04)
            samples = chk.get("samples", 100000)
            K = chk.get("K", 5)
            for ratio in chk.get("ratios", [i / 10 for i in range(1, 10)]):
                params = DldParams(tau, h, build_interval_set(step, ratio))
                prop = harness.branch_proportion(params, samples, K, rng)
                sigma = (ratio * (1 - ratio) / samples) ** 0.5
                checks.append(harness.BoundCheck(
                    name=f"branch-proportion(|S|={ratio:g})",
                    empirical=prop, bound=ratio, sigma=sigma, kind="interval",
                    passed=abs(prop - ratio) <= 3 * sigma,
                    details={"samples": samples, "K": K}))
        elif kind == "bypass-demo":
            checks.extend(harness.bypass_demo(
                chk.get("tau", 6.0), chk.get("h", 0.3), chk.get("p", 0.5),
                chk.get("eps", 1.0), chk.get("trials", 1000),
                chk.get("max_probes", 50), chk.get("budget_factor", 10.0), rng))
    return checks


def _verify_like(raw: dict, args, stem: str) -> int:
    vcfg = build_verify_config(raw)
    if args.seed is not None:
        vcfg["root_seed"] = args.seed
    checks = _run_checks(vcfg)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    report = {"root_seed": vcfg["root_seed"],
              "config": vcfg,
              "checks": [c.to_dict() for c in checks],
              "all_passed": all(c.passed for c in checks)}
    _json_dump(report, outdir / f"{stem}.json")
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"[{status}] {c.name}: empirical={c.empirical:.6g} "
              f"bound={c.bound:.6g} ({c.kind}, sigma={c.sigma:.3g})")
    print(f"report written to {outdir / (stem + '.json')}")
    return 0 if report["all_passed"] else 1


def cmd_verify(raw: dict, args) -> int:
    return _verify_like(raw, args, "verify_report")


def cmd_bypass_demo(raw: dict, args) -> int:
    # a bypass-demo config is a verify config whose checks default to the demo
    if "checks" not in raw:
        raw = {"root_seed": raw.pop("root_seed", 19260817),
               "checks": [{"check": "bypass-demo", **raw}]}
    return _verify_like(raw, args, "bypass_demo_report")


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg = replace(cfg, root_seed=args.seed)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dashline",
        description="Score-based query attacks vs. output-perturbation defenses.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, fn in (("run", cmd_run), ("sweep", cmd_sweep),
                     ("verify", cmd_verify), ("bypass-demo", cmd_bypass_demo)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="JSON config file (see presets/)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's root seed")
        p.add_argument("--output", default="out",
                       help="output directory (created if missing)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", type=int, default=None,
                       help="cap on matrix-cell parallelism")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        return args.fn(raw, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
