"""Command-line front end.

    pcsft-clicks run --config two_peak.json --seed 42 --out results/
    pcsft-clicks scan-epsilon --preset two_peak --out results/
    pcsft-clicks scan-coincidence --preset two_peak --out results/
    pcsft-clicks ergodicity --preset two_peak --out results/
    pcsft-clicks basis --preset uniform --out results/
    pcsft-clicks presets [--out DIR]

Outputs go to ``--out``: a JSON summary embedding the resolved scenario,
seed and package version, and CSV tables (UTF-8, header row).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from pcsft import __version__
from pcsft.experiment import (
    ConfigError,
    coincidence_scan,
    epsilon_invariance_scan,
    run_basis_measurement,
    run_detection,
    basis_oracle,
)
from pcsft.field_space import FieldError, norm_squared
from pcsft.observables import PositionDensity, ergodicity_report, time_average_error_sweep
from pcsft.scenario import PRESET_SCENARIOS, Scenario, ScenarioError, load_preset, parse_scenario, preset_scenario

log = logging.getLogger("pcsft")

RUN_COLUMNS = ["epsilon", "replica_id", "detector_id", "count", "lambda", "P", "P_oracle"]
SCAN_EPS_COLUMNS = ["epsilon", "detector_id", "P", "P_oracle", "lambda", "stderr"]
SCAN_COINC_COLUMNS = ["C", "w", "n_double", "bound_T_over_2C"]
CLICK_COLUMNS = ["detector_id", "click_time_s"]
ERGODICITY_COLUMNS = [
    "functional", "Delta", "n_ensemble", "time_average", "time_stderr", "ensemble_average",
    "ensemble_stderr", "difference", "combined_error", "batches", "converged", "violation", "flagged",
]
SWEEP_COLUMNS = ["Delta", "rms_error"]
BASIS_COLUMNS = ["basis_index", "detector_id", "count", "lambda", "P", "P_oracle", "P_stderr"]


class CLIError(RuntimeError):
    pass


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _manifest(sc: Scenario, command: str, threads: int) -> dict:
    return {
        "artifact": "pcsft-clicks",
        "version": __version__,
        "command": command,
        "source": sc.source,
        "seed": sc.config.process.seed,
        "threads": threads,
        "config": sc.resolved,
    }


def _load(args) -> Scenario:
    if bool(args.config) == bool(args.preset):
        raise CLIError("give exactly one of --config or --preset")
    if args.config:
        return parse_scenario(args.config, seed=args.seed)
    return load_preset(args.preset, seed=args.seed)


def _outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CLIError(f"output directory {out} is not writable: {exc}") from None
    return out


def _want(args, kind: str) -> bool:
    return args.format in (kind, "both")


def cmd_run(args) -> int:
    sc = _load(args)
    out = _outdir(args.out)
    stats = run_detection(sc.config, threads=args.threads, keep_logs=True)
    d = stats.to_dict()
    if _want(args, "json"):
        _write_json(out / "run.json", {"manifest": _manifest(sc, "run", args.threads), "statistics": d})
    if _want(args, "csv"):
        rows = []
        for r in range(stats.replicas):
            tot = int(stats.per_replica_counts[r].sum())
            for j, did in enumerate(stats.detector_ids):
                c = int(stats.per_replica_counts[r, j])
                rows.append({
                    "epsilon": float(stats.epsilons[j]), "replica_id": r, "detector_id": did,
                    "count": c, "lambda": stats.gamma * c / stats.T,
                    "P": c / tot if tot else math.nan,
                    "P_oracle": float(stats.oracle_probabilities[j]),
                })
        _write_csv(out / "run.csv", RUN_COLUMNS, rows)
        if args.clicks:
            _write_click_logs(out, stats)
    for rec in d["detectors"]:
        print(f"{rec['id']}: clicks={rec['count']} lambda={rec['lambda']:.6g}/s "
              f"(oracle {rec['lambda_oracle']:.6g}) P={rec['P']:.6f} +/- {rec['P_stderr']:.2g} "
              f"(oracle {rec['P_oracle']:.6f})")
    print(f"double clicks (w={stats.window:g} s): {stats.n_double}")
    return 0


def _write_click_logs(out: Path, stats) -> None:
    for lg in stats.logs:
        name = "clicks.csv" if stats.replicas == 1 else f"clicks_r{lg.replica_id}.csv"
        with (out / name).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CLICK_COLUMNS)
            for j, s in zip(lg.detector.tolist(), lg.step.tolist()):
                w.writerow([stats.detector_ids[j], repr(s * stats.dt)])


def cmd_scan_epsilon(args) -> int:
    sc = _load(args)
    out = _outdir(args.out)
    eps = sc.scan_epsilon
    if not eps:
        n2 = norm_squared(sc.config.psi)
        eps = [0.1 * n2, n2, 10 * n2]
    scan = epsilon_invariance_scan(sc.config, eps, threads=args.threads)
    summary = {
        "epsilons": scan.epsilons,
        "slope_total": scan.slope,
        "slopes": scan.slopes,
        "max_pairwise_deviation": scan.max_pairwise_deviation,
        "pairwise_within_3sigma": scan.pairwise_within_band,
        "max_oracle_deviation": scan.max_oracle_deviation,
        "oracle_within_3sigma": scan.oracle_within_band,
        "runs": [r.to_dict() for r in scan.runs],
    }
    if _want(args, "json"):
        _write_json(out / "scan_epsilon.json", {"manifest": _manifest(sc, "scan-epsilon", args.threads), "scan": summary})
    if _want(args, "csv"):
        _write_csv(out / "scan_epsilon.csv", SCAN_EPS_COLUMNS, scan.rows())
    for r in scan.rows():
        print(f"eps={r['epsilon']:.6g} {r['detector_id']}: P={r['P']:.6f} (oracle {r['P_oracle']:.6f}) "
              f"lambda={r['lambda']:.6g}/s")
    print(f"log-log slope of lambda vs epsilon: {scan.slope:.4f}")
    return 0


def cmd_scan_coincidence(args) -> int:
    sc = _load(args)
    out = _outdir(args.out)
    Cs = sc.scan_C or [1.0, 5.0, 25.0]
    dt = sc.config.process.dt
    ws = sc.scan_w or [10 * dt, 100 * dt, 1000 * dt]
    scan = coincidence_scan(sc.config, Cs, ws, threads=args.threads)
    if _want(args, "json"):
        _write_json(out / "scan_coincidence.json",
                    {"manifest": _manifest(sc, "scan-coincidence", args.threads), "rows": scan.rows})
    if _want(args, "csv"):
        _write_csv(out / "scan_coincidence.csv", SCAN_COINC_COLUMNS, scan.rows)
    for r in scan.rows:
        print(f"C={r['C']:g} w={r['w']:g}: n_double={r['n_double']} bound T/2C={r['bound_T_over_2C']:g}")
    return 0


def cmd_ergodicity(args) -> int:
    sc = _load(args)
    out = _outdir(args.out)
    e = sc.ergodicity
    f = PositionDensity(e["cell"])
    rep = ergodicity_report(f, sc.config.psi, sc.config.process, e["Delta"], e["n"])
    payload = {"manifest": _manifest(sc, "ergodicity", args.threads), "report": rep.to_dict()}
    sweep = None
    if e["sweep"]:
        sweep = time_average_error_sweep(f, sc.config.psi, sc.config.process, e["sweep"], e["replicas"])
        payload["sweep"] = {"deltas": sweep.deltas, "rms_errors": sweep.rms_errors, "slope": sweep.slope}
    if _want(args, "json"):
        _write_json(out / "ergodicity.json", payload)
    if _want(args, "csv"):
        _write_csv(out / "ergodicity.csv", ERGODICITY_COLUMNS, [rep.to_dict()])
        if sweep is not None:
            _write_csv(out / "ergodicity_sweep.csv", SWEEP_COLUMNS,
                       [{"Delta": d, "rms_error": r} for d, r in zip(sweep.deltas, sweep.rms_errors)])
    print(f"{rep.functional}: time={rep.time_average:.6g} +/- {rep.time_stderr:.2g}, "
          f"ensemble={rep.ensemble_average:.6g} +/- {rep.ensemble_stderr:.2g}, "
          f"{'FLAGGED' if rep.flagged else 'agree'}")
    if sweep is not None:
        print(f"time-average error slope vs Delta: {sweep.slope:.3f}")
    return 0


def cmd_basis(args) -> int:
    sc = _load(args)
    if sc.basis is None:
        raise CLIError("scenario has no 'basis' entry")
    out = _outdir(args.out)
    stats = run_basis_measurement(sc.config, sc.basis, threads=args.threads, keep_logs=args.clicks)
    oracle = basis_oracle(sc.config.psi, sc.basis)
    d = stats.to_dict()
    rows = []
    for j, rec in enumerate(d["detectors"]):
        rec["P_oracle_unrenormalised"] = float(oracle[j])
        rows.append({"basis_index": j, "detector_id": rec["id"], **rec})
    if _want(args, "json"):
        _write_json(out / "basis.json", {"manifest": _manifest(sc, "basis", args.threads), "statistics": d})
    if _want(args, "csv"):
        _write_csv(out / "basis.csv", BASIS_COLUMNS, rows)
        if args.clicks:
            _write_click_logs(out, stats)
    for r in rows:
        print(f"{r['detector_id']}: clicks={r['count']} P={r['P']:.6f} (oracle {r['P_oracle']:.6f})")
    return 0


def cmd_presets(args) -> int:
    for name, spec in PRESET_SCENARIOS.items():
        print(f"{name}: {spec['description']}")
    if args.out:
        out = _outdir(args.out)
        for name in PRESET_SCENARIOS:
            (out / f"{name}.json").write_text(json.dumps(preset_scenario(name), indent=2) + "\n",
                                              encoding="utf-8")
    return 0


COMMANDS = {
    "run": cmd_run,
    "scan-epsilon": cmd_scan_epsilon,
    "scan-coincidence": cmd_scan_coincidence,
    "ergodicity": cmd_ergodicity,
    "basis": cmd_basis,
    "presets": cmd_presets,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcsft-clicks", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "presets":
            sp.add_argument("--out", default=None, help="write preset scenario files here")
            continue
        sp.add_argument("--config", help="scenario file (JSON)")
        sp.add_argument("--preset", choices=sorted(PRESET_SCENARIOS), help="built-in scenario")
        sp.add_argument("--seed", type=_u64, default=None, help="override the scenario seed")
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--format", choices=("json", "csv", "both"), default="both")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--clicks", action="store_true", help="also write click logs as CSV")
    return p


def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ConfigError, FieldError, CLIError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
