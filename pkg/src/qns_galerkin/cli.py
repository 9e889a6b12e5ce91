"""Command-line entry point: simulate, verify, sweep and report.

Failures exit nonzero and print one JSON object ``{"error": ..., "kind": ...}``
on stderr.  Outputs written before a failure are left in place.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

from .cascade import SweepTable, delta_sweep, eta_sweep, kappa_limit_study
from .config import ConfigError, load_config
from .galerkin import run
from .records import RecordStreamError, RecordWriter, read_records
from .verification import run_battery

if TYPE_CHECKING:
    from .config import RunConfig

log = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"
SUMMARY_FILE = "summary.json"

SWEEP_DEFAULTS = {
    "eta": [1e-2, 1e-3, 1e-4, 1e-5],
    "delta": [1e-4, 1e-6, 1e-8],
    "kappa": [1e-2, 1e-3, 1e-4],
}


class CliError(Exception):
    def __init__(self, kind: str, message: str, status: int = 1):
        self.kind = kind
        self.status = status
        super().__init__(message)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qns-galerkin", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="{simulate,verify,sweep,report}")

    def common(p, config_required):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--strict", action="store_true", help="reject steps that activate the density floor")

    p = sub.add_parser("simulate", help="run one configuration and write its record stream")
    common(p, True)

    p = sub.add_parser("verify", help="inequality and identity battery on random densities")
    p.add_argument("--checks", type=int, default=100, help="number of random fields (default 100)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", help="optional directory for a CSV report")

    p = sub.add_parser("sweep", help="vanishing-parameter study along a decreasing sequence")
    common(p, True)
    p.add_argument("--parameter", choices=sorted(SWEEP_DEFAULTS), required=True)
    p.add_argument("--values", type=float, nargs="+", help="strictly decreasing parameter values")

    p = sub.add_parser("report", help="CSV plot data from a record stream or a sweep table")
    p.add_argument("input", help="records.jsonl or sweep.json")
    p.add_argument("--out", help="CSV file (default: stdout)")
    return ap


def _load(args) -> "RunConfig":
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError("config", "; ".join(exc.violations)) from None
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("config", str(exc)) from None
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.strict:
        changes["strict"] = True
    return cfg.replace(**changes) if changes else cfg


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _outdir(args.out)
    stream = out / RECORDS_FILE
    if stream.exists():
        raise CliError("output", f"{stream} already exists; record streams are append-only per run")
    with RecordWriter(stream) as writer:
        result = run(cfg, on_record=writer.append)
    summary = {
        "name": cfg.name,
        "label": result.label,
        "status": result.status,
        "error": result.error,
        "steps": len(result.records) - 1,
        "projection_defect": result.projection_defect,
        "config": cfg.to_dict(),
    }
    (out / SUMMARY_FILE).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{result.label}: {result.status}, {summary['steps']} steps -> {stream}")
    if not result.completed:
        raise CliError("run", result.error or "run failed")
    return 0


def cmd_verify(args) -> int:
    if args.checks < 1:
        raise CliError("usage", "--checks must be positive", status=2)
    results = run_battery(args.checks, args.seed)
    for r in results:
        print(r.line())
    if args.out:
        rows = [[r.name, r.passed, r.worst, r.threshold, " ".join(map(str, r.failures))] for r in results]
        _write_csv(_outdir(args.out) / "verify.csv", ["check", "passed", "worst", "threshold", "failed_fields"], rows)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CliError("verify", f"checks failed: {', '.join(failed)}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = args.values or SWEEP_DEFAULTS[args.parameter]
    try:
        if args.parameter == "eta":
            table = eta_sweep(cfg, values)
        elif args.parameter == "delta":
            table = delta_sweep(cfg, values)
        else:
            table = kappa_limit_study(cfg, values)
    except ValueError as exc:
        raise CliError("usage", str(exc), status=2) from None
    out = _outdir(args.out)
    path = out / f"sweep_{args.parameter}.json"
    path.write_text(table.to_json() + "\n")
    for v, st, m in zip(table.values, table.status, table.metrics):
        print(f"{args.parameter}={v:g} {st} " + " ".join(f"{k}={x:.6e}" for k, x in sorted(m.items())))
    if "failed" in table.status:
        raise CliError("sweep", f"some member runs failed; table written to {path}")
    return 0


def _write_csv(path: Path | None, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if path is None:
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).write_text(buf.getvalue())


def records_csv(records) -> tuple[list[str], list[list]]:
    """Time series of energy terms, total dissipation, mass and density range."""
    header = ["step", "time", "kinetic", "pressure", "cold", "quantum", "hyper", "energy",
              "dissipation", "mass", "min_rho", "max_rho", "iterations"]
    rows = []
    for r in records:
        e = r.energy
        rows.append([r.step, repr(r.time), repr(e.kinetic), repr(e.pressure), repr(e.cold), repr(e.quantum),
                     repr(e.hyper), repr(e.total), repr(sum(r.dissipation.values())), repr(r.mass),
                     repr(r.min_rho), repr(r.max_rho), r.iterations])
    return header, rows


def sweep_csv(table: SweepTable) -> tuple[list[str], list[list]]:
    names = sorted({k for m in table.metrics for k in m})
    header = [table.parameter, "status"] + names
    rows = [[repr(v), st] + [repr(m[k]) if k in m else "" for k in names]
            for v, st, m in zip(table.values, table.status, table.metrics)]
    return header, rows


def cmd_report(args) -> int:
    src = Path(args.input)
    try:
        if src.suffix == ".json":
            header, rows = sweep_csv(SweepTable.from_dict(json.loads(src.read_text())))
        else:
            header, rows = records_csv(read_records(src))
    except RecordStreamError as exc:
        raise CliError("records", str(exc)) from None
    except (OSError, ValueError, KeyError) as exc:
        raise CliError("input", str(exc)) from None
    _write_csv(Path(args.out) if args.out else None, header, rows)
    return 0


COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify, "sweep": cmd_sweep, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("QNS_LOG_LEVEL", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)  # exits 2 on usage errors
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        kind, message, status = exc.kind, str(exc), exc.status
    except BrokenPipeError:  # downstream reader closed early, e.g. `| head`
        sys.stderr.close()
        return 0
    except Exception as exc:  # still report machine-readably
        log.debug("unhandled error", exc_info=True)
        kind, message, status = "internal", f"{type(exc).__name__}: {exc}", 1
    sys.stderr.write(json.dumps({"error": message, "kind": kind}) + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
