"""Command-line entry point: ``verify``, ``train``, ``sweep`` and ``catalog``.

Exit codes: 0 success, 1 a check or run failed, 2 usage or config error.
Every command that writes files puts a ``manifest.json`` next to them with
the resolved config, seed, timestamps and a SHA-256 digest per file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, build_config, expand_grid, load_config, parse_overrides
from .harness import run_one, sweep, write_metrics_csv, write_summary_json, write_trace_csv
from .implicit import CATALOG
from .verify import COLUMNS, SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MANIFEST = "manifest.json"

log = logging.getLogger("negsampling")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    started: str
    finished: str = ""
    files: dict[str, str] = field(default_factory=dict)
    tool_version: str = __version__

    def finish(self, out_dir: Path) -> None:
        self.finished = _now()
        self.files = {p.name: sha256_of(p) for p in sorted(out_dir.iterdir())
                      if p.is_file() and p.name != MANIFEST}
        (out_dir / MANIFEST).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_of(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# verify


def _format_rows(records: list[dict], columns, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(records, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(records)
    return buf.getvalue()


def cmd_verify(args) -> int:
    out = _out_dir(args.out)
    manifest = RunManifest("verify", {"suite": args.suite, "trials": args.trials}, args.seed, _now())
    rows = run_suite(args.suite, trials=args.trials, seed=args.seed)
    records = [r.as_record() for r in rows]
    (out / f"verify_{args.suite}.{args.format}").write_text(_format_rows(records, COLUMNS, args.format))
    manifest.finish(out)
    failed = [r for r in rows if not r.passed]
    by_check: dict[str, list[bool]] = {}
    for r in rows:
        by_check.setdefault(r.check_name, []).append(r.passed)
    for name, passes in by_check.items():
        print(f"{name:40s} {sum(passes)}/{len(passes)} pass")
    return EXIT_FAIL if failed else EXIT_OK


# --------------------------------------------------------------------------
# train / sweep


def _cli_overrides(pairs: list[str]) -> dict:
    text = "\n".join(pairs)
    fixed, grid = parse_overrides(text)
    if grid:
        raise ConfigError("--set does not take grid values")
    return fixed


def _write_run_outputs(out: Path, results: list[dict], fmt: str) -> None:
    write_metrics_csv(results, out / "metrics.csv")
    write_summary_json(results, out / "summary.json")
    write_trace_csv(results, out / "trace.csv")
    if fmt == "json":
        from .harness import metric_rows

        (out / "metrics.json").write_text(json.dumps(metric_rows(results), indent=2) + "\n")


def cmd_train(args) -> int:
    extra = _cli_overrides(args.set)
    if args.seed is not None:
        extra["seed"] = args.seed
    config = load_config(args.config, **extra) if args.config else build_config(extra)
    out = _out_dir(args.out)
    manifest = RunManifest("train", asdict(config), config.seed, _now())
    result = {"config_id": 0, **run_one(config), "error": None}
    _write_run_outputs(out, [result], args.format)
    manifest.finish(out)
    m = result["metrics"]
    print(f"{config.label}: balanced error {m.balanced_error:.4f}")
    for name, s in m.slices.items():
        if s is not None:
            print(f"  {name:5s} balanced error {s['balanced_error']:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    extra = _cli_overrides(args.set)
    fixed, grid = parse_overrides(Path(args.grid).read_text())
    if args.seed is not None:
        extra["seed"] = args.seed
    configs = expand_grid(fixed, grid, **extra)
    out = _out_dir(args.out)
    manifest = RunManifest("sweep", {"base": fixed, "grid": grid, "overrides": extra},
                           extra.get("seed", fixed.get("seed")), _now())
    results = sweep(configs, n_jobs=args.jobs)
    _write_run_outputs(out, results, args.format)
    manifest.finish(out)
    errors = [r for r in results if r["error"]]
    for r in results:
        label = configs[r["config_id"]].label
        if r["error"]:
            print(f"[{r['config_id']}] {label}: FAILED {r['error']}")
        else:
            print(f"[{r['config_id']}] {label}: balanced error {r['metrics'].balanced_error:.4f}")
    return EXIT_FAIL if errors else EXIT_OK


# --------------------------------------------------------------------------
# catalog

CATALOG_COLUMNS = ("family", "sampler", "weighting", "rho", "rho_inclusive", "implicit_loss", "annotation")
_MARKS = {"tail": "tail-heavy", "head": "head-heavy", "unbiased": "unbiased", "neutral": "-"}


def cmd_catalog(args) -> int:
    records = [{"family": r.family, "sampler": r.sampler, "weighting": r.weighting, "rho": r.rho_pattern,
                "rho_inclusive": r.rho_pattern_inclusive, "implicit_loss": r.comment,
                "annotation": _MARKS[r.annotation]} for r in CATALOG]
    if args.format == "table":
        widths = {c: max(len(c), *(len(str(rec[c])) for rec in records)) for c in CATALOG_COLUMNS}
        print("  ".join(c.ljust(widths[c]) for c in CATALOG_COLUMNS))
        for rec in records:
            print("  ".join(str(rec[c]).ljust(widths[c]) for c in CATALOG_COLUMNS))
    else:
        sys.stdout.write(_format_rows(records, CATALOG_COLUMNS, args.format))
    return EXIT_OK


# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="negsampling", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", help="check closed forms against enumeration, Monte Carlo and finite differences")
    v.add_argument("--suite", required=True, choices=SUITES + ("all",))
    v.add_argument("--trials", type=int, default=100_000, help="Monte-Carlo trials per instance")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--format", choices=("csv", "json"), default="csv")
    v.add_argument("--out", default="verify_out")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", help="train one configuration and report sliced metrics")
    t.add_argument("--config", help="key-value config file")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="run_out")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--format", choices=("csv", "json"), default="csv")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="train every configuration of a grid file")
    s.add_argument("--grid", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="sweep_out")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("catalog", help="print the implied margin of every (sampler, weighting) pair")
    c.add_argument("--format", choices=("table", "csv", "json"), default="table")
    c.set_defaults(func=cmd_catalog)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "trials", 1) < 1 or getattr(args, "jobs", 1) < 1:
        print("negsampling: error: --trials and --jobs must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"negsampling: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
