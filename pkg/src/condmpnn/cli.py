"""Command-line entry point: ``condmpnn {check,bench,train,compare}``.

Every flag mirrors a config key (``d_h`` is ``--d-h``). ``--config`` loads a
``key = value`` file and explicit flags override it. ``CONDMPNN_SEED``
provides the default seed. Each run writes ``config.resolved`` to its
output directory; passing that file back via ``--config`` reproduces it.

Exit codes: 0 success, 1 suite or assertion failure, 2 usage or config
error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as C
from .data import DatasetError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("condmpnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="condmpnn", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "check": "run every invariant suite and write a pass/fail report",
        "bench": "time conditional layers per mode and report cost ratios",
        "train": "train one model and write metrics and checkpoints",
        "compare": "align metrics of finished runs and tabulate MAE differences",
    }
    for command in C.SCHEMAS:
        p = sub.add_parser(command, help=helps[command])
        p.add_argument("--config", help="key = value config file; flags override it")
        for key, spec in C.schema(command).items():
            flag = "--" + key.replace("_", "-")
            kwargs = {"dest": key, "default": None, "help": f"{spec.help} (default: {C._format(spec.default)})"}
            if spec.parse is C._bool:
                kwargs.update(nargs="?", const="true", metavar="BOOL")
            if command == "compare" and key == "runs":
                p.add_argument("run_dirs", nargs="*", help="run directories (first is the baseline)")
            p.add_argument(flag, **kwargs)
    return parser


def resolve_args(args: argparse.Namespace) -> dict:
    keys = C.schema(args.command)
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    if getattr(args, "run_dirs", None):
        overrides["runs"] = list(args.run_dirs) + list(C._list(str)(overrides.get("runs", [])))
    file_values = C.load_file(args.config) if args.config else None
    return C.resolve(args.command, file_values, overrides)


# -- commands -----------------------------------------------------------------

def cmd_check(cfg: dict, out: Path) -> int:
    from .checks import run_suites

    results = run_suites(cfg["suites"] or None, sabotage=cfg["sabotage"], seed=cfg["seed"])
    with open(out / "check.jsonl", "w") as fh:
        for r in results:
            fh.write(json.dumps({"suite": r.name, "passed": r.passed, "residual": r.residual,
                                 "tolerance": r.tolerance, "detail": r.detail, "seconds": r.seconds}) + "\n")
    lines = [r.line() for r in results]
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} suites passed")
    (out / "check.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bench(cfg: dict, out: Path) -> int:
    from .bench import format_table, run_bench, to_jsonl

    if cfg["reps"] < 10:
        raise C.ConfigError("reps must be at least 10")
    if cfg["warmup"] < 1:
        raise C.ConfigError("warmup must be at least 1")
    rows = run_bench(cfg["modes"], cfg["d_h"], cfg["d_a"], cfg["d_b"], cfg["layers"], cfg["edges"],
                     cfg["reps"], cfg["warmup"], cfg["seed"], cfg["threads"])
    table = format_table(rows)
    (out / "bench.jsonl").write_text(to_jsonl(rows))
    (out / "bench.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_train(cfg: dict, out: Path) -> int:
    from .experiment import run_training

    summary = run_training(cfg, out)
    keys = ("mode", "cond_depth", "seed", "final_train_mae", "final_val_mae", "best_val_mae", "best_epoch",
            "test_mae", "wall_s")
    for k in keys:
        v = summary[k]
        print(f"{k:>16}: {v:.6g}" if isinstance(v, float) else f"{k:>16}: {v}")
    return EXIT_OK


def read_metrics(run_dir) -> dict[str, dict[int, float]]:
    """``{split: {epoch: mae}}`` from a run's ``metrics.jsonl``."""
    path = Path(run_dir) / "metrics.jsonl"
    if not path.exists():
        raise DatasetError(f"{path}: no metrics (is {run_dir} a finished run?)")
    out: dict[str, dict[int, float]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            out.setdefault(row["split"], {})[int(row["epoch"])] = float(row["mae"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: malformed metrics row ({exc})") from None
    return out


def compare_runs(run_dirs, split: str = "val") -> tuple[list[dict], list[str]]:
    """Align runs on their common epoch prefix.

    Returns one row per run (label, mode, epoch, final and best MAE, delta
    against the first run in percent) and a list of warnings.
    """
    warnings = []
    curves = []
    for d in run_dirs:
        metrics = read_metrics(d)
        if split not in metrics:
            raise DatasetError(f"{d}: no '{split}' metrics")
        curves.append(metrics[split])
    lengths = [max(c) for c in curves]
    common = min(lengths)
    if len(set(lengths)) > 1:
        warnings.append(f"runs have different epoch counts {lengths}; comparing epochs 0..{common}")
    base = curves[0][common]
    rows = []
    for d, curve in zip(run_dirs, curves):
        summary_path = Path(d) / "summary.json"
        mode = json.loads(summary_path.read_text()).get("mode", "?") if summary_path.exists() else "?"
        final = curve[common]
        rows.append({
            "run": str(d), "mode": mode, "epoch": common, "mae": final,
            "best_mae": min(curve[e] for e in range(common + 1) if e in curve),
            "delta_pct": 100.0 * (final - base) / base if base else float("nan"),
        })
    return rows, warnings


def format_compare(rows: list[dict], split: str) -> str:
    header = ["run", "mode", "epoch", f"{split} MAE", "best", "Δ %"]
    cells = [header] + [[r["run"], r["mode"], str(r["epoch"]), f"{r['mae']:.5f}", f"{r['best_mae']:.5f}",
                         f"{r['delta_pct']:+.2f}"] for r in rows]
    widths = [max(len(c[k]) for c in cells) for k in range(len(header))]
    lines = ["  ".join(c.ljust(w) if k < 2 else c.rjust(w) for k, (c, w) in enumerate(zip(row, widths)))
             for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_compare(cfg: dict, out: Path) -> int:
    if len(cfg["runs"]) < 2:
        raise C.ConfigError("compare needs at least two run directories")
    rows, warnings = compare_runs(cfg["runs"], cfg["split"])
    for w in warnings:
        log.warning(w)
    table = format_compare(rows, cfg["split"])
    (out / "compare.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    (out / "compare.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


COMMANDS = {"check": cmd_check, "bench": cmd_bench, "train": cmd_train, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"condmpnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_args(args)
        out = Path(cfg["output_dir"])
        C.write_resolved(cfg, out)
        return COMMANDS[args.command](cfg, out)
    except (C.ConfigError, UsageError) as exc:
        print(f"condmpnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, OSError) as exc:
        print(f"condmpnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"condmpnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any other failure is a run failure
        log.debug("run failed", exc_info=True)
        print(f"condmpnn: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
