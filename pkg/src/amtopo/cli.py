"""Command line: ``amtopo run|verify|sweep|eval <config> ...``.

Exit codes: 0 success, 1 solver or verification failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import config as C
from . import driver
from .errors import ConfigError, InvariantViolation, SolverError
from .io import write_json

log = logging.getLogger("amtopo")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="TOML file or preset name")
    common.add_argument("--threads", type=int, default=None, help="worker threads for layer solves")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--metric", choices=("a1", "a2", "a3"), default=None)
    nest = common.add_mutually_exclusive_group()
    nest.add_argument("--nested", dest="nested", action="store_true", default=None)
    nest.add_argument("--unnested", dest="nested", action="store_false")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration entry, e.g. cost.layers=20")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="amtopo", description="Phase-field topology optimization for additive manufacturing")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="optimize and write history, fields and summary")
    v = sub.add_parser("verify", parents=[common], help="slice inequalities and gradient audit")
    v.add_argument("--directions", type=int, default=5)
    s = sub.add_parser("sweep", parents=[common], help="parameter study")
    s.add_argument("--param", required=True, metavar="KEY=V1,V2,...")
    e = sub.add_parser("eval", parents=[common], help="cost breakdown of a stored layout")
    e.add_argument("field", help="VTK file with phi_i point data")
    sub.add_parser("presets", help="list packaged presets").add_argument("config", nargs="?")
    return p


def _split(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"expected KEY=VALUE, got {item!r}", "argv")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def _threads(arg: int | None) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get("AMTOPO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"AMTOPO_THREADS must be an integer, got {env!r}", "AMTOPO_THREADS") from None
    return None


def resolve(args) -> C.ProblemConfig:
    cfg = C.load_config(args.config)
    changes = {}
    for item in args.overrides:
        key, value = _split(item)
        changes[key] = C.parse_value(value)
    for key, value in (("run.threads", _threads(args.threads)), ("run.seed", args.seed),
                       ("vmpt.metric", args.metric), ("run.out", args.out)):
        if value is not None:
            changes[key] = value
    return C.apply_overrides(cfg, changes) if changes else cfg


def _print_cost(cost) -> None:
    for key, value in cost.as_dict().items():
        print(f"{key:>8} = {value:.10g}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            print("\n".join(C.preset_names()))
            return 0
        cfg = resolve(args)
        out = Path(cfg.run.out)
        if args.command == "run":
            o = driver.optimize(cfg, nested=args.nested, out=out)
            print(f"{cfg.name}: {o.iterations} iterations, converged={o.converged}, {o.seconds:.1f} s")
            _print_cost(o.cost)
            print(f"outputs written to {out}")
            return 0 if o.converged else 1
        if args.command == "verify":
            report = driver.verify(cfg, directions=args.directions)
            driver.write_report(out, report)
            print(report.text())
            return 0 if report.passed else 1
        if args.command == "sweep":
            key, values = _split(args.param)
            vals = [C.parse_value(v) for v in values.split(",") if v.strip()]
            rows = driver.sweep(cfg, key, vals, nested=args.nested, out=out)
            print(f"{'value':>10} {'j':>12} {'F':>12} {'W':>12} {'E':>12} {'iters':>6}")
            for r in rows:
                print(f"{r['value']!s:>10} {r['j']:12.6g} {r['F']:12.6g} {r['W']:12.6g} {r['E']:12.6g} {r['iterations']:6d}")
            return 0 if all(r["converged"] for r in rows) else 1
        if args.command == "eval":
            cost, _ = driver.evaluate_field(cfg, args.field)
            _print_cost(cost)
            write_json(out / "eval.json", cost.as_dict())
            return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, InvariantViolation) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
