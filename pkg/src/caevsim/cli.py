"""caevsim command line: validate, run, train, sweep, report.

Exit codes: 0 success, 2 invalid input (bad flags or scenario), 3 runtime
failure (diverged simulation, refused overwrite, unreadable outputs).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, bundled_scenario_path, load_scenario
from .engine import AXES, run, sweep
from .errors import ConfigError, SimulationError
from .report import ReportError, report

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3

log = logging.getLogger("caevsim")


class Refused(RuntimeError):
    """An output exists and --force was not given."""


def setup_logging():
    level = os.environ.get("CAEV_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def resolve_scenario(arg: str) -> ScenarioConfig:
    """A path, or the name of a bundled scenario (``default``, ``case_study_1``...)."""
    p = Path(arg)
    if p.exists():
        return load_scenario(p)
    bundled = bundled_scenario_path(arg)
    if bundled.exists():
        return load_scenario(bundled)
    raise ConfigError(f"scenario {arg!r} not found", [("<file>", f"{arg}: no such file")])


def parse_values(text: str) -> list[float]:
    """``11,12,13`` or inclusive ranges ``11:16`` / ``5:50:5``; parts may be mixed."""
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ":" in part:
                bits = [float(b) for b in part.split(":")]
                if len(bits) not in (2, 3):
                    raise ValueError
                lo, hi = bits[0], bits[1]
                step = bits[2] if len(bits) == 3 else 1.0
                if step <= 0 or hi < lo:
                    raise ValueError
                n = int(np.floor((hi - lo) / step + 1e-9)) + 1
                values.extend(lo + step * np.arange(n))
            else:
                values.append(float(part))
        except ValueError:
            raise ConfigError(f"bad --values entry {part!r}",
                              [("--values", f"cannot parse {part!r}")]) from None
    if not values:
        raise ConfigError("--values is empty", [("--values", "no values given")])
    return [float(v) for v in values]


def with_policy(cfg: ScenarioConfig, policy_path) -> ScenarioConfig:
    if policy_path is None:
        return cfg
    path = Path(policy_path).resolve()
    return cfg.replace(defender=dataclasses.replace(cfg.defender, enabled=True,
                                                    policy=str(path)))


def _guard(paths, force):
    for p in paths:
        if Path(p).exists() and not force:
            raise Refused(f"{p} exists; pass --force to overwrite")


def cmd_validate(args):
    cfg = resolve_scenario(args.scenario)
    print(f"ok {args.scenario} config_hash={cfg.config_hash()}")
    return EXIT_OK


def cmd_run(args):
    cfg = with_policy(resolve_scenario(args.scenario), args.policy)
    if args.out is not None:
        out = Path(args.out)
        _guard([out / "trace.csv", out / "summary.json"], args.force)
    trace = run(cfg)
    if args.out is not None:
        trace.write(args.out, force=args.force)
    print(json.dumps(trace.summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args):
    from .rl.train import train

    cfg = resolve_scenario(args.scenario)
    out = Path(args.out)
    curve_path = out.with_suffix(".curve.csv")
    _guard([out, curve_path], args.force)
    if args.episodes is not None and args.episodes < 1:
        raise ConfigError("--episodes must be >= 1", [("--episodes", "must be >= 1")])
    out.parent.mkdir(parents=True, exist_ok=True)
    _, curve = train(cfg, episodes=args.episodes, checkpoint_path=out)
    print(f"trained {curve.size} episodes; final-100 mean return "
          f"{curve[-100:].mean():.6g}; policy {out}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = with_policy(resolve_scenario(args.scenario), args.policy)
    values = parse_values(args.values)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1", [("--jobs", "must be >= 1")])
    if not cfg.defender.enabled:
        log.warning("sweeping with the defender disabled; pass --policy for a defended sweep")
    if args.out is not None:
        out = Path(args.out)
        _guard([out / "sweep.csv", out / "sweep.json"], args.force)
    rep = sweep(cfg, args.axis, values, jobs=args.jobs, keep_traces=args.keep_traces)
    if args.out is not None:
        rep.write(args.out, force=args.force)
    for v, md, u, s in zip(rep.values, rep.min_d, rep.unsafe_entry, rep.saturation_fraction):
        print(f"{args.axis}={v:g} min_d={md:.4g} unsafe_entry={str(u).lower()} "
              f"saturation_fraction={s:.4g}")
    b = rep.boundary
    print(f"{args.axis}_safe={'none' if b is None else f'{b:g}'}")
    return EXIT_OK if not any(rep.errors) else EXIT_RUNTIME


def cmd_report(args):
    out = report(args.trace_dir, args.out)
    sys.stdout.write((out / "summary.txt").read_text(encoding="utf-8"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="caevsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load and check a scenario")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate one scenario")
    p.add_argument("scenario")
    p.add_argument("--out", help="directory for trace.csv and summary.json")
    p.add_argument("--policy", help="trained policy; enables the defender")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="train the defender policy")
    p.add_argument("scenario")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", default="policy.json", help="policy file (default policy.json)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="sweep one attack magnitude")
    p.add_argument("scenario")
    p.add_argument("--axis", required=True, choices=sorted(AXES))
    p.add_argument("--values", required=True, help="e.g. 11,12,13 or 11:16 or 5:50:5")
    p.add_argument("--out")
    p.add_argument("--policy", help="trained policy; enables the defender")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--keep-traces", action="store_true", help="also write run_<value>/ traces")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="plot-data CSVs and summary from outputs")
    p.add_argument("trace_dir")
    p.add_argument("--out", help="report directory (default <trace_dir>/report)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        if exc.problems:
            for path, msg in exc.problems:
                print(f"error: {path}: {msg}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, ReportError, Refused, FileExistsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
