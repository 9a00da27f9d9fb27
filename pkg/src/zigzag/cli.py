"""Command line: zigzag {run, fields, verify, list-scenarios}.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 runtime failure (including more failed trajectories than allowed).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io, verify
from .analysis import field_map
from .config import OUT_DIR_ENV, ConfigError, RunConfig, parse_value
from .integrator import run_batch
from .sampling import sample_initial
from .scenarios import catalog

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("zigzag")


def _out_dir(arg: str | None, default_name: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUT_DIR_ENV, "zigzag_out")) / default_name


def _config_from_args(args) -> RunConfig:
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = RunConfig.from_text(text, str(path))
        if args.scenario and args.scenario != cfg.scenario:
            cfg.scenario = args.scenario
    else:
        if not args.scenario:
            raise ConfigError("no scenario given (positional argument or --config)")
        cfg = RunConfig(args.scenario)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        cfg.overrides[key] = parse_value(key, value)
    for key, value in (("n_trajectories", args.n), ("rng_seed", args.seed), ("stride", args.stride),
                       ("rescale", args.rescale)):
        if value is not None:
            cfg.overrides[key] = value
    if getattr(args, "max_failures", None) is not None:
        cfg.max_failures = args.max_failures
    cfg.spec()
    return cfg


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", nargs="?", help="scenario id (see list-scenarios)")
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
    p.add_argument("--n", type=int, help="number of trajectories")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--stride", type=int, help="record every stride-th accepted step")
    p.add_argument("--rescale", type=float, help="divide exported times and coordinates by this factor")
    p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV}/<scenario>)")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return EXIT_OK
    spec = cfg.spec()
    out = _out_dir(args.out, spec.id)
    traj_dir = out / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)
    state = spec.build_state()
    settings = spec.settings()
    configs = sample_initial(state, spec.n_trajectories, settings.rng_seed)
    records = run_batch(state, configs, settings, args.workers)
    entries = []
    for i, rec in enumerate(records):
        traj, jumps = f"traj_{i:05d}.csv", f"jumps_{i:05d}.csv"
        io.write_trajectory(traj_dir / traj, rec, spec.rescale)
        io.write_jumps(traj_dir / jumps, rec, spec.rescale)
        entries.append(dict(index=i, trajectory=f"trajectories/{traj}", jumps=f"trajectories/{jumps}",
                            n_steps=rec.n_steps, n_jumps=len(rec.jump_t), failure=rec.failure))
    n_failed = sum(not r.ok for r in records)
    (out / "config.txt").write_text(cfg.to_text())
    io.write_manifest(out / "manifest.json", dict(
        scenario=spec.id, seed=settings.rng_seed, config=cfg.to_text().splitlines(),
        rescale=spec.rescale, versions=io.versions(), n_failed=n_failed, trajectories=entries))
    print(f"{spec.id}: {len(records)} trajectories, {n_failed} failed -> {out}")
    if n_failed > cfg.max_failures:
        print(f"error: {n_failed} failed trajectories exceed --max-failures {cfg.max_failures}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_fields(args) -> int:
    cfg = _config_from_args(args)
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return EXIT_OK
    spec = cfg.spec()
    state = spec.build_state()
    if state.n_particles != 1:
        raise ConfigError(f"field maps need a single-particle scenario, {spec.id} has two")
    axes = tuple(a.strip() for a in args.axes.split(","))
    t = args.t * spec.rescale if args.display_units else args.t
    if args.extent is None:
        extent = 1000.0
    else:
        extent = args.extent * spec.rescale if args.display_units else args.extent
    try:
        fmap = field_map(state, t, axes, (-extent, extent), (-extent, extent), (args.res, args.res),
                         chirality=args.chirality)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _out_dir(args.out, spec.id)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"field_{''.join(axes)}_t{t:g}.csv"
    io.write_field_map(path, fmap, spec.rescale)
    print(f"{path} ({int((~fmap.valid).sum())} node entries)")
    return EXIT_OK


def cmd_verify(args) -> int:
    sizes = verify.Sizes.quick() if args.quick else verify.Sizes()
    session = verify.Session(seed=args.seed, workers=args.workers, sizes=sizes)
    try:
        results = verify.run_checks(args.checks, session)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    for r in results:
        print(r.line())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_manifest(out / "verify_report.json", dict(
            seed=args.seed, quick=args.quick, versions=io.versions(),
            checks=[dict(name=r.name, passed=r.passed, summary=r.summary, detail=r.detail) for r in results]))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_list(args) -> int:
    for spec in catalog():
        print(f"{spec.id:15s} {spec.description}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zigzag", description="Zig-zag spin trajectories in a Stern-Gerlach setup")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate a batch and export trajectories")
    _add_config_flags(p)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--max-failures", type=int, help="tolerated failed trajectories (default 0)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fields", help="export spin / rate / density maps on a plane")
    _add_config_flags(p)
    p.add_argument("--t", type=float, required=True, help="time (internal units unless --display-units)")
    p.add_argument("--axes", default="y,z", help="two varying axes, e.g. y,z")
    p.add_argument("--extent", type=float, help="half-width of the square grid (default 1000 internal units)")
    p.add_argument("--res", type=int, default=41, help="nodes per axis")
    p.add_argument("--chirality", type=int, choices=(1, -1), default=1)
    p.add_argument("--display-units", action="store_true", help="read --t and --extent in rescaled units")
    p.set_defaults(func=cmd_fields)

    p = sub.add_parser("verify", help="run acceptance checks")
    p.add_argument("checks", nargs="*", help=f"subset of: {', '.join(verify.CHECKS)}")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--quick", action="store_true", help="small sample sizes (smoke test, not acceptance)")
    p.add_argument("--out", help="directory for verify_report.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("list-scenarios", help="print scenario ids")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.exception("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
