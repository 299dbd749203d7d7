"""Command-line entry point ``abm-calib``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .config import ConfigError, load_config, override, parse_only
from .experiments import run_grid, select_scenarios
from .output import OutputError, emit_outputs, ensure_writable

log = logging.getLogger("abmcalib")

# stages run by each subcommand; later stages imply the earlier ones
COMMAND_STAGES = {
    "generate": ("data",),
    "calibrate": ("data", "calibrate"),
    "select": ("data", "calibrate", "select"),
    "hindcast": ("data", "calibrate", "hindcast"),
    "grid": ("data", "calibrate", "select", "hindcast"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abm-calib", description="Calibrate and compare flood-abandonment ABMs.")
    p.add_argument("command", choices=sorted(COMMAND_STAGES))
    p.add_argument("--config", required=True, help="YAML experiment configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--only", help="scenario filter, e.g. 50x100:individual[,25x50]")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--replicates", type=int, help="pseudo-data realizations per scenario")
    p.add_argument("--workers", type=int, help="parallel scenarios (0 = all cores)")
    p.add_argument("--burnin", type=int, help="production draws to discard")
    p.add_argument("--custom", action="store_true", help="allow years/parcels outside the standard grid")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = override(cfg, seed=args.seed, out=args.out, replicates=args.replicates,
                       workers=args.workers, burnin=args.burnin, custom=True if args.custom else None)
        cfg.validate()
        rules = parse_only(args.only)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    if not select_scenarios(cfg, rules):
        print("no scenarios match the filter; nothing to do", file=sys.stderr)
        return 0
    try:
        ensure_writable(cfg.out)
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    t0 = time.perf_counter()
    results = run_grid(cfg, rules, COMMAND_STAGES[args.command])
    log.info("computation finished in %.1f s", time.perf_counter() - t0)
    for r in results:
        for step, sec in r.timings.items():
            log.info("timing %s %s %.2f s", r.id, step, sec)
    try:
        emit_outputs(results, cfg.out, cfg)
    except OSError as exc:
        print(f"error writing outputs: {exc}", file=sys.stderr)
        return 1

    failed = [r for r in results if r.errors]
    for r in results:
        c = r.comparison
        line = f"{r.id}: {r.status}"
        if "log_bf" in c:
            line += f"  lnBF={c['log_bf']:.2f} ({c['category']})"
        if "delta_waic" in c:
            line += f"  dWAIC={c['delta_waic']:.2f}+-{c['delta_waic_se']:.2f}"
        print(line)
    print(f"wrote {len(results)} scenario(s) to {cfg.out}")
    return 2 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
