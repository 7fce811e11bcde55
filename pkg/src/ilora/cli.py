"""Command line entry point: ``ilora <subcommand> --config FILE [--force] [--section.key=value ...]``."""
from __future__ import annotations

import argparse
import logging
import sys
import time

from .config import ConfigError, parse_config
from .pipeline import PIPELINE, STAGES, Workspace, run_stage

COMMANDS = list(STAGES) + ["all"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ilora",
        description="Instance-wise LoRA pipeline. Config values can be overridden with "
                    "--section.key=value (or --key=value when the key name is unique).")
    p.add_argument("command", choices=COMMANDS, help="stage to run; 'all' runs the full pipeline")
    p.add_argument("--config", "-c", required=True, help="path to the run config file")
    p.add_argument("--force", action="store_true", help="rerun stages that already completed")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    overrides = []
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            parser.error(f"unrecognized argument {item!r}; overrides look like --section.key=value")
        overrides.append(item[2:])
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config, overrides)
        ws = Workspace(cfg)
        stages = PIPELINE if args.command == "all" else (args.command,)
        for stage in stages:
            t0 = time.perf_counter()
            ran, _ = run_stage(ws, stage, args.force)
            status = f"done in {time.perf_counter() - t0:.1f}s" if ran else "already complete (use --force)"
            print(f"{stage}: {status}")
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except (ConfigError, OSError, ValueError, RuntimeError, LookupError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0
