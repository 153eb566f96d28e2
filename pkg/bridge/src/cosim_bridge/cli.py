"""Command line entry point: serve the built-in echo simulator.

Custom simulators are served programmatically via
:func:`cosim_bridge.run_adapter`; the CLI only exposes the echo model,
which is what conformance and integration tests need.
"""

from __future__ import annotations

import argparse
import sys

from .adapter import AdapterError, run_adapter
from .echo_sim import CONTINUOUS, DEFAULT_FEATURES, DISCRETE, echo_adapter_config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cosim-bridge",
        description="Serve the echo simulator over the co-simulation protocol.")
    parser.add_argument("--endpoint", default="stdio",
                        help="host:port to listen on, or 'stdio' (default)")
    parser.add_argument("--action", choices=["continuous", "discrete"],
                        default="continuous")
    parser.add_argument("--features", default=",".join(DEFAULT_FEATURES),
                        help="comma-separated feature names to declare")
    parser.add_argument("--episode-length", type=int, default=66)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    features = tuple(f for f in args.features.split(",") if f)
    action = CONTINUOUS if args.action == "continuous" else DISCRETE
    cfg = echo_adapter_config(args.endpoint, features=features, action=action,
                              episode_length=args.episode_length)
    try:
        run_adapter(cfg)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
