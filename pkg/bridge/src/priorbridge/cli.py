"""Command-line entry points: serve a bridge, or check one.

Exit codes: 0 on success (all conformance checks passing counts),
1 for usage errors, 2 for runtime failures including failed checks.
"""

from __future__ import annotations

import argparse
import sys

from .conformance import all_pass, conformance_suite, format_report
from .server import BridgeConfig, load_bridge_config, serve


class UsageError(Exception):
    """Bad flags or flag combinations; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse's default exits the process
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="priorbridge",
                description="Model server for the bridge protocol.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command",
                           parser_class=_Parser)

    sv = sub.add_parser("serve", help="run the model server")
    sv.add_argument("--port", type=int, default=8707)
    sv.add_argument("--host", default="0.0.0.0")
    sv.add_argument("--config", help="INI file with a [bridge] section")
    sv.set_defaults(func=cmd_serve)

    ck = sub.add_parser("check", help="run conformance checks on a server")
    ck.add_argument("--endpoint", required=True, help="base URL to test")
    ck.add_argument("--latent-shape", default="4x3",
                    help="denoise probe shape, e.g. 4x3 or 12288")
    ck.add_argument("--timeout", type=float, default=10.0)
    ck.set_defaults(func=cmd_check)
    return p


def cmd_serve(args) -> int:
    config = BridgeConfig()
    if args.config:
        config = load_bridge_config(args.config)
    print(f"serving bridge protocol {args.host}:{args.port}", flush=True)
    serve(config, args.port, host=args.host)
    return 0


def cmd_check(args) -> int:
    try:
        shape = tuple(int(s) for s in args.latent_shape.split("x"))
    except ValueError:
        raise UsageError(f"bad --latent-shape {args.latent_shape!r}")
    results = conformance_suite(args.endpoint, latent_shape=shape,
                                timeout=args.timeout)
    print(format_report(results))
    return 0 if all_pass(results) else 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except SystemExit as exc:  # --help prints and asks for exit 0
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
