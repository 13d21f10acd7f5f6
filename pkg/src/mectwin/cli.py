"""Command-line client.

Reads the config file, sends it to the service and prints the summary.  By
default the service runs in-process; ``--server http://host:port`` talks to
a running instance instead.

Exit codes: 0 success, 2 configuration error, 3 missing artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import httpx

from mectwin.experiments import load_config
from mectwin.params import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING = 0, 2, 3
COMMANDS = ("solve-ap", "train", "compare", "sweep")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mectwin", description="MEC digital-twin experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out-dir", default="out")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--drift", action="append", default=[], metavar="RATIO@EPOCH",
                       help='e.g. "9:1@2000"; repeatable')
        p.add_argument("--checkpoint", default=None,
                       help="train: resume from it; compare: model to evaluate")
        p.add_argument("--server", default=None, help="service URL (default: in-process)")
    return ap


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    with warnings.catch_warnings():
        # starlette nags about its httpx backend; irrelevant for in-process calls
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from mectwin.service import app

    return TestClient(app)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    body = {"config": config, "seed": args.seed, "out_dir": args.out_dir, "workers": args.workers,
            "epochs": args.epochs, "drift": args.drift, "checkpoint": args.checkpoint}
    with _client(args.server) as client:
        resp = client.post(f"/{args.command}", json=body)
    if resp.status_code == 200:
        print(json.dumps(resp.json(), indent=2))
        return EXIT_OK
    try:
        err = resp.json()
    except ValueError:
        err = {"message": resp.text}
    code = err.get("code") if isinstance(err, dict) else None
    message = err.get("message") or err.get("detail") if isinstance(err, dict) else str(err)
    if code == "missing_artifact" or resp.status_code == 404:
        print(f"missing artifact: {message}", file=sys.stderr)
        return EXIT_MISSING
    print(f"config error: {message}", file=sys.stderr)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
