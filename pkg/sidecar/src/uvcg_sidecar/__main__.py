"""Entry point: ``python -m uvcg_sidecar --encoder echo`` serves the pipe
protocol on stdin/stdout; ``--selftest`` instead checks the hosted
encoder's gradients against finite differences and exits."""

from __future__ import annotations

import argparse
import json
import sys

from .embedders import build_embedder
from .encoders import ModelFault, build_encoder
from .selftest import run_selftest
from .server import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="uvcg-sidecar", description=__doc__)
    parser.add_argument(
        "--encoder",
        default="echo",
        help="echo | torchscript:<module.pt> (default: echo)",
    )
    parser.add_argument(
        "--embedder",
        default="constant",
        help="constant | hash | none (default: constant)",
    )
    parser.add_argument("--selftest", action="store_true",
                        help="gradient self-test instead of serving")
    parser.add_argument("--selftest-size", type=int, default=16)
    parser.add_argument("--selftest-samples", type=int, default=16)
    args = parser.parse_args(argv)

    try:
        encoder = build_encoder(args.encoder)
        embedder = build_embedder(args.embedder, encoder)
    except (ValueError, ModelFault) as exc:
        print(f"uvcg-sidecar: {exc}", file=sys.stderr)
        return 1

    if args.selftest:
        report = run_selftest(
            encoder, frame_size=args.selftest_size, samples=args.selftest_samples
        )
        print(json.dumps(report, indent=2, sort_keys=True), file=sys.stderr)
        return 0 if report["ok"] else 1

    return serve(encoder, embedder)


if __name__ == "__main__":
    sys.exit(main())
