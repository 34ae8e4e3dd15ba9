"""Adapter CLI: serve one backend role, fine-tune the classifier, or build
tiny fixture models."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import AdapterConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="neural-adapter")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="answer wire requests on stdio for one role")
    p.add_argument("--config", required=True, help="adapter.json path")
    p.add_argument("--role", required=True, choices=["classifier", "embedder", "generator"])

    p = sub.add_parser("train-classifier", help="fine-tune the style classifier")
    p.add_argument("--model", required=True, help="base model directory")
    p.add_argument("--corpus", required=True, help="stylized JSONL with caption/style fields")
    p.add_argument("--out", required=True, help="output model directory")
    p.add_argument("--learning-rate", type=float, default=2e-5)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("make-fixture", help="build tiny random-weight model bundles")
    p.add_argument("--out", required=True)
    p.add_argument("--dimension", type=int, default=768)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr
    )

    if args.command == "serve":
        from .server import serve

        serve(AdapterConfig.load(args.config), args.role)
        return 0
    if args.command == "train-classifier":
        from .train import train_classifier

        summary = train_classifier(
            args.model,
            args.corpus,
            args.out,
            learning_rate=args.learning_rate,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=args.seed,
        )
        print(json.dumps(summary))
        return 0
    if args.command == "make-fixture":
        from .fixtures import build_bundle

        config_path = build_bundle(Path(args.out), dimension=args.dimension, seed=args.seed)
        print(json.dumps({"config": str(config_path)}))
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
