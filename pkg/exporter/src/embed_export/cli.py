"""Command line wrapper around the embedding exporter.

Exit codes: 0 success, 1 model load failure or bad arguments, 2 input errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .core import ExportJob, InputError, ModelError, export_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embed-export", description=__doc__)
    parser.add_argument("--input", required=True, help="corpus JSONL (id, text, ...)")
    parser.add_argument("--output", required=True, help="embedding file to write")
    parser.add_argument("--model", required=True, help="model identifier or local path")
    parser.add_argument("--pooling", choices=["first-token", "mean"], default="first-token")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--max-len", type=int, default=128)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        job = ExportJob(
            input_path=args.input,
            output_path=args.output,
            model_id=args.model,
            pooling=args.pooling,
            batch_size=args.batch_size,
            max_len=args.max_len,
        )
    except ValueError as exc:
        print(f"bad arguments: {exc}", file=sys.stderr)
        return 1
    try:
        result = export_embeddings(job)
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    print(
        f"wrote {result.n_documents} embeddings (dim={result.dim}, "
        f"{result.n_truncated} truncated) to {args.output}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
