"""Command-line entry point: export embeddings for an ingested corpus."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .export import ExportJob, export

_ALIGN_FLAGS = {"mean": "mean_subwords", "first": "first_subword"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="discern-export",
        description="Run a pretrained encoder over an ingested corpus and "
        "write a token-vector archive.",
    )
    parser.add_argument("command", choices=["export"])
    parser.add_argument("--corpus", required=True,
                        help="ingest output directory or documents.json path")
    parser.add_argument("--model", required=True,
                        help="model identifier or local model directory")
    parser.add_argument("--align", choices=sorted(_ALIGN_FLAGS), default="mean")
    parser.add_argument("--out", required=True, help="archive output directory")
    parser.add_argument("--max-tokens", type=int, default=512)
    parser.add_argument("--batch-size", type=int, default=16)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        corpus_path=args.corpus,
        model_id=args.model,
        out_path=args.out,
        alignment=_ALIGN_FLAGS[args.align],
        max_tokens=args.max_tokens,
        batch_size=args.batch_size,
    )
    stats = export(job)
    print(
        f"exported {stats.documents} documents ({stats.sentences} sentences, "
        f"dim {stats.dim}) -> {args.out}\n"
        f"checksum {stats.checksum}; truncated sentences "
        f"{stats.truncated_sentences}; zero-filled tokens {stats.zeroed_tokens}; "
        f"failed sentences {sum(len(v) for v in stats.failed_sentences.values())}"
    )
    return 0


def main() -> None:
    sys.exit(run())
