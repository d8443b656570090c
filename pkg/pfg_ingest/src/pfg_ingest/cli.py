"""Command-line entry: pfg-ingest CORPUS_DIR OUT_PATH [options]."""

from __future__ import annotations

import argparse
import logging
import sys

from .encoders import HashedBagEncoder, TransformersEncoder
from .export import export_corpus


def build_encoder(spec: str):
    if spec == "hashed":
        return HashedBagEncoder()
    if spec.startswith("transformers:"):
        return TransformersEncoder(spec.split(":", 1)[1])
    raise SystemExit(f"unknown encoder {spec!r}; use 'hashed' or 'transformers:<model dir>'")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pfg-ingest",
        description="Export the PersuasionForGood corpus to the episode file format.")
    parser.add_argument("corpus_dir", help="directory with utterances.jsonl and conversations.json")
    parser.add_argument("out_path", help="episode file to write (manifest goes next to it)")
    parser.add_argument("--max-donation", type=float, default=20.0,
                        help="drop dialogues donating more than this (default 20.0)")
    parser.add_argument("--budget", type=int, default=25,
                        help="utterance budget T per episode (default 25)")
    parser.add_argument("--encoder", default="hashed",
                        help="'hashed' or 'transformers:<model dir>' (default hashed)")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    stats = export_corpus(args.corpus_dir, args.out_path,
                          encoder=build_encoder(args.encoder),
                          max_donation=args.max_donation, T=args.budget)
    print(f"dialogues {stats.n_dialogues}  exported {stats.n_exported}  "
          f"filtered {stats.n_filtered}  skipped {len(stats.skipped)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
