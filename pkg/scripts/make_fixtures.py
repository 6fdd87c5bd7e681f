#!/usr/bin/env python3
"""Write the synthetic fixture set: a 20-clip curation corpus and compressor inputs."""
import argparse
from pathlib import Path

from hicom.fixtures import write_compress_inputs, write_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path, help="directory to populate")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    corpus = write_corpus(args.out / "corpus.jsonl")
    paths = write_compress_inputs(args.out, seed=args.seed)
    for p in [corpus, *paths.values()]:
        print(p)


if __name__ == "__main__":
    main()
