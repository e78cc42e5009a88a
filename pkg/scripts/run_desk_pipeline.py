#!/usr/bin/env python3
"""End-to-end desk experiment: corpus, training, evaluation in one go.

Defaults reproduce the standard run (seed 42, 704 samples, 30 epochs).
Pass --config / --seed / --out-dir through to the underlying commands.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from kgreport.harness.cli import main as cli_main  # noqa: E402


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out-dir", default="runs/desk")
    args = parser.parse_args(argv)

    common = ["--seed", str(args.seed), "--out-dir", args.out_dir]
    if args.config:
        common = ["--config", args.config] + common
    data = str(Path(args.out_dir) / "dataset.jsonl")

    if cli_main(["gen-data", *common]):
        return 1
    if cli_main(["train", *common, "--data", data]):
        return 1
    return cli_main(["evaluate", *common, "--data", data,
                     "--checkpoint", str(Path(args.out_dir) / "checkpoint.kgn"),
                     "--split", "test"])


if __name__ == "__main__":
    sys.exit(run())
