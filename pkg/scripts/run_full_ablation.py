#!/usr/bin/env python3
"""Full six-row configuration ablation over three seeds.

This is the long experiment (~2h on a laptop CPU at default epochs): every
fusion/graph combination trained and beam-evaluated, means over seeds,
plus the soft directional comparison of the full model vs the baseline.
Use --epochs to trade fidelity for turnaround.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from kgreport.harness.cli import main as cli_main  # noqa: E402
from kgreport.harness.config import TrainConfig, write_config_file  # noqa: E402


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42, help="data seed")
    parser.add_argument("--seeds", default="42,43,44", help="training seeds")
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--out-dir", default="runs/ablation")
    args = parser.parse_args(argv)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = str(out / "ablation.cfg")
    write_config_file(TrainConfig(epochs=args.epochs), cfg_path)
    common = ["--config", cfg_path, "--seed", str(args.seed),
              "--out-dir", str(out)]

    if cli_main(["gen-data", *common]):
        return 1
    return cli_main(["ablate", *common, "--data", str(out / "dataset.jsonl"),
                     "--seeds", args.seeds])


if __name__ == "__main__":
    sys.exit(run())
