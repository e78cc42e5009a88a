"""Command line: gen-data, train, evaluate, ablate, gradcheck."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .ablation import directional_report, run_ablation
from .checkpoint import load_model, save_checkpoint
from .config import TrainConfig, load_config
from .data import generate_dataset, read_dataset, split_records, write_dataset
from .evaluation import evaluate_model, write_generations
from .gradcheck import run_gradient_suite
from .training import train

LOSS_CURVE_SCHEMA = 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out-dir", default=".", help="directory for outputs")


def _prepare(args) -> TrainConfig:
    os.makedirs(args.out_dir, exist_ok=True)
    return load_config(args.config, seed=args.seed)


def _load_records(path: str, cfg: TrainConfig):
    return read_dataset(path, cfg.n_patches, cfg.patch_dim)


def cmd_gen_data(args) -> int:
    cfg = _prepare(args)
    n = args.n_samples if args.n_samples is not None else cfg.n_samples
    ratios = (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio)
    records = generate_dataset(cfg.seed, n, ratios, cfg)
    out = os.path.join(args.out_dir, "dataset.jsonl")
    write_dataset(records, out)
    splits = {s: sum(1 for r in records if r.split == s)
              for s in ("train", "val", "test")}
    print(f"wrote {len(records)} samples to {out} (splits {splits})")
    return 0


def cmd_train(args) -> int:
    cfg = _prepare(args)
    records = _load_records(args.data, cfg)

    def log(entry):
        val = f" val={entry['val_loss']:.4f}" if "val_loss" in entry else ""
        print(f"epoch {entry['epoch']:3d} train={entry['train_loss']:.4f}{val}",
              flush=True)

    result = train(cfg, records, log=log)
    ckpt_path = os.path.join(args.out_dir, "checkpoint.kgn")
    save_checkpoint(ckpt_path, result.model)
    curve_path = os.path.join(args.out_dir, "loss_curve.json")
    with open(curve_path, "w", encoding="utf-8") as fh:
        json.dump({"schema_version": LOSS_CURVE_SCHEMA, "config": cfg.to_dict(),
                   "curve": result.loss_curve}, fh, indent=1, sort_keys=True)
    print(f"final train loss {result.final_train_loss:.4f} "
          f"(initial {result.initial_train_loss:.4f}); checkpoint at {ckpt_path}")
    return 0


def cmd_evaluate(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    if args.candidates or args.references:
        if not (args.candidates and args.references):
            raise SystemExit("--candidates and --references go together")
        return _evaluate_files(args)
    if not (args.checkpoint and args.data):
        raise SystemExit("evaluate needs --checkpoint and --data "
                         "(or --candidates/--references)")
    cfg_override = load_config(args.config, seed=args.seed) if args.config else None
    model = load_model(args.checkpoint)
    if cfg_override is not None:
        model.cfg = model.cfg.replace(beam_width=cfg_override.beam_width,
                                      gen_max_len=cfg_override.gen_max_len)
    records = _load_records(args.data, model.cfg)
    split = split_records(records, args.split)
    report, generations = evaluate_model(model, split,
                                         copy_references=args.copy_references)
    metrics_path = os.path.join(args.out_dir, "metrics.json")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    gen_path = os.path.join(args.out_dir, "generations.jsonl")
    write_generations(generations, gen_path)
    for key, value in sorted(report.corpus.items()):
        print(f"{key:20s} {value:.4f}")
    print(f"wrote {metrics_path} and {gen_path} ({len(generations)} rows)")
    return 0


def _evaluate_files(args) -> int:
    """Score a candidate/reference file pair (one id-prefixed report per line)."""
    from ..evalsuite import compute_metrics, pairs_from_files
    from ..generator import split_words
    from .data import DISEASE_TRIGGERS
    pairs = pairs_from_files(args.candidates, args.references, split_words)
    report = compute_metrics(pairs, DISEASE_TRIGGERS)
    metrics_path = os.path.join(args.out_dir, "metrics.json")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    for key, value in sorted(report.corpus.items()):
        print(f"{key:20s} {value:.4f}")
    print(f"wrote {metrics_path} ({len(pairs)} pairs)")
    return 0


def cmd_ablate(args) -> int:
    cfg = _prepare(args)
    records = _load_records(args.data, cfg)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    table = run_ablation(records, cfg, seeds, log=lambda msg: print(msg, flush=True))
    table["directional"] = directional_report(table)
    out = os.path.join(args.out_dir, "ablation.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(table, fh, indent=1, sort_keys=True)
    print(f"\n{'row':4s} {'bleu4':>8s} {'rouge_l':>8s} {'meteor':>8s} "
          f"{'cider':>8s} {'clinF1':>8s}")
    for row in table["rows"]:
        if row["error"]:
            print(f"{row['row']:4s} ERROR {row['error']}")
            continue
        m = row["mean"]
        print(f"{row['row']:4s} {m['bleu4']:8.4f} {m['rouge_l']:8.4f} "
              f"{m['meteor_lite']:8.4f} {m['cider']:8.4f} {m['clinical_f1']:8.4f}")
    direction = table["directional"]
    print(f"directional check: passed={direction['passed']} ({direction['detail']})")
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(args) -> int:
    _prepare(args)
    suite = run_gradient_suite()
    for name, err in sorted(suite["ops"].items()):
        flag = "ok" if err < suite["tolerance"] else "FAIL"
        print(f"op {name:14s} max rel err {err:.3e}  {flag}")
    flag = "ok" if suite["composed_model"] < suite["tolerance"] else "FAIL"
    print(f"composed model   max rel err {suite['composed_model']:.3e}  {flag}")
    print(f"runtime {suite['runtime_seconds']:.1f}s; "
          f"{'PASSED' if suite['passed'] else 'FAILED'}")
    out = os.path.join(args.out_dir, "gradcheck.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(suite, fh, indent=1, sort_keys=True)
    return 0 if suite["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgreport",
        description="graph-guided report generation: data, training, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    _add_common(p)
    p.add_argument("--n-samples", type=int, default=None)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset file")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset.jsonl path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate",
                       help="beam-decode a split and score it, or score report files")
    _add_common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--copy-references", action="store_true",
                   help="pipeline identity check: candidates := references")
    p.add_argument("--candidates", default=None,
                   help="score this id-prefixed report file against --references")
    p.add_argument("--references", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the six-row configuration ablation")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", default="42,43,44", help="comma-separated seeds")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_common(p)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
