"""Six-row ablation mirroring the fusion/graph configuration matrix."""

from __future__ import annotations

from dataclasses import dataclass

from .config import TrainConfig, config_diff
from .data import SampleRecord, split_records
from .evaluation import evaluate_model
from .training import train

SCHEMA_VERSION = 1

METRIC_KEYS = ("bleu4", "rouge_l", "meteor_lite", "cider", "clinical_f1")


@dataclass(frozen=True)
class AblationRow:
    row_id: str
    description: str
    overrides: dict      # config fields this row changes vs the full model


ABLATION_ROWS: tuple[AblationRow, ...] = (
    AblationRow("a", "regional features only",
                {"fusion": "none", "use_gcn": False}),
    AblationRow("b", "disease features only, with graph layers",
                {"fusion": "none", "disease_features_only": True}),
    AblationRow("c", "average fusion + graph layers",
                {"fusion": "average"}),
    AblationRow("d", "element-wise fusion + graph layers",
                {"fusion": "element"}),
    AblationRow("e", "modality-wise fusion, no graph layers",
                {"use_gcn": False}),
    AblationRow("f", "modality-wise fusion + graph layers (full model)",
                {}),
)

FULL_MODEL_OVERRIDES = {"fusion": "modality", "use_gcn": True,
                        "disease_features_only": False}


def row_config(base: TrainConfig, row: AblationRow, seed: int) -> TrainConfig:
    full = base.replace(seed=seed, **FULL_MODEL_OVERRIDES)
    cfg = full.replace(**row.overrides)
    diff = config_diff(cfg, full)
    if set(diff) != set(row.overrides):
        raise AssertionError(
            f"row {row.row_id} differs from the full model in {sorted(diff)}, "
            f"intended {sorted(row.overrides)}")
    return cfg


def _collect_metrics(report) -> dict[str, float]:
    corpus = report.corpus
    return {"bleu4": corpus["bleu4"], "rouge_l": corpus["rouge_l"],
            "meteor_lite": corpus["meteor_lite"], "cider": corpus["cider"],
            "clinical_f1": corpus["clinical_f1"]}


def run_ablation(records: list[SampleRecord], base_cfg: TrainConfig,
                 seeds: list[int], rows: tuple[AblationRow, ...] = ABLATION_ROWS,
                 log=None) -> dict:
    """Train and evaluate each configuration row, averaged over seeds.

    Rows that fail propagate an error entry and the remaining rows still run.
    Every row/seed pair shares the same dataset; per-seed model inits pair up
    across rows because shared components draw identical init streams.
    """
    if not seeds:
        raise ValueError("run_ablation needs at least one seed")
    test_split = split_records(records, "test")
    table: dict = {"schema_version": SCHEMA_VERSION, "seeds": list(seeds), "rows": []}
    for row in rows:
        entry: dict = {"row": row.row_id, "description": row.description,
                       "overrides": dict(row.overrides), "per_seed": [], "error": None}
        try:
            for seed in seeds:
                cfg = row_config(base_cfg, row, seed)
                result = train(cfg, records)
                expect_gcn = cfg.use_gcn and (cfg.fusion != "none"
                                              or cfg.disease_features_only)
                if not expect_gcn and result.model.gcn_call_count != 0:
                    raise AssertionError(
                        f"row {row.row_id}: graph layers ran "
                        f"{result.model.gcn_call_count} times, expected 0")
                if expect_gcn and result.model.gcn_call_count == 0:
                    raise AssertionError(f"row {row.row_id}: graph layers never ran")
                report, _ = evaluate_model(result.model, test_split)
                seed_entry = {"seed": seed,
                              "final_train_loss": result.final_train_loss,
                              "gcn_calls": result.model.gcn_call_count,
                              **_collect_metrics(report)}
                entry["per_seed"].append(seed_entry)
                if log:
                    log(f"row {row.row_id} seed {seed}: " +
                        " ".join(f"{k}={seed_entry[k]:.4f}" for k in METRIC_KEYS))
            entry["mean"] = {k: sum(s[k] for s in entry["per_seed"]) / len(seeds)
                             for k in METRIC_KEYS}
        except Exception as exc:  # keep remaining rows running
            entry["error"] = f"{type(exc).__name__}: {exc}"
            if log:
                log(f"row {row.row_id} failed: {entry['error']}")
        table["rows"].append(entry)
    return table


def directional_report(table: dict) -> dict:
    """Soft check: full model (f) vs regional-only baseline (a) on clinical F1."""
    by_id = {r["row"]: r for r in table["rows"]}
    report = {"criterion": "mean clinical_f1 of row f >= row a",
              "passed": None, "detail": ""}
    for rid in ("a", "f"):
        row = by_id.get(rid)
        if row is None or row.get("error") or not row.get("per_seed"):
            report["detail"] = f"row {rid} unavailable"
            return report
    f1_a = by_id["a"]["mean"]["clinical_f1"]
    f1_f = by_id["f"]["mean"]["clinical_f1"]
    report["passed"] = bool(f1_f >= f1_a)
    report["per_seed"] = {
        "a": [s["clinical_f1"] for s in by_id["a"]["per_seed"]],
        "f": [s["clinical_f1"] for s in by_id["f"]["per_seed"]],
    }
    report["detail"] = f"mean clinical_f1: full={f1_f:.4f} baseline={f1_a:.4f}"
    return report
