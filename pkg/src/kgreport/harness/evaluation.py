"""Checkpoint evaluation: beam-decode every sample, score the corpus."""

from __future__ import annotations

import json

from ..evalsuite import EvalPair, MetricReport, compute_metrics
from ..generator import BeamConfig, split_words
from ..model import ReportModel
from .data import DISEASE_TRIGGERS, SampleRecord


def generate_split(model: ReportModel, records: list[SampleRecord],
                   copy_references: bool = False) -> list[dict]:
    """One generation record per sample: id, report text, score, diagnostics."""
    beam = BeamConfig(width=model.cfg.beam_width, max_len=model.cfg.gen_max_len)
    out = []
    for rec in records:
        if copy_references:
            out.append({"id": rec.sample_id, "report": model.tokenizer.normalize(rec.report),
                        "score": 0.0, "finished": True, "beam_width": beam.width,
                        "n_hypotheses": 1, "copied_reference": True})
            continue
        text, best, n_hyp = model.generate(rec.patches, beam)
        out.append({"id": rec.sample_id, "report": text,
                    "score": best.score, "finished": best.finished,
                    "beam_width": beam.width, "n_hypotheses": n_hyp,
                    "copied_reference": False})
    return out


def evaluate_generations(generations: list[dict],
                         records: list[SampleRecord]) -> MetricReport:
    references = {r.sample_id: r.report for r in records}
    pairs = []
    for gen in generations:
        ref = references[gen["id"]]
        pairs.append(EvalPair(gen["id"], tuple(split_words(gen["report"])),
                              tuple(split_words(ref))))
    return compute_metrics(pairs, DISEASE_TRIGGERS)


def evaluate_model(model: ReportModel, records: list[SampleRecord],
                   copy_references: bool = False) -> tuple[MetricReport, list[dict]]:
    generations = generate_split(model, records, copy_references)
    return evaluate_generations(generations, records), generations


def write_generations(generations: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for gen in generations:
            fh.write(json.dumps(gen, sort_keys=True) + "\n")
