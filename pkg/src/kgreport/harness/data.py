"""Synthetic corpus: images with injected disease signatures, template reports.

Each sample carries a patch grid (seeded noise plus one fixed signature
pattern per present disease), a label set drawn so that same-region pairs
co-occur more often than cross-region ones, and a reference report built
from a small template bank.  Reports mention exactly the labeled diseases
through trigger phrases the clinical-efficacy scorer can find again.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..generator import DEFAULT_INSTRUCTION, Tokenizer, split_words
from ..kgraph import DEFAULT_REGION_TABLE, ENTITY_NAMES
from .config import TrainConfig
from .rng import substream

FILLER_SENTENCES = (
    "the lungs are well expanded and grossly clear bilaterally .",
    "mediastinal contours are within normal limits for technique .",
    "the visualized osseous structures appear intact and unremarkable .",
    "the trachea is midline and the airways are patent .",
    "pulmonary vascularity is within normal range without congestion .",
    "the costophrenic angles remain sharp and well defined .",
    "soft tissues of the chest wall are symmetric and unremarkable .",
    "the imaged upper abdomen shows a normal bowel gas pattern .",
)

DISEASE_PHRASES: dict[str, tuple[str, ...]] = {
    "No Finding": (
        "no acute cardiopulmonary process is identified .",
        "no acute abnormality detected on this examination .",
        "no acute disease in the visualized chest .",
    ),
    "Enlarged Cardiomediastinum": (
        "the cardiomediastinum is enlarged compared to prior .",
        "prominent widening of the cardiomediastinum is seen .",
        "the cardiomediastinal contour appears widened today .",
    ),
    "Cardiomegaly": (
        "the heart is enlarged beyond normal limits .",
        "moderate cardiomegaly is present without decompensation .",
        "the cardiac silhouette is enlarged and globular .",
    ),
    "Lung Opacity": (
        "there is a focal lung opacity on the frontal view .",
        "a hazy opacity obscures the left base .",
        "scattered opacities are present in both lungs .",
    ),
    "Lung Lesion": (
        "a discrete pulmonary nodule is identified .",
        "a cavitary lesion is present in the upper lobe .",
        "a small nodular density projects over the right apex .",
    ),
    "Edema": (
        "there is pulmonary edema with perihilar haze .",
        "interstitial edema is present with septal lines .",
        "vascular congestion and mild edema are observed .",
    ),
    "Consolidation": (
        "there is lobar consolidation with air bronchograms .",
        "confluent consolidation involves the right base .",
        "focal consolidation is identified retrocardially .",
    ),
    "Pneumonia": (
        "findings are most consistent with pneumonia .",
        "there is radiographic evidence of pneumonia .",
        "developing pneumonia is suspected clinically .",
    ),
    "Atelectasis": (
        "there is basilar atelectasis with volume loss .",
        "subsegmental atelectasis is noted at the bases .",
        "plate like atelectasis is seen above the diaphragm .",
    ),
    "Pneumothorax": (
        "a small apical pneumothorax is present .",
        "there is a tiny left pneumothorax without shift .",
        "trace pneumothorax is identified along the pleura .",
    ),
    "Pleural Effusion": (
        "there is a small layering pleural effusion .",
        "bilateral effusions are present and larger on the right .",
        "a moderate effusion blunts the costophrenic angle .",
    ),
    "Pleural Other": (
        "there is pleural thickening along the lateral margin .",
        "pleural scarring is noted from remote inflammation .",
        "calcified pleural plaques are identified bilaterally .",
    ),
    "Fracture": (
        "an old rib fracture is noted on the left .",
        "multiple healed rib fractures are present .",
        "an acute fracture is seen in the posterior ribs .",
    ),
    "Support Devices": (
        "an endotracheal tube terminates above the carina .",
        "a central venous catheter is in standard position .",
        "support devices are unchanged in course and position .",
    ),
}

# Trigger phrases for label extraction; each phrasing above contains at
# least one of its disease's triggers and no filler sentence contains any.
DISEASE_TRIGGERS: dict[str, tuple[str, ...]] = {
    "No Finding": ("no acute",),
    "Enlarged Cardiomediastinum": ("cardiomediastinum", "cardiomediastinal"),
    "Cardiomegaly": ("cardiomegaly", "heart is enlarged", "silhouette is enlarged"),
    "Lung Opacity": ("opacity", "opacities"),
    "Lung Lesion": ("nodule", "nodular", "lesion"),
    "Edema": ("edema",),
    "Consolidation": ("consolidation",),
    "Pneumonia": ("pneumonia",),
    "Atelectasis": ("atelectasis",),
    "Pneumothorax": ("pneumothorax",),
    "Pleural Effusion": ("effusion", "effusions"),
    "Pleural Other": ("thickening", "scarring", "plaques"),
    "Fracture": ("fracture", "fractures"),
    "Support Devices": ("tube", "catheter", "support devices"),
}

REGION_OF = dict(DEFAULT_REGION_TABLE)


def build_tokenizer() -> Tokenizer:
    """Vocabulary over the template bank, instruction, and entity names."""
    words: set[str] = set()
    for sentence in FILLER_SENTENCES:
        words.update(split_words(sentence))
    for phrases in DISEASE_PHRASES.values():
        for phrase in phrases:
            words.update(split_words(phrase))
    words.update(split_words(DEFAULT_INSTRUCTION))
    for name in ENTITY_NAMES:
        words.update(split_words(name))
    return Tokenizer(words)


@dataclass
class SampleRecord:
    sample_id: str
    patches: np.ndarray          # (n_patches, patch_dim) float32
    labels: tuple[str, ...]
    report: str
    split: str


def disease_signatures(seed: int, n_patches: int, patch_dim: int,
                       patches_per_disease: int = 3):
    """Fixed per-disease additive patterns and their patch subsets."""
    rng = substream(seed, "signatures")
    patterns = {}
    for name in ENTITY_NAMES:
        vec = rng.normal(0.0, 1.0, size=patch_dim)
        subset = rng.choice(n_patches, size=min(patches_per_disease, n_patches),
                            replace=False)
        patterns[name] = (np.sort(subset), vec)
    return patterns


def _pair_weights(boost: float) -> tuple[list[tuple[str, str]], np.ndarray]:
    pairs = []
    weights = []
    for i, a in enumerate(ENTITY_NAMES):
        for b in ENTITY_NAMES[i + 1:]:
            pairs.append((a, b))
            weights.append(boost if REGION_OF[a] == REGION_OF[b] else 1.0)
    w = np.asarray(weights)
    return pairs, w / w.sum()


def sample_label_sets(seed: int, n: int, boost: float = 3.0,
                      pair_probability: float = 0.5) -> list[tuple[str, ...]]:
    """Label sets: singles uniform, pairs weighted toward same-region."""
    rng = substream(seed, "labels")
    pairs, probs = _pair_weights(boost)
    out = []
    for _ in range(n):
        if rng.random() < pair_probability:
            a, b = pairs[rng.choice(len(pairs), p=probs)]
            chosen = (a, b)
        else:
            chosen = (ENTITY_NAMES[rng.integers(len(ENTITY_NAMES))],)
        # canonical order by entity index
        out.append(tuple(sorted(chosen, key=ENTITY_NAMES.index)))
    return out


def render_report(labels: tuple[str, ...], rng: np.random.Generator) -> str:
    sentences = [FILLER_SENTENCES[rng.integers(len(FILLER_SENTENCES))]]
    for name in labels:
        phrases = DISEASE_PHRASES[name]
        sentences.append(phrases[rng.integers(len(phrases))])
    sentences.append(FILLER_SENTENCES[rng.integers(len(FILLER_SENTENCES))])
    return " ".join(sentences)


def split_sizes(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"n={n} too small for splits {ratios}")
    return n_train, n_val, n_test


def generate_dataset(seed: int, n_samples: int,
                     split_ratios: tuple[float, float, float],
                     cfg: TrainConfig) -> list[SampleRecord]:
    """Deterministic synthetic corpus for a given seed.

    In multi-disease samples one disease (the "primary") is injected at
    full amplitude and the rest are scaled down: faint findings must be
    inferred partly from the company they keep, which is exactly the
    co-occurrence structure the disease graph encodes.
    """
    n_train, n_val, n_test = split_sizes(n_samples, split_ratios)
    label_sets = sample_label_sets(seed, n_samples, cfg.cooccurrence_boost,
                                   cfg.pair_probability)
    signatures = disease_signatures(seed, cfg.n_patches, cfg.patch_dim)
    noise_rng = substream(seed, "noise")
    report_rng = substream(seed, "reports")
    primary_rng = substream(seed, "primaries")
    records = []
    for i, labels in enumerate(label_sets):
        patches = noise_rng.normal(0.0, cfg.noise_scale,
                                   size=(cfg.n_patches, cfg.patch_dim))
        primary = int(primary_rng.integers(len(labels)))
        for j, name in enumerate(labels):
            subset, vec = signatures[name]
            scale = 1.0 if j == primary else cfg.secondary_amplitude_scale
            patches[subset] += cfg.signature_amplitude * scale * vec
        if i < n_train:
            split = "train"
        elif i < n_train + n_val:
            split = "val"
        else:
            split = "test"
        records.append(SampleRecord(
            sample_id=f"s{i:06d}",
            patches=patches.astype(np.float32),
            labels=labels,
            report=render_report(labels, report_rng),
            split=split,
        ))
    return records


def write_dataset(records: list[SampleRecord], path: str) -> None:
    """Line-delimited JSON: id, patches (flat), labels, report, split."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "id": rec.sample_id,
                "patches": [float(v) for v in rec.patches.reshape(-1)],
                "labels": list(rec.labels),
                "report": rec.report,
                "split": rec.split,
            }
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def read_dataset(path: str, n_patches: int, patch_dim: int) -> list[SampleRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            flat = np.asarray(obj["patches"], dtype=np.float32)
            if flat.size != n_patches * patch_dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {n_patches * patch_dim} patch values, "
                    f"got {flat.size}")
            records.append(SampleRecord(
                sample_id=obj["id"],
                patches=flat.reshape(n_patches, patch_dim),
                labels=tuple(obj["labels"]),
                report=obj["report"],
                split=obj["split"],
            ))
    return records


def split_records(records: list[SampleRecord], split: str) -> list[SampleRecord]:
    out = [r for r in records if r.split == split]
    if not out:
        raise ValueError(f"dataset has no {split!r} samples")
    return out
