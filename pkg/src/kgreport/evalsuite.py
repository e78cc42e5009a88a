"""Text-generation metrics over (candidate, reference) token pairs.

Implements corpus BLEU-1..4 with brevity penalty, ROUGE-L (beta = 1.2),
an exact-match-only METEOR variant reported as "meteor_lite", the CIDEr-D
consensus metric (sigma = 6, x10 scaling), and a keyword clinical-efficacy
F1 that extracts disease mentions from both sides via a trigger-phrase
table.  Every sample carries exactly one reference.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

SCHEMA_VERSION = 1

ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
CIDER_SIGMA = 6.0
CIDER_MAX_N = 4


@dataclass(frozen=True)
class EvalPair:
    sample_id: str
    candidate: tuple[str, ...]
    reference: tuple[str, ...]

    @classmethod
    def from_texts(cls, sample_id: str, candidate: str, reference: str,
                   normalize) -> "EvalPair":
        return cls(sample_id, tuple(normalize(candidate)), tuple(normalize(reference)))


def _require_corpus(pairs: Sequence[EvalPair]) -> None:
    if not pairs:
        raise ValueError("metric needs a nonempty corpus")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(pairs: Sequence[EvalPair], n: int, smooth: bool = False) -> float:
    """Corpus-level BLEU-n: clipped precision geometric mean x brevity penalty."""
    _require_corpus(pairs)
    if not 1 <= n <= 4:
        raise ValueError(f"bleu order must be in 1..4, got {n}")
    log_precision_sum = 0.0
    for k in range(1, n + 1):
        matched = 0
        total = 0
        for pair in pairs:
            cand_counts = _ngrams(pair.candidate, k)
            ref_counts = _ngrams(pair.reference, k)
            matched += sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
            total += sum(cand_counts.values())
        if smooth:
            matched += 1
            total += 1
        if matched == 0 or total == 0:
            return 0.0
        log_precision_sum += math.log(matched / total)
    cand_len = sum(len(p.candidate) for p in pairs)
    ref_len = sum(len(p.reference) for p in pairs)
    if cand_len == 0:
        return 0.0
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_precision_sum / n)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_sample(candidate: Sequence[str], reference: Sequence[str],
                   beta: float = ROUGE_BETA) -> float:
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    b2 = beta * beta
    return (1 + b2) * precision * recall / (recall + b2 * precision)


def rouge_l(pairs: Sequence[EvalPair]) -> float:
    """Mean per-sample LCS F-measure with beta = 1.2."""
    _require_corpus(pairs)
    return sum(rouge_l_sample(p.candidate, p.reference) for p in pairs) / len(pairs)


def _meteor_alignment(candidate: Sequence[str],
                      reference: Sequence[str]) -> list[tuple[int, int]]:
    """Exact-match alignment, greedy left to right.

    Each candidate token matches an unused reference position with the same
    surface form, preferring the position that continues the previous match
    (previous reference index + 1), else the earliest one available.
    """
    available: dict[str, list[int]] = {}
    for j, tok in enumerate(reference):
        available.setdefault(tok, []).append(j)
    matches: list[tuple[int, int]] = []
    prev_ref = -2
    for i, tok in enumerate(candidate):
        slots = available.get(tok)
        if not slots:
            continue
        if prev_ref + 1 in slots:
            j = prev_ref + 1
            slots.remove(j)
        else:
            j = slots.pop(0)
        matches.append((i, j))
        prev_ref = j
    return matches


def _count_chunks(matches: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in matches:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite_sample(candidate: Sequence[str], reference: Sequence[str]) -> float:
    if not candidate or not reference:
        return 0.0
    matches = _meteor_alignment(candidate, reference)
    m = len(matches)
    if m == 0:
        return 0.0
    precision = m / len(candidate)
    recall = m / len(reference)
    f_mean = precision * recall / (METEOR_ALPHA * precision
                                   + (1 - METEOR_ALPHA) * recall)
    penalty = METEOR_GAMMA * (_count_chunks(matches) / m) ** METEOR_BETA
    return f_mean * (1.0 - penalty)


def meteor_lite(pairs: Sequence[EvalPair]) -> float:
    """Exact-match METEOR: harmonic P/R mean with a fragmentation penalty."""
    _require_corpus(pairs)
    return sum(meteor_lite_sample(p.candidate, p.reference) for p in pairs) / len(pairs)


def _cider_document_frequency(pairs: Sequence[EvalPair]) -> list[Counter]:
    df = [Counter() for _ in range(CIDER_MAX_N)]
    for pair in pairs:
        for k in range(1, CIDER_MAX_N + 1):
            for gram in set(_ngrams(pair.reference, k)):
                df[k - 1][gram] += 1
    return df


def cider(pairs: Sequence[EvalPair]) -> tuple[float, list[float]]:
    """CIDEr-D: TF-IDF n-gram cosine consensus with a Gaussian length penalty.

    Sentence length is the token count.  Returns (corpus mean, per-sample
    scores), each scaled x10 into the conventional [0, 10] range.
    """
    _require_corpus(pairs)
    if len({p.reference for p in pairs}) < 2:
        raise ValueError("cider needs at least 2 distinct references for a usable IDF")
    n_docs = len(pairs)
    df = _cider_document_frequency(pairs)
    log_n = math.log(n_docs)

    def tfidf(tokens: Sequence[str], k: int) -> tuple[dict, float]:
        vec = {}
        for gram, count in _ngrams(tokens, k).items():
            idf = log_n - math.log(max(1.0, df[k - 1][gram]))
            vec[gram] = count * idf
        norm = math.sqrt(sum(v * v for v in vec.values()))
        return vec, norm

    per_sample = []
    for pair in pairs:
        penalty = math.exp(-((len(pair.candidate) - len(pair.reference)) ** 2)
                           / (2.0 * CIDER_SIGMA ** 2))
        sims = []
        for k in range(1, CIDER_MAX_N + 1):
            cand_vec, cand_norm = tfidf(pair.candidate, k)
            ref_vec, ref_norm = tfidf(pair.reference, k)
            num = sum(min(val, ref_vec.get(gram, 0.0)) * ref_vec.get(gram, 0.0)
                      for gram, val in cand_vec.items())
            sims.append(num / (cand_norm * ref_norm)
                        if cand_norm > 0 and ref_norm > 0 else 0.0)
        per_sample.append(10.0 * penalty * sum(sims) / CIDER_MAX_N)
    return sum(per_sample) / n_docs, per_sample


def _contains_phrase(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    k = len(phrase)
    if k == 0 or k > len(tokens):
        return False
    target = tuple(phrase)
    return any(tuple(tokens[i:i + k]) == target for i in range(len(tokens) - k + 1))


def extract_labels(tokens: Sequence[str],
                   labeler: Mapping[str, Sequence[str]]) -> set[str]:
    """Diseases whose any trigger phrase occurs as a contiguous subsequence."""
    found = set()
    for disease, phrases in labeler.items():
        for phrase in phrases:
            if _contains_phrase(tokens, phrase.split()):
                found.add(disease)
                break
    return found


def clinical_f1(pairs: Sequence[EvalPair],
                labeler: Mapping[str, Sequence[str]]) -> tuple[float, float, float]:
    """Micro-averaged precision/recall/F1 of extracted disease-label sets."""
    _require_corpus(pairs)
    if not labeler:
        raise ValueError("clinical_f1 needs a nonempty trigger table")
    tp = fp = fn = 0
    for pair in pairs:
        cand_labels = extract_labels(pair.candidate, labeler)
        ref_labels = extract_labels(pair.reference, labeler)
        tp += len(cand_labels & ref_labels)
        fp += len(cand_labels - ref_labels)
        fn += len(ref_labels - cand_labels)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class MetricReport:
    corpus: dict[str, float]
    per_sample: list[dict]
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        payload = {"schema_version": self.schema_version, "corpus": self.corpus,
                   "per_sample": self.per_sample}
        return json.dumps(payload, indent=1, sort_keys=True)


def compute_metrics(pairs: Sequence[EvalPair],
                    labeler: Mapping[str, Sequence[str]],
                    bleu_smooth: bool = False) -> MetricReport:
    """Full metric panel for a corpus of single-reference pairs."""
    _require_corpus(pairs)
    cider_corpus, cider_samples = cider(pairs)
    precision, recall, f1 = clinical_f1(pairs, labeler)
    corpus = {
        "bleu1": bleu(pairs, 1, bleu_smooth),
        "bleu2": bleu(pairs, 2, bleu_smooth),
        "bleu3": bleu(pairs, 3, bleu_smooth),
        "bleu4": bleu(pairs, 4, bleu_smooth),
        "rouge_l": rouge_l(pairs),
        "meteor_lite": meteor_lite(pairs),
        "cider": cider_corpus,
        "clinical_precision": precision,
        "clinical_recall": recall,
        "clinical_f1": f1,
    }
    per_sample = []
    for pair, cider_score in zip(pairs, cider_samples):
        per_sample.append({
            "id": pair.sample_id,
            "rouge_l": rouge_l_sample(pair.candidate, pair.reference),
            "meteor_lite": meteor_lite_sample(pair.candidate, pair.reference),
            "cider": cider_score,
            "candidate_labels": sorted(extract_labels(pair.candidate, labeler)),
            "reference_labels": sorted(extract_labels(pair.reference, labeler)),
        })
    return MetricReport(corpus=corpus, per_sample=per_sample)


def read_report_file(path: str) -> list[tuple[str, str]]:
    """Read id-prefixed report lines: ``<id>\\t<text>`` per line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected '<id>\\t<text>'")
            sample_id, text = line.split("\t", 1)
            records.append((sample_id, text))
    return records


def pairs_from_files(candidate_path: str, reference_path: str,
                     normalize) -> list[EvalPair]:
    candidates = dict(read_report_file(candidate_path))
    references = read_report_file(reference_path)
    missing = [sid for sid, _ in references if sid not in candidates]
    if missing:
        raise ValueError(f"candidates missing for ids: {missing[:5]}")
    return [EvalPair.from_texts(sid, candidates[sid], text, normalize)
            for sid, text in references]
