"""Metric tests with hand-applied formula oracles and frozen expected values."""

import math

import pytest

from kgreport.evalsuite import (
    EvalPair, MetricReport, bleu, cider, clinical_f1, compute_metrics,
    extract_labels, meteor_lite, meteor_lite_sample, pairs_from_files,
    rouge_l, rouge_l_sample,
)

TRIGGERS = {
    "No Finding": ["no acute"],
    "Edema": ["edema"],
    "Cardiomegaly": ["cardiomegaly", "heart is enlarged"],
    "Pleural Effusion": ["effusion"],
}


def pair(sample_id, cand, ref):
    return EvalPair(sample_id, tuple(cand.split()), tuple(ref.split()))


class TestBleu:
    def test_perfect_match(self):
        pairs = [pair("1", "a b c", "a b c"), pair("2", "d e f g", "d e f g")]
        for n in range(1, 5):
            assert bleu(pairs, n) == pytest.approx(1.0, abs=1e-12)

    def test_brevity_penalty_case(self):
        # p1 = 3/3, candidate 3 tokens vs reference 6: exp(1 - 6/3) * 1
        pairs = [pair("1", "the cat sat", "the cat sat on the mat")]
        assert bleu(pairs, 1) == pytest.approx(0.36787944117144233, abs=1e-12)

    def test_disjoint_is_zero_without_smoothing(self):
        pairs = [pair("1", "x y z", "a b c")]
        assert bleu(pairs, 1) == 0.0
        assert bleu(pairs, 4) == 0.0
        assert bleu(pairs, 1, smooth=True) > 0.0

    def test_monotone_in_order(self):
        pairs = [pair("1", "a b c d e", "a b c x e"),
                 pair("2", "p q r", "p q s")]
        scores = [bleu(pairs, n) for n in range(1, 5)]
        for lo, hi in zip(scores[1:], scores[:-1]):
            assert lo <= hi + 1e-12

    def test_clipping(self):
        # "the the the" vs "the cat": clipped unigram matches = 1
        pairs = [pair("1", "the the the", "the cat")]
        # candidate longer than reference: no brevity penalty
        assert bleu(pairs, 1) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            bleu([], 1)

    def test_bad_order_rejected(self):
        with pytest.raises(ValueError):
            bleu([pair("1", "a", "a")], 5)


class TestRougeL:
    def test_identical(self):
        assert rouge_l([pair("1", "a b c", "a b c")]) == pytest.approx(1.0)

    def test_disjoint(self):
        assert rouge_l([pair("1", "a b", "x y")]) == 0.0

    def test_hand_lcs_case(self):
        # LCS("a b c d", "a c d") = 3; P=3/4, R=1, beta=1.2
        assert rouge_l_sample(("a", "b", "c", "d"), ("a", "c", "d")) == pytest.approx(
            0.8798076923076923, abs=1e-12)

    def test_corpus_is_mean(self):
        pairs = [pair("1", "a b c d", "a c d"), pair("2", "x", "x")]
        assert rouge_l(pairs) == pytest.approx((0.8798076923076923 + 1.0) / 2, abs=1e-12)


class TestMeteorLite:
    def test_identical_has_single_chunk_penalty(self):
        # m=5, chunks=1: 1 * (1 - 0.5 * (1/5)^3)
        assert meteor_lite_sample(tuple("abcde"), tuple("abcde")) == pytest.approx(
            0.996, abs=1e-12)

    def test_disjoint(self):
        assert meteor_lite([pair("1", "a b", "x y")]) == 0.0

    def test_partial_alignment_hand_case(self):
        # matches a,c,d -> chunks {(a)}, {(c,d)} = 2; P=3/4 R=1
        got = meteor_lite_sample(("a", "b", "c", "d"), ("a", "c", "d"))
        assert got == pytest.approx(0.8243727598566307, abs=1e-12)

    def test_reorder_scores_below_identical(self):
        ident = meteor_lite_sample(tuple("abcd"), tuple("abcd"))
        shuffled = meteor_lite_sample(("b", "a", "d", "c"), tuple("abcd"))
        assert shuffled < ident


class TestCider:
    def toy_pairs(self):
        return [pair("1", "a b", "a b"), pair("2", "c d", "c e")]

    def test_hand_tfidf_case(self):
        # N=2, every reference 1-gram has df=1 so idf=log 2.
        # sample 1: identical 2-token pair -> sim 1 at n=1,2, zero at 3,4 -> 10*2/4 = 5
        # sample 2: one shared unigram of two -> cos = 1/2 at n=1 -> 10*0.5/4 = 1.25
        corpus, samples = cider(self.toy_pairs())
        assert samples == pytest.approx([5.0, 1.25], abs=1e-9)
        assert corpus == pytest.approx(3.125, abs=1e-9)

    def test_disjoint_candidate_zero(self):
        pairs = [pair("1", "x y", "a b"), pair("2", "c", "c")]
        _, samples = cider(pairs)
        assert samples[0] == 0.0

    def test_single_reference_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            cider([pair("1", "a", "a"), pair("2", "b", "a")])

    def test_nonnegative_on_random_corpora(self):
        import random
        rng = random.Random(0)
        vocab = ["w%d" % i for i in range(12)]
        for _ in range(100):
            pairs = []
            for i in range(rng.randint(2, 6)):
                cand = " ".join(rng.choices(vocab, k=rng.randint(1, 8)))
                ref = " ".join(rng.choices(vocab, k=rng.randint(1, 8)))
                pairs.append(pair(str(i), cand, ref))
            if len({p.reference for p in pairs}) < 2:
                continue
            corpus, samples = cider(pairs)
            assert corpus >= 0.0 and all(s >= 0.0 for s in samples)
            assert corpus <= 10.0 + 1e-9

    def test_length_penalty(self):
        pairs = [pair("1", "a", "a " + "b " * 11 + "c"), pair("2", "d", "d")]
        _, samples = cider(pairs)
        # 12-token length gap: penalty exp(-144/72) embedded in the score
        assert samples[0] < math.exp(-144.0 / 72.0) * 10.0 + 1e-9


class TestClinicalF1:
    def test_exact_labels(self):
        pairs = [pair("1", "there is edema .", "edema is present .")]
        p, r, f1 = clinical_f1(pairs, TRIGGERS)
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_candidate_mentions_none(self):
        pairs = [pair("1", "all clear today .", "there is edema .")]
        p, r, f1 = clinical_f1(pairs, TRIGGERS)
        assert r == 0.0 and f1 == 0.0

    def test_hand_counted_micro_f1(self):
        pairs = [
            # TP: edema; FN: effusion
            pair("1", "mild edema .", "edema and effusion ."),
            # TP: cardiomegaly (phrase trigger)
            pair("2", "the heart is enlarged .", "cardiomegaly ."),
            # FP: no finding; FN: edema
            pair("3", "no acute process .", "edema ."),
        ]
        p, r, f1 = clinical_f1(pairs, TRIGGERS)
        # TP=2, FP=1, FN=2 -> P=2/3, R=2/4, F1=2PR/(P+R)
        assert p == pytest.approx(2 / 3, abs=1e-12)
        assert r == pytest.approx(0.5, abs=1e-12)
        assert f1 == pytest.approx(2 * (2 / 3) * 0.5 / ((2 / 3) + 0.5), abs=1e-12)

    def test_phrase_triggers_are_contiguous(self):
        assert extract_labels(tuple("the heart is enlarged".split()), TRIGGERS) == {
            "Cardiomegaly"}
        assert extract_labels(tuple("heart size is enlarged".split()), TRIGGERS) == set()

    def test_empty_labeler_rejected(self):
        with pytest.raises(ValueError):
            clinical_f1([pair("1", "a", "a")], {})


class TestReportAndProperties:
    def corpus(self):
        return [
            pair("1", "no acute findings .", "no acute findings ."),
            pair("2", "there is edema .", "edema is seen ."),
            pair("3", "the heart is enlarged .", "cardiomegaly is present ."),
        ]

    def test_order_invariance(self):
        pairs = self.corpus()
        swapped = [pairs[2], pairs[0], pairs[1]]
        a = compute_metrics(pairs, TRIGGERS).corpus
        b = compute_metrics(swapped, TRIGGERS).corpus
        for key in a:
            assert a[key] == pytest.approx(b[key], abs=1e-12)

    def test_repeated_runs_identical(self):
        pairs = self.corpus()
        a = compute_metrics(pairs, TRIGGERS)
        b = compute_metrics(pairs, TRIGGERS)
        assert a.corpus == b.corpus
        assert a.per_sample == b.per_sample

    def test_score_ranges(self):
        report = compute_metrics(self.corpus(), TRIGGERS)
        for key, value in report.corpus.items():
            if key == "cider":
                assert 0.0 <= value <= 10.0
            else:
                assert 0.0 <= value <= 1.0

    def test_report_serialization(self):
        report = compute_metrics(self.corpus(), TRIGGERS)
        assert isinstance(report, MetricReport)
        import json
        payload = json.loads(report.to_json())
        assert payload["schema_version"] == 1
        assert len(payload["per_sample"]) == 3

    def test_pairs_from_files(self, tmp_path):
        cand = tmp_path / "cand.txt"
        ref = tmp_path / "ref.txt"
        cand.write_text("s1\tno acute findings .\ns2\tedema .\n", encoding="utf-8")
        ref.write_text("s1\tno acute findings .\ns2\tmild edema .\n", encoding="utf-8")
        pairs = pairs_from_files(str(cand), str(ref), lambda t: t.split())
        assert len(pairs) == 2
        assert pairs[0].candidate == ("no", "acute", "findings", ".")

    def test_pairs_from_files_missing_id(self, tmp_path):
        cand = tmp_path / "cand.txt"
        ref = tmp_path / "ref.txt"
        cand.write_text("s1\ta\n", encoding="utf-8")
        ref.write_text("s1\ta\ns2\tb\n", encoding="utf-8")
        with pytest.raises(ValueError, match="missing"):
            pairs_from_files(str(cand), str(ref), lambda t: t.split())
