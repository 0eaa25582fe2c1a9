import math

import pytest

from segground.errors import LengthMismatchError
from segground.text_metrics import (
    bleu4,
    meteor_lite,
    rouge_l,
    tokenize,
    vqa_accuracy,
)


class TestTokenizer:
    def test_lowercase_and_split(self):
        assert tokenize("The  Cat\tSat") == ["the", "cat", "sat"]

    def test_strips_edge_punctuation(self):
        assert tokenize("Yes, it is.") == ["yes", "it", "is"]
        assert tokenize('"quoted" (parens)') == ["quoted", "parens"]

    def test_keeps_interior_punctuation(self):
        assert tokenize("x-ray co-occurs") == ["x-ray", "co-occurs"]

    def test_drops_pure_punctuation(self):
        assert tokenize("a . b !!") == ["a", "b"]


def bleu_oracle(candidate, references):
    """Independent literal-formula implementation (different code path)."""
    cand = tokenize(candidate)
    refs = [tokenize(r) for r in references if tokenize(r)]
    if not cand or not refs:
        return 0.0
    logs = []
    for n in range(1, 5):
        cand_grams = {}
        for i in range(len(cand) - n + 1):
            g = tuple(cand[i : i + n])
            cand_grams[g] = cand_grams.get(g, 0) + 1
        total = sum(cand_grams.values())
        clipped = 0
        for g, c in cand_grams.items():
            best = 0
            for ref in refs:
                count = 0
                for i in range(len(ref) - n + 1):
                    if tuple(ref[i : i + n]) == g:
                        count += 1
                best = max(best, count)
            clipped += min(c, best)
        if n == 1:
            if clipped == 0:
                return 0.0
            logs.append(math.log(clipped / total))
        else:
            logs.append(math.log((clipped + 1) / (total + 1)))
    c = len(cand)
    best = None
    for ref in refs:
        key = (abs(len(ref) - c), len(ref))
        if best is None or key < best:
            best = key
    r = best[1]
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return bp * math.exp(sum(logs) / 4)


class TestBleu:
    def test_reflexive(self):
        text = "the lesion occupies the left lower lobe"
        assert bleu4(text, [text]) == 1.0

    def test_no_shared_unigrams(self):
        assert bleu4("alpha beta gamma delta", ["one two three four"]) == 0.0

    def test_cat_mat_instance(self):
        got = bleu4("the cat sat on the mat", ["the cat is on the mat"])
        want = bleu_oracle("the cat sat on the mat", ["the cat is on the mat"])
        assert abs(got - want) <= 1e-9
        # p = (5/6, 4/6, 2/5, 1/4), BP = 1 -> (1/18)**0.25
        assert got == pytest.approx((1 / 18) ** 0.25, abs=1e-12)

    def test_matches_oracle_on_random_texts(self):
        import random

        rng = random.Random(17)
        vocab = ["the", "mass", "lung", "left", "shows", "a", "lesion", "is", "low"]
        for _ in range(100):
            cand = " ".join(rng.choices(vocab, k=rng.randrange(1, 12)))
            refs = [
                " ".join(rng.choices(vocab, k=rng.randrange(1, 12)))
                for _ in range(rng.randrange(1, 3))
            ]
            assert abs(bleu4(cand, refs) - bleu_oracle(cand, refs)) <= 1e-9

    def test_empty_candidate(self):
        assert bleu4("", ["anything"]) == 0.0

    def test_brevity_penalty(self):
        got = bleu4("the cat", ["the cat sat on the mat"])
        assert got < bleu4("the cat sat on the mat", ["the cat sat on the mat"])


class TestRouge:
    def test_identical(self):
        assert rouge_l("a scan of the chest", "a scan of the chest") == 1.0

    def test_disjoint(self):
        assert rouge_l("alpha beta", "gamma delta") == 0.0

    def test_dp_hand_trace(self):
        # LCS("a b c d", "a c b d") = 3 -> P = R = 0.75
        assert rouge_l("a b c d", "a c b d") == pytest.approx(0.75, abs=0)

    def test_empty(self):
        assert rouge_l("", "x") == 0.0
        assert rouge_l("x", "") == 0.0


class TestMeteor:
    def test_identical_six_tokens(self):
        text = "one two three four five six"
        want = 1.0 - 0.5 * (1 / 6) ** 3
        assert meteor_lite(text, text) == pytest.approx(want, abs=1e-9)
        assert meteor_lite(text, text) == pytest.approx(0.997685, abs=1e-6)

    def test_no_match(self):
        assert meteor_lite("alpha beta", "gamma delta") == 0.0

    def test_single_shared_token(self):
        # m = 1, chunks = 1, penalty = 0.5; P = R = 0.5 -> F_mean = 0.5
        assert meteor_lite("alpha beta", "alpha gamma") == pytest.approx(
            0.25, abs=1e-12
        )

    def test_stem_stage_matches(self):
        # "segmented" does not stem-match, but "segments"/"segment" do
        score = meteor_lite("the segments", "the segment")
        assert score > meteor_lite("the wholly", "the different")
        assert score == pytest.approx(1.0 - 0.5 * (1 / 2) ** 3, abs=1e-9)

    def test_chunk_penalty_orders_scores(self):
        contiguous = meteor_lite("a b c d", "a b c d")
        scrambled = meteor_lite("a c b d", "a b c d")
        assert contiguous > scrambled


class TestVqa:
    def test_all_exact(self):
        assert vqa_accuracy(["yes", "No"], ["yes", "no"]) == 1.0

    def test_all_mismatch(self):
        assert vqa_accuracy(["yes", "yes"], ["no", "no"]) == 0.0

    def test_contains_rule(self):
        assert vqa_accuracy(["Yes, it is.", "no"], ["yes", "yes"]) == 0.5

    def test_no_substring_false_positive(self):
        assert vqa_accuracy(["nope"], ["no"]) == 0.0

    def test_multiword_gold(self):
        assert vqa_accuracy(["it is the left lung."], ["left lung"]) == 1.0
        assert vqa_accuracy(["the lung on the left"], ["left lung"]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            vqa_accuracy(["a"], ["a", "b"])
