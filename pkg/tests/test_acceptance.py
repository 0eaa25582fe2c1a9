"""Acceptance suite: one test per criterion, each printing a PASS line and
enforcing its stated tolerance and runtime budget."""

import itertools
import json
import random
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
from click.testing import CliRunner

from conftest import build_stub_dir
from segground.aligner import run_grad_check_suite
from segground.cli import main as cli_main
from segground.forge import (
    Perspective,
    forge_dataset,
    make_p1_sample,
    make_p2_sample,
    mix,
    sample_to_record,
    split,
    validate_samples,
)
from segground.grounded_text import (
    Entity,
    GroundedResponse,
    extract_entities,
    parse_grounded,
    serialize,
)
from segground.jsonio import dumps_record
from segground.masks import BinaryMask, bce_loss, dice_coeff, dice_loss, iou, total_loss
from segground.masks import LossWeights, SoftMask
from segground.metrics import (
    GroundedPrediction,
    MetricReport,
    grounding_counts,
    grounding_f1,
    merge_reports,
)
from segground.forge import Modality
from segground import templates

FIXTURES = Path("fixtures").resolve()

EXAMPLE_SENTENCE = (
    "<p>The central vein of the adrenal medulla<SEG></p> is located in the "
    "<p>adrenal medulla<SEG></p> and is a rare type of blood vessel. Its "
    "structure is different from other veins, in which the "
    "<p>smooth muscle<SEG></p> of the membrane is arranged in obvious "
    "longitudinal bundles."
)


def report(number, description):
    print(f"[criterion {number:2d}] PASS {description}")


def random_response(rng):
    alphabet = "abcdefgh XYZ.,"
    parts = []
    for _ in range(rng.randrange(0, 7)):
        if rng.random() < 0.5:
            text = "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 10)))
            parts.append(text)
        else:
            phrase = "".join(
                rng.choice(alphabet) for _ in range(rng.randrange(1, 8))
            )
            if phrase:
                parts.append(Entity(phrase, 0))
    return GroundedResponse.from_parts(parts)


def test_criterion_1_grammar_fidelity():
    start = time.monotonic()
    resp = parse_grounded(EXAMPLE_SENTENCE)
    assert resp.entity_count == 3
    assert extract_entities(resp) == [
        ("The central vein of the adrenal medulla", 0),
        ("adrenal medulla", 1),
        ("smooth muscle", 2),
    ]
    rng = random.Random(1)
    for _ in range(10_000):
        original = random_response(rng)
        assert parse_grounded(serialize(original)) == original
    elapsed = time.monotonic() - start
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    report(1, f"worked example parses to 3 entities; 10000 round-trips in {elapsed:.2f}s")


def test_criterion_2_template_fidelity():
    single = ["heart"]
    multi = ["heart", "lung", "brain tumor"]
    mask = BinaryMask.full(6, 6)
    emitted = 0

    for idx, template in enumerate(templates.P1_INSTRUCTIONS):
        for labels in (single, multi):
            sample = make_p1_sample(
                "i.png", [(l, mask) for l in labels], 0,
                sample_id="s", modality=Modality.CT,
                instruction_index=idx, response_index=0,
            )
            assert sample.query == template.replace("{}", ", ".join(labels))
            emitted += 1
    for idx, template in enumerate(templates.P1_RESPONSES_SINGLE):
        sample = make_p1_sample(
            "i.png", [(l, mask) for l in single], 0,
            sample_id="s", modality=Modality.CT,
            instruction_index=0, response_index=idx,
        )
        fill = templates.join_wrapped_labels(single)
        assert serialize(sample.gold) == template.replace("{}", fill)
        emitted += 1
    for idx, template in enumerate(templates.P1_RESPONSES_MULTI):
        sample = make_p1_sample(
            "i.png", [(l, mask) for l in multi], 0,
            sample_id="s", modality=Modality.CT,
            instruction_index=0, response_index=idx,
        )
        fill = templates.join_wrapped_labels(multi)
        assert serialize(sample.gold) == template.replace("{}", fill)
        emitted += 1

    for kind, instructions in (
        ("box", templates.P2_BOX_INSTRUCTIONS),
        ("point", templates.P2_POINT_INSTRUCTIONS),
    ):
        for idx, template in enumerate(instructions):
            sample = make_p2_sample(
                "i.png", [(l, mask) for l in multi], kind, 0,
                sample_id="s", modality=Modality.CT,
                instruction_index=idx, response_index=0,
            )
            assert sample.query == template  # no substitution slot
            emitted += 1
    for kind in ("box", "point"):
        for idx, template in enumerate(templates.P2_RESPONSES):
            sample = make_p2_sample(
                "i.png", [(l, mask) for l in multi], kind, 0,
                sample_id="s", modality=Modality.CT,
                instruction_index=0, response_index=idx,
            )
            labels = [seg.phrase for seg in sample.gold.segments if isinstance(seg, Entity)]
            fill = templates.join_wrapped_labels(labels)
            assert serialize(sample.gold) == template.replace("{}", fill)
            emitted += 1

    # seeded choices also stay inside the golden families
    expansions = set()
    for template in templates.P1_INSTRUCTIONS:
        for labels in (single, multi):
            expansions.add(template.replace("{}", ", ".join(labels)))
    for seed in range(100):
        for labels in (single, multi):
            sample = make_p1_sample(
                "i.png", [(l, mask) for l in labels], seed,
                sample_id="s", modality=Modality.CT,
            )
            assert sample.query in expansions
    distinct = {
        t for family in templates.ALL_TEMPLATE_FAMILIES.values() for t in family
    }
    report(
        2,
        f"{emitted} emitted strings byte-match their templates "
        f"({len(distinct)} distinct golden strings pinned)",
    )


def _max_matching_bruteforce(adjacency: np.ndarray) -> int:
    n_pred, n_gold = adjacency.shape
    best = 0
    if n_pred <= n_gold:
        for perm in itertools.permutations(range(n_gold), n_pred):
            best = max(best, sum(adjacency[i, j] for i, j in enumerate(perm)))
    else:
        for perm in itertools.permutations(range(n_pred), n_gold):
            best = max(best, sum(adjacency[perm[j], j] for j in range(n_gold)))
    return int(best)


def test_criterion_3_grounding_f1_oracle():
    start = time.monotonic()
    rng = random.Random(33)
    np_rng = np.random.default_rng(33)
    phrases = ["heart", "lung", "liver", "kidney"]

    def random_side():
        n = rng.randrange(0, 7)
        items = []
        for slot in range(n):
            phrase = rng.choice(phrases)
            mask = BinaryMask(np_rng.random((6, 6)) < rng.uniform(0.2, 0.8))
            items.append((phrase, mask))
        segments = []
        for slot, (phrase, _) in enumerate(items):
            segments.append(Entity(phrase, slot))
        return GroundedPrediction(
            response=GroundedResponse(tuple(segments)),
            masks=tuple(mask for _, mask in items),
        )

    for _ in range(500):
        pred = random_side()
        gold = random_side()
        e, a, b = grounding_counts(pred, gold)
        pred_items = list(
            zip(
                [s.phrase.lower() for s in pred.response.segments],
                pred.masks,
            )
        )
        gold_items = list(
            zip(
                [s.phrase.lower() for s in gold.response.segments],
                gold.masks,
            )
        )
        adjacency = np.zeros((len(pred_items), len(gold_items)), dtype=int)
        for i, (pp, pm) in enumerate(pred_items):
            for j, (gp, gm) in enumerate(gold_items):
                adjacency[i, j] = int(pp == gp and iou(pm, gm) > 0.5)
        assert e == _max_matching_bruteforce(adjacency)
        precision, recall, f1 = grounding_f1(pred, gold)
        assert precision == (e / a if a else 0.0)
        assert recall == (e / b if b else 0.0)
        if precision + recall:
            assert f1 == 2 * precision * recall / (precision + recall)
        else:
            assert f1 == 0.0
    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"took {elapsed:.2f}s"
    report(3, f"500 instances match the exhaustive matching oracle in {elapsed:.2f}s")


def test_criterion_4_geometry_exactness():
    a_data = np.zeros((4, 4), dtype=bool)
    a_data[:, :2] = True
    b_data = np.zeros((4, 4), dtype=bool)
    b_data[:2, :] = True
    a, b = BinaryMask(a_data), BinaryMask(b_data)
    assert iou(a, b) == float(Fraction(1, 3))
    assert dice_coeff(a, b) == 0.5

    rng = np.random.default_rng(44)
    for _ in range(10_000):
        x = BinaryMask(rng.random((8, 8)) < rng.uniform(0.05, 0.95))
        y = BinaryMask(rng.random((8, 8)) < rng.uniform(0.05, 0.95))
        inter = int(np.count_nonzero(x.data & y.data))
        union = int(np.count_nonzero(x.data | y.data))
        total = x.count() + y.count()
        if union == 0:
            assert iou(x, y) == 1.0 and dice_coeff(x, y) == 1.0
            continue
        i = Fraction(inter, union)
        d = Fraction(2 * inter, total)
        assert d == 2 * i / (1 + i)  # exact integer arithmetic
        assert iou(x, y) == float(i)
        assert dice_coeff(x, y) == float(d)
    report(4, "hand fixtures exact; dice/IoU relation holds on 10000 fuzzed pairs")


def test_criterion_5_loss_correctness():
    rng = np.random.default_rng(55)
    for _ in range(100):
        probs = rng.random((8, 8))
        target = rng.random((8, 8)) < 0.5
        pred = SoftMask(probs)
        gold = BinaryMask(target)

        eps = 1e-7
        bce_ref = 0.0
        for r in range(8):
            for c in range(8):
                p = min(max(probs[r, c], eps), 1 - eps)
                t = 1.0 if target[r, c] else 0.0
                bce_ref += -(t * np.log(p) + (1 - t) * np.log(1 - p))
        bce_ref /= 64.0
        assert abs(bce_loss(pred, gold) - bce_ref) <= 1e-12

        num = sp = st = 0.0
        for r in range(8):
            for c in range(8):
                t = 1.0 if target[r, c] else 0.0
                num += probs[r, c] * t
                sp += probs[r, c]
                st += t
        dice_ref = 1.0 - (2.0 * num + 1.0) / (sp + st + 1.0)
        assert abs(dice_loss(pred, gold) - dice_ref) <= 1e-12

    w = LossWeights(1.0, 2.0, 0.5)
    for component in range(3):
        parts = [0.0, 0.0, 0.0]
        parts[component] = 1.234567
        doubled = list(parts)
        doubled[component] *= 2
        assert total_loss(*doubled, w) == 2 * total_loss(*parts, w)
    report(5, "bce/dice match scalar-loop oracles to 1e-12 on 100 instances; linearity exact")


def test_criterion_6_gradient_checks():
    start = time.monotonic()
    results = run_grad_check_suite(n_configs=20)
    max_err = max(r.max_rel_error for r in results)
    elapsed = time.monotonic() - start
    assert max_err < 1e-4, f"max relative error {max_err:.3e}"
    assert elapsed < 60.0, f"took {elapsed:.2f}s"
    report(6, f"20 seeded configs, max relative error {max_err:.2e} in {elapsed:.2f}s")


def test_criterion_7_split_mix_fidelity():
    train, val, test = split(list(range(1000)), rng_seed=0)
    assert (len(train), len(val), len(test)) == (990, 5, 5)

    streams = [[f"s{i}"] for i in range(5)]
    draws = mix(streams, (1, 2, 2, 1, 1), rng_seed=0, count=70_000)
    want = (1 / 7, 2 / 7, 2 / 7, 1 / 7, 1 / 7)
    fractions = [draws.count(f"s{i}") / 70_000 for i in range(5)]
    for got, expected in zip(fractions, want):
        assert abs(got - expected) <= 0.01
    report(
        7,
        "split(1000) = 990/5/5; mix fractions "
        + "/".join(f"{f:.3f}" for f in fractions)
        + " within 0.01 of 1:2:2:1:1",
    )


def test_criterion_8_pipeline_validity(manifest_records, kb, tmp_path):
    stub = build_stub_dir(tmp_path / "stub", manifest_records, kb, run_seed=0)
    from segground.provider import StubCompletionProvider

    provider = StubCompletionProvider(stub)
    start = time.monotonic()
    first = forge_dataset(manifest_records, list(Perspective), 0, kb, provider)
    elapsed = time.monotonic() - start
    samples = first.all_samples()
    assert len(samples) == 200 and not first.skipped
    assert validate_samples(samples) == []
    for sample in samples:
        parse_grounded(serialize(sample.gold))  # strict-parse
        has_prompt = sample.visual_prompt is not None
        assert has_prompt == (sample.perspective in (Perspective.P2, Perspective.P4))
        assert len(sample.gold_masks) == sample.gold.entity_count

    second = forge_dataset(manifest_records, list(Perspective), 0, kb, provider)
    first_bytes = "\n".join(dumps_record(sample_to_record(s)) for s in samples)
    second_bytes = "\n".join(
        dumps_record(sample_to_record(s)) for s in second.all_samples()
    )
    assert first_bytes == second_bytes
    assert elapsed < 10.0, f"took {elapsed:.2f}s"
    report(8, f"50-image fixture forged twice byte-identically in {elapsed:.2f}s")


def test_criterion_9_metric_reflexivity(manifest_records, kb, tmp_path):
    stub = build_stub_dir(tmp_path / "stub", manifest_records, kb, run_seed=0)
    runner = CliRunner()
    out = tmp_path / "out"
    result = runner.invoke(
        cli_main,
        [
            "forge",
            "--manifest", str(FIXTURES / "manifest_50.jsonl"),
            "--knowledge", str(FIXTURES / "knowledge.json"),
            "--out", str(out),
            "--provider-stub", str(stub),
            "--perspectives", "p1,p3",
        ],
        catch_exceptions=False,
    )
    assert result.exit_code == 0, result.output
    report_path = tmp_path / "report.json"
    result = runner.invoke(
        cli_main,
        [
            "eval",
            "--pred", str(out / "p1.jsonl"),
            "--gold", str(out / "p1.jsonl"),
            "--out", str(report_path),
        ],
        catch_exceptions=False,
    )
    assert result.exit_code == 0, result.output
    overall = json.loads(report_path.read_text())["overall"]
    assert overall["miou"] == 1.0
    assert overall["ap50"] == 1.0
    assert overall["grounding_f1"] == 1.0
    assert overall["bleu4"] == 1.0
    assert overall["rouge_l"] == 1.0
    report(9, "self-evaluation yields mIoU=AP50=F1=BLEU-4=ROUGE-L=1.0")


def test_criterion_10_shard_merge_equivalence(manifest_records, kb, tmp_path):
    stub = build_stub_dir(tmp_path / "stub", manifest_records, kb, run_seed=0)
    from segground.provider import StubCompletionProvider

    result = forge_dataset(
        manifest_records, [Perspective.P1, Perspective.P3], 0, kb,
        StubCompletionProvider(stub),
    )
    samples = result.all_samples()
    rng = random.Random(5)

    def perturbed(sample):
        # flip a few mask rows so the evaluation is not trivially perfect
        masks = []
        for mask in sample.gold_masks:
            data = mask.data.copy()
            if rng.random() < 0.5:
                data[rng.randrange(data.shape[0])] ^= True
            masks.append(BinaryMask(data))
        return GroundedPrediction(response=sample.gold, masks=tuple(masks))

    pairs = [
        (
            perturbed(s),
            GroundedPrediction(response=s.gold, masks=s.gold_masks),
            "predicted text differs slightly",
            "the gold text stays here",
        )
        for s in samples
    ]

    single = MetricReport()
    for pred, gold, pt, gt in pairs:
        single.add_sample(pred, gold, pt, gt)

    shards = [MetricReport() for _ in range(4)]
    for i, (pred, gold, pt, gt) in enumerate(pairs):
        shards[i % 4].add_sample(pred, gold, pt, gt)
    merged = shards[0]
    for shard in shards[1:]:
        merged = merge_reports(merged, shard)

    single_final = single.finalize()
    merged_final = merged.finalize()
    assert merged_final == single_final  # bit-for-bit on finalized values
    for key in single_final:
        if isinstance(single_final[key], float):
            assert merged_final[key].hex() == single_final[key].hex()
    report(10, "4-way sharded evaluation finalizes bit-for-bit equal to single pass")
