"""Command-line surface: forge datasets, evaluate predictions, validate
grounded text, run the numeric self-checks, and report corpus statistics.

Exit codes are a stable contract: 0 success, 1 validation failure, 2 input
error, 3 provider error.  Failures print one machine-readable JSON line to
stderr: ``{"error": "<Kind>", "detail": "..."}``.

A flat JSON config file (``--config``) may supply any long option under its
underscore name; explicit flags win.  File outputs are newline-terminated
JSONL with stable key order, written to a temp file and renamed.
"""

from __future__ import annotations

import json
import sys
from collections import Counter
from pathlib import Path

import click

from . import aligner, plots
from .errors import (
    BadRatiosError,
    DuplicateLabelError,
    IdMismatchError,
    KnowledgeParseError,
    ManifestError,
    ProviderError,
    UnknownLabelError,
)
from .forge import (
    Perspective,
    forge_dataset,
    mix,
    read_manifest,
    sample_from_record,
    sample_to_record,
    split,
    validate_samples,
)
from .grounded_text import (
    GroundedParseError,
    parse_grounded,
    parse_with_diagnostics,
    strip_markup,
)
from .jsonio import read_jsonl, write_json, write_jsonl, write_text_atomic
from .knowledge import load_knowledge
from .masks import LossWeights, mask_from_wire
from .metrics import DEFAULT_TEXT_METRICS, GroundedPrediction, MetricReport
from .provider import HttpCompletionProvider, StubCompletionProvider

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INPUT = 2
EXIT_PROVIDER = 3

_INPUT_ERRORS = (
    ManifestError,
    KnowledgeParseError,
    DuplicateLabelError,
    UnknownLabelError,
    BadRatiosError,
    IdMismatchError,
    FileNotFoundError,
    GroundedParseError,
)


def _error_kind(exc: BaseException) -> str:
    name = type(exc).__name__
    return name[:-5] if name.endswith("Error") else name


def _fail(exc: BaseException, code: int) -> "SystemExit":
    detail = str(exc)
    if isinstance(exc, IdMismatchError):
        payload = {
            "error": "IdMismatch",
            "detail": detail,
            "missing_pred": exc.missing_pred,
            "missing_gold": exc.missing_gold,
        }
    else:
        payload = {"error": _error_kind(exc), "detail": detail}
    click.echo(json.dumps(payload), err=True)
    return SystemExit(code)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise _fail(exc, EXIT_INPUT)
    if not isinstance(payload, dict):
        raise _fail(ValueError(f"config {path} must be a flat JSON object"), EXIT_INPUT)
    return payload


def _resolve(flag_value, config: dict, key: str, default):
    """Flags win over the config file, which wins over the built-in default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in str(text).split(","))


def _parse_perspectives(text: str) -> list[Perspective]:
    out = []
    for token in str(text).split(","):
        token = token.strip().upper()
        if not token:
            continue
        try:
            out.append(Perspective(token))
        except ValueError:
            raise ValueError(f"unknown perspective {token!r}; expected p1..p4")
    if not out:
        raise ValueError("no perspectives requested")
    return out


@click.group()
@click.version_option(package_name="segground")
def main():
    """Grounded-segmentation dataset forge, evaluator, and self-checks."""


@main.command()
@click.option("--manifest", type=click.Path(), help="Input manifest JSONL.")
@click.option("--knowledge", type=click.Path(), help="Knowledge base JSON.")
@click.option("--out", "out_dir", type=click.Path(), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Run seed (default 0).")
@click.option("--perspectives", default=None, help="Comma list, e.g. p1,p2,p3,p4.")
@click.option("--provider-url", default=None, help="Completion endpoint URL.")
@click.option("--provider-stub", type=click.Path(), default=None, help="Stub fixture dir.")
@click.option("--workers", type=int, default=None, help="Parallel provider calls.")
@click.option("--strict/--lenient", "strict", default=None, help="Knowledge lookups.")
@click.option("--ratios", default=None, help="train,val,test ratios.")
@click.option("--exclude", type=click.Path(), default=None, help="Ids barred from val/test.")
@click.option("--vqa", type=click.Path(), default=None, help="External VQA JSONL (5th mix source).")
@click.option("--mix-weights", default=None, help="Mixing weights, e.g. 1,2,2,1,1.")
@click.option("--mix-count", type=int, default=None, help="Samples to draw into mix.jsonl.")
@click.option("--config", "config_path", type=click.Path(), default=None)
def forge(
    manifest,
    knowledge,
    out_dir,
    seed,
    perspectives,
    provider_url,
    provider_stub,
    workers,
    strict,
    ratios,
    exclude,
    vqa,
    mix_weights,
    mix_count,
    config_path,
):
    """Construct per-perspective datasets, splits, and the stats sidecar."""
    config = _load_config(config_path)
    manifest = _resolve(manifest, config, "manifest", None)
    knowledge = _resolve(knowledge, config, "knowledge", None)
    out_dir = _resolve(out_dir, config, "out", None)
    seed = _resolve(seed, config, "seed", 0)
    perspectives = _resolve(perspectives, config, "perspectives", "p1,p2,p3,p4")
    provider_url = _resolve(provider_url, config, "provider_url", None)
    provider_stub = _resolve(provider_stub, config, "provider_stub", None)
    workers = _resolve(workers, config, "workers", 1)
    strict = _resolve(strict, config, "strict", True)
    ratios = _resolve(ratios, config, "ratios", "0.99,0.005,0.005")
    exclude = _resolve(exclude, config, "exclude", None)
    vqa = _resolve(vqa, config, "vqa", None)
    mix_weights = _resolve(mix_weights, config, "mix_weights", None)
    mix_count = _resolve(mix_count, config, "mix_count", 0)

    if not manifest or not out_dir:
        raise _fail(ValueError("--manifest and --out are required"), EXIT_INPUT)

    try:
        wanted = _parse_perspectives(perspectives)
        ratio_values = _parse_floats(ratios)
        records = read_manifest(manifest)
        kb = load_knowledge(knowledge) if knowledge else None
        exclude_ids = None
        if exclude:
            exclude_ids = {
                line.strip()
                for line in Path(exclude).read_text(encoding="utf-8").splitlines()
                if line.strip()
            }
    except _INPUT_ERRORS as exc:
        raise _fail(exc, EXIT_INPUT)
    except ValueError as exc:
        raise _fail(exc, EXIT_INPUT)

    provider = None
    if provider_stub:
        provider = StubCompletionProvider(provider_stub)
    elif provider_url:
        provider = HttpCompletionProvider(provider_url)
    needs_provider = any(p in (Perspective.P3, Perspective.P4) for p in wanted)
    if needs_provider and (provider is None or kb is None):
        raise _fail(
            ValueError("p3/p4 need --knowledge and --provider-url or --provider-stub"),
            EXIT_INPUT,
        )

    try:
        result = forge_dataset(
            records,
            wanted,
            run_seed=seed,
            kb=kb,
            provider=provider,
            strict_knowledge=strict,
            workers=workers,
        )
    except UnknownLabelError as exc:
        raise _fail(exc, EXIT_INPUT)
    except ProviderError as exc:
        raise _fail(exc, EXIT_PROVIDER)

    all_samples = result.all_samples()
    problems = validate_samples(all_samples)
    if problems:
        raise _fail(ValueError("; ".join(problems[:20])), EXIT_VALIDATION)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for perspective in wanted:
        write_jsonl(
            out / f"{perspective.value.lower()}.jsonl",
            (sample_to_record(s) for s in result.samples[perspective]),
        )

    if all_samples:
        try:
            train, val, test = split(
                all_samples, ratio_values, rng_seed=seed, exclude_ids=exclude_ids
            )
        except BadRatiosError as exc:
            raise _fail(exc, EXIT_INPUT)
    else:
        train, val, test = [], [], []
    split_map = {"train": train, "val": val, "test": test}
    for name, subset in split_map.items():
        write_jsonl(out / f"{name}.jsonl", (sample_to_record(s) for s in subset))

    if mix_count:
        streams = [
            [sample_to_record(s) for s in result.samples[p]] for p in wanted
        ]
        if vqa:
            try:
                streams.append(list(read_jsonl(vqa)))
            except (OSError, ValueError) as exc:
                raise _fail(exc, EXIT_INPUT)
        if mix_weights is None:
            weights = (1, 2, 2, 1, 1) if len(streams) == 5 else (1.0,) * len(streams)
        else:
            weights = _parse_floats(mix_weights)
        try:
            mixed = mix(streams, weights, rng_seed=seed, count=mix_count)
        except (ValueError, BadRatiosError) as exc:
            raise _fail(exc, EXIT_INPUT)
        write_jsonl(out / "mix.jsonl", mixed)

    stats = _stats_from_splits(
        {name: [sample_to_record(s) for s in subset] for name, subset in split_map.items()}
    )
    write_json(out / "stats.json", stats)
    write_json(
        out / "forge_log.json",
        {
            "seed": seed,
            "perspectives": [p.value for p in wanted],
            "forged": {p.value: len(result.samples[p]) for p in wanted},
            "skipped": result.skipped,
        },
    )
    click.echo(
        f"forged {len(all_samples)} samples "
        f"({', '.join(f'{p.value}={len(result.samples[p])}' for p in wanted)}), "
        f"skipped {len(result.skipped)}"
    )


def _load_eval_side(path, lenient: bool):
    """Load a predictions or gold file into id -> (prediction, text, perspective).

    Accepts dataset records (with a "gold" field) and prediction records
    (with a "response" field).
    """
    out = {}
    for record in read_jsonl(path):
        rid = record.get("id")
        if rid is None:
            raise ManifestError(f"{path}: record without id: {record!r}")
        if rid in out:
            raise ManifestError(f"{path}: duplicate id {rid!r}")
        if "gold" in record:
            sample = sample_from_record(record)
            response, masks = sample.gold, sample.gold_masks
            perspective = sample.perspective.value
        elif "response" in record:
            response = parse_grounded(record["response"], lenient=lenient)
            masks = tuple(mask_from_wire(m) for m in record.get("masks", []))
            perspective = record.get("perspective")
        else:
            raise ManifestError(f"{path}: record {rid!r} has neither gold nor response")
        prediction = GroundedPrediction(response=response, masks=masks)
        out[rid] = (prediction, strip_markup(response), perspective)
    return out


@main.command("eval")
@click.option("--pred", "pred_path", type=click.Path(), help="Predictions JSONL.")
@click.option("--gold", "gold_path", type=click.Path(), help="Gold JSONL.")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Report JSON path.")
@click.option("--csv", "csv_path", type=click.Path(), default=None, help="Metric CSV path.")
@click.option("--figures-dir", type=click.Path(), default=None, help="Render chart PNGs here.")
@click.option("--strict/--lenient", "strict", default=None, help="Prediction parsing (default lenient).")
@click.option("--config", "config_path", type=click.Path(), default=None)
def eval_cmd(pred_path, gold_path, out_path, csv_path, figures_dir, strict, config_path):
    """Evaluate predictions against gold, with a per-perspective breakdown."""
    config = _load_config(config_path)
    pred_path = _resolve(pred_path, config, "pred", None)
    gold_path = _resolve(gold_path, config, "gold", None)
    out_path = _resolve(out_path, config, "out", None)
    csv_path = _resolve(csv_path, config, "csv", None)
    figures_dir = _resolve(figures_dir, config, "figures_dir", None)
    strict = _resolve(strict, config, "strict", False)
    if not pred_path or not gold_path:
        raise _fail(ValueError("--pred and --gold are required"), EXIT_INPUT)

    try:
        preds = _load_eval_side(pred_path, lenient=not strict)
        golds = _load_eval_side(gold_path, lenient=False)
    except _INPUT_ERRORS + (ValueError,) as exc:
        raise _fail(exc, EXIT_INPUT)

    missing_pred = sorted(set(golds) - set(preds))
    missing_gold = sorted(set(preds) - set(golds))
    if missing_pred or missing_gold:
        raise _fail(IdMismatchError(missing_pred, missing_gold), EXIT_INPUT)

    overall = MetricReport(config=DEFAULT_TEXT_METRICS)
    by_perspective: dict[str, MetricReport] = {}
    for rid in sorted(golds):
        gold_pred, gold_text, gold_persp = golds[rid]
        pred_pred, pred_text, _ = preds[rid]
        overall.add_sample(pred_pred, gold_pred, pred_text, gold_text)
        if gold_persp:
            sub = by_perspective.setdefault(
                gold_persp, MetricReport(config=DEFAULT_TEXT_METRICS)
            )
            sub.add_sample(pred_pred, gold_pred, pred_text, gold_text)

    report = {
        "overall": overall.finalize(),
        "per_perspective": {
            name: rep.finalize() for name, rep in sorted(by_perspective.items())
        },
    }
    text = json.dumps(report, ensure_ascii=False, indent=2) + "\n"
    if out_path:
        write_text_atomic(out_path, text)
    click.echo(text, nl=False)
    if csv_path:
        lines = ["metric,value\n"]
        for key, value in report["overall"].items():
            lines.append(f"{key},{value}\n")
        write_text_atomic(csv_path, "".join(lines))
    if figures_dir:
        plots.render_eval_figures(report, figures_dir)


@main.command("parse")
@click.option("--input", "input_path", type=click.Path(), required=True)
@click.option("--jsonl", is_flag=True, default=False, help="Input is JSONL, not raw lines.")
@click.option("--field", default="response", help="JSONL field holding the response.")
@click.option("--strict/--lenient", "strict", default=True)
def parse_cmd(input_path, jsonl, field, strict):
    """Check grounded-text lines; exit 0 only when every line parses."""
    try:
        raw = Path(input_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _fail(exc, EXIT_INPUT)
    if jsonl:
        try:
            texts = [record.get(field, "") for record in read_jsonl(input_path)]
        except ValueError as exc:
            raise _fail(exc, EXIT_INPUT)
    else:
        texts = raw.splitlines()

    ok = True
    for lineno, text in enumerate(texts, start=1):
        response, diags = parse_with_diagnostics(text, lenient=not strict)
        if strict:
            aborted = bool(diags)
        else:
            aborted = any(d.kind.value in ("UnbalancedTag", "NestedPhrase") for d in diags)
        if aborted:
            ok = False
            listing = " ".join(str(d) for d in diags)
            click.echo(f"{lineno}\tFAIL\t{listing}")
        else:
            click.echo(f"{lineno}\tOK\tentities={response.entity_count}")
    if not ok:
        raise SystemExit(EXIT_VALIDATION)


@main.command("gradcheck")
@click.option("--seeds", type=int, default=20, help="Number of seeded configurations.")
@click.option("--eps", type=float, default=aligner.SUITE_EPS)
@click.option("--tolerance", type=float, default=1e-4)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--flip-param", default=None, hidden=True, help="Fault-injection test hook.")
def gradcheck_cmd(seeds, eps, tolerance, out_path, flip_param):
    """Verify analytic gradients of the full chain against central differences."""
    results = []
    for i in range(seeds):
        config = aligner.ReferenceConfig()
        batch = aligner.make_reference_batch(config, seed=i)
        params = aligner.init_params(config, seed=i + 10_000)

        def loss_fn(p):
            loss, grads = aligner.loss_and_grads(batch, p, LossWeights())
            if flip_param:
                if flip_param not in grads:
                    raise _fail(
                        ValueError(f"unknown parameter {flip_param!r}"), EXIT_INPUT
                    )
                grads = dict(grads)
                grads[flip_param] = -grads[flip_param]
            return loss, grads

        results.append(aligner.grad_check(loss_fn, params, eps=eps))

    max_err = max(r.max_rel_error for r in results)
    failing = sorted(
        {name for r in results for name in r.failing_params(tolerance)}
    )
    payload = {
        "max_rel_error": max_err,
        "tolerance": tolerance,
        "eps": eps,
        "passed": not failing,
        "failing_params": failing,
        "configs": [
            {
                "seed": i,
                "max_rel_error": r.max_rel_error,
                "worst_param": r.worst_param,
            }
            for i, r in enumerate(results)
        ],
    }
    text = json.dumps(payload, indent=2) + "\n"
    if out_path:
        write_text_atomic(out_path, text)
    click.echo(text, nl=False)
    if failing:
        raise SystemExit(EXIT_VALIDATION)


def _stats_from_splits(split_records: dict[str, list[dict]]) -> dict:
    perspectives = {p.value: {} for p in Perspective}
    modalities: Counter = Counter()
    splits = {}
    total = 0
    for split_name, records in split_records.items():
        splits[split_name] = len(records)
        total += len(records)
        for record in records:
            perspective = record.get("perspective", "?")
            perspectives.setdefault(perspective, {})
            perspectives[perspective][split_name] = (
                perspectives[perspective].get(split_name, 0) + 1
            )
            modalities[record.get("modality", "?")] += 1
    for record in perspectives.values():
        for split_name in split_records:
            record.setdefault(split_name, 0)
        record["total"] = sum(record[s] for s in split_records)
    return {
        "perspectives": perspectives,
        "modalities": dict(sorted(modalities.items())),
        "splits": splits,
        "total": total,
    }


@main.command("stats")
@click.option(
    "--data",
    "data_paths",
    type=click.Path(),
    multiple=True,
    required=True,
    help="Forge output dir or JSONL files.",
)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--figures-dir", type=click.Path(), default=None)
def stats_cmd(data_paths, out_path, csv_path, figures_dir):
    """Count samples per perspective, modality, and split."""
    split_records: dict[str, list[dict]] = {}
    try:
        for data_path in data_paths:
            path = Path(data_path)
            if path.is_dir():
                files = sorted(path.glob("*.jsonl"))
                if not files:
                    raise FileNotFoundError(f"no .jsonl files under {path}")
                split_files = [f for f in files if f.stem in ("train", "val", "test")]
                for file in split_files or files:
                    split_records[file.stem] = list(read_jsonl(file))
            else:
                split_records[path.stem] = list(read_jsonl(path))
    except (OSError, ValueError) as exc:
        raise _fail(exc, EXIT_INPUT)

    stats = _stats_from_splits(split_records)
    text = json.dumps(stats, ensure_ascii=False, indent=2) + "\n"
    if out_path:
        write_text_atomic(out_path, text)
    click.echo(text, nl=False)
    if csv_path:
        split_names = sorted(split_records)
        lines = ["dataset," + ",".join(split_names) + ",total\n"]
        for name, record in stats["perspectives"].items():
            counts = ",".join(str(record.get(s, 0)) for s in split_names)
            lines.append(f"{name},{counts},{record['total']}\n")
        lines.append(
            "Total,"
            + ",".join(str(stats["splits"].get(s, 0)) for s in split_names)
            + f",{stats['total']}\n"
        )
        write_text_atomic(csv_path, "".join(lines))
    if figures_dir:
        plots.render_stats_figures(stats, figures_dir)


if __name__ == "__main__":
    main()
