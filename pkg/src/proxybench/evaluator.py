"""Run the three evaluation variants against a model endpoint.

Log-likelihood scores only the correct continuation (one forward pass per
sample), multiple choice scores every option of a cloze prompt and picks
the best length-normalized one (K passes), generation decodes token by
token (up to the configured cap) and string-matches the output. Prompts
use completion-style cloze formatting: options are scored as continuation
text, never as A/B/C/D labels.
"""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from proxybench.corpus import (
    FINAL_ANSWER_MARKER,
    UNANSWERABLE_TOKEN,
    Benchmark,
    Sample,
    extract_final_answer,
    gold_continuation,
    normalize_answer,
)
from proxybench.modelclient import ModelClient, ModelClientError
from proxybench.reformulate import McBenchmark, McSample

logger = logging.getLogger(__name__)

NORM_MODES = ("per_token", "per_char", "none")
MATCHERS = ("numeric_final", "alias_exact", "squad_em")

_NUMBER_RE = re.compile(r"[-+]?\d[\d,]*(?:\.\d+)?")


class EvaluationError(RuntimeError):
    """Aggregate invalidated, e.g. more than 10% of samples failed to score."""


@dataclass(frozen=True)
class PromptFormat:
    fewshot_count: int = 0
    question_prefix: str = "Question: "
    answer_prefix: str = "\nAnswer:"
    example_separator: str = "\n\n"
    stop_sequences: list[str] = field(default_factory=list)
    max_generation_tokens: int = 256

    def __post_init__(self):
        if self.fewshot_count < 0:
            raise ValueError("fewshot_count must be >= 0")
        if self.max_generation_tokens < 1:
            raise ValueError("max_generation_tokens must be >= 1")


def default_format(schema_kind: str) -> PromptFormat:
    """Per-schema defaults: 5-shot with a 512-token cap for chain-of-thought
    math, bare 2048-token prompts for code, 0-shot/256 elsewhere."""
    if schema_kind == "math_cot":
        return PromptFormat(
            fewshot_count=5,
            stop_sequences=["Question: "],
            max_generation_tokens=512,
        )
    if schema_kind == "code_task":
        return PromptFormat(
            fewshot_count=0,
            question_prefix="",
            answer_prefix="",
            stop_sequences=[],
            max_generation_tokens=2048,
        )
    return PromptFormat(fewshot_count=0, stop_sequences=["\n"], max_generation_tokens=256)


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    variant: str  # ll | mc | nlg
    forward_passes: int
    wall_seconds: float
    option_scores: list[tuple[float, int, int]] | None = None
    normalized_scores: list[float] | None = None
    chosen_index: int | None = None
    correct: bool | None = None
    generated_text: str | None = None


@dataclass(frozen=True)
class VariantResult:
    benchmark: str
    variant_tag: str
    metric_name: str  # accuracy | summed_loglikelihood
    value: float
    n_samples: int
    total_forward_passes: int
    total_wall_seconds: float
    n_failed: int = 0
    norm_mode: str | None = None
    value_per_sample: float | None = None


def build_prompt(
    sample: Sample | McSample,
    fmt: PromptFormat,
    fewshot_pool: Sequence[Sample] = (),
) -> str:
    """Cloze context: few-shot exemplars (question + gold continuation) then
    the target question, ending right after the answer prefix."""
    if fmt.fewshot_count > len(fewshot_pool):
        raise ValueError(
            f"fewshot_count {fmt.fewshot_count} exceeds pool size {len(fewshot_pool)}"
        )
    parts: list[str] = []
    for exemplar in fewshot_pool[: fmt.fewshot_count]:
        parts.append(
            fmt.question_prefix
            + exemplar.question
            + fmt.answer_prefix
            + " "
            + gold_continuation(exemplar)
            + fmt.example_separator
        )
    parts.append(fmt.question_prefix + sample.question + fmt.answer_prefix)
    return "".join(parts)


def length_normalize(raw_logprob: float, token_count: int, char_count: int, mode: str) -> float:
    if mode == "none":
        return raw_logprob
    if mode == "per_token":
        if token_count <= 0:
            raise ValueError("token_count must be positive")
        return raw_logprob / token_count
    if mode == "per_char":
        if char_count <= 0:
            raise ValueError("char_count must be positive")
        return raw_logprob / char_count
    raise ValueError(f"unknown normalization mode {mode!r}")


def select_option(normalized_scores: Sequence[float]) -> int:
    """Index of the maximum score; ties break toward the lowest index."""
    if not normalized_scores:
        raise ValueError("no scores to select from")
    if any(not math.isfinite(s) for s in normalized_scores):
        raise ValueError("non-finite score in option scores")
    best = 0
    for i, s in enumerate(normalized_scores):
        if s > normalized_scores[best]:
            best = i
    return best


def count_forward_passes(
    variant: str, k: int | None = None, generated_tokens: int | None = None
) -> int:
    """Forward-pass cost of one sample: 1 (ll), K (mc), realized tokens (nlg)."""
    if variant == "ll":
        return 1
    if variant == "mc":
        if k is None:
            raise ValueError("mc requires the option count")
        return k
    if variant == "nlg":
        if generated_tokens is None:
            raise ValueError("nlg requires the generated token count")
        return max(1, generated_tokens)
    raise ValueError(f"unknown variant {variant!r}")


def match_nlg(matcher: str, generated: str, sample: Sample) -> bool:
    """Correctness of a generated answer; unparseable generations are wrong."""
    if matcher == "numeric_final":
        if sample.final_answer is None:
            return False
        if FINAL_ANSWER_MARKER in generated:
            predicted = extract_final_answer(generated)
        else:
            numbers = _NUMBER_RE.findall(generated)
            if not numbers:
                return False
            predicted = numbers[-1].replace(",", "")
        try:
            return float(predicted) == float(sample.final_answer)
        except ValueError:
            return predicted.strip() == sample.final_answer.strip()
    if matcher == "alias_exact":
        first_line = generated.strip().split("\n", 1)[0]
        return normalize_answer(first_line) in set(sample.normalized_aliases)
    if matcher == "squad_em":
        norm = normalize_answer(generated)
        if sample.unanswerable:
            return norm == UNANSWERABLE_TOKEN
        return norm in set(sample.normalized_aliases)
    raise ValueError(f"unknown matcher {matcher!r}")


def _map_samples(client: ModelClient, items: Sequence, fn) -> list:
    """Evaluate samples with bounded parallelism; output order follows input
    order so aggregation is independent of completion order."""
    workers = min(max(1, client.max_parallel), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _finalize_accuracy(
    name: str,
    variant_tag: str,
    outcomes: Iterable[tuple[SampleRecord | None, str]],
    norm_mode: str | None = None,
) -> tuple[VariantResult, list[SampleRecord]]:
    records: list[SampleRecord] = []
    failed: list[str] = []
    for record, sample_id in outcomes:
        if record is None:
            failed.append(sample_id)
        else:
            records.append(record)
    total = len(records) + len(failed)
    if failed:
        logger.warning("%d/%d samples failed and were excluded: %s", len(failed), total, failed[:5])
    if len(failed) * 10 > total:
        raise EvaluationError(
            f"{len(failed)} of {total} samples failed; aggregate would be unreliable"
        )
    if not records:
        raise EvaluationError("no samples were evaluated")
    accuracy = sum(1 for r in records if r.correct) / len(records)
    result = VariantResult(
        benchmark=name,
        variant_tag=variant_tag,
        metric_name="accuracy",
        value=accuracy,
        n_samples=len(records),
        total_forward_passes=sum(r.forward_passes for r in records),
        total_wall_seconds=sum(r.wall_seconds for r in records),
        n_failed=len(failed),
        norm_mode=norm_mode,
    )
    return result, records


def eval_mc(
    bench: McBenchmark,
    client: ModelClient,
    fmt: PromptFormat,
    norm_mode: str = "per_token",
    fewshot_pool: Sequence[Sample] = (),
) -> tuple[VariantResult, list[SampleRecord]]:
    """Score each option as a cloze continuation, pick the best normalized
    score; a sample costs exactly K forward passes."""
    if norm_mode not in NORM_MODES:
        raise ValueError(f"unknown normalization mode {norm_mode!r}")

    def eval_one(ms: McSample) -> tuple[SampleRecord | None, str]:
        context = build_prompt(ms, fmt, fewshot_pool)
        scores: list[tuple[float, int, int]] = []
        wall = 0.0
        try:
            for option in ms.options:
                sr = client.score_continuation(context, " " + option)
                scores.append(
                    (sr.total_logprob, sr.continuation_token_count, sr.continuation_char_count)
                )
                wall += sr.wall_seconds
        except ModelClientError as exc:
            logger.warning("sample %s failed: %s", ms.id, exc)
            return None, ms.id
        normalized = [length_normalize(*s, mode=norm_mode) for s in scores]
        chosen = select_option(normalized)
        record = SampleRecord(
            sample_id=ms.id,
            variant="mc",
            forward_passes=count_forward_passes("mc", k=len(ms.options)),
            wall_seconds=wall,
            option_scores=scores,
            normalized_scores=normalized,
            chosen_index=chosen,
            correct=chosen == ms.correct_index,
        )
        return record, ms.id

    outcomes = _map_samples(client, bench.samples, eval_one)
    return _finalize_accuracy(bench.name, bench.variant_tag, outcomes, norm_mode=norm_mode)


def eval_ll(
    bench: Benchmark,
    client: ModelClient,
    fmt: PromptFormat,
    target: str = "full_solution",
) -> tuple[VariantResult, list[SampleRecord]]:
    """Score only the correct continuation per sample; the benchmark aggregate
    is the summed log-likelihood (probability mass), one pass per sample."""
    if target not in ("full_solution", "final_answer_only"):
        raise ValueError(f"unknown target {target!r}")
    if target == "final_answer_only":
        missing = [s.id for s in bench.samples if s.final_answer is None]
        if missing:
            raise ValueError(f"final_answer missing on samples: {missing[:5]}")

    def continuation_for(sample: Sample) -> str:
        if target == "final_answer_only":
            return sample.final_answer  # validated above
        return gold_continuation(sample)

    def eval_one(sample: Sample) -> tuple[SampleRecord | None, str]:
        context = build_prompt(sample, fmt, bench.fewshot_pool)
        try:
            sr = client.score_continuation(context, " " + continuation_for(sample))
        except ModelClientError as exc:
            logger.warning("sample %s failed: %s", sample.id, exc)
            return None, sample.id
        record = SampleRecord(
            sample_id=sample.id,
            variant="ll",
            forward_passes=count_forward_passes("ll"),
            wall_seconds=sr.wall_seconds,
            option_scores=[
                (sr.total_logprob, sr.continuation_token_count, sr.continuation_char_count)
            ],
        )
        return record, sample.id

    outcomes = _map_samples(client, bench.samples, eval_one)
    records: list[SampleRecord] = []
    failed: list[str] = []
    for record, sample_id in outcomes:
        if record is None:
            failed.append(sample_id)
        else:
            records.append(record)
    total = len(records) + len(failed)
    if failed:
        logger.warning("%d/%d samples failed and were excluded: %s", len(failed), total, failed[:5])
    if len(failed) * 10 > total:
        raise EvaluationError(
            f"{len(failed)} of {total} samples failed; aggregate would be unreliable"
        )
    if not records:
        raise EvaluationError("no samples were evaluated")
    summed = sum(r.option_scores[0][0] for r in records)
    variant_tag = "ll_ao" if target == "final_answer_only" else "ll"
    result = VariantResult(
        benchmark=bench.name,
        variant_tag=variant_tag,
        metric_name="summed_loglikelihood",
        value=summed,
        n_samples=len(records),
        total_forward_passes=sum(r.forward_passes for r in records),
        total_wall_seconds=sum(r.wall_seconds for r in records),
        n_failed=len(failed),
        value_per_sample=summed / len(records),
    )
    return result, records


def eval_nlg(
    bench: Benchmark,
    client: ModelClient,
    fmt: PromptFormat,
    matcher: str,
) -> tuple[VariantResult, list[SampleRecord]]:
    """Generate free text and string-match it; a sample costs as many forward
    passes as tokens the model actually produced (bounded by the cap)."""
    if matcher not in MATCHERS:
        raise ValueError(f"unknown matcher {matcher!r}")

    def eval_one(sample: Sample) -> tuple[SampleRecord | None, str]:
        context = build_prompt(sample, fmt, bench.fewshot_pool)
        try:
            gen = client.generate(context, fmt.max_generation_tokens, fmt.stop_sequences)
        except ModelClientError as exc:
            logger.warning("sample %s failed: %s", sample.id, exc)
            return None, sample.id
        record = SampleRecord(
            sample_id=sample.id,
            variant="nlg",
            forward_passes=count_forward_passes(
                "nlg", generated_tokens=gen.generated_token_count
            ),
            wall_seconds=gen.wall_seconds,
            generated_text=gen.text,
            correct=match_nlg(matcher, gen.text, sample),
        )
        return record, sample.id

    outcomes = _map_samples(client, bench.samples, eval_one)
    return _finalize_accuracy(bench.name, "nlg", outcomes)


def write_sample_records(records: Sequence[SampleRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for r in records:
            handle.write(
                json.dumps(
                    {
                        "sample_id": r.sample_id,
                        "variant": r.variant,
                        "forward_passes": r.forward_passes,
                        "wall_seconds": r.wall_seconds,
                        "option_scores": r.option_scores,
                        "normalized_scores": r.normalized_scores,
                        "chosen_index": r.chosen_index,
                        "correct": r.correct,
                        "generated_text": r.generated_text,
                    },
                    ensure_ascii=False,
                )
            )
            handle.write("\n")
