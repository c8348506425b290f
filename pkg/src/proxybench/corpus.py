"""Benchmark ingestion and answer normalization.

Benchmarks are line-delimited UTF-8 files, one JSON record per line.
Required keys depend on the schema kind; see ``SCHEMA_KINDS`` and the
README for the exact per-schema key lists. A sibling ``<name>.fewshot``
file in the same format supplies the few-shot exemplar pool.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_KINDS = (
    "math_cot",
    "open_qa",
    "reading_comprehension",
    "code_task",
    "mc_offshelf",
    "boolean_qa",
)

UNANSWERABLE_TOKEN = "unanswerable"

FINAL_ANSWER_MARKER = "####"

_PUNCT_RE = re.compile(r"[^\w\s]|_")
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_WS_RE = re.compile(r"\s+")


class BenchmarkFormatError(ValueError):
    """Malformed benchmark file; carries the offending line number when known."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


def normalize_answer(text: str) -> str:
    """Canonical answer form: lowercase, punctuation and English articles
    removed, whitespace collapsed. Idempotent."""
    t = text.lower()
    t = _PUNCT_RE.sub("", t)
    t = _ARTICLE_RE.sub(" ", t)
    t = _WS_RE.sub(" ", t)
    return t.strip()


def extract_final_answer(solution_text: str) -> str:
    """Trimmed text after the last ``####`` marker, thousands commas removed."""
    if FINAL_ANSWER_MARKER not in solution_text:
        raise ValueError(
            f"no {FINAL_ANSWER_MARKER!r} marker in solution text: not a chain-of-thought answer"
        )
    tail = solution_text.rsplit(FINAL_ANSWER_MARKER, 1)[1]
    return tail.strip().replace(",", "")


@dataclass(frozen=True)
class Sample:
    id: str
    question: str
    gold_answers: list[str]
    context: str | None = None
    normalized_aliases: list[str] = field(default_factory=list)
    solution_text: str | None = None
    final_answer: str | None = None
    buggy_solution: str | None = None
    context_group: str | None = None
    unanswerable: bool = False
    # Off-the-shelf MC extras (mc_offshelf / boolean_qa records only).
    options: list[str] | None = None
    correct_index: int | None = None


@dataclass(frozen=True)
class Benchmark:
    name: str
    schema_kind: str
    samples: list[Sample]
    fewshot_pool: list[Sample] = field(default_factory=list)


def gold_continuation(sample: Sample, schema_kind: str | None = None) -> str:
    """Text the model should assign probability to for this sample.

    Full chain-of-thought solution for math tasks, canonical gold answer
    otherwise; unanswerable reading-comprehension samples use the literal
    ``unanswerable`` token (mirroring the generative matcher).
    """
    if sample.solution_text is not None:
        return sample.solution_text
    if sample.gold_answers:
        return sample.gold_answers[0]
    if sample.unanswerable:
        return UNANSWERABLE_TOKEN
    raise ValueError(f"sample {sample.id!r} has no gold answer")


def _normalized_alias_list(texts: list[str]) -> list[str]:
    seen: list[str] = []
    for t in texts:
        n = normalize_answer(t)
        if n and n not in seen:
            seen.append(n)
    return seen


def _context_group_for(passage: str) -> str:
    return hashlib.sha1(passage.encode("utf-8")).hexdigest()[:12]


def _require(record: dict, key: str, line_number: int):
    if key not in record:
        raise BenchmarkFormatError(f"missing required key {key!r}", line_number)
    return record[key]


def _parse_record(record: dict, schema_kind: str, sample_id: str, line_number: int) -> Sample:
    if schema_kind == "code_task":
        question = str(_require(record, "prompt", line_number))
    else:
        question = str(_require(record, "question", line_number))

    if schema_kind == "math_cot":
        solution = str(_require(record, "solution", line_number))
        try:
            final = extract_final_answer(solution)
        except ValueError as exc:
            raise BenchmarkFormatError(str(exc), line_number) from exc
        return Sample(
            id=sample_id,
            question=question,
            gold_answers=[solution],
            normalized_aliases=_normalized_alias_list([final]),
            solution_text=solution,
            final_answer=final,
        )

    if schema_kind == "open_qa":
        answers = list(_require(record, "answers", line_number))
        if not answers:
            raise BenchmarkFormatError("empty 'answers' list", line_number)
        aliases = list(record.get("aliases", []))
        return Sample(
            id=sample_id,
            question=question,
            gold_answers=[str(a) for a in answers],
            normalized_aliases=_normalized_alias_list([str(a) for a in answers + aliases]),
        )

    if schema_kind == "reading_comprehension":
        context = str(_require(record, "context", line_number))
        group = str(_require(record, "context_group", line_number))
        answers = [str(a) for a in _require(record, "answers", line_number)]
        unanswerable = bool(_require(record, "unanswerable", line_number))
        if not answers and not unanswerable:
            raise BenchmarkFormatError("answerable sample with empty 'answers'", line_number)
        return Sample(
            id=sample_id,
            question=question,
            gold_answers=answers,
            context=context,
            context_group=group,
            normalized_aliases=_normalized_alias_list(answers),
            unanswerable=unanswerable,
        )

    if schema_kind == "code_task":
        canonical = str(_require(record, "canonical_solution", line_number))
        buggy = str(_require(record, "buggy_solution", line_number))
        return Sample(
            id=sample_id,
            question=question,
            gold_answers=[canonical],
            buggy_solution=buggy,
        )

    if schema_kind == "mc_offshelf":
        options = [str(o) for o in _require(record, "options", line_number)]
        correct_index = int(_require(record, "correct_index", line_number))
        if len(options) < 2:
            raise BenchmarkFormatError("mc_offshelf record needs at least 2 options", line_number)
        if not 0 <= correct_index < len(options):
            raise BenchmarkFormatError(
                f"correct_index {correct_index} out of range for {len(options)} options",
                line_number,
            )
        gold = options[correct_index]
        return Sample(
            id=sample_id,
            question=question,
            gold_answers=[gold],
            normalized_aliases=_normalized_alias_list([gold]),
            options=options,
            correct_index=correct_index,
        )

    if schema_kind == "boolean_qa":
        passage = str(_require(record, "passage", line_number))
        answer = _require(record, "answer", line_number)
        if not isinstance(answer, bool):
            raise BenchmarkFormatError("'answer' must be true or false", line_number)
        options = ["yes", "no"]
        correct_index = 0 if answer else 1
        gold = options[correct_index]
        return Sample(
            id=sample_id,
            question=question,
            gold_answers=[gold],
            context=passage,
            context_group=_context_group_for(passage),
            normalized_aliases=_normalized_alias_list([gold]),
            options=options,
            correct_index=correct_index,
        )

    raise BenchmarkFormatError(f"unknown schema kind {schema_kind!r}")


def _load_lines(path: Path, name: str, schema_kind: str, id_prefix: str = "") -> list[Sample]:
    samples: list[Sample] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BenchmarkFormatError(f"invalid JSON: {exc.msg}", line_number) from exc
            if not isinstance(record, dict):
                raise BenchmarkFormatError("record is not a JSON object", line_number)
            explicit_id = record.get("id")
            if explicit_id is not None:
                sample_id = str(explicit_id)
                if sample_id in seen_ids:
                    raise BenchmarkFormatError(f"duplicate id {sample_id!r}", line_number)
            else:
                sample_id = f"{name}:{id_prefix}{line_number}"
                if sample_id in seen_ids:
                    raise BenchmarkFormatError(
                        f"synthesized id {sample_id!r} collides with an explicit id", line_number
                    )
            seen_ids.add(sample_id)
            samples.append(_parse_record(record, schema_kind, sample_id, line_number))
    return samples


def load_benchmark(path: str | Path, schema_kind: str) -> Benchmark:
    """Load a line-delimited benchmark file; ids are synthesized from the
    file position (``<name>:<line>``) when a record carries none."""
    if schema_kind not in SCHEMA_KINDS:
        raise BenchmarkFormatError(
            f"unknown schema kind {schema_kind!r}; expected one of {', '.join(SCHEMA_KINDS)}"
        )
    path = Path(path)
    if not path.exists():
        raise BenchmarkFormatError(f"benchmark file not found: {path}")
    name = path.stem
    samples = _load_lines(path, name, schema_kind)
    if not samples:
        raise BenchmarkFormatError(f"benchmark file is empty: {path}")

    fewshot_pool: list[Sample] = []
    fewshot_path = path.with_suffix(".fewshot")
    if fewshot_path.exists():
        fewshot_pool = _load_lines(fewshot_path, name, schema_kind, id_prefix="fewshot:")
        pool_ids = {s.id for s in fewshot_pool}
        overlap = pool_ids & {s.id for s in samples}
        if overlap:
            raise BenchmarkFormatError(
                f"fewshot pool shares ids with the benchmark: {sorted(overlap)}"
            )
    return Benchmark(name=name, schema_kind=schema_kind, samples=samples, fewshot_pool=fewshot_pool)


def _record_for(sample: Sample, schema_kind: str) -> dict:
    rec: dict = {"id": sample.id}
    if schema_kind == "math_cot":
        rec.update(question=sample.question, solution=sample.solution_text)
    elif schema_kind == "open_qa":
        rec.update(
            question=sample.question,
            answers=sample.gold_answers,
            aliases=sample.normalized_aliases,
        )
    elif schema_kind == "reading_comprehension":
        rec.update(
            question=sample.question,
            context=sample.context,
            context_group=sample.context_group,
            answers=sample.gold_answers,
            unanswerable=sample.unanswerable,
        )
    elif schema_kind == "code_task":
        rec.update(
            prompt=sample.question,
            canonical_solution=sample.gold_answers[0],
            buggy_solution=sample.buggy_solution,
        )
    elif schema_kind == "mc_offshelf":
        rec.update(
            question=sample.question,
            options=sample.options,
            correct_index=sample.correct_index,
        )
    elif schema_kind == "boolean_qa":
        rec.update(question=sample.question, passage=sample.context, answer=sample.correct_index == 0)
    else:
        raise BenchmarkFormatError(f"unknown schema kind {schema_kind!r}")
    return rec


def save_benchmark(benchmark: Benchmark, path: str | Path) -> None:
    """Serialize back to the line-delimited format (round-trip stable)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as handle:
        for sample in benchmark.samples:
            handle.write(json.dumps(_record_for(sample, benchmark.schema_kind), ensure_ascii=False))
            handle.write("\n")
    if benchmark.fewshot_pool:
        with open(path.with_suffix(".fewshot"), "w", encoding="utf-8") as handle:
            for sample in benchmark.fewshot_pool:
                handle.write(
                    json.dumps(_record_for(sample, benchmark.schema_kind), ensure_ascii=False)
                )
                handle.write("\n")


def save_fewshot_pool(samples: list[Sample], schema_kind: str, path: str | Path) -> None:
    """Write a standalone few-shot pool file in the benchmark line format."""
    with open(path, "w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps(_record_for(sample, schema_kind), ensure_ascii=False))
            handle.write("\n")


def load_benchmark_lines(path: str | Path, schema_kind: str) -> list[Sample]:
    """Parse one line-delimited file into samples without the benchmark
    wrapper (used for standalone few-shot pool files)."""
    path = Path(path)
    return _load_lines(path, path.stem, schema_kind)

