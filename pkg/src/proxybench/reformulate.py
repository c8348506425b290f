"""Build multiple-choice and answer-only variants of generative benchmarks.

Distractor sources: answers of other samples drawn at random (optionally
restricted to the same source context), LLM-generated plausible
alternatives, dataset-provided buggy code solutions (two-option debug
pairs), and the uncapped same-context expansion for reading
comprehension. Every generated option set is seeded per sample so a
(benchmark, k, seed) triple regenerates byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from proxybench.corpus import (
    Benchmark,
    Sample,
    extract_final_answer,
    gold_continuation,
    normalize_answer,
)

logger = logging.getLogger(__name__)

MC_VARIANT_TAGS = ("mc", "mc_rnd", "mc_ao", "mc_rnd_star", "debug_pair", "offshelf")

PROVENANCES = ("random", "random_same_context", "smart_llm", "debug_pair", "offshelf")


class ReformulationError(ValueError):
    pass


class DistractorPoolError(ReformulationError):
    """Candidate distractor pool too small for the requested k."""


@dataclass(frozen=True)
class McSample:
    id: str
    question: str
    options: list[str]
    correct_index: int
    provenance: str
    option_seed: int

    def __post_init__(self):
        if len(self.options) < 2:
            raise ReformulationError(f"sample {self.id!r}: needs at least 2 options")
        if not 0 <= self.correct_index < len(self.options):
            raise ReformulationError(f"sample {self.id!r}: correct_index out of range")
        normals = [normalize_answer(o) for o in self.options]
        if len(set(normals)) != len(normals):
            raise ReformulationError(
                f"sample {self.id!r}: options not pairwise distinct after normalization"
            )


@dataclass(frozen=True)
class GenerationManifest:
    source_name: str
    source_schema: str
    variant_tag: str
    seed: int = 0
    k: int | None = None
    generator_model_id: str | None = None
    drop_count: int = 0
    fallback_count: int = 0


@dataclass(frozen=True)
class McBenchmark:
    name: str
    variant_tag: str
    samples: list[McSample]
    generation_manifest: GenerationManifest


def sample_option_seed(seed: int, sample_id: str) -> int:
    """Per-sample RNG seed derived from the benchmark seed and sample id."""
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _shuffled_options(correct: str, distractors: list[str], rng: random.Random) -> tuple[list[str], int]:
    options = [correct] + list(distractors)
    order = list(range(len(options)))
    rng.shuffle(order)
    return [options[i] for i in order], order.index(0)


def _continuations(benchmark: Benchmark) -> list[tuple[Sample, str, str]]:
    out = []
    for sample in benchmark.samples:
        text = gold_continuation(sample, benchmark.schema_kind)
        out.append((sample, text, normalize_answer(text)))
    return out


def _candidate_pool(
    entries: list[tuple[Sample, str, str]],
    target: Sample,
    own_norm: str,
    context_group: str | None,
) -> list[str]:
    """Other samples' gold continuations, deduplicated by normalized form and
    distinct from the target's own answer. Benchmark order, first occurrence wins."""
    pool: list[str] = []
    seen: set[str] = {own_norm, ""}
    for sample, text, norm in entries:
        if sample.id == target.id or norm in seen:
            continue
        if context_group is not None and sample.context_group != context_group:
            continue
        seen.add(norm)
        pool.append(text)
    return pool


def random_distractors(
    benchmark: Benchmark,
    k: int,
    seed: int,
    same_context_only: bool = False,
) -> McBenchmark:
    """k distractors per sample drawn without replacement from the answers of
    other samples, each sample on its own (seed, id)-derived RNG stream."""
    if k < 1:
        raise ReformulationError("k must be >= 1")
    if same_context_only:
        missing = [s.id for s in benchmark.samples if s.context_group is None]
        if missing:
            raise ReformulationError(
                f"same_context_only requires context_group on every sample; missing: {missing[:5]}"
            )
    entries = _continuations(benchmark)
    provenance = "random_same_context" if same_context_only else "random"
    mc_samples: list[McSample] = []
    for sample, correct, own_norm in entries:
        group = sample.context_group if same_context_only else None
        pool = _candidate_pool(entries, sample, own_norm, group)
        if len(pool) < k:
            raise DistractorPoolError(
                f"sample {sample.id!r}: candidate pool has {len(pool)} answers, need {k}"
            )
        option_seed = sample_option_seed(seed, sample.id)
        rng = random.Random(option_seed)
        distractors = rng.sample(pool, k)
        options, correct_index = _shuffled_options(correct, distractors, rng)
        mc_samples.append(
            McSample(
                id=sample.id,
                question=sample.question,
                options=options,
                correct_index=correct_index,
                provenance=provenance,
                option_seed=option_seed,
            )
        )
    manifest = GenerationManifest(
        source_name=benchmark.name,
        source_schema=benchmark.schema_kind,
        variant_tag="mc_rnd",
        seed=seed,
        k=k,
    )
    return McBenchmark(
        name=f"{benchmark.name}_mc_rnd",
        variant_tag="mc_rnd",
        samples=mc_samples,
        generation_manifest=manifest,
    )


def expand_negatives(benchmark: Benchmark, seed: int) -> McBenchmark:
    """Uncapped same-context variant: every normalized-distinct answer from the
    sample's context group becomes a distractor; empty-pool samples are dropped."""
    if benchmark.schema_kind != "reading_comprehension":
        raise ReformulationError("expanded negatives require a reading_comprehension benchmark")
    missing = [s.id for s in benchmark.samples if s.context_group is None]
    if missing:
        raise ReformulationError(f"context_group missing on samples: {missing[:5]}")
    entries = _continuations(benchmark)
    mc_samples: list[McSample] = []
    dropped = 0
    for sample, correct, own_norm in entries:
        pool = _candidate_pool(entries, sample, own_norm, sample.context_group)
        if not pool:
            dropped += 1
            logger.warning("dropping sample %s: no same-context distractors available", sample.id)
            continue
        option_seed = sample_option_seed(seed, sample.id)
        rng = random.Random(option_seed)
        options, correct_index = _shuffled_options(correct, pool, rng)
        mc_samples.append(
            McSample(
                id=sample.id,
                question=sample.question,
                options=options,
                correct_index=correct_index,
                provenance="random_same_context",
                option_seed=option_seed,
            )
        )
    manifest = GenerationManifest(
        source_name=benchmark.name,
        source_schema=benchmark.schema_kind,
        variant_tag="mc_rnd_star",
        seed=seed,
        drop_count=dropped,
    )
    return McBenchmark(
        name=f"{benchmark.name}_mc_rnd_star",
        variant_tag="mc_rnd_star",
        samples=mc_samples,
        generation_manifest=manifest,
    )


def debug_pair_variant(benchmark: Benchmark, seed: int = 0) -> McBenchmark:
    """Two-option variant pairing each canonical code solution with the
    dataset-provided buggy one."""
    if benchmark.schema_kind != "code_task":
        raise ReformulationError("debug pairs require a code_task benchmark")
    mc_samples: list[McSample] = []
    for sample in benchmark.samples:
        if sample.buggy_solution is None:
            raise ReformulationError(f"sample {sample.id!r}: missing buggy_solution")
        canonical = sample.gold_answers[0]
        if normalize_answer(canonical) == normalize_answer(sample.buggy_solution):
            raise ReformulationError(
                f"sample {sample.id!r}: buggy solution normalizes equal to the canonical one"
            )
        option_seed = sample_option_seed(seed, sample.id)
        rng = random.Random(option_seed)
        options, correct_index = _shuffled_options(canonical, [sample.buggy_solution], rng)
        mc_samples.append(
            McSample(
                id=sample.id,
                question=sample.question,
                options=options,
                correct_index=correct_index,
                provenance="debug_pair",
                option_seed=option_seed,
            )
        )
    manifest = GenerationManifest(
        source_name=benchmark.name,
        source_schema=benchmark.schema_kind,
        variant_tag="debug_pair",
        seed=seed,
        k=1,
    )
    return McBenchmark(
        name=f"{benchmark.name}_debug_pair",
        variant_tag="debug_pair",
        samples=mc_samples,
        generation_manifest=manifest,
    )


def offshelf_variant(benchmark: Benchmark) -> McBenchmark:
    """Materialize an off-the-shelf MC benchmark (fixed options shipped with
    the data) in the common MC representation; option order is preserved."""
    if benchmark.schema_kind not in ("mc_offshelf", "boolean_qa"):
        raise ReformulationError("off-the-shelf variant requires mc_offshelf or boolean_qa data")
    mc_samples = []
    for sample in benchmark.samples:
        if sample.options is None or sample.correct_index is None:
            raise ReformulationError(f"sample {sample.id!r}: record carries no options")
        mc_samples.append(
            McSample(
                id=sample.id,
                question=sample.question,
                options=list(sample.options),
                correct_index=sample.correct_index,
                provenance="offshelf",
                option_seed=0,
            )
        )
    manifest = GenerationManifest(
        source_name=benchmark.name,
        source_schema=benchmark.schema_kind,
        variant_tag="offshelf",
    )
    return McBenchmark(
        name=benchmark.name,
        variant_tag="offshelf",
        samples=mc_samples,
        generation_manifest=manifest,
    )


def answer_only_variant(source: McBenchmark | Benchmark):
    """Strip chain-of-thought from option/continuation texts, keeping only the
    final answer after the ``####`` marker (texts without the marker pass
    through unchanged, as in already answer-only MC data)."""
    if isinstance(source, McBenchmark):
        mc_samples = []
        for ms in source.samples:
            truncated = [
                extract_final_answer(o) if "####" in o else o for o in ms.options
            ]
            normals = [normalize_answer(t) for t in truncated]
            if len(set(normals)) != len(normals):
                raise ReformulationError(
                    f"sample {ms.id!r}: options collapse to equal final answers"
                )
            mc_samples.append(replace(ms, options=truncated))
        manifest = replace(source.generation_manifest, variant_tag="mc_ao")
        return McBenchmark(
            name=f"{source.name}_ao",
            variant_tag="mc_ao",
            samples=mc_samples,
            generation_manifest=manifest,
        )

    samples = []
    for sample in source.samples:
        if sample.final_answer is None:
            raise ReformulationError(f"sample {sample.id!r}: no final answer to truncate to")
        samples.append(
            replace(
                sample,
                gold_answers=[sample.final_answer],
                solution_text=None,
                normalized_aliases=[normalize_answer(sample.final_answer)],
            )
        )
    return Benchmark(
        name=f"{source.name}_ao",
        schema_kind=source.schema_kind,
        samples=samples,
        fewshot_pool=source.fewshot_pool,
    )


# Few-shot exemplar blocks for the distractor-generation prompt, one per
# supported schema. Each entry is (question, answers) with the correct
# answer first, serialized as JSON lines ahead of the instruction.
DEFAULT_EXEMPLARS: dict[str, list[tuple[str, list[str]]]] = {
    "open_qa": [
        (
            "Which American-born Sinclair won the Nobel Prize for Literature in 1930?",
            ["Sinclair Lewis", "Upton Sinclair", "Sinclair Ferguson", "Sinclair Smith"],
        ),
        (
            "Where in England was Dame Judi Dench born?",
            ["York", "London", "Manchester", "Oxford"],
        ),
        (
            "When did the founder of Jehovah's Witnesses say the world would end?",
            ["1914", "2012", "1844", "1975"],
        ),
        (
            "1998 was the Chinese year of which creature?",
            ["tiger", "rabbit", "dragon", "giraffe"],
        ),
        (
            "The first credit cards were for use in what type of establishments?",
            ["restaurants", "cinemas", "gas stations", "hotels"],
        ),
    ],
    "math_cot": [
        (
            "Natalia sold clips to 48 of her friends in April, and then she sold half as many "
            "clips in May. How many clips did Natalia sell altogether in April and May?",
            [
                "Natalia sold 48/2 = <<48/2=24>>24 clips in May. Natalia sold 48+24 = "
                "<<48+24=72>>72 clips altogether in April and May. #### 72",
                "Natalia sold 48/2 = <<48/2=24>>24 clips in May. Natalia sold 48 + 20 = "
                "<<48+20=68>>68 clips altogether in April and May. #### 68",
                "Natalia sold 48/2 = <<48/2=24>>24 clips in May. Natalia sold 48 + 22 = "
                "<<48+22=70>>70 clips altogether in April and May. #### 70",
                "Natalia sold 48 x 2 = <<48*2=96>>96 clips in May. Natalia sold 48 + 96 = "
                "<<48+96=144>>144 clips altogether in April and May. #### 144",
            ],
        ),
        (
            "Weng earns $12 an hour for babysitting. Yesterday, she just did 50 minutes of "
            "babysitting. How much did she earn?",
            [
                "Weng earns 12/60 = <<12/60=0.2>>0.2 per minute. Working 50 minutes, she earned "
                "0.2 x 50 = <<0.2*50=10>>10. #### 10",
                "Weng earns 12/60 = <<12/60=0.2>>0.2 per minute. Working 50 minutes, she earned "
                "0.2 x 60 = <<0.2*60=12>>12. #### 12",
                "Weng earns 12/60 = <<12/60=0.2>>0.2 per minute. Working 50 minutes, she earned "
                "0.2 x 40 = <<0.2*40=8>>8. #### 8",
                "Weng earns 12/60 = <<12/60=0.2>>0.2 per minute. Working 50 minutes, she earned "
                "0.2 x 45 = <<0.2*45=9>>9. #### 9",
            ],
        ),
        (
            "Betty is saving money for a new wallet which costs $100. Betty has only half of the "
            "money she needs. Her parents decided to give her $15 for that purpose, and her "
            "grandparents twice as much as her parents. How much more money does Betty need to "
            "buy the wallet?",
            [
                "In the beginning, Betty has only 100 / 2 = $<<100/2=50>>50. Betty's grandparents "
                "gave her 15 * 2 = $<<15*2=30>>30. This means, Betty needs 100 - 50 - 30 - 15 = "
                "$<<100-50-30-15=5>>5 more. #### 5",
                "In the beginning, Betty has only 100 / 2 = $<<100/2=50>>50. Betty's grandparents "
                "gave her 15 * 2 = $<<15*2=30>>30. This means, Betty needs 100 - 50 - 30 = "
                "$<<100-50-30=20>>20 more. #### 20",
                "In the beginning, Betty has only 100 / 2 = $<<100/2=50>>50. Betty's grandparents "
                "gave her 15 * 2 = $<<15*2=30>>30. This means, Betty needs 100 - 50 - 15 = "
                "$<<100-50-15=35>>35 more. #### 35",
                "In the beginning, Betty has only 100 / 2 = $<<100/2=50>>50. Betty's grandparents "
                "gave her 15 * 2 = $<<15*2=30>>30. This means, Betty needs 100 - 30 - 15 = "
                "$<<100-30-15=55>>55 more. #### 55",
            ],
        ),
        (
            "James writes a 3-page letter to 2 different friends twice a week. How many pages "
            "does he write a year?",
            [
                "He writes each friend 3*2= <<3*2=6>>6 pages a week. So he writes 6*2= "
                "<<6*2=12>>12 pages every week. That means he writes 12*52= <<12*52=624>>624 "
                "pages a year. #### 624",
                "He writes each friend 3*2 = <<3*2=6>>6 pages a week. So he writes 6*2 = "
                "<<6*2=12>>12 pages every week. That means he writes 12*50 = <<12*50=600>>600 "
                "pages a year. #### 600",
                "He writes each friend 3*2 = <<3*2=6>>6 pages a week. So he writes 6*1 = "
                "<<6*1=6>>6 pages every week. That means he writes 6*52 = <<6*52=312>>312 "
                "pages a year. #### 312",
                "He writes each friend 3*2 = <<3*2=6>>6 pages a week. So he writes 6*2 = "
                "<<6*2=12>>12 pages every week. That means he writes 12*12 = <<12*12=144>>144 "
                "pages a year. #### 144",
            ],
        ),
    ],
}


def distractor_prompt(
    question: str,
    correct_answer: str,
    k: int,
    exemplars: list[tuple[str, list[str]]],
) -> str:
    lines = [
        json.dumps({"question": q, "answers": answers}, ensure_ascii=False)
        for q, answers in exemplars
    ]
    instruction = (
        f"Please use the given question {question} and create {k + 1} answers, "
        f"the first one being {correct_answer}, the correct answer, and the other "
        f"{k} being incorrect answers. Use JSONL to respond."
    )
    return "\n".join(lines) + "\n\n" + instruction + "\n"


def _parse_distractor_response(text: str, correct: str, k: int) -> list[str] | None:
    """First well-formed JSONL record wins; None when every line is malformed,
    the answer count is wrong, or a distractor normalizes equal to the
    correct answer (or to another distractor)."""
    correct_norm = normalize_answer(correct)
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            continue
        if not isinstance(record, dict):
            continue
        answers = record.get("answers")
        if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
            continue
        if len(answers) != k + 1:
            return None
        distractors = answers[1:]
        normals = [normalize_answer(d) for d in distractors]
        if any(n == correct_norm or n == "" for n in normals):
            return None
        if len(set(normals)) != len(normals):
            return None
        return distractors
    return None


def smart_distractors(
    benchmark: Benchmark,
    client,
    k: int,
    max_retries: int = 2,
    seed: int = 0,
    exemplars: list[tuple[str, list[str]]] | None = None,
    max_generation_tokens: int = 1024,
) -> McBenchmark:
    """LLM-generated plausible distractors via a few-shot JSONL prompt, falling
    back to random distractors for samples whose responses stay malformed."""
    if k < 1:
        raise ReformulationError("k must be >= 1")
    if exemplars is None:
        exemplars = DEFAULT_EXEMPLARS.get(benchmark.schema_kind)
        if exemplars is None:
            raise ReformulationError(
                f"no default few-shot exemplars for schema {benchmark.schema_kind!r}; pass exemplars="
            )

    entries = _continuations(benchmark)
    entry_by_id = {s.id: (s, text, norm) for s, text, norm in entries}

    def generate_for(sample_id: str) -> list[str] | None:
        sample, correct, _ = entry_by_id[sample_id]
        prompt = distractor_prompt(sample.question, correct, k, exemplars)
        for _attempt in range(max_retries + 1):
            result = client.generate(prompt, max_tokens=max_generation_tokens, stop_sequences=[])
            distractors = _parse_distractor_response(result.text, correct, k)
            if distractors is not None:
                return distractors
        return None

    ids = [s.id for s in benchmark.samples]
    max_workers = max(1, getattr(client, "max_parallel", 1))
    if max_workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            generated = dict(zip(ids, pool.map(generate_for, ids)))
    else:
        generated = {sample_id: generate_for(sample_id) for sample_id in ids}

    fallback_count = 0
    mc_samples: list[McSample] = []
    for sample, correct, own_norm in entries:
        distractors = generated[sample.id]
        option_seed = sample_option_seed(seed, sample.id)
        rng = random.Random(option_seed)
        if distractors is None:
            pool_texts = _candidate_pool(entries, sample, own_norm, None)
            if len(pool_texts) < k:
                raise DistractorPoolError(
                    f"sample {sample.id!r}: generator output malformed and random fallback "
                    f"pool has only {len(pool_texts)} answers"
                )
            distractors = rng.sample(pool_texts, k)
            provenance = "random"
            fallback_count += 1
            logger.warning(
                "sample %s: distractor generation malformed after %d retries, fell back to random",
                sample.id,
                max_retries,
            )
        else:
            provenance = "smart_llm"
        options, correct_index = _shuffled_options(correct, distractors, rng)
        mc_samples.append(
            McSample(
                id=sample.id,
                question=sample.question,
                options=options,
                correct_index=correct_index,
                provenance=provenance,
                option_seed=option_seed,
            )
        )
    manifest = GenerationManifest(
        source_name=benchmark.name,
        source_schema=benchmark.schema_kind,
        variant_tag="mc",
        seed=seed,
        k=k,
        generator_model_id=getattr(getattr(client, "config", None), "model_name", None),
        fallback_count=fallback_count,
    )
    return McBenchmark(
        name=f"{benchmark.name}_mc",
        variant_tag="mc",
        samples=mc_samples,
        generation_manifest=manifest,
    )


def manifest_path_for(path: str | Path) -> Path:
    return Path(path).with_suffix(".manifest.json")


def write_mc_benchmark(mcb: McBenchmark, path: str | Path) -> None:
    """One JSON record per sample plus a sibling ``.manifest.json`` echoing the
    generation parameters. Output is byte-stable for fixed inputs."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as handle:
        for ms in mcb.samples:
            handle.write(
                json.dumps(
                    {
                        "id": ms.id,
                        "question": ms.question,
                        "options": ms.options,
                        "correct_index": ms.correct_index,
                        "provenance": ms.provenance,
                    },
                    ensure_ascii=False,
                )
            )
            handle.write("\n")
    manifest = mcb.generation_manifest
    with open(manifest_path_for(path), "w", encoding="utf-8") as handle:
        json.dump(
            {
                "name": mcb.name,
                "variant_tag": mcb.variant_tag,
                "source_name": manifest.source_name,
                "source_schema": manifest.source_schema,
                "seed": manifest.seed,
                "k": manifest.k,
                "generator_model_id": manifest.generator_model_id,
                "drop_count": manifest.drop_count,
                "fallback_count": manifest.fallback_count,
            },
            handle,
            indent=2,
        )
        handle.write("\n")


def load_mc_benchmark(path: str | Path) -> McBenchmark:
    path = Path(path)
    mpath = manifest_path_for(path)
    if not mpath.exists():
        raise ReformulationError(f"missing manifest file: {mpath}")
    with open(mpath, encoding="utf-8") as handle:
        raw = json.load(handle)
    manifest = GenerationManifest(
        source_name=raw["source_name"],
        source_schema=raw["source_schema"],
        variant_tag=raw["variant_tag"],
        seed=raw.get("seed", 0),
        k=raw.get("k"),
        generator_model_id=raw.get("generator_model_id"),
        drop_count=raw.get("drop_count", 0),
        fallback_count=raw.get("fallback_count", 0),
    )
    samples: list[McSample] = []
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReformulationError(f"line {line_number}: invalid JSON: {exc.msg}") from exc
            samples.append(
                McSample(
                    id=rec["id"],
                    question=rec["question"],
                    options=list(rec["options"]),
                    correct_index=int(rec["correct_index"]),
                    provenance=rec["provenance"],
                    option_seed=sample_option_seed(manifest.seed, rec["id"]),
                )
            )
    if not samples:
        raise ReformulationError(f"MC benchmark file is empty: {path}")
    return McBenchmark(
        name=raw["name"],
        variant_tag=manifest.variant_tag,
        samples=samples,
        generation_manifest=manifest,
    )
