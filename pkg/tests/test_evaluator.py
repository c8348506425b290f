import json
import math
from pathlib import Path

import pytest

from proxybench.corpus import Benchmark, Sample
from proxybench.evaluator import (
    EvaluationError,
    PromptFormat,
    build_prompt,
    count_forward_passes,
    default_format,
    eval_ll,
    eval_mc,
    eval_nlg,
    length_normalize,
    match_nlg,
    select_option,
)
from proxybench.reformulate import GenerationManifest, McBenchmark, McSample

from factories import math_benchmark, open_qa_benchmark
from stub_endpoint import StubModel, make_client

GOLDEN_DIR = Path(__file__).parent / "golden"


def mc_benchmark_from(samples: list[McSample], tag="mc_rnd") -> McBenchmark:
    return McBenchmark(
        name="synthetic",
        variant_tag=tag,
        samples=samples,
        generation_manifest=GenerationManifest("synthetic", "open_qa", tag),
    )


def mc_sample(sample_id: str, options: list[str], correct_index: int = 0) -> McSample:
    return McSample(
        id=sample_id,
        question=f"Question for {sample_id}?",
        options=options,
        correct_index=correct_index,
        provenance="random",
        option_seed=0,
    )


class TestBuildPrompt:
    def test_zero_shot_matches_golden(self):
        sample = Sample(
            id="t:1",
            question="Which was the first European country to abolish capital punishment?",
            gold_answers=["Norway"],
        )
        prompt = build_prompt(sample, PromptFormat())
        expected = json.loads((GOLDEN_DIR / "zero_shot_open_qa.json").read_text())
        assert prompt == expected

    def test_two_shot_math_matches_golden(self):
        bench = math_benchmark(4)
        fmt = PromptFormat(fewshot_count=2)
        prompt = build_prompt(bench.samples[2], fmt, fewshot_pool=bench.samples[:2])
        expected = json.loads((GOLDEN_DIR / "two_shot_math.json").read_text())
        assert prompt == expected

    def test_five_shot_has_five_exemplars(self):
        bench = math_benchmark(6)
        fmt = default_format("math_cot")
        prompt = build_prompt(bench.samples[5], fmt, fewshot_pool=bench.samples[:5])
        assert prompt.count("Question: ") == 6
        assert prompt.count("####") == 5  # gold continuations only in exemplars

    def test_no_answer_labels(self):
        sample = Sample(id="s", question="pick one", gold_answers=["x"])
        prompt = build_prompt(sample, PromptFormat())
        for label in ("A.", "B.", "C.", "D."):
            assert label not in prompt

    def test_deterministic(self):
        bench = open_qa_benchmark(3)
        fmt = PromptFormat(fewshot_count=2)
        first = build_prompt(bench.samples[2], fmt, bench.samples[:2])
        second = build_prompt(bench.samples[2], fmt, bench.samples[:2])
        assert first == second

    def test_fewshot_exceeds_pool(self):
        sample = Sample(id="s", question="q", gold_answers=["x"])
        with pytest.raises(ValueError, match="exceeds pool"):
            build_prompt(sample, PromptFormat(fewshot_count=1), fewshot_pool=[])


class TestLengthNormalize:
    def test_per_token(self):
        assert length_normalize(-2.0, 4, 99, "per_token") == pytest.approx(-0.5)

    def test_per_char(self):
        assert length_normalize(-2.0, 99, 10, "per_char") == pytest.approx(-0.2)

    def test_none_is_identity(self):
        assert length_normalize(-3.7, 5, 12, "none") == -3.7

    def test_zero_count_errors(self):
        with pytest.raises(ValueError):
            length_normalize(-1.0, 0, 5, "per_token")


class TestSelectOption:
    def test_highest_probability_wins(self):
        assert select_option([math.log(0.9), math.log(0.1)]) == 0

    def test_tie_breaks_to_lowest_index(self):
        assert select_option([-1.0, -1.0, -3.0]) == 0

    def test_shift_invariance(self):
        scores = [-2.0, -1.5, -3.0]
        base = select_option(scores)
        for shift in (-10.0, 0.5, 123.0):
            assert select_option([s + shift for s in scores]) == base

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            select_option([0.0, float("nan")])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            select_option([])


class TestMatchNlg:
    def test_numeric_final_with_marker(self):
        sample = Sample(id="s", question="q", gold_answers=["sol"], final_answer="72")
        assert match_nlg("numeric_final", "the answer is #### 72", sample)

    def test_numeric_final_last_number(self):
        sample = Sample(id="s", question="q", gold_answers=["sol"], final_answer="72")
        assert match_nlg("numeric_final", "24 then 48 then 72", sample)
        assert not match_nlg("numeric_final", "24 then 48 then 73", sample)

    def test_numeric_final_comma_grouping(self):
        sample = Sample(id="s", question="q", gold_answers=["sol"], final_answer="1234")
        assert match_nlg("numeric_final", "total is 1,234", sample)

    def test_alias_exact_strips_articles(self):
        sample = Sample(
            id="s", question="q", gold_answers=["Norway"], normalized_aliases=["norway", "norge"]
        )
        assert match_nlg("alias_exact", "The Norway", sample)
        assert match_nlg("alias_exact", "norway\nextra line ignored", sample)
        assert not match_nlg("alias_exact", "Sweden", sample)

    def test_squad_em(self):
        sample = Sample(
            id="s", question="q", gold_answers=["our history"], normalized_aliases=["our history"]
        )
        assert match_nlg("squad_em", "our history", sample)
        assert not match_nlg("squad_em", "recorded history", sample)

    def test_squad_unanswerable_token(self):
        sample = Sample(id="s", question="q", gold_answers=[], unanswerable=True)
        assert match_nlg("squad_em", "unanswerable", sample)
        assert not match_nlg("squad_em", "no idea", sample)


class TestForwardPassCounts:
    def test_table_scenarios(self):
        assert count_forward_passes("ll") == 1
        assert count_forward_passes("mc", k=2) == 2
        assert count_forward_passes("nlg", generated_tokens=5) == 5


class TestEvalMc:
    def test_two_option_scenario(self):
        bench = mc_benchmark_from(
            [mc_sample("q:1", ["Downward force on objects.", "What makes the sun rise."])]
        )
        model = StubModel(
            logprob_table={
                "Downward": math.log(0.9) / 4,
                "force": math.log(0.9) / 4,
                "on": math.log(0.9) / 4,
                "objects.": math.log(0.9) / 4,
                "What": math.log(0.1) / 5,
                "makes": math.log(0.1) / 5,
                "the": math.log(0.1) / 5,
                "sun": math.log(0.1) / 5,
                "rise.": math.log(0.1) / 5,
            }
        )
        with make_client(model) as client:
            result, records = eval_mc(bench, client, PromptFormat())
        assert records[0].correct is True
        assert records[0].forward_passes == 2
        assert result.value == 1.0
        assert result.total_forward_passes == 2

    def test_forward_pass_accounting_k4_n10(self):
        samples = [
            mc_sample(f"q:{i}", [f"opt {i} a", f"opt {i} b", f"opt {i} c", f"opt {i} d"])
            for i in range(10)
        ]
        bench = mc_benchmark_from(samples)
        with make_client(StubModel()) as client:
            result, _ = eval_mc(bench, client, PromptFormat())
        assert result.total_forward_passes == 40
        assert result.n_samples == 10

    def test_correct_stub_gives_perfect_accuracy(self):
        samples = [
            mc_sample(f"q:{i}", [f"right{i}", f"wrong{i}a", f"wrong{i}b"], correct_index=0)
            for i in range(6)
        ]
        bench = mc_benchmark_from(samples)
        table = {f"right{i}": -0.01 for i in range(6)}
        model = StubModel(logprob_table=table, default_logprob=-1.0)
        with make_client(model) as client:
            result, records = eval_mc(bench, client, PromptFormat(), norm_mode="per_token")
        assert result.value == 1.0
        assert all(r.correct for r in records)

    def test_normalization_flips_winner(self):
        # correct option: 4 tokens at -0.1 (total -0.4); wrong: 1 token at -0.3.
        # raw sum prefers the wrong option, per-token normalization recovers
        # the longer correct one.
        bench = mc_benchmark_from(
            [mc_sample("q:1", ["alpha beta gamma delta", "omega"], correct_index=0)]
        )
        model = StubModel(
            logprob_table={
                "alpha": -0.1,
                "beta": -0.1,
                "gamma": -0.1,
                "delta": -0.1,
                "omega": -0.3,
            }
        )
        with make_client(model) as client:
            raw_result, raw_records = eval_mc(bench, client, PromptFormat(), norm_mode="none")
            norm_result, norm_records = eval_mc(
                bench, client, PromptFormat(), norm_mode="per_token"
            )
        assert raw_records[0].chosen_index == 1
        assert raw_result.value == 0.0
        assert norm_records[0].chosen_index == 0
        assert norm_result.value == 1.0

    def test_failed_samples_excluded_with_count(self):
        samples = [mc_sample(f"q:{i}", [f"u{i} v", f"w{i} x"]) for i in range(20)]
        samples.append(mc_sample("q:bad", ["FAILME yes", "other option"]))
        bench = mc_benchmark_from(samples)
        model = StubModel(fail_if_prompt_contains="FAILME")
        with make_client(model, retry_limit=0) as client:
            result, records = eval_mc(bench, client, PromptFormat())
        assert result.n_failed == 1
        assert result.n_samples == 20
        assert all(r.sample_id != "q:bad" for r in records)

    def test_failure_circuit_breaker(self):
        samples = [mc_sample(f"q:{i}", [f"FAILME {i}", f"ok {i}"]) for i in range(5)]
        bench = mc_benchmark_from(samples)
        model = StubModel(fail_if_prompt_contains="FAILME")
        with make_client(model, retry_limit=0) as client:
            with pytest.raises(EvaluationError):
                eval_mc(bench, client, PromptFormat())

    def test_parallel_equals_serial(self):
        samples = [mc_sample(f"q:{i}", [f"aa{i} bb", f"cc{i} dd", f"ee{i} ff"]) for i in range(8)]
        bench = mc_benchmark_from(samples)
        model = StubModel()
        with make_client(model, max_parallel=1) as client:
            serial, serial_records = eval_mc(bench, client, PromptFormat())
        with make_client(model, max_parallel=4) as client:
            parallel, parallel_records = eval_mc(bench, client, PromptFormat())
        assert serial.value == parallel.value
        assert [r.sample_id for r in serial_records] == [r.sample_id for r in parallel_records]


class TestEvalLl:
    def test_summed_loglikelihood(self):
        bench = open_qa_benchmark(2)
        model = StubModel(logprob_table={"answer": -0.25, "1": -0.75, "2": -1.75})
        # continuations " answer 1" and " answer 2" -> -1.0 and -2.0
        with make_client(model) as client:
            result, records = eval_ll(bench, client, PromptFormat())
        assert result.value == pytest.approx(-3.0)
        assert result.value_per_sample == pytest.approx(-1.5)
        assert result.metric_name == "summed_loglikelihood"
        assert result.total_forward_passes == 2

    def test_single_sample_probability(self):
        bench = Benchmark(
            name="one",
            schema_kind="open_qa",
            samples=[Sample(id="one:1", question="capital?", gold_answers=["Paris"])],
        )
        model = StubModel(logprob_table={"Paris": math.log(0.9)})
        with make_client(model) as client:
            result, _ = eval_ll(bench, client, PromptFormat())
        assert result.value == pytest.approx(math.log(0.9), abs=1e-12)
        assert result.total_forward_passes == 1

    def test_n_forward_passes_equals_n(self):
        bench = open_qa_benchmark(7)
        with make_client(StubModel()) as client:
            result, _ = eval_ll(bench, client, PromptFormat())
        assert result.total_forward_passes == 7

    def test_answer_only_target(self):
        bench = math_benchmark(3)
        model = StubModel()
        with make_client(model) as client:
            result, records = eval_ll(bench, client, PromptFormat(), target="final_answer_only")
        assert result.variant_tag == "ll_ao"
        # final answers are single tokens, so exactly one scored token each
        assert all(r.option_scores[0][1] == 1 for r in records)

    def test_answer_only_requires_final_answer(self):
        bench = open_qa_benchmark(2)
        with make_client(StubModel()) as client:
            with pytest.raises(ValueError, match="final_answer"):
                eval_ll(bench, client, PromptFormat(), target="final_answer_only")


class TestEvalNlg:
    def test_math_generation_matches(self):
        bench = math_benchmark(2)

        def gen(prompt: str) -> str:
            # answer the first question correctly, the second wrongly
            if "four times 1?" in prompt:
                return "Work it out. #### 4"
            return "Work it out. #### 999"

        model = StubModel(gen_fn=gen)
        fmt = PromptFormat(max_generation_tokens=64)
        with make_client(model) as client:
            result, records = eval_nlg(bench, client, fmt, matcher="numeric_final")
        assert result.value == 0.5
        assert records[0].correct and not records[1].correct

    def test_forward_passes_are_generated_tokens(self):
        bench = open_qa_benchmark(1)
        model = StubModel(gen_fn=lambda p: "four token long answer")
        with make_client(model) as client:
            result, records = eval_nlg(
                bench, client, PromptFormat(stop_sequences=[]), matcher="alias_exact"
            )
        # 4 visible tokens + end-of-sequence emission
        assert records[0].forward_passes == 5
        assert result.total_forward_passes == 5

    def test_empty_generation_is_incorrect(self):
        bench = open_qa_benchmark(1)
        model = StubModel(gen_fn=lambda p: "\n")
        with make_client(model) as client:
            result, records = eval_nlg(bench, client, PromptFormat(), matcher="alias_exact")
        assert records[0].correct is False

    def test_stop_sequence_applies(self):
        bench = open_qa_benchmark(1)
        model = StubModel(gen_fn=lambda p: "answer 1\nQuestion: echo")
        fmt = PromptFormat(stop_sequences=["\nQuestion:"])
        with make_client(model) as client:
            _, records = eval_nlg(bench, client, fmt, matcher="alias_exact")
        assert records[0].generated_text == "answer 1"
        assert records[0].correct is True
