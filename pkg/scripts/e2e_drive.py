"""Drive every CLI surface end to end against a live stub endpoint.

Exercises the installed ``proxybench`` console script as a subprocess:
all reformulation kinds, all evaluation variants across four checkpoints,
both correlation modes, prediction, and both report kinds. Exits nonzero
on the first failing command. Run from the repository root:

    python scripts/e2e_drive.py
"""

import re
import subprocess
import sys
import tempfile
import textwrap
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from factories import write_jsonl  # noqa: E402
from stub_endpoint import StubModel, StubServer  # noqa: E402

N_QUESTIONS = 6


def cli(*args: str) -> str:
    proc = subprocess.run(["proxybench", *args], capture_output=True, text=True)
    if proc.returncode != 0:
        print("FAILED:", args, "\nstdout:", proc.stdout, "\nstderr:", proc.stderr)
        sys.exit(1)
    return proc.stdout


def main() -> None:
    work = Path(tempfile.mkdtemp(prefix="proxybench_e2e_"))
    write_jsonl(
        work / "qa.jsonl",
        [{"question": f"Question number {i}?", "answers": [f"answer {i}"]} for i in range(1, N_QUESTIONS + 1)],
    )
    write_jsonl(
        work / "qa.fewshot",
        [{"question": f"Pool q{i}?", "answers": [f"pool a{i}"]} for i in range(3)],
    )
    write_jsonl(
        work / "mathy.jsonl",
        [{"question": f"What is {i}+{i}?", "solution": f"{i}+{i} = {2*i}. #### {2*i}"} for i in range(1, 5)],
    )
    write_jsonl(
        work / "code.jsonl",
        [
            {"prompt": f"def f{i}(x):", "canonical_solution": f"    return x + {i}", "buggy_solution": f"    return {i} - x"}
            for i in range(1, 4)
        ],
    )
    write_jsonl(
        work / "rc.jsonl",
        [
            {"question": f"q{i}?", "context": f"ctx{i % 2}", "context_group": f"g{i % 2}",
             "answers": [f"fact {i}"], "unanswerable": False}
            for i in range(1, 7)
        ],
    )
    write_jsonl(
        work / "mmlu.jsonl",
        [{"question": f"pick{i}?", "options": [f"w{i}", f"x{i}", f"y{i}", f"z{i}"], "correct_index": i % 4} for i in range(4)],
    )

    model = StubModel(gen_fn=lambda p: "answer 1")
    server = StubServer(model)
    (work / "config.yaml").write_text(
        textwrap.dedent(
            f"""
            endpoint:
              base_url: {server.url}
              model_name: stub
              retry_limit: 1
              timeout_seconds: 10
            store: {work / 'scores.csv'}
            seed: 7
            benchmarks:
              - name: qa
                path: {work / 'qa.jsonl'}
                schema: open_qa
            """
        )
    )
    cfg = str(work / "config.yaml")

    cli("reformulate", "--input", str(work / "qa.jsonl"), "--schema", "open_qa",
        "--kind", "random", "--k", "3", "--seed", "7", "--output", str(work / "qa_mc.jsonl"))
    cli("reformulate", "--input", str(work / "mathy.jsonl"), "--schema", "math_cot",
        "--kind", "random", "--k", "2", "--seed", "7", "--output", str(work / "math_mc.jsonl"))
    cli("reformulate", "--input", str(work / "math_mc.jsonl"),
        "--kind", "answer_only", "--output", str(work / "math_mc_ao.jsonl"))
    cli("reformulate", "--input", str(work / "code.jsonl"), "--schema", "code_task",
        "--kind", "debug_pair", "--output", str(work / "code_dbg.jsonl"))
    cli("reformulate", "--input", str(work / "rc.jsonl"), "--schema", "reading_comprehension",
        "--kind", "expand", "--output", str(work / "rc_star.jsonl"))
    cli("reformulate", "--input", str(work / "rc.jsonl"), "--schema", "reading_comprehension",
        "--kind", "random", "--k", "2", "--same-context", "--seed", "3", "--output", str(work / "rc_mc.jsonl"))
    cli("reformulate", "--input", str(work / "mmlu.jsonl"), "--schema", "mc_offshelf",
        "--kind", "offshelf", "--output", str(work / "mmlu_mc.jsonl"))

    model.gen_fn = lambda p: '{"answers": ["x", "Alpha", "Beta", "Gamma"]}'
    out = cli("reformulate", "--config", cfg, "--input", str(work / "qa.jsonl"), "--schema", "open_qa",
              "--kind", "smart", "--k", "3", "--output", str(work / "qa_smart.jsonl"))
    assert "fallbacks=0" in out, out

    # evaluate all variants across four checkpoints; the stub answers more
    # questions correctly (and ranks/weights their answers higher) each step
    for c in range(1, 5):
        def gen_fn(prompt, cutoff=c):
            for i in range(1, N_QUESTIONS + 1):
                if f"Question number {i}?" in prompt and i <= cutoff:
                    return f"answer {i}"
            return "no idea"

        def logprob_fn(prompt, cutoff=c):
            match = re.search(r"Question number (\d+)\?", prompt)
            if not match:
                return -1.0
            i = int(match.group(1))
            is_own_answer = prompt.rstrip().endswith(f"answer {i}")
            if is_own_answer:
                return -0.1 if i <= cutoff else -2.0
            return -1.0

        model.gen_fn = gen_fn
        model.logprob_fn = logprob_fn
        common = ["--config", cfg, "evaluate", "--model-id", "m1", "--checkpoint", f"step-{c}",
                  "--n-params", "1000000", "--tokens-trained", str(c * 1000000)]
        cli(*common, "--benchmark", "qa", "--variant", "nlg")
        cli(*common, "--benchmark", "qa", "--variant", "ll")
        cli(*common, "--input", str(work / "qa_mc.jsonl"), "--schema", "mc_generated", "--variant", "mc")

    cli("--config", cfg, "correlate", "--benchmark", "qa", "--nlu-variant", "mc_rnd",
        "--output", str(work / "corr.csv"))
    cli("--config", cfg, "correlate", "--benchmark", "qa", "--nlu-variant", "ll",
        "--macro-p", "fisher", "--micro-standardize", "--output", str(work / "corr_ll.csv"))
    cli("--config", cfg, "predict", "--benchmark", "qa", "--nlu-variant", "ll",
        "--output", str(work / "pred.csv"))
    out = cli("--config", cfg, "report", "--kind", "speedup", "--output", str(work / "speedup.csv"))
    assert "speedup=" in out, out
    cli("--config", cfg, "report", "--kind", "plotdata", "--output", str(work / "plot.csv"))

    for name in ("corr.csv", "corr_ll.csv", "pred.csv", "pred.summary.csv", "speedup.csv", "plot.csv", "scores.csv"):
        assert (work / name).exists(), name
    server.close()
    print(f"END-TO-END DRIVE OK: {work}")


if __name__ == "__main__":
    main()
