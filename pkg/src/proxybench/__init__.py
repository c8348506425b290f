"""Cheap NLU-style proxies for generative LLM benchmarks.

Pipeline: ingest benchmark files (corpus), build multiple-choice and
answer-only variants (reformulate), score them against a completion
endpoint (modelclient + evaluator), persist per-checkpoint results
(trajectory), and quantify how well the cheap variants track generative
performance (stats, predictor, report).
"""

from proxybench.corpus import Benchmark, Sample, extract_final_answer, load_benchmark, normalize_answer
from proxybench.reformulate import McBenchmark, McSample

__all__ = [
    "Benchmark",
    "Sample",
    "McBenchmark",
    "McSample",
    "load_benchmark",
    "normalize_answer",
    "extract_final_answer",
]
