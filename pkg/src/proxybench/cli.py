"""Command-line pipeline: reformulate, evaluate, correlate, predict, report.

Configuration lives in one YAML file (nested keys or flat dotted paths);
command-line flags win over file values. Credentials are only ever read
from the environment variable named in the endpoint config. Store writes
are staged and renamed, so a failed run leaves the store untouched.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from proxybench import corpus, evaluator, reformulate, report
from proxybench.modelclient import EndpointConfig, ModelClient, ModelClientError
from proxybench.predictor import rolling_predict, prediction_report
from proxybench.stats import PairedSeries, build_correlation_report
from proxybench.trajectory import ScorePoint, ScoreStore

logger = logging.getLogger(__name__)

DEFAULT_MATCHERS = {
    "math_cot": "numeric_final",
    "open_qa": "alias_exact",
    "reading_comprehension": "squad_em",
    "boolean_qa": "alias_exact",
}


class CliError(ValueError):
    pass


@dataclass
class BenchmarkEntry:
    name: str
    path: Path
    schema: str


@dataclass
class RunConfig:
    endpoint: EndpointConfig | None = None
    benchmarks: dict[str, BenchmarkEntry] = field(default_factory=dict)
    prompt_formats: dict[str, evaluator.PromptFormat] = field(default_factory=dict)
    store_path: Path | None = None
    seed: int = 0
    norm_mode: str = "per_token"
    clamp: tuple[float, float] | None = None


def _unflatten(mapping: dict) -> dict:
    """Accept flat dotted keys (endpoint.base_url: ...) alongside nesting."""
    out: dict = {}
    for key, value in mapping.items():
        if isinstance(key, str) and "." in key:
            head, rest = key.split(".", 1)
            out.setdefault(head, {})
            if not isinstance(out[head], dict):
                raise CliError(f"config key {head!r} is both a value and a section")
            out[head].update(_unflatten({rest: value}))
        else:
            if isinstance(value, dict):
                existing = out.setdefault(key, {})
                existing.update(_unflatten(value))
            else:
                out[key] = value
    return out


def load_run_config(path: str | None, args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if path:
        config_path = Path(path)
        if not config_path.exists():
            raise CliError(f"config file not found: {config_path}")
        loaded = yaml.safe_load(config_path.read_text(encoding="utf-8"))
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise CliError("config file must contain a mapping")
        raw = _unflatten(loaded)

    config = RunConfig()

    endpoint_raw = dict(raw.get("endpoint", {}))
    if getattr(args, "endpoint_url", None):
        endpoint_raw["base_url"] = args.endpoint_url
    if getattr(args, "model", None):
        endpoint_raw["model_name"] = args.model
    if endpoint_raw.get("base_url"):
        config.endpoint = EndpointConfig(
            base_url=endpoint_raw["base_url"],
            model_name=endpoint_raw.get("model_name", ""),
            api_key_env=endpoint_raw.get("api_key_env", ""),
            max_parallel=int(endpoint_raw.get("max_parallel", 4)),
            timeout_seconds=float(endpoint_raw.get("timeout_seconds", 60.0)),
            retry_limit=int(endpoint_raw.get("retry_limit", 2)),
        )

    for entry in raw.get("benchmarks", []) or []:
        bench = BenchmarkEntry(
            name=entry["name"], path=Path(entry["path"]), schema=entry["schema"]
        )
        if bench.schema not in corpus.SCHEMA_KINDS and bench.schema != "mc_generated":
            raise CliError(f"benchmark {bench.name!r}: unknown schema {bench.schema!r}")
        config.benchmarks[bench.name] = bench

    for name, fmt in (raw.get("prompt_formats") or {}).items():
        config.prompt_formats[name] = evaluator.PromptFormat(
            fewshot_count=int(fmt.get("fewshot_count", 0)),
            question_prefix=fmt.get("question_prefix", "Question: "),
            answer_prefix=fmt.get("answer_prefix", "\nAnswer:"),
            example_separator=fmt.get("example_separator", "\n\n"),
            stop_sequences=list(fmt.get("stop_sequences", [])),
            max_generation_tokens=int(fmt.get("max_generation_tokens", 256)),
        )

    if raw.get("store"):
        config.store_path = Path(raw["store"])
    if getattr(args, "store", None):
        config.store_path = Path(args.store)
    if raw.get("seed") is not None:
        config.seed = int(raw["seed"])
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if raw.get("norm_mode"):
        config.norm_mode = raw["norm_mode"]
    clamp = raw.get("clamp")
    if clamp:
        config.clamp = (float(clamp[0]), float(clamp[1]))
    return config


def _require_endpoint(config: RunConfig) -> EndpointConfig:
    if config.endpoint is None:
        raise CliError("no endpoint configured; set endpoint.base_url or pass --endpoint-url")
    return config.endpoint


def _require_store_path(config: RunConfig) -> Path:
    if config.store_path is None:
        raise CliError("no store configured; set store in the config or pass --store")
    return config.store_path


def _load_store(path: Path) -> ScoreStore:
    if path.exists():
        return ScoreStore.load(path)
    return ScoreStore()


# --------------------------------------------------------------------------
# reformulate


def cmd_reformulate(args: argparse.Namespace, config: RunConfig) -> int:
    seed = args.seed if args.seed is not None else config.seed
    input_path = Path(args.input)
    output_path = Path(args.output)

    is_mc_input = reformulate.manifest_path_for(input_path).exists()
    source = None
    if not is_mc_input:
        if not args.schema:
            raise CliError("--schema is required for benchmark (non-MC) inputs")
        source = corpus.load_benchmark(input_path, args.schema)

    if args.kind == "random":
        mcb = reformulate.random_distractors(
            source, k=args.k, seed=seed, same_context_only=args.same_context
        )
    elif args.kind == "smart":
        endpoint = _require_endpoint(config)
        with ModelClient(endpoint) as client:
            mcb = reformulate.smart_distractors(
                source, client, k=args.k, max_retries=args.max_retries, seed=seed
            )
    elif args.kind == "debug_pair":
        mcb = reformulate.debug_pair_variant(source, seed=seed)
    elif args.kind == "expand":
        mcb = reformulate.expand_negatives(source, seed=seed)
    elif args.kind == "offshelf":
        mcb = reformulate.offshelf_variant(source)
    elif args.kind == "answer_only":
        if is_mc_input:
            mcb = reformulate.answer_only_variant(reformulate.load_mc_benchmark(input_path))
        else:
            variant = reformulate.answer_only_variant(source)
            corpus.save_benchmark(variant, output_path)
            print(f"wrote answer-only benchmark to {output_path} ({len(variant.samples)} samples)")
            return 0
    else:
        raise CliError(f"unknown reformulation kind {args.kind!r}")

    reformulate.write_mc_benchmark(mcb, output_path)
    if source is not None and source.fewshot_pool:
        corpus.save_fewshot_pool(
            source.fewshot_pool, source.schema_kind, output_path.with_suffix(".fewshot")
        )
    manifest = mcb.generation_manifest
    print(
        f"wrote {len(mcb.samples)} MC samples to {output_path} "
        f"(variant={mcb.variant_tag} seed={manifest.seed} k={manifest.k} "
        f"dropped={manifest.drop_count} fallbacks={manifest.fallback_count})"
    )
    return 0


# --------------------------------------------------------------------------
# evaluate


def _resolve_benchmark(args: argparse.Namespace, config: RunConfig) -> tuple[Path, str, str]:
    """(path, schema, name) from --benchmark config lookup or --input/--schema."""
    if args.benchmark:
        entry = config.benchmarks.get(args.benchmark)
        if entry is None:
            raise CliError(f"benchmark {args.benchmark!r} not found in config")
        return entry.path, entry.schema, entry.name
    if not args.input:
        raise CliError("pass --benchmark <config name> or --input <path>")
    if not args.schema:
        raise CliError("--schema is required with --input")
    path = Path(args.input)
    return path, args.schema, path.stem


def _mc_fewshot_pool(path: Path, source_schema: str) -> list[corpus.Sample]:
    fewshot_path = path.with_suffix(".fewshot")
    if not fewshot_path.exists():
        return []
    pool_benchmark = corpus.load_benchmark_lines(fewshot_path, source_schema)
    return pool_benchmark


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    endpoint = _require_endpoint(config)
    store_path = _require_store_path(config)
    path, schema, name = _resolve_benchmark(args, config)
    if not path.exists():
        raise CliError(f"benchmark file not found: {path}")

    store = _load_store(store_path)
    variant = args.variant

    with ModelClient(endpoint) as client:
        capabilities = client.probe_capabilities()
        if variant in ("mc", "ll", "ll_ao") and not capabilities.can_score:
            raise CliError(
                "endpoint cannot score continuations: " + "; ".join(capabilities.diagnostics)
            )
        if variant == "nlg" and not capabilities.can_generate:
            raise CliError(
                "endpoint cannot generate: " + "; ".join(capabilities.diagnostics)
            )

        if variant == "mc":
            if schema in ("mc_offshelf", "boolean_qa"):
                bench = corpus.load_benchmark(path, schema)
                mcb = reformulate.offshelf_variant(bench)
                fewshot_pool = bench.fewshot_pool
                source_schema = schema
                store_benchmark = bench.name
            else:
                mcb = reformulate.load_mc_benchmark(path)
                source_schema = mcb.generation_manifest.source_schema
                fewshot_pool = _mc_fewshot_pool(path, source_schema)
                store_benchmark = mcb.generation_manifest.source_name
            fmt = config.prompt_formats.get(name) or evaluator.default_format(source_schema)
            result, records = evaluator.eval_mc(
                mcb, client, fmt, norm_mode=config.norm_mode, fewshot_pool=fewshot_pool
            )
            store_variant = mcb.variant_tag
        elif variant in ("ll", "ll_ao"):
            bench = corpus.load_benchmark(path, schema)
            fmt = config.prompt_formats.get(name) or evaluator.default_format(schema)
            target = "final_answer_only" if variant == "ll_ao" else "full_solution"
            result, records = evaluator.eval_ll(bench, client, fmt, target=target)
            store_benchmark = name
            store_variant = result.variant_tag
        elif variant == "nlg":
            bench = corpus.load_benchmark(path, schema)
            matcher = args.matcher or DEFAULT_MATCHERS.get(schema)
            if matcher is None:
                raise CliError(
                    f"no generative matcher for schema {schema!r}; execution-scored tasks "
                    "are imported externally (see the score CSV schema in the README)"
                )
            fmt = config.prompt_formats.get(name) or evaluator.default_format(schema)
            result, records = evaluator.eval_nlg(bench, client, fmt, matcher=matcher)
            store_benchmark = name
            store_variant = "nlg"
        else:
            raise CliError(f"unknown variant {variant!r}")

    checkpoint = store.ensure_checkpoint(
        args.model_id, args.checkpoint, args.n_params, args.tokens_trained
    )
    point = ScorePoint(
        checkpoint=checkpoint,
        benchmark=store_benchmark,
        variant_tag=store_variant,
        metric_name=result.metric_name,
        value=result.value,
        n_samples=result.n_samples,
        total_forward_passes=result.total_forward_passes,
        total_wall_seconds=result.total_wall_seconds,
    )
    store.record_score(point)
    store.save(store_path)

    records_path = Path(args.records) if args.records else (
        store_path.parent
        / "records"
        / f"{args.model_id.replace('/', '_')}__{args.checkpoint}__{store_benchmark}__{store_variant}.jsonl"
    )
    evaluator.write_sample_records(records, records_path)

    print(
        f"{store_benchmark} {store_variant} {result.metric_name}={result.value:.6g} "
        f"n={result.n_samples} forward_passes={result.total_forward_passes} "
        f"wall_seconds={result.total_wall_seconds:.3f}"
    )
    print(f"recorded to {store_path} (records: {records_path})")
    return 0


# --------------------------------------------------------------------------
# correlate / predict


def _series_keys(args: argparse.Namespace) -> tuple[tuple, tuple, str]:
    nlg_benchmark = args.benchmark
    nlu_benchmark = args.nlu_benchmark or nlg_benchmark
    nlu_metric = args.nlu_metric or (
        "summed_loglikelihood" if args.nlu_variant.startswith("ll") else "accuracy"
    )
    nlg_metric = args.nlg_metric or (
        "summed_loglikelihood" if args.nlg_variant.startswith("ll") else "accuracy"
    )
    x_key = (nlu_benchmark, args.nlu_variant, nlu_metric)
    y_key = (nlg_benchmark, args.nlg_variant, nlg_metric)
    if nlu_benchmark != nlg_benchmark:
        nlu_label = f"{nlu_benchmark}:{args.nlu_variant}"
        logger.info(
            "cross-benchmark pairing: %s (%s) against %s (%s)",
            nlg_benchmark,
            args.nlg_variant,
            nlu_benchmark,
            args.nlu_variant,
        )
    else:
        nlu_label = args.nlu_variant
    return x_key, y_key, nlu_label


def _collect_series(
    store: ScoreStore, x_key: tuple, y_key: tuple, min_points: int
) -> list[PairedSeries]:
    series: list[PairedSeries] = []
    for model_id in store.model_ids():
        xs, ys, _labels = store.aligned_series(model_id, x_key, y_key)
        if len(xs) < min_points:
            logger.warning(
                "model %s skipped: only %d aligned checkpoints (need %d)",
                model_id,
                len(xs),
                min_points,
            )
            continue
        series.append(PairedSeries(model_id=model_id, xs=xs, ys=ys))
    return series


def cmd_correlate(args: argparse.Namespace, config: RunConfig) -> int:
    store_path = _require_store_path(config)
    store = _load_store(store_path)
    x_key, y_key, nlu_label = _series_keys(args)
    series = _collect_series(store, x_key, y_key, min_points=3)
    if not series:
        raise CliError(
            f"no model has >= 3 aligned checkpoints for {y_key} against {x_key}; "
            "evaluate more checkpoints first"
        )
    corr = build_correlation_report(
        series, macro_combine=args.macro_p, micro_standardize=args.micro_standardize
    )
    row = report.correlation_row(args.benchmark, nlu_label, corr)
    report.write_csv(args.output, report.CORRELATION_COLUMNS, [row])
    rho = corr.spearman_models
    print(
        f"{args.benchmark} vs {nlu_label}: "
        f"P_macro={corr.p_macro[0]:.4f} ({corr.p_macro[1]:.3f})  "
        f"P_micro={corr.p_micro[0]:.4f} ({corr.p_micro[1]:.3f})  "
        + (f"Spearman={rho[0]:.4f} ({rho[1]:.3f})" if rho else "Spearman=n/a")
    )
    for model_id, r, p, n in corr.per_model:
        print(f"  {model_id}: r={r:.4f} p={p:.3f} n={n}")
    print(f"wrote {args.output}")
    return 0


def cmd_predict(args: argparse.Namespace, config: RunConfig) -> int:
    store_path = _require_store_path(config)
    store = _load_store(store_path)
    x_key, y_key, nlu_label = _series_keys(args)
    clamp = config.clamp
    if args.clamp:
        clamp = (args.clamp[0], args.clamp[1])

    fragments = {}
    for model_id in store.model_ids():
        xs, ys, labels = store.aligned_series(model_id, x_key, y_key)
        if len(xs) < 4:
            logger.warning(
                "model %s skipped: only %d aligned checkpoints (need >= 4)", model_id, len(xs)
            )
            continue
        fragments[model_id] = rolling_predict(
            xs, ys, clamp=clamp, model_id=model_id, checkpoint_labels=labels
        )
    if not fragments:
        raise CliError(
            f"no model has >= 4 aligned checkpoints for {y_key} against {x_key}"
        )
    pred = prediction_report(fragments)
    report.write_csv(args.output, report.PREDICTION_COLUMNS, report.prediction_rows(pred.per_point))
    summary_path = args.summary or str(Path(args.output).with_suffix(".summary.csv"))
    report.write_csv(
        summary_path,
        report.PREDICTION_SUMMARY_COLUMNS,
        [report.prediction_summary_row(args.benchmark, nlu_label, pred, len(fragments))],
    )
    rho = pred.spearman_rankings
    print(
        f"{args.benchmark} vs {nlu_label}: Err={pred.mean_abs_error:.6g} "
        + (f"Spearman={rho[0]:.4f} ({rho[1]:.3f}) " if rho else "Spearman=n/a ")
        + f"capped={pred.capped_count}"
    )
    print(f"wrote {args.output} and {summary_path}")
    return 0


# --------------------------------------------------------------------------
# report


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    store_path = _require_store_path(config)
    store = _load_store(store_path)
    if args.kind == "speedup":
        rows = report.speedup_rows(store)
        report.write_csv(args.output, report.SPEEDUP_COLUMNS, rows)
        for row in rows:
            ratio = row["speedup_forward_passes"]
            print(
                f"{row['benchmark']:<20} {row['variant_tag']:<12} "
                f"passes={row['total_forward_passes']:<10} "
                + (f"speedup={ratio}x" if ratio else "speedup=n/a")
            )
    elif args.kind == "plotdata":
        grid = [float(g) for g in args.grid.split(",")] if args.grid else None
        rows = report.plotdata_rows(store, grid=grid)
        report.write_csv(args.output, report.PLOTDATA_COLUMNS, rows)
        print(f"{len(rows)} plot-data rows")
    else:
        raise CliError(f"unknown report kind {args.kind!r}")
    print(f"wrote {args.output}")
    return 0


# --------------------------------------------------------------------------
# parser


def _add_shared_flags(parser: argparse.ArgumentParser, subcommand: bool = False) -> None:
    """Accepted both before and after the subcommand; the later value wins.

    Subcommand copies default to SUPPRESS so an unset flag never clobbers a
    value parsed by the main parser (subparsers merge their whole namespace
    back into the parent's).
    """
    default = argparse.SUPPRESS if subcommand else None
    parser.add_argument(
        "--config", default=default, help="YAML config file (flat dotted keys or nested)"
    )
    parser.add_argument("--store", default=default, help="score store CSV path (overrides config)")
    parser.add_argument(
        "--endpoint-url", default=default, help="completion endpoint base URL (overrides config)"
    )
    parser.add_argument("--model", default=default, help="endpoint model name (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proxybench",
        description="Reformulate generative benchmarks into cheap variants, evaluate, and correlate.",
    )
    _add_shared_flags(parser)
    parser.add_argument("--seed", type=int, help="random seed (overrides config)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reformulate", help="build an MC or answer-only variant file")
    _add_shared_flags(p, subcommand=True)
    p.add_argument("--input", required=True, help="benchmark file (or MC file for answer_only)")
    p.add_argument("--schema", help="schema kind of the input benchmark")
    p.add_argument(
        "--kind",
        required=True,
        choices=["random", "smart", "answer_only", "debug_pair", "expand", "offshelf"],
    )
    p.add_argument("--k", type=int, default=3, help="number of distractors (default 3)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="generation seed (overrides the global/config seed)")
    p.add_argument("--same-context", action="store_true", help="restrict random distractors to the sample's context group")
    p.add_argument("--max-retries", type=int, default=2, help="re-prompts for malformed generator output")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_reformulate)

    p = sub.add_parser("evaluate", help="run one variant for one checkpoint and record the score")
    _add_shared_flags(p, subcommand=True)
    p.add_argument("--benchmark", help="benchmark name from the config")
    p.add_argument("--input", help="benchmark or MC file path (alternative to --benchmark)")
    p.add_argument("--schema", help="schema kind when using --input")
    p.add_argument("--variant", required=True, choices=["nlg", "mc", "ll", "ll_ao"])
    p.add_argument("--model-id", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint label")
    p.add_argument("--n-params", type=int, required=True, help="non-embedding parameter count")
    p.add_argument("--tokens-trained", type=int, required=True)
    p.add_argument("--matcher", choices=list(evaluator.MATCHERS))
    p.add_argument("--records", help="per-sample record file (default: records/ next to the store)")
    p.set_defaults(func=cmd_evaluate)

    for name, helptext in (
        ("correlate", "correlation row for an (NLG, NLU) variant pair"),
        ("predict", "rolling-window prediction of NLG scores from NLU scores"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_shared_flags(p, subcommand=True)
        p.add_argument("--benchmark", required=True, help="NLG-side benchmark name")
        p.add_argument("--nlg-variant", default="nlg")
        p.add_argument("--nlg-metric")
        p.add_argument("--nlu-benchmark", help="NLU-side benchmark (for cross-benchmark pairing)")
        p.add_argument("--nlu-variant", required=True)
        p.add_argument("--nlu-metric")
        if name == "correlate":
            p.add_argument("--macro-p", choices=["mean", "fisher"], default="mean")
            p.add_argument(
                "--micro-standardize",
                action="store_true",
                help="z-score each model's series before pooling for P_micro",
            )
            p.add_argument("--output", default="correlation_report.csv")
            p.set_defaults(func=cmd_correlate)
        else:
            p.add_argument("--clamp", nargs=2, type=float, metavar=("LO", "HI"))
            p.add_argument("--output", default="prediction_report.csv")
            p.add_argument("--summary", help="summary CSV path (default: <output>.summary.csv)")
            p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="speedup table or standardized plot data")
    _add_shared_flags(p, subcommand=True)
    p.add_argument("--kind", required=True, choices=["speedup", "plotdata"])
    p.add_argument("--grid", help="comma-separated flops values for cross-model averaging")
    p.add_argument("--output", default="report.csv")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_run_config(args.config, args)
        return args.func(args, config)
    except (ValueError, RuntimeError, OSError, ModelClientError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
