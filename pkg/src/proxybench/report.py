"""Derived report tables: speedup ratios, correlation rows, prediction CSVs,
and standardized plot-data series.

Speedups come in two flavors per benchmark/variant: the forward-pass ratio
(hardware independent, emitted as an exact rational of the pass counts)
and the measured wall-clock ratio. Plot data standardizes each per-model
series; cross-model averaging is only done on request via an explicit
nearest-grid option.
"""

from __future__ import annotations

import csv
import logging
from fractions import Fraction
from pathlib import Path

from proxybench.predictor import PredictedPoint, PredictionReport
from proxybench.stats import CorrelationReport
from proxybench.trajectory import ScoreStore, standardize

logger = logging.getLogger(__name__)

NLG_TAG = "nlg"

CORRELATION_COLUMNS = [
    "nlg_benchmark",
    "nlu_variant",
    "p_macro_r",
    "p_macro_p",
    "p_micro_r",
    "p_micro_p",
    "spearman_rho",
    "spearman_p",
]

PREDICTION_COLUMNS = [
    "model_id",
    "checkpoint_label",
    "nlu_value",
    "nlg_true",
    "nlg_pred",
    "abs_error",
    "capped",
]

PREDICTION_SUMMARY_COLUMNS = [
    "nlg_benchmark",
    "nlu_variant",
    "err",
    "spearman_rho",
    "spearman_p",
    "capped_count",
    "n_points",
    "n_models",
]

SPEEDUP_COLUMNS = [
    "benchmark",
    "variant_tag",
    "total_forward_passes",
    "total_wall_seconds",
    "speedup_forward_passes",
    "speedup_wall_clock",
]

PLOTDATA_COLUMNS = [
    "model_id",
    "benchmark",
    "variant_tag",
    "metric_name",
    "flops",
    "value",
    "value_standardized",
]


def write_csv(path: str | Path, columns: list[str], rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def correlation_row(
    nlg_benchmark: str, nlu_variant: str, report: CorrelationReport
) -> dict:
    rho, rho_p = report.spearman_models if report.spearman_models else ("", "")
    return {
        "nlg_benchmark": nlg_benchmark,
        "nlu_variant": nlu_variant,
        "p_macro_r": repr(report.p_macro[0]),
        "p_macro_p": repr(report.p_macro[1]),
        "p_micro_r": repr(report.p_micro[0]),
        "p_micro_p": repr(report.p_micro[1]),
        "spearman_rho": repr(rho) if rho != "" else "",
        "spearman_p": repr(rho_p) if rho_p != "" else "",
    }


def prediction_rows(points: list[PredictedPoint]) -> list[dict]:
    return [
        {
            "model_id": p.model_id or "",
            "checkpoint_label": p.checkpoint_label or "",
            "nlu_value": repr(p.nlu_value),
            "nlg_true": repr(p.nlg_true),
            "nlg_pred": repr(p.nlg_predicted),
            "abs_error": repr(p.abs_error),
            "capped": str(p.capped).lower(),
        }
        for p in points
    ]


def prediction_summary_row(
    nlg_benchmark: str, nlu_variant: str, report: PredictionReport, n_models: int
) -> dict:
    rho, rho_p = report.spearman_rankings if report.spearman_rankings else ("", "")
    return {
        "nlg_benchmark": nlg_benchmark,
        "nlu_variant": nlu_variant,
        "err": repr(report.mean_abs_error),
        "spearman_rho": repr(rho) if rho != "" else "",
        "spearman_p": repr(rho_p) if rho_p != "" else "",
        "capped_count": report.capped_count,
        "n_points": len(report.per_point),
        "n_models": n_models,
    }


def speedup_rows(store: ScoreStore) -> list[dict]:
    """Forward-pass and wall-clock totals per (benchmark, variant) with
    ratios against the generative baseline of the same benchmark."""
    totals: dict[tuple[str, str], tuple[int, float]] = {}
    for p in store.points():
        key = (p.benchmark, p.variant_tag)
        passes, wall = totals.get(key, (0, 0.0))
        totals[key] = (passes + p.total_forward_passes, wall + p.total_wall_seconds)

    rows: list[dict] = []
    for (benchmark, variant_tag), (passes, wall) in sorted(totals.items()):
        baseline = totals.get((benchmark, NLG_TAG))
        if baseline is None:
            logger.warning(
                "benchmark %s has no generative baseline; speedup ratios omitted", benchmark
            )
            pass_ratio, wall_ratio = "", ""
        else:
            base_passes, base_wall = baseline
            pass_ratio = str(Fraction(base_passes, passes)) if passes else ""
            wall_ratio = repr(base_wall / wall) if wall > 0 else ""
        rows.append(
            {
                "benchmark": benchmark,
                "variant_tag": variant_tag,
                "total_forward_passes": passes,
                "total_wall_seconds": repr(wall),
                "speedup_forward_passes": pass_ratio,
                "speedup_wall_clock": wall_ratio,
            }
        )
    return rows


def plotdata_rows(store: ScoreStore, grid: list[float] | None = None) -> list[dict]:
    """Per-model standardized series keyed by flops; constant series are
    skipped with a notice. With a grid, adds ``mean@grid`` rows averaging
    each model's nearest-checkpoint standardized value per grid point."""
    series_keys = sorted(
        {(p.benchmark, p.variant_tag, p.metric_name) for p in store.points()}
    )
    rows: list[dict] = []
    standardized_by_model: dict[tuple, list[tuple[int, float]]] = {}
    for benchmark, variant_tag, metric_name in series_keys:
        for model_id in store.model_ids():
            try:
                trajectory = store.load_trajectory(model_id, benchmark, variant_tag, metric_name)
            except Exception:
                continue
            values = [v for _, v in trajectory.points]
            try:
                z_values = standardize(values)
            except ValueError as exc:
                logger.warning(
                    "series (%s, %s, %s, %s) skipped in plot data: %s",
                    model_id,
                    benchmark,
                    variant_tag,
                    metric_name,
                    exc,
                )
                continue
            key = (benchmark, variant_tag, metric_name, model_id)
            standardized_by_model[key] = [
                (flops, z) for (flops, _), z in zip(trajectory.points, z_values)
            ]
            for (flops, value), z in zip(trajectory.points, z_values):
                rows.append(
                    {
                        "model_id": model_id,
                        "benchmark": benchmark,
                        "variant_tag": variant_tag,
                        "metric_name": metric_name,
                        "flops": flops,
                        "value": repr(value),
                        "value_standardized": repr(z),
                    }
                )

    if grid:
        for benchmark, variant_tag, metric_name in series_keys:
            model_series = [
                points
                for (b, v, m, _model), points in sorted(standardized_by_model.items())
                if (b, v, m) == (benchmark, variant_tag, metric_name)
            ]
            if not model_series:
                continue
            for g in grid:
                nearest = [
                    min(points, key=lambda fv: abs(fv[0] - g))[1] for points in model_series
                ]
                rows.append(
                    {
                        "model_id": "mean@grid",
                        "benchmark": benchmark,
                        "variant_tag": variant_tag,
                        "metric_name": metric_name,
                        "flops": int(g),
                        "value": "",
                        "value_standardized": repr(sum(nearest) / len(nearest)),
                    }
                )
    return rows
