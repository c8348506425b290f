"""Predict generative scores from cheap-variant scores.

At each timestep i the three preceding (nlu, nlg) pairs fit an ordinary
least-squares line and the nlu value at i is plugged in; only strictly
past values are read. Absolute errors above 100 are counted as capped and
left out of the error mean instead of blowing it up (log-likelihood
inputs are unbounded).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from proxybench.stats import StatsError, model_ranking_spearman

logger = logging.getLogger(__name__)

WINDOW_SIZE = 3
ERROR_CAP = 100.0


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class LinearModel:
    slope: float
    intercept: float
    fit_residual_rms: float
    window_size: int = WINDOW_SIZE

    def predict(self, x: float) -> float:
        return self.slope * x + self.intercept


@dataclass(frozen=True)
class PredictedPoint:
    index: int
    nlu_value: float
    nlg_true: float
    nlg_predicted: float
    abs_error: float
    capped: bool
    model_id: str | None = None
    checkpoint_label: str | None = None


@dataclass(frozen=True)
class PredictionReport:
    per_point: list[PredictedPoint]
    mean_abs_error: float
    spearman_rankings: tuple[float, float] | None
    capped_count: int


def fit_window(history: list[tuple[float, float]]) -> LinearModel:
    """OLS fit of nlg on nlu over exactly three past pairs; a zero-variance
    window falls back to the constant mean predictor."""
    if len(history) != WINDOW_SIZE:
        raise PredictionError(f"window must contain exactly {WINDOW_SIZE} pairs")
    if any(not (math.isfinite(x) and math.isfinite(y)) for x, y in history):
        raise PredictionError("non-finite value in fit window")
    xs = [x for x, _ in history]
    ys = [y for _, y in history]
    mean_x = sum(xs) / WINDOW_SIZE
    mean_y = sum(ys) / WINDOW_SIZE
    sxx = sum((x - mean_x) ** 2 for x in xs)
    if sxx == 0.0:
        slope, intercept = 0.0, mean_y
    else:
        sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
        slope = sxy / sxx
        intercept = mean_y - slope * mean_x
    residual_sq = sum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    return LinearModel(
        slope=slope,
        intercept=intercept,
        fit_residual_rms=math.sqrt(residual_sq / WINDOW_SIZE),
    )


def predict_point(
    model: LinearModel, nlu_value: float, clamp: tuple[float, float] | None = None
) -> float:
    if not math.isfinite(nlu_value):
        raise PredictionError("non-finite predictor input")
    prediction = model.predict(nlu_value)
    if clamp is not None:
        lo, hi = clamp
        prediction = max(lo, min(hi, prediction))
    return prediction


def rolling_predict(
    nlu_series: list[float],
    nlg_series: list[float],
    clamp: tuple[float, float] | None = None,
    model_id: str | None = None,
    checkpoint_labels: list[str] | None = None,
) -> list[PredictedPoint]:
    """One prediction per timestep i >= 3, fit on points i-3, i-2, i-1."""
    if len(nlu_series) != len(nlg_series):
        raise PredictionError("series lengths differ")
    if len(nlu_series) < WINDOW_SIZE + 1:
        raise PredictionError(f"need at least {WINDOW_SIZE + 1} aligned points")
    if checkpoint_labels is not None and len(checkpoint_labels) != len(nlu_series):
        raise PredictionError("checkpoint label list does not match series length")
    points: list[PredictedPoint] = []
    for i in range(WINDOW_SIZE, len(nlu_series)):
        window = list(zip(nlu_series[i - WINDOW_SIZE : i], nlg_series[i - WINDOW_SIZE : i]))
        model = fit_window(window)
        predicted = predict_point(model, nlu_series[i], clamp)
        abs_error = abs(predicted - nlg_series[i])
        points.append(
            PredictedPoint(
                index=i,
                nlu_value=nlu_series[i],
                nlg_true=nlg_series[i],
                nlg_predicted=predicted,
                abs_error=abs_error,
                capped=abs_error > ERROR_CAP,
                model_id=model_id,
                checkpoint_label=checkpoint_labels[i] if checkpoint_labels else None,
            )
        )
    return points


def prediction_report(per_model: dict[str, list[PredictedPoint]]) -> PredictionReport:
    """Pool the per-model fragments: error mean over uncapped points, ranking
    correlation of checkpoint-mean true vs predicted scores."""
    all_points: list[PredictedPoint] = []
    for model_id in sorted(per_model):
        all_points.extend(per_model[model_id])
    if not all_points:
        raise PredictionError("no predictions to report")
    uncapped = [p.abs_error for p in all_points if not p.capped]
    capped_count = len(all_points) - len(uncapped)
    mean_abs_error = sum(uncapped) / len(uncapped) if uncapped else math.inf
    rankings = None
    if len(per_model) >= 3:
        scores = {
            model_id: (
                [p.nlg_true for p in pts],
                [p.nlg_predicted for p in pts],
            )
            for model_id, pts in per_model.items()
            if pts
        }
        try:
            rankings = model_ranking_spearman(scores)
        except StatsError as exc:
            logger.warning("ranking correlation unavailable: %s", exc)
    else:
        logger.warning("fewer than 3 models; ranking correlation omitted")
    return PredictionReport(
        per_point=all_points,
        mean_abs_error=mean_abs_error,
        spearman_rankings=rankings,
        capped_count=capped_count,
    )
