"""Correlation suite: Pearson and Spearman with p-values, macro/micro
aggregation across models, and model-ranking correlation.

Macro averages the per-model coefficients (and, by default, the per-model
p-values; a Fisher combination is available behind a flag). Micro pools
every (x, y) pair across models before correlating. Spearman p-values use
exact permutation enumeration for n <= 8 series, where the Student-t
approximation is poor, and the t approximation above that.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

_R_CLAMP_EPS = 1e-12


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class PairedSeries:
    """Two metric series for one model, aligned by checkpoint."""

    model_id: str
    xs: list[float]
    ys: list[float]

    def __post_init__(self):
        if len(self.xs) != len(self.ys):
            raise StatsError(f"model {self.model_id!r}: series lengths differ")


@dataclass(frozen=True)
class CorrelationReport:
    p_macro: tuple[float, float]
    p_micro: tuple[float, float]
    spearman_models: tuple[float, float] | None
    per_model: list[tuple[str, float, float, int]] = field(default_factory=list)


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    max_iterations = 500
    eps = 1e-15
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iterations + 1):
        m2 = 2 * m
        numerator = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + numerator * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numerator / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        numerator = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + numerator * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numerator / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    """Two-sided tail probability of a Student-t statistic."""
    if df < 1:
        raise StatsError("degrees of freedom must be >= 1")
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def _centered_sums(xs: list[float], ys: list[float]) -> tuple[float, float, float]:
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxx = sum((x - mean_x) ** 2 for x in xs)
    syy = sum((y - mean_y) ** 2 for y in ys)
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    return sxx, syy, sxy


def _validate_series(xs: list[float], ys: list[float]) -> None:
    if len(xs) != len(ys):
        raise StatsError("series lengths differ")
    if len(xs) < 3:
        raise StatsError("need at least 3 paired values")
    if any(not math.isfinite(v) for v in xs) or any(not math.isfinite(v) for v in ys):
        raise StatsError("non-finite value in series")


def pearson(xs: list[float], ys: list[float]) -> tuple[float, float]:
    """Pearson r with a two-sided Student-t p-value (df = n - 2).

    |r| within machine epsilon of 1 short-circuits the p-value to 0 rather
    than dividing by a vanishing 1 - r^2.
    """
    _validate_series(xs, ys)
    sxx, syy, sxy = _centered_sums(xs, ys)
    if sxx == 0.0 or syy == 0.0:
        raise StatsError("constant series has no defined correlation")
    r = sxy / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = len(xs) - 2
    if abs(r) >= 1.0 - _R_CLAMP_EPS:
        return r, 0.0
    t = r * math.sqrt(df / (1.0 - r * r))
    return r, student_t_two_sided_p(t, df)


def average_ranks(values: list[float]) -> list[float]:
    """1-based ranks; tied values share the mean of their rank span."""
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def _exact_permutation_p(rank_x: list[float], rank_y: list[float]) -> float:
    """Two-sided permutation p over all n! orderings of the y ranks.

    Permuting y leaves both rank variances fixed, so comparing |rho| reduces
    to comparing the integer statistic sum((2rx - (n+1)) * 2ry): the doubled
    average ranks are integers, making every comparison exact.
    """
    n = len(rank_x)
    centered_x = tuple(round(2 * r) - (n + 1) for r in rank_x)
    doubled_y = tuple(round(2 * r) for r in rank_y)
    target = abs(sum(a * b for a, b in zip(centered_x, doubled_y)))
    hits = 0
    for perm in itertools.permutations(doubled_y):
        if abs(sum(a * b for a, b in zip(centered_x, perm))) >= target:
            hits += 1
    return hits / math.factorial(n)


def spearman(xs: list[float], ys: list[float]) -> tuple[float, float]:
    """Spearman rho (Pearson of the average-rank transforms) with an exact
    permutation p-value for n <= 8 and the t approximation above."""
    _validate_series(xs, ys)
    rank_x = average_ranks(xs)
    rank_y = average_ranks(ys)
    sxx, syy, sxy = _centered_sums(rank_x, rank_y)
    if sxx == 0.0 or syy == 0.0:
        raise StatsError("constant series has no defined rank correlation")
    rho = sxy / math.sqrt(sxx * syy)
    rho = max(-1.0, min(1.0, rho))
    n = len(xs)
    if n <= 8:
        return rho, _exact_permutation_p(rank_x, rank_y)
    if abs(rho) >= 1.0 - _R_CLAMP_EPS:
        return rho, 0.0
    df = n - 2
    t = rho * math.sqrt(df / (1.0 - rho * rho))
    return rho, student_t_two_sided_p(t, df)


def _fisher_combined_p(p_values: list[float]) -> float:
    """Fisher's method: -2 sum(ln p) against chi-square with 2k dof (closed
    form for even degrees of freedom)."""
    if any(p == 0.0 for p in p_values):
        return 0.0
    statistic = -2.0 * sum(math.log(p) for p in p_values)
    k = len(p_values)
    half = statistic / 2.0
    term = math.exp(-half)
    total = term
    for j in range(1, k):
        term *= half / j
        total += term
    return min(1.0, total)


def p_macro(
    series_by_model: list[PairedSeries], combine: str = "mean"
) -> tuple[float, float, list[tuple[str, float, float, int]]]:
    """Unweighted mean of per-model Pearson r.

    The reported p is the mean of the per-model p-values (labeled as such
    in outputs; pass combine="fisher" for Fisher's combined test). Models
    whose series fail the Pearson preconditions are excluded with a notice.
    """
    if combine not in ("mean", "fisher"):
        raise StatsError(f"unknown p combination {combine!r}")
    per_model: list[tuple[str, float, float, int]] = []
    for series in series_by_model:
        try:
            r, p = pearson(series.xs, series.ys)
        except StatsError as exc:
            logger.warning("model %s excluded from macro average: %s", series.model_id, exc)
            continue
        per_model.append((series.model_id, r, p, len(series.xs)))
    if not per_model:
        raise StatsError("no model series satisfied the correlation preconditions")
    mean_r = sum(r for _, r, _, _ in per_model) / len(per_model)
    p_values = [p for _, _, p, _ in per_model]
    combined = _fisher_combined_p(p_values) if combine == "fisher" else sum(p_values) / len(p_values)
    return mean_r, combined, per_model


def _zscore(values: list[float]) -> list[float]:
    mean = sum(values) / len(values)
    sigma = math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
    if sigma == 0.0:
        raise StatsError("constant series cannot be standardized")
    return [(v - mean) / sigma for v in values]


def p_micro(
    series_by_model: list[PairedSeries], standardize_first: bool = False
) -> tuple[float, float]:
    """Pearson over all models' (x, y) pairs pooled together.

    ``standardize_first`` z-scores each model's series before pooling,
    removing per-model offset/scale differences; raw pooling is the default.
    """
    xs: list[float] = []
    ys: list[float] = []
    for series in series_by_model:
        if standardize_first:
            xs.extend(_zscore(series.xs))
            ys.extend(_zscore(series.ys))
        else:
            xs.extend(series.xs)
            ys.extend(series.ys)
    return pearson(xs, ys)


def model_ranking_spearman(
    scores: dict[str, tuple[list[float], list[float]]]
) -> tuple[float, float]:
    """Spearman correlation of model rankings under the two task variants,
    each model represented by its checkpoint-mean score."""
    if len(scores) < 3:
        raise StatsError("need at least 3 models to correlate rankings")
    model_ids = sorted(scores)
    x_means = []
    y_means = []
    for model_id in model_ids:
        xs, ys = scores[model_id]
        if not xs or not ys:
            raise StatsError(f"model {model_id!r} has an empty series")
        x_means.append(sum(xs) / len(xs))
        y_means.append(sum(ys) / len(ys))
    return spearman(x_means, y_means)


def build_correlation_report(
    series_by_model: list[PairedSeries],
    macro_combine: str = "mean",
    micro_standardize: bool = False,
) -> CorrelationReport:
    macro_r, macro_p, per_model = p_macro(series_by_model, combine=macro_combine)
    micro = p_micro(series_by_model, standardize_first=micro_standardize)
    included = {model_id for model_id, _, _, _ in per_model}
    ranking_input = {
        s.model_id: (s.xs, s.ys) for s in series_by_model if s.model_id in included
    }
    if len(ranking_input) >= 3:
        ranking = model_ranking_spearman(ranking_input)
    else:
        ranking = None
        logger.warning("fewer than 3 models; ranking correlation omitted")
    return CorrelationReport(
        p_macro=(macro_r, macro_p),
        p_micro=micro,
        spearman_models=ranking,
        per_model=per_model,
    )
