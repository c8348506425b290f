"""Checkpoint registry and per-variant score series over training.

Training compute per checkpoint is 6 * N * D (non-embedding parameters
times trained tokens), computed on Python integers so it is exact at any
scale. Scores persist to a flat CSV (one row per checkpoint x benchmark x
variant x metric) that is inspectable, diff-able and byte-stable.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

STORE_COLUMNS = [
    "model_id",
    "checkpoint_label",
    "n_params_nonembed",
    "tokens_trained",
    "flops",
    "benchmark",
    "variant_tag",
    "metric_name",
    "value",
    "n_samples",
    "total_forward_passes",
    "total_wall_seconds",
]

REGISTRY_COLUMNS = ["model_id", "checkpoint_label", "n_params_nonembed", "tokens_trained"]


class StoreError(ValueError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    model_id: str
    checkpoint_label: str
    n_params_nonembed: int
    tokens_trained: int
    flops: int

    @property
    def key(self) -> tuple[str, str]:
        return (self.model_id, self.checkpoint_label)


def make_checkpoint(
    model_id: str, checkpoint_label: str, n_params_nonembed: int, tokens_trained: int
) -> Checkpoint:
    """Checkpoint with exact integer compute accounting (no overflow possible
    on Python integers)."""
    if n_params_nonembed <= 0 or tokens_trained <= 0:
        raise StoreError("parameter and token counts must be positive")
    return Checkpoint(
        model_id=model_id,
        checkpoint_label=checkpoint_label,
        n_params_nonembed=int(n_params_nonembed),
        tokens_trained=int(tokens_trained),
        flops=6 * int(n_params_nonembed) * int(tokens_trained),
    )


@dataclass(frozen=True)
class ScorePoint:
    checkpoint: Checkpoint
    benchmark: str
    variant_tag: str
    metric_name: str
    value: float
    n_samples: int
    total_forward_passes: int
    total_wall_seconds: float

    @property
    def key(self) -> tuple[str, str, str, str, str]:
        return (
            self.checkpoint.model_id,
            self.checkpoint.checkpoint_label,
            self.benchmark,
            self.variant_tag,
            self.metric_name,
        )


@dataclass(frozen=True)
class Trajectory:
    model_id: str
    benchmark: str
    variant_tag: str
    metric_name: str
    points: list[tuple[int, float]]  # (flops, value), strictly increasing flops


class ScoreStore:
    """In-memory store with single-writer CSV persistence."""

    def __init__(self):
        self._checkpoints: dict[tuple[str, str], Checkpoint] = {}
        self._points: dict[tuple[str, str, str, str, str], ScorePoint] = {}
        self.notices: list[str] = []

    def register_checkpoint(
        self, model_id: str, checkpoint_label: str, n_params_nonembed: int, tokens_trained: int
    ) -> Checkpoint:
        ckpt = make_checkpoint(model_id, checkpoint_label, n_params_nonembed, tokens_trained)
        if ckpt.key in self._checkpoints:
            raise StoreError(f"checkpoint already registered: {ckpt.key}")
        self._checkpoints[ckpt.key] = ckpt
        return ckpt

    def ensure_checkpoint(
        self, model_id: str, checkpoint_label: str, n_params_nonembed: int, tokens_trained: int
    ) -> Checkpoint:
        """Idempotent registration: identical parameters return the existing
        checkpoint, conflicting ones raise."""
        existing = self._checkpoints.get((model_id, checkpoint_label))
        if existing is not None:
            if (
                existing.n_params_nonembed == n_params_nonembed
                and existing.tokens_trained == tokens_trained
            ):
                return existing
            raise StoreError(
                f"checkpoint {(model_id, checkpoint_label)} already registered with "
                f"different parameters"
            )
        return self.register_checkpoint(
            model_id, checkpoint_label, n_params_nonembed, tokens_trained
        )

    def checkpoint(self, model_id: str, checkpoint_label: str) -> Checkpoint | None:
        return self._checkpoints.get((model_id, checkpoint_label))

    @property
    def checkpoints(self) -> list[Checkpoint]:
        return sorted(self._checkpoints.values(), key=lambda c: (c.model_id, c.flops))

    def record_score(self, point: ScorePoint) -> None:
        registered = self._checkpoints.get(point.checkpoint.key)
        if registered is None:
            raise StoreError(f"checkpoint not registered: {point.checkpoint.key}")
        if registered != point.checkpoint:
            raise StoreError(f"checkpoint mismatch for {point.checkpoint.key}")
        if point.key in self._points:
            notice = f"overwriting existing score point {point.key}"
            self.notices.append(notice)
            logger.info(notice)
        self._points[point.key] = point

    def points(self) -> list[ScorePoint]:
        return sorted(
            self._points.values(),
            key=lambda p: (
                p.checkpoint.model_id,
                p.checkpoint.flops,
                p.checkpoint.checkpoint_label,
                p.benchmark,
                p.variant_tag,
                p.metric_name,
            ),
        )

    def model_ids(self) -> list[str]:
        return sorted({p.checkpoint.model_id for p in self._points.values()})

    def load_trajectory(
        self, model_id: str, benchmark: str, variant_tag: str, metric_name: str
    ) -> Trajectory:
        matching = [
            p
            for p in self._points.values()
            if p.checkpoint.model_id == model_id
            and p.benchmark == benchmark
            and p.variant_tag == variant_tag
            and p.metric_name == metric_name
        ]
        if not matching:
            raise StoreError(
                f"no points for model={model_id} benchmark={benchmark} "
                f"variant={variant_tag} metric={metric_name}"
            )
        matching.sort(key=lambda p: p.checkpoint.flops)
        flops = [p.checkpoint.flops for p in matching]
        if len(set(flops)) != len(flops):
            raise StoreError(f"duplicate flops values in trajectory for {model_id}")
        return Trajectory(
            model_id=model_id,
            benchmark=benchmark,
            variant_tag=variant_tag,
            metric_name=metric_name,
            points=[(p.checkpoint.flops, p.value) for p in matching],
        )

    def aligned_series(
        self,
        model_id: str,
        x_key: tuple[str, str, str],
        y_key: tuple[str, str, str],
    ) -> tuple[list[float], list[float], list[str]]:
        """Values of two (benchmark, variant, metric) series at the checkpoint
        labels present in both, ordered by ascending flops."""

        def series_for(key):
            benchmark, variant_tag, metric_name = key
            return {
                p.checkpoint.checkpoint_label: p
                for p in self._points.values()
                if p.checkpoint.model_id == model_id
                and p.benchmark == benchmark
                and p.variant_tag == variant_tag
                and p.metric_name == metric_name
            }

        xs_by_label = series_for(x_key)
        ys_by_label = series_for(y_key)
        common = sorted(
            set(xs_by_label) & set(ys_by_label),
            key=lambda label: xs_by_label[label].checkpoint.flops,
        )
        xs = [xs_by_label[label].value for label in common]
        ys = [ys_by_label[label].value for label in common]
        return xs, ys, common

    def save(self, path: str | Path) -> None:
        """Atomic write: staged to a temporary file and renamed on success."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(STORE_COLUMNS)
                for p in self.points():
                    writer.writerow(
                        [
                            p.checkpoint.model_id,
                            p.checkpoint.checkpoint_label,
                            p.checkpoint.n_params_nonembed,
                            p.checkpoint.tokens_trained,
                            p.checkpoint.flops,
                            p.benchmark,
                            p.variant_tag,
                            p.metric_name,
                            repr(p.value),
                            p.n_samples,
                            p.total_forward_passes,
                            repr(p.total_wall_seconds),
                        ]
                    )
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    @classmethod
    def load(cls, path: str | Path) -> "ScoreStore":
        store = cls()
        for point in import_scores(path):
            store.ensure_checkpoint(
                point.checkpoint.model_id,
                point.checkpoint.checkpoint_label,
                point.checkpoint.n_params_nonembed,
                point.checkpoint.tokens_trained,
            )
            store.record_score(point)
        return store


def _parse_int(row: dict, column: str, row_number: int) -> int:
    try:
        return int(row[column])
    except (TypeError, ValueError) as exc:
        raise StoreError(f"row {row_number}: non-integer value in column {column!r}") from exc


def _parse_float(row: dict, column: str, row_number: int) -> float:
    try:
        value = float(row[column])
    except (TypeError, ValueError) as exc:
        raise StoreError(f"row {row_number}: non-numeric value in column {column!r}") from exc
    if not math.isfinite(value):
        raise StoreError(f"row {row_number}: non-finite value in column {column!r}")
    return value


def import_scores(path: str | Path) -> list[ScorePoint]:
    """Parse a score CSV with the exact documented header into points;
    checkpoints are reconstructed from the N and D columns."""
    path = Path(path)
    if not path.exists():
        raise StoreError(f"score file not found: {path}")
    points: list[ScorePoint] = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        if header != STORE_COLUMNS:
            missing = [c for c in STORE_COLUMNS if c not in header]
            extra = [c for c in header if c not in STORE_COLUMNS]
            raise StoreError(
                f"score CSV header mismatch; missing columns {missing}, unexpected {extra}"
            )
        for row_number, row in enumerate(reader, start=2):
            n_params = _parse_int(row, "n_params_nonembed", row_number)
            tokens = _parse_int(row, "tokens_trained", row_number)
            flops = _parse_int(row, "flops", row_number)
            ckpt = make_checkpoint(row["model_id"], row["checkpoint_label"], n_params, tokens)
            if ckpt.flops != flops:
                raise StoreError(
                    f"row {row_number}: flops column {flops} does not equal "
                    f"6*N*D = {ckpt.flops}"
                )
            points.append(
                ScorePoint(
                    checkpoint=ckpt,
                    benchmark=row["benchmark"],
                    variant_tag=row["variant_tag"],
                    metric_name=row["metric_name"],
                    value=_parse_float(row, "value", row_number),
                    n_samples=_parse_int(row, "n_samples", row_number),
                    total_forward_passes=_parse_int(row, "total_forward_passes", row_number),
                    total_wall_seconds=_parse_float(row, "total_wall_seconds", row_number),
                )
            )
    return points


def load_checkpoint_registry(path: str | Path) -> list[Checkpoint]:
    """Bulk checkpoint registry CSV: model_id, checkpoint_label,
    n_params_nonembed, tokens_trained."""
    path = Path(path)
    checkpoints: list[Checkpoint] = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != REGISTRY_COLUMNS:
            raise StoreError(
                f"registry header mismatch: expected {REGISTRY_COLUMNS}, got {reader.fieldnames}"
            )
        for row_number, row in enumerate(reader, start=2):
            checkpoints.append(
                make_checkpoint(
                    row["model_id"],
                    row["checkpoint_label"],
                    _parse_int(row, "n_params_nonembed", row_number),
                    _parse_int(row, "tokens_trained", row_number),
                )
            )
    return checkpoints


def standardize(series: list[float]) -> list[float]:
    """Z-score with the population standard deviation; output has mean 0 and
    standard deviation 1."""
    if len(series) < 2:
        raise ValueError("need at least 2 values to standardize")
    mean = sum(series) / len(series)
    variance = sum((x - mean) ** 2 for x in series) / len(series)
    if variance == 0.0:
        raise ValueError("constant series cannot be standardized")
    sigma = math.sqrt(variance)
    return [(x - mean) / sigma for x in series]
