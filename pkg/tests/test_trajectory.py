import csv
import random

import pytest

from proxybench.trajectory import (
    REGISTRY_COLUMNS,
    STORE_COLUMNS,
    ScorePoint,
    ScoreStore,
    StoreError,
    import_scores,
    load_checkpoint_registry,
    make_checkpoint,
    standardize,
)


def add_point(store, model="m", label="c1", n=10**9, d=2 * 10**10, benchmark="bench",
              variant="nlg", metric="accuracy", value=0.5, n_samples=10, passes=100, wall=1.5):
    ckpt = store.ensure_checkpoint(model, label, n, d)
    point = ScorePoint(
        checkpoint=ckpt,
        benchmark=benchmark,
        variant_tag=variant,
        metric_name=metric,
        value=value,
        n_samples=n_samples,
        total_forward_passes=passes,
        total_wall_seconds=wall,
    )
    store.record_score(point)
    return point


class TestFlopsAccounting:
    def test_unit_case(self):
        assert make_checkpoint("m", "c", 1, 1).flops == 6

    def test_pythia_scale(self):
        ckpt = make_checkpoint("m", "c", 10**9, 3 * 10**11)
        assert ckpt.flops == 18 * 10**20
        assert ckpt.flops == 6 * 10**9 * 3 * 10**11

    def test_huge_scale_no_overflow(self):
        ckpt = make_checkpoint("m", "c", 10**11, 10**13)
        assert ckpt.flops == 6 * 10**24

    def test_positive_counts_required(self):
        with pytest.raises(StoreError):
            make_checkpoint("m", "c", 0, 10)

    def test_multiplicative_exactness(self):
        rng = random.Random(100)
        for _ in range(200):
            n = rng.randrange(1, 10**11)
            d = rng.randrange(1, 10**13)
            a = rng.randrange(2, 1000)
            assert make_checkpoint("m", "c", a * n, d).flops == a * make_checkpoint("m", "c", n, d).flops

    def test_duplicate_registration_errors(self):
        store = ScoreStore()
        store.register_checkpoint("m", "c1", 10, 10)
        with pytest.raises(StoreError, match="already registered"):
            store.register_checkpoint("m", "c1", 10, 10)

    def test_ensure_checkpoint_idempotent_for_identical(self):
        store = ScoreStore()
        first = store.ensure_checkpoint("m", "c1", 10, 10)
        assert store.ensure_checkpoint("m", "c1", 10, 10) is first
        with pytest.raises(StoreError):
            store.ensure_checkpoint("m", "c1", 10, 11)


class TestRecordScore:
    def test_round_trip_single_point(self, tmp_path):
        store = ScoreStore()
        point = add_point(store)
        path = tmp_path / "scores.csv"
        store.save(path)
        reloaded = ScoreStore.load(path)
        assert reloaded.points() == [point]

    def test_overwrite_same_key_notices(self):
        store = ScoreStore()
        add_point(store, value=0.1)
        add_point(store, value=0.9)
        assert len(store.notices) == 1
        assert store.points()[0].value == 0.9

    def test_cardinality(self):
        store = ScoreStore()
        for m in range(3):
            for c in range(4):
                for variant in ("nlg", "mc_rnd"):
                    add_point(
                        store,
                        model=f"model-{m}",
                        label=f"ckpt-{c}",
                        d=(c + 1) * 10**9,
                        variant=variant,
                    )
        assert len(store.points()) == 24

    def test_unregistered_checkpoint_rejected(self):
        store = ScoreStore()
        orphan = make_checkpoint("ghost", "c", 5, 5)
        point = ScorePoint(orphan, "b", "nlg", "accuracy", 0.5, 1, 1, 0.1)
        with pytest.raises(StoreError, match="not registered"):
            store.record_score(point)


class TestLoadTrajectory:
    def test_sorted_by_flops(self):
        store = ScoreStore()
        for d, value in [(3 * 10**9, 0.3), (10**9, 0.1), (2 * 10**9, 0.2)]:
            add_point(store, label=f"step-{d}", d=d, value=value)
        trajectory = store.load_trajectory("m", "bench", "nlg", "accuracy")
        assert [v for _, v in trajectory.points] == [0.1, 0.2, 0.3]
        flops = [f for f, _ in trajectory.points]
        assert flops == sorted(flops)

    def test_single_point(self):
        store = ScoreStore()
        add_point(store)
        trajectory = store.load_trajectory("m", "bench", "nlg", "accuracy")
        assert len(trajectory.points) == 1

    def test_models_never_mix(self):
        store = ScoreStore()
        add_point(store, model="a", value=0.1)
        add_point(store, model="b", value=0.9)
        trajectory = store.load_trajectory("a", "bench", "nlg", "accuracy")
        assert [v for _, v in trajectory.points] == [0.1]

    def test_missing_series_errors(self):
        store = ScoreStore()
        add_point(store)
        with pytest.raises(StoreError, match="no points"):
            store.load_trajectory("m", "bench", "mc", "accuracy")

    def test_duplicate_flops_rejected(self):
        store = ScoreStore()
        add_point(store, label="c1", n=2 * 10**9, d=3 * 10**9)
        add_point(store, label="c2", n=3 * 10**9, d=2 * 10**9)  # same product
        with pytest.raises(StoreError, match="duplicate flops"):
            store.load_trajectory("m", "bench", "nlg", "accuracy")


class TestStandardize:
    def test_hand_computed_example(self):
        # mean 2, population sigma sqrt(2/3); hand-derived z-scores
        result = standardize([1.0, 2.0, 3.0])
        assert result == pytest.approx([-1.224744871391589, 0.0, 1.224744871391589], abs=1e-12)

    def test_output_moments(self):
        rng = random.Random(7)
        series = [rng.uniform(-5, 5) for _ in range(50)]
        z = standardize(series)
        mean = sum(z) / len(z)
        var = sum((v - mean) ** 2 for v in z) / len(z)
        assert abs(mean) < 1e-12
        assert abs(var - 1.0) < 1e-12

    def test_idempotent_on_image(self):
        z = standardize([0.2, 0.4, 0.9, 1.4])
        assert standardize(z) == pytest.approx(z, abs=1e-12)

    def test_constant_series_errors(self):
        with pytest.raises(ValueError, match="constant"):
            standardize([5.0, 5.0, 5.0])

    def test_affine_invariance(self):
        rng = random.Random(21)
        for _ in range(100):
            series = [rng.uniform(-10, 10) for _ in range(rng.randrange(2, 12))]
            if len(set(series)) < 2:
                continue
            scale = rng.uniform(0.1, 50.0)
            shift = rng.uniform(-100, 100)
            transformed = [scale * x + shift for x in series]
            base = standardize(series)
            assert standardize(transformed) == pytest.approx(base, abs=1e-9)


class TestStorePersistence:
    def test_export_import_identity(self, tmp_path):
        store = ScoreStore()
        for m in range(2):
            for c in range(3):
                add_point(
                    store,
                    model=f"model-{m}",
                    label=f"ckpt-{c}",
                    d=(c + 1) * 10**9,
                    value=0.1 * (c + 1) + m,
                    wall=0.125 * (c + 1),
                )
        path = tmp_path / "scores.csv"
        store.save(path)
        reloaded = ScoreStore.load(path)
        assert reloaded.points() == store.points()
        # byte-stable rerun
        second_path = tmp_path / "scores2.csv"
        reloaded.save(second_path)
        assert second_path.read_bytes() == path.read_bytes()

    def test_header_mismatch_names_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["model_id", "surprise"])
            writer.writerow(["m", "x"])
        with pytest.raises(StoreError, match="surprise"):
            import_scores(path)

    def test_nan_value_rejected_with_row(self, tmp_path):
        path = tmp_path / "nan.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(STORE_COLUMNS)
            writer.writerow(["m", "c", 10, 10, 600, "b", "nlg", "accuracy", "NaN", 1, 1, 0.1])
        with pytest.raises(StoreError, match="row 2"):
            import_scores(path)

    def test_non_numeric_value_rejected(self, tmp_path):
        path = tmp_path / "text.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(STORE_COLUMNS)
            writer.writerow(["m", "c", 10, 10, 600, "b", "nlg", "accuracy", "high", 1, 1, 0.1])
        with pytest.raises(StoreError, match="row 2"):
            import_scores(path)

    def test_inconsistent_flops_rejected(self, tmp_path):
        path = tmp_path / "flops.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(STORE_COLUMNS)
            writer.writerow(["m", "c", 10, 10, 601, "b", "nlg", "accuracy", 0.5, 1, 1, 0.1])
        with pytest.raises(StoreError, match="6\\*N\\*D"):
            import_scores(path)

    def test_one_row_csv(self, tmp_path):
        path = tmp_path / "one.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(STORE_COLUMNS)
            writer.writerow(["m", "c", 10, 10, 600, "b", "nlg", "accuracy", 0.5, 1, 1, 0.1])
        points = import_scores(path)
        assert len(points) == 1
        assert points[0].checkpoint.flops == 600


class TestAlignedSeries:
    def test_common_labels_ordered_by_flops(self):
        store = ScoreStore()
        for c in (1, 2, 3):
            add_point(store, label=f"ckpt-{c}", d=c * 10**9, variant="nlg", value=c * 0.1)
        for c in (2, 3, 4):
            add_point(store, label=f"ckpt-{c}", d=c * 10**9, variant="mc_rnd", value=c * 1.0)
        xs, ys, labels = store.aligned_series(
            "m", ("bench", "mc_rnd", "accuracy"), ("bench", "nlg", "accuracy")
        )
        assert labels == ["ckpt-2", "ckpt-3"]
        assert xs == [2.0, 3.0]
        assert ys == [pytest.approx(0.2), pytest.approx(0.3)]


def test_checkpoint_registry_loader(tmp_path):
    path = tmp_path / "registry.csv"
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(REGISTRY_COLUMNS)
        writer.writerow(["model-a", "step1000", 10**9, 2 * 10**10])
        writer.writerow(["model-a", "step2000", 10**9, 4 * 10**10])
    checkpoints = load_checkpoint_registry(path)
    assert len(checkpoints) == 2
    assert checkpoints[0].flops == 6 * 10**9 * 2 * 10**10
