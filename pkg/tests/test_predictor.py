import random

import numpy as np
import pytest

from proxybench.predictor import (
    PredictionError,
    fit_window,
    predict_point,
    prediction_report,
    rolling_predict,
)


class TestFitWindow:
    def test_exact_collinearity(self):
        model = fit_window([(0.1, 0.2), (0.2, 0.4), (0.3, 0.6)])
        assert model.slope == pytest.approx(2.0, abs=1e-12)
        assert model.intercept == pytest.approx(0.0, abs=1e-12)
        assert model.fit_residual_rms == pytest.approx(0.0, abs=1e-12)

    def test_zero_variance_fallback(self):
        model = fit_window([(0.5, 0.1), (0.5, 0.2), (0.5, 0.3)])
        assert model.slope == 0.0
        assert model.intercept == pytest.approx(0.2)

    def test_against_closed_form_oracle(self):
        rng = random.Random(42)
        for _ in range(100):
            xs = [rng.uniform(-2, 2) for _ in range(3)]
            if max(xs) - min(xs) < 1e-6:
                continue
            ys = [rng.uniform(-2, 2) for _ in range(3)]
            model = fit_window(list(zip(xs, ys)))
            slope_ref, intercept_ref = np.polyfit(xs, ys, 1)
            assert model.slope == pytest.approx(slope_ref, abs=1e-12)
            assert model.intercept == pytest.approx(intercept_ref, abs=1e-12)

    def test_reproduces_training_points_when_collinear(self):
        window = [(0.1, 0.3), (0.2, 0.5), (0.3, 0.7)]
        model = fit_window(window)
        assert model.fit_residual_rms == pytest.approx(0.0, abs=1e-12)
        for x, y in window:
            assert predict_point(model, x) == pytest.approx(y, abs=1e-12)

    def test_wrong_window_size(self):
        with pytest.raises(PredictionError):
            fit_window([(0.1, 0.2), (0.2, 0.4)])

    def test_non_finite_rejected(self):
        with pytest.raises(PredictionError):
            fit_window([(0.1, 0.2), (0.2, float("nan")), (0.3, 0.6)])


class TestPredictPoint:
    def test_arithmetic(self):
        model = fit_window([(0.0, 0.0), (1.0, 2.0), (2.0, 4.0)])
        assert predict_point(model, 0.4) == pytest.approx(0.8, abs=1e-12)

    def test_clamp(self):
        model = fit_window([(0.0, 0.0), (1.0, 2.0), (2.0, 4.0)])
        assert predict_point(model, 0.65, clamp=(0.0, 1.0)) == 1.0
        assert predict_point(model, -0.5, clamp=(0.0, 1.0)) == 0.0

    def test_constant_model(self):
        model = fit_window([(0.5, 0.7), (0.5, 0.7), (0.5, 0.7)])
        for x in (-5.0, 0.0, 5.0):
            assert predict_point(model, x) == pytest.approx(0.7)


class TestRollingPredict:
    def test_collinear_throughout_is_exact(self):
        nlu = [0.1 * i for i in range(1, 9)]
        nlg = [2.0 * x for x in nlu]
        points = rolling_predict(nlu, nlg)
        assert len(points) == 5
        assert all(p.abs_error <= 1e-10 for p in points)

    def test_length_four_gives_one_prediction(self):
        points = rolling_predict([0.1, 0.2, 0.3, 0.4], [0.2, 0.3, 0.5, 0.6])
        assert len(points) == 1
        assert points[0].index == 3

    def test_matches_stepwise_simulation(self):
        # independent simulation of the fit/predict loop on six noisy points
        rng = random.Random(17)
        nlu = [rng.uniform(0, 1) for _ in range(6)]
        nlg = [rng.uniform(0, 1) for _ in range(6)]
        points = rolling_predict(nlu, nlg)
        for offset, point in enumerate(points):
            i = offset + 3
            slope, intercept = np.polyfit(nlu[i - 3 : i], nlg[i - 3 : i], 1)
            expected = slope * nlu[i] + intercept
            assert point.nlg_predicted == pytest.approx(expected, abs=1e-10)
            assert point.abs_error == pytest.approx(abs(expected - nlg[i]), abs=1e-10)

    def test_no_lookahead(self):
        rng = random.Random(23)
        nlu = [rng.uniform(0, 1) for _ in range(8)]
        nlg = [rng.uniform(0, 1) for _ in range(8)]
        clean = rolling_predict(nlu, nlg)
        sentinel = 1e12
        for i in range(3, 8):
            poisoned = nlg[:i] + [sentinel] * (8 - i)
            poisoned_points = rolling_predict(nlu, poisoned)
            target = next(p for p in poisoned_points if p.index == i)
            reference = next(p for p in clean if p.index == i)
            assert target.nlg_predicted == reference.nlg_predicted

    def test_too_short_errors(self):
        with pytest.raises(PredictionError):
            rolling_predict([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])

    def test_cap_flags_large_errors(self):
        nlu = [1.0, 2.0, 3.0, 4.0]
        nlg = [1.0, 2.0, 3.0, 500.0]
        points = rolling_predict(nlu, nlg)
        assert points[0].capped is True

    def test_affine_equivariance(self):
        rng = random.Random(31)
        nlu = [rng.uniform(0, 1) for _ in range(7)]
        nlg = [rng.uniform(0, 1) for _ in range(7)]
        a, b = 2.5, -0.75
        base = rolling_predict(nlu, nlg)
        scaled = rolling_predict(nlu, [a * y + b for y in nlg])
        for p_base, p_scaled in zip(base, scaled):
            assert p_scaled.nlg_predicted == pytest.approx(
                a * p_base.nlg_predicted + b, abs=1e-9
            )
            assert p_scaled.abs_error == pytest.approx(abs(a) * p_base.abs_error, abs=1e-9)


class TestPredictionReport:
    def _linear_fragments(self, n_models=3, n_points=8):
        fragments = {}
        for m in range(n_models):
            scale = m + 1.0
            nlu = [0.05 * (i + 1) for i in range(n_points)]
            nlg = [scale * x for x in nlu]
            fragments[f"model-{m}"] = rolling_predict(nlu, nlg, model_id=f"model-{m}")
        return fragments

    def test_perfectly_linear_models(self):
        report = prediction_report(self._linear_fragments())
        assert report.mean_abs_error <= 1e-10
        assert report.spearman_rankings is not None
        assert report.spearman_rankings[0] == 1.0
        assert report.capped_count == 0

    def test_capped_points_excluded_from_error_mean(self):
        fragments = self._linear_fragments()
        blowup_nlu = [1.0, 2.0, 3.0, 4.0, 5.0]
        blowup_nlg = [1.0, 2.0, 3.0, 1000.0, -2000.0]
        fragments["model-blowup"] = rolling_predict(
            blowup_nlu, blowup_nlg, model_id="model-blowup"
        )
        report = prediction_report(fragments)
        assert report.capped_count == 2
        assert report.mean_abs_error <= 1e-10  # capped points do not pollute the mean

    def test_fewer_than_three_models_omits_ranking(self):
        fragments = dict(list(self._linear_fragments().items())[:2])
        report = prediction_report(fragments)
        assert report.spearman_rankings is None
        assert report.mean_abs_error <= 1e-10
