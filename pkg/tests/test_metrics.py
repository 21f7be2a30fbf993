import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depth_halluc import datasets, metrics
from depth_halluc.errors import ValidationError

# 4-pixel fixture, hand-worked: d = [0.2, 0, -0.225, 0.19],
# ratios = [1.5, 1.0, 1.9, 1.2345679].
GT4 = np.array([0.6, 0.5, 0.25, 1.0])
PRED4 = np.array([0.4, 0.5, 0.475, 0.81])


class TestPixelBattery:
    def test_identical_images_are_perfect(self):
        x = np.random.default_rng(0).uniform(0.1, 1.0, (4, 4))
        assert metrics.abs_diff(x, x) == 0.0
        assert metrics.l1_norm(x, x) == 0.0
        assert metrics.l2_norm(x, x) == 0.0
        assert metrics.rmse(x, x) == 0.0
        for k in (1, 2, 3):
            assert metrics.threshold_accuracy(x, x, k) == 100.0

    def test_abs_diff_hand_case(self):
        assert metrics.abs_diff([0.5, 0.5], [0.4, 0.6]) == pytest.approx(0.1)

    def test_rmse_hand_case(self):
        assert metrics.rmse([0.5, 0.5], [0.5, 0.7]) == pytest.approx(
            math.sqrt(0.04 / 2), abs=1e-12
        )

    def test_four_pixel_fixture_exact(self):
        assert metrics.abs_diff(GT4, PRED4) == pytest.approx(0.15375, abs=1e-9)
        assert metrics.l1_norm(GT4, PRED4) == pytest.approx(0.615 / 2.35, abs=1e-9)
        assert metrics.l2_norm(GT4, PRED4) == pytest.approx(
            math.sqrt(0.126725), abs=1e-9
        )
        assert metrics.rmse(GT4, PRED4) == pytest.approx(
            math.sqrt(0.126725 / 4), abs=1e-9
        )
        assert metrics.threshold_accuracy(GT4, PRED4, 1) == pytest.approx(50.0, abs=1e-9)
        assert metrics.threshold_accuracy(GT4, PRED4, 2) == pytest.approx(75.0, abs=1e-9)
        assert metrics.threshold_accuracy(GT4, PRED4, 3) == pytest.approx(100.0, abs=1e-9)

    def test_threshold_example_one_outlier(self):
        gt = np.array([1.0, 1.0, 1.0, 1.0])
        pred = np.array([1.0, 1.3, 1.0, 1.0])
        assert metrics.threshold_accuracy(gt, pred, 1) == 75.0
        assert metrics.threshold_accuracy(gt, pred, 2) == 100.0

    def test_abs_rel_variant(self):
        assert metrics.abs_rel_diff([0.5, 1.0], [0.4, 1.2]) == pytest.approx(
            (0.1 / 0.5 + 0.2 / 1.0) / 2
        )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            metrics.abs_diff(np.zeros(2), np.zeros(3))

    def test_nonpositive_inputs_rejected_for_ratios(self):
        with pytest.raises(ValidationError):
            metrics.threshold_accuracy([0.0, 1.0], [1.0, 1.0], 1)

    def test_bad_exponent_rejected(self):
        with pytest.raises(ValidationError):
            metrics.threshold_accuracy([1.0], [1.0], 4)

    def test_to_positive_depth_clamps(self):
        mapped = metrics.to_positive_depth(np.array([-1.0, -0.5, 0.0, 1.0]))
        assert mapped[0] == metrics.POSITIVE_EPS
        assert mapped[1] == pytest.approx(0.25)
        assert mapped[3] == 1.0

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_delta_monotone_and_jensen(self, seed):
        rng = np.random.default_rng(seed)
        gt = metrics.to_positive_depth(rng.uniform(-1, 1, (6, 6)))
        pred = metrics.to_positive_depth(rng.uniform(-1, 1, (6, 6)))
        d1 = metrics.threshold_accuracy(gt, pred, 1)
        d2 = metrics.threshold_accuracy(gt, pred, 2)
        d3 = metrics.threshold_accuracy(gt, pred, 3)
        assert 0.0 <= d1 <= d2 <= d3 <= 100.0
        assert metrics.rmse(gt, pred) ** 2 >= metrics.abs_diff(gt, pred) ** 2 - 1e-12
        assert metrics.rmse(gt, pred) <= np.abs(gt - pred).max() + 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        gt = rng.uniform(0.1, 1.0, 16)
        pred = rng.uniform(0.1, 1.0, 16)
        perm = rng.permutation(16)
        for fn in (metrics.abs_diff, metrics.l1_norm, metrics.l2_norm, metrics.rmse):
            assert fn(gt, pred) == pytest.approx(fn(gt[perm], pred[perm]))


class TestFrechet:
    def test_identical_sets_are_zero(self):
        x = np.random.default_rng(0).normal(size=(20, 6))
        assert abs(metrics.frechet_distance(x, x)) <= 1e-6

    def test_one_dimensional_closed_form(self):
        real = np.array([[-1.0], [1.0]])
        fake = np.array([[0.0], [2.0]])
        # Mean difference 1, equal variances: distance is exactly 1.
        assert metrics.frechet_distance(real, fake) == pytest.approx(1.0, abs=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(30, 5))
        y = rng.normal(loc=0.3, size=(25, 5))
        assert metrics.frechet_distance(x, y) == pytest.approx(
            metrics.frechet_distance(y, x), abs=1e-9
        )

    def test_nonnegative_on_random_sets(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.normal(size=(12, 4))
            y = rng.normal(size=(15, 4))
            assert metrics.frechet_distance(x, y) >= -1e-9

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            metrics.frechet_distance(np.zeros((3, 2)), np.zeros((3, 3)))

    def test_too_few_vectors_rejected(self):
        with pytest.raises(ValidationError):
            metrics.frechet_distance(np.zeros((1, 2)), np.zeros((3, 2)))

    def test_matches_scalar_gaussian_formula(self):
        rng = np.random.default_rng(3)
        x = rng.normal(loc=0.0, scale=1.0, size=(400, 1))
        y = rng.normal(loc=0.7, scale=1.5, size=(300, 1))
        mu_d = x.mean() - y.mean()
        vx, vy = x.var(ddof=1), y.var(ddof=1)
        expected = mu_d**2 + vx + vy - 2 * math.sqrt(vx * vy)
        assert metrics.frechet_distance(x, y) == pytest.approx(expected, abs=1e-9)


class TestExtractor:
    def test_fixed_length_and_deterministic(self):
        ex = metrics.RandomProjectionExtractor(dim=16, seed=3)
        rng = np.random.default_rng(0)
        img = rng.uniform(-1, 1, (8, 8, 3))
        v1 = ex(img)
        assert v1.shape == (16,)
        ex2 = metrics.RandomProjectionExtractor(dim=16, seed=3)
        assert np.array_equal(v1, ex2(img))

    def test_shape_binding_enforced(self):
        ex = metrics.RandomProjectionExtractor(dim=4, seed=0)
        ex(np.zeros((8, 8, 3)))
        with pytest.raises(ValidationError):
            ex(np.zeros((4, 4, 3)))


class TestEvaluateSet:
    def _gray_paired_set(self, n=4, size=16, seed=0):
        # Depth equals the (grayscale) rgb, so an identity generator is the
        # oracle: every metric should report its perfect value.
        rng = np.random.default_rng(seed)
        samples = []
        for i in range(n):
            gray = rng.uniform(-0.9, 0.9, (size, size, 1)).astype(np.float32)
            img = np.repeat(gray, 3, axis=2)
            samples.append(
                datasets.PairedSample(rgb=img, depth=img.copy(), identity="000", name=f"s{i}")
            )
        return samples

    def test_passthrough_generator_is_perfect(self):
        samples = self._gray_paired_set()
        report = metrics.evaluate_set(samples, lambda rgb: rgb)
        assert report.abs_diff == 0.0
        assert report.l1_norm == 0.0
        assert report.l2_norm == 0.0
        assert report.rmse == 0.0
        assert report.delta_1 == report.delta_2 == report.delta_3 == 100.0
        assert abs(report.fid) <= 1e-6
        assert report.sample_count == 4

    def test_single_image_report_equals_per_image_values(self):
        samples = self._gray_paired_set(n=1)
        noisy = lambda rgb: np.clip(rgb + 0.05, -1, 1)  # noqa: E731
        report, rows = metrics.evaluate_set_detailed(samples, noisy)
        assert report.fid is None
        assert report.abs_diff == pytest.approx(rows[0]["abs_diff"])
        assert report.rmse == pytest.approx(rows[0]["rmse"])

    def test_empty_set_rejected(self):
        with pytest.raises(ValidationError):
            metrics.evaluate_set([], lambda rgb: rgb)

    def test_baseline_is_pixelwise_mean(self):
        samples = self._gray_paired_set(n=3)
        baseline = metrics.constant_mean_depth_baseline(samples)
        expected = np.mean([s.depth for s in samples], axis=0)
        assert np.allclose(baseline, expected)
