import numpy as np
import pytest

from segrel import LabelMap, LogitStack, accumulate
from segrel.calibration import (
    TemperatureParams,
    apply_temperature,
    ece,
    ece_pooled,
    fit_temperature,
    relative_ece_improvement,
)
from segrel.errors import EmptyInputError

from conftest import calibrated_pixels, random_label_map


class TestApplyTemperature:
    def test_t1_is_plain_softmax(self, np_rng):
        logits = LogitStack(np_rng.standard_normal((3, 4, 5)).astype(np.float32))
        probs = apply_temperature(logits, TemperatureParams.scalar(1.0))
        z = logits.data - logits.data.max(axis=2, keepdims=True)
        expected = np.exp(z) / np.exp(z).sum(axis=2, keepdims=True)
        assert np.allclose(probs.data, expected, atol=1e-6)

    def test_closed_form_two_class(self):
        logits = LogitStack(np.array([[[2.0, 0.0]]], dtype=np.float32))
        probs = apply_temperature(logits, TemperatureParams.scalar(2.0))
        sigma = 1.0 / (1.0 + np.exp(-1.0))
        assert probs.data[0, 0, 0] == pytest.approx(sigma, abs=1e-6)
        assert probs.data[0, 0, 1] == pytest.approx(1.0 - sigma, abs=1e-6)

    def test_argmax_invariant_scalar_and_per_class(self, np_rng):
        logits = LogitStack(np_rng.standard_normal((6, 7, 4)).astype(np.float32) * 3)
        raw_argmax = logits.data.argmax(axis=2)
        for params in (
            TemperatureParams.scalar(0.2),
            TemperatureParams.scalar(5.0),
            TemperatureParams.per_class(np_rng.uniform(0.3, 4.0, size=4)),
        ):
            probs = apply_temperature(logits, params)
            assert np.array_equal(probs.data.argmax(axis=2), raw_argmax)

    def test_miou_unchanged_by_calibration(self, np_rng):
        logits = LogitStack(np_rng.standard_normal((8, 8, 3)).astype(np.float32))
        gt = random_label_map(np_rng, 8, 8, 3)
        pred_raw = LabelMap(logits.data.argmax(axis=2).astype(np.uint8))
        probs = apply_temperature(logits, TemperatureParams.scalar(2.5))
        pred_cal = LabelMap(probs.data.argmax(axis=2).astype(np.uint8))
        assert np.array_equal(
            accumulate(pred_raw, gt, 3).counts, accumulate(pred_cal, gt, 3).counts
        )

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            TemperatureParams.scalar(0.0)
        with pytest.raises(ValueError):
            TemperatureParams.per_class([1.0, -2.0])

    def test_per_class_length_check(self, np_rng):
        logits = LogitStack(np_rng.standard_normal((2, 2, 3)).astype(np.float32))
        with pytest.raises(ValueError):
            apply_temperature(logits, TemperatureParams.per_class([1.0, 2.0]))


class TestEce:
    def test_perfectly_confident_and_correct(self):
        probs_data = np.zeros((1, 4, 3), dtype=np.float32)
        probs_data[:, :, 1] = 1.0
        from segrel import ProbStack

        probs = ProbStack(probs_data)
        gt = LabelMap(np.full((1, 4), 1, dtype=np.uint8))
        assert ece(probs, gt).ece == 0.0

    def test_hand_binning(self):
        from segrel import ProbStack

        probs = ProbStack(np.array([[[0.8, 0.2], [0.6, 0.4]]], dtype=np.float32))
        gt = LabelMap(np.array([[0, 1]], dtype=np.uint8))  # first correct, second wrong
        report = ece(probs, gt, bins=1)
        assert report.ece == pytest.approx(0.2, abs=1e-6)

    def test_calibrated_sampler_converges(self, np_rng):
        n = 10**5
        conf = np_rng.uniform(0.5, 1.0, size=n).astype(np.float32)
        correct = np_rng.random(n) < conf
        probs_data = np.stack([conf, 1 - conf], axis=1).reshape(1, n, 2)
        labels = np.where(correct, 0, 1).astype(np.uint8).reshape(1, n)
        from segrel import ProbStack

        report = ece(ProbStack(probs_data), LabelMap(labels), bins=15)
        assert report.ece < 0.02

    def test_weights_sum_to_one(self, np_rng):
        from segrel import ProbStack

        n = 500
        p = np_rng.dirichlet(np.ones(3), size=n).astype(np.float32).reshape(1, n, 3)
        gt = LabelMap(np_rng.integers(0, 3, size=(1, n)).astype(np.uint8))
        report = ece(ProbStack(p), gt, bins=10)
        assert sum(b.weight for b in report.per_bin) == pytest.approx(1.0, abs=1e-9)

    def test_empty_bins_do_not_change_ece(self, np_rng):
        from segrel import ProbStack

        n = 200
        conf = np_rng.uniform(0.91, 0.99, size=n).astype(np.float32)
        probs = ProbStack(np.stack([conf, 1 - conf], axis=1).reshape(1, n, 2))
        gt = LabelMap(np_rng.integers(0, 2, size=(1, n)).astype(np.uint8))
        # all pixels fall in the top bin of the 10-bin layout, so pooling
        # them into a single bin yields the same value
        assert ece(probs, gt, bins=10).ece == pytest.approx(ece(probs, gt, bins=1).ece, abs=1e-12)

    def test_all_ignored_is_empty_input(self):
        from segrel import ProbStack

        probs = ProbStack(np.full((1, 2, 2), 0.5, dtype=np.float32))
        gt = LabelMap(np.full((1, 2), 255, dtype=np.uint8))
        with pytest.raises(EmptyInputError):
            ece(probs, gt)

    def test_bins_lower_bound(self):
        from segrel import ProbStack

        probs = ProbStack(np.full((1, 2, 2), 0.5, dtype=np.float32))
        gt = LabelMap(np.zeros((1, 2), dtype=np.uint8))
        with pytest.raises(ValueError):
            ece(probs, gt, bins=0)


class TestFitTemperature:
    def test_recovers_identity(self, np_rng):
        pair = calibrated_pixels(np_rng, 200_000, 4, scale=1.0)
        params = fit_temperature([pair])
        assert params.values[0] == pytest.approx(1.0, abs=0.02)

    def test_recovers_planted_three(self, np_rng):
        pair = calibrated_pixels(np_rng, 200_000, 4, scale=3.0)
        params = fit_temperature([pair])
        assert params.values[0] == pytest.approx(3.0, rel=0.05)

    def test_never_worse_than_identity(self, np_rng):
        from segrel.calibration import _chunked_nll, _collect_pixels

        pairs = [calibrated_pixels(np_rng, 5_000, 3, scale=np_rng.uniform(0.5, 2)) for _ in range(3)]
        params = fit_temperature(pairs)
        rows, labels = _collect_pixels(pairs, 1 << 20)
        assert _chunked_nll(rows, labels, float(params.values[0])) <= _chunked_nll(
            rows, labels, 1.0
        ) + 1e-9

    def test_per_class_overconfident_class(self, np_rng):
        # class-0-argmax pixels carry logits scaled by 3; class-1 pixels calibrated
        over = calibrated_pixels(np_rng, 60_000, 2, scale=3.0, bias=[0.8, 0.2])
        cal = calibrated_pixels(np_rng, 60_000, 2, scale=1.0, bias=[0.2, 0.8])
        params = fit_temperature([over, cal], mode="per_class")
        assert params.values[0] > 1.05
        assert params.values[1] == pytest.approx(1.0, abs=0.1)

    def test_per_class_matches_scalar_when_single_class(self, np_rng):
        # every pixel's argmax is class 0, so the per-class fit for class 0
        # sees exactly the scalar fit's pixel set
        pair = calibrated_pixels(np_rng, 40_000, 2, scale=2.0, bias=[1.0, 0.0])
        scalar = fit_temperature([pair], mode="scalar")
        per_class = fit_temperature([pair], mode="per_class")
        assert per_class.values[0] == pytest.approx(scalar.values[0], abs=1e-6)
        assert per_class.values[1] == 1.0  # no pixels, defaults to identity

    def test_empty_set(self):
        with pytest.raises(EmptyInputError):
            fit_temperature([])

    def test_loader_form(self, np_rng):
        pair = calibrated_pixels(np_rng, 10_000, 3, scale=2.0)
        direct = fit_temperature([pair])
        lazy = fit_temperature([lambda: pair])
        assert lazy.values[0] == direct.values[0]

    def test_subsampling_is_deterministic(self, np_rng):
        pair = calibrated_pixels(np_rng, 50_000, 3, scale=1.7)
        a = fit_temperature([pair], max_pixels=1 << 12)
        b = fit_temperature([pair], max_pixels=1 << 12)
        assert a.values[0] == b.values[0]


class TestRelativeImprovement:
    def test_paper_worked_example(self):
        assert relative_ece_improvement(0.4, 0.2) == pytest.approx(50.0)

    def test_no_change(self):
        assert relative_ece_improvement(0.3, 0.3) == 0.0

    def test_regression_is_negative(self):
        assert relative_ece_improvement(0.2, 0.3) == pytest.approx(-50.0)

    def test_zero_before(self):
        with pytest.raises(ZeroDivisionError):
            relative_ece_improvement(0.0, 0.1)


def test_ece_pooled_matches_concatenation(np_rng):
    from segrel import ProbStack

    def block(n):
        conf = np_rng.uniform(0.4, 1.0, size=n).astype(np.float32)
        probs = ProbStack(np.stack([conf, 1 - conf], axis=1).reshape(1, n, 2))
        gt = LabelMap(np_rng.integers(0, 2, size=(1, n)).astype(np.uint8))
        return probs, gt

    a, b = block(300), block(500)
    pooled = ece_pooled([a, b], bins=12)
    concat_probs = np.concatenate([a[0].data, b[0].data], axis=1)
    concat_gt = np.concatenate([a[1].data, b[1].data], axis=1)
    from segrel import ProbStack as PS

    direct = ece(PS(concat_probs), LabelMap(concat_gt), bins=12)
    assert pooled.ece == pytest.approx(direct.ece, abs=1e-12)
