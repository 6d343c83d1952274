"""Metric suite: closed-form PSNR cases, the scalar-loop SSIM oracle, and
per-step curve emission."""

import csv

import numpy as np
import pytest
import torch

from helpers import ssim_reference
from vptr.errors import ShapeMismatchError
from vptr.metrics import (
    MetricReport,
    evaluate_predictions,
    mse,
    per_step_curves,
    psnr,
    ssim,
    write_curves_csv,
)


class TestPointMetrics:
    def test_identity_cases(self):
        x = torch.rand(1, 16, 16)
        assert mse(x, x.clone()) == 0.0
        assert psnr(x, x.clone()) == 100.0
        assert abs(ssim(x, x.clone()) - 1.0) < 1e-9

    def test_constant_offset_closed_form(self):
        """Unit-range offset of 0.1 everywhere: MSE 0.01, PSNR 20 dB."""
        x = torch.full((1, 16, 16), 0.3, dtype=torch.float64)
        y = x + 0.1
        assert abs(mse(x, y) - 0.01) < 1e-12
        assert abs(psnr(x, y, peak=1.0) - 20.0) < 1e-9

    def test_psnr_peak_scaling(self):
        x = torch.zeros(1, 12, 12)
        y = x + 0.2
        assert psnr(x, y, peak=2.0) - psnr(x, y, peak=1.0) == pytest.approx(
            20.0 * np.log10(2.0), abs=1e-9
        )

    def test_psnr_monotone_in_noise(self):
        torch.manual_seed(0)
        x = torch.rand(1, 16, 16) * 0.5 + 0.25
        values = []
        noise = torch.randn_like(x)
        for amp in (0.01, 0.03, 0.09, 0.27):
            values.append(psnr(x, x + amp * noise))
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mse(torch.zeros(3, 3), torch.zeros(4, 4))
        with pytest.raises(ShapeMismatchError):
            ssim(torch.zeros(16, 16), torch.zeros(17, 17))


class TestSSIM:
    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.random((14, 14))
        y = np.clip(x + rng.normal(0, 0.1, size=(14, 14)), 0, 1)
        assert abs(ssim(x, y) - ssim_reference(x, y)) < 1e-5

    def test_multichannel_averages(self):
        rng = np.random.default_rng(2)
        x = rng.random((2, 12, 12))
        y = rng.random((2, 12, 12))
        assert abs(ssim(x, y) - ssim_reference(x, y)) < 1e-5

    def test_range(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            x = rng.random((12, 12))
            y = rng.random((12, 12))
            v = ssim(x, y)
            assert -1.0 <= v <= 1.0
            assert v < 1.0  # distinct non-constant images never hit 1

    def test_too_small_images_rejected(self):
        with pytest.raises(ShapeMismatchError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestReport:
    def _report(self):
        torch.manual_seed(4)
        truth = torch.rand(3, 2, 1, 16, 16)
        pred = (truth + 0.05 * torch.randn_like(truth)).clamp(0, 1)
        return truth, pred, evaluate_predictions(truth, pred)

    def test_shapes_and_cap(self):
        truth, pred, report = self._report()
        assert report.mse.shape == (3, 2)
        same = evaluate_predictions(truth, truth)
        assert (same.psnr == 100.0).all()
        assert np.allclose(same.ssim, 1.0)

    def test_flat_curves_for_identical_steps(self):
        truth = torch.rand(2, 1, 1, 16, 16).repeat(1, 3, 1, 1, 1)
        pred = (truth + 0.1).clamp(0, 1)
        report = evaluate_predictions(truth, pred)
        rows = per_step_curves(report)
        assert len(rows) == 3
        assert len({round(r["psnr_mean"], 9) for r in rows}) == 1

    def test_row_count_matches_horizon(self):
        _, _, report = self._report()
        assert len(per_step_curves(report)) == 2

    def test_means_match_independent_scalar_pass(self):
        truth, pred, report = self._report()
        rows = per_step_curves(report)
        for step, row in enumerate(rows):
            vals = [mse(truth[i, step], pred[i, step]) for i in range(truth.shape[0])]
            assert abs(row["mse_mean"] - sum(vals) / len(vals)) < 1e-6
            p_vals = [psnr(truth[i, step], pred[i, step]) for i in range(truth.shape[0])]
            assert abs(row["psnr_mean"] - sum(p_vals) / len(p_vals)) < 1e-6

    def test_csv_schema(self, tmp_path):
        _, _, report = self._report()
        path = tmp_path / "curves.csv"
        write_curves_csv(report, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "mse_mean", "mse_std", "psnr_mean", "psnr_std",
                           "ssim_mean", "ssim_std"]
        assert len(rows) == 1 + report.num_steps
        assert [r[0] for r in rows[1:]] == ["1", "2"]

    def test_horizon_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            evaluate_predictions(torch.rand(1, 3, 1, 16, 16), torch.rand(1, 2, 1, 16, 16))
