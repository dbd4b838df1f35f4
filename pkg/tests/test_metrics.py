"""PSNR/SSIM fixtures, symmetry and monotonicity."""

import numpy as np
import pytest

from dp3df.errors import ContractViolation
from dp3df.metrics import EvalReport, psnr, ssim

from oracles import psnr_scalar


class TestPsnr:
    def test_20db_at_mse_001(self):
        a = np.zeros((10, 10), dtype=np.float64)
        b = np.full((10, 10), 0.1, dtype=np.float64)  # MSE = 0.01
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_identical_capped_at_100(self):
        x = np.random.default_rng(0).random((8, 8, 3), dtype=np.float32)
        assert psnr(x, x.copy()) == 100.0

    def test_against_scalar_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.random((6, 7, 3))
        b = rng.random((6, 7, 3))
        assert psnr(a, b) == pytest.approx(psnr_scalar(a, b), abs=1e-9)

    def test_peak_parameter(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 25.5)
        assert psnr(a, b, peak=255.0) == pytest.approx(20.0, abs=1e-9)

    def test_monotone_in_noise_amplitude(self):
        rng = np.random.default_rng(2)
        x = rng.random((32, 32, 3))
        noise = rng.standard_normal(x.shape)
        values = [psnr(x, x + amp * noise) for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            psnr(np.zeros((2, 2)), np.zeros((3, 2)))


class TestSsim:
    def test_identical_is_one(self):
        x = np.random.default_rng(3).random((24, 24, 3), dtype=np.float32)
        assert ssim(x, x.copy()) == pytest.approx(1.0, abs=1e-6)

    def test_symmetric_exactly(self):
        rng = np.random.default_rng(4)
        a = rng.random((20, 20, 3))
        b = rng.random((20, 20, 3))
        assert ssim(a, b) == ssim(b, a)

    def test_inverted_frame_scores_low(self):
        rng = np.random.default_rng(5)
        a = rng.random((32, 32, 3))
        assert ssim(a, 1.0 - a) < 0.2

    def test_constant_offset_luminance_only(self):
        """Constant frames have zero variance, so only the luminance term
        remains: (2ab + C1) / (a^2 + b^2 + C1)."""
        a_val, b_val = 0.4, 0.5
        a = np.full((16, 16), a_val)
        b = np.full((16, 16), b_val)
        c1 = 0.01**2
        want = (2 * a_val * b_val + c1) / (a_val**2 + b_val**2 + c1)
        assert ssim(a, b) == pytest.approx(want, rel=1e-9)

    def test_small_frame_rejected(self):
        with pytest.raises(ContractViolation, match="window"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_bounded(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            a = rng.random((16, 16, 3))
            b = rng.random((16, 16, 3))
            assert -1.0 <= ssim(a, b) <= 1.0


class TestEvalReport:
    def _report(self):
        rep = EvalReport()
        rep.add("seq_0000", 0, 20.0, 0.8)
        rep.add("seq_0000", 1, 22.0, 0.9)
        rep.add("seq_0001", 0, 30.0, 0.7)
        return rep

    def test_means(self):
        rep = self._report()
        assert rep.mean_psnr == pytest.approx(24.0)
        assert rep.mean_ssim == pytest.approx(0.8)
        seq = rep.sequence_means()
        assert seq["seq_0000"][0] == pytest.approx(21.0)
        assert seq["seq_0001"][1] == pytest.approx(0.7)

    def test_csv_layout(self):
        text = self._report().to_csv()
        lines = text.strip().splitlines()
        assert lines[0].startswith("# color_space=rgb")
        assert lines[1] == "sequence,frame,psnr,ssim"
        assert lines[-1].startswith("all,mean,")

    def test_table_renders(self):
        table = self._report().table()
        assert "seq_0000" in table and "mean" in table
