import math

import numpy as np
import pytest
from scipy import stats

from core.compander_service import CompanderService
from core.exceptions import DomainError
from models.quantizer import GaussianSource, QuantizerModel


class TestCompressExpand:

    def test_compress_fixed_points(self, src):
        assert CompanderService.compress(0.0, src) == 0.5
        assert CompanderService.compress(-np.inf, src) == 0.0
        assert CompanderService.compress(np.inf, src) == 1.0

    def test_compress_matches_normal_cdf_with_tripled_variance(self, src):
        assert CompanderService.compress(math.sqrt(3.0), src) == pytest.approx(0.841345, abs=1e-6)
        lam = np.linspace(-5, 5, 41)
        np.testing.assert_allclose(CompanderService.compress(lam, src),
                                   stats.norm.cdf(lam, scale=math.sqrt(3.0)), atol=1e-14)

    def test_compress_is_odd_around_one_half(self):
        src = GaussianSource(2.5)
        lam = np.linspace(0, 20, 50)
        np.testing.assert_allclose(CompanderService.compress(-lam, src),
                                   1.0 - CompanderService.compress(lam, src), atol=1e-15)

    def test_expand_values(self, src):
        assert CompanderService.expand(0.5, src) == 0.0
        assert CompanderService.expand(0.25, src) == pytest.approx(
            math.sqrt(3.0) * stats.norm.ppf(0.25), abs=1e-9)

    @pytest.mark.parametrize("sigma0", [0.1, 1.0, 7.0])
    def test_round_trip(self, sigma0):
        src = GaussianSource(sigma0)
        lam = np.linspace(-8 * sigma0, 8 * sigma0, 101)
        lam = lam[lam != 0.0]
        back = CompanderService.expand(CompanderService.compress(lam, src), src)
        np.testing.assert_allclose(back, lam, rtol=1e-9)
        assert CompanderService.expand(CompanderService.compress(1.234, src), src) == pytest.approx(1.234, abs=1e-9)

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5])
    def test_expand_outside_open_interval_raises(self, src, u):
        with pytest.raises(DomainError):
            CompanderService.expand(u, src)

    def test_qpdf_is_derivative_of_compressor(self):
        src = GaussianSource(0.7)
        lam = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(CompanderService.qpdf(lam, src),
                                   stats.norm.pdf(lam, scale=math.sqrt(3.0) * 0.7), rtol=1e-12)
        h = 1e-6
        numeric = (CompanderService.compress(lam + h, src) - CompanderService.compress(lam - h, src)) / (2 * h)
        np.testing.assert_allclose(CompanderService.qpdf(lam, src), numeric, rtol=1e-6)

    def test_invalid_source(self):
        with pytest.raises(DomainError):
            GaussianSource(0.0)
        with pytest.raises(DomainError):
            GaussianSource(-1.0)


class TestDesignQuantizer:

    @pytest.mark.parametrize("B", [1, 2, 3, 6, 10])
    def test_structure(self, src, B):
        q = CompanderService.design_quantizer(B, src)
        n = 2 ** B
        assert q.thresholds.size == n + 1 and q.levels.size == n
        assert q.alpha == 2.0 ** -B
        assert q.thresholds[0] == -np.inf and q.thresholds[-1] == np.inf
        assert np.all(np.diff(q.thresholds) > 0)
        assert np.all(q.thresholds[:-1] <= q.levels) and np.all(q.levels < q.thresholds[1:])

    def test_symmetry_is_exact(self, q4):
        np.testing.assert_array_equal(q4.thresholds, -q4.thresholds[::-1])
        np.testing.assert_array_equal(q4.levels, -q4.levels[::-1])
        assert q4.thresholds[8] == 0.0

    def test_compressed_positions(self, q4, src):
        k = np.arange(1, q4.n_bins + 1)
        np.testing.assert_allclose(CompanderService.compress(q4.thresholds, src),
                                   np.arange(q4.n_bins + 1) * q4.alpha, atol=1e-13)
        np.testing.assert_allclose(CompanderService.compress(q4.levels, src),
                                   (k - 0.5) * q4.alpha, atol=1e-13)

    @pytest.mark.parametrize("B", [0, 17, 2.5])
    def test_bits_out_of_range(self, src, B):
        with pytest.raises(DomainError):
            CompanderService.design_quantizer(B, src)

    def test_arrays_are_read_only(self, q3):
        with pytest.raises(ValueError):
            q3.levels[0] = 1.0

    def test_model_rejects_wrong_sizes(self):
        with pytest.raises(DomainError):
            QuantizerModel(B=2, sigma0=1.0, thresholds=[-np.inf, 0, np.inf], levels=[-1, 1])

    def test_dict_codec(self, q3):
        data = q3.to_dict()
        assert data['thresholds'][0] == '-inf' and data['thresholds'][-1] == '+inf'
        back = QuantizerModel.from_dict(data)
        np.testing.assert_array_equal(back.thresholds, q3.thresholds)
        np.testing.assert_array_equal(back.levels, q3.levels)


class TestQuantize:

    def test_half_open_bins(self, q3):
        for k in range(2, q3.n_bins + 1):
            assert CompanderService.bin_index(q3.thresholds[k - 1], q3) == k
            assert CompanderService.bin_index(np.nextafter(q3.thresholds[k - 1], -np.inf), q3) == k - 1

    def test_extremes(self, q3):
        assert CompanderService.bin_index(-1e300, q3) == 1
        assert CompanderService.bin_index(1e300, q3) == q3.n_bins
        assert CompanderService.bin_index(0.0, q3) == q3.n_bins // 2 + 1

    def test_levels_map_to_their_own_bin(self, q4):
        k, levels = CompanderService.quantize(q4.levels, q4)
        np.testing.assert_array_equal(k, np.arange(1, 17))
        np.testing.assert_array_equal(levels, q4.levels)

    def test_scalar_and_array_forms(self, q3):
        k, level = CompanderService.quantize(0.1, q3)
        assert isinstance(k, int) and isinstance(level, float)
        ks, levels = CompanderService.quantize(np.array([0.1, -0.1]), q3)
        assert ks.tolist() == [5, 4]
        assert levels[0] == -levels[1]

    def test_one_bit_is_sign(self, src):
        q = CompanderService.design_quantizer(1, src)
        z = np.array([-2.0, -1e-9, 0.0, 3.0])
        k, _ = CompanderService.quantize(z, q)
        assert k.tolist() == [1, 1, 2, 2]

    def test_bin_probabilities(self, q4):
        probs = CompanderService.bin_probabilities(q4)
        assert probs.sum() == pytest.approx(1.0, abs=1e-14)
        np.testing.assert_allclose(probs, probs[::-1], atol=1e-14)

    def test_bin_widths_are_clipped(self, q3):
        widths = CompanderService.bin_widths(q3, 39.0)
        assert np.all(np.isfinite(widths))
        assert widths[0] == pytest.approx(39.0 + q3.thresholds[1])


class TestPanterDite:

    def test_formula(self, src):
        q = CompanderService.design_quantizer(6, src)
        assert CompanderService.panter_dite_mse(q) == pytest.approx(math.sqrt(3) * math.pi / 2 * 2.0 ** -12)

    def test_monte_carlo_mse(self, src):
        q = CompanderService.design_quantizer(6, src)
        z = np.random.Generator(np.random.Philox(7)).standard_normal(10 ** 6)
        _, y = CompanderService.quantize(z, q)
        mse = np.mean((z - y) ** 2)
        assert mse == pytest.approx(CompanderService.panter_dite_mse(q), rel=0.03)
