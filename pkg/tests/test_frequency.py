import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from freqpad.errors import ValidationError
from freqpad.frequency import (BAND_HIGH, BAND_LOW, BAND_MID, BAND_NAMES,
                               BAND_RESIDUAL, FilterBank, band_of,
                               build_base_masks, dct2, decompose, idct2,
                               init_filter_bank, sigma_norm)


def brute_force_dct2(x):
    """Direct evaluation of the orthonormal type-II 2-D DCT definition."""
    h, w = x.shape
    out = np.zeros((h, w))
    for u in range(h):
        for v in range(w):
            su = np.sqrt(1.0 / h) if u == 0 else np.sqrt(2.0 / h)
            sv = np.sqrt(1.0 / w) if v == 0 else np.sqrt(2.0 / w)
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += (x[i, j]
                            * np.cos(np.pi * (2 * i + 1) * u / (2 * h))
                            * np.cos(np.pi * (2 * j + 1) * v / (2 * w)))
            out[u, v] = su * sv * acc
    return out


class TestDct:
    def test_constant_2x2(self):
        # oracle: brute force on the constant grid gives 2c at (0,0) only
        c = 3.7
        expected = brute_force_dct2(np.full((2, 2), c))
        assert expected[0, 0] == pytest.approx(2 * c, abs=1e-12)
        got = dct2(np.full((2, 2), c))
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_matches_brute_force_random(self):
        x = np.random.default_rng(0).normal(size=(5, 4))
        np.testing.assert_allclose(dct2(x), brute_force_dct2(x), atol=1e-10)

    def test_roundtrip_8x8(self):
        x = np.random.default_rng(1).normal(size=(8, 8))
        assert np.abs(idct2(dct2(x)) - x).max() < 1e-10

    def test_inverse_pair(self):
        y = np.random.default_rng(2).normal(size=(8, 8))
        assert np.abs(dct2(idct2(y)) - y).max() < 1e-10

    def test_zero_grid(self):
        assert not dct2(np.zeros((4, 4))).any()
        assert not idct2(np.zeros((4, 4))).any()

    def test_single_dc_coefficient(self):
        coeffs = np.zeros((2, 2))
        coeffs[0, 0] = 5.0
        np.testing.assert_allclose(idct2(coeffs), np.full((2, 2), 2.5), atol=1e-12)

    def test_parseval(self):
        x = np.random.default_rng(3).normal(size=(16, 16))
        a, b = np.sum(dct2(x) ** 2), np.sum(x ** 2)
        assert abs(a - b) / b < 1e-8

    def test_rejects_non_finite(self):
        bad = np.ones((4, 4))
        bad[1, 2] = np.nan
        with pytest.raises(ValidationError):
            dct2(bad)
        with pytest.raises(ValidationError):
            idct2(bad)


class TestBandOf:
    def test_corner_cases_224(self):
        assert band_of(0, 0, 224, 224) == BAND_LOW
        assert band_of(223, 223, 224, 224) == BAND_RESIDUAL
        # d = 28/446 ~ 0.0628 >= 1/16
        assert band_of(14, 14, 224, 224) == BAND_MID

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            band_of(224, 0, 224, 224)
        with pytest.raises(ValidationError):
            band_of(0, -1, 224, 224)

    @given(st.integers(2, 64), st.integers(2, 64), st.data())
    @settings(max_examples=50, deadline=None)
    def test_partition(self, h, w, data):
        u = data.draw(st.integers(0, h - 1))
        v = data.draw(st.integers(0, w - 1))
        assert band_of(u, v, h, w) in BAND_NAMES

    def test_boundaries_match_masks(self):
        h = w = 32
        masks = build_base_masks(h, w)
        band_index = {BAND_LOW: 0, BAND_MID: 1, BAND_HIGH: 2}
        for u in range(h):
            for v in range(w):
                band = band_of(u, v, h, w)
                if band == BAND_RESIDUAL:
                    assert masks[0, u, v] == masks[1, u, v] == masks[2, u, v] == 0
                else:
                    assert masks[band_index[band], u, v] == 1
                assert masks[3, u, v] == 1


class TestSigmaNorm:
    def test_zero(self):
        assert sigma_norm(0.0) == 0.0

    def test_ln3(self):
        assert sigma_norm(np.log(3)) == pytest.approx(0.5, abs=1e-12)
        assert sigma_norm(-np.log(3)) == pytest.approx(-0.5, abs=1e-12)

    @given(st.floats(-15, 15), st.floats(-15, 15))
    @settings(max_examples=100, deadline=None)
    def test_bounded_odd_increasing(self, a, b):
        sa, sb = sigma_norm(a), sigma_norm(b)
        assert -1 < sa < 1
        assert sigma_norm(-a) == pytest.approx(-sa, abs=1e-12)
        if a + 1e-9 < b:
            assert sa < sb


class TestFilterBank:
    def test_base_mask_four_all_ones(self):
        bank = init_filter_bank(224, 224)
        assert bank.base_masks[3].sum() == 224 * 224

    def test_bands_disjoint(self):
        bank = init_filter_bank(224, 224)
        m = bank.base_masks.numpy()
        for i in range(3):
            for j in range(i + 1, 3):
                assert not (m[i] * m[j]).any()

    def test_learnable_masks_zero(self):
        bank = init_filter_bank(64, 64, seed=12345)
        assert not bank.learnable_masks.detach().numpy().any()

    def test_base_masks_binary_and_fixed(self):
        bank = init_filter_bank(32, 32)
        m = bank.base_masks.numpy()
        assert set(np.unique(m)) <= {0.0, 1.0}
        assert not bank.base_masks.requires_grad
        assert [n for n, _ in bank.named_parameters()] == ["learnable_masks"]

    def test_combined_filter_bound(self):
        bank = init_filter_bank(16, 16)
        with torch.no_grad():
            bank.learnable_masks.copy_(
                torch.from_numpy(np.random.default_rng(4).normal(0, 10, (4, 16, 16))))
        combined = bank.combined_masks().detach().numpy()
        base = bank.base_masks.numpy()
        assert (combined > base - 1).all()
        assert (combined < base + 1).all()

    def test_small_plane_rejected(self):
        with pytest.raises(ValidationError):
            init_filter_bank(1, 5)


class TestDecompose:
    def test_constant_image_zero_init(self):
        bank = init_filter_bank(32, 32)
        img = np.full((32, 32, 1), 0.4)
        stack = decompose(img, bank)
        assert np.abs(stack.components[:, :, 1]).max() < 1e-12  # mid
        assert np.abs(stack.components[:, :, 2]).max() < 1e-12  # high
        np.testing.assert_allclose(stack.components[:, :, 3], img[:, :, 0], atol=1e-12)

    def test_rgb_stack_shape_and_band4_identity(self):
        bank = init_filter_bank(224, 224)
        img = np.random.default_rng(5).random((224, 224, 3)).astype(np.float32)
        stack = decompose(img, bank)
        assert stack.components.shape == (224, 224, 12)
        band4 = stack.components[:, :, 9:12]
        assert np.abs(band4 - img).max() < 1e-5

    def test_band_sum_equals_masked_reconstruction(self):
        import scipy.fft

        bank = init_filter_bank(32, 32)
        img = np.random.default_rng(6).random((32, 32, 1))
        stack = decompose(img, bank)
        summed = stack.components[:, :, 0] + stack.components[:, :, 1] + stack.components[:, :, 2]
        mask = build_base_masks(32, 32)[:3].sum(axis=0)  # indicator of d < 7/8
        oracle = scipy.fft.idctn(
            scipy.fft.dctn(img[:, :, 0], type=2, norm="ortho") * mask,
            type=2, norm="ortho")
        assert np.abs(summed - oracle).max() < 1e-6

    def test_shape_mismatch(self):
        bank = init_filter_bank(32, 32)
        with pytest.raises(ValidationError):
            decompose(np.zeros((16, 16, 3)), bank)

    def test_non_finite_rejected(self):
        bank = init_filter_bank(8, 8)
        bad = np.zeros((8, 8, 1))
        bad[0, 0, 0] = np.inf
        with pytest.raises(ValidationError):
            decompose(bad, bank)

    def test_batched_matches_single(self):
        bank = init_filter_bank(16, 16)
        x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
        batched = bank.decompose(x)
        for b in range(2):
            single = bank.decompose(x[b])
            assert torch.equal(batched[b], single)

    def test_gradient_wrt_learnable_masks(self):
        # central finite differences against autograd, double precision
        bank = init_filter_bank(12, 12)
        x = torch.from_numpy(np.random.default_rng(7).random((1, 12, 12)))
        weight = torch.from_numpy(np.random.default_rng(8).normal(size=(4, 12, 12)))

        def loss_value():
            return (bank.decompose(x) * weight).sum()

        loss = loss_value()
        loss.backward()
        analytic = bank.learnable_masks.grad.clone()
        eps = 1e-4
        rng = np.random.default_rng(9)
        for _ in range(8):
            i = rng.integers(0, 4)
            u = rng.integers(0, 12)
            v = rng.integers(0, 12)
            with torch.no_grad():
                bank.learnable_masks[i, u, v] += eps
                up = float(loss_value())
                bank.learnable_masks[i, u, v] -= 2 * eps
                down = float(loss_value())
                bank.learnable_masks[i, u, v] += eps
            fd = (up - down) / (2 * eps)
            a = float(analytic[i, u, v])
            assert abs(fd - a) / max(abs(a), 1e-8) < 1e-4

    def test_gradient_wrt_image(self):
        bank = init_filter_bank(8, 8)
        x = torch.rand(1, 8, 8, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda t: bank.decompose(t).sum(), (x,))
