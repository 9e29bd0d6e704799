import numpy as np
import pytest
import torch
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from demorphlab import imaging
from demorphlab.errors import DegenerateInputError, DimensionError


def test_psnr_identical_is_capped():
    x = np.full((8, 8, 3), 0.3)
    assert imaging.psnr(x, x) == 99.0


def test_psnr_known_value():
    a = np.zeros((4, 4, 1))
    b = np.full((4, 4, 1), 0.1)
    assert imaging.psnr(a, b) == pytest.approx(20.0)


def test_psnr_shape_mismatch():
    with pytest.raises(DimensionError):
        imaging.psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim_self_is_one(rng):
    x = rng.random((24, 24, 3))
    assert imaging.ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_too_small():
    with pytest.raises(DimensionError):
        imaging.ssim(np.zeros((10, 12, 1)), np.zeros((10, 12, 1)))


def test_ssim_matches_oracle_on_structured_images(rng):
    a = rng.random((20, 18, 3))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    assert imaging.ssim(a, b) == pytest.approx(oracles.ssim(a, b), abs=1e-9)


def test_ssim_grayscale_2d(rng):
    a = rng.random((16, 16))
    b = rng.random((16, 16))
    assert imaging.ssim(a, b) == pytest.approx(oracles.ssim(a, b), abs=1e-9)


def test_kurtosis_known_values():
    # symmetric two-point distribution has kurtosis 1
    assert imaging.kurtosis(np.array([-1.0, 1.0] * 50)) == pytest.approx(1.0, abs=1e-6)
    # one spike among zeros: m4/m2^2 = (n^2 - 3n + 3)/(n - 1)
    n = 10
    x = np.zeros(n)
    x[0] = 1.0
    assert imaging.kurtosis(x) == pytest.approx((n * n - 3 * n + 3) / (n - 1), rel=1e-5)


def test_kurtosis_constant_is_zero_not_nan():
    assert imaging.kurtosis(np.ones(16)) == 0.0


def test_kurtosis_degenerate():
    with pytest.raises(DegenerateInputError):
        imaging.kurtosis(np.array([1.0]))


def test_kurtosis_torch_matches_numpy(rng):
    x = rng.standard_normal(200)
    t = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    k = imaging.kurtosis(t)
    assert float(k.detach()) == pytest.approx(imaging.kurtosis(x), abs=1e-12)
    k.backward()
    assert torch.isfinite(t.grad).all()


def test_as_image_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        imaging.as_image(np.zeros((4, 4, 2)))
    with pytest.raises(DimensionError):
        imaging.as_image(np.array([[np.nan]]))


def test_png_round_trip(tmp_path, rng):
    x = np.round(rng.random((9, 7, 3)) * 255) / 255
    p = imaging.save_png(tmp_path / "a.png", x)
    np.testing.assert_array_equal(imaging.load_png(p), x)
    g = np.round(rng.random((5, 6, 1)) * 255) / 255
    np.testing.assert_array_equal(imaging.load_png(imaging.save_png(tmp_path / "g.png", g)), g)


def test_save_png_is_byte_stable(tmp_path, rng):
    x = rng.random((16, 16, 3))
    a = imaging.save_png(tmp_path / "a.png", x).read_bytes()
    b = imaging.save_png(tmp_path / "b.png", x).read_bytes()
    assert a == b


def test_to_gray_weights():
    img = np.zeros((1, 1, 3))
    img[0, 0] = (1.0, 0.0, 0.0)
    assert imaging.to_gray(img)[0, 0] == pytest.approx(0.299)


images = arrays(np.float64, (12, 12, 1), elements=st.floats(0, 1))


@given(images, images)
def test_ssim_symmetric_and_bounded(a, b):
    s = imaging.ssim(a, b)
    assert s == pytest.approx(imaging.ssim(b, a), abs=1e-12)
    assert -1.0 - 1e-9 <= s <= 1.0 + 1e-9


@given(images, images)
def test_psnr_symmetric_and_in_range(a, b):
    v = imaging.psnr(a, b)
    assert v == imaging.psnr(b, a)
    assert 0.0 <= v <= 99.0


@given(
    arrays(np.float64, st.integers(2, 40), elements=st.floats(-100, 100)),
    st.floats(0.1, 10),
    st.floats(-5, 5),
)
def test_kurtosis_affine_invariant(x, scale, shift):
    # eps in the denominator only matters when the variance is tiny
    assume(np.var(x) >= 1.0 and np.var(x) * scale**2 >= 1.0)
    k = imaging.kurtosis(x)
    assert imaging.kurtosis(scale * x + shift) == pytest.approx(k, rel=1e-6)
    assert k >= 1.0 - 1e-6
