import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavesr.tensor import Tensor, counter, grad_check, tsum, mul
from wavesr.wavelet import SubbandSet, dwt_downsample, haar_dwt2, haar_idwt2


def _haar_loops(x):
    """Per-block transcription of the orthonormal Haar rule."""
    C, H, W = x.shape
    out = np.zeros((4, C, H // 2, W // 2))
    for c in range(C):
        for i in range(H // 2):
            for j in range(W // 2):
                a, b = x[c, 2 * i, 2 * j], x[c, 2 * i, 2 * j + 1]
                cc, d = x[c, 2 * i + 1, 2 * j], x[c, 2 * i + 1, 2 * j + 1]
                out[:, c, i, j] = [(a + b + cc + d) / 2, (a + b - cc - d) / 2,
                                   (a - b + cc - d) / 2, (a - b - cc + d) / 2]
    return out


def test_constant_image():
    s = haar_dwt2(Tensor(np.full((2, 4, 6), 0.3)))
    np.testing.assert_allclose(s.ll.data, 0.6, atol=1e-15)
    for band in (s.lh, s.hl, s.hh):
        assert np.all(band.data == 0)


def test_hand_block():
    s = haar_dwt2(Tensor([[[1.0, 2.0], [3.0, 4.0]]]))
    assert [b.data.item() for b in s.bands()] == [5.0, -2.0, -1.0, 0.0]
    assert s.energy() == 30.0


def test_matches_loop_oracle():
    x = np.random.default_rng(0).normal(size=(3, 6, 8))
    s = haar_dwt2(Tensor(x))
    np.testing.assert_allclose(np.stack([b.data for b in s.bands()]), _haar_loops(x), rtol=0, atol=1e-14)


def test_odd_extent_requires_padding():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 5, 6)))
    with pytest.raises(ValueError, match="odd"):
        haar_dwt2(x)
    np.testing.assert_allclose(haar_idwt2(haar_dwt2(x, pad=True)).data, x.data, atol=1e-12)


def test_inverse_cases():
    x = Tensor(np.random.default_rng(1).normal(size=(1, 16, 16)))
    assert np.abs(haar_idwt2(haar_dwt2(x)).data - x.data).max() < 1e-12
    const = haar_dwt2(Tensor(np.full((1, 4, 4), 2.5)))
    ll_only = SubbandSet(const.ll, *(Tensor(np.zeros_like(const.ll.data)) for _ in range(3)))
    np.testing.assert_allclose(haar_idwt2(ll_only).data, 2.5, atol=1e-15)
    zeros = SubbandSet(*(Tensor(np.zeros((2, 3, 3))) for _ in range(4)))
    assert np.all(haar_idwt2(zeros).data == 0)


def test_mismatched_bands_rejected():
    with pytest.raises(ValueError, match="differ"):
        SubbandSet(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 2, 2))),
                   Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 2, 3))))


@settings(max_examples=30, deadline=None)
@given(c=st.integers(1, 4), h=st.integers(1, 16), w=st.integers(1, 16), seed=st.integers(0, 10_000))
def test_reconstruction_energy_linearity(c, h, w, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(c, 2 * h, 2 * w))
    y = rng.normal(size=x.shape)
    s = haar_dwt2(Tensor(x))
    assert np.abs(haar_idwt2(s).data - x).max() < 1e-12
    assert abs(s.energy() - (x**2).sum()) <= 1e-9 * (x**2).sum()
    a, b = rng.normal(size=2)
    combo = haar_dwt2(Tensor(a * x + b * y))
    sy = haar_dwt2(Tensor(y))
    for bc, bx, by in zip(combo.bands(), s.bands(), sy.bands()):
        np.testing.assert_allclose(bc.data, a * bx.data + b * by.data, atol=1e-12)


def test_float32_reconstruction():
    x = np.random.default_rng(2).normal(size=(2, 8, 8)).astype(np.float32)
    out = haar_idwt2(haar_dwt2(Tensor(x))).data
    assert out.dtype == np.float32
    assert np.abs(out - x).max() < 1e-5


def _select_ll(C):
    w = np.zeros((4 * C, C))
    w[:C, :C] = np.eye(C)
    return Tensor(w)


def test_downsample_identity_and_counts():
    v = Tensor(np.random.default_rng(3).normal(size=(64, 3)))
    assert dwt_downsample(v, (8, 8), 0, []) is v
    fuse = [Tensor(np.random.default_rng(4).normal(size=(12, 3)))]
    assert dwt_downsample(v, (8, 8), 1, fuse).shape == (16, 3)


def test_downsample_ll_selection_on_constant():
    c = 0.25
    v = Tensor(np.full((64, 2), c))
    for k in (1, 2, 3):
        out = dwt_downsample(v, (8, 8), k, [_select_ll(2)] * k)
        assert out.shape == (64 // 4**k, 2)
        np.testing.assert_allclose(out.data, c * 2**k, atol=1e-14)


def test_downsample_counter():
    v = Tensor(np.ones((64, 3)))
    counter.reset()
    dwt_downsample(v, (8, 8), 2, [_select_ll(3)] * 2)
    # Haar: 4 per input sample; fusion: tokens x 4C x C
    assert counter.mult_adds == 4 * 64 * 3 + 16 * 12 * 3 + 4 * 16 * 3 + 4 * 12 * 3


def test_downsample_errors():
    v = Tensor(np.ones((36, 2)))
    with pytest.raises(ValueError, match="divisible"):
        dwt_downsample(v, (6, 6), 2, [_select_ll(2)] * 2)
    with pytest.raises(ValueError, match="tokens"):
        dwt_downsample(v, (8, 8), 1, [_select_ll(2)])


def test_downsample_grad():
    rng = np.random.default_rng(5)
    v = Tensor(rng.normal(size=(2, 16, 3)))
    fuse = [Tensor(rng.normal(size=(12, 3))), Tensor(rng.normal(size=(12, 3)))]
    wts = Tensor(rng.uniform(-1, 1, (2, 1, 3)))
    f = lambda _: tsum(mul(dwt_downsample(v, (4, 4), 2, fuse), wts))
    assert grad_check(f, [v, *fuse], 1e-6) <= 1e-5
