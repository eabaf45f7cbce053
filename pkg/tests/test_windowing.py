import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavesr.network import ModelConfig
from wavesr.tensor import Tensor
from wavesr.windowing import PadRecord, WindowLayout, merge, partition, schedule


def layout(size, base=8):
    return WindowLayout(0, size, size, base, base)


def test_single_window():
    x = np.random.default_rng(0).normal(size=(3, 8, 8))
    win, rec = partition(Tensor(x), layout(8))
    assert win.shape == (1, 64, 3)
    np.testing.assert_array_equal(win.data[0], x.reshape(3, 64).T)
    np.testing.assert_array_equal(merge(win, rec, layout(8)).data, x)


def test_four_windows_top_left():
    x = np.arange(2 * 16 * 16, dtype=float).reshape(2, 16, 16)
    win, _ = partition(Tensor(x), layout(8))
    assert win.shape == (4, 64, 2)
    np.testing.assert_array_equal(win.data[0], x[:, :8, :8].reshape(2, 64).T)
    # row-major window order: second window is rows 0-7, cols 8-15
    np.testing.assert_array_equal(win.data[1], x[:, :8, 8:].reshape(2, 64).T)


def test_padded_round_trip_and_zero():
    x = np.random.default_rng(1).normal(size=(2, 20, 20))
    win, rec = partition(Tensor(x), layout(8))
    assert win.shape == (9, 64, 2) and rec == PadRecord(20, 20, 24, 24)
    np.testing.assert_array_equal(merge(win, rec, layout(8)).data, x)
    zero = merge(Tensor(np.zeros(win.shape)), rec, layout(8))
    assert zero.shape == (2, 20, 20) and np.all(zero.data == 0)


def test_reflect_padding_values():
    x = np.arange(5, dtype=float).reshape(1, 1, 5)
    x = np.repeat(x, 4, axis=1)
    win, _ = partition(Tensor(x), WindowLayout(0, 4, 4, 4, 4))
    # columns 5,6,7 reflect to 3,2,1
    np.testing.assert_array_equal(win.data[1][:4, 0], [4, 3, 2, 1])


def test_errors():
    with pytest.raises(ValueError, match="4x"):
        partition(Tensor(np.zeros((1, 3, 3))), layout(16))
    win, rec = partition(Tensor(np.zeros((1, 16, 16))), layout(8))
    with pytest.raises(ValueError):
        merge(win, PadRecord(16, 16, 20, 16), layout(8))
    with pytest.raises(ValueError):
        merge(win, PadRecord(16, 24, 16, 24), layout(8))


@settings(max_examples=40, deadline=None)
@given(h=st.integers(5, 64), w=st.integers(5, 64), win=st.sampled_from([4, 8, 16]),
       lead=st.sampled_from([(), (2,)]), seed=st.integers(0, 1000))
def test_partition_merge_bijection(h, w, win, lead, seed):
    x = np.random.default_rng(seed).normal(size=lead + (3, h, w))
    lay = WindowLayout(0, win, win, 4, 4)
    windows, rec = partition(Tensor(x), lay)
    assert windows.shape[-2:] == (win * win, 3)
    assert windows.shape[-3] == -(-h // win) * -(-w // win)
    np.testing.assert_array_equal(merge(windows, rec, lay).data, x)


def test_default_schedule():
    cfg = ModelConfig()
    layouts = [schedule(cfg, i) for i in range(6)]
    assert [l.window_h for l in layouts] == [8, 8, 16, 16, 32, 32]
    assert [l.dwt_levels for l in layouts] == [0, 0, 1, 1, 2, 2]
    assert all(l.down_hw == (8, 8) for l in layouts)
    assert schedule(cfg, 3) == schedule(cfg, 3)


def test_alpha_rule():
    assert layout(8).alpha == 1 and layout(8).dwt_levels == 0
    big = layout(32)
    assert big.alpha == 4 and big.dwt_levels == 2 and big.down_hw == (8, 8)
    small = WindowLayout(0, 4, 4, 8, 8)
    assert small.alpha == 0.5 and small.dwt_levels == 0 and small.down_hw == (4, 4)


def test_schedule_index_out_of_range():
    with pytest.raises(IndexError):
        schedule(ModelConfig(), 6)
    with pytest.raises(IndexError):
        schedule(ModelConfig(), -1)


def test_non_power_of_two_window_rejected():
    with pytest.raises(ValueError, match="power of two"):
        layout(24)
