from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavesr.attention import WaScParams, bias_table_size, wa_sc
from wavesr.complexity import (CSV_HEADER, analytic_w_sa, analytic_wa_sc, dense_w_sa, fit_loglog, predict_c_sc,
                               predict_wa_sc, scaling_experiment)
from wavesr.attention import c_sc
from wavesr.network import ModelConfig
from wavesr.tensor import Rng, Tensor, counter, init_uniform, no_grad
from wavesr.windowing import WindowLayout


def test_analytic_hand_values():
    assert analytic_w_sa(1, 60, 8, 8) == 491_520
    assert analytic_wa_sc(1, 10, 8, 8) == 320


def test_ratio_hand_value():
    assert Fraction(analytic_w_sa(1, 60, 8, 8), analytic_wa_sc(1, 10, 8, 8)) == 1536


@settings(max_examples=30)
@given(N=st.integers(0, 9), C=st.integers(1, 64), h=st.integers(1, 32), w=st.integers(1, 32))
def test_scaling_laws(N, C, h, w):
    assert analytic_w_sa(N, C, 2 * h, 2 * w) == 16 * analytic_w_sa(N, C, h, w)
    assert analytic_wa_sc(N, C, 2 * h, 2 * w) == 4 * analytic_wa_sc(N, C, h, w)


def test_zero_windows():
    assert analytic_w_sa(0, 60, 8, 8) == 0
    assert analytic_wa_sc(0, 10, 8, 8) == 0


def test_non_integral_is_exact_fraction():
    assert analytic_wa_sc(1, 1, 1, 1) == Fraction(1, 2)


def test_dense_w_sa_count_matches_formula():
    rng = np.random.default_rng(0)
    q, k, v = (Tensor(rng.normal(size=(3, 16, 6))) for _ in range(3))
    counter.reset()
    with no_grad():
        dense_w_sa(q, k, v)
    assert counter.mult_adds == analytic_w_sa(3, 6, 4, 4)


@pytest.mark.parametrize("window,base,heads", [(4, 4, 1), (8, 4, 2), (16, 4, 3), (8, 2, 2)])
def test_wa_sc_measured_matches_prediction(window, base, heads):
    layout = WindowLayout(0, window, window, base, base)
    C = 12
    c2, ch = C // 2, C // 2 // heads
    rng = Rng(1)
    p = WaScParams(heads, init_uniform(rng, (heads, bias_table_size(layout)), 1),
                   init_uniform(rng, (c2, c2), c2),
                   [init_uniform(rng, (4 * ch, ch), 4 * ch) for _ in range(layout.dwt_levels)])
    q, v = Tensor(rng.uniform((2, layout.tokens, c2))), Tensor(rng.uniform((2, layout.tokens, c2)))
    counter.reset()
    with no_grad():
        wa_sc(q, v, layout, p)
    pred = predict_wa_sc(C, heads, layout, windows=2)
    assert abs(counter.mult_adds - pred) <= 0.05 * pred
    assert counter.mult_adds == pred


def test_c_sc_measured_matches_prediction():
    layout = WindowLayout(0, 4, 4, 4, 4)
    q = Tensor(np.ones((3, 16, 5)))
    counter.reset()
    c_sc(q, q)
    assert counter.mult_adds == predict_c_sc(10, layout, windows=3)


def test_fit_loglog_exact_power():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    slope, resid = fit_loglog(x, 3 * x**2)
    assert slope == pytest.approx(2.0)
    assert resid < 1e-12


def test_scaling_experiment_small(tmp_path):
    config = ModelConfig.tiny()
    report = scaling_experiment(config, [4, 8, 16, 32])
    assert 0.9 <= report.slope_wasc <= 1.1
    assert 1.9 <= report.slope_wsa <= 2.1
    assert report.measured_wsa == report.analytic_wsa
    assert report.measured_wasc == report.predicted_wasc
    out = tmp_path / "bench.csv"
    report.write_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0].split(",") == list(CSV_HEADER)
    assert len(lines) == 1 + 4


def test_scaling_experiment_rejects_bad_sizes():
    with pytest.raises(ValueError, match="power of two"):
        scaling_experiment(ModelConfig.tiny(), [4, 12])
