"""Attention cost formulas, closed-form counter predictions and the scaling run.

All ``analytic_*`` and ``predict_*`` helpers use exact integer arithmetic.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .attention import WaScParams, bias_table_size, wa_sc
from .tensor import Rng, Tensor, counter, init_uniform, matmul, no_grad, scale, softmax, swap_last
from .windowing import WindowLayout

CSV_HEADER = ("window", "area", "analytic_wsa", "analytic_wasc", "measured_wasc",
              "measured_wsa", "seconds_wasc", "seconds_wsa")


def _exact(num: int, den: int):
    return num // den if num % den == 0 else Fraction(num, den)


def analytic_w_sa(N: int, C: int, h: int, w: int) -> int:
    """Mult-adds of softmax window attention: 2 N C (hw)^2."""
    return 2 * N * C * (h * w) ** 2


def analytic_wa_sc(N: int, C_h: int, h: int, w: int):
    """Mult-adds of the wavelet self-correlation: 2 N C_h (w/2)(h/2)."""
    return _exact(2 * N * C_h * w * h, 4)


def predict_wa_sc(channels: int, heads: int, layout: WindowLayout, windows: int = 1) -> int:
    """Counter value one :func:`wa_sc` call should produce.

    ``channels`` is the full feature width C; WA-SC works on C/2. Includes the
    Haar analysis (4 per input sample), per-level 4C_h -> C_h fusion, both
    correlation matmuls and the C/2 -> C/2 projection.
    """
    c2 = channels // 2
    ch = c2 // heads
    n, nd = layout.tokens, layout.down_tokens
    total = 2 * n * nd * c2 + n * c2 * c2
    tokens = n
    for _ in range(layout.dwt_levels):
        total += 4 * tokens * c2            # Haar analysis over all heads
        tokens //= 4
        total += tokens * 4 * ch * c2       # fusion, heads x tokens x 4ch x ch
    return windows * total


def predict_c_sc(channels: int, layout: WindowLayout, windows: int = 1) -> int:
    c2 = channels // 2
    return windows * 2 * layout.tokens * c2 * c2


def predict_layer(config, layer_index: int, H: int, W: int, batch: int = 1) -> int:
    """Counter value for one transformer layer on a [batch, C, H, W] map."""
    from .windowing import schedule

    layout = schedule(config, layer_index)
    C = config.channels
    h, w = layout.window_h, layout.window_w
    Hp, Wp = -(-H // h) * h, -(-W // w) * w
    N = (Hp // h) * (Wp // w)
    padded = Hp * Wp
    total = padded * C * C                     # DFE linear
    total += 4 * C * padded                    # Haar analysis
    total += 4 * C * 9 * (padded // 4)         # depthwise 3x3 on the sub-bands
    total += 4 * C * padded                    # Haar synthesis
    if config.uses_wa_sc(layer_index):
        total += predict_wa_sc(C, config.heads, layout, N)
    else:
        total += predict_c_sc(C, layout, N)
    total += padded * (C // 2) * C             # attention output projection
    r = config.gate_hidden
    total += 2 * C * r                         # channel gate bottleneck
    total += 2 * H * W * C * config.ffn_expansion * C
    return batch * total


def predict_block(config, H: int, W: int, batch: int = 1) -> int:
    layers = sum(predict_layer(config, i, H, W, batch) for i in range(config.layers_per_block))
    return layers + batch * config.channels**2 * 9 * H * W


def dense_w_sa(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Reference softmax window attention ``softmax(Q K^T / sqrt(C)) V``.

    A cost baseline only; no projections, so its count is exactly 2 N C (hw)^2.
    """
    C = q.shape[-1]
    return matmul(softmax(scale(matmul(q, swap_last(k)), 1.0 / np.sqrt(C))), v)


@dataclass
class CostReport:
    windows: list[int] = field(default_factory=list)
    analytic_wsa: list[int] = field(default_factory=list)
    analytic_wasc: list = field(default_factory=list)
    measured_wasc: list[int] = field(default_factory=list)
    measured_wsa: list[int] = field(default_factory=list)
    predicted_wasc: list[int] = field(default_factory=list)
    seconds_wasc: list[float] = field(default_factory=list)
    seconds_wsa: list[float] = field(default_factory=list)
    slope_wasc: float = float("nan")
    slope_wsa: float = float("nan")
    residual_wasc: float = float("nan")
    residual_wsa: float = float("nan")

    @property
    def areas(self) -> list[int]:
        return [w * w for w in self.windows]

    def rows(self) -> list[tuple]:
        return [(w, w * w, a, int(b) if isinstance(b, int) else float(b), m, s, tw, ts)
                for w, a, b, m, s, tw, ts in zip(self.windows, self.analytic_wsa, self.analytic_wasc,
                                                 self.measured_wasc, self.measured_wsa,
                                                 self.seconds_wasc, self.seconds_wsa)]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in self.rows():
                writer.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])


def fit_loglog(x, y) -> tuple[float, float]:
    """Least-squares slope of log(y) on log(x) and the RMS residual."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = float(np.sqrt(np.mean((ly - (slope * lx + icpt)) ** 2)))
    return float(slope), resid


def scaling_experiment(config, sizes, image_size: int | None = None, seed: int = 0) -> CostReport:
    """Measure per-window mult-adds of WA-SC and dense W-SA at each window size.

    Every probe covers the same ``image_size``^2 area (default: largest
    window), tiled into N windows; the counter total is divided by N so the
    fitted slope reflects cost per window against window area. WA-SC runs at
    the schedule rule k = log2(window / base), pinning the downsampled values
    to the base window.
    """
    sizes = [int(s) for s in sizes]
    base = config.base_window
    for s in sizes:
        if s < base or s & (s - 1) or s % base:
            raise ValueError(f"window size {s} must be a power of two >= base window {base}")
    side = image_size or max(sizes)
    if any(side % s for s in sizes):
        raise ValueError(f"image side {side} must be a multiple of every window size")
    C, heads = config.channels, config.heads
    c2, ch = C // 2, config.head_dim
    rng = Rng(seed)
    report = CostReport()
    with no_grad():
        for s in sizes:
            layout = WindowLayout(0, s, s, base, base)
            N = (side // s) ** 2
            n = s * s
            params = WaScParams(
                heads,
                init_uniform(rng, (heads, bias_table_size(layout)), 1, scale=0.02),
                init_uniform(rng, (c2, c2), c2),
                [init_uniform(rng, (4 * ch, ch), 4 * ch) for _ in range(layout.dwt_levels)],
            )
            q = Tensor(rng.uniform((N, n, c2)))
            v = Tensor(rng.uniform((N, n, c2)))
            counter.reset()
            t0 = time.perf_counter()
            wa_sc(q, v, layout, params)
            t_wasc = time.perf_counter() - t0
            m_wasc = counter.mult_adds

            qf, kf, vf = (Tensor(rng.uniform((N, n, C))) for _ in range(3))
            counter.reset()
            t0 = time.perf_counter()
            dense_w_sa(qf, kf, vf)
            t_wsa = time.perf_counter() - t0
            m_wsa = counter.mult_adds
            counter.reset()

            report.windows.append(s)
            report.analytic_wsa.append(analytic_w_sa(1, C, s, s))
            report.analytic_wasc.append(analytic_wa_sc(1, ch, s, s))
            report.measured_wasc.append(m_wasc // N)
            report.measured_wsa.append(m_wsa // N)
            report.predicted_wasc.append(predict_wa_sc(C, heads, layout))
            report.seconds_wasc.append(t_wasc)
            report.seconds_wsa.append(t_wsa)
    if len(sizes) >= 2:
        report.slope_wasc, report.residual_wasc = fit_loglog(report.areas, report.measured_wasc)
        report.slope_wsa, report.residual_wsa = fit_loglog(report.areas, report.measured_wsa)
    return report
