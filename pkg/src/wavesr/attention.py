"""Dual feature extraction and the softmax-free self-correlation operators."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .tensor import Tensor, add, conv2d, getitem, linear, matmul, mul, reshape, scale, swap_last, take_last, transpose
from .wavelet import dwt_downsample, haar_analysis, haar_synthesis
from .windowing import WindowLayout, spatial_to_tokens


@dataclass
class DfeParams:
    linear_w: Tensor  # [C, C]
    linear_b: Tensor  # [C]
    wave_w: Tensor    # [4C, 1, 3, 3], depthwise, band-major (LL, LH, HL, HH)
    wave_b: Tensor    # [4C]

    def __post_init__(self) -> None:
        C = self.linear_w.shape[0]
        if self.linear_w.shape != (C, C):
            raise ValueError(f"DFE linear weight must be square, got {self.linear_w.shape}")
        if self.wave_w.shape != (4 * C, 1, 3, 3) or self.wave_b.shape != (4 * C,):
            raise ValueError(f"DFE wave kernels must be (4C,1,3,3)/(4C,), got {self.wave_w.shape}/{self.wave_b.shape}")


@dataclass
class WaScParams:
    heads: int
    bias_table: Tensor                     # [heads, (2h-1)(2w-1)]
    proj: Tensor                           # [C/2, C/2]
    fuse: list[Tensor] = field(default_factory=list)  # per DWT level, [4*C_h, C_h]


def dfe(x: Tensor, p: DfeParams) -> tuple[Tensor, Tensor]:
    """x: [..., C, h, w] -> (q, v), each [..., h*w, C/2].

    The channel branch is a per-pixel linear map; the wave branch runs a
    depthwise 3x3 conv on every Haar sub-band and inverts the transform.
    The two branches are multiplied and split in half along channels.
    """
    C = x.shape[-3]
    if C % 2:
        raise ValueError(f"dfe needs an even channel count, got {C}")
    if p.linear_w.shape[0] != C:
        raise ValueError(f"dfe: input has {C} channels, parameters expect {p.linear_w.shape[0]}")
    x_ch = linear(spatial_to_tokens(x), p.linear_w, p.linear_b)
    sub = conv2d(haar_analysis(x), p.wave_w, p.wave_b, pad=1, groups=4 * C)
    x_wave = spatial_to_tokens(haar_synthesis(sub))
    out = mul(x_ch, x_wave)
    half = C // 2
    q = getitem(out, (Ellipsis, slice(0, half)))
    v = getitem(out, (Ellipsis, slice(half, C)))
    return q, v


def bias_table_size(layout: WindowLayout) -> int:
    return (2 * layout.window_h - 1) * (2 * layout.window_w - 1)


@lru_cache(maxsize=None)
def _bias_index(h: int, w: int, levels: int) -> np.ndarray:
    f = 2**levels
    qy, qx = np.divmod(np.arange(h * w), w)
    dy, dx = np.divmod(np.arange((h // f) * (w // f)), w // f)
    rel_y = qy[:, None] - dy[None, :] * f + (h - 1)
    rel_x = qx[:, None] - dx[None, :] * f + (w - 1)
    index = rel_y * (2 * w - 1) + rel_x
    index.setflags(write=False)
    return index


def relative_bias_index(layout: WindowLayout) -> np.ndarray:
    """[n, n_down] map from (query pixel, downsampled value pixel) to a table slot.

    Downsampled coordinates are scaled back onto the query grid by 2**k
    before taking the offset.
    """
    return _bias_index(layout.window_h, layout.window_w, layout.dwt_levels)


def relative_bias_lookup(layout: WindowLayout, table: Tensor) -> Tensor:
    """[heads, T] table -> [heads, n, n_down] bias."""
    size = bias_table_size(layout)
    if table.shape[-1] != size:
        raise ValueError(f"bias table has {table.shape[-1]} entries per head, "
                         f"a {layout.window_h}x{layout.window_w} window needs {size}")
    return take_last(table, relative_bias_index(layout))


def _split_heads(t: Tensor, heads: int) -> Tensor:
    lead = t.shape[:-2]
    n, C = t.shape[-2:]
    k = len(lead)
    t = reshape(t, lead + (n, heads, C // heads))
    return transpose(t, tuple(range(k)) + (k + 1, k, k + 2))


def _merge_heads(t: Tensor) -> Tensor:
    lead = t.shape[:-3]
    heads, n, ch = t.shape[-3:]
    k = len(lead)
    t = transpose(t, tuple(range(k)) + (k + 1, k, k + 2))
    return reshape(t, lead + (n, heads * ch))


def wa_sc(q: Tensor, v: Tensor, layout: WindowLayout, p: WaScParams) -> Tensor:
    """Wave-attention spatial self-correlation over one or more windows.

    q, v: [..., n, C/2] with n = window area. Per head, values are wavelet
    downsampled, the correlation map is ``Q V_down^T / D + B`` (no softmax)
    and the head output is ``map @ V_down``. Heads are concatenated and
    projected C/2 -> C/2.
    """
    n, c2 = q.shape[-2:]
    if v.shape != q.shape:
        raise ValueError(f"wa_sc: q {q.shape} and v {v.shape} differ")
    if n != layout.tokens:
        raise ValueError(f"wa_sc: {n} tokens but layout window is {layout.window_h}x{layout.window_w}")
    if c2 % p.heads:
        raise ValueError(f"wa_sc: {c2} channels not divisible by {p.heads} heads")
    ch = c2 // p.heads
    qh = _split_heads(q, p.heads)                               # [..., heads, n, ch]
    vh = _split_heads(v, p.heads)
    vd = dwt_downsample(vh, (layout.window_h, layout.window_w), layout.dwt_levels, p.fuse)
    corr = scale(matmul(qh, swap_last(vd)), 1.0 / ch)           # [..., heads, n, n_down]
    corr = add(corr, relative_bias_lookup(layout, p.bias_table))
    out = _merge_heads(matmul(corr, vd))
    return linear(out, p.proj)


def c_sc(q: Tensor, v: Tensor) -> Tensor:
    """Channel self-correlation: ``Q @ (Q^T V / n)``, softmax-free."""
    if q.shape != v.shape:
        raise ValueError(f"c_sc: q {q.shape} and v {v.shape} differ")
    n = q.shape[-2]
    m = scale(matmul(swap_last(q), v), 1.0 / n)
    return matmul(q, m)
