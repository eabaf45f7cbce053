"""Orthonormal 2D Haar transform and the wavelet value-downsampling path."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor, concat, counter, getitem, linear, pad_reflect, reshape, transpose

BANDS = ("ll", "lh", "hl", "hh")


def _analysis(x: np.ndarray) -> np.ndarray:
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a + b - c - d) * 0.5
    hl = (a - b + c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return np.concatenate([ll, lh, hl, hh], axis=-3)


def _synthesis(y: np.ndarray) -> np.ndarray:
    C = y.shape[-3] // 4
    ll, lh, hl, hh = (y[..., i * C:(i + 1) * C, :, :] for i in range(4))
    h, w = y.shape[-2:]
    x = np.empty(y.shape[:-3] + (C, 2 * h, 2 * w), dtype=y.dtype)
    x[..., 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    x[..., 0::2, 1::2] = (ll + lh - hl - hh) * 0.5
    x[..., 1::2, 0::2] = (ll - lh + hl - hh) * 0.5
    x[..., 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return x


def haar_analysis(x: Tensor) -> Tensor:
    """[..., C, H, W] -> [..., 4C, H/2, W/2], bands stacked LL, LH, HL, HH.

    Counted as a depthwise stride-2 2x2 filter bank: 4 mult-adds per input
    sample.
    """
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise ValueError(f"haar_analysis: spatial extents must be even, got {H}x{W}")
    counter.add(4 * x.size)
    # orthonormal: the adjoint is the inverse
    return Tensor._make(_analysis(x.data), (x,), lambda g: (_synthesis(g),), "haar_dwt")


def haar_synthesis(y: Tensor) -> Tensor:
    """Inverse of :func:`haar_analysis`."""
    if y.shape[-3] % 4:
        raise ValueError(f"haar_synthesis: channel count {y.shape[-3]} is not a multiple of 4")
    counter.add(4 * y.size)
    return Tensor._make(_synthesis(y.data), (y,), lambda g: (_analysis(g),), "haar_idwt")


@dataclass
class SubbandSet:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    level: int = 1
    orig_hw: tuple[int, int] | None = None  # pre-padding extents, cropped back on inverse

    def __post_init__(self) -> None:
        shapes = {b.shape for b in self.bands()}
        if len(shapes) != 1:
            raise ValueError(f"sub-band shapes differ: {sorted(shapes)}")

    def bands(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.ll, self.lh, self.hl, self.hh

    def energy(self) -> float:
        return float(sum((b.data**2).sum() for b in self.bands()))


def haar_dwt2(x: Tensor, pad: bool = False) -> SubbandSet:
    """One level of the orthonormal Haar DWT on the last two axes.

    With ``pad=True`` odd extents are reflect-padded to even and the original
    size is remembered so :func:`haar_idwt2` can crop it back.
    """
    H, W = x.shape[-2:]
    orig = None
    if H % 2 or W % 2:
        if not pad:
            raise ValueError(f"haar_dwt2: odd extent {H}x{W}; pass pad=True to reflect-pad")
        x = pad_reflect(x, H % 2, W % 2)
        orig = (H, W)
    y = haar_analysis(x)
    C = x.shape[-3]
    bands = [getitem(y, (Ellipsis, slice(i * C, (i + 1) * C), slice(None), slice(None))) for i in range(4)]
    return SubbandSet(*bands, level=1, orig_hw=orig)


def haar_idwt2(s: SubbandSet) -> Tensor:
    x = haar_synthesis(concat(list(s.bands()), axis=-3))
    if s.orig_hw is not None:
        H, W = s.orig_hw
        x = getitem(x, (Ellipsis, slice(0, H), slice(0, W)))
    return x


def dwt_downsample(v: Tensor, window: tuple[int, int], levels: int,
                   fuse_weights: Sequence[Tensor]) -> Tensor:
    """Shrink a window of value tokens by 4**levels.

    v: [..., h*w, C] tokens in row-major pixel order. Each level applies the
    Haar DWT, stacks the four bands along channels and maps 4C -> C with the
    level's fusion weight ([4C, C]). ``levels == 0`` returns ``v`` unchanged.
    """
    if levels == 0:
        return v
    h, w = window
    n, C = v.shape[-2:]
    if n != h * w:
        raise ValueError(f"dwt_downsample: {n} tokens cannot form a {h}x{w} window")
    f = 2**levels
    if h % f or w % f:
        raise ValueError(f"dwt_downsample: window {h}x{w} not divisible by 2**{levels}")
    if len(fuse_weights) < levels:
        raise ValueError(f"dwt_downsample: need {levels} fusion weights, got {len(fuse_weights)}")
    lead = v.shape[:-2]
    nl = len(lead)
    x = reshape(v, lead + (h, w, C))
    for lvl in range(levels):
        if fuse_weights[lvl].shape != (4 * C, C):
            raise ValueError(f"dwt_downsample: fusion weight {lvl} has shape {fuse_weights[lvl].shape}, "
                             f"expected {(4 * C, C)}")
        x = transpose(x, tuple(range(nl)) + (nl + 2, nl, nl + 1))      # -> [..., C, h, w]
        x = haar_analysis(x)                                           # -> [..., 4C, h/2, w/2]
        x = transpose(x, tuple(range(nl)) + (nl + 1, nl + 2, nl))      # -> [..., h/2, w/2, 4C]
        x = linear(x, fuse_weights[lvl])
        h, w = h // 2, w // 2
    return reshape(x, lead + (h * w, C))
