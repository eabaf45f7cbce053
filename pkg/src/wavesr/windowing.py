"""Window partition/merge and the per-layer hierarchical window schedule."""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import Tensor, getitem, pad_reflect, reshape, transpose


@dataclass(frozen=True)
class WindowLayout:
    layer_index: int
    window_h: int
    window_w: int
    base_h: int
    base_w: int

    def __post_init__(self) -> None:
        if min(self.window_h, self.window_w, self.base_h, self.base_w) <= 0:
            raise ValueError(f"window and base extents must be positive: {self}")
        if self.alpha > 1:
            for win, base in ((self.window_h, self.base_h), (self.window_w, self.base_w)):
                ratio = win // base
                if win % base or ratio & (ratio - 1):
                    raise ValueError(f"window {win} is not base {base} times a power of two")
            if self.window_h // self.base_h != self.window_w // self.base_w:
                raise ValueError("height and width ratios to the base window must match")

    @property
    def alpha(self) -> float:
        """Ratio of this layer's window to the base window (per axis)."""
        return self.window_h / self.base_h

    @property
    def dwt_levels(self) -> int:
        if self.alpha <= 1:
            return 0
        return (self.window_h // self.base_h).bit_length() - 1

    @property
    def tokens(self) -> int:
        return self.window_h * self.window_w

    @property
    def down_hw(self) -> tuple[int, int]:
        """Spatial extent of the values after wavelet downsampling."""
        f = 2**self.dwt_levels
        return self.window_h // f, self.window_w // f

    @property
    def down_tokens(self) -> int:
        h, w = self.down_hw
        return h * w


@dataclass(frozen=True)
class PadRecord:
    height: int
    width: int
    padded_h: int
    padded_w: int


def schedule(config, layer_index: int) -> WindowLayout:
    """Window layout of TL ``layer_index`` inside every block of ``config``."""
    if not 0 <= layer_index < config.layers_per_block:
        raise IndexError(f"layer index {layer_index} outside [0, {config.layers_per_block})")
    size = config.window_schedule[layer_index]
    return WindowLayout(layer_index, size, size, config.base_window, config.base_window)


def partition(x: Tensor, layout: WindowLayout) -> tuple[Tensor, PadRecord]:
    """[..., C, H, W] -> [..., N, h*w, C] windows, row-major window and pixel order.

    H and W are reflect-padded up to multiples of the window size first.
    """
    C, H, W = x.shape[-3:]
    h, w = layout.window_h, layout.window_w
    if h > 4 * H or w > 4 * W:
        raise ValueError(f"window {h}x{w} is more than 4x the {H}x{W} image")
    Hp, Wp = -(-H // h) * h, -(-W // w) * w
    x = pad_reflect(x, Hp - H, Wp - W)
    lead = x.shape[:-3]
    n = len(lead)
    nh, nw = Hp // h, Wp // w
    y = reshape(x, lead + (C, nh, h, nw, w))
    y = transpose(y, tuple(range(n)) + (n + 1, n + 3, n + 2, n + 4, n))
    return reshape(y, lead + (nh * nw, h * w, C)), PadRecord(H, W, Hp, Wp)


def merge(windows: Tensor, record: PadRecord, layout: WindowLayout) -> Tensor:
    """Inverse of :func:`partition`, including the crop of any padding."""
    h, w = layout.window_h, layout.window_w
    Hp, Wp = record.padded_h, record.padded_w
    if Hp % h or Wp % w or Hp < record.height or Wp < record.width:
        raise ValueError(f"pad record {record} is inconsistent with a {h}x{w} window")
    nh, nw = Hp // h, Wp // w
    N, tokens, C = windows.shape[-3:]
    if N != nh * nw or tokens != h * w:
        raise ValueError(f"expected {nh * nw} windows of {h * w} tokens, got {N} of {tokens}")
    lead = windows.shape[:-3]
    n = len(lead)
    y = reshape(windows, lead + (nh, nw, h, w, C))
    y = transpose(y, tuple(range(n)) + (n + 4, n, n + 2, n + 1, n + 3))
    y = reshape(y, lead + (C, Hp, Wp))
    if (Hp, Wp) != (record.height, record.width):
        y = getitem(y, (Ellipsis, slice(0, record.height), slice(0, record.width)))
    return y


def tokens_to_spatial(t: Tensor, layout: WindowLayout) -> Tensor:
    """[..., h*w, C] -> [..., C, h, w]."""
    lead = t.shape[:-2]
    n = len(lead)
    C = t.shape[-1]
    y = reshape(t, lead + (layout.window_h, layout.window_w, C))
    return transpose(y, tuple(range(n)) + (n + 2, n, n + 1))


def spatial_to_tokens(x: Tensor) -> Tensor:
    """[..., C, h, w] -> [..., h*w, C]."""
    lead = x.shape[:-3]
    n = len(lead)
    C, h, w = x.shape[-3:]
    y = transpose(x, tuple(range(n)) + (n + 1, n + 2, n))
    return reshape(y, lead + (h * w, C))
