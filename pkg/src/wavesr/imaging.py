"""Binary PNM I/O, bicubic resampling, luma conversion, PSNR and SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Full-range BT.601 luma
LUMA = np.array([0.299, 0.587, 0.114])

SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WIN, SSIM_SIGMA = 11, 1.5


@dataclass
class Image:
    """Planar samples in [0, 1], shape [channels, height, width]."""

    samples: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 2:
            s = s[None]
        if s.ndim != 3 or s.shape[0] not in (1, 3) or min(s.shape[1:]) < 1:
            raise ValueError(f"image samples must be [1|3, H, W], got {s.shape}")
        self.samples = s

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]


class PnmError(ValueError):
    pass


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        if i >= len(buf):
            raise PnmError("truncated PNM header")
        c = buf[i:i + 1]
        if c == b"#":
            while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(buf) and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
                j += 1
            tokens.append(buf[i:j])
            i = j
    # exactly one whitespace byte separates maxval from the raster
    if i >= len(buf) or not buf[i:i + 1].isspace():
        raise PnmError("missing whitespace after PNM header")
    return tokens, i + 1


def decode_pnm(buf: bytes, channels: int | None = None) -> Image:
    tokens, offset = _header_tokens(buf, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"unsupported PNM type {magic!r}; only binary P5/P6")
    nch = 1 if magic == b"P5" else 3
    if channels is not None and channels != nch:
        raise PnmError(f"file is {magic.decode()} ({nch} channel) but {channels} channels were requested")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PnmError(f"malformed PNM header: {tokens!r}") from exc
    if w <= 0 or h <= 0:
        raise PnmError(f"bad PNM dimensions {w}x{h}")
    if maxval != 255:
        raise PnmError(f"maxval {maxval} unsupported, need 255")
    n = w * h * nch
    raster = buf[offset:offset + n]
    if len(raster) != n:
        raise PnmError(f"PNM raster truncated: {len(raster)} of {n} bytes")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, nch)
    return Image(arr.transpose(2, 0, 1).astype(np.float64) / 255.0)


def encode_pnm(img: Image) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    q = np.floor(np.clip(img.samples, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    header = magic + f"\n{img.width} {img.height}\n255\n".encode()
    return header + q.transpose(1, 2, 0).tobytes()


def read_pnm(path, channels: int | None = None) -> Image:
    return decode_pnm(Path(path).read_bytes(), channels)


def write_pnm(img: Image, path) -> None:
    Path(path).write_bytes(encode_pnm(img))


# -- resampling ----------------------------------------------------------------


def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax**2, ax**3
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] cubic-convolution weights along one axis.

    Downscaling widens the kernel by the scale factor (antialiasing);
    out-of-range taps are clamped to the edge sample.
    """
    scale = n_out / n_in
    width = 1.0 / scale if scale < 1 else 1.0
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    support = 2.0 * width
    m = np.zeros((n_out, n_in))
    for i, c in enumerate(centers):
        taps = np.arange(math.floor(c - support), math.ceil(c + support) + 1)
        wts = cubic_kernel((c - taps) / width)
        wts = wts / wts.sum()
        np.add.at(m[i], np.clip(taps, 0, n_in - 1), wts)
    return m


def bicubic_resize(img: Image, out_w: int, out_h: int) -> Image:
    if out_w <= 0 or out_h <= 0:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    my = resize_matrix(img.height, out_h)
    mx = resize_matrix(img.width, out_w)
    return Image(np.einsum("yh,chw,xw->cyx", my, img.samples, mx))


# -- metrics -------------------------------------------------------------------


def rgb_to_y(img: Image) -> Image:
    if img.channels != 3:
        raise ValueError(f"rgb_to_y needs 3 channels, got {img.channels}")
    return Image(np.tensordot(LUMA, img.samples, axes=1)[None])


def _luma(img: Image) -> np.ndarray:
    return (rgb_to_y(img) if img.channels == 3 else img).samples[0]


def psnr(a: Image, b: Image) -> float:
    """PSNR in dB on the luma channel; identical inputs give ``inf``."""
    if a.samples.shape != b.samples.shape:
        raise ValueError(f"psnr: shapes differ {a.samples.shape} vs {b.samples.shape}")
    mse = float(np.mean((_luma(a) - _luma(b)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    x = sliding_window_view(x, k, axis=0) @ g
    return sliding_window_view(x, k, axis=1) @ g


def ssim(a: Image, b: Image) -> float:
    """Single-scale SSIM on luma: 11x11 Gaussian (sigma 1.5), valid positions only."""
    if a.samples.shape != b.samples.shape:
        raise ValueError(f"ssim: shapes differ {a.samples.shape} vs {b.samples.shape}")
    x, y = _luma(a), _luma(b)
    if min(x.shape) < SSIM_WIN:
        raise ValueError(f"ssim: image {x.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    g = _gaussian(SSIM_WIN, SSIM_SIGMA)
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx**2
    syy = _filter_valid(y * y, g) - my**2
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx**2 + my**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def synthetic_image(size: int, seed: int, beta: float = 1.0, mix: float = 0.8) -> Image:
    """RGB patch with a 1/f**beta amplitude spectrum, rescaled to [0, 1].

    Channels share a common field (weight ``mix``) plus an independent one,
    which gives correlated colour like natural photographs.
    """
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    f = np.sqrt(fx**2 + fy**2)
    f[0, 0] = 1.0
    amp = 1.0 / f**beta
    amp[0, 0] = 0.0

    def field() -> np.ndarray:
        return np.fft.irfft2(amp * np.exp(2j * np.pi * rng.uniform(size=f.shape)), s=(size, size))

    common = field()
    img = np.stack([mix * common + (1 - mix) * field() for _ in range(3)])
    img = (img - img.min()) / (img.max() - img.min())
    return Image(img)
