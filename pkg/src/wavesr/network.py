"""Transformer layers/blocks, the end-to-end SR model and checkpoint I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import DfeParams, WaScParams, bias_table_size, c_sc, dfe, wa_sc
from .tensor import (Rng, Tensor, add, conv2d, gelu, init_uniform, layer_norm, linear, mean, mul,
                     pixel_shuffle, reshape, sigmoid, transpose)
from .windowing import merge, partition, schedule, tokens_to_spatial

Params = dict[str, Tensor]


@dataclass
class ModelConfig:
    num_blocks: int = 4
    layers_per_block: int = 6
    channels: int = 60
    heads: int = 6
    base_window: int = 8
    window_schedule: tuple[int, ...] = (8, 8, 16, 16, 32, 32)
    upscale: int = 2
    ffn_expansion: int = 2
    alternate: bool = True  # even TLs use WA-SC, odd TLs C-SC; False = WA-SC everywhere

    def __post_init__(self) -> None:
        self.window_schedule = tuple(int(s) for s in self.window_schedule)
        self.validate()

    def validate(self) -> None:
        if self.channels % 2:
            raise ValueError(f"channels must be even, got {self.channels}")
        if (self.channels // 2) % self.heads:
            raise ValueError(f"channels/2 = {self.channels // 2} not divisible by {self.heads} heads")
        if len(self.window_schedule) != self.layers_per_block:
            raise ValueError(f"window schedule has {len(self.window_schedule)} entries for "
                             f"{self.layers_per_block} layers")
        if self.upscale < 1:
            raise ValueError("upscale must be >= 1")
        if min(self.num_blocks, self.layers_per_block, self.base_window, self.ffn_expansion) < 1:
            raise ValueError("block/layer counts, base window and FFN expansion must be positive")
        for i in range(self.layers_per_block):
            schedule(self, i)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        base = dict(num_blocks=1, layers_per_block=2, channels=8, heads=2, base_window=4,
                    window_schedule=(4, 8))
        base.update(overrides)
        return cls(**base)

    def uses_wa_sc(self, layer_index: int) -> bool:
        return not self.alternate or layer_index % 2 == 0

    @property
    def head_dim(self) -> int:
        return self.channels // 2 // self.heads

    @property
    def gate_hidden(self) -> int:
        return max(self.channels // 4, 1)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map for every parameter of ``config``."""
    C, s = config.channels, config.upscale
    c2, ch, r, e = C // 2, config.head_dim, config.gate_hidden, config.ffn_expansion * C
    shapes: dict[str, tuple[int, ...]] = {
        "shallow.weight": (C, 3, 3, 3),
        "shallow.bias": (C,),
    }
    for b in range(config.num_blocks):
        for i in range(config.layers_per_block):
            p = f"blocks.{b}.layers.{i}."
            layout = schedule(config, i)
            shapes.update({
                p + "norm1.weight": (C,), p + "norm1.bias": (C,),
                p + "dfe.linear.weight": (C, C), p + "dfe.linear.bias": (C,),
                p + "dfe.wave.weight": (4 * C, 1, 3, 3), p + "dfe.wave.bias": (4 * C,),
            })
            if config.uses_wa_sc(i):
                shapes[p + "attn.bias_table"] = (config.heads, bias_table_size(layout))
                for lvl in range(layout.dwt_levels):
                    shapes[p + f"attn.fuse.{lvl}.weight"] = (4 * ch, ch)
                shapes[p + "attn.proj.weight"] = (c2, c2)
            shapes.update({
                p + "attn_out.weight": (c2, C), p + "attn_out.bias": (C,),
                p + "gate.fc1.weight": (C, r), p + "gate.fc1.bias": (r,),
                p + "gate.fc2.weight": (r, C), p + "gate.fc2.bias": (C,),
                p + "norm2.weight": (C,), p + "norm2.bias": (C,),
                p + "ffn.fc1.weight": (C, e), p + "ffn.fc1.bias": (e,),
                p + "ffn.fc2.weight": (e, C), p + "ffn.fc2.bias": (C,),
            })
        shapes[f"blocks.{b}.conv.weight"] = (C, C, 3, 3)
        shapes[f"blocks.{b}.conv.bias"] = (C,)
    shapes["upsample.weight"] = (3 * s * s, C, 3, 3)
    shapes["upsample.bias"] = (3 * s * s,)
    return shapes


def init_params(config: ModelConfig, seed: int = 0) -> Params:
    """Seeded parameter set; weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = Rng(seed)
    params: Params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith("norm1.weight") or name.endswith("norm2.weight"):
            t = Tensor(np.ones(shape), requires_grad=True)
        elif name.endswith("bias_table"):
            t = init_uniform(rng, shape, 1, scale=0.02)
        elif leaf == "bias":
            data = np.zeros(shape)
            if name.endswith("dfe.wave.bias"):
                # constant 2 in LL inverts to an all-ones wave branch: DFE starts near X_ch
                data[: shape[0] // 4] = 2.0
            t = Tensor(data, requires_grad=True)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            t = init_uniform(rng, shape, fan_in)
        params[name] = t
    return params


def count_params(params: Params) -> int:
    return int(sum(t.size for t in params.values()))


# -- forward -------------------------------------------------------------------


def _channels_last(x: Tensor) -> Tensor:
    n = x.ndim - 3
    return transpose(x, tuple(range(n)) + (n + 1, n + 2, n))


def _channels_first(x: Tensor) -> Tensor:
    n = x.ndim - 3
    return transpose(x, tuple(range(n)) + (n + 2, n, n + 1))


def channel_gate(a: Tensor, params: Params, prefix: str) -> Tensor:
    """Squeeze-and-excite scale in (0, 1) per channel of ``a`` [..., C, H, W]."""
    s = mean(a, axis=(-2, -1))
    s = gelu(linear(s, params[prefix + "gate.fc1.weight"], params[prefix + "gate.fc1.bias"]))
    s = sigmoid(linear(s, params[prefix + "gate.fc2.weight"], params[prefix + "gate.fc2.bias"]))
    return reshape(s, s.shape + (1, 1))


def attention_branch(x: Tensor, layer_index: int, params: Params, config: ModelConfig, prefix: str) -> Tensor:
    """Windowed DFE + WA-SC/C-SC on the normalized map ``x`` [..., C, H, W]."""
    layout = schedule(config, layer_index)
    windows, record = partition(x, layout)
    dp = DfeParams(params[prefix + "dfe.linear.weight"], params[prefix + "dfe.linear.bias"],
                   params[prefix + "dfe.wave.weight"], params[prefix + "dfe.wave.bias"])
    q, v = dfe(tokens_to_spatial(windows, layout), dp)
    if config.uses_wa_sc(layer_index):
        wp = WaScParams(config.heads, params[prefix + "attn.bias_table"], params[prefix + "attn.proj.weight"],
                        [params[prefix + f"attn.fuse.{k}.weight"] for k in range(layout.dwt_levels)])
        a = wa_sc(q, v, layout, wp)
    else:
        a = c_sc(q, v)
    a = linear(a, params[prefix + "attn_out.weight"], params[prefix + "attn_out.bias"])
    a = merge(a, record, layout)
    return mul(a, channel_gate(a, params, prefix))


def transformer_layer(x: Tensor, layer_index: int, params: Params, config: ModelConfig, block: int = 0) -> Tensor:
    """Pre-norm residual layer: y = x + gated attention, z = y + FFN."""
    p = f"blocks.{block}.layers.{layer_index}."
    h = layer_norm(_channels_last(x), params[p + "norm1.weight"], params[p + "norm1.bias"])
    y = add(x, attention_branch(_channels_first(h), layer_index, params, config, p))
    t = layer_norm(_channels_last(y), params[p + "norm2.weight"], params[p + "norm2.bias"])
    t = gelu(linear(t, params[p + "ffn.fc1.weight"], params[p + "ffn.fc1.bias"]))
    t = linear(t, params[p + "ffn.fc2.weight"], params[p + "ffn.fc2.bias"])
    return add(y, _channels_first(t))


def transformer_block(x: Tensor, block: int, params: Params, config: ModelConfig) -> Tensor:
    h = x
    for i in range(config.layers_per_block):
        h = transformer_layer(h, i, params, config, block)
    h = conv2d(h, params[f"blocks.{block}.conv.weight"], params[f"blocks.{block}.conv.bias"])
    return add(x, h)


def model_forward(lr_image, params: Params, config: ModelConfig, clamp: bool = False) -> Tensor:
    """[..., 3, H, W] low-resolution input -> [..., 3, sH, sW].

    ``clamp`` limits the output to [0, 1]; use it for inference only, it
    is not differentiable.
    """
    x = lr_image if isinstance(lr_image, Tensor) else Tensor(lr_image)
    if x.ndim < 3 or x.shape[-3] != 3:
        raise ValueError(f"model input must be [..., 3, H, W], got {x.shape}")
    H, W = x.shape[-2:]
    if H < config.base_window or W < config.base_window:
        raise ValueError(f"input {H}x{W} is smaller than the {config.base_window}x{config.base_window} base window")
    shallow = conv2d(x, params["shallow.weight"], params["shallow.bias"])
    deep = shallow
    for b in range(config.num_blocks):
        deep = transformer_block(deep, b, params, config)
    feat = add(deep, shallow)
    out = pixel_shuffle(conv2d(feat, params["upsample.weight"], params["upsample.bias"]), config.upscale)
    if clamp:
        out = Tensor(np.clip(out.data, 0.0, 1.0))
    return out


# -- checkpoint ----------------------------------------------------------------

MAGIC = b"WHSR"
VERSION = 1
_CONFIG_INTS = ("num_blocks", "layers_per_block", "channels", "heads", "base_window",
                "upscale", "ffn_expansion", "alternate")


class CheckpointError(ValueError):
    pass


def encode_checkpoint(params: Params, config: ModelConfig) -> bytes:
    """Binary layout, all little-endian:

    magic "WHSR" | u32 version | u32 x 8 config ints | u32 schedule length |
    u32 per schedule entry | u32 tensor count | per tensor: u32 name length,
    utf-8 name, u32 rank, u32 per extent, float32 samples (row-major).
    """
    out = [MAGIC, struct.pack("<I", VERSION)]
    out.append(struct.pack("<8I", *(int(getattr(config, k)) for k in _CONFIG_INTS)))
    out.append(struct.pack("<I", len(config.window_schedule)))
    out.append(struct.pack(f"<{len(config.window_schedule)}I", *config.window_schedule))
    out.append(struct.pack("<I", len(params)))
    for name, t in params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: {what} needs {n} bytes at offset {self.pos}, "
                                  f"only {len(self.buf) - self.pos} left")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u32s(self, what: str, count: int) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count, what))


def decode_checkpoint(buf: bytes) -> tuple[Params, ModelConfig]:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    ints = dict(zip(_CONFIG_INTS, r.u32s("config block", len(_CONFIG_INTS))))
    sched = r.u32s("window schedule", r.u32("schedule length"))
    try:
        config = ModelConfig(window_schedule=tuple(sched), **{k: (bool(v) if k == "alternate" else v)
                                                              for k, v in ints.items()})
    except (ValueError, IndexError) as exc:
        raise CheckpointError(f"invalid config block: {exc}") from exc
    expected = param_shapes(config)
    count = r.u32("tensor count")
    if count != len(expected):
        raise CheckpointError(f"checkpoint holds {count} tensors, config implies {len(expected)}")
    params: Params = {}
    for name_expected, shape_expected in expected.items():
        start = r.pos
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        if name != name_expected:
            raise CheckpointError(f"tensor at offset {start} is {name!r}, expected {name_expected!r}")
        rank = r.u32(f"rank of {name}")
        shape = r.u32s(f"extents of {name}", rank)
        if shape != shape_expected:
            raise CheckpointError(f"tensor {name!r} at offset {start} has shape {shape}, "
                                  f"config implies {shape_expected}")
        n = int(np.prod(shape))
        data = np.frombuffer(r.take(4 * n, f"data of {name}"), dtype="<f4").reshape(shape)
        params[name] = Tensor(data.astype(np.float64), requires_grad=True)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after offset {r.pos}")
    return params, config


def save_checkpoint(params: Params, config: ModelConfig, path) -> None:
    Path(path).write_bytes(encode_checkpoint(params, config))


def load_checkpoint(path) -> tuple[Params, ModelConfig]:
    return decode_checkpoint(Path(path).read_bytes())
