"""Finite-difference gradient checks for every differentiable op and the tiny model."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .attention import DfeParams, WaScParams, bias_table_size, c_sc, dfe, wa_sc
from .network import ModelConfig, init_params, model_forward, transformer_layer
from .tensor import Rng, Tensor, grad_check
from .wavelet import dwt_downsample, haar_analysis, haar_synthesis
from .windowing import WindowLayout, merge, partition

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4
MODEL_H = 1e-4  # h=1e-6 drowns gradients near 1e-7 in round-off


def _rand(rng: Rng, *shape) -> Tensor:
    return Tensor(rng.uniform(shape), requires_grad=True)


def _weighted(out: Tensor, rng_seed: int = 99) -> Tensor:
    w = np.random.default_rng(rng_seed).uniform(-1, 1, out.shape)
    return T.tsum(T.mul(out, Tensor(w)))


def primitive_cases(seed: int = 0) -> list[tuple[str, Callable[[], float]]]:
    rng = Rng(seed)
    cases: list[tuple[str, Callable[[], float]]] = []

    def case(name, inputs, fn, tol=PRIMITIVE_TOL, h=1e-6):
        cases.append((name, lambda: (grad_check(lambda _: _weighted(fn()), inputs, h), tol)))

    a, b = _rand(rng, 3, 4), _rand(rng, 4, 5)
    case("matmul", [a, b], lambda: T.matmul(a, b))
    ab, bb = _rand(rng, 2, 3, 4), _rand(rng, 4, 2)
    case("matmul_batched", [ab, bb], lambda: T.matmul(ab, bb))
    x, w, cb = _rand(rng, 2, 5, 6), _rand(rng, 3, 2, 3, 3), _rand(rng, 3)
    case("conv2d", [x, w, cb], lambda: T.conv2d(x, w, cb))
    xd, wd = _rand(rng, 2, 3, 4, 4), _rand(rng, 3, 1, 3, 3)
    case("conv2d_depthwise", [xd, wd], lambda: T.conv2d(xd, wd, groups=3))
    xl, g, be = _rand(rng, 3, 5), _rand(rng, 5), _rand(rng, 5)
    case("layer_norm", [xl, g, be], lambda: T.layer_norm(xl, g, be))
    xg = _rand(rng, 4, 3)
    case("gelu", xg, lambda: T.gelu(xg))
    case("sigmoid", xg, lambda: T.sigmoid(xg))
    case("softmax", xg, lambda: T.softmax(xg))
    case("exp", xg, lambda: T.exp(xg))
    case("abs", xg, lambda: T.tabs(xg))
    xs = _rand(rng, 8, 2, 3)
    case("pixel_shuffle", xs, lambda: T.pixel_shuffle(xs, 2))
    xp = _rand(rng, 2, 3, 5)
    case("pad_reflect", xp, lambda: T.pad_reflect(xp, 3, 2))
    tb = _rand(rng, 2, 9)
    idx = np.random.default_rng(1).integers(0, 9, (4, 3))
    case("take", tb, lambda: T.take_last(tb, idx))
    c1, c2 = _rand(rng, 2, 3), _rand(rng, 2, 2)
    case("concat", [c1, c2], lambda: T.concat([c1, c2], axis=1))
    xt = _rand(rng, 2, 3, 4)
    case("transpose_reshape_getitem", xt,
         lambda: T.getitem(T.reshape(T.transpose(xt, (2, 0, 1)), (4, 6)), (slice(1, 3), slice(None))))
    case("mean", xt, lambda: T.mean(xt, axis=(-2, -1)))
    xh = _rand(rng, 2, 4, 6)
    case("haar_dwt", xh, lambda: haar_analysis(xh))
    yh = _rand(rng, 8, 2, 3)
    case("haar_idwt", yh, lambda: haar_synthesis(yh))
    v, fw = _rand(rng, 16, 3), [_rand(rng, 12, 3), _rand(rng, 12, 3)]
    case("dwt_downsample", [v, *fw], lambda: dwt_downsample(v, (4, 4), 2, fw))

    layout = WindowLayout(0, 4, 4, 4, 4)
    xw = _rand(rng, 3, 6, 7)
    case("partition_merge", xw, lambda: merge(*partition(xw, layout), layout))
    return cases


def composite_cases(seed: int = 1) -> list[tuple[str, Callable[[], float]]]:
    rng = Rng(seed)
    cases: list[tuple[str, Callable[[], float]]] = []

    def case(name, inputs, fn, h=1e-6):
        cases.append((name, lambda: (grad_check(lambda _: _weighted(fn()), inputs, h), COMPOSITE_TOL)))

    C = 4
    x = _rand(rng, 2, C, 4, 4)
    p = DfeParams(_rand(rng, C, C), _rand(rng, C), _rand(rng, 4 * C, 1, 3, 3), _rand(rng, 4 * C))

    def dfe_out():
        q, v = dfe(x, p)
        return T.concat([q, v], axis=-1)

    case("dfe", [x, p.linear_w, p.linear_b, p.wave_w, p.wave_b], dfe_out)

    for k, win in ((0, 4), (1, 8)):
        layout = WindowLayout(0, win, win, 4, 4)
        q, v = _rand(rng, 2, win * win, 4), _rand(rng, 2, win * win, 4)
        wp = WaScParams(2, _rand(rng, 2, bias_table_size(layout)), _rand(rng, 4, 4),
                        [_rand(rng, 8, 2) for _ in range(layout.dwt_levels)])
        case(f"wa_sc_k{k}", [q, v, wp.bias_table, wp.proj, *wp.fuse],
             lambda q=q, v=v, layout=layout, wp=wp: wa_sc(q, v, layout, wp))

    qc, vc = _rand(rng, 2, 9, 4), _rand(rng, 2, 9, 4)
    case("c_sc", [qc, vc], lambda: c_sc(qc, vc))
    return cases


def model_cases(seed: int = 2) -> list[tuple[str, Callable[[], float]]]:
    """End-to-end L1 loss of the tiny config, one check per parameter tensor."""
    config = ModelConfig.tiny()
    params = init_params(config, seed)
    data = np.random.default_rng(seed)
    lr = Tensor(data.uniform(0, 1, (3, 8, 8)))
    hr = Tensor(data.uniform(0, 1, (3, 8 * config.upscale, 8 * config.upscale)))

    def loss(_):
        return T.mean(T.tabs(T.sub(model_forward(lr, params, config), hr)))

    cases = []
    for name, t in params.items():
        cases.append((f"model:{name}", lambda t=t: (grad_check(loss, t, MODEL_H), COMPOSITE_TOL)))

    xl = Tensor(data.uniform(-1, 1, (8, 7, 9)), requires_grad=True)
    cases.append(("transformer_layer:input",
                  lambda: (grad_check(lambda _: _weighted(transformer_layer(xl, 1, params, config)), xl, MODEL_H),
                           COMPOSITE_TOL)))
    return cases


def run_suite(include_model: bool = False) -> list[tuple[str, float, float]]:
    cases = primitive_cases() + composite_cases()
    if include_model:
        cases += model_cases()
    results = []
    for name, fn in cases:
        err, tol = fn()
        results.append((name, err, tol))
    return results
