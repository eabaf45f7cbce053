"""Command-line entry point: ``wavesr <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .complexity import scaling_experiment
from .imaging import Image, psnr, read_pnm, rgb_to_y, ssim, write_pnm
from .network import ModelConfig, load_checkpoint, save_checkpoint
from .tensor import Tensor
from .training import TrainSpec, super_resolve, train_toy, write_loss_trace
from .wavelet import haar_dwt2, haar_idwt2


class UsageError(Exception):
    pass


_CONFIG_KEYS = {f.name: f for f in dataclasses.fields(ModelConfig)}


def parse_config_file(path) -> dict:
    """``key=value`` lines (``#`` comments) naming ModelConfig fields."""
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def _coerce(key: str, value: str):
    if key == "window_schedule":
        return tuple(int(v) for v in value.split(","))
    if key == "alternate":
        if value.lower() not in ("0", "1", "true", "false"):
            raise UsageError(f"alternate must be true/false, got {value!r}")
        return value.lower() in ("1", "true")
    return int(value)


def build_config(args) -> ModelConfig:
    base = ModelConfig.tiny() if getattr(args, "preset", "default") == "tiny" else ModelConfig()
    values = dataclasses.asdict(base)
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    if getattr(args, "scale", None) is not None:
        values["upscale"] = args.scale
    try:
        return ModelConfig(**values)
    except (ValueError, IndexError) as exc:
        raise UsageError(f"invalid model config: {exc}") from exc


def _normalize(band: np.ndarray) -> tuple[np.ndarray, float, float]:
    lo, hi = float(band.min()), float(band.max())
    if hi == lo:
        return np.full_like(band, 0.5), 0.0, 0.5
    s = 1.0 / (hi - lo)
    return (band - lo) * s, s, -lo * s


def cmd_dwt(args) -> int:
    img = read_pnm(args.input)
    y = rgb_to_y(img) if img.channels == 3 else img
    x = Tensor(y.samples)
    bands = haar_dwt2(x, pad=True)
    err = float(np.abs(haar_idwt2(bands).data - x.data).max())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, band in zip(("ll", "lh", "hl", "hh"), bands.bands()):
        samples, s, o = _normalize(band.data)
        write_pnm(Image(samples), out / f"{name}.pgm")
        print(f"band={name} scale={s:.9g} offset={o:.9g}")
    print(f"roundtrip_max_abs_err={err:.3e}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results = run_suite(include_model=args.tiny)
    ok = True
    for name, err, tol in results:
        passed = err <= tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: max_rel_err={err:.3e} (tol {tol:.0e})")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    config = build_config(args)
    report = scaling_experiment(config, sizes, seed=args.seed)
    report.write_csv(args.out)
    print(f"slope_wasc={report.slope_wasc:.4f} slope_wsa={report.slope_wsa:.4f}")
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    hr = [read_pnm(p) for p in args.hr]
    spec = TrainSpec(patch_size=args.patch, batch_size=args.batch, steps=args.steps, lr=args.lr,
                     seed=args.seed, clip_norm=None if args.no_clip else 1.0)
    result = train_toy(config, spec, hr)
    save_checkpoint(result.params, config, args.out)
    if args.trace:
        write_loss_trace(result.trace, args.trace)
    first, last = result.trace[0][2], result.trace[-1][2]
    print(f"steps={spec.steps} loss_first={first:.6f} loss_last={last:.6f}")
    return 0


def cmd_infer(args) -> int:
    params, config = load_checkpoint(args.ckpt)
    write_pnm(super_resolve(read_pnm(args.input), params, config), args.out)
    return 0


def cmd_metrics(args) -> int:
    a, b = read_pnm(args.a), read_pnm(args.b)
    p = psnr(a, b)
    print(f"psnr={'inf' if math.isinf(p) else f'{p:.4f}'} ssim={ssim(a, b):.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavesr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def model_flags(p, preset):
        p.add_argument("--config", help="file of key=value lines overriding model defaults "
                                        f"({', '.join(_CONFIG_KEYS)})")
        p.add_argument("--preset", choices=("tiny", "default"), default=preset,
                       help=f"base model config before overrides (default: {preset})")

    p = sub.add_parser("dwt", help="write the four Haar sub-bands of an image's luma as PGMs")
    p.add_argument("--in", dest="input", required=True, help="input PPM/PGM")
    p.add_argument("--out-dir", required=True, help="directory for ll/lh/hl/hh.pgm")
    p.set_defaults(func=cmd_dwt)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--tiny", action="store_true", help="also check the end-to-end tiny model")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="WA-SC vs W-SA mult-add scaling experiment")
    p.add_argument("--sizes", default="8,16,32,64", help="comma-separated window sizes (default: 8,16,32,64)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=0, help="seed for random inputs (default: 0)")
    model_flags(p, "default")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-toy", help="train a small model on HR images")
    p.add_argument("--hr", required=True, nargs="+", help="HR training PPM(s)")
    p.add_argument("--scale", type=int, choices=(2, 3, 4), default=None, help="upscale factor")
    p.add_argument("--steps", type=int, default=200, help="optimizer steps (default: 200)")
    p.add_argument("--seed", type=int, default=0, help="seed for init and patch sampling (default: 0)")
    p.add_argument("--lr", type=float, default=TrainSpec.lr, help=f"base learning rate (default: {TrainSpec.lr})")
    p.add_argument("--patch", type=int, default=32, help="HR patch size (default: 32)")
    p.add_argument("--batch", type=int, default=4, help="patches per step (default: 4)")
    p.add_argument("--no-clip", action="store_true", help="disable gradient clipping at global norm 1")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="loss trace CSV path (step,lr,loss)")
    model_flags(p, "tiny")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve an image with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("metrics", help="PSNR/SSIM on the Y channel")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_metrics)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"wavesr: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"wavesr {args.command}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
