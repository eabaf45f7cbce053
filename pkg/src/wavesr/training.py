"""L1 objective, Adam, milestone LR schedule and the toy training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .imaging import Image, bicubic_resize
from .network import ModelConfig, Params, init_params, model_forward
from .tensor import Rng, Tensor, tabs, mean, sub

log = logging.getLogger(__name__)

MILESTONES = (0.5, 0.8, 0.9, 0.95)  # 250K/400K/450K/475K of 500K
FULL_SCALE_LR = 6e-4
TOY_LR = 1e-2  # 500-step toy runs do not get far at FULL_SCALE_LR


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class OptimState:
    lr: float = FULL_SCALE_LR
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainSpec:
    patch_size: int = 32
    batch_size: int = 4
    steps: int = 200
    lr: float = TOY_LR
    milestones: tuple[float, ...] = MILESTONES
    seed: int = 0
    clip_norm: float | None = 1.0   # None disables global-norm clipping

    def __post_init__(self) -> None:
        ms = tuple(self.milestones)
        if any(not 0 < m < 1 for m in ms) or list(ms) != sorted(ms):
            raise ValueError(f"milestones must be ascending fractions in (0, 1), got {ms}")
        self.milestones = ms


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss: shapes differ {pred.shape} vs {target.shape}")
    return mean(tabs(sub(pred, target)))


def lr_at(step: int, total: int, base_lr: float, milestones: Sequence[float] = MILESTONES) -> float:
    """Base LR halved once for every milestone fraction already reached."""
    halvings = sum(1 for m in milestones if step >= m * total)
    return base_lr * 0.5**halvings


def adam_step(params: Params, grads: dict[str, np.ndarray], state: OptimState, lr: float | None = None) -> None:
    """Bias-corrected Adam, updating ``params`` in place."""
    lr = state.lr if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for {name}")
        if g.shape != params[name].shape:
            raise ValueError(f"adam_step: gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p = params[name]
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        f = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * f
    return norm


def sample_patches(hr_images: Sequence[Image], spec: TrainSpec, rng: Rng, scale: int,
                   count: int | None = None) -> list[tuple[Image, Image]]:
    """Seeded random HR crops and their bicubic-downscaled LR counterparts."""
    p = spec.patch_size
    if p % scale:
        raise ValueError(f"patch size {p} not divisible by scale {scale}")
    for img in hr_images:
        if img.height < p or img.width < p:
            raise ValueError(f"HR image {img.width}x{img.height} is smaller than the {p}x{p} patch")
    out = []
    for _ in range(spec.batch_size if count is None else count):
        img = hr_images[int(rng.integers(0, len(hr_images)))]
        y = int(rng.integers(0, img.height - p + 1))
        x = int(rng.integers(0, img.width - p + 1))
        hr = Image(img.samples[:, y:y + p, x:x + p].copy())
        out.append((bicubic_resize(hr, p // scale, p // scale), hr))
    return out


def _rgb(img: Image) -> np.ndarray:
    return img.samples if img.channels == 3 else np.repeat(img.samples, 3, axis=0)


@dataclass
class TrainResult:
    params: Params
    trace: list[tuple[int, float, float]]  # (step, lr, loss)
    state: OptimState


def train_toy(config: ModelConfig, spec: TrainSpec, hr_images: Sequence[Image],
              params: Params | None = None) -> TrainResult:
    """forward -> L1 -> backward -> Adam, with milestone LR halving."""
    if not hr_images:
        raise ValueError("train_toy needs at least one HR image")
    params = init_params(config, spec.seed) if params is None else params
    rng = Rng(spec.seed + 1)
    state = OptimState(lr=spec.lr)
    trace: list[tuple[int, float, float]] = []
    for step in range(spec.steps):
        batch = sample_patches(hr_images, spec, rng, config.upscale)
        lr_batch = Tensor(np.stack([_rgb(lo) for lo, _ in batch]))
        hr_batch = Tensor(np.stack([_rgb(hi) for _, hi in batch]))
        for t in params.values():
            t.grad = None
        try:
            loss = l1_loss(model_forward(lr_batch, params, config), hr_batch)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"training diverged at step {step}: {exc}") from exc
        loss.backward()
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
        if spec.clip_norm is not None:
            clip_grads(grads, spec.clip_norm)
        lr = lr_at(step, spec.steps, spec.lr, spec.milestones)
        try:
            adam_step(params, grads, state, lr)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"training diverged at step {step}: {exc}") from exc
        trace.append((step, lr, loss.item()))
        if step % 50 == 0:
            log.info("step %d lr %.3g loss %.6f", step, lr, loss.item())
    return TrainResult(params, trace, state)


def write_loss_trace(trace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("step", "lr", "loss"))
        for step, lr, loss in trace:
            writer.writerow((step, repr(float(lr)), repr(float(loss))))


def super_resolve(img: Image, params: Params, config: ModelConfig) -> Image:
    """Inference on one LR image; output clamped to [0, 1]."""
    from .tensor import no_grad

    with no_grad():
        out = model_forward(Tensor(_rgb(img)), params, config, clamp=True)
    return Image(out.data)
