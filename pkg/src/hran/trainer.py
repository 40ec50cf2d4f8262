"""L1 training with Adam and step-halving learning rate."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import NonFiniteError, Tape, l1_loss
from .checkpoint import OptimState, save_checkpoint
from .config import DegradationSpec, RunConfig, TrainConfig, make_rng
from .data import SRDataset, batch_to_images, images_to_batch
from .metrics import EvalProtocol, psnr_y
from .model import HRAN

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Raised when the loss becomes NaN or Inf; carries the post-mortem checkpoint path."""

    def __init__(self, message, checkpoint: Optional[Path] = None):
        super().__init__(message)
        self.checkpoint = checkpoint


def lr_at(iteration: int, config: TrainConfig) -> float:
    """``base_lr * 0.5 ** floor(iteration / halve_every)``."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return config.base_lr * 0.5 ** (iteration // config.halve_every)


def adam_step(params, grads, state: OptimState, lr: float):
    """One bias-corrected Adam update, in place. Returns ``(params, state)``."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def loss_and_grads(model: HRAN, lr_batch: np.ndarray, hr_batch: np.ndarray) -> Tuple[float, dict]:
    tape = Tape()
    watched = {name: tape.watch(arr, name) for name, arr in model.params.items()}
    loss = l1_loss(model.forward(lr_batch, watched), hr_batch)
    grads = tape.backward(loss)
    return loss.item(), grads


def super_resolve(model: HRAN, lr_image: np.ndarray) -> np.ndarray:
    """8-bit SR image for one 8-bit LR image."""
    return batch_to_images(model.predict(images_to_batch([lr_image])))[0]


def validation_psnr(model: HRAN, pairs: Sequence[Tuple[np.ndarray, np.ndarray]], scale: int) -> float:
    """Mean Y-PSNR over ``(lr, hr)`` pairs using the standard shave-by-scale protocol."""
    protocol = EvalProtocol.for_scale(scale)
    return float(np.mean([psnr_y(super_resolve(model, lr), hr, protocol) for lr, hr in pairs]))


@dataclass
class TrainResult:
    log_lines: List[str] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    val_psnr: List[Tuple[int, float]] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)


def format_log_line(iteration: int, lr: float, loss: float, val: Optional[float] = None) -> str:
    cols = [str(iteration), repr(lr), repr(loss)]
    if val is not None:
        cols.append(f"{val:.4f}")
    return "\t".join(cols)


def train(
    model: HRAN,
    dataset: SRDataset,
    config: TrainConfig,
    optim: Optional[OptimState] = None,
    val_pairs: Optional[Sequence[Tuple[np.ndarray, np.ndarray]]] = None,
    out_dir=None,
    degradation: Optional[DegradationSpec] = None,
    until: Optional[int] = None,
    on_log: Optional[Callable[[str], None]] = None,
) -> Tuple[OptimState, TrainResult]:
    """Run training steps ``optim.t .. until`` (default ``config.total_iters``).

    Batch draws for step ``t`` come from ``make_rng(seed, t)``, so a run
    resumed from a checkpoint at step ``t`` continues exactly as the
    uninterrupted run would. Checkpoints (``iter_{t:08d}.ckpt`` and
    ``last.ckpt``) and ``train.log`` go to ``out_dir`` when given.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if optim is None:
        optim = OptimState.zeros_like(model.params, beta1=config.beta1, beta2=config.beta2, eps=config.eps,
                                      base_lr=config.base_lr)
    scale = model.config.scale
    until = config.total_iters if until is None else min(until, config.total_iters)
    run = RunConfig(model.config, config, degradation or DegradationSpec(scale=scale))
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "train.log", "a")
    result = TrainResult()

    def emit(line):
        result.log_lines.append(line)
        if log_file is not None:
            log_file.write(line + "\n")
            log_file.flush()
        if on_log is not None:
            on_log(line)

    try:
        while optim.t < until:
            t = optim.t
            rng = make_rng(config.seed, t)
            lr_b, hr_b = dataset.sample_batch(config.batch_size, config.patch_size, scale, rng)
            lr = lr_at(t, config)
            try:
                loss, grads = loss_and_grads(model, lr_b, hr_b)
            except NonFiniteError:
                loss = math.nan
            if not math.isfinite(loss):
                dump = None
                if out_dir is not None:
                    dump = out_dir / f"iter_{t:08d}.ckpt.nan"
                    save_checkpoint(dump, model, optim, run)
                raise TrainingDiverged(f"loss became {loss} at iteration {t}", dump)
            adam_step(model.params, grads, optim, lr)
            result.losses.append(loss)
            step = optim.t
            val = None
            if val_pairs and config.val_every and step % config.val_every == 0:
                val = validation_psnr(model, val_pairs, scale)
                result.val_psnr.append((step, val))
            if step % config.log_every == 0 or val is not None:
                emit(format_log_line(step, lr, loss, val))
            if out_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
                path = out_dir / f"iter_{step:08d}.ckpt"
                save_checkpoint(path, model, optim, run)
                save_checkpoint(out_dir / "last.ckpt", model, optim, run)
                result.checkpoints.append(path)
        if out_dir is not None:
            save_checkpoint(out_dir / "last.ckpt", model, optim, run)
    finally:
        if log_file is not None:
            log_file.close()
    return optim, result
