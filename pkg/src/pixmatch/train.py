"""Self-supervised training: frame-pair sampling, the color reconstruction
loss, SGD with momentum and weight decay, and the poly learning-rate schedule.

No segmentation annotation is ever read here; the only supervision is the
squared color difference between the target frame and the warped reference.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .model import ModelConfig, ModelParams, build_model, forward_train, frames_to_tensor
from .layers import downsample_quarter
from .tensor import Tensor, backward, scale, square, sub, tensor_sum, zero_grads


@dataclass
class TrainConfig:
    lr_init: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 100
    frame_gap: int = 5
    batch_size: int = 4
    seed: int = 0
    clip_norm: float = 0.0  # 0 disables gradient clipping
    variant: str = "deform"
    height: int = 64
    width: int = 64
    d_emb: int = 32
    init_std: float = 0.01
    offset_init_std: float = 0.01

    def validate(self) -> None:
        if self.lr_init <= 0:
            raise ConfigError("lr_init must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.frame_gap < 1:
            raise ConfigError("frame_gap must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def model_config(self) -> ModelConfig:
        return ModelConfig(height=self.height, width=self.width, d_emb=self.d_emb,
                           variant=self.variant, init_std=self.init_std,
                           offset_init_std=self.offset_init_std, seed=self.seed)

    def to_dict(self) -> dict:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, val in d.items():
            if key not in known:
                raise ConfigError(f"unknown training config key {key!r}")
            py = type(known[key].default)
            try:
                kwargs[key] = val if py is str else py(val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {val!r}") from exc
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class OptimizerState:
    velocities: list = field(default_factory=list)  # one buffer per parameter
    epoch: int = 0


def sample_pair(video, t: int, gap: int):
    """(reference, target) = (frame[t-gap], frame[t]); masks are never touched."""
    if t - gap < 0 or t >= len(video.frames):
        raise IndexError(f"pair (t={t}, gap={gap}) out of range for {len(video.frames)} frames")
    return video.frames[t - gap], video.frames[t]


def reconstruction_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over pixels of the squared color distance, averaged over the batch.

    L = (1/N_pix) * sum_xy ||target(x,y) - pred(x,y)||_2^2 per item, where the
    norm runs over the channel axis.
    """
    if pred.shape != target.shape:
        raise ValueError(f"reconstruction_loss: shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    n, _, h, w = pred.shape
    return scale(tensor_sum(square(sub(target, pred))), 1.0 / (n * h * w))


def poly_lr(epoch_curr: int, epoch_max: int, lr_init: float) -> float:
    """lr_init * (1 - epoch_curr/epoch_max) ** 0.9, evaluated once per epoch."""
    if not 0 <= epoch_curr <= epoch_max:
        raise ValueError(f"epoch_curr {epoch_curr} outside [0, {epoch_max}]")
    return lr_init * (1.0 - epoch_curr / epoch_max) ** 0.9


def sgd_step(params, grads, state: OptimizerState, lr: float, momentum: float,
             weight_decay: float, decay_mask=None) -> None:
    """v <- momentum*v + g + wd*p ; p <- p - lr*v, in place.

    ``params`` are Tensors, ``grads`` matching arrays (may contain None for
    parameters outside the current graph). ``decay_mask`` marks which
    parameters receive weight decay (convolution weights only, by default all).
    """
    if len(params) != len(grads):
        raise ValueError("sgd_step: params/grads length mismatch")
    if not state.velocities:
        state.velocities = [np.zeros_like(p.data) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"sgd_step: non-finite gradient at parameter {i}")
        if weight_decay and (decay_mask is None or decay_mask[i]):
            g = g + weight_decay * p.data
        v = state.velocities[i]
        v *= momentum
        v += g
        p.data -= lr * v


def _clip_grads(grads, max_norm: float) -> None:
    total = 0.0
    for g in grads:
        if g is not None:
            total += float((g.astype(np.float64) ** 2).sum())
    norm = total ** 0.5
    if norm > max_norm > 0:
        s = max_norm / norm
        for g in grads:
            if g is not None:
                g *= s


@dataclass
class TrainResult:
    params: ModelParams
    state: OptimizerState
    epoch_losses: list
    log_lines: list
    seconds: float


def train(dataset, config: TrainConfig, params: ModelParams | None = None,
          progress=None) -> TrainResult:
    """Run the full self-supervised loop over a list of video sequences.

    Every valid (t-gap, t) pair of every video is visited once per epoch in a
    seed-shuffled order and consumed in minibatches. Deterministic given the
    dataset, the config, and the seed. ``progress``, when given, is called
    with (epoch, mean_loss) after each epoch.
    """
    config.validate()
    if not dataset:
        raise ValueError("train: empty dataset")
    for v in dataset:
        if len(v.frames) < config.frame_gap + 1:
            raise ValueError(f"train: video {v.name!r} has {len(v.frames)} frames, "
                             f"need at least {config.frame_gap + 1}")

    if params is None:
        params = build_model(config.model_config())
    named = list(params.named_params())
    tensors = [t for _, t, _ in named]
    decay_mask = [d for _, _, d in named]
    state = OptimizerState()

    pairs = [(vi, t) for vi, v in enumerate(dataset)
             for t in range(config.frame_gap, len(v.frames))]
    log_lines = []
    epoch_losses = []
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        lr = poly_lr(epoch, config.epochs, config.lr_init)
        order = np.random.default_rng((config.seed, epoch)).permutation(len(pairs))
        loss_sum, n_seen = 0.0, 0
        for step, lo in enumerate(range(0, len(order), config.batch_size)):
            batch = [pairs[i] for i in order[lo:lo + config.batch_size]]
            refs = frames_to_tensor([dataset[vi].frames[t - config.frame_gap] for vi, t in batch])
            tars = frames_to_tensor([dataset[vi].frames[t] for vi, t in batch])
            pred, _ = forward_train(params, refs, tars)
            loss = reconstruction_loss(pred, downsample_quarter(tars))
            lval = loss.item()
            if not np.isfinite(lval):
                raise FloatingPointError(f"train: non-finite loss at epoch {epoch} step {step}")
            backward(loss)
            grads = [t.grad for t in tensors]
            if config.clip_norm > 0:
                _clip_grads(grads, config.clip_norm)
            sgd_step(tensors, grads, state, lr, config.momentum, config.weight_decay, decay_mask)
            zero_grads(tensors)
            loss_sum += lval * len(batch)
            n_seen += len(batch)
            log_lines.append(f"{epoch} {step} {lr:.6e} {lval:.6e}")
        state.epoch = epoch + 1
        epoch_losses.append(loss_sum / max(1, n_seen))
        if progress is not None:
            progress(epoch, epoch_losses[-1])
    return TrainResult(params=params, state=state, epoch_losses=epoch_losses,
                       log_lines=log_lines, seconds=time.perf_counter() - t0)
