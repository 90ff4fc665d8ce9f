"""SGD with momentum, the warmup + cosine schedule, and the staged training drivers."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import numpy.typing as npt

from .augment import augment_batch
from .data import LabeledDataset, epoch_batches
from .encoder import (
    EncoderParams,
    ParamGrads,
    all_but_readout,
    backward,
    build_encoder,
    forward,
    reinit_readout,
    set_freeze,
)
from .exceptions import ShapeError, ValidationError
from .kernels import PairedEmbedding, infonce_loss_and_grad
from .models import (
    ArchitectureConfig,
    AugmentPolicy,
    DirectConfig,
    KernelSpec,
    ProtocolConfig,
    RunConfig,
    StageConfig,
)
from .numeric import RandomStream

logger = logging.getLogger(__name__)

Array = npt.NDArray[Any]


# --- schedule ------------------------------------------------------------------------------


def lr_at(stage: StageConfig, step: int, steps_per_epoch: int) -> float:
    """Learning rate for optimisation ``step`` of ``stage``.

    Linear warmup from 0 reaches ``peak_lr`` at the first post-warmup step. With ``anneal`` the
    remaining steps follow ``peak * (1 + cos(pi * t / (T - 1))) / 2``, so the last step of the
    stage lands on 0.
    """
    peak = stage.peak_lr
    warmup = stage.warmup_epochs * steps_per_epoch
    if step < warmup:
        return peak * step / warmup
    if not stage.anneal:
        return peak
    span = stage.epochs * steps_per_epoch - warmup
    if span <= 1:
        return peak
    t = min(step - warmup, span - 1)
    return peak * 0.5 * (1.0 + math.cos(math.pi * t / (span - 1)))


# --- optimiser -----------------------------------------------------------------------------


@dataclass
class OptState:
    buffers: list[Optional[tuple[Array, Array]]]

    @classmethod
    def zeros_like(cls, p: EncoderParams) -> OptState:
        return cls(
            [
                None if w is None or b is None else (np.zeros_like(w), np.zeros_like(b))
                for w, b in zip(p.weights, p.biases)
            ]
        )


def sgd_momentum_step(
    p: EncoderParams, g: ParamGrads, o: OptState, lr: float, momentum: float
) -> tuple[EncoderParams, OptState]:
    """``buf = momentum * buf + g``; ``param -= lr * buf``; in place, frozen layers skipped."""
    if len(g) != len(p.layers) or len(o.buffers) != len(p.layers):
        raise ShapeError("gradients and optimiser state must have one entry per layer")
    for i, grad in enumerate(g):
        if grad is None or p.frozen[i]:
            continue
        w, b = p.weights[i], p.biases[i]
        buf = o.buffers[i]
        if w is None or b is None or buf is None:
            raise ShapeError(f"layer {i} has no parameters but received a gradient")
        for param, buffer, update in ((w, buf[0], grad[0]), (b, buf[1], grad[1])):
            if update.shape != param.shape or buffer.shape != param.shape:
                raise ShapeError(
                    f"layer {i}: gradient shape {update.shape} does not match {param.shape}"
                )
            buffer *= momentum
            buffer += update
            param -= lr * buffer
    p.version += 1
    return p, o


# --- stages --------------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    stage: str
    epoch: int
    mean_loss: float
    lr: float


EpochCallback = Callable[[EpochRecord], None]
StageCallback = Callable[[str, EncoderParams], None]


def _resolve_frozen(p: EncoderParams, stage: StageConfig) -> set[int]:
    if stage.frozen_layers == "none":
        return set()
    if stage.frozen_layers == "all_but_readout":
        return all_but_readout(p)
    return set(stage.frozen_layers)


def _interleave(view_a: Array, view_b: Array) -> Array:
    x = np.empty((2 * len(view_a), *view_a.shape[1:]), dtype=view_a.dtype)
    x[0::2] = view_a
    x[1::2] = view_b
    return x


def train_stage(
    dataset: LabeledDataset,
    params: EncoderParams,
    stage: StageConfig,
    b: int,
    momentum: float,
    rng: RandomStream,
    *,
    policy: Optional[AugmentPolicy] = None,
    on_epoch: Optional[EpochCallback] = None,
    workers: int = 1,
) -> tuple[EncoderParams, list[float]]:
    """Run ``stage.epochs`` epochs of contrastive training.

    Returns a trained copy of ``params`` and the mean loss of every epoch.
    """
    if stage.readout_dim != "keep" and stage.readout_dim != params.readout_dim:
        raise ValidationError(
            f"stage {stage.name!r} expects readout dimension {stage.readout_dim}, "
            f"encoder has {params.readout_dim}"
        )
    policy = policy or AugmentPolicy()
    p = set_freeze(params, _resolve_frozen(params, stage))
    history: list[float] = []
    if stage.epochs == 0:
        return p, history
    if dataset.n == 0:
        raise ValidationError("cannot train on an empty dataset")

    o = OptState.zeros_like(p)
    order_seed = rng.child(0).next_u64()
    views = rng.child(1)
    steps_per_epoch = dataset.n // b if b <= dataset.n else 0
    logger.info(
        "stage %s: %d epochs x %d steps, b=%d, kernel=%s, frozen=%d layers",
        stage.name, stage.epochs, steps_per_epoch, b, stage.kernel.kind, sum(p.frozen),
    )  # fmt: skip

    for epoch in range(stage.epochs):
        losses = []
        lr = 0.0
        for j, idx in enumerate(epoch_batches(dataset.n, b, order_seed, epoch)):
            lr = lr_at(stage, epoch * steps_per_epoch + j, steps_per_epoch)
            view_a, view_b = augment_batch(
                dataset.images, idx, policy, views, epoch, dtype=p.dtype, workers=workers
            )
            result = forward(_interleave(view_a, view_b), p)
            loss, dz = infonce_loss_and_grad(PairedEmbedding(result.z), stage.kernel)
            sgd_momentum_step(p, backward(result.cache, dz, p), o, lr, momentum)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        history.append(mean_loss)
        logger.info(
            "stage %s epoch %d/%d: loss %.6f lr %.4g",
            stage.name, epoch + 1, stage.epochs, mean_loss, lr,
        )  # fmt: skip
        if on_epoch is not None:
            on_epoch(EpochRecord(stage.name, epoch, mean_loss, lr))
    return p, history


@dataclass
class TrainingReport:
    """Loss histories per stage, in execution order."""

    histories: dict[str, list[float]] = field(default_factory=dict)
    kernels: dict[str, KernelSpec] = field(default_factory=dict)

    @property
    def stages(self) -> list[str]:
        return list(self.histories)

    @property
    def boundaries(self) -> list[int]:
        """Cumulative epoch count at the end of each stage."""
        out, total = [], 0
        for history in self.histories.values():
            total += len(history)
            out.append(total)
        return out

    @property
    def final_loss(self) -> Optional[float]:
        for history in reversed(list(self.histories.values())):
            if history:
                return history[-1]
        return None

    @property
    def final_kernel(self) -> KernelSpec:
        return list(self.kernels.values())[-1] if self.kernels else KernelSpec.cauchy()

    def record(self, stage: StageConfig, history: list[float]) -> None:
        self.histories[stage.name] = history
        self.kernels[stage.name] = stage.kernel


def _initial_params(
    dataset: LabeledDataset,
    architecture: ArchitectureConfig,
    readout_dim: int,
    rng: RandomStream,
    dtype: str,
) -> EncoderParams:
    channels, height, width = dataset.image_shape
    layers, backbone_len = architecture.layers(channels, readout_dim)
    return build_encoder((channels, height, width), layers, backbone_len, rng, np.dtype(dtype))


def run_protocol(
    dataset: LabeledDataset,
    cfg: ProtocolConfig,
    rng: RandomStream,
    *,
    policy: Optional[AugmentPolicy] = None,
    architecture: Optional[ArchitectureConfig] = None,
    params: Optional[EncoderParams] = None,
    on_stage_end: Optional[StageCallback] = None,
    on_epoch: Optional[EpochCallback] = None,
    workers: int = 1,
) -> tuple[EncoderParams, TrainingReport]:
    """Pretrain at high output dimension, swap in a low-dimensional readout, fine-tune.

    Stage 2 trains only the fresh readout; stage 3 unfreezes the whole network.
    """
    pretrain_dim = int(cfg.pretrain.readout_dim)  # type: ignore[arg-type]
    target_dim = int(cfg.readout.readout_dim)  # type: ignore[arg-type]
    if params is None:
        params = _initial_params(
            dataset, architecture or ArchitectureConfig(), pretrain_dim, rng.child(0), cfg.dtype
        )
    report = TrainingReport()

    def finish(stage: StageConfig, p: EncoderParams, history: list[float]) -> None:
        report.record(stage, history)
        if on_stage_end is not None:
            on_stage_end(stage.name, p)

    common: dict[str, Any] = dict(policy=policy, on_epoch=on_epoch, workers=workers)
    p, history = train_stage(
        dataset, params, cfg.pretrain, cfg.batch_size, cfg.momentum, rng.child(1), **common
    )
    finish(cfg.pretrain, p, history)

    p = reinit_readout(p, target_dim, rng.child(2))
    logger.info("readout replaced: %dD -> %dD", pretrain_dim, target_dim)
    p, history = train_stage(
        dataset, p, cfg.readout, cfg.batch_size, cfg.momentum, rng.child(3), **common
    )
    finish(cfg.readout, p, history)

    p, history = train_stage(
        dataset, p, cfg.finetune, cfg.batch_size, cfg.momentum, rng.child(4), **common
    )
    finish(cfg.finetune, p, history)
    return p, report


def run_direct(
    dataset: LabeledDataset,
    cfg: DirectConfig,
    rng: RandomStream,
    *,
    policy: Optional[AugmentPolicy] = None,
    architecture: Optional[ArchitectureConfig] = None,
    on_stage_end: Optional[StageCallback] = None,
    on_epoch: Optional[EpochCallback] = None,
    workers: int = 1,
) -> tuple[EncoderParams, TrainingReport]:
    """Train a freshly initialised encoder at the output dimension in a single stage."""
    dim = int(cfg.stage.readout_dim)  # type: ignore[arg-type]
    params = _initial_params(
        dataset, architecture or ArchitectureConfig(), dim, rng.child(0), cfg.dtype
    )
    p, history = train_stage(
        dataset,
        params,
        cfg.stage,
        cfg.batch_size,
        cfg.momentum,
        rng.child(1),
        policy=policy,
        on_epoch=on_epoch,
        workers=workers,
    )
    report = TrainingReport()
    report.record(cfg.stage, history)
    if on_stage_end is not None:
        on_stage_end(cfg.stage.name, p)
    return p, report


def run_training(
    dataset: LabeledDataset,
    config: RunConfig,
    *,
    on_stage_end: Optional[StageCallback] = None,
    on_epoch: Optional[EpochCallback] = None,
    workers: int = 1,
) -> tuple[EncoderParams, TrainingReport]:
    """Dispatch a :class:`RunConfig` to the protocol or direct driver."""
    train_set = dataset.train() if config.train_split == "train" else dataset
    rng = RandomStream(config.training.seed)
    common: dict[str, Any] = dict(
        policy=config.augment,
        architecture=config.architecture,
        on_stage_end=on_stage_end,
        on_epoch=on_epoch,
        workers=workers,
    )
    if config.protocol is not None:
        return run_protocol(train_set, config.protocol, rng, **common)
    return run_direct(train_set, config.direct, rng, **common)  # type: ignore[arg-type]
