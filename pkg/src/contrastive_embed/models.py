from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

KernelKind = Literal["cosine", "gaussian", "cauchy"]
DType = Literal["float64", "float32"]


class ConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


# --- kernels -------------------------------------------------------------------------------


class KernelSpec(ConfigModel):
    kind: KernelKind = "cauchy"
    tau: Optional[float] = None

    @model_validator(mode="after")
    def _check_tau(self) -> KernelSpec:
        if self.kind == "cauchy":
            if self.tau is not None:
                raise ValueError("the cauchy kernel takes no temperature")
        elif self.tau is None or not self.tau > 0:
            raise ValueError(f"{self.kind} kernel requires tau > 0")
        return self

    @classmethod
    def cosine(cls, tau: float = 0.5) -> KernelSpec:
        return cls(kind="cosine", tau=tau)

    @classmethod
    def gaussian(cls, tau: float = 0.5) -> KernelSpec:
        return cls(kind="gaussian", tau=tau)

    @classmethod
    def cauchy(cls) -> KernelSpec:
        return cls(kind="cauchy")


# --- encoder layers ------------------------------------------------------------------------


class ConvSpec(ConfigModel):
    kind: Literal["conv"] = "conv"
    in_channels: PositiveInt
    out_channels: PositiveInt
    kernel: Literal[3] = 3


class ReLUSpec(ConfigModel):
    kind: Literal["relu"] = "relu"


class MaxPoolSpec(ConfigModel):
    kind: Literal["maxpool"] = "maxpool"
    size: Literal[2] = 2


class GlobalAvgPoolSpec(ConfigModel):
    kind: Literal["gap"] = "gap"


class DenseSpec(ConfigModel):
    kind: Literal["dense"] = "dense"
    in_units: PositiveInt
    out_units: PositiveInt


LayerSpec = Annotated[
    Union[ConvSpec, ReLUSpec, MaxPoolSpec, GlobalAvgPoolSpec, DenseSpec],
    Field(discriminator="kind"),
]


class ArchitectureConfig(ConfigModel):
    """Desk-scale conv backbone plus a one-hidden-layer projection head."""

    conv_channels: list[PositiveInt] = Field(default_factory=lambda: [16, 32], min_length=1)
    h_dim: PositiveInt = 64
    head_hidden: PositiveInt = 128

    def layers(self, in_channels: int, readout_dim: int) -> tuple[list[LayerSpec], int]:
        """Return the full layer chain and the number of layers that form the backbone."""
        layers: list[LayerSpec] = []
        channels = in_channels
        for out in self.conv_channels:
            layers += [ConvSpec(in_channels=channels, out_channels=out), ReLUSpec(), MaxPoolSpec()]
            channels = out
        layers += [GlobalAvgPoolSpec(), DenseSpec(in_units=channels, out_units=self.h_dim)]
        backbone_len = len(layers)
        layers += [
            DenseSpec(in_units=self.h_dim, out_units=self.head_hidden),
            ReLUSpec(),
            DenseSpec(in_units=self.head_hidden, out_units=readout_dim),
        ]
        return layers, backbone_len


# --- augmentation --------------------------------------------------------------------------

Probability = Annotated[float, Field(ge=0.0, le=1.0)]


class JitterStrengths(ConfigModel):
    brightness: float = Field(default=0.4, ge=0.0)
    contrast: float = Field(default=0.4, ge=0.0)
    saturation: float = Field(default=0.4, ge=0.0)
    hue: float = Field(default=0.1, ge=0.0, le=0.5)


class AugmentPolicy(ConfigModel):
    crop_scale: tuple[float, float] = (0.08, 1.0)
    crop_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    flip_p: Probability = 0.5
    jitter: JitterStrengths = Field(default_factory=JitterStrengths)
    jitter_p: Probability = 0.8
    grayscale_p: Probability = 0.2

    @model_validator(mode="after")
    def _check_ranges(self) -> AugmentPolicy:
        lo, hi = self.crop_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        rlo, rhi = self.crop_ratio
        if not 0.0 < rlo <= rhi:
            raise ValueError(f"crop_ratio must satisfy 0 < lo <= hi, got {self.crop_ratio}")
        return self

    @classmethod
    def identity(cls) -> AugmentPolicy:
        return cls(
            crop_scale=(1.0, 1.0),
            crop_ratio=(1.0, 1.0),
            flip_p=0.0,
            jitter=JitterStrengths(brightness=0.0, contrast=0.0, saturation=0.0, hue=0.0),
            jitter_p=0.0,
            grayscale_p=0.0,
        )


# --- data ----------------------------------------------------------------------------------


class SynthConfig(ConfigModel):
    classes: int = Field(default=5, ge=1, le=10)
    per_class: PositiveInt = 1000
    side: int = Field(default=16, ge=8)
    jitter: float = Field(default=1.0, ge=0.0, le=1.0)
    noise: float = Field(default=0.05, ge=0.0)
    test_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)


class Cifar10Source(ConfigModel):
    kind: Literal["cifar10"] = "cifar10"
    path: Path


class Cifar100Source(ConfigModel):
    kind: Literal["cifar100"] = "cifar100"
    path: Path


class SyntheticSource(ConfigModel):
    kind: Literal["synthetic"] = "synthetic"
    config: SynthConfig = Field(default_factory=SynthConfig)
    seed: int = Field(default=0, ge=0)


DatasetSource = Annotated[
    Union[Cifar10Source, Cifar100Source, SyntheticSource],
    Field(discriminator="kind"),
]


# --- training ------------------------------------------------------------------------------


def scaled_lr(batch_size: int, base: float = 0.03) -> float:
    """Linear batch-size scaling of the base learning rate (base * b / 256)."""
    return base * batch_size / 256


class StageConfig(ConfigModel):
    name: str = "stage"
    epochs: int = Field(ge=0)
    peak_lr: float = Field(gt=0.0)
    warmup_epochs: int = Field(default=0, ge=0)
    anneal: bool = True
    frozen_layers: Union[Literal["none", "all_but_readout"], list[int]] = "none"
    readout_dim: Union[Literal["keep"], PositiveInt] = "keep"
    kernel: KernelSpec = Field(default_factory=KernelSpec.cauchy)

    @model_validator(mode="after")
    def _check_warmup(self) -> StageConfig:
        if self.warmup_epochs > self.epochs:
            raise ValueError(
                f"warmup_epochs ({self.warmup_epochs}) exceeds epochs ({self.epochs})"
            )
        return self


class TrainingConfig(ConfigModel):
    batch_size: int = Field(default=128, ge=2)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)
    dtype: DType = "float64"


_FULL_SCALE_BUDGETS: dict[int, tuple[int, int, int]] = {
    500: (400, 25, 75),
    1000: (775, 25, 200),
    1500: (1000, 50, 450),
}


class ProtocolConfig(TrainingConfig):
    """Pretrain at high dimension, fit a fresh low-dimensional readout, fine-tune everything."""

    pretrain: StageConfig
    readout: StageConfig
    finetune: StageConfig

    @model_validator(mode="after")
    def _check_stages(self) -> ProtocolConfig:
        if self.pretrain.readout_dim == "keep":
            raise ValueError("pretrain.readout_dim must be an explicit output dimension")
        if self.readout.readout_dim == "keep":
            raise ValueError("readout.readout_dim must be the target embedding dimension")
        if self.readout.frozen_layers != "all_but_readout":
            raise ValueError("readout stage must freeze all layers except the readout")
        if self.finetune.frozen_layers not in ("none", []):
            raise ValueError("finetune stage must not freeze any layer")
        return self

    @property
    def total_epochs(self) -> int:
        return self.pretrain.epochs + self.readout.epochs + self.finetune.epochs

    @classmethod
    def build(
        cls,
        *,
        epochs: tuple[int, int, int],
        batch_size: int,
        pretrain_dim: int = 128,
        target_dim: int = 2,
        warmup_epochs: int = 10,
        pretrain_kernel: Optional[KernelSpec] = None,
        seed: int = 0,
        momentum: float = 0.9,
        dtype: DType = "float64",
    ) -> ProtocolConfig:
        pre, mid, fine = epochs
        lr = scaled_lr(batch_size)
        return cls(
            pretrain=StageConfig(
                name="pretrain",
                epochs=pre,
                peak_lr=lr,
                warmup_epochs=min(warmup_epochs, pre),
                anneal=True,
                readout_dim=pretrain_dim,
                kernel=pretrain_kernel or KernelSpec.cauchy(),
            ),
            readout=StageConfig(
                name="readout",
                epochs=mid,
                peak_lr=lr,
                warmup_epochs=0,
                anneal=False,
                frozen_layers="all_but_readout",
                readout_dim=target_dim,
            ),
            finetune=StageConfig(
                name="finetune",
                epochs=fine,
                peak_lr=lr / 1000,
                warmup_epochs=min(warmup_epochs, fine),
                anneal=True,
            ),
            batch_size=batch_size,
            momentum=momentum,
            seed=seed,
            dtype=dtype,
        )

    @classmethod
    def desk(cls, seed: int = 0, pretrain_kernel: Optional[KernelSpec] = None) -> ProtocolConfig:
        return cls.build(
            epochs=(50, 5, 45),
            batch_size=128,
            pretrain_dim=64,
            warmup_epochs=5,
            pretrain_kernel=pretrain_kernel,
            seed=seed,
        )

    @classmethod
    def full_scale(
        cls,
        budget: int = 1500,
        pretrain_kernel: Optional[KernelSpec] = None,
        seed: int = 0,
    ) -> ProtocolConfig:
        if budget not in _FULL_SCALE_BUDGETS:
            known = sorted(_FULL_SCALE_BUDGETS)
            raise ValueError(f"unknown budget {budget}; choose one of {known}")
        return cls.build(
            epochs=_FULL_SCALE_BUDGETS[budget],
            batch_size=1024,
            pretrain_kernel=pretrain_kernel,
            seed=seed,
        )


class DirectConfig(TrainingConfig):
    """Single-stage training directly at the output dimension."""

    stage: StageConfig

    @model_validator(mode="after")
    def _check_stage(self) -> DirectConfig:
        if self.stage.readout_dim == "keep":
            raise ValueError("stage.readout_dim must be an explicit output dimension")
        return self

    @classmethod
    def build(
        cls,
        *,
        epochs: int,
        batch_size: int = 128,
        dim: int = 2,
        kernel: Optional[KernelSpec] = None,
        warmup_epochs: int = 10,
        seed: int = 0,
    ) -> DirectConfig:
        return cls(
            stage=StageConfig(
                name="direct",
                epochs=epochs,
                peak_lr=scaled_lr(batch_size),
                warmup_epochs=min(warmup_epochs, epochs),
                anneal=True,
                readout_dim=dim,
                kernel=kernel or KernelSpec.cauchy(),
            ),
            batch_size=batch_size,
            seed=seed,
        )

    @classmethod
    def cosine_3d(cls, epochs: int, batch_size: int = 128, seed: int = 0) -> DirectConfig:
        return cls.build(
            epochs=epochs, batch_size=batch_size, dim=3, kernel=KernelSpec.cosine(0.5), seed=seed
        )


# --- evaluation ----------------------------------------------------------------------------


class EvalOptions(ConfigModel):
    k: PositiveInt = 15
    knn_sweep: bool = False
    label_level: Literal["fine", "coarse"] = "fine"
    batch_size: int = Field(default=128, ge=2)
    kernel: KernelSpec = Field(default_factory=KernelSpec.cauchy)
    probe_iterations: PositiveInt = 500
    probe_step: float = Field(default=0.1, gt=0.0)
    seed: int = Field(default=0, ge=0)


class EvalReport(ConfigModel):
    knn_accuracy: dict[int, float]
    linear_accuracy: float
    final_loss: float
    spectrum: list[float]
    norm_quartiles: dict[str, tuple[float, float, float]]
    ari: float
    knn_accuracy_coarse: Optional[float] = None
    label_level: Literal["fine", "coarse"] = "fine"
    n_train: int = 0
    n_test: int = 0


# --- runs ----------------------------------------------------------------------------------


class RunConfig(ConfigModel):
    dataset: DatasetSource
    protocol: Optional[ProtocolConfig] = None
    direct: Optional[DirectConfig] = None
    augment: AugmentPolicy = Field(default_factory=AugmentPolicy)
    architecture: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    evaluation: Optional[EvalOptions] = None
    train_split: Literal["all", "train"] = "all"
    output_dir: Path = Path("runs/latest")

    @model_validator(mode="after")
    def _check_mode(self) -> RunConfig:
        if (self.protocol is None) == (self.direct is None):
            raise ValueError("exactly one of 'protocol' or 'direct' must be given")
        return self

    @property
    def training(self) -> TrainingConfig:
        if self.protocol is not None:
            return self.protocol
        return self.direct  # type: ignore[return-value]
