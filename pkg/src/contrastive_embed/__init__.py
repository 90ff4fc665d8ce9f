from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import LabeledDataset, generate_synthetic, load_cifar10, load_cifar100, load_dataset
from .embedder import ContrastiveEmbedder
from .encoder import EncoderParams, build_encoder, embed
from .evaluation import (
    adjusted_rand_index,
    class_norm_stats,
    covariance_spectrum,
    evaluate,
    kmeans,
    knn_accuracy,
    linear_probe,
)
from .exceptions import (
    CheckpointFormatError,
    ConfigurationError,
    ContrastiveEmbedError,
    DatasetError,
    ShapeError,
    ValidationError,
)
from .kernels import PairedEmbedding, infonce_loss, infonce_loss_and_grad, loss_lower_bound
from .models import (
    ArchitectureConfig,
    AugmentPolicy,
    DirectConfig,
    EvalOptions,
    EvalReport,
    KernelSpec,
    ProtocolConfig,
    RunConfig,
    StageConfig,
    SynthConfig,
)
from .numeric import RandomStream
from .trainer import TrainingReport, run_direct, run_protocol, run_training, train_stage

__all__ = [
    "ArchitectureConfig",
    "AugmentPolicy",
    "Checkpoint",
    "CheckpointFormatError",
    "ConfigurationError",
    "ContrastiveEmbedError",
    "ContrastiveEmbedder",
    "DatasetError",
    "DirectConfig",
    "EncoderParams",
    "EvalOptions",
    "EvalReport",
    "KernelSpec",
    "LabeledDataset",
    "PairedEmbedding",
    "ProtocolConfig",
    "RandomStream",
    "RunConfig",
    "ShapeError",
    "StageConfig",
    "SynthConfig",
    "TrainingReport",
    "ValidationError",
    "adjusted_rand_index",
    "build_encoder",
    "class_norm_stats",
    "covariance_spectrum",
    "embed",
    "evaluate",
    "generate_synthetic",
    "infonce_loss",
    "infonce_loss_and_grad",
    "kmeans",
    "knn_accuracy",
    "linear_probe",
    "load_checkpoint",
    "load_cifar10",
    "load_cifar100",
    "load_dataset",
    "loss_lower_bound",
    "run_direct",
    "run_protocol",
    "run_training",
    "save_checkpoint",
    "train_stage",
]
