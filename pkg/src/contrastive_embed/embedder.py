from __future__ import annotations

from typing import Any, Optional, Union

import numpy as np
import numpy.typing as npt

from .data import LabeledDataset
from .encoder import EncoderParams, embed
from .evaluation import evaluate
from .exceptions import ValidationError
from .models import (
    ArchitectureConfig,
    AugmentPolicy,
    DirectConfig,
    EvalOptions,
    EvalReport,
    ProtocolConfig,
)
from .numeric import RandomStream
from .trainer import TrainingReport, run_direct, run_protocol


class ContrastiveEmbedder:
    """Estimator-style wrapper: ``fit`` trains on a dataset, ``transform`` maps images to Z."""

    def __init__(
        self,
        config: Optional[Union[ProtocolConfig, DirectConfig]] = None,
        *,
        augment: Optional[AugmentPolicy] = None,
        architecture: Optional[ArchitectureConfig] = None,
        workers: int = 1,
    ) -> None:
        self.config = config if config is not None else ProtocolConfig.desk()
        self.augment = augment or AugmentPolicy()
        self.architecture = architecture or ArchitectureConfig()
        self.workers = workers
        self.params_: Optional[EncoderParams] = None
        self.report_: Optional[TrainingReport] = None

    def fit(self, dataset: LabeledDataset) -> ContrastiveEmbedder:
        rng = RandomStream(self.config.seed)
        common: dict[str, Any] = dict(
            policy=self.augment, architecture=self.architecture, workers=self.workers
        )
        if isinstance(self.config, ProtocolConfig):
            self.params_, self.report_ = run_protocol(dataset, self.config, rng, **common)
        else:
            self.params_, self.report_ = run_direct(dataset, self.config, rng, **common)
        return self

    def _fitted(self) -> EncoderParams:
        if self.params_ is None:
            raise ValidationError("embedder is not fitted; call fit() first")
        return self.params_

    def transform(self, images: npt.NDArray[np.uint8]) -> npt.NDArray[np.floating]:
        return embed(self._fitted(), images)[1]

    def fit_transform(self, dataset: LabeledDataset) -> npt.NDArray[np.floating]:
        return self.fit(dataset).transform(dataset.images)

    def score(self, dataset: LabeledDataset, options: Optional[EvalOptions] = None) -> EvalReport:
        if options is None and self.report_ is not None:
            options = EvalOptions(kernel=self.report_.final_kernel)
        return evaluate(self._fitted(), dataset, options, self.augment)
