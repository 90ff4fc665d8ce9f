from __future__ import annotations

import os

import numpy as np
import pytest

from contrastive_embed.data import LabeledDataset, generate_synthetic
from contrastive_embed.encoder import EncoderParams, build_encoder
from contrastive_embed.models import ArchitectureConfig, SynthConfig
from contrastive_embed.numeric import RandomStream

SLOW_ENV = "CONTRASTIVE_EMBED_SLOW"


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if os.getenv(SLOW_ENV) == "1":
        return
    skip = pytest.mark.skip(reason=f"set {SLOW_ENV}=1 to run desk-scale training runs")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_arch() -> ArchitectureConfig:
    return ArchitectureConfig(conv_channels=[4], h_dim=8, head_hidden=16)


@pytest.fixture
def tiny_dataset() -> LabeledDataset:
    return generate_synthetic(SynthConfig(classes=3, per_class=20, side=8), seed=0)


@pytest.fixture
def tiny_encoder(tiny_arch: ArchitectureConfig) -> EncoderParams:
    layers, backbone_len = tiny_arch.layers(3, 4)
    return build_encoder((3, 8, 8), layers, backbone_len, RandomStream(7))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
