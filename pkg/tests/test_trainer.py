from __future__ import annotations

import statistics

import numpy as np
import pytest

from contrastive_embed.data import LabeledDataset, generate_synthetic
from contrastive_embed.encoder import EncoderParams, embed
from contrastive_embed.evaluation import knn_accuracy
from contrastive_embed.exceptions import ShapeError, ValidationError
from contrastive_embed.models import (
    ArchitectureConfig,
    AugmentPolicy,
    DenseSpec,
    DirectConfig,
    ProtocolConfig,
    StageConfig,
    SynthConfig,
    scaled_lr,
)
from contrastive_embed.numeric import RandomStream
from contrastive_embed.trainer import (
    EpochRecord,
    OptState,
    lr_at,
    run_direct,
    run_protocol,
    sgd_momentum_step,
    train_stage,
)


def _scalar_encoder() -> EncoderParams:
    return EncoderParams(
        layers=[DenseSpec(in_units=1, out_units=1)],  # type: ignore[list-item]
        backbone_len=0,
        input_shape=(1, 1, 1),
        weights=[np.zeros((1, 1))],
        biases=[np.zeros(1)],
        frozen=[False],
    )


def _same_params(a: EncoderParams, b: EncoderParams, skip: int = -1) -> bool:
    return all(
        np.array_equal(wa, wb) and np.array_equal(ba, bb)
        for i, ((wa, ba), (wb, bb)) in enumerate(zip(a.arrays(), b.arrays()))
        if i != skip
    )


def test_schedule_warmup_and_cosine_annealing() -> None:
    stage = StageConfig(epochs=12, peak_lr=0.12, warmup_epochs=1)
    assert lr_at(stage, 0, 1) == 0.0
    assert lr_at(stage, 1, 1) == 0.12
    assert lr_at(stage, 6, 1) == pytest.approx(0.06, rel=1e-12)
    assert lr_at(stage, 11, 1) < 1e-6 * 0.12


def test_schedule_warmup_is_linear_in_steps() -> None:
    stage = StageConfig(epochs=4, peak_lr=1.0, warmup_epochs=2)
    assert [lr_at(stage, s, 2) for s in range(4)] == [0.0, 0.25, 0.5, 0.75]
    assert lr_at(stage, 4, 2) == 1.0


def test_schedule_without_annealing_is_constant() -> None:
    stage = StageConfig(epochs=5, peak_lr=0.3, anneal=False)
    assert {lr_at(stage, s, 10) for s in range(50)} == {0.3}


def test_batch_size_scaling_rule() -> None:
    assert scaled_lr(1024) == pytest.approx(0.12)
    assert scaled_lr(256) == pytest.approx(0.03)
    cfg = ProtocolConfig.full_scale()
    assert cfg.finetune.peak_lr == pytest.approx(0.12 / 1000)
    assert cfg.total_epochs == 1500


def test_sgd_momentum_by_hand() -> None:
    p = _scalar_encoder()
    o = OptState.zeros_like(p)
    g = [(np.ones((1, 1)), np.ones(1))]
    sgd_momentum_step(p, g, o, lr=1.0, momentum=0.9)
    assert p.weights[0][0, 0] == pytest.approx(-1.0)
    sgd_momentum_step(p, g, o, lr=1.0, momentum=0.9)
    assert p.weights[0][0, 0] == pytest.approx(-2.9)
    assert p.biases[0][0] == pytest.approx(-2.9)
    assert p.version == 2


def test_sgd_without_momentum_or_learning_rate() -> None:
    p = _scalar_encoder()
    g = [(np.full((1, 1), 2.0), np.full(1, 2.0))]
    sgd_momentum_step(p, g, OptState.zeros_like(p), lr=0.0, momentum=0.9)
    assert p.weights[0][0, 0] == 0.0
    o = OptState.zeros_like(p)
    sgd_momentum_step(p, g, o, lr=0.5, momentum=0.0)
    sgd_momentum_step(p, g, o, lr=0.5, momentum=0.0)
    assert p.weights[0][0, 0] == pytest.approx(-2.0)


def test_sgd_skips_frozen_layers_and_checks_shapes() -> None:
    p = _scalar_encoder()
    p.frozen = [True]
    g = [(np.ones((1, 1)), np.ones(1))]
    sgd_momentum_step(p, g, OptState.zeros_like(p), lr=1.0, momentum=0.9)
    assert p.weights[0][0, 0] == 0.0
    with pytest.raises(ShapeError):
        sgd_momentum_step(_scalar_encoder(), [], OptState([None]), lr=1.0, momentum=0.9)
    q = _scalar_encoder()
    with pytest.raises(ShapeError, match="does not match"):
        sgd_momentum_step(q, [(np.ones((2, 1)), np.ones(1))], OptState.zeros_like(q), 1.0, 0.9)


def test_zero_epoch_stage_leaves_parameters_unchanged(
    tiny_dataset: LabeledDataset, tiny_encoder: EncoderParams
) -> None:
    stage = StageConfig(epochs=0, peak_lr=0.1)
    p, history = train_stage(tiny_dataset, tiny_encoder, stage, 16, 0.9, RandomStream(0))
    assert history == []
    assert _same_params(p, tiny_encoder)


def test_frozen_stage_only_moves_the_readout(
    tiny_dataset: LabeledDataset, tiny_encoder: EncoderParams
) -> None:
    stage = StageConfig(epochs=2, peak_lr=0.05, frozen_layers="all_but_readout")
    p, history = train_stage(tiny_dataset, tiny_encoder, stage, 16, 0.9, RandomStream(1))
    assert len(history) == 2
    readout = len(tiny_encoder.arrays()) - 1
    assert _same_params(p, tiny_encoder, skip=readout)
    assert not np.array_equal(p.weights[-1], tiny_encoder.weights[-1])


def test_stage_does_not_modify_its_input(
    tiny_dataset: LabeledDataset, tiny_encoder: EncoderParams
) -> None:
    before = tiny_encoder.copy()
    train_stage(
        tiny_dataset, tiny_encoder, StageConfig(epochs=1, peak_lr=0.05), 16, 0.9, RandomStream(2)
    )
    assert _same_params(before, tiny_encoder)


def test_training_lowers_the_loss(
    tiny_dataset: LabeledDataset, tiny_encoder: EncoderParams
) -> None:
    stage = StageConfig(epochs=15, peak_lr=0.05, anneal=False)
    _, history = train_stage(
        tiny_dataset,
        tiny_encoder,
        stage,
        20,
        0.9,
        RandomStream(3),
        policy=AugmentPolicy.identity(),
    )
    assert all(np.isfinite(history))
    assert history[-1] < history[0]


def test_stage_is_reproducible(tiny_dataset: LabeledDataset, tiny_encoder: EncoderParams) -> None:
    stage = StageConfig(epochs=2, peak_lr=0.05, warmup_epochs=1)
    p1, h1 = train_stage(tiny_dataset, tiny_encoder, stage, 16, 0.9, RandomStream(4))
    p2, h2 = train_stage(tiny_dataset, tiny_encoder, stage, 16, 0.9, RandomStream(4), workers=2)
    assert h1 == h2
    assert _same_params(p1, p2)


def test_stage_rejects_a_mismatched_readout(
    tiny_dataset: LabeledDataset, tiny_encoder: EncoderParams
) -> None:
    stage = StageConfig(epochs=1, peak_lr=0.05, readout_dim=2)
    with pytest.raises(ValidationError, match="readout dimension 2"):
        train_stage(tiny_dataset, tiny_encoder, stage, 16, 0.9, RandomStream(0))


def test_stage_rejects_a_batch_larger_than_the_dataset(
    tiny_dataset: LabeledDataset, tiny_encoder: EncoderParams
) -> None:
    with pytest.raises(ValidationError, match="exceeds"):
        train_stage(
            tiny_dataset, tiny_encoder, StageConfig(epochs=1, peak_lr=0.1), 64, 0.9, RandomStream(0)
        )


def test_protocol_with_no_epochs_still_swaps_the_readout(
    tiny_dataset: LabeledDataset, tiny_arch: ArchitectureConfig
) -> None:
    cfg = ProtocolConfig.build(epochs=(0, 0, 0), batch_size=16, pretrain_dim=8)
    p, report = run_protocol(tiny_dataset, cfg, RandomStream(0), architecture=tiny_arch)
    assert p.readout_dim == 2
    assert report.stages == ["pretrain", "readout", "finetune"]
    assert report.boundaries == [0, 0, 0]
    assert report.final_loss is None


def test_protocol_stages_and_callbacks(
    tiny_dataset: LabeledDataset, tiny_arch: ArchitectureConfig
) -> None:
    cfg = ProtocolConfig.build(epochs=(2, 1, 2), batch_size=16, pretrain_dim=8, warmup_epochs=1)
    records: list[EpochRecord] = []
    snapshots: dict[str, EncoderParams] = {}

    def on_stage_end(name: str, p: EncoderParams) -> None:
        snapshots[name] = p.copy()

    p, report = run_protocol(
        tiny_dataset,
        cfg,
        RandomStream(5),
        architecture=tiny_arch,
        on_stage_end=on_stage_end,
        on_epoch=records.append,
    )
    assert [r.stage for r in records] == ["pretrain"] * 2 + ["readout"] + ["finetune"] * 2
    assert [r.epoch for r in records] == [0, 1, 0, 0, 1]
    assert report.boundaries == [2, 3, 5]
    assert report.final_loss == records[-1].mean_loss
    assert [snapshots[s].readout_dim for s in report.stages] == [8, 2, 2]
    assert p.readout_dim == 2

    # the readout stage trains only the new readout layer
    readout = len(p.arrays()) - 1
    assert _same_params(snapshots["pretrain"], snapshots["readout"], skip=readout)
    assert not _same_params(snapshots["readout"], snapshots["finetune"])

    readout_lrs = {r.lr for r in records if r.stage == "readout"}
    assert readout_lrs == {cfg.readout.peak_lr}
    assert all(r.lr <= cfg.finetune.peak_lr for r in records if r.stage == "finetune")


def test_protocol_runs_are_bit_identical(
    tiny_dataset: LabeledDataset, tiny_arch: ArchitectureConfig
) -> None:
    cfg = ProtocolConfig.build(epochs=(1, 1, 1), batch_size=16, pretrain_dim=8)
    p1, r1 = run_protocol(tiny_dataset, cfg, RandomStream(6), architecture=tiny_arch)
    p2, r2 = run_protocol(tiny_dataset, cfg, RandomStream(6), architecture=tiny_arch)
    assert r1.histories == r2.histories
    assert _same_params(p1, p2)
    p3, _ = run_protocol(tiny_dataset, cfg, RandomStream(7), architecture=tiny_arch)
    assert not _same_params(p1, p3)


def test_protocol_trains_on_sides_not_divisible_by_the_pooling() -> None:
    dataset = generate_synthetic(SynthConfig(classes=3, per_class=12, side=10), seed=1)
    arch = ArchitectureConfig(conv_channels=[4, 4], h_dim=8, head_hidden=16)
    cfg = ProtocolConfig.build(epochs=(1, 1, 1), batch_size=8, pretrain_dim=4)
    p, report = run_protocol(dataset, cfg, RandomStream(0), architecture=arch)
    assert p.input_shape == (3, 10, 10)
    assert p.readout_dim == 2
    assert report.final_loss is not None and np.isfinite(report.final_loss)


def test_direct_training(tiny_dataset: LabeledDataset, tiny_arch: ArchitectureConfig) -> None:
    cfg = DirectConfig.cosine_3d(epochs=2, batch_size=16)
    p, report = run_direct(tiny_dataset, cfg, RandomStream(0), architecture=tiny_arch)
    assert p.readout_dim == 3
    assert report.stages == ["direct"]
    assert report.final_kernel.kind == "cosine"
    assert len(report.histories["direct"]) == 2


# --- desk-scale runs -------------------------------------------------------------------------


def _desk_dataset(seed: int) -> LabeledDataset:
    return generate_synthetic(SynthConfig(), seed=seed)


@pytest.mark.slow
def test_protocol_separates_synthetic_classes_in_2d() -> None:
    scores = []
    for seed in range(3):
        dataset = _desk_dataset(seed)
        train = dataset.train()
        p, _ = run_protocol(train, ProtocolConfig.desk(seed=seed), RandomStream(seed), workers=4)
        _, z_train = embed(p, train.images)
        _, z_test = embed(p, dataset.test().images)
        scores.append(
            knn_accuracy(z_train, train.fine_labels, z_test, dataset.test().fine_labels, k=15)
        )
    assert statistics.median(scores) >= 0.90


@pytest.mark.slow
def test_annealing_reaches_lower_loss_than_direct_training() -> None:
    protocol_losses, direct_losses = [], []
    for seed in range(3):
        dataset = _desk_dataset(seed)
        cfg = ProtocolConfig.desk(seed=seed)
        _, report = run_protocol(dataset, cfg, RandomStream(seed), workers=4)
        protocol_losses.append(report.final_loss)
        direct = DirectConfig.build(epochs=cfg.total_epochs, batch_size=128, seed=seed)
        _, report = run_direct(dataset, direct, RandomStream(seed), workers=4)
        direct_losses.append(report.final_loss)
    assert statistics.median(protocol_losses) <= statistics.median(direct_losses)


@pytest.mark.slow
def test_desk_scale_runs_are_deterministic() -> None:
    dataset = _desk_dataset(0)
    cfg = ProtocolConfig.desk()
    p1, r1 = run_protocol(dataset, cfg, RandomStream(0), workers=4)
    p2, r2 = run_protocol(dataset, cfg, RandomStream(0), workers=4)
    assert r1.histories == r2.histories
    assert _same_params(p1, p2)
