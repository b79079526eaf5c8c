import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from spkver.dataio import UtteranceRecord
from spkver.errors import ConfigError
from spkver.losses import transfer_match_set, weight_transfer_loss
from spkver.models import EcapaConfig, load_checkpoint, save_checkpoint
from spkver.training import (
    BatchSampler,
    FinetuneConfig,
    SpeakerDataset,
    TrainConfig,
    finetune,
    init_model,
    pretrain,
    triangular2_lr,
)

TINY = EcapaConfig(channels=32, embed_dim=8, attention_channels=8).to_dict()
TINY_CFG = TrainConfig(batch_size=4, crop_seconds=0.5, max_steps=3, half_cycle_steps=2, log_every=0, seed=3)


def tiny_dataset(n_speakers=3, per_spk=2, seed=0, prefix="s"):
    rng = np.random.default_rng(seed)
    recs, waves = [], []
    for s in range(n_speakers):
        for u in range(per_spk):
            recs.append(UtteranceRecord(f"{prefix}{s}-{u}", f"{prefix}{s}", f"/none/{s}{u}.wav", 1.0))
            waves.append(rng.standard_normal(16000).astype(np.float32) * (s + 1) * 0.1)
    return SpeakerDataset(recs, waves=waves)


class TestTriangular2:
    H = 100

    def test_anchor_values(self):
        lr = lambda s: triangular2_lr(s, 1e-8, 1e-3, self.H)
        assert abs(lr(0) - 1e-8) <= 1e-12
        assert abs(lr(self.H) - 1e-3) <= 1e-12
        assert abs(lr(2 * self.H) - 1e-8) <= 1e-12
        assert abs(lr(3 * self.H) - (1e-8 + (1e-3 - 1e-8) / 2)) <= 1e-12

    def test_peaks_halve(self):
        peaks = [triangular2_lr((2 * c + 1) * self.H, 0.0, 1.0, self.H) for c in range(5)]
        assert peaks == [1.0, 0.5, 0.25, 0.125, 0.0625]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 5000))
    def test_bounded(self, step, half):
        lr = triangular2_lr(step, 1e-8, 1e-3, half)
        assert 1e-8 <= lr <= 1e-3

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 50), st.integers(1, 500))
    def test_cycle_boundary_is_minimum(self, cycle, half):
        assert triangular2_lr(2 * cycle * half, 1e-8, 1e-3, half) == 1e-8

    def test_linear_ramp(self):
        vals = [triangular2_lr(s, 0.0, 1.0, 4) for s in range(9)]
        assert vals == [0.0, 0.25, 0.5, 0.75, 1.0, 0.75, 0.5, 0.25, 0.0]

    def test_default_half_cycle_two_epochs(self):
        assert TrainConfig(batch_size=32).resolved_half_cycle(1000) == 64
        assert TrainConfig(half_cycle_steps=7).resolved_half_cycle(1000) == 7


class TestSampler:
    def test_speaker_balanced(self):
        ds = tiny_dataset(n_speakers=4)
        sampler = BatchSampler(ds, TrainConfig(batch_size=8, crop_seconds=0.5), np.random.default_rng(0))
        x, y = next(sampler)
        assert x.shape == (8, 50, 80)
        assert sorted(y.tolist()) == [0, 0, 1, 1, 2, 2, 3, 3]

    def test_seeded(self):
        ds = tiny_dataset()
        cfg = TrainConfig(batch_size=4, crop_seconds=0.5)
        a = next(BatchSampler(ds, cfg, np.random.default_rng(1)))
        b = next(BatchSampler(ds, cfg, np.random.default_rng(1)))
        assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


class TestPretrain:
    def test_identical_loss_trace_with_fixed_seed(self):
        ds = tiny_dataset()
        a = pretrain(init_model("ecapa", TINY, 5), ds, TINY_CFG)
        b = pretrain(init_model("ecapa", TINY, 5), ds, TINY_CFG)
        assert a.losses == b.losses and len(a.losses) == 3
        assert all(np.isfinite(a.losses))

    def test_checkpoint_resume(self, tmp_path):
        ds = tiny_dataset()
        first = pretrain(init_model("ecapa", TINY, 5), ds, TINY_CFG)
        save_checkpoint(tmp_path / "a.ckpt", first.checkpoint)
        back = load_checkpoint(tmp_path / "a.ckpt")
        assert back.step == 3
        enc = back.build_encoder()
        for k, v in first.encoder.state_dict().items():
            assert torch.equal(enc.state_dict()[k], v)
        for k, v in first.head.state_dict().items():
            assert torch.equal(back.head[k], v)
        resumed = pretrain(enc, ds, TINY_CFG, resume=back)
        assert resumed.checkpoint.step == 6

    def test_resume_speaker_mismatch(self):
        first = pretrain(init_model("ecapa", TINY, 5), tiny_dataset(), TINY_CFG)
        with pytest.raises(ConfigError):
            pretrain(first.encoder, tiny_dataset(prefix="x"), TINY_CFG, resume=first.checkpoint)

    def test_single_speaker_rejected(self):
        with pytest.raises(ConfigError):
            pretrain(init_model("ecapa", TINY, 0), tiny_dataset(n_speakers=1), TINY_CFG)

    def test_zero_steps_leaves_weights(self):
        enc = init_model("ecapa", TINY, 1)
        before = {k: v.clone() for k, v in enc.state_dict().items()}
        res = pretrain(enc, tiny_dataset(), TrainConfig(max_steps=0, crop_seconds=0.5))
        assert res.checkpoint.step == 0
        for k, v in before.items():
            assert torch.equal(res.checkpoint.encoder[k], v)


@pytest.fixture(scope="module")
def source():
    return pretrain(init_model("ecapa", TINY, 2), tiny_dataset(), TINY_CFG).checkpoint


class TestFinetune:
    def test_initial_transfer_distance_zero(self, source):
        ft = finetune(source, None, tiny_dataset(4, seed=1, prefix="t"),
                      FinetuneConfig(train=TrainConfig(max_steps=0, crop_seconds=0.5)))
        enc = ft.encoder
        src = {k: v for k, v in source.encoder.items()}
        assert weight_transfer_loss(src, dict(enc.named_parameters()), transfer_match_set(enc)).item() == 0.0
        assert ft.head.weight.shape == (4, 8)

    @pytest.mark.parametrize("mode", ["vanilla", "weight_transfer"])
    def test_runs_and_moves_weights(self, source, mode):
        cfg = FinetuneConfig(mode=mode, train=TINY_CFG)
        ft = finetune(source, None, tiny_dataset(3, seed=1, prefix="t"), cfg)
        assert len(ft.losses) == 3 and all(np.isfinite(ft.losses))
        moved = weight_transfer_loss(source.encoder, dict(ft.encoder.named_parameters()),
                                     transfer_match_set(ft.encoder))
        assert moved.item() > 0

    def test_vanilla_ignores_lambda(self, source):
        ds = tiny_dataset(3, seed=1, prefix="t")
        a = finetune(source, None, ds, FinetuneConfig("vanilla", 0.0, train=TINY_CFG))
        b = finetune(source, None, ds, FinetuneConfig("vanilla", 5.0, train=TINY_CFG))
        assert a.losses == b.losses

    def test_architecture_mismatch_names_tensor(self, source):
        other = init_model("ecapa", EcapaConfig(channels=64, embed_dim=8, attention_channels=8).to_dict(), 0)
        with pytest.raises(ConfigError, match="stem"):
            finetune(source, other, tiny_dataset(), FinetuneConfig(train=TINY_CFG))
        resnet = init_model("resnet34se", {"stage_channels": (8, 16, 32, 64), "embed_dim": 8}, 0)
        with pytest.raises(ConfigError, match="architecture"):
            finetune(source, resnet, tiny_dataset(), FinetuneConfig(train=TINY_CFG))

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            FinetuneConfig(mode="frozen")
