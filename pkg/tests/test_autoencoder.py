"""Frame autoencoder contracts: shapes, per-frame weight sharing, value
ranges, the skip-free property, and stage-one training."""

import pytest
import torch

from helpers import check_gradients, module_params
from vptr.autoencoder import (
    FrameAutoencoder,
    FrameEncoder,
    _norm,
    reconstruction_mse,
    train_autoencoder,
)
from vptr.config import AutoencoderSection
from vptr.core import ValueRange
from vptr.errors import ShapeMismatchError, TrainingDivergedError
from vptr.tensorfile import load_tensor, save_tensor


def make_ae(d_model=16, value_range=ValueRange.UNIT, seed=0):
    torch.manual_seed(seed)
    return FrameAutoencoder(channels=1, d_model=d_model, value_range=value_range).eval()


class TestShapes:
    def test_encode_shape_contract(self):
        ae = make_ae()
        z = ae.encode(torch.rand(2, 5, 1, 64, 64))
        assert z.shape == (2, 5, 8, 8, 16)

    def test_decode_shape_contract(self):
        ae = make_ae()
        x = ae.decode(torch.randn(2, 5, 8, 8, 16))
        assert x.shape == (2, 5, 1, 64, 64)

    def test_wrong_spatial_size_rejected(self):
        ae = make_ae()
        with pytest.raises(ShapeMismatchError):
            ae.encode(torch.rand(1, 2, 1, 32, 32))
        with pytest.raises(ShapeMismatchError):
            ae.decode(torch.randn(1, 2, 4, 4, 16))


class TestPerFrameSharing:
    def test_encode_time_equivariance(self):
        ae = make_ae(seed=1)
        x = torch.rand(1, 4, 1, 64, 64)
        perm = torch.tensor([2, 0, 3, 1])
        with torch.no_grad():
            z = ae.encode(x)
            z_perm = ae.encode(x[:, perm])
        assert torch.equal(z[:, perm], z_perm)

    def test_decode_time_equivariance(self):
        ae = make_ae(seed=2)
        z = torch.randn(1, 4, 8, 8, 16)
        perm = torch.tensor([3, 1, 0, 2])
        with torch.no_grad():
            assert torch.equal(ae.decode(z)[:, perm], ae.decode(z[:, perm]))

    def test_identical_frames_identical_features(self):
        ae = make_ae(seed=3)
        frame = torch.rand(1, 1, 1, 64, 64)
        x = torch.cat([frame, frame], dim=1)
        with torch.no_grad():
            z = ae.encode(x)
        assert torch.equal(z[:, 0], z[:, 1])


class TestValueRanges:
    def test_tanh_head_strictly_inside_signed_range(self):
        ae = make_ae(value_range=ValueRange.SIGNED, seed=4)
        with torch.no_grad():
            x = ae.decode(torch.randn(1, 2, 8, 8, 16) * 5.0)
        assert float(x.max()) < 1.0 and float(x.min()) > -1.0

    def test_sigmoid_head_inside_unit_range(self):
        ae = make_ae(value_range=ValueRange.UNIT, seed=5)
        with torch.no_grad():
            x = ae.decode(torch.randn(1, 2, 8, 8, 16) * 5.0)
        assert float(x.max()) < 1.0 and float(x.min()) > 0.0


class TestSkipFree:
    def test_decode_from_serialized_features_bit_exact(self, tmp_path):
        """Reconstruction is a function of the feature tensor alone: decoding
        features that took a round trip through disk matches the live path
        bit for bit."""
        ae = make_ae(seed=6)
        x = torch.rand(1, 3, 1, 64, 64)
        with torch.no_grad():
            z = ae.encode(x)
            live = ae.decode(z)
            path = tmp_path / "feats.vtn"
            save_tensor(path, z)
            reloaded = ae.decode(load_tensor(path))
        assert torch.equal(live, reloaded)


class TestGradients:
    def test_encoder_stage_gradcheck(self):
        torch.manual_seed(7)
        stage = torch.nn.Sequential(
            torch.nn.Conv2d(1, 2, 3, stride=2, padding=1, bias=False),
            _norm(2),
            torch.nn.GELU(),
        ).to(torch.float64)
        x = torch.rand(1, 1, 6, 6, dtype=torch.float64, requires_grad=True)
        params = [x] + module_params(stage)

        def loss():
            return (stage(x) ** 2).sum()

        assert check_gradients(loss, params) < 1e-5

    def test_full_encoder_small_gradcheck(self):
        """End-to-end composition check: gradients w.r.t. the input, the first
        conv, and the deepest norm affine (full parameter sweeps live in the
        per-stage test above)."""
        torch.manual_seed(8)
        enc = FrameEncoder(1, 8).to(torch.float64)
        x = torch.rand(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)
        params = [x, enc.stages[0].weight, enc.bottleneck.norm2.bias]

        def loss():
            return (enc(x) ** 2).sum()

        assert check_gradients(loss, params) < 1e-5


class TestTraining:
    def _tiny_dataset(self, n=6, t=4):
        from vptr.data import SyntheticDatasetSpec, gen_moving_shapes

        spec = SyntheticDatasetSpec(seed=5, num_clips=n, clip_length=t)
        return gen_moving_shapes(spec).data

    def test_training_improves_on_first_epoch(self):
        clips = self._tiny_dataset()
        cfg = AutoencoderSection(d_model=16, epochs=4, batch_frames=16,
                                 frames_per_epoch=0, flip_augment=False,
                                 target_mse=1e-9, seed=9)
        model, history = train_autoencoder(clips, clips[:2], cfg)
        assert len(history) == 4
        losses = [row["train_loss"] for row in history]
        assert min(losses[1:]) <= losses[0]
        assert all(torch.isfinite(torch.tensor(l)) for l in losses)

    def test_training_deterministic_given_seed(self):
        clips = self._tiny_dataset()
        cfg = AutoencoderSection(d_model=16, epochs=1, batch_frames=16,
                                 flip_augment=True, target_mse=1e-9, seed=11)
        _, h1 = train_autoencoder(clips, clips[:2], cfg)
        _, h2 = train_autoencoder(clips, clips[:2], cfg)
        assert h1 == h2

    def test_divergence_aborts_with_diagnostics(self):
        clips = self._tiny_dataset(n=2)
        clips[0, 0, 0, 0, 0] = float("nan")  # poisoned batch -> non-finite loss
        cfg = AutoencoderSection(d_model=16, epochs=1, batch_frames=8,
                                 flip_augment=False, seed=12)
        with pytest.raises(TrainingDivergedError, match="epoch"):
            train_autoencoder(clips, clips, cfg)

    def test_reconstruction_mse_helper(self):
        ae = make_ae(seed=13)
        clips = torch.rand(2, 2, 1, 64, 64)
        val = reconstruction_mse(ae, clips)
        direct = float(((ae(clips) - clips) ** 2).mean())
        assert abs(val - direct) < 1e-7
