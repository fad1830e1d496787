"""Discriminator and adversarial losses."""

import numpy as np
import pytest
import torch

from isg.config import DiscriminatorConfig
from isg.models.adversarial import (
    SequenceDiscriminator,
    gan_losses,
    upsample_motion,
)


def make_disc(n_mels=8, pose=4, width=32, seed=0):
    torch.manual_seed(seed)
    return SequenceDiscriminator(DiscriminatorConfig(
        n_recurrent_layers=2, width=width, input_dim=n_mels + pose))


class TestDiscriminator:
    def test_untrained_scores_exactly_half(self):
        d = make_disc()
        mel = torch.randn(2, 10, 8)
        motion = torch.randn(2, 10, 4)
        assert torch.allclose(d(mel, motion), torch.full((2,), 0.5))

    def test_output_strictly_in_open_unit_interval(self):
        d = make_disc()
        with torch.no_grad():
            for p in d.parameters():
                p.normal_(0, 0.5)
        for seed in range(5):
            g = torch.Generator(); g.manual_seed(seed)
            mel = torch.randn(3, 12, 8, generator=g)
            motion = torch.randn(3, 12, 4, generator=g)
            p = d(mel, motion)
            assert torch.all(p > 0) and torch.all(p < 1)

    def test_frame_mismatch_rejected(self):
        d = make_disc()
        with pytest.raises(ValueError):
            d(torch.randn(1, 10, 8), torch.randn(1, 9, 4))

    def test_pairing_separation_after_toy_training(self):
        # correlated pairs vs mismatched pairs become separable
        torch.manual_seed(0)
        rng = np.random.default_rng(0)
        d = make_disc(n_mels=6, pose=3, width=24)
        opt = torch.optim.Adam(d.parameters(), lr=5e-3)
        def paired(seed):
            g = np.random.default_rng(seed)
            base = g.normal(size=(16, 6))
            motion = base[:, :3] * 0.9 + 0.05 * g.normal(size=(16, 3))
            return (torch.as_tensor(base, dtype=torch.float32),
                    torch.as_tensor(motion, dtype=torch.float32))
        for step in range(200):
            mel, motion = paired(step)
            perm = torch.as_tensor(
                rng.permutation(16), dtype=torch.long)
            d_real = d(mel.unsqueeze(0), motion.unsqueeze(0))
            d_fake = d(mel.unsqueeze(0), motion[perm].unsqueeze(0))
            loss, _ = gan_losses(d_real, d_fake, 1.0)
            opt.zero_grad(); loss.backward(); opt.step()
        mel, motion = paired(999)
        score_real = d(mel.unsqueeze(0), motion.unsqueeze(0)).item()
        perm = torch.as_tensor(rng.permutation(16), dtype=torch.long)
        score_fake = d(mel.unsqueeze(0), motion[perm].unsqueeze(0)).item()
        assert score_real - score_fake > 0.0


class TestUpsample:
    def test_linear_upsample_hits_endpoints(self):
        poses = torch.tensor([[[0.0, 0.0], [1.0, 2.0]]])
        up = upsample_motion(poses, 5)
        assert up.shape == (1, 5, 2)
        assert torch.allclose(up[0, 0], poses[0, 0])
        assert torch.allclose(up[0, -1], poses[0, -1])
        assert torch.allclose(up[0, 2], torch.tensor([0.5, 1.0]))


class TestGanLosses:
    def test_half_half_gives_2_ln_2(self):
        d_loss, _ = gan_losses(0.5, 0.5, 0.05)
        assert d_loss.item() == pytest.approx(2 * np.log(2), abs=1e-6)

    def test_generator_loss_at_half(self):
        _, g_loss = gan_losses(0.9, 0.5, 0.05)
        assert g_loss.item() == pytest.approx(0.05 * np.log(2), abs=1e-6)

    def test_weight_zero_kills_generator_loss(self):
        for df in (0.01, 0.3, 0.99):
            _, g_loss = gan_losses(0.5, df, 0.0)
            assert g_loss.item() == 0.0

    def test_d_loss_monotone_in_both_arguments(self):
        reals = np.linspace(0.05, 0.95, 12)
        losses = [gan_losses(r, 0.3, 1.0)[0].item() for r in reals]
        assert all(b < a for a, b in zip(losses, losses[1:]))
        fakes = np.linspace(0.05, 0.95, 12)
        losses = [gan_losses(0.7, f, 1.0)[0].item() for f in fakes]
        assert all(b > a for a, b in zip(losses, losses[1:]))

    def test_minimax_flag_flips_generator_form(self):
        _, g_ns = gan_losses(0.5, 0.3, 1.0, saturating=False)
        _, g_mm = gan_losses(0.5, 0.3, 1.0, saturating=True)
        assert g_ns.item() == pytest.approx(-np.log(0.3), abs=1e-6)
        assert g_mm.item() == pytest.approx(np.log(0.7), abs=1e-6)

    def test_extreme_probabilities_clamped_finite(self):
        d_loss, g_loss = gan_losses(1.0, 0.0, 1.0)
        assert np.isfinite(d_loss.item()) and np.isfinite(g_loss.item())

    def test_generator_gradient_reaches_gesture_parameters(self):
        torch.manual_seed(0)
        from isg.config import toy_gesture_config
        from isg.models.gesture import GestureDecoder

        dec = GestureDecoder(toy_gesture_config(pose_dim=4, input_dim=6))
        d = make_disc(n_mels=5, pose=4, width=16)
        with torch.no_grad():
            for p in d.parameters():
                p.normal_(0, 0.3)
        inputs = torch.randn(1, 10, 6)
        mel = torch.randn(1, 10, 5)
        poses = dec(inputs, torch.zeros(1, 4))
        d_fake = d(mel, poses)
        _, g_loss = gan_losses(0.5, d_fake, 0.05)
        g_loss.backward()
        grads = [p.grad for p in dec.parameters()]
        assert any(g is not None and g.abs().max() > 0 for g in grads)
