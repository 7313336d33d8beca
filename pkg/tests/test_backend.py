"""Synthetic backend: codec, trajectory round trips, features."""

import numpy as np
import pytest
import torch

from latentdrag import (
    BackendError,
    DiffusionSchedule,
    LatentCode,
    SyntheticBackend,
    available_backends,
    create_backend,
    uniform_schedule,
)


@pytest.fixture(scope="module")
def backend():
    return SyntheticBackend(height=16, width=16)


def random_image(seed, h=16, w=16):
    return np.random.default_rng(seed).random((h, w, 3))


def random_latent(seed, backend):
    gen = torch.Generator().manual_seed(seed)
    c, h, w = backend.descriptor().latent_shape
    return LatentCode(data=torch.randn(c, h, w, generator=gen, dtype=torch.float64), timestep=0)


class TestSchedule:
    def test_uniform_schedule_monotone(self):
        sched = uniform_schedule(50)
        assert sched.num_steps == 50
        assert all(b < a for b, a in zip(sched.noise_levels, sched.noise_levels[1:]))

    def test_rejects_non_monotone(self):
        with pytest.raises(BackendError):
            DiffusionSchedule(num_steps=3, noise_levels=(0.1, 0.1, 0.2))

    def test_rejects_length_mismatch(self):
        with pytest.raises(BackendError):
            DiffusionSchedule(num_steps=2, noise_levels=(0.1, 0.2, 0.3))

    def test_signal_noise_variance_preserving(self):
        sched = uniform_schedule(10)
        for t in range(11):
            a, b = sched.signal_scale(t), sched.noise_scale(t)
            assert a * a + b * b == pytest.approx(1.0, abs=1e-12)


class TestCodec:
    def test_identity_roundtrip(self, backend):
        img = random_image(0)
        assert np.abs(backend.decode_latent(backend.encode_image(img)) - img).max() < 1e-6

    def test_identity_roundtrip_32px(self):
        backend = SyntheticBackend(height=32, width=32)
        img = random_image(1, 32, 32)
        assert np.abs(backend.decode_latent(backend.encode_image(img)) - img).max() < 1e-6

    def test_zero_image_zero_latent(self, backend):
        z = backend.encode_image(np.zeros((16, 16, 3)))
        assert torch.count_nonzero(z.data) == 0
        assert np.count_nonzero(backend.decode_latent(z)) == 0

    def test_dimension_mismatch_rejected(self, backend):
        with pytest.raises(BackendError, match="geometry"):
            backend.encode_image(np.zeros((8, 8, 3)))

    def test_decode_refuses_noised_latent(self, backend):
        zt = backend.ddim_invert(backend.encode_image(random_image(1)), 5)
        with pytest.raises(BackendError, match="t=0"):
            backend.decode_latent(zt)

    def test_decode_of_sampled_latent_in_range(self, backend):
        for seed in range(5):
            zt = backend.ddim_invert(backend.encode_image(random_image(seed)), 50)
            img = backend.decode_latent(backend.ddim_sample(zt))
            assert np.isfinite(img).all()
            assert img.min() >= 0.0 and img.max() <= 1.0


class TestTrajectory:
    def test_invert_t0_is_identity(self, backend):
        z0 = backend.encode_image(random_image(2))
        assert backend.ddim_invert(z0, 0) is z0

    def test_sample_t0_is_identity(self, backend):
        z0 = backend.encode_image(random_image(3))
        assert backend.ddim_sample(z0) is z0

    def test_roundtrip_tight(self, backend):
        for seed in range(10):
            z0 = random_latent(seed, backend)
            back = backend.ddim_sample(backend.ddim_invert(z0, 50))
            assert (back.data - z0.data).abs().max() < 1e-5

    def test_inversion_moves_latent(self, backend):
        z0 = backend.encode_image(random_image(4))
        zt = backend.ddim_invert(z0, 50)
        assert (zt.data - z0.data).abs().max() > 1e-2

    def test_inversion_injective_on_samples(self, backend):
        codes = [backend.ddim_invert(random_latent(s, backend), 50) for s in range(6)]
        for i in range(len(codes)):
            for j in range(i + 1, len(codes)):
                assert (codes[i].data - codes[j].data).abs().max() > 1e-3

    def test_sampling_deterministic(self, backend):
        zt = backend.ddim_invert(random_latent(11, backend), 50)
        a = backend.ddim_sample(zt)
        b = backend.ddim_sample(zt)
        assert torch.equal(a.data, b.data)

    def test_target_t_out_of_schedule_rejected(self, backend):
        z0 = backend.encode_image(random_image(5))
        with pytest.raises(BackendError, match="timestep"):
            backend.ddim_invert(z0, 51)

    def test_sample_rejects_nonfinite(self, backend):
        data = torch.full((3, 16, 16), torch.nan, dtype=torch.float64)
        with pytest.raises(BackendError):
            LatentCode(data=data, timestep=10)

    def test_truncated_sampling_path(self, backend):
        zt = backend.ddim_invert(random_latent(12, backend), 50)
        z_preview = backend.ddim_sample(zt, timesteps=[40, 30, 20, 10, 0])
        assert z_preview.timestep == 0
        assert torch.isfinite(z_preview.data).all()
        with pytest.raises(BackendError, match="decrease"):
            backend.ddim_sample(zt, timesteps=[10, 20, 0])


class TestFeatures:
    def test_constant_latent_constant_interior_features(self, backend):
        z = LatentCode(data=torch.full((3, 16, 16), 0.5, dtype=torch.float64), timestep=0)
        for layer, margin in (("mid", 1), ("late", 2)):
            F = backend.extract_features(z, layer)
            interior = F.data[:, margin:-margin, margin:-margin]
            spread = (interior - interior[:, :1, :1]).abs().max()
            assert spread < 1e-12

    def test_unknown_layer_rejected(self, backend):
        z = backend.encode_image(random_image(6))
        with pytest.raises(BackendError, match="unknown feature layer"):
            backend.extract_features(z, "conv9")

    @pytest.mark.parametrize("layer", ["mid", "late"])
    def test_gradient_matches_central_differences(self, backend, layer):
        x = random_latent(7, backend).data.requires_grad_(True)
        weights = torch.randn(
            backend.feature_channels, 16, 16,
            generator=torch.Generator().manual_seed(8), dtype=torch.float64,
        )

        def functional(data):
            F = backend.extract_features(LatentCode(data=data, timestep=0), layer)
            return (F.data * weights).sum()

        (grad,) = torch.autograd.grad(functional(x), x)
        h = 1e-6
        rng = np.random.default_rng(9)
        for _ in range(8):
            idx = tuple(rng.integers(0, s) for s in x.shape)
            xp, xm = x.detach().clone(), x.detach().clone()
            xp[idx] += h
            xm[idx] -= h
            fd = (functional(xp) - functional(xm)) / (2 * h)
            assert abs(grad[idx] - fd) / max(abs(fd), 1e-12) < 1e-4

    def test_translation_equivariance_interior(self, backend):
        data = random_latent(10, backend).data
        shifted = torch.roll(data, shifts=1, dims=2)
        F = backend.extract_features(LatentCode(data=data, timestep=0), "late").data
        Fs = backend.extract_features(LatentCode(data=shifted, timestep=0), "late").data
        m = 4  # clear of both the conv borders and the roll seam
        assert torch.allclose(Fs[:, m:-m, m + 1 : -m + 17], F[:, m:-m, m : -m + 16], atol=1e-12)

    def test_feature_map_aligned_to_latent(self, backend):
        z = backend.encode_image(random_image(11))
        for layer in backend.descriptor().feature_layer_ids:
            F = backend.extract_features(z, layer)
            assert F.spatial_shape == z.spatial_shape


class TestRegistry:
    def test_synthetic_registered(self):
        assert "synthetic" in available_backends()
        b = create_backend("synthetic", height=8, width=8)
        assert b.descriptor().deterministic

    def test_unknown_backend_rejected(self):
        with pytest.raises(BackendError, match="no backend named"):
            create_backend("nope")

    def test_latent_diffusion_needs_checkpoint(self):
        with pytest.raises(BackendError, match="checkpoint"):
            create_backend("latent-diffusion")
