"""Hourglass denoiser: shapes, determinism, gradients, checkpoints."""

import numpy as np
import pytest
import torch

from dipstop import (
    ArchSpec,
    ConfigError,
    Image,
    ShapeError,
    forward,
    init_network,
    load_checkpoint,
    save_checkpoint,
)
from dipstop.risk import to_tensor


def flat_params(net):
    return torch.cat([p.detach().reshape(-1) for p in net.parameters()])


class TestArchSpec:
    def test_defaults(self):
        spec = ArchSpec()
        assert spec.depth == 4
        assert spec.channels == (32, 64, 64, 128)
        assert spec.skip_channels == (4, 4, 4, 4)

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            ArchSpec(depth=3, channels=(8, 16), skip_channels=(4, 4, 4))

    def test_bad_depth(self):
        with pytest.raises(ConfigError):
            ArchSpec(depth=0, channels=(), skip_channels=())

    def test_bad_channel_counts(self):
        with pytest.raises(ConfigError):
            ArchSpec(depth=2, channels=(8, 0), skip_channels=(4, 4))
        with pytest.raises(ConfigError):
            ArchSpec(depth=2, channels=(8, 16), skip_channels=(4, -1))

    def test_bad_enums(self):
        with pytest.raises(ConfigError):
            ArchSpec(depth=2, channels=(8, 16), skip_channels=(4, 4), activation="tanh")
        with pytest.raises(ConfigError):
            ArchSpec(depth=2, channels=(8, 16), skip_channels=(4, 4), upsample="cubic")
        with pytest.raises(ConfigError):
            ArchSpec(depth=2, channels=(8, 16), skip_channels=(4, 4), norm="layer")

    def test_dict_round_trip(self, tiny_arch):
        assert ArchSpec.from_dict(tiny_arch.to_dict()) == tiny_arch


class TestInitNetwork:
    def test_same_seed_same_params(self, tiny_arch):
        a = init_network(tiny_arch, 1, 5)
        b = init_network(tiny_arch, 1, 5)
        assert torch.equal(flat_params(a), flat_params(b))

    def test_different_seeds_differ(self, tiny_arch):
        a = init_network(tiny_arch, 1, 5)
        b = init_network(tiny_arch, 1, 6)
        assert not torch.equal(flat_params(a), flat_params(b))

    def test_invalid_channels(self, tiny_arch):
        with pytest.raises(ConfigError):
            init_network(tiny_arch, 2, 0)

    def test_forward_zeros_finite(self):
        spec = ArchSpec(depth=2, channels=(8, 16), skip_channels=(4, 4))
        net = init_network(spec, 3, 0)
        out = forward(net, Image(np.zeros((64, 64, 3))))
        assert out.shape == (64, 64, 3)
        assert np.isfinite(out.data).all()


class TestForward:
    @pytest.mark.parametrize("h,w", [(8, 8), (17, 23), (64, 64)])
    def test_shape_preserved(self, tiny_arch, h, w):
        net = init_network(tiny_arch, 1, 0)
        rng = np.random.default_rng(0)
        out = forward(net, Image(rng.uniform(size=(h, w, 1))))
        assert out.shape == (h, w, 1)
        assert np.isfinite(out.data).all()

    def test_channel_mismatch(self, tiny_arch):
        net = init_network(tiny_arch, 1, 0)
        with pytest.raises(ShapeError):
            forward(net, Image(np.zeros((16, 16, 3))))

    def test_forward_bitwise_deterministic(self, tiny_arch, disks8):
        net = init_network(tiny_arch, 1, 0)
        a = forward(net, disks8)
        b = forward(net, disks8)
        assert np.array_equal(a.data, b.data)

    def test_same_seed_same_output(self, tiny_arch, disks8):
        a = forward(init_network(tiny_arch, 1, 3), disks8)
        b = forward(init_network(tiny_arch, 1, 3), disks8)
        assert np.array_equal(a.data, b.data)


def projection_weights(shape, seed):
    return torch.from_numpy(np.random.default_rng(seed).standard_normal(shape))


def central_difference(f, t, index, eps):
    with torch.no_grad():
        orig = float(t.reshape(-1)[index])
        t.reshape(-1)[index] = orig + eps
        hi = f()
        t.reshape(-1)[index] = orig - eps
        lo = f()
        t.reshape(-1)[index] = orig
    return (hi - lo) / (2 * eps)


class TestGradients:
    """Autograd vs central finite differences on a scalar output projection.

    Tolerance uses |fd - an| <= rtol*max(|an|, |fd|) + atol: convolution
    biases feeding batch norm have exactly-zero true gradients (the mean
    subtraction cancels constant shifts), where a pure relative error is
    meaningless.
    """

    RTOL = 1e-3
    ATOL = 1e-6
    EPS = 1e-6

    def _setup(self, tiny_arch, disks8):
        net = init_network(tiny_arch, 1, 0, dtype=torch.float64)
        y = to_tensor(disks8.data, torch.float64)
        w = projection_weights(tuple(net(y).shape), 99).to(torch.float64)
        return net, y, w

    def test_input_gradient(self, tiny_arch, disks8):
        net, y, w = self._setup(tiny_arch, disks8)
        y = y.clone().requires_grad_(True)
        (net(y) * w).sum().backward()
        analytic = y.grad.detach().reshape(-1)
        probe = y.detach().clone()
        for index in range(probe.numel()):
            fd = central_difference(lambda: float((net(probe) * w).sum()), probe, index, self.EPS)
            an = float(analytic[index])
            assert abs(fd - an) <= self.RTOL * max(abs(an), abs(fd)) + self.ATOL

    def test_parameter_gradient(self, tiny_arch, disks8):
        net, y, w = self._setup(tiny_arch, disks8)
        (net(y) * w).sum().backward()
        rng = np.random.default_rng(7)
        for name, p in net.named_parameters():
            count = min(3, p.numel())
            for index in rng.choice(p.numel(), size=count, replace=False):
                an = float(p.grad.reshape(-1)[index])
                fd = central_difference(lambda: float((net(y) * w).sum()), p.data, int(index), self.EPS)
                assert abs(fd - an) <= self.RTOL * max(abs(an), abs(fd)) + self.ATOL, name


class TestCheckpoint:
    def test_round_trip_identical_forward(self, tiny_arch, disks8, tmp_path):
        net = init_network(tiny_arch, 1, 4)
        path = str(tmp_path / "net.npz")
        save_checkpoint(net, path)
        restored = load_checkpoint(path)
        assert restored.architecture == tiny_arch
        assert torch.equal(flat_params(net), flat_params(restored))
        a = forward(net, disks8)
        b = forward(restored, disks8)
        assert np.array_equal(a.data, b.data)

    def test_missing_file(self, tmp_path):
        from dipstop import IOFailureError

        with pytest.raises(IOFailureError):
            load_checkpoint(str(tmp_path / "absent.npz"))
