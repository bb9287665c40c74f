"""Image container, phantom generation, noise synthesis, metrics, file IO."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dipstop import (
    DomainError,
    IOFailureError,
    Image,
    NoiseSpec,
    ShapeError,
    SizeError,
    add_gaussian_noise,
    add_poisson_noise,
    apply_noise,
    evaluate,
    generate_phantom,
    psnr,
    read_image,
    ssim,
    write_image,
)
from dipstop.image import as_image
from dipstop.phantoms import PHANTOM_KINDS


def const_image(value, h=16, w=16, c=1):
    return Image(np.full((h, w, c), float(value)))


class TestImage:
    def test_2d_input_gets_channel_axis(self):
        img = Image(np.zeros((8, 8)))
        assert img.shape == (8, 8, 1)

    def test_properties(self):
        img = Image(np.zeros((9, 10, 3)))
        assert (img.height, img.width, img.channels) == (9, 10, 3)
        assert img.size == 9 * 10 * 3

    def test_too_small_rejected(self):
        with pytest.raises(SizeError):
            Image(np.zeros((7, 8, 1)))
        with pytest.raises(SizeError):
            Image(np.zeros((8, 7, 1)))

    def test_bad_channels_rejected(self):
        with pytest.raises(ShapeError):
            Image(np.zeros((8, 8, 2)))

    def test_bad_rank_rejected(self):
        with pytest.raises(ShapeError):
            Image(np.zeros((8, 8, 1, 1)))

    def test_non_finite_rejected(self):
        arr = np.zeros((8, 8, 1))
        arr[0, 0, 0] = np.nan
        with pytest.raises(DomainError):
            Image(arr)

    def test_data_is_read_only(self):
        img = const_image(0.5)
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0

    def test_clipped(self):
        img = Image(np.linspace(-1.0, 2.0, 64).reshape(8, 8, 1))
        clipped = img.clipped()
        assert clipped.data.min() >= 0.0 and clipped.data.max() <= 1.0

    def test_as_image_passthrough_and_coerce(self):
        img = const_image(0.2)
        assert as_image(img) is img
        assert isinstance(as_image(np.zeros((8, 8))), Image)


class TestNoiseSpec:
    def test_valid(self):
        NoiseSpec("gaussian", sigma=0.1, seed=3)
        NoiseSpec("poisson", zeta=0.1)

    def test_invalid(self):
        with pytest.raises(DomainError):
            NoiseSpec("salt")
        with pytest.raises(DomainError):
            NoiseSpec("gaussian", sigma=-0.1)
        with pytest.raises(DomainError):
            NoiseSpec("poisson", zeta=0.0)


class TestPhantoms:
    def test_gradient_rows_ramp(self):
        img = generate_phantom("gradient", 8, 8, 1, 0)
        assert np.allclose(img.data[0], 0.0)
        assert np.allclose(img.data[-1], 1.0)
        # every column carries the same ramp
        assert np.allclose(img.data[:, :, 0], img.data[:, :1, 0])

    def test_checkerboard_binary_blocks(self):
        img = generate_phantom("checkerboard", 8, 8, 1, 0)
        assert set(np.unique(img.data)) == {0.0, 1.0}
        assert img.data[0, 0, 0] != img.data[0, 1, 0]

    def test_disks_deterministic(self):
        a = generate_phantom("disks", 64, 64, 3, 7)
        b = generate_phantom("disks", 64, 64, 3, 7)
        assert np.array_equal(a.data, b.data)

    def test_disks_seed_changes_layout(self):
        a = generate_phantom("disks", 64, 64, 1, 7)
        b = generate_phantom("disks", 64, 64, 1, 8)
        assert not np.array_equal(a.data, b.data)

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            generate_phantom("noise", 8, 8, 1, 0)

    def test_too_small(self):
        with pytest.raises(SizeError):
            generate_phantom("gradient", 7, 8, 1, 0)

    @given(
        kind=st.sampled_from(PHANTOM_KINDS),
        h=st.integers(8, 40),
        w=st.integers(8, 40),
        c=st.sampled_from([1, 3]),
        seed=st.integers(0, 1000),
    )
    def test_range_and_shape(self, kind, h, w, c, seed):
        img = generate_phantom(kind, h, w, c, seed)
        assert img.shape == (h, w, c)
        assert img.data.min() >= 0.0 and img.data.max() <= 1.0


class TestGaussianNoise:
    def test_sigma_zero_is_identity(self):
        x = const_image(0.3)
        y = add_gaussian_noise(x, 0.0, 5)
        assert np.array_equal(x.data, y.data)

    def test_negative_sigma(self):
        with pytest.raises(DomainError):
            add_gaussian_noise(const_image(0.3), -0.1, 0)

    def test_sample_std_matches_sigma(self):
        sigma = 25 / 255
        x = const_image(0.5, 256, 256)
        y = add_gaussian_noise(x, sigma, 11)
        sample_std = float((y.data - x.data).std())
        assert abs(sample_std - sigma) / sigma < 0.03

    def test_sample_mean_near_zero(self):
        sigma = 25 / 255
        x = const_image(0.5, 128, 128)
        y = add_gaussian_noise(x, sigma, 12)
        n = x.size
        assert abs(float((y.data - x.data).mean())) < 4 * sigma / math.sqrt(n)

    def test_noisy_psnr_closed_form(self):
        # E[MSE] = sigma^2, so PSNR averages to 20*log10(255/25) = 20.17 dB
        sigma = 25 / 255
        x = const_image(0.5, 64, 64)
        vals = [
            psnr(x, add_gaussian_noise(x, sigma, seed), clip=False) for seed in range(20)
        ]
        assert abs(float(np.mean(vals)) - 20.17) < 0.1

    def test_output_not_clipped(self):
        x = const_image(0.99, 64, 64)
        y = add_gaussian_noise(x, 0.2, 0)
        assert y.data.max() > 1.0


class TestPoissonNoise:
    def test_zero_image_stays_zero(self):
        y = add_poisson_noise(const_image(0.0), 0.1, 0)
        assert np.array_equal(y.data, np.zeros(y.shape))

    def test_invalid_args(self):
        with pytest.raises(DomainError):
            add_poisson_noise(const_image(0.5), 0.0, 0)
        with pytest.raises(DomainError):
            add_poisson_noise(Image(np.full((8, 8, 1), -0.1)), 0.1, 0)

    def test_sample_mean(self):
        y = add_poisson_noise(const_image(0.5, 64, 64), 0.01, 21)
        assert abs(float(y.data.mean()) - 0.5) / 0.5 < 0.02

    def test_sample_variance(self):
        # Var[y] = zeta * x = 0.2 * 0.5
        y = add_poisson_noise(const_image(0.5, 256, 256), 0.2, 22)
        assert abs(float(y.data.var()) - 0.1) / 0.1 < 0.10

    def test_values_are_zeta_multiples(self):
        y = add_poisson_noise(const_image(0.5, 16, 16), 0.1, 3)
        counts = y.data / 0.1
        assert np.allclose(counts, np.round(counts))


class TestApplyNoise:
    def test_dispatch(self):
        x = const_image(0.5, 32, 32)
        g = apply_noise(x, NoiseSpec("gaussian", sigma=0.1, seed=9))
        assert np.array_equal(g.data, add_gaussian_noise(x, 0.1, 9).data)
        p = apply_noise(x, NoiseSpec("poisson", zeta=0.1, seed=9))
        assert np.array_equal(p.data, add_poisson_noise(x, 0.1, 9).data)


class TestPsnr:
    def test_identical_is_cap(self):
        x = const_image(0.4)
        assert psnr(x, x) == math.inf

    def test_uniform_offset_closed_form(self):
        a = const_image(0.5)
        b = const_image(0.6)
        assert abs(psnr(a, b, clip=False) - 20.0) < 1e-12

    def test_clip_changes_out_of_range_comparison(self):
        a = const_image(0.0)
        b = Image(np.full((16, 16, 1), -1.0))
        assert psnr(a, b, clip=True) == math.inf
        assert abs(psnr(a, b, clip=False) - 0.0) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(const_image(0.1, 16, 16), const_image(0.1, 16, 17))

    @given(seed=st.integers(0, 10_000))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = Image(rng.uniform(0, 1, (8, 8, 1)))
        b = Image(rng.uniform(0, 1, (8, 8, 1)))
        assert psnr(a, b) == psnr(b, a)

    @given(scale=st.floats(0.01, 0.2), seed=st.integers(0, 1000))
    def test_monotone_in_perturbation(self, scale, seed):
        rng = np.random.default_rng(seed)
        a = Image(rng.uniform(0.3, 0.7, (8, 8, 1)))
        d = rng.standard_normal((8, 8, 1))
        near = Image(a.data + scale * d)
        far = Image(a.data + 2 * scale * d)
        assert psnr(a, near, clip=False) > psnr(a, far, clip=False)


class TestSsim:
    def test_self_similarity(self):
        img = generate_phantom("disks", 32, 32, 1, 4)
        assert abs(ssim(img, img) - 1.0) < 1e-12

    def test_constant_pair(self):
        a = const_image(0.5)
        assert abs(ssim(a, a) - 1.0) < 1e-12

    def test_inverted_checkerboard_negative(self):
        a = generate_phantom("checkerboard", 16, 16, 1, 0)
        b = Image(1.0 - a.data)
        assert ssim(a, b) < 0.0

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(0)
        a = Image(rng.uniform(0, 1, (16, 16, 1)))
        b = Image(rng.uniform(0, 1, (16, 16, 1)))
        val = ssim(a, b)
        assert val == ssim(b, a)
        assert -1.0 <= val <= 1.0

    def test_too_small(self):
        with pytest.raises(SizeError):
            ssim(const_image(0.5, 8, 8), const_image(0.5, 8, 8))

    @pytest.mark.parametrize("channels", [1, 3])
    def test_matches_reference_implementation(self, channels):
        skimage_metrics = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(17)
        a = Image(rng.uniform(0, 1, (32, 32, channels)))
        b = Image(np.clip(a.data + rng.normal(0, 0.1, a.shape), 0, 1))
        ours = ssim(a, b)
        kwargs = dict(
            data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
        )
        if channels == 1:
            ref = skimage_metrics.structural_similarity(
                a.data[:, :, 0], b.data[:, :, 0], **kwargs
            )
        else:
            ref = skimage_metrics.structural_similarity(
                a.data, b.data, channel_axis=2, **kwargs
            )
        assert abs(ours - ref) < 1e-7


class TestEvaluate:
    def test_report_fields(self):
        x = generate_phantom("disks", 32, 32, 1, 4)
        y = add_gaussian_noise(x, 0.1, 0)
        report = evaluate(x, y)
        assert math.isfinite(report.psnr_db)
        assert -1.0 <= report.ssim <= 1.0

    def test_small_image_gets_nan_ssim(self):
        x = const_image(0.5, 8, 8)
        report = evaluate(x, x)
        assert report.psnr_db == math.inf
        assert math.isnan(report.ssim)


class TestImageIO:
    @pytest.mark.parametrize(
        "ext,channels", [(".png", 1), (".png", 3), (".pgm", 1), (".ppm", 3)]
    )
    def test_8bit_roundtrip(self, tmp_path, ext, channels):
        rng = np.random.default_rng(5)
        img = Image(rng.uniform(0, 1, (16, 16, channels)))
        path = str(tmp_path / f"img{ext}")
        write_image(img, path, bits=8)
        back = read_image(path)
        assert back.shape == img.shape
        assert np.abs(back.data - img.data).max() <= 0.5 / 255 + 1e-12

    def test_16bit_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        img = Image(rng.uniform(0, 1, (16, 16, 3)))
        path = str(tmp_path / "img.png")
        write_image(img, path, bits=16)
        back = read_image(path)
        assert np.abs(back.data - img.data).max() <= 0.5 / 65535 + 1e-12

    def test_quantization_levels_exact(self, tmp_path):
        # values already on the 8-bit grid survive the round trip bitwise
        grid = np.arange(64, dtype=np.float64).reshape(8, 8, 1) / 255.0
        path = str(tmp_path / "grid.png")
        write_image(Image(grid), path, bits=8)
        assert np.array_equal(read_image(path).data, grid)

    def test_color_channel_order_preserved(self, tmp_path):
        arr = np.zeros((8, 8, 3))
        arr[:, :, 0] = 1.0  # pure red
        path = str(tmp_path / "red.png")
        write_image(Image(arr), path)
        back = read_image(path)
        assert np.array_equal(back.data[:, :, 0], np.ones((8, 8)))
        assert back.data[:, :, 1:].max() == 0.0

    def test_missing_file(self):
        with pytest.raises(IOFailureError):
            read_image("/nonexistent/missing.png")

    def test_unsupported_extension(self, tmp_path):
        with pytest.raises(IOFailureError):
            write_image(const_image(0.5), str(tmp_path / "img.jpg"))
