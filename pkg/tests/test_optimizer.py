"""Optimization loop: EMA, stopping rule, traces, baseline, serialization."""

import numpy as np
import pytest

from dipstop import (
    ConfigError,
    DomainError,
    Image,
    NonFiniteLossError,
    RunConfig,
    add_gaussian_noise,
    ema_update,
    init_network,
    iteration_rng,
    optimize,
    read_trace,
    run_baseline_dip,
    write_trace_csv,
    write_trace_ndjson,
    zero_crossing_index,
)

SIGMA = 25 / 255


@pytest.fixture(scope="module")
def noisy32(disks32):
    return add_gaussian_noise(disks32, SIGMA, 5)


def short_run(arch, y, x=None, **overrides):
    cfg = RunConfig(**{"objective": "ste", "sigma": SIGMA, "lr": 0.1,
                       "max_iters": 30, "seed": 3, **overrides})
    net = init_network(arch, y.channels, cfg.seed)
    return optimize(net, y, cfg, x_opt=x)


class TestEmaUpdate:
    def test_beta_zero_returns_new(self, disks8):
        prev = Image(np.zeros(disks8.shape))
        assert np.array_equal(ema_update(prev, disks8, 0.0).data, disks8.data)

    def test_prev_equals_new_fixed_point(self, disks8):
        out = ema_update(disks8, disks8, 0.7)
        assert np.allclose(out.data, disks8.data)

    def test_standard_step(self):
        prev = Image(np.zeros((8, 8, 1)))
        new = Image(np.ones((8, 8, 1)))
        out = ema_update(prev, new, 0.99)
        assert np.allclose(out.data, 0.01)

    def test_first_call_returns_new(self, disks8):
        assert np.array_equal(ema_update(None, disks8, 0.99).data, disks8.data)

    def test_beta_out_of_range(self, disks8):
        with pytest.raises(DomainError):
            ema_update(disks8, disks8, 1.0)
        with pytest.raises(DomainError):
            ema_update(disks8, disks8, -0.1)


class TestZeroCrossingIndex:
    def test_simple_crossing(self):
        assert zero_crossing_index([0.5, 0.2, -0.1], 1) == 2

    def test_never_crosses(self):
        assert zero_crossing_index([0.5, 0.2, 0.1], 1) is None

    def test_windowed_mean(self):
        # mean of [0.5, -0.6] = -0.05 <= 0 at index 1
        assert zero_crossing_index([0.5, -0.6, 0.5, -0.5], 2) == 1

    def test_empty(self):
        assert zero_crossing_index([], 1) is None

    def test_zero_counts_as_crossing(self):
        assert zero_crossing_index([0.5, 0.0], 1) == 1

    def test_invalid_window(self):
        with pytest.raises(DomainError):
            zero_crossing_index([0.5], 0)


class TestRunConfig:
    def test_b_defaults_to_sigma(self):
        assert RunConfig(objective="ste", sigma=0.3).b == 0.3

    def test_explicit_b_kept(self):
        assert RunConfig(objective="ste", sigma=0.3, b=0.1).b == 0.1

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"objective": "nope"},
            {"sigma": -1.0},
            {"sigma": 0.1, "b": -0.5},
            {"ema_beta": 1.0},
            {"stop_window": 0},
            {"max_iters": 0},
            {"lr": 0.0},
            {"objective": "pure"},  # zeta missing
            {"objective": "pure", "zeta": 0.1, "eps": 0.0},
            {"baseline_input": "zeros"},
        ],
    )
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ConfigError):
            RunConfig(**kwargs)


class TestIterationRng:
    def test_deterministic_per_iteration(self):
        a = iteration_rng(4, 17).standard_normal(8)
        b = iteration_rng(4, 17).standard_normal(8)
        assert np.array_equal(a, b)

    def test_streams_differ_across_iterations_and_seeds(self):
        base = iteration_rng(4, 17).standard_normal(8)
        assert not np.array_equal(base, iteration_rng(4, 18).standard_normal(8))
        assert not np.array_equal(base, iteration_rng(5, 17).standard_normal(8))


class TestOptimize:
    def test_max_iters_plumbing(self, tiny_arch, noisy32):
        res = short_run(tiny_arch, noisy32, max_iters=5)
        trace = res.trace
        assert len(trace.records) <= 5
        assert trace.stop_reason in ("zero_crossing", "max_iters")
        iters = [r.iter for r in trace.records]
        assert iters == sorted(set(iters))
        assert trace.stop_iter <= 5

    def test_trace_determinism(self, tiny_arch, noisy32):
        r1 = short_run(tiny_arch, noisy32)
        r2 = short_run(tiny_arch, noisy32)
        assert r1.trace.records == r2.trace.records
        assert np.array_equal(r1.output_ema.data, r2.output_ema.data)
        assert np.array_equal(r1.output_last.data, r2.output_last.data)

    def test_clean_constant_stops_by_zero_crossing(self, tiny_arch):
        y = Image(np.full((16, 16, 1), 0.4))
        cfg = RunConfig(objective="ste", sigma=1e-4, lr=0.1, max_iters=2000, seed=0)
        res = optimize(init_network(tiny_arch, 1, 0), y, cfg)
        assert res.trace.stop_reason == "zero_crossing"
        assert res.trace.stop_iter < 2000

    def test_stopping_soundness(self, tiny_arch, noisy32):
        # stop_reason == zero_crossing  <=>  the rule fires at stop_iter
        y = Image(np.full((16, 16, 1), 0.4))
        cfg = RunConfig(objective="ste", sigma=1e-4, lr=0.1, max_iters=2000, seed=0)
        runs = [
            optimize(init_network(tiny_arch, 1, 0), y, cfg),
            short_run(tiny_arch, noisy32, max_iters=5),
        ]
        for res in runs:
            trace = res.trace
            idx = zero_crossing_index(trace.total_losses, cfg.stop_window)
            if trace.stop_reason == "zero_crossing":
                assert idx == trace.stop_iter
            else:
                assert idx is None

    def test_nonfinite_loss_aborts_with_trace(self, tiny_arch, noisy32):
        with pytest.raises(NonFiniteLossError) as exc:
            short_run(tiny_arch, noisy32, sigma=1e200, max_iters=50)
        assert exc.value.trace is not None

    def test_gt_columns_only_with_gt(self, tiny_arch, disks32, noisy32):
        res_with = short_run(tiny_arch, noisy32, disks32, max_iters=3)
        assert all(r.psnr_to_x is not None for r in res_with.trace.records)
        assert all(r.df_gt is not None for r in res_with.trace.records)
        assert res_with.output_peak is not None
        assert res_with.peak_iter is not None
        res_without = short_run(tiny_arch, noisy32, max_iters=3)
        assert all(r.psnr_to_x is None for r in res_without.trace.records)
        assert res_without.output_peak is None

    def test_channel_mismatch(self, tiny_arch, noisy32):
        net = init_network(tiny_arch, 3, 0)
        cfg = RunConfig(objective="ste", sigma=SIGMA, max_iters=2)
        with pytest.raises(ConfigError):
            optimize(net, noisy32, cfg)


class TestRunBaselineDip:
    def test_requires_ground_truth(self, tiny_arch, noisy32):
        net = init_network(tiny_arch, 1, 0)
        cfg = RunConfig(objective="dip", sigma=SIGMA, max_iters=5)
        with pytest.raises(ConfigError):
            run_baseline_dip(net, noisy32, cfg, None)

    def test_forces_dip_objective(self, tiny_arch, disks32, noisy32):
        net = init_network(tiny_arch, 1, 0)
        cfg = RunConfig(objective="ste", sigma=SIGMA, max_iters=5)
        res = run_baseline_dip(net, noisy32, cfg, disks32)
        assert res.trace.meta["config"]["objective"] == "dip"
        assert res.trace.stop_reason == "max_iters"

    def test_dip_records_have_no_df_mc(self, tiny_arch, disks32, noisy32):
        net = init_network(tiny_arch, 1, 0)
        cfg = RunConfig(objective="dip", sigma=SIGMA, max_iters=5)
        res = run_baseline_dip(net, noisy32, cfg, disks32)
        assert all(r.df_mc is None for r in res.trace.records)
        assert all(r.divergence_term == 0.0 for r in res.trace.records)

    def test_noise_free_final_near_peak(self, tiny_arch, disks32):
        # nothing to overfit: PSNR trends up and the last iterate stays
        # within 1 dB of the best one
        net = init_network(tiny_arch, 1, 0)
        cfg = RunConfig(objective="dip", sigma=0.0, lr=0.1, max_iters=300, seed=0)
        res = run_baseline_dip(net, disks32, cfg, disks32)
        ps = np.array([r.psnr_to_x for r in res.trace.records], dtype=float)
        assert np.nanmax(ps) - ps[-1] <= 1.0
        half = len(ps) // 2
        assert float(np.mean(ps[half:])) > float(np.mean(ps[:half]))

    def test_identical_seeds_identical_traces(self, tiny_arch, disks32, noisy32):
        cfg = RunConfig(objective="dip", sigma=SIGMA, max_iters=5)
        r1 = run_baseline_dip(init_network(tiny_arch, 1, 2), noisy32, cfg, disks32)
        r2 = run_baseline_dip(init_network(tiny_arch, 1, 2), noisy32, cfg, disks32)
        assert r1.trace.records == r2.trace.records


@pytest.fixture(scope="module")
def trace(tiny_arch, disks32):
    y = add_gaussian_noise(disks32, SIGMA, 5)
    return short_run(tiny_arch, y, disks32, max_iters=6).trace


class TestTraceSerialization:
    def test_ndjson_round_trip(self, trace, tmp_path):
        path = str(tmp_path / "trace.ndjson")
        write_trace_ndjson(trace, path)
        back = read_trace(path)
        assert back.records == trace.records
        assert back.stop_iter == trace.stop_iter
        assert back.stop_reason == trace.stop_reason
        assert back.meta == trace.meta

    def test_csv_round_trip(self, trace, tmp_path):
        path = str(tmp_path / "trace.csv")
        write_trace_csv(trace, path)
        back = read_trace(path)
        assert back.records == trace.records
        assert back.stop_iter == trace.stop_iter
        assert back.stop_reason == trace.stop_reason
        assert back.meta == trace.meta

    def test_optional_columns_absent_without_gt(self, tiny_arch, tmp_path):
        y = Image(np.full((16, 16, 1), 0.4))
        cfg = RunConfig(objective="dip", sigma=SIGMA, max_iters=3)
        res = optimize(init_network(tiny_arch, 1, 0), y, cfg)
        path = str(tmp_path / "t.ndjson")
        write_trace_ndjson(res.trace, path)
        back = read_trace(path)
        assert all(r.psnr_to_x is None and r.df_gt is None and r.df_mc is None
                   for r in back.records)
