import math

import numpy as np
import pytest

from conftest import make_target
from isacsim import engine
from isacsim.config import SimConfig
from isacsim.engine import (
    advance_target,
    mean_ci,
    run_seed,
    run_simulation,
    run_sweep,
    stream_rng,
    summarize,
    target_at,
    worker_count,
)
from isacsim.sensing import EstimationError


class TestKinematics:
    def test_one_slot_moves_a_tenth_of_a_metre(self):
        t = advance_target(make_target(0, 50), 0.05)
        assert (t.centroid.x, t.centroid.y) == pytest.approx((0.1, 50.0))

    def test_zero_time_is_identity(self):
        t = make_target(3, 4)
        assert advance_target(t, 0.0) == t

    def test_one_metre_per_frame(self):
        cfg = SimConfig()
        for frame in (1, 10, 99):
            c = target_at(cfg, frame).centroid
            assert (c.x, c.y) == pytest.approx((float(frame), 50.0), abs=1e-12)
        assert target_at(cfg, 3, 4).centroid.x == pytest.approx(3.4)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            advance_target(make_target(), -1.0)


def test_stream_rng_is_keyed():
    a = stream_rng(1, 2, 3, 4).standard_normal(4)
    assert np.array_equal(a, stream_rng(1, 2, 3, 4).standard_normal(4))
    assert not np.array_equal(a, stream_rng(1, 2, 3, 5).standard_normal(4))
    assert not np.array_equal(a, stream_rng(1, 3, 3, 4).standard_normal(4))


@pytest.fixture(scope="module")
def small_series():
    cfg = SimConfig(frames=3, seeds=(0, 1, 2))
    return cfg, run_simulation(cfg, workers=1)


class TestFrame:
    def test_nine_communication_slots_per_frame(self, small_series):
        cfg, series = small_series
        for frames in series.values():
            assert len(frames) == 3
            for f in frames:
                for est in cfg.estimators:
                    assert len(f.throughput[est]) == 9
                    assert len(f.correlation[est]) == 9

    def test_estimates_frozen_within_frame(self, monkeypatch):
        calls = []
        real = engine.zf_weights

        def counting(h, *a, **k):
            calls.append(h)
            return real(h, *a, **k)

        monkeypatch.setattr(engine, "zf_weights", counting)
        cfg = SimConfig(frames=2, seeds=(0,))
        run_seed(cfg, 0)
        # per frame: one ZF each for the two frozen estimators, one per slot for perfect CSI
        assert len(calls) == 2 * (2 + 9)
        only_sensing = SimConfig(frames=2, seeds=(0,), estimators=("sensing",))
        calls.clear()
        run_seed(only_sensing, 0)
        assert len(calls) == 2

    def test_exact_sensing_on_static_target_matches_perfect_csi(self):
        cfg = SimConfig(frames=3, seeds=(0,), sensing_noise=False, target_speed_mps=0.0,
                        scatterer_layout="grid", target_start_m=(60.0, 50.0))
        frames = run_seed(cfg, 0)
        for f in frames:
            assert f.pos_error < 1e-9
            assert f.fused.v_hat == pytest.approx(0.0, abs=1e-9)
            assert np.allclose(f.throughput["sensing"], f.throughput["perfect"], rtol=1e-9)
            assert np.allclose(f.correlation["sensing"], 1.0)

    def test_sensing_failure_falls_back_to_prediction(self, monkeypatch):
        def boom(*a, **k):
            raise EstimationError("no measurements")

        monkeypatch.setattr(engine, "fuse", boom)
        cfg = SimConfig(frames=2, seeds=(0,))
        frames = run_seed(cfg, 0)
        assert all(f.fallback for f in frames)
        # the initial track predicts the start pose one frame ahead
        assert (frames[0].fused.x_hat, frames[0].fused.y_hat) == pytest.approx((0.0, 50.0))
        assert frames[0].pos_error == pytest.approx(0.0)
        assert (frames[1].fused.x_hat, frames[1].fused.y_hat) == pytest.approx((1.0, 50.0))

    def test_stops_when_target_leaves_room(self):
        cfg = SimConfig(frames=10, seeds=(0,), target_start_m=(190.0, 50.0), target_speed_mps=20.0)
        assert len(run_seed(cfg, 0)) == 2


class TestDeterminism:
    def test_same_seed_same_numbers(self):
        cfg = SimConfig(frames=2, seeds=(4,))
        a = run_seed(cfg, 4)
        b = run_seed(cfg, 4)
        for fa, fb in zip(a, b):
            assert fa.throughput == fb.throughput
            assert fa.pos_error == fb.pos_error

    def test_worker_count_does_not_change_results(self, small_series):
        cfg, serial = small_series
        parallel = run_simulation(cfg, workers=2)
        assert list(parallel) == list(serial)
        for s in serial:
            for fa, fb in zip(serial[s], parallel[s]):
                assert fa.throughput == fb.throughput
                assert fa.correlation == fb.correlation
                assert fa.pos_error == fb.pos_error

    def test_worker_count_env(self, monkeypatch):
        monkeypatch.setenv("ISACSIM_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("ISACSIM_THREADS", "zero")
        assert worker_count() >= 1


class TestAggregation:
    def test_mean_ci_example(self):
        m, lo, hi = mean_ci([1.0, 2.0, 3.0, 4.0])
        half = 1.96 * math.sqrt(5 / 3) / 2
        assert (m, lo, hi) == pytest.approx((2.5, 2.5 - half, 2.5 + half))

    def test_mean_ci_single_value(self):
        assert mean_ci([7.0]) == (7.0, 7.0, 7.0)

    def test_summary_structure(self, small_series):
        cfg, series = small_series
        s = summarize(series, cfg)
        assert s["n_seeds"] == 3 and s["n_frames"] == 9
        assert set(s["estimators"]) == {"sensing", "ls", "perfect"}
        errs = [f.pos_error for fr in series.values() for f in fr]
        assert s["mean_pos_error_m"] == pytest.approx(np.mean(errs))
        for est in s["estimators"].values():
            lo, hi = est["throughput_ci95"]
            assert lo <= est["mean_throughput_bps_hz"] <= hi
        assert s["estimators"]["perfect"]["mean_correlation"] == pytest.approx(1.0)

    def test_slots_are_averaged_within_frames_first(self, small_series):
        cfg, series = small_series
        frames = series[0]
        want = np.mean([np.mean(f.throughput["ls"]) for f in frames])
        assert engine.seed_means({0: frames}, "ls", "throughput") == [pytest.approx(want)]


class TestSweep:
    def test_structure(self):
        cfg = SimConfig(frames=1, seeds=(0, 1))
        rows = run_sweep(cfg, "aps", [2, 3], workers=1)
        assert len(rows) == 6
        assert [(r["value"], r["estimator"]) for r in rows] == [
            (2, "sensing"), (2, "ls"), (2, "perfect"), (3, "sensing"), (3, "ls"), (3, "perfect")]
        assert all(not r["skipped"] and r["n_seeds"] == 2 for r in rows)

    def test_infeasible_points_are_skipped(self):
        cfg = SimConfig(frames=1, seeds=(0,), n_tx=4, n_rx=4)
        rows = run_sweep(cfg, "aps", [2, 3], workers=1)
        assert [r["skipped"] for r in rows] == [True] * 3 + [False] * 3

    def test_power_sweep_changes_power(self):
        cfg = SimConfig(frames=1, seeds=(0,), estimators=("perfect",))
        rows = run_sweep(cfg, "power", [10, 30], workers=1)
        assert rows[1]["throughput_mean"] > rows[0]["throughput_mean"]

    def test_rejects_unknown_parameter(self):
        with pytest.raises(ValueError):
            run_sweep(SimConfig(), "users", [1])
        with pytest.raises(ValueError):
            run_sweep(SimConfig(), "aps", [])
