"""Metrics, baselines, best-of-n sampling behaviour and the latency
benchmark protocol."""

import numpy as np
import pytest

from crowdgcn.autodiff import Tensor
from crowdgcn.data import window_sequences
from crowdgcn.errors import ShapeError
from crowdgcn.evaluation import (
    ade,
    benchmark_inference,
    best_of_n,
    cvm_predict,
    evaluate_baseline,
    evaluate_model,
    fde,
    linear_predict,
    most_likely,
)
from crowdgcn.model import GaussianField, init_params
from crowdgcn.synthetic import constant_velocity_scene, wandering_crowd_scene


def make_field(mu, sigma, rho):
    return GaussianField(mu=Tensor(mu), sigma=Tensor(sigma), rho=Tensor(rho))


class TestAdeFde:
    def test_zero_for_perfect_prediction(self):
        gt = np.random.default_rng(0).uniform(-5, 5, (3, 12, 2))
        assert ade(gt, gt) == 0.0
        assert fde(gt, gt) == 0.0

    def test_uniform_offset_three_four_five(self):
        gt = np.zeros((2, 12, 2))
        pred = gt + np.array([0.3, 0.4])
        assert ade(pred, gt) == pytest.approx(0.5, abs=1e-12)
        assert fde(pred, gt) == pytest.approx(0.5, abs=1e-12)

    def test_single_bad_step_averages(self):
        gt = np.zeros((1, 12, 2))
        pred = gt.copy()
        pred[0, 4, 0] = 1.0
        assert ade(pred, gt) == pytest.approx(1.0 / 12.0, abs=1e-12)

    def test_fde_only_sees_final_step(self):
        gt = np.zeros((1, 12, 2))
        pred = gt.copy()
        pred[0, -1, 1] = 2.0
        assert fde(pred, gt) == pytest.approx(2.0, abs=1e-12)

    def test_ade_can_exceed_fde(self):
        # noisy middle, exact endpoint
        gt = np.zeros((1, 12, 2))
        pred = gt.copy()
        pred[0, :-1, 0] = 1.0
        assert ade(pred, gt) > 0.0
        assert fde(pred, gt) == 0.0

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(1)
        gt = rng.uniform(-5, 5, (4, 12, 2))
        pred = gt + rng.uniform(-1, 1, (4, 12, 2))
        theta = 0.77
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        shift = np.array([3.0, -8.0])
        gt_t = gt @ rot.T + shift
        pred_t = pred @ rot.T + shift
        assert abs(ade(pred, gt) - ade(pred_t, gt_t)) < 1e-9
        assert abs(fde(pred, gt) - fde(pred_t, gt_t)) < 1e-9

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ade(np.zeros((1, 12, 2)), np.zeros((2, 12, 2)))


class TestBestOfN:
    def test_n_one_equals_single_sample_metrics(self):
        rng = np.random.default_rng(2)
        mu = rng.uniform(-0.5, 0.5, (3, 6, 2))
        field = make_field(mu, np.full((3, 6, 2), 0.4), np.zeros((3, 6)))
        gt = rng.uniform(-3, 3, (3, 6, 2))
        origin = rng.uniform(-1, 1, (3, 2))

        from crowdgcn.evaluation import sample_trajectories
        draw = sample_trajectories(field, origin, 1, np.random.default_rng(77))[0]
        bon_ade, bon_fde = best_of_n(field, gt, origin, 1, np.random.default_rng(77))
        assert bon_ade == pytest.approx(ade(draw, gt), abs=1e-12)
        assert bon_fde == pytest.approx(fde(draw, gt), abs=1e-12)

    def test_degenerate_sigma_equals_most_likely(self):
        rng = np.random.default_rng(3)
        mu = rng.uniform(-0.5, 0.5, (2, 5, 2))
        field = make_field(mu, np.full((2, 5, 2), 1e-12), np.zeros((2, 5)))
        gt = rng.uniform(-3, 3, (2, 5, 2))
        origin = rng.uniform(-1, 1, (2, 2))
        ml = most_likely(field, origin)
        bon_ade, bon_fde = best_of_n(field, gt, origin, 7, np.random.default_rng(0))
        assert bon_ade == pytest.approx(ade(ml, gt), abs=1e-8)
        assert bon_fde == pytest.approx(fde(ml, gt), abs=1e-8)

    def test_fixed_seed_reproducible(self):
        rng = np.random.default_rng(4)
        field = make_field(rng.uniform(-0.5, 0.5, (2, 5, 2)),
                           np.full((2, 5, 2), 0.3), np.zeros((2, 5)))
        gt = rng.uniform(-2, 2, (2, 5, 2))
        origin = np.zeros((2, 2))
        a = best_of_n(field, gt, origin, 10, np.random.default_rng(5))
        b = best_of_n(field, gt, origin, 10, np.random.default_rng(5))
        assert a == b

    def test_monte_carlo_monotone_in_n(self):
        # E[BoN ADE] is non-increasing in n; check mean over 200 seeds.
        rng = np.random.default_rng(6)
        field = make_field(rng.uniform(-0.3, 0.3, (2, 6, 2)),
                           np.full((2, 6, 2), 0.5), np.zeros((2, 6)))
        gt = rng.uniform(-2, 2, (2, 6, 2))
        origin = np.zeros((2, 2))
        a1, a20 = [], []
        for seed in range(200):
            a1.append(best_of_n(field, gt, origin, 1, np.random.default_rng(seed))[0])
            a20.append(best_of_n(field, gt, origin, 20, np.random.default_rng(10_000 + seed))[0])
        m1, m20 = np.mean(a1), np.mean(a20)
        stderr = np.std(a1) / np.sqrt(len(a1))
        assert m20 <= m1 + 2 * stderr
        assert m20 < m1  # decisively better at this sigma

    def test_invalid_n_rejected(self):
        field = make_field(np.zeros((1, 2, 2)), np.ones((1, 2, 2)), np.zeros((1, 2)))
        with pytest.raises(ValueError):
            best_of_n(field, np.zeros((1, 2, 2)), np.zeros((1, 2)), 0, np.random.default_rng(0))


class TestMostLikely:
    def test_zero_mu_holds_origin(self):
        field = make_field(np.zeros((2, 4, 2)), np.ones((2, 4, 2)), np.zeros((2, 4)))
        out = most_likely(field, np.array([[1.0, 1.0], [2.0, -1.0]]))
        np.testing.assert_array_equal(out[0], np.ones((4, 2)))
        np.testing.assert_array_equal(out[1], np.broadcast_to([2.0, -1.0], (4, 2)))


class TestBaselines:
    def test_cvm_constant_velocity(self):
        obs = np.array([[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.5, 0.0]]])
        pred = cvm_predict(obs, 3)
        np.testing.assert_array_equal(pred[0], [[2.0, 0.0], [2.5, 0.0], [3.0, 0.0]])

    def test_cvm_stationary(self):
        obs = np.full((2, 4, 2), 3.25)
        pred = cvm_predict(obs, 5)
        np.testing.assert_array_equal(pred, np.full((2, 5, 2), 3.25))

    def test_cvm_exact_on_constant_velocity_ground_truth(self):
        scene = constant_velocity_scene(n_peds=5, n_frames=20, seed=1)
        for sample in window_sequences(scene, t_obs=8, t_pred=12):
            pred = cvm_predict(sample.abs_obs, sample.t_pred)
            assert ade(pred, sample.abs_fut) == 0.0
            assert fde(pred, sample.abs_fut) == 0.0

    def test_linear_exact_on_linear_tracks(self):
        t = np.arange(8.0)
        obs = np.stack([0.5 * t + 1.0, -0.25 * t + 2.0], axis=-1)[None]
        pred = linear_predict(obs, 4)
        t_fut = np.arange(8.0, 12.0)
        expected = np.stack([0.5 * t_fut + 1.0, -0.25 * t_fut + 2.0], axis=-1)[None]
        np.testing.assert_allclose(pred, expected, atol=1e-9)

    def test_linear_two_points_reduces_to_cvm(self):
        rng = np.random.default_rng(7)
        obs = rng.uniform(-5, 5, (4, 2, 2))
        np.testing.assert_array_equal(linear_predict(obs, 6), cvm_predict(obs, 6))

    def test_linear_averages_symmetric_zigzag(self):
        # +,-,-,+ oscillation around a straight line: it sums to zero and is
        # orthogonal to centered time, so the least-squares fit is the line.
        t = np.arange(8.0)
        zig = np.tile([0.5, -0.5, -0.5, 0.5], 2)
        assert abs(zig.sum()) < 1e-12 and abs(((t - t.mean()) * zig).sum()) < 1e-12
        obs = np.stack([t, zig], axis=-1)[None]
        pred = linear_predict(obs, 4)
        np.testing.assert_allclose(pred[0, :, 0], np.arange(8.0, 12.0), atol=1e-9)
        np.testing.assert_allclose(pred[0, :, 1], 0.0, atol=1e-9)


class TestEvaluateModel:
    def test_reports_have_expected_fields(self):
        scene = wandering_crowd_scene(n_peds=4, n_frames=14, seed=8)
        samples = window_sequences(scene, t_obs=6, t_pred=5, stride=2)
        params = init_params(t_obs=6, t_pred=5, f_hidden=8, rng=np.random.default_rng(0))
        report = evaluate_model(params, samples, mode="best_of_n", bon_n=5,
                                rng=np.random.default_rng(1))
        assert report.ade >= 0 and report.fde >= 0
        assert report.n_samples_used == len(samples)
        assert report.bon_n == 5
        rows = report.rows()
        assert rows[-1]["scene"] == "ALL"
        assert {"scene", "mode", "ade", "fde", "n_samples"} <= set(rows[0])

    def test_most_likely_never_beats_bon20_materially(self):
        scene = wandering_crowd_scene(n_peds=4, n_frames=16, seed=9)
        samples = window_sequences(scene, t_obs=6, t_pred=5, stride=2)
        params = init_params(t_obs=6, t_pred=5, f_hidden=8, rng=np.random.default_rng(2))
        ml = evaluate_model(params, samples, mode="most_likely")
        bon = evaluate_model(params, samples, mode="best_of_n", bon_n=20,
                             rng=np.random.default_rng(3))
        assert bon.ade <= ml.ade + 0.05

    def test_baseline_report(self):
        scene = constant_velocity_scene(n_peds=3, n_frames=22, seed=2)
        samples = window_sequences(scene, t_obs=8, t_pred=12)
        report = evaluate_baseline(cvm_predict, samples)
        assert report.ade == 0.0 and report.fde == 0.0


class TestBenchmark:
    def test_protocol_fields_and_ordering(self):
        scene = wandering_crowd_scene(n_peds=5, n_frames=22, seed=10)
        samples = window_sequences(scene, t_obs=8, t_pred=12, stride=4)
        prob = init_params(rng=np.random.default_rng(0))
        det = init_params(mode="deterministic", rng=np.random.default_rng(0))
        rep_prob = benchmark_inference(prob, samples, n_samples=20, repetitions=15)
        rep_det = benchmark_inference(det, samples, n_samples=20, repetitions=15)
        for rep in (rep_prob, rep_det):
            assert rep.forward_ms >= 0.0 and rep.graph_build_ms >= 0.0
            assert 6_000 <= rep.param_count <= 9_000
        # a single deterministic forward beats forward + 20 draws
        assert rep_det.forward_ms < rep_prob.forward_ms
        assert rep_prob.n_samples == 20 and rep_det.n_samples == 1

    def test_median_reasonably_stable(self):
        scene = wandering_crowd_scene(n_peds=4, n_frames=22, seed=11)
        samples = window_sequences(scene, t_obs=8, t_pred=12, stride=4)
        det = init_params(mode="deterministic", rng=np.random.default_rng(0))
        a = benchmark_inference(det, samples, repetitions=30)
        b = benchmark_inference(det, samples, repetitions=60)
        assert abs(a.forward_ms - b.forward_ms) / max(a.forward_ms, b.forward_ms) < 0.5
