"""Optimizer updates, the training loop's determinism and accumulation
semantics, checkpoint fidelity, and resume equivalence."""

import numpy as np
import pytest

from crowdgcn import autodiff as ad
from crowdgcn.data import window_sequences
from crowdgcn.errors import CheckpointError, NumericError, TrainingDiverged
from crowdgcn.evaluation import ade
from crowdgcn.graph import build_graph_sequence
from crowdgcn.model import init_params, relative_to_absolute, predict_deterministic
from crowdgcn.synthetic import wandering_crowd_scene
from crowdgcn.training import (
    TrainConfig,
    load_checkpoint,
    make_optimizer,
    optimizer_step,
    sample_loss,
    save_checkpoint,
    train,
)


def crowd_samples(n_scenes=2, t_obs=4, t_pred=6, seed=0, n_peds=3, n_frames=12):
    samples = []
    for k in range(n_scenes):
        scene = wandering_crowd_scene(n_peds=n_peds, n_frames=n_frames, seed=seed + k,
                                      scene_id=f"scene{k}")
        samples.extend(window_sequences(scene, t_obs=t_obs, t_pred=t_pred, stride=3))
    return samples


def small_config(**overrides):
    base = dict(mode="deterministic", epochs=3, batch_size=4, seed=1,
                t_obs=4, t_pred=6, f_hidden=6, k_residual=2)
    base.update(overrides)
    return TrainConfig(**base)


def params_equal(a, b):
    return all(np.array_equal(ta.data, tb.data)
               for (_, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors()))


class TestOptimizerStep:
    def test_sgd_definition(self):
        params = init_params(t_obs=4, t_pred=6, f_hidden=4, rng=np.random.default_rng(0))
        params.stgcnn_slope.data = np.float64(1.0)
        state = make_optimizer("sgd", 0.01, params)
        grads = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
        grads["stgcnn_slope"] = np.float64(2.0)
        optimizer_step(params, grads, state)
        assert params.stgcnn_slope.data == pytest.approx(0.98, abs=1e-15)

    def test_adam_first_step_magnitude_is_learning_rate(self):
        params = init_params(t_obs=4, t_pred=6, f_hidden=4, rng=np.random.default_rng(0))
        before = {name: t.data.copy() for name, t in params.named_tensors()}
        state = make_optimizer("adam", 0.0015, params)
        rng = np.random.default_rng(1)
        grads = {name: rng.uniform(0.5, 2.0, size=t.shape) * rng.choice([-1.0, 1.0], size=t.shape)
                 for name, t in params.named_tensors()}
        optimizer_step(params, grads, state)
        for name, t in params.named_tensors():
            delta = t.data - before[name]
            np.testing.assert_allclose(np.abs(delta), 0.0015, rtol=1e-6)
            assert np.all(np.sign(delta) == -np.sign(grads[name]))

    def test_zero_gradient_leaves_params_unchanged(self):
        for kind in ("sgd", "adam"):
            params = init_params(t_obs=4, t_pred=6, f_hidden=4, rng=np.random.default_rng(2))
            before = {name: t.data.copy() for name, t in params.named_tensors()}
            state = make_optimizer(kind, 0.01, params)
            grads = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
            optimizer_step(params, grads, state)
            for name, t in params.named_tensors():
                np.testing.assert_array_equal(t.data, before[name])

    def test_nan_gradient_aborts_without_partial_update(self):
        params = init_params(t_obs=4, t_pred=6, f_hidden=4, rng=np.random.default_rng(3))
        before = {name: t.data.copy() for name, t in params.named_tensors()}
        state = make_optimizer("sgd", 0.01, params)
        grads = {name: np.ones_like(t.data) for name, t in params.named_tensors()}
        grads["head_weight"] = np.full_like(params.head_weight.data, np.nan)
        with pytest.raises(NumericError, match="head_weight"):
            optimizer_step(params, grads, state)
        for name, t in params.named_tensors():
            np.testing.assert_array_equal(t.data, before[name])


class TestTrainLoop:
    def test_zero_epochs_returns_initialization(self):
        samples = crowd_samples()
        config = small_config(epochs=0)
        result = train(samples, config)
        fresh = init_params(mode=config.mode, t_obs=4, t_pred=6, f_hidden=6,
                            k_residual=2, rng=np.random.default_rng(config.seed))
        assert params_equal(result.params, fresh)

    def test_same_seed_is_bitwise_deterministic(self):
        samples = crowd_samples()
        a = train(samples, small_config())
        b = train(samples, small_config())
        assert params_equal(a.params, b.params)
        assert a.log == b.log

    def test_log_records_loss_and_validation(self):
        samples = crowd_samples(n_scenes=3)
        result = train(samples[:2], small_config(epochs=2), val_samples=samples[2:])
        assert len(result.log) == 2
        for record in result.log:
            assert {"epoch", "train_loss", "val_ade", "val_fde"} <= set(record)

    def test_gradient_accumulation_matches_joint_sum(self):
        samples = crowd_samples()[:3]
        config = small_config()
        params = init_params(mode=config.mode, t_obs=4, t_pred=6, f_hidden=6,
                             k_residual=2, rng=np.random.default_rng(9))
        graphs = [build_graph_sequence(s) for s in samples]

        params.zero_grads()
        for s, g in zip(samples, graphs):
            sample_loss(s, g, params, config).total.backward()
        accumulated = {name: t.grad.copy() for name, t in params.named_tensors()}

        params.zero_grads()
        total = sample_loss(samples[0], graphs[0], params, config).total
        for s, g in zip(samples[1:], graphs[1:]):
            total = ad.add(total, sample_loss(s, g, params, config).total)
        total.backward()
        for name, t in params.named_tensors():
            np.testing.assert_allclose(accumulated[name], t.grad, atol=1e-10)

    def test_divergence_retains_last_good_state(self):
        samples = crowd_samples()
        config = small_config(mode="probabilistic", optimizer="sgd",
                              learning_rate=1e9, epochs=50, batch_size=2)
        with pytest.raises(TrainingDiverged) as excinfo:
            train(samples, config)
        retained = excinfo.value.params
        assert retained is not None
        for _, t in retained.named_tensors():
            assert np.isfinite(t.data).all()

    def test_overfit_probe_reaches_small_train_ade(self):
        samples = crowd_samples(n_scenes=1, n_peds=3, n_frames=10)
        assert samples
        config = small_config(epochs=600, batch_size=len(samples), seed=3)
        result = train(samples, config)
        graphs = [build_graph_sequence(s) for s in samples]
        errors = []
        for s, g in zip(samples, graphs):
            pred = relative_to_absolute(predict_deterministic(g, result.params).data,
                                        s.abs_obs[:, -1, :])
            errors.append(ade(pred, s.abs_fut))
        assert float(np.mean(errors)) < 0.05

    def test_one_sample_probabilistic_overfit_recovers_truth(self):
        # the mean trajectory of a model fit to a single window lands on
        # that window's future
        from crowdgcn.evaluation import most_likely
        from crowdgcn.model import predict_probabilistic
        scene = wandering_crowd_scene(n_peds=3, n_frames=11, seed=21, turn=0.04)
        sample = window_sequences(scene, t_obs=4, t_pred=6)[0]
        config = TrainConfig(mode="probabilistic", epochs=1500, batch_size=1,
                             optimizer="adam", learning_rate=0.004, lr_decay=0.998,
                             seed=2, t_obs=4, t_pred=6, f_hidden=16)
        result = train([sample], config)
        field = predict_probabilistic(build_graph_sequence(sample), result.params)
        pred = most_likely(field, sample.abs_obs[:, -1, :])
        assert ade(pred, sample.abs_fut) < 0.05

    def test_smoothed_loss_decreases_on_overfit_probe(self):
        samples = crowd_samples(n_scenes=1, n_peds=3, n_frames=10)
        config = small_config(epochs=100, batch_size=len(samples), seed=4)
        result = train(samples, config)
        losses = np.array([r["train_loss"] for r in result.log])
        smooth = np.convolve(losses, np.ones(10) / 10.0, mode="valid")
        assert smooth[-1] < smooth[0]


class TestCheckpoints:
    def test_round_trip_preserves_everything_bitwise(self, tmp_path):
        samples = crowd_samples()
        config = small_config(optimizer="adam")
        result = train(samples, config)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, result.params, result.optimizer_state, config,
                        result.rng_state, epoch=result.epoch)
        params, opt_state, config2, rng_state, epoch = load_checkpoint(path)
        assert params_equal(params, result.params)
        assert opt_state.step_count == result.optimizer_state.step_count
        for name in result.optimizer_state.m:
            np.testing.assert_array_equal(opt_state.m[name], result.optimizer_state.m[name])
            np.testing.assert_array_equal(opt_state.v[name], result.optimizer_state.v[name])
        assert config2 == config
        assert rng_state == result.rng_state
        assert epoch == result.epoch

    def test_save_load_save_is_byte_identical(self, tmp_path):
        samples = crowd_samples()
        config = small_config()
        result = train(samples, config)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, result.params, result.optimizer_state, config,
                        result.rng_state, epoch=result.epoch)
        save_checkpoint(p2, *load_checkpoint(p1)[:2], config2 := load_checkpoint(p1)[2],
                        load_checkpoint(p1)[3], load_checkpoint(p1)[4])
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_header_raises_clean_error(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"CGCNCKPT" + (1).to_bytes(4, "little") + (999).to_bytes(8, "little") + b"junk")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "not.ckpt"
        path.write_bytes(b"NOTACKPT" + bytes(64))
        with pytest.raises(CheckpointError, match="not a crowdgcn checkpoint"):
            load_checkpoint(path)

    def test_truncated_payload_rejected(self, tmp_path):
        samples = crowd_samples()
        config = small_config()
        result = train(samples, config)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, result.params, result.optimizer_state, config,
                        result.rng_state, epoch=result.epoch)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(CheckpointError, match="payload"):
            load_checkpoint(path)

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        samples = crowd_samples(n_scenes=3)
        full = train(samples, small_config(epochs=6, optimizer="adam"))

        config = small_config(epochs=3, optimizer="adam")
        half = train(samples, config)
        path = tmp_path / "half.ckpt"
        save_checkpoint(path, half.params, half.optimizer_state, config,
                        half.rng_state, epoch=half.epoch)

        params, opt_state, loaded_config, rng_state, epoch = load_checkpoint(path)
        resumed_config = small_config(epochs=6, optimizer="adam")
        resumed = train(samples, resumed_config, params=params, optimizer_state=opt_state,
                        rng_state=rng_state, start_epoch=epoch)
        assert params_equal(resumed.params, full.params)
