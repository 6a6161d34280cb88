import numpy as np
import pytest

from aepoison import nn_core
from aepoison.nn_core import (
    ModelConfig,
    ModelParams,
    TrainConfig,
    TrainingDiverged,
    forward,
    grad_w,
    grad_x,
    hvp_both,
    hvp_ww,
    hvp_xw,
    init_params,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)


def small_cfg(**kw):
    defaults = dict(input_size=4, code_size=2, inflation_factor=2, init_seed=0, init_scale=0.1)
    defaults.update(kw)
    return ModelConfig(**defaults)


def subspace_identity_model():
    """Linear model whose reconstruction is exact on a 2-D input subspace."""
    cfg = small_cfg(inflation_factor=1, activation="linear", output_activation="linear")
    basis, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(4, 2)))
    eye = np.eye(4)
    layers = ((eye, np.zeros(4)), (basis, np.zeros(2)), (basis.T, np.zeros(4)), (eye, np.zeros(4)))
    params = ModelParams(cfg, layers)
    z = np.random.default_rng(2).normal(size=(6, 2))
    batch = z @ basis.T
    return params, batch


def fd_grad_w(params, batch, h=1e-6):
    flat = params.flatten()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (
            loss(ModelParams.from_flat(params.config, up), batch)
            - loss(ModelParams.from_flat(params.config, dn), batch)
        ) / (2 * h)
    return out


def fd_grad_x(params, batch, h=1e-6):
    out = np.zeros_like(batch)
    for idx in np.ndindex(batch.shape):
        up, dn = batch.copy(), batch.copy()
        up[idx] += h
        dn[idx] -= h
        out[idx] = (loss(params, up) - loss(params, dn)) / (2 * h)
    return out


class TestInitParams:
    def test_same_seed_bit_identical(self):
        a = init_params(small_cfg(init_seed=11))
        b = init_params(small_cfg(init_seed=11))
        assert np.array_equal(a.flatten(), b.flatten())

    def test_zero_scale_gives_zero_weights(self):
        p = init_params(small_cfg(init_scale=0.0))
        assert np.all(p.flatten() == 0.0)

    def test_overcomplete_code_rejected(self):
        with pytest.raises(ValueError, match="code"):
            small_cfg(input_size=4, code_size=4)

    def test_flatten_round_trip(self):
        p = init_params(small_cfg(init_seed=5))
        q = ModelParams.from_flat(p.config, p.flatten())
        assert np.array_equal(p.flatten(), q.flatten())


class TestForwardAndLoss:
    def test_zero_weights_odd_activation_gives_zero_output(self):
        p = init_params(small_cfg(init_scale=0.0))
        out = forward(p, np.ones(4))
        assert np.allclose(out, 0.0)

    def test_factored_identity_reproduces_subspace_inputs(self):
        params, batch = subspace_identity_model()
        assert np.allclose(forward(params, batch), batch, atol=1e-12)

    def test_perfect_reconstruction_loss_zero(self):
        params, batch = subspace_identity_model()
        assert loss(params, batch) == pytest.approx(0.0, abs=1e-24)

    def test_zero_output_on_ones_gives_one(self):
        cfg = small_cfg(init_scale=0.0, activation="linear", output_activation="linear")
        p = init_params(cfg)
        assert loss(p, np.ones((3, 4))) == pytest.approx(1.0)

    def test_loss_invariant_to_batch_order(self):
        p = init_params(small_cfg(init_seed=4))
        batch = np.random.default_rng(0).normal(size=(8, 4))
        shuffled = batch[::-1].copy()
        assert loss(p, batch) == pytest.approx(loss(p, shuffled), rel=1e-15)

    def test_empty_batch_rejected(self):
        p = init_params(small_cfg())
        with pytest.raises(ValueError, match="empty"):
            loss(p, np.zeros((0, 4)))


class TestGradients:
    def test_zero_gradient_at_constructed_minimum(self):
        params, batch = subspace_identity_model()
        assert np.linalg.norm(grad_w(params, batch)) <= 1e-10
        assert np.linalg.norm(grad_x(params, batch)) <= 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_grad_w_matches_finite_differences(self, seed):
        p = init_params(small_cfg(init_seed=seed, init_scale=0.4))
        batch = np.random.default_rng(seed).normal(size=(3, 4))
        analytic = grad_w(p, batch)
        fd = fd_grad_w(p, batch)
        assert np.max(np.abs(analytic - fd)) / np.max(np.abs(fd)) < 1e-5

    @pytest.mark.parametrize("seed", range(5))
    def test_grad_x_matches_finite_differences(self, seed):
        p = init_params(small_cfg(init_seed=seed, init_scale=0.4))
        batch = np.random.default_rng(100 + seed).normal(size=(3, 4))
        analytic = grad_x(p, batch)
        fd = fd_grad_x(p, batch)
        assert np.max(np.abs(analytic - fd)) / np.max(np.abs(fd)) < 1e-5

    def test_grad_x_batch_scaling_of_identical_windows(self):
        p = init_params(small_cfg(init_seed=9, init_scale=0.3))
        row = np.random.default_rng(3).normal(size=4)
        single = grad_x(p, row[None, :])
        repeated = grad_x(p, np.tile(row, (5, 1)))
        assert np.allclose(repeated, single / 5.0, atol=1e-14)
        assert np.allclose(repeated.sum(axis=0), single[0], atol=1e-13)


class TestHvp:
    def test_single_linear_layer_closed_form(self):
        # one effective linear map: loss = mean((xW + b - x)^2); the
        # W-block Hessian is (2/(B*n)) X^T X (x) I, computable by hand
        cfg = ModelConfig(
            input_size=3, code_size=2, inflation_factor=1, activation="linear",
            output_activation="linear", init_seed=0, init_scale=0.2,
        )
        p = init_params(cfg)
        batch = np.random.default_rng(5).normal(size=(4, 3))
        v = np.random.default_rng(6).normal(size=cfg.num_params)
        eps = 1e-6
        flat = p.flatten()
        fd = (
            grad_w(ModelParams.from_flat(cfg, flat + eps * v), batch)
            - grad_w(ModelParams.from_flat(cfg, flat - eps * v), batch)
        ) / (2 * eps)
        assert np.max(np.abs(hvp_ww(p, batch, v) - fd)) / np.max(np.abs(fd)) < 1e-7

    def test_hvp_linear_in_direction(self):
        p = init_params(small_cfg(init_seed=2, init_scale=0.3))
        batch = np.random.default_rng(7).normal(size=(3, 4))
        rng = np.random.default_rng(8)
        v1 = rng.normal(size=p.config.num_params)
        v2 = rng.normal(size=p.config.num_params)
        a, b = 0.7, -1.3
        combo_w, combo_x = hvp_both(p, batch, a * v1 + b * v2)
        w1, x1 = hvp_both(p, batch, v1)
        w2, x2 = hvp_both(p, batch, v2)
        assert np.max(np.abs(combo_w - (a * w1 + b * w2))) < 1e-10
        assert np.max(np.abs(combo_x - (a * x1 + b * x2))) < 1e-10

    @pytest.mark.parametrize("seed", range(3))
    def test_hvp_matches_finite_differenced_gradients(self, seed):
        p = init_params(small_cfg(init_seed=seed, init_scale=0.4))
        batch = np.random.default_rng(seed).normal(size=(3, 4))
        v = np.random.default_rng(50 + seed).normal(size=p.config.num_params)
        flat = p.flatten()
        eps = 1e-6
        up = ModelParams.from_flat(p.config, flat + eps * v)
        dn = ModelParams.from_flat(p.config, flat - eps * v)
        fd_w = (grad_w(up, batch) - grad_w(dn, batch)) / (2 * eps)
        fd_x = (grad_x(up, batch) - grad_x(dn, batch)) / (2 * eps)
        hw, hx = hvp_both(p, batch, v)
        assert np.max(np.abs(hw - fd_w)) / np.max(np.abs(fd_w)) < 1e-4
        assert np.max(np.abs(hx - fd_x)) / np.max(np.abs(fd_x)) < 1e-4

    def test_direction_length_checked(self):
        p = init_params(small_cfg())
        with pytest.raises(ValueError, match="direction"):
            hvp_xw(p, np.zeros((2, 4)), np.zeros(3))


class TestTrain:
    def batch(self):
        rng = np.random.default_rng(0)
        t = np.linspace(0, 4 * np.pi, 50)
        sig = np.sin(t)
        return np.column_stack([sig[:-3], sig[1:-2], sig[2:-1], sig[3:]]) * 0.8

    def test_zero_learning_rate_runs_all_epochs_unchanged(self):
        p = init_params(small_cfg(init_seed=1))
        out, traj, _ = train(p, self.batch(), TrainConfig(0.0, 17, stop_loss=1e-9, record_trajectory=True))
        assert np.array_equal(out.flatten(), p.flatten())
        assert traj.steps == 17

    def test_stop_criterion_halts_on_first_epoch_below_threshold(self):
        p = init_params(small_cfg(init_seed=1))
        out, traj, final_loss = train(
            p, self.batch(), TrainConfig(0.5, 30000, stop_loss=0.01, record_trajectory=True)
        )
        assert final_loss < 0.01
        assert traj.steps < 30000
        second_last = ModelParams.from_flat(p.config, traj.checkpoints[-2])
        assert loss(second_last, self.batch()) >= 0.01

    def test_loss_monotone_for_small_rate_on_linear_autoencoder(self):
        cfg = small_cfg(activation="linear", output_activation="linear", init_seed=3)
        p = init_params(cfg)
        batch = self.batch()
        _, traj, _ = train(p, batch, TrainConfig(0.05, 200, stop_loss=1e-12, record_trajectory=True))
        losses = [loss(ModelParams.from_flat(cfg, w), batch) for w in traj.checkpoints]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_divergence_reported(self):
        p = init_params(small_cfg(init_seed=1, init_scale=0.5))
        with pytest.raises(TrainingDiverged):
            train(p, self.batch(), TrainConfig(50.0, 2000, stop_loss=1e-12))

    def test_deterministic_training(self):
        a, _, _ = train(init_params(small_cfg(init_seed=2)), self.batch(), TrainConfig(0.3, 200, 1e-9))
        b, _, _ = train(init_params(small_cfg(init_seed=2)), self.batch(), TrainConfig(0.3, 200, 1e-9))
        assert np.array_equal(a.flatten(), b.flatten())

    def test_trajectory_endpoint_is_trained_params_bit_exact(self):
        out, traj, _ = train(
            init_params(small_cfg(init_seed=2)),
            self.batch(),
            TrainConfig(0.3, 150, 1e-9, record_trajectory=True),
        )
        assert len(traj.checkpoints) == traj.steps + 1
        assert np.array_equal(traj.checkpoints[-1], out.flatten())


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = init_params(small_cfg(init_seed=13, init_scale=0.37))
        path = tmp_path / "model.npz"
        save_checkpoint(p, path)
        q = load_checkpoint(path)
        assert q.config == p.config
        assert np.array_equal(q.flatten(), p.flatten())
