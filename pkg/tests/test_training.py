import numpy as np
import numpy.testing as npt
import pytest

from edgan.autodiff import Graph, Param
from edgan.data import DatasetConfig, prepare, synthesize
from edgan.errors import ConfigError, ContractError, NumericAbort
from edgan.models import Discriminator, GeneratorConfig
from edgan.rng import RngState
from edgan.training import (
    EpochRecord,
    TrainConfig,
    Trainer,
    gradient_penalty,
    loss_discriminator,
    loss_generator_edgan,
    loss_wgan,
    mse_loss,
    validate,
)

from conftest import tiny_disc_config, tiny_gen_config


def tensors(*arrays, requires_grad=False):
    g = Graph()
    return (g, *[g.tensor(a, requires_grad=requires_grad) for a in arrays])


def small_trainer(dataset, variant="edgan", **overrides):
    overrides.setdefault("epochs", 2)
    overrides.setdefault("batch_size", 16)
    overrides.setdefault("seed", 1)
    cfg = TrainConfig.for_variant(variant, **overrides)
    noise = cfg.noise_dim if variant == "basic_gan" else 0
    return Trainer(dataset, cfg, tiny_gen_config(dataset, noise_dim=noise), tiny_disc_config(
        dataset, sigmoid_output=variant != "wgan_gp"
    ))


class TestLossAnchors:
    def test_generator_loss_at_equilibrium(self):
        g, d_fake = tensors(np.full(8, 0.5))
        y = np.zeros((8, 1))
        g2 = Graph()
        loss = loss_generator_edgan(g2.tensor(np.full(8, 0.5)), g2.tensor(y), y, mu=0.0)
        assert abs(loss.item() - np.log(2.0)) < 1e-12

    def test_generator_loss_perfect_fool(self):
        g = Graph()
        y = np.zeros((4, 1))
        loss = loss_generator_edgan(g.tensor(np.full(4, 1.0 - 1e-9)), g.tensor(y), y, mu=0.0)
        assert 0.0 < loss.item() < 1e-6

    def test_discriminator_loss_at_equilibrium(self):
        g, d_real, d_fake = tensors(np.full(8, 0.5), np.full(8, 0.5))
        assert abs(loss_discriminator(d_real, d_fake).item() - 2.0 * np.log(2.0)) < 1e-12

    def test_discriminator_loss_perfect_limit(self):
        g, d_real, d_fake = tensors(np.full(4, 1.0 - 1e-9), np.full(4, 1e-9))
        loss = loss_discriminator(d_real, d_fake).item()
        assert 0.0 < loss < 1e-6

    def test_generator_loss_direct_recomputation(self):
        rng = np.random.default_rng(0)
        probs = rng.uniform(0.05, 0.95, 16)
        y_hat = rng.standard_normal((16, 2))
        y = rng.standard_normal((16, 2))
        g = Graph()
        loss = loss_generator_edgan(g.tensor(probs), g.tensor(y_hat), y, mu=1.0).item()
        expected = -np.mean(np.log(probs)) + np.mean((y_hat - y) ** 2)
        assert abs(loss - expected) < 1e-12

    def test_discriminator_loss_direct_recomputation(self):
        rng = np.random.default_rng(1)
        real = rng.uniform(0.05, 0.95, 16)
        fake = rng.uniform(0.05, 0.95, 16)
        g, r, f = tensors(real, fake)
        expected = -np.mean(np.log(real)) - np.mean(np.log(1.0 - fake))
        assert abs(loss_discriminator(r, f).item() - expected) < 1e-12

    def test_wgan_symmetry_and_arithmetic(self):
        g, real, fake = tensors(np.array([1.0, 3.0]), np.array([1.0, 3.0]))
        critic, gen = loss_wgan(real, fake)
        assert critic.item() == 0.0
        assert gen.item() == -2.0

    def test_wgan_direct_recomputation(self):
        rng = np.random.default_rng(2)
        real = rng.standard_normal(12)
        fake = rng.standard_normal(12)
        g, r, f = tensors(real, fake)
        critic, gen = loss_wgan(r, f)
        assert abs(critic.item() - (fake.mean() - real.mean())) < 1e-12
        assert abs(gen.item() + fake.mean()) < 1e-12

    def test_empty_batch_contract(self):
        g = Graph()
        empty = g.tensor(np.zeros(0))
        with pytest.raises(ContractError):
            loss_discriminator(empty, empty)
        with pytest.raises(ContractError):
            loss_generator_edgan(empty, empty, np.zeros(0), 0.0)

    def test_mu_zero_recovers_pure_adversarial(self):
        rng = np.random.default_rng(3)
        probs = rng.uniform(0.1, 0.9, 8)
        y_hat = rng.standard_normal((8, 1))
        g = Graph()
        loss = loss_generator_edgan(g.tensor(probs), g.tensor(y_hat), y_hat + 9.0, mu=0.0).item()
        assert abs(loss - (-np.mean(np.log(probs)))) < 1e-12


class TestGradientPenalty:
    @staticmethod
    def linear_critic(w):
        def critic(graph, x):
            batch = x.values.shape[0]
            flat = x.reshape((batch, w.size))
            return (flat @ graph.tensor(w.reshape(-1, 1))).reshape((batch,))

        return critic

    def test_unit_norm_linear_critic_zero_penalty(self):
        rng = np.random.default_rng(4)
        w = np.zeros(6)
        w[2] = 1.0  # exactly unit norm
        real = rng.standard_normal((5, 2, 3))
        fake = rng.standard_normal((5, 2, 3))
        g = Graph()
        pen = gradient_penalty(self.linear_critic(w), real, fake, "interpolated", 10.0, RngState(0), g)
        assert pen.item() == 0.0

    def test_unit_norm_random_direction_near_zero(self):
        rng = np.random.default_rng(40)
        w = rng.standard_normal(6)
        w /= np.linalg.norm(w)
        real = rng.standard_normal((5, 2, 3))
        fake = rng.standard_normal((5, 2, 3))
        g = Graph()
        pen = gradient_penalty(self.linear_critic(w), real, fake, "interpolated", 10.0, RngState(0), g)
        assert abs(pen.item()) < 1e-12

    def test_scaled_linear_critic_analytic_penalty(self):
        rng = np.random.default_rng(5)
        w = np.zeros(6)
        w[1] = 2.0  # gradient norm exactly 2
        real = rng.standard_normal((4, 6))
        fake = rng.standard_normal((4, 6))
        g = Graph()
        pen = gradient_penalty(self.linear_critic(w), real, fake, "interpolated", 10.0, RngState(1), g)
        assert pen.item() == 10.0

    def test_around_real_mode_runs_and_matches_form(self):
        rng = np.random.default_rng(6)
        w = rng.standard_normal(4)
        w = 3.0 * w / np.linalg.norm(w)
        real = rng.standard_normal((6, 4))
        g = Graph()
        pen = gradient_penalty(self.linear_critic(w), real, None, "around_real", 5.0, RngState(2), g)
        assert abs(pen.item() - 5.0 * (3.0 - 1.0) ** 2) < 1e-9

    def test_penalty_value_matches_numeric_gradient_oracle(self, sine_dataset):
        # small random critic: compare against a from-scratch finite-difference
        # estimate of the input-gradient norms
        disc = Discriminator(tiny_disc_config(sine_dataset), RngState(3))
        rng = np.random.default_rng(7)
        shape = (3, disc.config.in_channels, disc.config.seq_len)
        real = rng.standard_normal(shape)
        fake = rng.standard_normal(shape)

        def critic(graph, x):
            return disc.score(graph, x)

        seed = RngState(9)
        g = Graph()
        pen = gradient_penalty(critic, real, fake, "interpolated", 10.0, seed, g).item()

        # reproduce the same interpolation points, then estimate norms entrywise
        u = RngState(9).stream("penalty").random((3, 1, 1))
        x_hat = u * real + (1.0 - u) * fake
        h = 1e-5
        norms = []
        for b in range(3):
            grads = np.zeros(x_hat[b].size)
            flat = x_hat[b].reshape(-1)
            for j in range(flat.size):
                keep = flat[j]
                for sign, slot in ((1.0, 0), (-1.0, 1)):
                    flat[j] = keep + sign * h
                    g2 = Graph(mode="eval")
                    val = disc.score(g2, g2.tensor(x_hat[b][None])).values[0]
                    grads[j] += sign * val
                    flat[j] = keep
            norms.append(np.linalg.norm(grads / (2 * h)))
        expected = 10.0 * np.mean((np.array(norms) - 1.0) ** 2)
        assert abs(pen - expected) < 1e-3

    def test_parameter_gradient_approximation_vs_exact(self):
        # critic(x) = tanh(x . w): exact d(penalty)/dw available by finite
        # differences over w of the exactly-computed penalty value
        rng = np.random.default_rng(8)
        w = Param("w", rng.standard_normal(4))
        real = rng.standard_normal((6, 4))
        fake = rng.standard_normal((6, 4))

        def critic(graph, x):
            wt = graph.watch(w).reshape((4, 1))
            return (x @ wt).tanh().reshape((x.values.shape[0],))

        def exact_penalty(w_values):
            # closed form: grad_x tanh(x.w) = (1 - tanh^2)(w); norm = (1-t^2)|w|
            u = RngState(11).stream("penalty").random((6, 1))
            x_hat = u * real + (1.0 - u) * fake
            t = np.tanh(x_hat @ w_values)
            norms = (1.0 - t**2) * np.linalg.norm(w_values)
            return 10.0 * np.mean((norms - 1.0) ** 2)

        g = Graph()
        pen = gradient_penalty(critic, real, fake, "interpolated", 10.0, RngState(11), g, frozen=())
        g.backward(pen)
        approx = g.grad(w)

        h = 1e-6
        exact = np.zeros(4)
        for j in range(4):
            up = w.data.copy()
            up[j] += h
            down = w.data.copy()
            down[j] -= h
            exact[j] = (exact_penalty(up) - exact_penalty(down)) / (2 * h)
        npt.assert_allclose(approx, exact, rtol=1e-3, atol=1e-6)

    def test_negative_weight_rejected(self):
        g = Graph()
        with pytest.raises(ConfigError):
            gradient_penalty(lambda gg, x: x.sum(), np.ones((2, 2)), np.ones((2, 2)), "interpolated", -1.0, RngState(0), g)

    def test_unknown_mode(self):
        g = Graph()
        with pytest.raises(ConfigError):
            gradient_penalty(lambda gg, x: x.sum(), np.ones((2, 2)), None, "sideways", 1.0, RngState(0), g)


class TestValidate:
    def test_perfect_prediction_zero(self, sine_dataset):
        trainer = small_trainer(sine_dataset)
        split = sine_dataset.train

        class Oracle:
            config = trainer.gen_cfg

            def predict(self, split, index=None):
                return split.target.copy() if index is None else split.target[index].copy()

        assert validate(Oracle(), split) == 0.0

    def test_hand_computed_value(self):
        class Stub:
            def predict(self, split, index=None):
                return np.ones((1, 2))

        class Split:
            target = np.zeros((1, 2))

            def __len__(self):
                return 1

        assert validate(Stub(), Split()) == 1.0

    def test_matches_brute_force(self, sine_dataset):
        trainer = small_trainer(sine_dataset)
        value = validate(trainer.generator, sine_dataset.train, trainer.val_index)
        predictions = trainer.generator.predict(sine_dataset.train, trainer.val_index)
        targets = sine_dataset.train.target[trainer.val_index]
        brute = 0.0
        for i in range(predictions.shape[0]):
            for t in range(predictions.shape[1]):
                brute += (predictions[i, t] - targets[i, t]) ** 2
        brute /= predictions.size
        assert abs(value - brute) < 1e-12

    def test_empty_set_contract(self, sine_dataset):
        trainer = small_trainer(sine_dataset)
        with pytest.raises(ContractError):
            validate(trainer.generator, sine_dataset.train, np.array([], dtype=np.int64))


class TestTrainStep:
    def test_zero_generator_lr_freezes_generator(self, sine_dataset):
        trainer = small_trainer(sine_dataset, lr_g=0.0)
        before = [p.data.copy() for p in trainer.generator.params()]
        trainer.train_step(trainer.fit_index[:16])
        for p, b in zip(trainer.generator.params(), before):
            npt.assert_array_equal(p.data, b)

    def test_zero_discriminator_lr_freezes_discriminator(self, sine_dataset):
        trainer = small_trainer(sine_dataset, lr_d=0.0)
        before = [p.data.copy() for p in trainer.discriminator.params()]
        trainer.train_step(trainer.fit_index[:16])
        for p, b in zip(trainer.discriminator.params(), before):
            npt.assert_array_equal(p.data, b)

    def test_generator_loss_descends_on_fixed_batch(self, sine_dataset):
        # frozen, well-trained discriminator; plain gradient steps on G
        trainer = small_trainer(sine_dataset, mu=1.0)
        index = trainer.fit_index[:16]
        for _ in range(5):  # give D a head start, then freeze it
            trainer.train_step(index)
        look, fut, stat, target = trainer._batch_arrays(index)

        from edgan import autodiff as ad
        from edgan.models import assemble_disc_input

        losses = []
        lr = 1e-3
        for _ in range(50):
            g = Graph(mode="eval")  # no dropout: smooth objective
            for p in trainer.discriminator.params():
                g.watch(p, trainable=False)
            y_hat = trainer.generator.forward(g, look, fut, stat)
            fake = assemble_disc_input(g, look, fut, stat, y_hat, trainer.gen_cfg.target_column)
            d_fake = trainer.discriminator.forward(g, fake)
            loss = loss_generator_edgan(d_fake, y_hat, target, mu=1.0)
            losses.append(loss.item())
            g.backward(loss)
            for p in trainer.generator.params():
                p.data -= lr * g.grad(p)
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_steps_run_for_every_variant(self, sine_dataset):
        for variant in ("edgan", "basic_gan", "wgan_gp", "dragan"):
            trainer = small_trainer(sine_dataset, variant=variant)
            out = trainer.train_step(trainer.fit_index[:16])
            assert np.isfinite(out["jg"]) and np.isfinite(out["jd"])
            if variant in ("wgan_gp", "dragan"):
                assert "penalty" in out and np.isfinite(out["penalty"])
            else:
                assert "penalty" not in out

    def test_critic_steps_multiplicity(self, sine_dataset):
        trainer = small_trainer(sine_dataset, variant="wgan_gp", critic_steps=3)
        step_before = trainer.adam_d.state.step
        trainer.train_step(trainer.fit_index[:16])
        assert trainer.adam_d.state.step == step_before + 3
        assert trainer.adam_g.state.step == 1


class TestTrainerRun:
    def test_single_epoch_single_record(self, sine_dataset):
        trainer = small_trainer(sine_dataset, epochs=1)
        result = trainer.run()
        assert len(result.records) == 1
        assert result.records[0].epoch == 1

    def test_epoch_records_are_finite_and_ordered(self, sine_dataset):
        result = small_trainer(sine_dataset, epochs=3).run()
        epochs = [r.epoch for r in result.records]
        assert epochs == [1, 2, 3]
        for r in result.records:
            assert np.isfinite([r.j_g, r.j_d, r.val_mse]).all()

    def test_determinism_identical_records(self, sine_dataset):
        a = small_trainer(sine_dataset, epochs=3, seed=9).run()
        b = small_trainer(sine_dataset, epochs=3, seed=9).run()
        assert [r.log_line() for r in a.records] == [r.log_line() for r in b.records]
        for pa, pb in zip(a.generator.params(), b.generator.params()):
            npt.assert_array_equal(pa.data, pb.data)

    def test_different_seed_differs(self, sine_dataset):
        a = small_trainer(sine_dataset, epochs=2, seed=9).run()
        b = small_trainer(sine_dataset, epochs=2, seed=10).run()
        assert [r.log_line() for r in a.records] != [r.log_line() for r in b.records]

    def test_dataset_smaller_than_batch_rejected(self, sine_dataset):
        with pytest.raises(ConfigError, match="batch"):
            small_trainer(sine_dataset, batch_size=10_000)

    def test_nonfinite_abort_diagnostics(self, sine_dataset):
        trainer = small_trainer(sine_dataset)
        trainer.generator.w_res.data[0, 0] = np.nan
        with pytest.raises(NumericAbort) as info:
            trainer.run()
        assert info.value.epoch == 1
        assert info.value.batch_index == 0

    def test_checkpoint_cadence(self, sine_dataset, tmp_path):
        trainer = small_trainer(sine_dataset, epochs=4, checkpoint_every=2)
        result = trainer.run(checkpoint_dir=tmp_path)
        names = sorted(p.split("/")[-1] for p in result.checkpoints)
        assert names == ["checkpoint_000002.bin", "checkpoint_000004.bin", "checkpoint_final.bin"]

    def test_log_stream_lines(self, sine_dataset, tmp_path):
        import io

        stream = io.StringIO()
        small_trainer(sine_dataset, epochs=2).run(log_stream=stream)
        lines = stream.getvalue().strip().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("epoch=1 jg=") and "val_mse=" in lines[0]
        assert "penalty" not in lines[0]

    def test_penalty_in_log_for_wgan(self, sine_dataset):
        import io

        stream = io.StringIO()
        small_trainer(sine_dataset, variant="wgan_gp", epochs=1).run(log_stream=stream)
        assert "penalty=" in stream.getvalue()

    def test_validation_split_is_chronological_tail(self, fast_indicators):
        cfg = DatasetConfig(lookback=3, horizon=1, indicators=fast_indicators)
        ds = prepare([synthesize("sine", 120, seed=7)], cfg)
        trainer = small_trainer(ds)
        assert trainer.val_index.min() > trainer.fit_index.max()
        expected_val = max(1, int(round(len(ds.train) * 0.1)))
        assert len(trainer.val_index) == expected_val


class TestEpochRecordFormat:
    def test_log_line_round_trip_precision(self):
        record = EpochRecord(3, 1.0 / 3.0, 2.0 / 7.0, 1e-7, penalty=0.1234567890123456789)
        line = record.log_line()
        fields = dict(part.split("=") for part in line.split())
        assert float(fields["jg"]) == record.j_g
        assert float(fields["jd"]) == record.j_d
        assert float(fields["val_mse"]) == record.val_mse
        assert float(fields["penalty"]) == record.penalty
