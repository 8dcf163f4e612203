"""Adversarial training loop and loss functions.

Four regimes share the same generator/discriminator pair:

- ``edgan``: non-saturating BCE adversarial losses plus a supervised MSE term
  weighted by ``mu`` (``mu=0`` recovers the pure adversarial generator loss).
- ``basic_gan``: the same BCE pair, but the generator additionally consumes a
  noise vector and trains without the supervised term by default.
- ``wgan_gp``: Wasserstein critic (no sigmoid) with an interpolated-point
  gradient penalty.
- ``dragan``: BCE pair with the gradient penalty applied on noise-perturbed
  neighborhoods of the real inputs.

The penalty's effect on critic parameters is computed with a first-order
surrogate: the input-gradient direction comes from an exact backward pass,
and the norm along that (frozen) direction is re-expressed as a central
difference of two critic forwards, which is differentiable w.r.t. the critic
parameters without second-order autodiff.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import DiffTensor, Graph, Param
from .data import PreparedDataset, PreparedSplit
from .errors import ConfigError, ContractError, NumericAbort, NumericError
from .models import (
    PROB_EPS,
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    assemble_disc_input,
    canonical_digest,
    disc_channel_count,
    save_checkpoint,
)
from .optim import Adam
from .rng import RngState

VARIANTS = ("edgan", "basic_gan", "wgan_gp", "dragan")

# Central-difference step for the penalty surrogate.
PENALTY_STEP = 1e-4


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "edgan"
    epochs: int = 100
    batch_size: int = 32
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    penalty_weight: float = 10.0
    critic_steps: int = 1
    mu: float = 1.0
    dragan_noise_scale: float = 0.5
    validation_fraction: float = 0.1
    seed: int = 0
    checkpoint_every: int = 0
    noise_dim: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.penalty_weight < 0:
            raise ConfigError("penalty weight must be >= 0")
        if self.critic_steps < 1:
            raise ConfigError("critic_steps must be >= 1")
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must be in (0, 1)")

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "TrainConfig":
        """Per-regime defaults: baselines drop the supervised term, the
        Wasserstein critic takes more steps, basic GAN injects noise."""
        base: dict = {"variant": variant}
        if variant in ("basic_gan", "wgan_gp", "dragan"):
            base["mu"] = 0.0
        if variant == "wgan_gp":
            base["critic_steps"] = 5
        if variant == "basic_gan":
            base["noise_dim"] = 8
        base.update(overrides)
        return cls(**base)

    def uses_penalty(self) -> bool:
        return self.variant in ("wgan_gp", "dragan")

    def numeric_fields(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.pop("checkpoint_every")
        d.pop("seed")
        return d


@dataclass
class EpochRecord:
    epoch: int
    j_g: float
    j_d: float
    val_mse: float
    penalty: Optional[float] = None
    seconds: float = 0.0

    def log_line(self) -> str:
        parts = [f"epoch={self.epoch}", f"jg={self.j_g!r}", f"jd={self.j_d!r}", f"val_mse={self.val_mse!r}"]
        if self.penalty is not None:
            parts.append(f"penalty={self.penalty!r}")
        return " ".join(parts)


# ---------------------------------------------------------------------------
# losses


def _clamped_log(p: DiffTensor) -> DiffTensor:
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS).log()


def _check_batch(t: DiffTensor, name: str) -> None:
    if t.values.size == 0:
        raise ContractError(f"{name}: empty batch")


def mse_loss(y_hat: DiffTensor, y: np.ndarray) -> DiffTensor:
    """Mean squared error over every (sample, step) entry."""
    diff = y_hat - y_hat.graph.tensor(y)
    return (diff * diff).mean()


def loss_generator_edgan(d_fake: DiffTensor, y_hat: DiffTensor, y: np.ndarray, mu: float) -> DiffTensor:
    """-E[log D(fake)] plus mu * MSE(forecast, target)."""
    _check_batch(d_fake, "generator loss")
    loss = -(_clamped_log(d_fake).mean())
    if mu:
        loss = loss + mu * mse_loss(y_hat, y)
    return loss


def loss_discriminator(d_real: DiffTensor, d_fake: DiffTensor) -> DiffTensor:
    """-E[log D(real)] - E[log(1 - D(fake))]."""
    _check_batch(d_real, "discriminator loss")
    _check_batch(d_fake, "discriminator loss")
    return -(_clamped_log(d_real).mean()) - (_clamped_log(1.0 - d_fake).mean())


def loss_wgan(real_scores: DiffTensor, fake_scores: DiffTensor, penalty: Optional[DiffTensor] = None):
    """Wasserstein critic and generator losses from raw (unbounded) scores."""
    _check_batch(real_scores, "critic loss")
    _check_batch(fake_scores, "critic loss")
    critic = fake_scores.mean() - real_scores.mean()
    if penalty is not None:
        critic = critic + penalty
    generator = -(fake_scores.mean())
    return critic, generator


CriticFn = Callable[[Graph, DiffTensor], DiffTensor]


def gradient_penalty(
    critic: CriticFn,
    real_batch: np.ndarray,
    fake_batch: Optional[np.ndarray],
    mode: str,
    weight: float,
    rng: RngState,
    graph: Graph,
    frozen: Sequence[Param] = (),
    noise_scale: float = 0.5,
    step: float = PENALTY_STEP,
) -> DiffTensor:
    """Penalty pushing the critic's input-gradient norm toward 1.

    ``interpolated`` samples points between the real and fake batches (one
    uniform coefficient per sample); ``around_real`` perturbs real points
    with Gaussian noise scaled by ``noise_scale`` times the batch standard
    deviation. Exact per-sample input gradients come from a dedicated
    backward pass; the returned tensor differentiates through two critic
    forwards along those (frozen) directions.
    """
    if weight < 0:
        raise ConfigError(f"penalty weight must be >= 0, got {weight}")
    stream = rng.stream("penalty")
    real = np.asarray(real_batch, dtype=np.float64)
    if mode == "interpolated":
        if fake_batch is None:
            raise ContractError("interpolated penalty needs a fake batch")
        fake = np.asarray(fake_batch, dtype=np.float64)
        if fake.shape != real.shape:
            raise ContractError(f"real {real.shape} and fake {fake.shape} batches differ")
        u = stream.random((real.shape[0],) + (1,) * (real.ndim - 1))
        x_hat = u * real + (1.0 - u) * fake
    elif mode == "around_real":
        x_hat = real + noise_scale * real.std() * stream.standard_normal(real.shape)
    else:
        raise ConfigError(f"unknown penalty mode {mode!r}; expected 'interpolated' or 'around_real'")

    probe = Graph(mode="eval")
    for p in frozen:
        probe.watch(p, trainable=False)
    x_probe = probe.tensor(x_hat, requires_grad=True)
    probe.backward(critic(probe, x_probe).sum())
    grads = x_probe.grad if x_probe.grad is not None else np.zeros_like(x_hat)
    flat = grads.reshape(real.shape[0], -1)
    norms = np.sqrt((flat * flat).sum(axis=1))
    directions = (flat / np.maximum(norms, 1e-12)[:, None]).reshape(x_hat.shape)

    plus = critic(graph, graph.tensor(x_hat + step * directions))
    minus = critic(graph, graph.tensor(x_hat - step * directions))
    norm_estimate = (plus - minus) * (1.0 / (2.0 * step))
    # shift the surrogate onto the exact norms so the penalty VALUE is the true
    # lambda * mean((|grad| - 1)^2) while gradients flow through the surrogate
    correction = graph.tensor(norms - norm_estimate.values)
    deviation = norm_estimate + correction - 1.0
    return weight * ((deviation * deviation).mean())


def validate(generator: Generator, split: PreparedSplit, index: Optional[np.ndarray] = None) -> float:
    """Eval-mode MSE over the given samples: sum of squared errors / (N * F)."""
    n = len(split) if index is None else len(index)
    if n == 0:
        raise ContractError("validation over an empty sample set")
    predictions = generator.predict(split, index)
    targets = split.target if index is None else split.target[index]
    return float(np.mean((predictions - targets) ** 2))


# ---------------------------------------------------------------------------
# trainer


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    records: list[EpochRecord]
    checkpoints: list[str]
    config_digest: str


class Trainer:
    """Owns one training run: models, optimizer state, and batching order."""

    def __init__(
        self,
        dataset: PreparedDataset,
        cfg: TrainConfig,
        gen_cfg: Optional[GeneratorConfig] = None,
        disc_cfg: Optional[DiscriminatorConfig] = None,
        dataset_digest: str = "",
    ):
        self.dataset = dataset
        self.cfg = cfg
        self.dataset_digest = dataset_digest
        noise_dim = cfg.noise_dim if cfg.variant == "basic_gan" else 0
        if gen_cfg is None:
            gen_cfg = GeneratorConfig(
                lookback=dataset.config.lookback,
                horizon=dataset.config.horizon,
                feature_dim=dataset.feature_dim,
                static_dim=dataset.static_dim,
                target_column=dataset.target_column,
                noise_dim=noise_dim,
            )
        elif gen_cfg.noise_dim != noise_dim:
            raise ConfigError(
                f"generator noise_dim {gen_cfg.noise_dim} conflicts with variant {cfg.variant!r} ({noise_dim})"
            )
        if disc_cfg is None:
            disc_cfg = DiscriminatorConfig(
                seq_len=dataset.config.lookback + dataset.config.horizon,
                in_channels=disc_channel_count(dataset.feature_dim, dataset.static_dim),
                sigmoid_output=cfg.variant != "wgan_gp",
            )
        if cfg.variant == "wgan_gp" and disc_cfg.sigmoid_output:
            raise ConfigError("wgan_gp needs a raw-score critic (sigmoid_output=False)")
        self.gen_cfg = gen_cfg
        self.disc_cfg = disc_cfg

        self.rng = RngState(cfg.seed)
        self.generator = Generator(gen_cfg, self.rng)
        self.discriminator = Discriminator(disc_cfg, self.rng)
        self.adam_g = Adam(self.generator.params(), cfg.lr_g, cfg.beta1, cfg.beta2)
        self.adam_d = Adam(self.discriminator.params(), cfg.lr_d, cfg.beta1, cfg.beta2)

        self.fit_index, self.val_index = self._split_validation()
        if len(self.fit_index) < cfg.batch_size:
            raise ConfigError(
                f"training set of {len(self.fit_index)} windows is smaller than one batch ({cfg.batch_size})"
            )

    def _split_validation(self) -> tuple[np.ndarray, np.ndarray]:
        """Hold out the chronological tail of each stock's training windows."""
        train = self.dataset.train
        fit: list[int] = []
        val: list[int] = []
        for stock_id in np.unique(train.stock_ids):
            idx = np.flatnonzero(train.stock_ids == stock_id)
            n = idx.size
            if n < 2:
                raise ConfigError(f"stock id {stock_id} has only {n} training window(s); cannot hold out validation")
            n_val = min(n - 1, max(1, int(round(n * self.cfg.validation_fraction))))
            fit.extend(idx[: n - n_val])
            val.extend(idx[n - n_val :])
        return np.array(fit, dtype=np.int64), np.array(val, dtype=np.int64)

    def config_digest(self) -> str:
        return canonical_digest(
            {
                "train": self.cfg.numeric_fields(),
                "generator": self.gen_cfg.to_dict(),
                "discriminator": self.disc_cfg.to_dict(),
                "dataset": self.dataset.config.to_dict(),
            }
        )

    # ------------------------------------------------------------------
    def _batch_arrays(self, index: np.ndarray):
        train = self.dataset.train
        return train.lookback[index], train.future[index], train.static[index], train.target[index]

    def _noise(self, batch: int) -> Optional[np.ndarray]:
        if self.gen_cfg.noise_dim == 0:
            return None
        return self.rng.stream("noise").standard_normal((batch, self.gen_cfg.noise_dim))

    def _discriminator_step(self, look, fut, stat, target) -> tuple[float, Optional[float]]:
        cfg = self.cfg
        g = Graph(mode="train")
        for p in self.generator.params():
            g.watch(p, trainable=False)
        y_hat = self.generator.forward(g, look, fut, stat, self.rng, self._noise(look.shape[0]))
        fake_in = assemble_disc_input(g, look, fut, stat, y_hat, self.gen_cfg.target_column)
        real_in = assemble_disc_input(g, look, fut, stat, target, self.gen_cfg.target_column)

        penalty_value: Optional[float] = None
        if cfg.variant == "wgan_gp":
            critic: CriticFn = lambda gg, x: self.discriminator.score(gg, x)
            real_scores = self.discriminator.score(g, real_in)
            fake_scores = self.discriminator.score(g, fake_in)
            penalty = gradient_penalty(
                critic,
                real_in.values,
                fake_in.values,
                "interpolated",
                cfg.penalty_weight,
                self.rng,
                g,
                frozen=self.discriminator.params(),
            )
            loss, _ = loss_wgan(real_scores, fake_scores, penalty)
            penalty_value = penalty.item()
        elif cfg.variant == "dragan":
            critic = lambda gg, x: self.discriminator.forward(gg, x)
            d_real = self.discriminator.forward(g, real_in)
            d_fake = self.discriminator.forward(g, fake_in)
            penalty = gradient_penalty(
                critic,
                real_in.values,
                None,
                "around_real",
                cfg.penalty_weight,
                self.rng,
                g,
                frozen=self.discriminator.params(),
                noise_scale=cfg.dragan_noise_scale,
            )
            loss = loss_discriminator(d_real, d_fake) + penalty
            penalty_value = penalty.item()
        else:
            d_real = self.discriminator.forward(g, real_in)
            d_fake = self.discriminator.forward(g, fake_in)
            loss = loss_discriminator(d_real, d_fake)

        g.backward(loss)
        self.adam_d.step([g.grad(p) for p in self.discriminator.params()])
        return loss.item(), penalty_value

    def _generator_step(self, look, fut, stat, target) -> float:
        cfg = self.cfg
        g = Graph(mode="train")
        for p in self.discriminator.params():
            g.watch(p, trainable=False)
        y_hat = self.generator.forward(g, look, fut, stat, self.rng, self._noise(look.shape[0]))
        fake_in = assemble_disc_input(g, look, fut, stat, y_hat, self.gen_cfg.target_column)

        if cfg.variant == "wgan_gp":
            fake_scores = self.discriminator.score(g, fake_in)
            _check_batch(fake_scores, "generator loss")
            loss = -(fake_scores.mean())
            if cfg.mu:
                loss = loss + cfg.mu * mse_loss(y_hat, target)
        else:
            d_fake = self.discriminator.forward(g, fake_in)
            loss = loss_generator_edgan(d_fake, y_hat, target, cfg.mu)

        g.backward(loss)
        self.adam_g.step([g.grad(p) for p in self.generator.params()])
        return loss.item()

    def train_step(self, index: np.ndarray) -> dict:
        """``critic_steps`` discriminator updates (fresh fakes each), then one
        generator update. Returns the step's loss values."""
        look, fut, stat, target = self._batch_arrays(index)
        d_losses = []
        penalties = []
        for _ in range(self.cfg.critic_steps):
            d_loss, penalty = self._discriminator_step(look, fut, stat, target)
            d_losses.append(d_loss)
            if penalty is not None:
                penalties.append(penalty)
        g_loss = self._generator_step(look, fut, stat, target)
        out = {"jd": float(np.mean(d_losses)), "jg": g_loss}
        if penalties:
            out["penalty"] = float(np.mean(penalties))
        return out

    def run(
        self,
        log_stream=None,
        checkpoint_dir=None,
        epochs: Optional[int] = None,
    ) -> TrainResult:
        """Train for the configured number of epochs.

        Each epoch shuffles the fit windows (seeded), walks full batches,
        then computes the validation MSE in eval mode. Any non-finite loss
        aborts with a structured diagnostic instead of corrupting state.
        """
        cfg = self.cfg
        total_epochs = cfg.epochs if epochs is None else epochs
        records: list[EpochRecord] = []
        checkpoints: list[str] = []
        shuffle = self.rng.stream("shuffle")
        n = len(self.fit_index)
        batches_per_epoch = n // cfg.batch_size

        for epoch in range(1, total_epochs + 1):
            started = time.perf_counter()
            order = self.fit_index[shuffle.permutation(n)]
            jg_values = []
            jd_values = []
            penalty_values = []
            for b in range(batches_per_epoch):
                batch_index = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                try:
                    losses = self.train_step(batch_index)
                except NumericError as exc:
                    raise NumericAbort(
                        f"non-finite value at epoch {epoch}, batch {b}: {exc}",
                        epoch=epoch,
                        batch_index=b,
                        term=str(exc),
                    ) from exc
                jg_values.append(losses["jg"])
                jd_values.append(losses["jd"])
                if "penalty" in losses:
                    penalty_values.append(losses["penalty"])
            try:
                val_mse = validate(self.generator, self.dataset.train, self.val_index)
            except NumericError as exc:
                raise NumericAbort(
                    f"non-finite validation at epoch {epoch}: {exc}", epoch=epoch, term="val_mse"
                ) from exc
            record = EpochRecord(
                epoch=epoch,
                j_g=float(np.mean(jg_values)),
                j_d=float(np.mean(jd_values)),
                val_mse=val_mse,
                penalty=float(np.mean(penalty_values)) if penalty_values else None,
                seconds=time.perf_counter() - started,
            )
            if not all(np.isfinite([record.j_g, record.j_d, record.val_mse])):
                raise NumericAbort(f"non-finite epoch record at epoch {epoch}", epoch=epoch, term="epoch_record")
            records.append(record)
            if log_stream is not None:
                log_stream.write(record.log_line() + "\n")
            if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                checkpoints.append(self._write_checkpoint(checkpoint_dir, epoch))

        if checkpoint_dir is not None:
            checkpoints.append(self._write_checkpoint(checkpoint_dir, None))
        return TrainResult(self.generator, self.discriminator, records, checkpoints, self.config_digest())

    def _write_checkpoint(self, checkpoint_dir, epoch: Optional[int]) -> str:
        import os

        name = "checkpoint_final.bin" if epoch is None else f"checkpoint_{epoch:06d}.bin"
        path = os.path.join(str(checkpoint_dir), name)
        params = self.generator.params() + self.discriminator.params()
        optimizer = {}
        for prefix, adam in (("gen", self.adam_g), ("disc", self.adam_d)):
            optimizer[f"opt.{prefix}.step"] = np.array([float(adam.state.step)])
            for p, m, v in zip(adam.params, adam.state.m, adam.state.v):
                optimizer[f"opt.m.{p.name}"] = m
                optimizer[f"opt.v.{p.name}"] = v
        meta = {
            "config_digest": self.config_digest(),
            "dataset_digest": self.dataset_digest,
            "variant": self.cfg.variant,
            "epoch": epoch,
            "generator_config": self.gen_cfg.to_dict(),
            "discriminator_config": self.disc_cfg.to_dict(),
        }
        save_checkpoint(path, params, meta, optimizer)
        return path


def train(
    dataset: PreparedDataset,
    cfg: TrainConfig,
    gen_cfg: Optional[GeneratorConfig] = None,
    disc_cfg: Optional[DiscriminatorConfig] = None,
    dataset_digest: str = "",
    log_stream=None,
    checkpoint_dir=None,
) -> TrainResult:
    """Convenience wrapper: build a :class:`Trainer` and run it."""
    trainer = Trainer(dataset, cfg, gen_cfg, disc_cfg, dataset_digest)
    return trainer.run(log_stream=log_stream, checkpoint_dir=checkpoint_dir)
