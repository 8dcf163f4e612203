"""Forecasting generator and sequence discriminator.

The generator is a dense encoder-decoder over flattened windows: dynamic
covariates are projected per time step by a shared residual block, stacked
with the static vector and the historical price sequence, encoded by a stack
of residual blocks, decoded back to one vector per horizon step, and refined
per step by a temporal decoder that sees the projected future covariates. A
learned linear map from the lookback prices to the horizon is added on top,
so a pure linear autoregression is an exact special case of the network.

The discriminator scores (lookback + horizon)-length sequences channel-wise:
a small CNN over the time axis followed by an MLP and (optionally) a sigmoid.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor, Graph, Param
from .errors import ConfigError, ContractError, DimensionError, FormatError
from .rng import RngState

CHECKPOINT_MAGIC = b"EDGANCK1"
CHECKPOINT_VERSION = 1

# Keeps log D and log(1 - D) finite for any finite discriminator input.
PROB_EPS = 1e-7


def glorot(rng: RngState, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.stream("init").uniform(-limit, limit, size=shape)


class ResidualBlock:
    """Dense hidden layer + dropout + linear skip + layer normalization.

    The ungated form computes ``LayerNorm(Dropout(W2 relu(W1 x + b1) + b2) +
    Ws x)``. With ``gated=True`` a learned sigmoid gate blends the main and
    skip paths instead of summing them. Layer normalization is skipped for
    one-dimensional outputs, where normalizing a single scalar would erase
    the signal.
    """

    def __init__(
        self,
        name: str,
        in_dim: int,
        hidden_dim: int,
        out_dim: int,
        dropout: float = 0.0,
        gated: bool = False,
        use_layer_norm: bool = True,
        rng: Optional[RngState] = None,
    ):
        if min(in_dim, hidden_dim, out_dim) < 1:
            raise ConfigError(f"{name}: dimensions must be >= 1")
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"{name}: dropout must be in [0, 1), got {dropout}")
        rng = rng or RngState(0)
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.dropout = dropout
        self.gated = gated
        self.use_layer_norm = use_layer_norm and out_dim > 1
        self.w1 = Param(f"{name}.w1", glorot(rng, in_dim, hidden_dim, (in_dim, hidden_dim)))
        self.b1 = Param(f"{name}.b1", np.zeros(hidden_dim))
        self.w2 = Param(f"{name}.w2", glorot(rng, hidden_dim, out_dim, (hidden_dim, out_dim)))
        self.b2 = Param(f"{name}.b2", np.zeros(out_dim))
        self.w_skip = Param(f"{name}.w_skip", glorot(rng, in_dim, out_dim, (in_dim, out_dim)))
        if self.use_layer_norm:
            self.ln_gain = Param(f"{name}.ln_gain", np.ones(out_dim))
            self.ln_bias = Param(f"{name}.ln_bias", np.zeros(out_dim))
        if gated:
            self.w_gate = Param(f"{name}.w_gate", glorot(rng, in_dim, out_dim, (in_dim, out_dim)))
            self.b_gate = Param(f"{name}.b_gate", np.zeros(out_dim))

    def params(self) -> list[Param]:
        ps = [self.w1, self.b1, self.w2, self.b2, self.w_skip]
        if self.use_layer_norm:
            ps += [self.ln_gain, self.ln_bias]
        if self.gated:
            ps += [self.w_gate, self.b_gate]
        return ps

    def __call__(self, g: Graph, x: DiffTensor, rng: Optional[RngState] = None) -> DiffTensor:
        single = x.values.ndim == 1
        if single:
            x = x.reshape((1, x.values.shape[0]))
        if x.values.shape[1] != self.in_dim:
            raise DimensionError(f"{self.name}: input width {x.values.shape[1]} != {self.in_dim}")
        hidden = ad.add_bias(x @ g.watch(self.w1), g.watch(self.b1)).relu()
        main = ad.add_bias(hidden @ g.watch(self.w2), g.watch(self.b2))
        main = ad.dropout(main, self.dropout, rng)
        skip = x @ g.watch(self.w_skip)
        if self.gated:
            z = ad.add_bias(x @ g.watch(self.w_gate), g.watch(self.b_gate)).sigmoid()
            out = z * main + (1.0 - z) * skip
        else:
            out = main + skip
        if self.use_layer_norm:
            out = ad.layer_norm(out, g.watch(self.ln_gain), g.watch(self.ln_bias))
        return out.reshape((self.out_dim,)) if single else out


@dataclass(frozen=True)
class GeneratorConfig:
    lookback: int = 3
    horizon: int = 1
    feature_dim: int = 12
    static_dim: int = 2
    target_column: int = 3
    proj_dim: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    encoder_hidden: int = 64
    decoder_hidden: int = 64
    step_dim: int = 8
    temporal_hidden: int = 32
    dropout: float = 0.1
    gated: bool = False
    noise_dim: int = 0

    def __post_init__(self):
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ConfigError("encoder_layers and decoder_layers must be >= 1")
        if not 1 <= self.proj_dim <= self.feature_dim:
            raise ConfigError(f"proj_dim must be in [1, feature_dim], got {self.proj_dim} vs {self.feature_dim}")
        if self.step_dim < 1:
            raise ConfigError("step_dim must be >= 1")
        if self.lookback < 1 or self.horizon < 1:
            raise ConfigError("lookback and horizon must be >= 1")
        if not 0 <= self.target_column < self.feature_dim:
            raise ConfigError(f"target_column {self.target_column} out of range")
        if self.noise_dim < 0:
            raise ConfigError("noise_dim must be >= 0")

    @property
    def encoder_input_dim(self) -> int:
        window = self.lookback + self.horizon
        return window * self.proj_dim + self.static_dim + self.lookback + self.noise_dim

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


class Generator:
    """Encoder-decoder forecaster; accepts single samples or batches."""

    def __init__(self, config: GeneratorConfig, rng: Optional[RngState] = None):
        rng = rng or RngState(0)
        c = config
        self.config = c
        self.projection = ResidualBlock(
            "gen.proj", c.feature_dim, c.encoder_hidden, c.proj_dim, c.dropout, c.gated, rng=rng
        )
        self.encoder: list[ResidualBlock] = []
        in_dim = c.encoder_input_dim
        for i in range(c.encoder_layers):
            self.encoder.append(
                ResidualBlock(f"gen.enc{i}", in_dim, c.encoder_hidden, c.encoder_hidden, c.dropout, c.gated, rng=rng)
            )
            in_dim = c.encoder_hidden
        self.decoder: list[ResidualBlock] = []
        for i in range(c.decoder_layers):
            out_dim = c.horizon * c.step_dim if i == c.decoder_layers - 1 else c.decoder_hidden
            self.decoder.append(
                ResidualBlock(f"gen.dec{i}", in_dim, c.decoder_hidden, out_dim, c.dropout, c.gated, rng=rng)
            )
            in_dim = out_dim
        self.temporal = ResidualBlock(
            "gen.temporal", c.step_dim + c.proj_dim, c.temporal_hidden, 1, c.dropout, c.gated, rng=rng
        )
        self.w_res = Param("gen.w_res", glorot(rng, c.lookback, c.horizon, (c.lookback, c.horizon)))

    def params(self) -> list[Param]:
        ps = list(self.projection.params())
        for block in self.encoder + self.decoder:
            ps += block.params()
        ps += self.temporal.params()
        ps.append(self.w_res)
        return ps

    # spec surface -----------------------------------------------------------
    def project_features(self, g: Graph, dynamic: DiffTensor, rng: Optional[RngState] = None) -> DiffTensor:
        """Apply the shared projection block to every time-step row."""
        single = dynamic.values.ndim == 2
        if single:
            dynamic = dynamic.reshape((1,) + dynamic.values.shape)
        batch, window, k = dynamic.values.shape
        if k != self.config.feature_dim:
            raise DimensionError(f"dynamic covariate width {k} != configured {self.config.feature_dim}")
        rows = dynamic.reshape((batch * window, k))
        projected = self.projection(g, rows, rng).reshape((batch, window, self.config.proj_dim))
        return projected.reshape((window, self.config.proj_dim)) if single else projected

    def encode(
        self,
        g: Graph,
        y_hist: DiffTensor,
        d_proj: DiffTensor,
        static: DiffTensor,
        rng: Optional[RngState] = None,
        noise: Optional[DiffTensor] = None,
    ) -> DiffTensor:
        """Flatten the projected covariates, concatenate context, and encode."""
        c = self.config
        batch = y_hist.values.shape[0]
        flat = d_proj.reshape((batch, (c.lookback + c.horizon) * c.proj_dim))
        pieces = [flat, static, y_hist]
        if c.noise_dim:
            if noise is None:
                raise ContractError("generator configured with noise_dim > 0 needs a noise tensor")
            pieces.append(noise)
        out = ad.concat(pieces, axis=1)
        for block in self.encoder:
            out = block(g, out, rng)
        return out

    def decode_dense(self, g: Graph, encoded: DiffTensor, rng: Optional[RngState] = None) -> DiffTensor:
        """Run the dense decoder and reshape to (batch, step_dim, horizon).

        The flat decoder output is laid out timestep-major: entry t*q + j maps
        to row j, column t of the per-sample matrix.
        """
        c = self.config
        out = encoded
        for block in self.decoder:
            out = block(g, out, rng)
        batch = out.values.shape[0]
        return out.reshape((batch, c.horizon, c.step_dim)).transpose((0, 2, 1))

    def temporal_decode(
        self, g: Graph, decoded: DiffTensor, future_proj: DiffTensor, rng: Optional[RngState] = None
    ) -> DiffTensor:
        """Apply the shared per-step head to (r_t, projected future row t)."""
        c = self.config
        steps = []
        for t in range(c.horizon):
            r_t = decoded[:, :, t]
            x_t = future_proj[:, t, :]
            steps.append(self.temporal(g, ad.concat([r_t, x_t], axis=1), rng))
        return ad.concat(steps, axis=1)

    def forward(
        self,
        g: Graph,
        lookback: np.ndarray,
        future_cov: np.ndarray,
        static: np.ndarray,
        rng: Optional[RngState] = None,
        noise: Optional[np.ndarray] = None,
    ) -> DiffTensor:
        """Forecast the horizon for a batch; returns a (batch, horizon) tensor."""
        c = self.config
        single = lookback.ndim == 2
        if single:
            lookback = lookback[None]
            future_cov = future_cov[None]
            static = static[None]
            noise = None if noise is None else np.asarray(noise)[None]
        if lookback.shape[1:] != (c.lookback, c.feature_dim):
            raise DimensionError(f"lookback shape {lookback.shape[1:]} != {(c.lookback, c.feature_dim)}")
        if future_cov.shape[1:] != (c.horizon, c.feature_dim):
            raise DimensionError(f"future covariate shape {future_cov.shape[1:]} != {(c.horizon, c.feature_dim)}")
        batch = lookback.shape[0]

        dynamic = g.tensor(np.concatenate([lookback, future_cov], axis=1))
        d_proj = self.project_features(g, dynamic, rng)
        future_proj = d_proj[:, c.lookback :, :]
        y_hist = g.tensor(lookback[:, :, c.target_column])
        noise_t = None if noise is None else g.tensor(noise)
        encoded = self.encode(g, y_hist, d_proj, g.tensor(static), rng, noise_t)
        decoded = self.decode_dense(g, encoded, rng)
        refined = self.temporal_decode(g, decoded, future_proj, rng)
        out = refined + y_hist @ g.watch(self.w_res)
        return out.reshape((c.horizon,)) if single else out

    def predict(self, split, index: Optional[np.ndarray] = None) -> np.ndarray:
        """Deterministic eval-mode forecasts for a prepared split (numpy)."""
        g = Graph(mode="eval")
        if index is None:
            look, fut, stat = split.lookback, split.future, split.static
        else:
            look, fut, stat = split.lookback[index], split.future[index], split.static[index]
        if self.config.noise_dim:
            noise = np.zeros((look.shape[0], self.config.noise_dim))
            return self.forward(g, look, fut, stat, noise=noise).values.copy()
        return self.forward(g, look, fut, stat).values.copy()


@dataclass(frozen=True)
class DiscriminatorConfig:
    seq_len: int = 4
    in_channels: int = 15
    conv_channels: tuple[int, ...] = (16, 32)
    kernel_widths: tuple[int, ...] = (2, 2)
    strides: tuple[int, ...] = (1, 1)
    mlp_widths: tuple[int, ...] = (64, 32)
    sigmoid_output: bool = True

    def __post_init__(self):
        if not (len(self.conv_channels) == len(self.kernel_widths) == len(self.strides)):
            raise ConfigError("conv_channels, kernel_widths, and strides must have equal lengths")
        if self.seq_len < 1 or self.in_channels < 1:
            raise ConfigError("seq_len and in_channels must be >= 1")
        length = self.seq_len
        for width, stride in zip(self.kernel_widths, self.strides):
            if width > length:
                raise ConfigError(
                    f"conv kernel width {width} exceeds remaining sequence length {length} "
                    f"(receptive field too large for seq_len {self.seq_len})"
                )
            if stride < 1:
                raise ConfigError("conv strides must be >= 1")
            length = (length - width) // stride + 1
        object.__setattr__(self, "_flat_dim", length * (self.conv_channels[-1] if self.conv_channels else self.in_channels))

    @property
    def flat_dim(self) -> int:
        return self._flat_dim

    def to_dict(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "in_channels": self.in_channels,
            "conv_channels": list(self.conv_channels),
            "kernel_widths": list(self.kernel_widths),
            "strides": list(self.strides),
            "mlp_widths": list(self.mlp_widths),
            "sigmoid_output": self.sigmoid_output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        d = dict(d)
        for key in ("conv_channels", "kernel_widths", "strides", "mlp_widths"):
            d[key] = tuple(d[key])
        return cls(**d)


class Discriminator:
    """CNN over the time axis followed by an MLP scoring head."""

    def __init__(self, config: DiscriminatorConfig, rng: Optional[RngState] = None):
        rng = rng or RngState(0)
        self.config = config
        self.kernels: list[Param] = []
        self.conv_biases: list[Param] = []
        c_in = config.in_channels
        for i, (c_out, width) in enumerate(zip(config.conv_channels, config.kernel_widths)):
            fan_in, fan_out = c_in * width, c_out * width
            self.kernels.append(Param(f"disc.conv{i}.k", glorot(rng, fan_in, fan_out, (c_out, c_in, width))))
            self.conv_biases.append(Param(f"disc.conv{i}.b", np.zeros(c_out)))
            c_in = c_out
        self.mlp_weights: list[Param] = []
        self.mlp_biases: list[Param] = []
        in_dim = config.flat_dim
        for i, width in enumerate(tuple(config.mlp_widths) + (1,)):
            self.mlp_weights.append(Param(f"disc.mlp{i}.w", glorot(rng, in_dim, width, (in_dim, width))))
            self.mlp_biases.append(Param(f"disc.mlp{i}.b", np.zeros(width)))
            in_dim = width

    def params(self) -> list[Param]:
        ps: list[Param] = []
        for k, b in zip(self.kernels, self.conv_biases):
            ps += [k, b]
        for w, b in zip(self.mlp_weights, self.mlp_biases):
            ps += [w, b]
        return ps

    def score(self, g: Graph, x: DiffTensor) -> DiffTensor:
        """Raw pre-sigmoid score for a (batch, channels, time) input."""
        single = x.values.ndim == 2
        if single:
            x = x.reshape((1,) + x.values.shape)
        if x.values.shape[1] != self.config.in_channels:
            raise DimensionError(f"discriminator input channels {x.values.shape[1]} != {self.config.in_channels}")
        out = x
        for kernel, bias, stride in zip(self.kernels, self.conv_biases, self.config.strides):
            out = ad.add_bias(ad.conv1d(out, g.watch(kernel), stride), g.watch(bias), axis=1).relu()
        batch = out.values.shape[0]
        out = out.reshape((batch, self.config.flat_dim))
        last = len(self.mlp_weights) - 1
        for i, (w, b) in enumerate(zip(self.mlp_weights, self.mlp_biases)):
            out = ad.add_bias(out @ g.watch(w), g.watch(b))
            if i < last:
                out = out.relu()
        out = out.reshape((batch,))
        return out.reshape(()) if single else out

    def forward(self, g: Graph, x: DiffTensor) -> DiffTensor:
        """Probability (or raw score when sigmoid output is disabled)."""
        s = self.score(g, x)
        return s.sigmoid() if self.config.sigmoid_output else s


def assemble_disc_input(
    g: Graph,
    lookback: np.ndarray,
    future_cov: np.ndarray,
    static: np.ndarray,
    horizon_values,
    target_column: int,
    include_context: bool = True,
) -> DiffTensor:
    """Build the (batch, channels, time) discriminator input.

    Rows 1..H carry the historical price plus that day's covariates; rows
    H+1..H+F carry the horizon value (real target or generated forecast) plus
    the future covariates. Real and fake assemblies differ only in the
    horizon-value entries. The static vector is broadcast as constant
    channels when ``include_context`` is set.
    """
    if lookback.ndim != 3 or future_cov.ndim != 3:
        raise DimensionError("assemble_disc_input expects batched (B, T, k) arrays")
    batch, h, k = lookback.shape
    f = future_cov.shape[1]
    hist = [lookback[:, :, target_column : target_column + 1], lookback]
    fut_const = [future_cov]
    if include_context:
        hist.append(np.repeat(static[:, None, :], h, axis=1))
        fut_const.append(np.repeat(static[:, None, :], f, axis=1))
    hist_t = g.tensor(np.concatenate(hist, axis=2))

    if isinstance(horizon_values, DiffTensor):
        price = horizon_values.reshape((batch, f, 1))
    else:
        price = g.tensor(np.asarray(horizon_values, dtype=np.float64).reshape(batch, f, 1))
    fut_t = ad.concat([price, g.tensor(np.concatenate(fut_const, axis=2))], axis=2)
    seq = ad.concat([hist_t, fut_t], axis=1)
    return seq.transpose((0, 2, 1))


def disc_channel_count(feature_dim: int, static_dim: int, include_context: bool = True) -> int:
    return 1 + feature_dim + (static_dim if include_context else 0)


# ---------------------------------------------------------------------------
# checkpoints


def canonical_digest(obj) -> str:
    """SHA-256 of a canonical JSON rendering (covers numeric-relevant config)."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


def _write_entry(buf, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<Q", d))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_entry(buf) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", buf.read(2))
    name = buf.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = tuple(struct.unpack("<Q", buf.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(buf.read(count * 8), dtype="<f8").reshape(shape).astype(np.float64)
    return name, arr


def save_checkpoint(
    path,
    params: Sequence[Param],
    meta: dict,
    optimizer_entries: Optional[dict[str, np.ndarray]] = None,
) -> None:
    """Write parameters (declaration order) under a versioned header.

    ``meta`` must contain the config digest and dataset digest; optimizer
    state, when provided, is appended as its own named section.
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(params)))
    for p in params:
        _write_entry(buf, p.name, p.data)
    opt = optimizer_entries or {}
    buf.write(struct.pack("<I", len(opt)))
    for name in opt:
        _write_entry(buf, name, opt[name])
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expected_config_digest: Optional[str] = None) -> tuple[dict, dict, dict]:
    """Read (meta, params-by-name, optimizer-entries) from a checkpoint.

    Refuses to load when the stored config digest differs from
    ``expected_config_digest`` (if given).
    """
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    magic = buf.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"not a checkpoint file (magic {magic!r})")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<Q", buf.read(8))
    meta = json.loads(buf.read(meta_len).decode("utf-8"))
    if expected_config_digest is not None and meta.get("config_digest") != expected_config_digest:
        raise FormatError(
            "config digest mismatch: checkpoint has "
            f"{meta.get('config_digest')}, expected {expected_config_digest}"
        )
    (n_params,) = struct.unpack("<I", buf.read(4))
    params = dict(_read_entry(buf) for _ in range(n_params))
    (n_opt,) = struct.unpack("<I", buf.read(4))
    optimizer = dict(_read_entry(buf) for _ in range(n_opt))
    return meta, params, optimizer


def restore_params(params: Sequence[Param], stored: dict[str, np.ndarray]) -> None:
    """Fill live parameters from checkpoint entries, checking name and shape."""
    for p in params:
        if p.name not in stored:
            raise FormatError(f"checkpoint is missing parameter {p.name!r}")
        arr = stored[p.name]
        if arr.shape != p.data.shape:
            raise DimensionError(f"checkpoint parameter {p.name!r} has shape {arr.shape}, expected {p.data.shape}")
        p.data[...] = arr
