import numpy as np
import pytest

from edgan.data import DatasetConfig, prepare, synthesize
from edgan.indicators import IndicatorConfig
from edgan.models import DiscriminatorConfig, GeneratorConfig


@pytest.fixture(scope="session")
def fast_indicators():
    """Short periods keep the warm-up small for desk-scale fixtures."""
    return IndicatorConfig(
        rsi_period=5,
        stoch_rsi_period=5,
        ema_period=5,
        macd_fast=3,
        macd_slow=7,
        macd_signal=3,
        bollinger_period=5,
        momentum_lag=1,
    )


@pytest.fixture(scope="session")
def sine_dataset(fast_indicators):
    cfg = DatasetConfig(lookback=3, horizon=1, indicators=fast_indicators)
    return prepare([synthesize("sine", 160, seed=7)], cfg)


def tiny_gen_config(dataset, **overrides):
    base = dict(
        lookback=dataset.config.lookback,
        horizon=dataset.config.horizon,
        feature_dim=dataset.feature_dim,
        static_dim=dataset.static_dim,
        proj_dim=2,
        encoder_hidden=16,
        decoder_hidden=16,
        step_dim=4,
        temporal_hidden=8,
        dropout=0.1,
    )
    base.update(overrides)
    return GeneratorConfig(**base)


def tiny_disc_config(dataset, **overrides):
    base = dict(
        seq_len=dataset.config.lookback + dataset.config.horizon,
        in_channels=1 + dataset.feature_dim + dataset.static_dim,
        conv_channels=(4, 8),
        kernel_widths=(2, 2),
        strides=(1, 1),
        mlp_widths=(16, 8),
    )
    base.update(overrides)
    return DiscriminatorConfig(**base)
