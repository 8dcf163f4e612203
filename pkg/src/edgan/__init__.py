"""Adversarial encoder-decoder forecasting toolkit for daily market data."""

from .autodiff import DiffTensor, Graph, Param
from .data import (
    DatasetConfig,
    NormalizationSpec,
    OhlcvBar,
    PreparedDataset,
    StockSeries,
    WindowSample,
    build_windows,
    chronological_split,
    fit_normalizer,
    parse_csv,
    prepare,
    synthesize,
)
from .errors import EdganError
from .gradcheck import grad_check
from .indicators import IndicatorConfig
from .models import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .optim import Adam, AdamState, adam_step
from .report import MetricsRow, comparison_table, evaluate_run, mae, r2, rmse
from .rng import RngState
from .training import EpochRecord, TrainConfig, Trainer, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AdamState",
    "DatasetConfig",
    "DiffTensor",
    "Discriminator",
    "DiscriminatorConfig",
    "EdganError",
    "EpochRecord",
    "Generator",
    "GeneratorConfig",
    "Graph",
    "IndicatorConfig",
    "MetricsRow",
    "NormalizationSpec",
    "OhlcvBar",
    "Param",
    "PreparedDataset",
    "RngState",
    "StockSeries",
    "TrainConfig",
    "Trainer",
    "WindowSample",
    "adam_step",
    "build_windows",
    "chronological_split",
    "comparison_table",
    "evaluate_run",
    "fit_normalizer",
    "grad_check",
    "mae",
    "parse_csv",
    "prepare",
    "r2",
    "rmse",
    "synthesize",
    "train",
]
