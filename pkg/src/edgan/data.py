"""Data ingestion: OHLCV parsing, feature assembly, windowing, and caching.

The pipeline turns raw per-ticker CSV files into normalized sliding-window
samples ready for training:

    parse -> indicator features -> chronological split -> fit/apply
    normalizer (train rows only) -> windows per split -> merged dataset

Indicator warm-up rows are consumed before the split, so the train fraction
applies to usable rows. Normalization maps each column's train min/max onto
[-1, 1]; test values may land outside that range and are passed through
unclipped. Day-of-week one-hot columns (when enabled) ride along unnormalized
and are the only feature known for future rows.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import io
import json
import logging
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError, VocabularyError
from .indicators import FEATURE_COLUMNS, TARGET_COLUMN_INDEX, IndicatorConfig, build_feature_matrix
from .rng import RngState

log = logging.getLogger(__name__)

DATE_FORMAT = "%Y-%m-%d"
CSV_HEADER = ("Date", "Open", "High", "Low", "Close", "Adj Close", "Volume")
CALENDAR_COLUMNS = ("dow_mon", "dow_tue", "dow_wed", "dow_thu", "dow_fri", "dow_sat", "dow_sun")

CACHE_MAGIC = b"EDGANDS1"
CACHE_VERSION = 1


@dataclass(frozen=True)
class OhlcvBar:
    """One trading day's raw record."""

    date: dt.date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float

    def __post_init__(self):
        for name in ("open", "high", "low", "close", "adj_close", "volume"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def consistent(self) -> bool:
        lo, hi = min(self.open, self.close), max(self.open, self.close)
        return self.low <= lo and hi <= self.high and self.volume >= 0.0


@dataclass
class StockSeries:
    """Date-ascending bars plus static metadata for one ticker."""

    ticker: str
    sector: str
    exchange: str
    bars: list[OhlcvBar]

    def __post_init__(self):
        for prev, cur in zip(self.bars, self.bars[1:]):
            if cur.date <= prev.date:
                raise DataError(f"{self.ticker}: dates not strictly increasing at {cur.date}")

    def __len__(self):
        return len(self.bars)

    @property
    def dates(self) -> list[dt.date]:
        return [b.date for b in self.bars]

    def _column(self, name: str) -> np.ndarray:
        return np.array([getattr(b, name) for b in self.bars], dtype=np.float64)

    open = property(lambda self: self._column("open"))
    high = property(lambda self: self._column("high"))
    low = property(lambda self: self._column("low"))
    close = property(lambda self: self._column("close"))
    adj_close = property(lambda self: self._column("adj_close"))
    volume = property(lambda self: self._column("volume"))


# ---------------------------------------------------------------------------
# CSV parsing and serialization


def parse_csv(
    data,
    strict: bool = True,
    ticker: str = "",
    sector: str = "",
    exchange: str = "",
) -> tuple[StockSeries, int]:
    """Parse a Yahoo-style daily CSV into a series.

    Returns (series, skipped_row_count). In strict mode any malformed or
    OHLC-inconsistent row raises; in lenient mode such rows are logged and
    skipped.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = data.splitlines()
    if not lines:
        raise FormatError("empty input: missing CSV header")
    header = tuple(part.strip() for part in lines[0].split(","))
    if header != CSV_HEADER:
        raise FormatError(f"unexpected CSV header {lines[0]!r}; expected {','.join(CSV_HEADER)!r}")

    bars: list[OhlcvBar] = []
    skipped = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            bar = _parse_row(line)
        except (ValueError, DataError) as exc:
            if strict:
                raise DataError(f"line {lineno}: {exc}") from exc
            log.warning("skipping line %d: %s", lineno, exc)
            skipped += 1
            continue
        bars.append(bar)
    if not bars:
        raise DataError("no valid data rows")

    bars.sort(key=lambda b: b.date)
    deduped: list[OhlcvBar] = []
    for bar in bars:
        if deduped and bar.date == deduped[-1].date:
            if strict:
                raise DataError(f"duplicate date {bar.date}")
            log.warning("skipping duplicate date %s", bar.date)
            skipped += 1
            continue
        deduped.append(bar)
    return StockSeries(ticker, sector, exchange, deduped), skipped


def _parse_row(line: str) -> OhlcvBar:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != len(CSV_HEADER):
        raise ValueError(f"expected {len(CSV_HEADER)} fields, got {len(parts)}")
    date = dt.datetime.strptime(parts[0], DATE_FORMAT).date()
    numbers = [float(p) for p in parts[1:]]
    if not all(np.isfinite(numbers)):
        raise ValueError("non-finite numeric field")
    bar = OhlcvBar(date, *numbers)
    if not bar.consistent():
        raise DataError(f"inconsistent OHLCV values on {date}")
    return bar


def serialize_csv(series: StockSeries) -> str:
    """Inverse of :func:`parse_csv` for valid series (round-trip identity)."""
    out = [",".join(CSV_HEADER)]
    for b in series.bars:
        out.append(
            f"{b.date.strftime(DATE_FORMAT)},{b.open!r},{b.high!r},{b.low!r},{b.close!r},{b.adj_close!r},{b.volume!r}"
        )
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# normalization


@dataclass
class NormalizationSpec:
    """Per-column min/max fitted on training rows only."""

    mins: np.ndarray
    maxs: np.ndarray
    target_column: int

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * (x - self.mins) / (self.maxs - self.mins) - 1.0

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return (x + 1.0) / 2.0 * (self.maxs - self.mins) + self.mins

    def denormalize_target(self, values: np.ndarray) -> np.ndarray:
        lo = self.mins[self.target_column]
        hi = self.maxs[self.target_column]
        return (np.asarray(values, dtype=np.float64) + 1.0) / 2.0 * (hi - lo) + lo

    def target_half_range(self) -> float:
        return (self.maxs[self.target_column] - self.mins[self.target_column]) / 2.0

    def to_dict(self) -> dict:
        return {
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
            "target_column": self.target_column,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(np.array(d["mins"], dtype=np.float64), np.array(d["maxs"], dtype=np.float64), int(d["target_column"]))


def fit_normalizer(
    train_features: np.ndarray,
    target_column: int = TARGET_COLUMN_INDEX,
    column_names: Optional[Sequence[str]] = None,
) -> NormalizationSpec:
    """Fit per-column [-1, 1] min-max scaling on training rows."""
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError(f"normalizer needs a 2-D matrix with >= 2 rows, got shape {x.shape}")
    mins = x.min(axis=0)
    maxs = x.max(axis=0)
    flat = np.flatnonzero(maxs <= mins)
    if flat.size:
        col = int(flat[0])
        name = column_names[col] if column_names else f"column {col}"
        raise ConfigError(f"cannot normalize constant feature {name}")
    if not 0 <= target_column < x.shape[1]:
        raise ConfigError(f"target column {target_column} out of range for {x.shape[1]} features")
    return NormalizationSpec(mins, maxs, target_column)


# ---------------------------------------------------------------------------
# splitting and windowing


def chronological_split(n_rows: int, train_fraction: float, min_rows: int = 1) -> tuple[range, range]:
    """Contiguous prefix of ceil(fraction * n) rows for training, rest for test."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must be in (0, 1), got {train_fraction}")
    cut = int(np.ceil(train_fraction * n_rows))
    if cut < min_rows or n_rows - cut < min_rows:
        raise DataError(
            f"split of {n_rows} rows at fraction {train_fraction} leaves "
            f"{cut}/{n_rows - cut} rows; need >= {min_rows} on each side"
        )
    return range(0, cut), range(cut, n_rows)


@dataclass
class WindowSample:
    """One training example: lookback features, future covariates, target."""

    lookback: np.ndarray
    future_covariates: np.ndarray
    static_vector: np.ndarray
    target: np.ndarray
    anchor_date: Optional[dt.date] = None
    target_dates: tuple[str, ...] = ()


def build_windows(
    features: np.ndarray,
    targets: np.ndarray,
    lookback: int,
    horizon: int,
    stride: int = 1,
    dates: Optional[Sequence[dt.date]] = None,
    static_vector: Optional[np.ndarray] = None,
    future_mask: Optional[np.ndarray] = None,
) -> list[WindowSample]:
    """Slide a (lookback, horizon) window over aligned features/targets.

    Sample count is T - lookback - horizon + 1 at stride 1. ``future_mask``
    selects which feature columns are knowable for future rows; masked-out
    columns are zeroed there.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DataError(f"features {x.shape} and targets {y.shape} are misaligned")
    if lookback < 1 or horizon < 1 or stride < 1:
        raise ConfigError("lookback, horizon, and stride must all be >= 1")
    total = x.shape[0]
    if total < lookback + horizon:
        raise DataError(f"{total} rows cannot host lookback {lookback} + horizon {horizon}")
    if future_mask is None:
        future_mask = np.zeros(x.shape[1], dtype=bool)
    static = np.zeros(0) if static_vector is None else np.asarray(static_vector, dtype=np.float64)

    samples = []
    for anchor in range(lookback - 1, total - horizon, stride):
        fut_rows = x[anchor + 1 : anchor + 1 + horizon] * future_mask
        samples.append(
            WindowSample(
                lookback=x[anchor - lookback + 1 : anchor + 1].copy(),
                future_covariates=fut_rows,
                static_vector=static,
                target=y[anchor + 1 : anchor + 1 + horizon].copy(),
                anchor_date=dates[anchor] if dates is not None else None,
                target_dates=(
                    tuple(d.strftime(DATE_FORMAT) for d in dates[anchor + 1 : anchor + 1 + horizon])
                    if dates is not None
                    else ()
                ),
            )
        )
    return samples


# ---------------------------------------------------------------------------
# static covariates and calendar features


@dataclass(frozen=True)
class StaticVocab:
    """Registered sector/exchange categories for one run."""

    sectors: tuple[str, ...]
    exchanges: tuple[str, ...]

    @classmethod
    def from_series(cls, series_list: Iterable[StockSeries]) -> "StaticVocab":
        series_list = list(series_list)
        return cls(
            tuple(sorted({s.sector for s in series_list})),
            tuple(sorted({s.exchange for s in series_list})),
        )

    @property
    def dim(self) -> int:
        return len(self.sectors) + len(self.exchanges)

    def encode(self, sector: str, exchange: str) -> np.ndarray:
        if sector not in self.sectors:
            raise VocabularyError(f"unknown sector {sector!r}; registered: {self.sectors}")
        if exchange not in self.exchanges:
            raise VocabularyError(f"unknown exchange {exchange!r}; registered: {self.exchanges}")
        vec = np.zeros(self.dim)
        vec[self.sectors.index(sector)] = 1.0
        vec[len(self.sectors) + self.exchanges.index(exchange)] = 1.0
        return vec


def encode_static(series: StockSeries, vocab: StaticVocab) -> np.ndarray:
    """Concatenated one-hot encoding of (sector, exchange)."""
    return vocab.encode(series.sector, series.exchange)


def calendar_matrix(dates: Sequence[dt.date]) -> np.ndarray:
    """Day-of-week one-hot rows (Monday..Sunday)."""
    out = np.zeros((len(dates), 7))
    for i, d in enumerate(dates):
        out[i, d.weekday()] = 1.0
    return out


# ---------------------------------------------------------------------------
# synthetic series


def synthesize(kind: str, length: int, seed: int, **params) -> StockSeries:
    """Generate a deterministic synthetic daily series for testing.

    Kinds: ``sine`` (amplitude, period, offset, phase), ``ar1`` (mean, phi,
    sigma), ``gbm`` (start, drift, vol). OHLC columns are fixed small
    fractions of the close; volume follows a deterministic seasonal pattern.
    """
    if length < 2:
        raise ConfigError(f"synthetic series length must be >= 2, got {length}")
    t = np.arange(length, dtype=np.float64)
    if kind == "sine":
        amplitude = float(params.pop("amplitude", 10.0))
        period = float(params.pop("period", 40.0))
        offset = float(params.pop("offset", 100.0))
        phase = float(params.pop("phase", 0.0))
        _no_extras(kind, params)
        if offset - abs(amplitude) <= 0.0:
            raise ConfigError(f"sine offset {offset} with amplitude {amplitude} yields non-positive prices")
        close = amplitude * np.sin(2.0 * np.pi * t / period + phase) + offset
    elif kind == "ar1":
        mean = float(params.pop("mean", 100.0))
        phi = float(params.pop("phi", 0.9))
        sigma = float(params.pop("sigma", 2.0))
        _no_extras(kind, params)
        eps = RngState(seed).stream("synthesize").standard_normal(length)
        close = np.empty(length)
        close[0] = mean
        for i in range(1, length):
            close[i] = mean + phi * (close[i - 1] - mean) + sigma * eps[i]
        if np.any(close <= 0.0):
            raise ConfigError("ar1 parameters produced non-positive prices; raise mean or lower sigma")
    elif kind == "gbm":
        start = float(params.pop("start", 100.0))
        drift = float(params.pop("drift", 0.0005))
        vol = float(params.pop("vol", 0.01))
        _no_extras(kind, params)
        if start <= 0.0:
            raise ConfigError(f"gbm start price must be positive, got {start}")
        eps = RngState(seed).stream("synthesize").standard_normal(length)
        steps = (drift - 0.5 * vol * vol) + vol * eps
        steps[0] = 0.0
        close = start * np.exp(np.cumsum(steps))
    else:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected sine, ar1, or gbm")

    volume = 1e6 * (1.0 + 0.2 * np.sin(2.0 * np.pi * t / 17.0) + 0.05 * np.cos(2.0 * np.pi * t / 7.0))
    dates = trading_days(dt.date(2015, 1, 5), length)
    bars = [
        OhlcvBar(
            date=dates[i],
            open=close[i] * 0.995,
            high=close[i] * 1.01,
            low=close[i] * 0.99,
            close=close[i],
            adj_close=close[i],
            volume=volume[i],
        )
        for i in range(length)
    ]
    return StockSeries(f"SYN-{kind.upper()}", "synthetic", "SIM", bars)


def _no_extras(kind: str, params: dict) -> None:
    if params:
        raise ConfigError(f"unknown {kind} parameters: {sorted(params)}")


def trading_days(start: dt.date, count: int) -> list[dt.date]:
    """``count`` consecutive weekdays beginning at/after ``start``."""
    days = []
    d = start
    while len(days) < count:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


# ---------------------------------------------------------------------------
# prepared dataset


@dataclass(frozen=True)
class DatasetConfig:
    lookback: int = 3
    horizon: int = 1
    stride: int = 1
    train_fraction: float = 0.7
    calendar_features: bool = True
    log_volume: bool = False
    indicators: IndicatorConfig = field(default_factory=IndicatorConfig)

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1 or self.stride < 1:
            raise ConfigError("lookback, horizon, and stride must all be >= 1")

    def feature_names(self) -> tuple[str, ...]:
        names = FEATURE_COLUMNS
        if self.calendar_features:
            names = names + CALENDAR_COLUMNS
        return names

    def to_dict(self) -> dict:
        d = {
            "lookback": self.lookback,
            "horizon": self.horizon,
            "stride": self.stride,
            "train_fraction": self.train_fraction,
            "calendar_features": self.calendar_features,
            "log_volume": self.log_volume,
            "indicators": vars(self.indicators).copy(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        ind = IndicatorConfig(**d.pop("indicators"))
        return cls(indicators=ind, **d)


@dataclass
class PreparedSplit:
    """Stacked window arrays for one phase, over all tickers."""

    lookback: np.ndarray  # (N, H, k)
    future: np.ndarray  # (N, F, k)
    static: np.ndarray  # (N, s)
    target: np.ndarray  # (N, F)
    stock_ids: np.ndarray  # (N,)
    anchor_dates: list[str]
    target_dates: list[tuple[str, ...]]

    def __len__(self):
        return self.lookback.shape[0]

    def subset(self, index: np.ndarray) -> "PreparedSplit":
        return PreparedSplit(
            self.lookback[index],
            self.future[index],
            self.static[index],
            self.target[index],
            self.stock_ids[index],
            [self.anchor_dates[i] for i in index],
            [self.target_dates[i] for i in index],
        )


@dataclass
class PreparedDataset:
    config: DatasetConfig
    vocab: StaticVocab
    tickers: list[str]
    normalizers: dict[str, NormalizationSpec]
    train: PreparedSplit
    test: PreparedSplit
    provenance: dict

    @property
    def feature_dim(self) -> int:
        return self.train.lookback.shape[2]

    @property
    def static_dim(self) -> int:
        return self.train.static.shape[1]

    @property
    def target_column(self) -> int:
        return TARGET_COLUMN_INDEX


def prepare(series_list: Sequence[StockSeries], config: DatasetConfig) -> PreparedDataset:
    """Run the full pipeline over one or more tickers and merge the windows."""
    if not series_list:
        raise DataError("no input series")
    vocab = StaticVocab.from_series(series_list)
    tickers = [s.ticker for s in series_list]
    if len(set(tickers)) != len(tickers):
        raise DataError(f"duplicate tickers in {tickers}")

    normalizers: dict[str, NormalizationSpec] = {}
    train_parts: list[list[WindowSample]] = []
    test_parts: list[list[WindowSample]] = []
    stock_of_part: list[int] = []
    min_rows = config.lookback + config.horizon

    for stock_id, series in enumerate(series_list):
        matrix, warm = build_feature_matrix(series, config.indicators)
        dates = series.dates[warm:]
        if config.log_volume:
            matrix = matrix.copy()
            matrix[:, FEATURE_COLUMNS.index("volume")] = np.log1p(matrix[:, FEATURE_COLUMNS.index("volume")])
        train_range, test_range = chronological_split(matrix.shape[0], config.train_fraction, min_rows)
        spec = fit_normalizer(
            matrix[train_range.start : train_range.stop],
            TARGET_COLUMN_INDEX,
            FEATURE_COLUMNS,
        )
        normalizers[series.ticker] = spec
        static = encode_static(series, vocab)

        normalized = spec.normalize(matrix)
        if config.calendar_features:
            features = np.hstack([normalized, calendar_matrix(dates)])
            future_mask = np.array([False] * len(FEATURE_COLUMNS) + [True] * len(CALENDAR_COLUMNS))
        else:
            features = normalized
            future_mask = np.zeros(len(FEATURE_COLUMNS), dtype=bool)
        targets = normalized[:, TARGET_COLUMN_INDEX]

        for rng_, bucket in ((train_range, train_parts), (test_range, test_parts)):
            rows = slice(rng_.start, rng_.stop)
            bucket.append(
                build_windows(
                    features[rows],
                    targets[rows],
                    config.lookback,
                    config.horizon,
                    config.stride,
                    dates=dates[rows],
                    static_vector=static,
                    future_mask=future_mask,
                )
            )
        stock_of_part.append(stock_id)

    def merge(parts: list[list[WindowSample]]) -> PreparedSplit:
        samples = [s for bucket in parts for s in bucket]
        ids = np.concatenate(
            [np.full(len(bucket), sid, dtype=np.int64) for sid, bucket in zip(stock_of_part, parts)]
        )
        return PreparedSplit(
            lookback=np.stack([s.lookback for s in samples]),
            future=np.stack([s.future_covariates for s in samples]),
            static=np.stack([s.static_vector for s in samples]),
            target=np.stack([s.target for s in samples]),
            stock_ids=ids,
            anchor_dates=[s.anchor_date.strftime(DATE_FORMAT) for s in samples],
            target_dates=[s.target_dates for s in samples],
        )

    return PreparedDataset(
        config=config,
        vocab=vocab,
        tickers=tickers,
        normalizers=normalizers,
        train=merge(train_parts),
        test=merge(test_parts),
        provenance={},
    )


# ---------------------------------------------------------------------------
# manifest files


def parse_manifest(text: str) -> list[dict]:
    """Parse the line-oriented ticker manifest (key=value pairs per line)."""
    records = []
    required = {"ticker", "sector", "exchange", "path"}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        record = {}
        for token in line.split():
            if "=" not in token:
                raise FormatError(f"manifest line {lineno}: expected key=value tokens, got {token!r}")
            key, value = token.split("=", 1)
            record[key] = value
        missing = required - record.keys()
        if missing:
            raise FormatError(f"manifest line {lineno}: missing keys {sorted(missing)}")
        records.append(record)
    if not records:
        raise DataError("manifest contains no records")
    return records


def format_manifest_record(ticker: str, sector: str, exchange: str, path: str) -> str:
    return f"ticker={ticker} sector={sector} exchange={exchange} path={path}"


# ---------------------------------------------------------------------------
# binary cache


def _pack_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    code = {"float64": b"f", "int64": b"i"}[str(arr.dtype)]
    buf.write(code)
    buf.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<Q", d))
    buf.write(arr.astype("<f8" if code == b"f" else "<i8").tobytes())


def _unpack_array(buf: io.BytesIO) -> np.ndarray:
    code = buf.read(1)
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = tuple(struct.unpack("<Q", buf.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    dtype = "<f8" if code == b"f" else "<i8"
    data = np.frombuffer(buf.read(count * 8), dtype=dtype)
    return data.reshape(shape).astype(np.float64 if code == b"f" else np.int64)


def _split_meta(split: PreparedSplit) -> dict:
    return {"anchor_dates": split.anchor_dates, "target_dates": [list(t) for t in split.target_dates]}


def serialize_dataset(ds: PreparedDataset) -> bytes:
    """Versioned binary form of a prepared dataset (deterministic bytes)."""
    meta = {
        "config": ds.config.to_dict(),
        "vocab": {"sectors": list(ds.vocab.sectors), "exchanges": list(ds.vocab.exchanges)},
        "tickers": ds.tickers,
        "normalizers": {t: spec.to_dict() for t, spec in sorted(ds.normalizers.items())},
        "train": _split_meta(ds.train),
        "test": _split_meta(ds.test),
        "provenance": ds.provenance,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CACHE_MAGIC)
    buf.write(struct.pack("<I", CACHE_VERSION))
    buf.write(struct.pack("<Q", len(meta_bytes)))
    buf.write(meta_bytes)
    for split in (ds.train, ds.test):
        for arr in (split.lookback, split.future, split.static, split.target, split.stock_ids):
            _pack_array(buf, arr)
    return buf.getvalue()


def deserialize_dataset(blob: bytes) -> PreparedDataset:
    buf = io.BytesIO(blob)
    magic = buf.read(len(CACHE_MAGIC))
    if magic != CACHE_MAGIC:
        raise FormatError(f"not a dataset cache (magic {magic!r})")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CACHE_VERSION:
        raise FormatError(f"unsupported dataset cache version {version}")
    (meta_len,) = struct.unpack("<Q", buf.read(8))
    meta = json.loads(buf.read(meta_len).decode("utf-8"))

    splits = []
    for phase in ("train", "test"):
        arrays = [_unpack_array(buf) for _ in range(5)]
        splits.append(
            PreparedSplit(
                lookback=arrays[0],
                future=arrays[1],
                static=arrays[2],
                target=arrays[3],
                stock_ids=arrays[4],
                anchor_dates=list(meta[phase]["anchor_dates"]),
                target_dates=[tuple(t) for t in meta[phase]["target_dates"]],
            )
        )
    return PreparedDataset(
        config=DatasetConfig.from_dict(meta["config"]),
        vocab=StaticVocab(tuple(meta["vocab"]["sectors"]), tuple(meta["vocab"]["exchanges"])),
        tickers=list(meta["tickers"]),
        normalizers={t: NormalizationSpec.from_dict(d) for t, d in meta["normalizers"].items()},
        train=splits[0],
        test=splits[1],
        provenance=meta.get("provenance", {}),
    )


def save_dataset(path, ds: PreparedDataset) -> str:
    """Write the cache file and return its content digest (hex)."""
    blob = serialize_dataset(ds)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load_dataset(path) -> tuple[PreparedDataset, str]:
    with open(path, "rb") as fh:
        blob = fh.read()
    return deserialize_dataset(blob), hashlib.sha256(blob).hexdigest()
