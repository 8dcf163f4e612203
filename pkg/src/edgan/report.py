"""Metrics, comparison tables, and plot data export.

All numeric artifacts (aligned text table, CSV twin, SVG chart) derive from
the same in-memory rows; CSV numbers use ``repr`` so a re-parse reproduces
the exact float64 values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import PreparedDataset, PreparedSplit
from .errors import ContractError, DegenerateInputError
from .models import Generator

METRICS = ("rmse", "mae", "r2")
# Higher is better only for r2.
MAXIMIZE = {"rmse": False, "mae": False, "r2": True}


def _paired(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y, dtype=np.float64).reshape(-1)
    b = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ContractError("metric over empty vectors")
    if a.shape != b.shape:
        raise ContractError(f"metric length mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(y, y_hat) -> float:
    a, b = _paired(y, y_hat)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae(y, y_hat) -> float:
    a, b = _paired(y, y_hat)
    return float(np.mean(np.abs(a - b)))


def r2(y, y_hat) -> float:
    a, b = _paired(y, y_hat)
    total = float(np.sum((a - a.mean()) ** 2))
    if total == 0.0:
        raise DegenerateInputError("r2 is undefined for a constant target vector")
    return 1.0 - float(np.sum((a - b) ** 2)) / total


@dataclass(frozen=True)
class MetricsRow:
    stock: str
    phase: str  # train | test
    variant: str
    rmse: float
    mae: float
    r2: float
    scale: str  # normalized | price

    def metric(self, name: str) -> float:
        return getattr(self, name)


def evaluate_run(
    generator: Generator,
    dataset: PreparedDataset,
    variant: str,
) -> list[MetricsRow]:
    """Per-stock metrics on both phases and both scales.

    Price-scale values denormalize the target column with the stock's fitted
    spec; normalized values use the model's native units.
    """
    rows: list[MetricsRow] = []
    for stock_id, ticker in enumerate(dataset.tickers):
        spec = dataset.normalizers[ticker]
        for phase, split in (("train", dataset.train), ("test", dataset.test)):
            index = np.flatnonzero(split.stock_ids == stock_id)
            if index.size == 0:
                raise ContractError(f"no {phase} samples for stock {ticker}")
            predictions = generator.predict(split, index)
            targets = split.target[index]
            rows.append(
                MetricsRow(
                    ticker,
                    phase,
                    variant,
                    rmse(targets, predictions),
                    mae(targets, predictions),
                    r2(targets, predictions),
                    "normalized",
                )
            )
            price_t = spec.denormalize_target(targets)
            price_p = spec.denormalize_target(predictions)
            rows.append(
                MetricsRow(
                    ticker,
                    phase,
                    variant,
                    rmse(price_t, price_p),
                    mae(price_t, price_p),
                    r2(price_t, price_p),
                    "price",
                )
            )
    return rows


# ---------------------------------------------------------------------------
# comparison table


def comparison_table(rows: Sequence[MetricsRow]) -> tuple[str, str]:
    """Render rows grouped by stock/scale/phase/metric with variants as columns.

    Returns (aligned text table, CSV twin). The best test value per metric is
    flagged with ``*`` (strict minimum for rmse/mae, maximum for r2; ties are
    flagged jointly). Duplicate (stock, phase, variant, scale) entries are an
    error.
    """
    if not rows:
        raise ContractError("comparison table needs at least one row")
    seen = set()
    for row in rows:
        key = (row.stock, row.phase, row.variant, row.scale)
        if key in seen:
            raise ContractError(f"duplicate metrics row for {key}")
        seen.add(key)

    variants = _ordered_unique(r.variant for r in rows)
    stocks = _ordered_unique(r.stock for r in rows)
    scales = _ordered_unique(r.scale for r in rows)
    phases = _ordered_unique(r.phase for r in rows)
    by_key = {(r.stock, r.scale, r.phase, r.variant): r for r in rows}

    header = ["stock", "scale", "phase", "metric"] + list(variants)
    table_rows: list[list[str]] = []
    csv_lines = [",".join(header + ["best"])]
    for stock in stocks:
        for scale in scales:
            for phase in phases:
                variant_rows = {v: by_key.get((stock, scale, phase, v)) for v in variants}
                if all(r is None for r in variant_rows.values()):
                    continue
                for metric in METRICS:
                    values = {
                        v: (variant_rows[v].metric(metric) if variant_rows[v] is not None else None)
                        for v in variants
                    }
                    flagged = _best_variants(values, metric) if phase == "test" and len(variants) > 1 else set()
                    cells = []
                    csv_cells = []
                    for v in variants:
                        value = values[v]
                        if value is None:
                            cells.append("-")
                            csv_cells.append("")
                            continue
                        mark = "*" if v in flagged else ""
                        cells.append(f"{value:.4f}{mark}")
                        csv_cells.append(repr(value))
                    table_rows.append([stock, scale, phase, metric] + cells)
                    csv_lines.append(
                        ",".join([stock, scale, phase, metric] + csv_cells + [";".join(sorted(flagged))])
                    )

    widths = [max(len(h), *(len(r[i]) for r in table_rows)) for i, h in enumerate(header)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    for row in table_rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n", "\n".join(csv_lines) + "\n"


def _ordered_unique(items: Iterable[str]) -> tuple[str, ...]:
    out = []
    for item in items:
        if item not in out:
            out.append(item)
    return tuple(out)


def _best_variants(values: dict[str, Optional[float]], metric: str) -> set[str]:
    present = {v: x for v, x in values.items() if x is not None}
    if not present:
        return set()
    best = max(present.values()) if MAXIMIZE[metric] else min(present.values())
    return {v for v, x in present.items() if x == best}


def parse_table_csv(text: str) -> list[dict]:
    """Re-parse the CSV twin into records with exact float values."""
    lines = [line for line in text.splitlines() if line]
    header = lines[0].split(",")
    variant_names = header[4:-1]
    out = []
    for line in lines[1:]:
        cells = line.split(",")
        record = dict(zip(header[:4], cells[:4]))
        values = {}
        for name, cell in zip(variant_names, cells[4:-1]):
            values[name] = float(cell) if cell else None
        record["values"] = values
        record["best"] = set(cells[-1].split(";")) if cells[-1] else set()
        out.append(record)
    return out


# ---------------------------------------------------------------------------
# plot data


def forecast_overlay_rows(
    generator: Generator, dataset: PreparedDataset, stock: str
) -> list[tuple[str, float, float]]:
    """(date, real, predicted) triples over the test split, price scale."""
    stock_id = dataset.tickers.index(stock)
    split = dataset.test
    index = np.flatnonzero(split.stock_ids == stock_id)
    if index.size == 0:
        raise ContractError(f"no test samples for stock {stock}")
    spec = dataset.normalizers[stock]
    predictions = spec.denormalize_target(generator.predict(split, index))
    targets = spec.denormalize_target(split.target[index])
    rows = []
    for row, i in enumerate(index):
        for t, date in enumerate(split.target_dates[i]):
            rows.append((date, float(targets[row, t]), float(predictions[row, t])))
    return rows


def emit_plot_data(kind: str, source, csv_path, svg_path=None) -> None:
    """Write plot CSV (and optional SVG line chart) for a data source.

    ``forecast_overlay`` takes (date, real, predicted) triples;
    ``convergence`` takes EpochRecord-like objects.
    """
    if kind == "forecast_overlay":
        rows = list(source)
        if not rows:
            raise ContractError("forecast overlay without data")
        header = ["date", "real", "predicted"]
        lines = [",".join(header)]
        for date, real, predicted in rows:
            lines.append(f"{date},{real!r},{predicted!r}")
        series = {
            "real": [(i, row[1]) for i, row in enumerate(rows)],
            "predicted": [(i, row[2]) for i, row in enumerate(rows)],
        }
        title = "real vs predicted"
    elif kind == "convergence":
        records = list(source)
        if not records:
            raise ContractError("convergence plot without epoch records")
        header = ["epoch", "jg", "jd", "val_mse"]
        lines = [",".join(header)]
        for r in records:
            lines.append(f"{r.epoch},{r.j_g!r},{r.j_d!r},{r.val_mse!r}")
        series = {
            "jg": [(r.epoch, r.j_g) for r in records],
            "jd": [(r.epoch, r.j_d) for r in records],
            "val_mse": [(r.epoch, r.val_mse) for r in records],
        }
        title = "training convergence"
    else:
        raise ContractError(f"unknown plot kind {kind!r}")

    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    if svg_path is not None:
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(render_line_chart(series, title))


SVG_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b")


def render_line_chart(series: dict[str, list[tuple[float, float]]], title: str) -> str:
    """Minimal static SVG 1.1 line chart with axes and a legend."""
    width, height, margin = 800, 480, 60
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<title>{title}</title>',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{margin}" y="{height - margin + 30}" font-size="12">{_fmt(x_lo)}</text>',
        f'<text x="{width - margin - 40}" y="{height - margin + 30}" font-size="12">{_fmt(x_hi)}</text>',
        f'<text x="5" y="{height - margin}" font-size="12">{_fmt(y_lo)}</text>',
        f'<text x="5" y="{margin}" font-size="12">{_fmt(y_hi)}</text>',
        f'<text x="{width / 2 - 60}" y="25" font-size="14">{title}</text>',
    ]
    for i, (name, pts) in enumerate(series.items()):
        color = SVG_COLORS[i % len(SVG_COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        legend_y = margin + 18 * i
        parts.append(f'<rect x="{width - margin - 130}" y="{legend_y - 10}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{width - margin - 112}" y="{legend_y}" font-size="12">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _fmt(x: float) -> str:
    return f"{x:.4g}"
