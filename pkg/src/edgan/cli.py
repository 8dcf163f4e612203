"""Batch command-line interface: ingest -> train -> evaluate -> compare -> plot.

Configuration lives in an optional key=value file (``--config``); command-line
flags win over file values. Outputs land under ``--out``; relative output
paths are resolved against ``$EDGAN_OUT_ROOT`` when that variable is set.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as dataio
from . import report
from .errors import ConfigError, DataError, EdganError, NumericError
from .indicators import IndicatorConfig
from .models import (
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    canonical_digest,
    load_checkpoint,
    restore_params,
)
from .training import EpochRecord, TrainConfig, Trainer

OUT_ROOT_ENV = "EDGAN_OUT_ROOT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageExit(message)


class UsageExit(EdganError):
    pass


def _out_path(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


# ---------------------------------------------------------------------------
# config files


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value file; '#' starts a comment, blank lines are ignored."""
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(value: str):
    for caster in (int, float):
        try:
            return caster(value)
        except ValueError:
            pass
    lowered = value.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if "," in value:
        return tuple(int(v) for v in value.split(","))
    return value


def _collect(prefix: str, config: dict[str, str]) -> dict:
    out = {}
    for key, value in config.items():
        if key.startswith(prefix + "."):
            out[key[len(prefix) + 1 :]] = _coerce(value)
    return out


def _bare(config: dict[str, str]) -> dict:
    return {k: _coerce(v) for k, v in config.items() if "." not in k}


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    params = {}
    for name in ("amplitude", "period", "offset", "phase", "mean", "phi", "sigma", "start", "drift", "vol"):
        value = getattr(args, name)
        if value is not None:
            params[name] = value
    series = dataio.synthesize(args.kind, args.length, args.seed, **params)
    if args.ticker:
        series.ticker = args.ticker
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dataio.serialize_csv(series), encoding="utf-8")
    print(f"wrote {len(series)} rows to {out}")
    if args.manifest:
        manifest = _out_path(args.manifest)
        manifest.parent.mkdir(parents=True, exist_ok=True)
        record = dataio.format_manifest_record(series.ticker, args.sector, args.exchange, str(args.out))
        with open(manifest, "a", encoding="utf-8") as fh:
            fh.write(record + "\n")
        print(f"registered {series.ticker} in {manifest}")
    return 0


def cmd_ingest(args) -> int:
    config = parse_config_file(args.config) if args.config else {}
    data_kw = _collect("data", config)
    ind_kw = _collect("ind", config)
    if args.lookback is not None:
        data_kw["lookback"] = args.lookback
    if args.horizon is not None:
        data_kw["horizon"] = args.horizon
    if args.train_fraction is not None:
        data_kw["train_fraction"] = args.train_fraction
    if args.no_calendar:
        data_kw["calendar_features"] = False
    ds_config = dataio.DatasetConfig(indicators=IndicatorConfig(**ind_kw), **data_kw)

    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise DataError(f"manifest file not found: {manifest_path}")
    records = dataio.parse_manifest(manifest_path.read_text(encoding="utf-8"))
    series_list = []
    provenance_files = []
    for record in records:
        csv_path = Path(record["path"])
        if not csv_path.is_absolute():
            csv_path = manifest_path.parent / csv_path
        if not csv_path.exists():
            raise DataError(f"data file not found: {csv_path} (ticker {record['ticker']})")
        series, skipped = dataio.parse_csv(
            csv_path.read_text(encoding="utf-8"),
            strict=not args.lenient,
            ticker=record["ticker"],
            sector=record["sector"],
            exchange=record["exchange"],
        )
        series_list.append(series)
        provenance_files.append({"ticker": record["ticker"], "path": record["path"], "rows": len(series), "skipped": skipped})

    dataset = dataio.prepare(series_list, ds_config)
    dataset.provenance = {"manifest": str(args.manifest), "files": provenance_files}
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = dataio.save_dataset(out, dataset)
    print(f"cached {len(dataset.train)} train / {len(dataset.test)} test windows to {out}")
    print(f"dataset digest {digest}")
    return 0


def _train_configs(args, dataset) -> tuple[TrainConfig, GeneratorConfig, DiscriminatorConfig | None]:
    config = parse_config_file(args.config) if args.config else {}
    train_kw = _bare(config)
    for flag in ("variant", "epochs", "seed", "batch_size", "lr_g", "lr_d", "mu", "penalty_weight", "critic_steps", "checkpoint_every"):
        value = getattr(args, flag)
        if value is not None:
            train_kw[flag] = value
    variant = train_kw.pop("variant", "edgan")
    cfg = TrainConfig.for_variant(variant, **train_kw)

    gen_kw = _collect("gen", config)
    gen_cfg = GeneratorConfig(
        lookback=dataset.config.lookback,
        horizon=dataset.config.horizon,
        feature_dim=dataset.feature_dim,
        static_dim=dataset.static_dim,
        target_column=dataset.target_column,
        noise_dim=cfg.noise_dim if cfg.variant == "basic_gan" else 0,
        **gen_kw,
    )
    disc_kw = _collect("disc", config)
    disc_cfg = None
    if disc_kw:
        disc_cfg = DiscriminatorConfig(
            seq_len=dataset.config.lookback + dataset.config.horizon,
            in_channels=1 + dataset.feature_dim + dataset.static_dim,
            sigmoid_output=cfg.variant != "wgan_gp",
            **disc_kw,
        )
    return cfg, gen_cfg, disc_cfg


def cmd_train(args) -> int:
    dataset, dataset_digest = dataio.load_dataset(args.dataset)
    cfg, gen_cfg, disc_cfg = _train_configs(args, dataset)
    trainer = Trainer(dataset, cfg, gen_cfg, disc_cfg, dataset_digest)

    run_dir = _out_path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "created_at": dt.datetime.now(dt.timezone.utc).isoformat(),
        "config_file": args.config,
        "dataset_path": str(args.dataset),
        "dataset_digest": dataset_digest,
        "seed": cfg.seed,
        "variant": cfg.variant,
        "config_digest": trainer.config_digest(),
        "train_config": cfg.numeric_fields() | {"seed": cfg.seed, "checkpoint_every": cfg.checkpoint_every},
        "generator_config": trainer.gen_cfg.to_dict(),
        "discriminator_config": trainer.disc_cfg.to_dict(),
        "out_dir": str(run_dir),
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")

    with open(run_dir / "epochs.log", "w", encoding="utf-8") as log_stream:
        result = trainer.run(log_stream=log_stream, checkpoint_dir=run_dir)
    with open(run_dir / "timings.log", "w", encoding="utf-8") as fh:
        for record in result.records:
            fh.write(f"epoch={record.epoch} secs={record.seconds:.3f}\n")
    report.emit_plot_data("convergence", result.records, run_dir / "convergence.csv")
    print(f"trained {cfg.variant} for {cfg.epochs} epochs; final val_mse={result.records[-1].val_mse!r}")
    print(f"run directory {run_dir}")
    return 0


def _load_run_generator(run_dir: Path):
    checkpoint = run_dir / "checkpoint_final.bin"
    if not checkpoint.exists():
        raise DataError(f"no checkpoint at {checkpoint}")
    meta, params, _ = load_checkpoint(checkpoint)
    gen = Generator(GeneratorConfig.from_dict(meta["generator_config"]))
    restore_params(gen.params(), params)
    return gen, meta


def cmd_evaluate(args) -> int:
    run_dir = _out_path(args.run)
    gen, meta = _load_run_generator(run_dir)
    dataset_path = args.dataset
    if dataset_path is None:
        manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
        dataset_path = manifest["dataset_path"]
    dataset, digest = dataio.load_dataset(dataset_path)
    if meta["dataset_digest"] != digest:
        raise DataError(
            "dataset digest mismatch: checkpoint was trained on "
            f"{meta['dataset_digest']} but {dataset_path} has {digest}"
        )
    rows = report.evaluate_run(gen, dataset, meta["variant"])
    out = run_dir / "metrics.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("stock,phase,variant,scale,rmse,mae,r2\n")
        for r in rows:
            fh.write(f"{r.stock},{r.phase},{r.variant},{r.scale},{r.rmse!r},{r.mae!r},{r.r2!r}\n")
    print(f"wrote {len(rows)} metric rows to {out}")
    return 0


def _read_metrics_csv(path: Path) -> list[report.MetricsRow]:
    lines = path.read_text(encoding="utf-8").splitlines()
    rows = []
    for line in lines[1:]:
        stock, phase, variant, scale, rmse_v, mae_v, r2_v = line.split(",")
        rows.append(report.MetricsRow(stock, phase, variant, float(rmse_v), float(mae_v), float(r2_v), scale))
    return rows


def cmd_compare(args) -> int:
    digests = {}
    rows: list[report.MetricsRow] = []
    for raw in args.runs:
        run_dir = _out_path(raw)
        manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
        digests[str(run_dir)] = manifest["dataset_digest"]
        metrics_path = run_dir / "metrics.csv"
        if not metrics_path.exists():
            raise DataError(f"{run_dir} has no metrics.csv; run the evaluate command first")
        rows.extend(_read_metrics_csv(metrics_path))
    if len(set(digests.values())) > 1:
        detail = "\n".join(f"  {run}: {digest}" for run, digest in digests.items())
        raise DataError(f"refusing to compare runs over different dataset digests:\n{detail}")
    text, csv_text = report.comparison_table(rows)
    if args.out:
        base = _out_path(args.out)
        base.parent.mkdir(parents=True, exist_ok=True)
        Path(str(base) + ".txt").write_text(text, encoding="utf-8")
        Path(str(base) + ".csv").write_text(csv_text, encoding="utf-8")
        print(f"wrote {base}.txt and {base}.csv")
    else:
        print(text, end="")
    return 0


def _records_from_log(path: Path) -> list[EpochRecord]:
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        fields = dict(part.split("=", 1) for part in line.split())
        records.append(
            EpochRecord(
                epoch=int(fields["epoch"]),
                j_g=float(fields["jg"]),
                j_d=float(fields["jd"]),
                val_mse=float(fields["val_mse"]),
                penalty=float(fields["penalty"]) if "penalty" in fields else None,
            )
        )
    return records


def cmd_plot(args) -> int:
    run_dir = _out_path(args.run)
    base = _out_path(args.out) if args.out else run_dir / args.kind
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = Path(str(base) + ".csv")
    svg_path = Path(str(base) + ".svg")
    if args.kind == "convergence":
        records = _records_from_log(run_dir / "epochs.log")
        report.emit_plot_data("convergence", records, csv_path, svg_path)
    else:
        gen, meta = _load_run_generator(run_dir)
        dataset_path = args.dataset
        if dataset_path is None:
            manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
            dataset_path = manifest["dataset_path"]
        dataset, digest = dataio.load_dataset(dataset_path)
        if meta["dataset_digest"] != digest:
            raise DataError(
                f"dataset digest mismatch: checkpoint {meta['dataset_digest']} vs {dataset_path} {digest}"
            )
        stock = args.stock or dataset.tickers[0]
        rows = report.forecast_overlay_rows(gen, dataset, stock)
        report.emit_plot_data("forecast_overlay", rows, csv_path, svg_path)
    print(f"wrote {csv_path} and {svg_path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="edgan", description="Adversarial time-series forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic OHLCV fixture")
    p.add_argument("--kind", choices=("sine", "ar1", "gbm"), required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--ticker", default="")
    p.add_argument("--sector", default="synthetic")
    p.add_argument("--exchange", default="SIM")
    p.add_argument("--manifest", help="append a manifest record for this series")
    for name in ("amplitude", "period", "offset", "phase", "mean", "phi", "sigma", "start", "drift", "vol"):
        p.add_argument(f"--{name}", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse, feature-engineer, window, and cache a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="dataset cache path")
    p.add_argument("--config")
    p.add_argument("--lookback", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--no-calendar", action="store_true")
    p.add_argument("--lenient", action="store_true", help="skip bad rows instead of failing")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one variant on a cached dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config")
    p.add_argument("--variant", choices=("edgan", "basic_gan", "wgan_gp", "dragan"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-g", dest="lr_g", type=float)
    p.add_argument("--lr-d", dest="lr_d", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--penalty-weight", dest="penalty_weight", type=float)
    p.add_argument("--critic-steps", dest="critic_steps", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compute metrics for a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--dataset", help="defaults to the dataset recorded in the run manifest")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="merge evaluated runs into a comparison table")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", help="output base path (.txt and .csv)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="emit plot CSV/SVG for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--kind", choices=("convergence", "forecast_overlay"), required=True)
    p.add_argument("--stock")
    p.add_argument("--dataset")
    p.add_argument("--out", help="output base path (.csv and .svg)")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageExit as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except EdganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
