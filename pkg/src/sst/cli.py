"""Command-line front end: train / eval / bench / synth / report.

Exit codes: 0 success, 2 configuration errors, 3 data errors, 4 numeric
aborts.  Everything lands under --out as machine-readable files; stdout
gets a short human summary.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bench import bench_scaling, write_scaling
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import (SynthSpec, load_csv, make_windows, split_dataset,
                   synth_generate, write_csv)
from .errors import (ConfigError, DataError, MemoryCapExceededError,
                     NumericDomainError, SstError)
from .model import SstModel
from .patching import PatchSpec
from .training import (ForecastReport, TrainConfig, evaluate, train,
                       write_history)
from .variants import DLinearModel, VariantModel


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sst",
        description="multi-scale hybrid state-space/attention forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       dest="overrides",
                       help="override a config key (section.key=value or a "
                            "unique bare key); repeatable, last wins")
        p.add_argument("--seed", type=int, default=None,
                       help="override the command's RNG seed")
        p.add_argument("--out", default="run_out", help="output directory")

    for name, doc in (("train", "fit a model and write history/checkpoint/"
                                "report"),
                      ("eval", "score a saved checkpoint on the test split"),
                      ("bench", "time forward+backward across lookbacks"),
                      ("synth", "generate a synthetic CSV dataset")):
        common(sub.add_parser(name, help=doc))

    rep = sub.add_parser("report", help="aggregate run reports into a table")
    rep.add_argument("run_dirs", nargs="+", help="directories with report.json")
    rep.add_argument("--out", default="run_out", help="output directory")
    return parser


def _load_dataset(cfg: RunConfig):
    source = cfg.get("data", "source")
    if source == "synth":
        return synth_generate(SynthSpec(**cfg.section("synth")))
    if source == "csv":
        path = cfg.get("data", "path")
        if not path:
            raise ConfigError("[data] path is required when source = csv")
        return load_csv(path)
    raise ConfigError(f"[data] source must be synth or csv, got {source!r}")


def _split_windows(cfg: RunConfig, ds):
    lookback = cfg.get("series", "lookback")
    horizon = cfg.get("series", "horizon")
    stride = cfg.get("data", "stride")
    parts = split_dataset(ds, cfg.get("data", "split"),
                          ratios=cfg.get("data", "ratios"),
                          lookback_context=lookback)
    return tuple(make_windows(p, lookback, horizon, stride) for p in parts)


def _model_name(cfg: RunConfig) -> str:
    kind = cfg.get("model", "kind")
    return cfg.get("model", "variant") if kind == "variant" else kind


def build_model(cfg: RunConfig, variates: int, rng):
    """Instantiate the configured model family at the configured sizes."""
    kind = cfg.get("model", "kind")
    lookback = cfg.get("series", "lookback")
    horizon = cfg.get("series", "horizon")
    if kind == "sst":
        return SstModel(
            rng, variates=variates, lookback=lookback,
            short_len=cfg.get("series", "short_len"), horizon=horizon,
            d_model=cfg.get("model", "d_model"),
            long_spec=PatchSpec(cfg.get("patcher", "patch_long"),
                                cfg.get("patcher", "stride_long")),
            short_spec=PatchSpec(cfg.get("patcher", "patch_short"),
                                 cfg.get("patcher", "stride_short")),
            mamba_depth=cfg.get("mamba", "depth"),
            lwt_depth=cfg.get("lwt", "lwt_layers"),
            heads=cfg.get("lwt", "heads"),
            window=cfg.get("lwt", "window"),
            state_size=cfg.get("mamba", "state_size"),
            expand=cfg.get("mamba", "expand"),
            conv_width=cfg.get("mamba", "conv_width"),
            use_long=cfg.get("model", "use_long"),
            use_short=cfg.get("model", "use_short"),
            use_router=cfg.get("model", "use_router"),
            multi_scale=cfg.get("model", "multi_scale"),
            use_patcher=cfg.get("model", "use_patcher"))
    if kind == "variant":
        return VariantModel(
            rng, variant=cfg.get("model", "variant"),
            embedding=cfg.get("model", "embedding"), variates=variates,
            lookback=lookback, horizon=horizon,
            d_model=cfg.get("model", "d_model"),
            depth=cfg.get("model", "depth"), heads=cfg.get("lwt", "heads"),
            patch_spec=PatchSpec(cfg.get("patcher", "patch_short"),
                                 cfg.get("patcher", "stride_short")),
            state_size=cfg.get("mamba", "state_size"),
            expand=cfg.get("mamba", "expand"),
            conv_width=cfg.get("mamba", "conv_width"))
    if kind == "dlinear":
        return DLinearModel(rng, variates=variates, lookback=lookback,
                            horizon=horizon,
                            decomp_window=cfg.get("model", "decomp_window"))
    raise ConfigError(f"[model] kind must be sst, variant, or dlinear, "
                      f"got {kind!r}")


def train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.section("train")
    return TrainConfig(lr=t["lr"], beta1=t["beta1"], beta2=t["beta2"],
                       eps_adam=t["eps"], batch_size=t["batch_size"],
                       max_epochs=t["max_epochs"], patience=t["patience"],
                       seed=t["seed"], loss=t["loss"]).validate()


def _cmd_train(cfg: RunConfig, out: str) -> int:
    ds = _load_dataset(cfg)
    tr, va, te = _split_windows(cfg, ds)
    tcfg = train_config(cfg)
    model = build_model(cfg, ds.num_variates, np.random.default_rng(tcfg.seed))
    result = train(model, tr, va, tcfg)
    report = evaluate(model, te, model_name=_model_name(cfg),
                      batch_size=cfg.get("eval", "batch_size"))
    os.makedirs(out, exist_ok=True)
    write_history(result.history, os.path.join(out, "history.jsonl"))
    save_checkpoint(model.parameters(), os.path.join(out, "checkpoint.bin"))
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(f"trained {report.model} for {len(result.history)} epochs "
          f"(best val {result.best_val:.6g} at epoch {result.best_epoch}); "
          f"test mse {report.mse:.6g} mae {report.mae:.6g} -> {out}")
    return 0


def _cmd_eval(cfg: RunConfig, out: str) -> int:
    path = cfg.get("eval", "checkpoint")
    if not path:
        raise ConfigError("[eval] checkpoint is required for eval")
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint {path} does not exist")
    ds = _load_dataset(cfg)
    _, _, te = _split_windows(cfg, ds)
    model = build_model(cfg, ds.num_variates,
                        np.random.default_rng(cfg.get("train", "seed")))
    stored = load_checkpoint(path)
    params = model.parameters()
    missing = sorted(set(params) ^ set(stored))
    if missing:
        raise ConfigError(f"checkpoint does not match model; "
                          f"mismatched keys {missing[:4]}")
    for name, p in params.items():
        if stored[name].shape != p.data.shape:
            raise ConfigError(f"checkpoint shape {stored[name].shape} != "
                              f"model shape {p.data.shape} for {name!r}")
        p.data[...] = stored[name]
    report = evaluate(model, te, model_name=_model_name(cfg),
                      batch_size=cfg.get("eval", "batch_size"))
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(f"evaluated {report.model}: test mse {report.mse:.6g} "
          f"mae {report.mae:.6g} over {report.windows} windows -> {out}")
    return 0


def _cmd_bench(cfg: RunConfig, out: str) -> int:
    b = cfg.section("bench")
    records, slopes = bench_scaling(
        b["models"], b["lengths"], trials=b["trials"], d_model=b["d_model"],
        heads=b["heads"], window=b["window"], state_size=b["state_size"],
        horizon=cfg.get("series", "horizon"), dtype=b["dtype"],
        memory_cap_mb=b["memory_cap_mb"], seed=cfg.get("train", "seed"))
    write_scaling(records, slopes, out)
    for r in records:
        ms = "oom" if r.status == "oom" else f"{r.forward_backward_ms:10.2f}"
        print(f"{r.model:28s} L={r.length:<6d} {ms:>10s} ms "
              f"peak {r.peak_bytes / 1e6:10.2f} MB")
    for name, slope in sorted(slopes.items()):
        shown = slope if isinstance(slope, str) else f"{slope:.3f}"
        print(f"{name:28s} log-log slope {shown}")
    return 0


def _cmd_synth(cfg: RunConfig, out: str) -> int:
    ds = synth_generate(SynthSpec(**cfg.section("synth")))
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "synthetic.csv")
    write_csv(ds, path)
    print(f"wrote {ds.length} rows x {ds.num_variates} variates -> {path}")
    return 0


def _cmd_report(run_dirs, out: str) -> int:
    reports = []
    for d in run_dirs:
        path = os.path.join(d, "report.json")
        try:
            with open(path, encoding="utf-8") as fh:
                reports.append(ForecastReport.from_json(fh.read()))
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from None
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"malformed report {path}: {exc}") from None
    reports.sort(key=lambda r: (r.mse, r.model))
    header = ("model", "horizon", "windows", "mse", "mae", "router_mean")
    rows = [header]
    for r in reports:
        rows.append((r.model, str(r.horizon), str(r.windows),
                     f"{r.mse:.6f}", f"{r.mae:.6f}",
                     "-" if r.router_mean is None else f"{r.router_mean:.4f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    table = "\n".join(lines) + "\n"
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "comparison.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(table)
    with open(os.path.join(out, "comparison.jsonl"), "w",
              encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
    sys.stdout.write(table)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return _cmd_report(args.run_dirs, args.out)
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg.override(f"train.seed={args.seed}")
            cfg.override(f"synth.seed={args.seed}")
        handler = {"train": _cmd_train, "eval": _cmd_eval,
                   "bench": _cmd_bench, "synth": _cmd_synth}[args.command]
        return handler(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericDomainError, MemoryCapExceededError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 4
    except SstError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
