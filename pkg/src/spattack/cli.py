"""Command-line entry points: run, analyze, stats and fetch."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .config import (ConfigError, ExperimentConfig, build_federation_config, load_dataset,
                     parse_config, resolved_settings)
from .dataset import DatasetError, ParseError
from .evaluation import EpochReport
from .federation import METRICS, ExperimentResult, drop_vs_clean, run_experiment

CSV_HEADER = ("epoch", "hr5", "ndcg5", "hr10", "ndcg10", "diverged")


def _fmt(x: float) -> str:
    return repr(float(x))


def reports_csv(reports: list[EpochReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow([r.epoch, _fmt(r.hr5), _fmt(r.ndcg5), _fmt(r.hr10), _fmt(r.ndcg10),
                    int(r.divergence_flag)])
    return buf.getvalue()


def plot_data_csv(label: str, reports: list[EpochReport]) -> str:
    """Long format, one row per (run, epoch, metric)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("label", "epoch", "metric", "value"))
    for r in reports:
        for m in METRICS:
            w.writerow((label, r.epoch, m, _fmt(getattr(r, m))))
    return buf.getvalue()


def read_clean_baseline(path: str | Path) -> dict[str, float]:
    """Final metrics from a summary JSON or the last row of a per-epoch CSV."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        final = data.get("final", data)
        return {m: float(final[m]) for m in METRICS}
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError(f"{path}: no rows")
    return {m: float(rows[-1][m]) for m in METRICS}


def summarize(cfg: ExperimentConfig, resolved: dict, result: ExperimentResult,
              clean: dict | None) -> dict:
    final = result.final
    audits = result.audits
    summary = {
        "config": cfg.model_dump(mode="json"),
        "resolved": resolved,
        "seed": cfg.federation.seed,
        "final": {m: getattr(final, m) for m in METRICS} | {
            "epoch": final.epoch, "evaluated_users": final.evaluated_users},
        "diverged": result.diverged,
        "fallback_items_total": int(sum(result.fallback_counts)),
        "attack_audit": {
            "attacked_rounds": len(audits),
            "attacked_item_rounds": int(sum(a.attacked_items for a in audits)),
            "malicious_clients": max((a.malicious_clients for a in audits), default=0),
            "grad_norm_mean": float(np.mean([a.grad_norm_mean for a in audits])) if audits else 0.0,
            "grad_norm_max": max((a.grad_norm_max for a in audits), default=0.0),
        },
    }
    if clean is not None:
        summary["clean_baseline"] = clean
        summary["drop"] = drop_vs_clean(final, clean)
    return summary


def cmd_run(args) -> int:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.federation.seed = args.seed
    if args.out is not None:
        cfg.output.directory = args.out
    if args.label is not None:
        cfg.output.label = args.label
    if args.plot_data:
        cfg.output.plot_data = True
    clean = read_clean_baseline(args.clean_baseline) if args.clean_baseline else None

    dataset = load_dataset(cfg.dataset)
    fed = build_federation_config(cfg, dataset)
    result = run_experiment(dataset, fed, workers=args.workers)
    summary = summarize(cfg, resolved_settings(fed), result, clean)

    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    label = cfg.output.label
    (out / f"{label}.csv").write_text(reports_csv(result.reports))
    (out / f"{label}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if cfg.output.plot_data:
        (out / f"{label}.plot.csv").write_text(plot_data_csv(label, result.reports))
    f = summary["final"]
    print(f"{label}: epoch {f['epoch']} hr10={f['hr10']:.4f} ndcg10={f['ndcg10']:.4f}"
          f"{' (diverged)' if result.diverged else ''} -> {out / label}.csv")
    return 0


def _parse_list(text: str, cast):
    return [cast(x) for x in text.split(",") if x.strip()]


def cmd_analyze(args) -> int:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    dataset = load_dataset(cfg.dataset)
    try:
        fit = analysis.fit_power_law(dataset.degrees, x_min=args.x_min)
    except analysis.FitError as exc:
        raise analysis.FitError(f"fitting degrees of {dataset.name}: {exc}") from exc
    rows = analysis.breakdown_table(dataset.degrees, _parse_list(args.alphas, float),
                                    _parse_list(args.counts, int), fit)
    buf = io.StringIO()
    buf.write(f"# exponent={fit.exponent!r} normalization={fit.normalization!r} "
              f"x_min={fit.x_min!r} n={fit.n_samples}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("alpha", "n_malicious", "predicted", "empirical"))
    for a, k, p, e in rows:
        w.writerow((_fmt(a), k, _fmt(p), _fmt(e)))
    _emit(buf.getvalue(), args.output)
    return 0


def cmd_stats(args) -> int:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    _emit(load_dataset(cfg.dataset).stats_json() + "\n", args.output)
    return 0


def cmd_fetch(args) -> int:
    from .fetch import fetch_ml100k
    print(fetch_ml100k(args.data_dir))
    return 0


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spattack",
                                description="Federated MF recommendation under Byzantine attack.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one configuration")
    run.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    run.add_argument("--workers", type=int, default=1, help="thread count; never changes results")
    run.add_argument("--seed", type=int, help="override federation.seed")
    run.add_argument("--clean-baseline", help="summary JSON or CSV of a clean run")
    run.add_argument("--out", help="override output.directory")
    run.add_argument("--label", help="override output.label")
    run.add_argument("--plot-data", action="store_true", help="also write long-format CSV")
    run.set_defaults(func=cmd_run)

    an = sub.add_parser("analyze", help="power-law fit and breakdown-fraction table")
    an.add_argument("--config")
    an.add_argument("--alphas", default="0.5")
    an.add_argument("--counts", default="10,50,100,200,500,1000")
    an.add_argument("--x-min", type=float, default=1.0)
    an.add_argument("--output")
    an.set_defaults(func=cmd_analyze)

    st = sub.add_parser("stats", help="dataset summary as JSON")
    st.add_argument("--config")
    st.add_argument("--output")
    st.set_defaults(func=cmd_stats)

    fe = sub.add_parser("fetch", help="download MovieLens-100K into the data directory")
    fe.add_argument("--data-dir")
    fe.set_defaults(func=cmd_fetch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError, DatasetError, analysis.FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
