"""Command line entry point.

Exit codes: 0 success, 2 config or usage error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics
from .config import ConfigError, ExperimentConfig, load_config
from .hetnet import GraphError, TimeWindow, load_graph, save_graph
from .metapath import metapath_adjacency, parse_metapath
from .models import build_model, load_model, predict, save_model, train
from .runner import (
    Pipeline,
    StageError,
    emit_plot_data,
    evaluate_scores,
    load_samples,
    run_experiment,
    save_samples,
    source_graph,
)

log = logging.getLogger("hdd")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _window(text: str) -> TimeWindow:
    parts = text.split("-")
    try:
        lo, hi = (int(parts[0]), int(parts[-1]))
        return TimeWindow(lo, hi)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad window {text!r}: {exc}") from None


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _graph_from_args(args, cfg: ExperimentConfig | None):
    if getattr(args, "graph", None):
        d = Path(args.graph)
        return load_graph(d / "nodes.tsv", d / "edges.tsv")
    if cfg is None:
        raise ConfigError("give --graph or --config")
    return source_graph(cfg)


def cmd_ingest(args) -> int:
    g = load_graph(args.nodes, args.edges)
    out = Path(args.out)
    save_graph(g, out / "nodes.tsv", out / "edges.tsv")
    print(f"{len(g.nodes)} nodes, {len(g.edges)} edges -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    if cfg.source == "files":
        raise ConfigError("synth needs data.source = synth or cascade_synth")
    if args.seed is not None:
        cfg = replace(cfg, synth={**cfg.synth, "rng_seed": args.seed})
    g = source_graph(cfg)
    out = Path(args.out)
    save_graph(g, out / "nodes.tsv", out / "edges.tsv")
    print(f"{len(g.nodes)} nodes, {len(g.edges)} edges -> {out}")
    return EXIT_OK


def cmd_metapath(args) -> int:
    cfg = _config(args) if args.config else None
    g = _graph_from_args(args, cfg)
    spec = parse_metapath(args.spec, g.schema)
    mg = metapath_adjacency(g, spec, args.window)
    out = Path(args.out)
    mg.save(out, out.with_suffix(".index.tsv"))
    print(f"{spec.name}: {len(mg.vertex_ids)} vertices, {mg.adjacency.nnz} entries -> {out}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    cfg = _config(args)
    g = _graph_from_args(args, cfg)
    pipe = Pipeline.prepare(cfg, g)
    train_s, test_s = pipe.fold_samples(args.year)
    out = Path(args.out)
    save_samples(train_s, out / "train")
    save_samples(test_s, out / "test")
    print(f"year {args.year}: {len(train_s)} train, {len(test_s)} test samples -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    samples = load_samples(args.samples)
    base = samples if hasattr(samples, "node_ids") else samples.as_sample_set()
    mcfg = cfg.model_config(args.arch)
    model = build_model(mcfg, base.features.shape[1:])
    model, report = train(model, base, hyper=cfg.train_config())
    save_model(model, args.out)
    print(f"{args.arch}: {len(report.epoch_loss)} epochs, best {report.best_epoch} -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    samples = load_samples(args.samples)
    task = "cascade" if model.config.task_head == "linear_regression" else "diffusion"
    scores = predict(model, samples)
    rows = [(args.year, model.config.arch, m, v) for m, v in evaluate_scores(scores, samples, task)]
    if args.out:
        metrics.write_report(rows, args.out)
    for year, arch, m, v in rows:
        print(f"{year}\t{arch}\t{m}\t{metrics.format_value(v)}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    res = run_experiment(cfg, args.out)
    skipped = [f["year"] for f in res.folds if f["status"] == "skipped"]
    print(f"{len(res.rows)} report rows -> {res.report_path}"
          + (f" (skipped years: {skipped})" if skipped else ""))
    return EXIT_OK


def cmd_report(args) -> int:
    rows, summary = emit_plot_data(args.reports, args.out)
    for (task, topic, model, metric), mean, n in summary:
        print(f"{task}\t{topic}\t{model}\t{metric}\tmean={metrics.format_value(mean)}\tn={n}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value experiment config")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hdd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="validate and normalise TSV inputs")
    s.add_argument("--nodes", required=True)
    s.add_argument("--edges", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic network")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("metapath", parents=[common], help="project one meta-path over one window")
    s.add_argument("--graph", help="directory with nodes.tsv and edges.tsv")
    s.add_argument("--spec", required=True, help="e.g. APA or author-paper-author")
    s.add_argument("--window", type=_window, help="lo-hi years, inclusive")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_metapath)

    s = sub.add_parser("featurize", parents=[common], help="train/test samples for one year")
    s.add_argument("--graph", help="directory with nodes.tsv and edges.tsv")
    s.add_argument("--year", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_featurize)

    s = sub.add_parser("train", parents=[common], help="fit one model on a sample set")
    s.add_argument("--samples", required=True)
    s.add_argument("--arch", required=True, choices=("mlp", "cnn", "lstm", "cnn_lstm"))
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="score a sample set with a model")
    s.add_argument("--model", required=True)
    s.add_argument("--samples", required=True)
    s.add_argument("--year", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("run", parents=[common], help="full per-year sweep")
    s.add_argument("--out", help="run directory (default: output.dir)")
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("report", parents=[common], help="merge reports into plot data")
    s.add_argument("reports", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (GraphError, ValueError, OSError) as exc:
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
