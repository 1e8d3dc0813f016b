"""Per-year experiment sweeps: graph -> projections -> samples -> models -> reports.

Outputs under the run directory::

    report.tsv                       year, model, metric, value
    manifest.json                    config hash, seeds, fold status, file hashes
    folds/<year>/<model>/weights.hddw, model.cfg, predictions.tsv

Nothing written depends on wall-clock time, so reruns are byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .config import ConfigError, ExperimentConfig
from .features import (
    CascadeSampleSet,
    SampleSet,
    activation_table,
    build_anchor_set,
    build_cascade_samples,
    build_diffusion_samples,
    extract_cascades,
    make_split,
)
from .hetnet import HeteroGraph, TimeWindow, load_graph
from .metapath import metapath_adjacency, parse_metapath, step_windows
from .models import build_model, predict, save_model, train
from .synthgen import generate_citation_forest, planted_network

log = logging.getLogger(__name__)

STAGES = ("graph", "metapath", "featurize", "train", "evaluate", "report")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage


def worker_count() -> int:
    raw = os.environ.get("HDD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"HDD_THREADS must be an integer, got {raw!r}") from None


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- inputs -------------------------------------------------------------------
def source_graph(cfg: ExperimentConfig) -> HeteroGraph:
    if cfg.source == "files":
        return load_graph(cfg.nodes_path, cfg.edges_path)
    gen = cfg.generator_config()
    return planted_network(gen) if cfg.source == "synth" else generate_citation_forest(gen)


def task_topic(cfg: ExperimentConfig) -> str:
    if cfg.topic:
        return cfg.topic
    if cfg.source == "files":
        raise ConfigError("task.topic is required for file datasets")
    return cfg.generator_config().topic


def default_years(cfg: ExperimentConfig, origin: int, last: int) -> tuple[int, int]:
    """Every t whose train features start at or after ``origin`` and whose labels exist."""
    lead = cfg.window_len + (1 if cfg.task == "cascade" else 0)
    return origin + lead, last - 1


class SnapshotCache:
    """Projections keyed by (meta-path, window); folds overlap heavily."""

    def __init__(self, graph: HeteroGraph):
        self.graph = graph
        self._cache: dict = {}

    def get(self, spec, window: TimeWindow):
        key = (spec.name, window)
        if key not in self._cache:
            self._cache[key] = metapath_adjacency(self.graph, spec, window)
        return self._cache[key]

    def series(self, specs, windows) -> list:
        return [[self.get(s, w) for w in windows] for s in specs]


@dataclass
class Pipeline:
    """Everything about a config that does not depend on the fold year."""

    cfg: ExperimentConfig
    graph: HeteroGraph
    topic: str
    specs: list
    origin: int
    years: tuple
    activation: object
    cascades: list = field(default_factory=list)
    cache: SnapshotCache = None

    @classmethod
    def prepare(cls, cfg: ExperimentConfig, graph: HeteroGraph | None = None) -> "Pipeline":
        graph = graph if graph is not None else source_graph(cfg)
        topic = task_topic(cfg)
        try:
            specs = [parse_metapath(m, graph.schema) for m in cfg.metapath_names]
        except ValueError as exc:
            raise ConfigError(f"task.metapaths: {exc}") from None
        ends = {s.endpoint_type for s in specs}
        if len(ends) != 1:
            raise ConfigError(f"meta-paths end on different node types: {sorted(ends)}")
        endpoint = ends.pop()
        timed = graph.schema.timed_type
        if cfg.task == "cascade" and endpoint != timed:
            raise ConfigError(f"cascade meta-paths must connect {timed} nodes")
        span = graph.year_span()
        if span is None:
            raise ConfigError("graph has no dated nodes")
        origin = cfg.origin if cfg.origin is not None else span.start_year
        years = cfg.years or default_years(cfg, origin, span.end_year)
        if years[0] > years[1]:
            raise ConfigError(f"no prediction years fit in {span.start_year}-{span.end_year} "
                              f"with window {cfg.window_len}")
        activation = activation_table(graph, topic, node_type=endpoint)
        cascades = extract_cascades(graph, topic) if cfg.task == "cascade" else []
        return cls(cfg, graph, topic, specs, origin, tuple(years), activation, cascades,
                   SnapshotCache(graph))

    def _anchors(self, series, fold):
        as_of = fold.boundary if self.cfg.anchor_as_of == "fold" else None
        return build_anchor_set(self.activation, series, self.cfg.anchor_cap, as_of=as_of)

    def fold_samples(self, t: int):
        """(train, test) samples for prediction year ``t``."""
        out = []
        for fold in make_split(t, self.cfg.window_len, task=self.cfg.task):
            if fold.features.start_year < self.origin:
                raise ValueError(f"fold {fold.features} starts before the data origin {self.origin}")
            windows = step_windows(fold.steps, self.origin, self.cfg.window_mode)
            series = self.cache.series(self.specs, windows)
            anchors = self._anchors(series, fold)
            if self.cfg.task == "diffusion":
                s = build_diffusion_samples(series, self.activation, fold, anchors)
            else:
                s = build_cascade_samples(self.cascades, series, fold, anchors, self.graph)
            out.append(merge_metapaths(s, self.cfg.merge))
        return tuple(out)


def merge_metapaths(samples, mode: str = "concat"):
    """``sum`` folds the K per-meta-path blocks of each step into one block."""
    if mode == "concat" or samples.n_metapaths == 1:
        return samples
    n, w, _ = samples.features.shape
    k, f = samples.n_metapaths, samples.n_anchors
    summed = samples.features.reshape(n, w, k, f).sum(axis=2)
    if isinstance(samples, CascadeSampleSet):
        return CascadeSampleSet(samples.cascade_ids, summed, samples.targets,
                                samples.adopter_labels, 1, f)
    return SampleSet(samples.node_ids, summed, samples.labels, 1, f)


# -- cascade sample files -------------------------------------------------------
def save_samples(samples, directory) -> None:
    d = Path(directory)
    if isinstance(samples, CascadeSampleSet):
        samples.as_sample_set().save(d)
        with open(d / "adopters.tsv", "w", encoding="utf-8", newline="") as fh:
            fh.write("cascade_id\tcandidate_id\tlabel\n")
            for cid, adopters in zip(samples.cascade_ids, samples.adopter_labels):
                for cand, y in adopters.items():
                    fh.write(f"{cid}\t{cand}\t{y}\n")
    else:
        samples.save(d)


def load_samples(directory):
    d = Path(directory)
    base = SampleSet.load(d)
    if not (d / "adopters.tsv").exists():
        return base
    adopters: dict = {cid: {} for cid in base.node_ids}
    with open(d / "adopters.tsv", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            cid, cand, y = line.rstrip("\n").split("\t")
            adopters[cid][cand] = int(y)
    return CascadeSampleSet(base.node_ids, base.features, base.labels,
                            [adopters[c] for c in base.node_ids], base.n_metapaths, base.n_anchors)


# -- evaluation -------------------------------------------------------------------
def adopter_scores(predicted_increment, samples: CascadeSampleSet):
    """Pool candidates over cascades; each scores its cascade's expected join rate.

    A cascade expected to gain ``g`` members among ``m`` candidates gives each
    candidate min(1, max(g, 0) / m).
    """
    scores, labels, ids = [], [], []
    for g, cid, adopters in zip(predicted_increment, samples.cascade_ids, samples.adopter_labels):
        if not adopters:
            continue
        s = min(1.0, max(float(g), 0.0) / len(adopters))
        for cand, y in adopters.items():
            scores.append(s)
            labels.append(y)
            ids.append(f"{cid}/{cand}")
    return np.array(scores), np.array(labels), ids


def evaluate_scores(scores, samples, task: str) -> list[tuple[str, float]]:
    if task == "diffusion":
        ranked = metrics.RankedPredictions.from_scores(scores, samples.labels, samples.node_ids)
        conf = metrics.confusion_counts(samples.labels, scores >= 0.5)
        return [("aupr", metrics.aupr(ranked)), ("ap", metrics.average_precision(ranked)),
                ("precision", conf.precision), ("recall", conf.recall)]
    y = samples.targets
    out = [("mse", metrics.mse(scores, y))]
    var = float(np.var(y))
    out.append(("r2", 1.0 - out[0][1] / var if var > 0 else float("nan")))
    a_scores, a_labels, a_ids = adopter_scores(scores, samples)
    if a_labels.sum() > 0:
        out.append(("ap", metrics.average_precision(a_scores, a_labels, a_ids)))
    return out


def baseline_rows(samples, task: str) -> list[tuple[str, float]]:
    """What a random ranker scores: AUPR and AP both equal the prevalence."""
    if task == "diffusion":
        p = float(np.mean(samples.labels))
        return [("aupr", p), ("ap", p)]
    _, labels, _ = adopter_scores(np.ones(len(samples)), samples)
    rows = [("mse", float(np.var(samples.targets)))]
    if len(labels):
        rows.append(("ap", float(np.mean(labels))))
    return rows


def skip_reason(train_s, test_s, task: str) -> str | None:
    if len(train_s) == 0 or len(test_s) == 0:
        return "no samples"
    if task == "diffusion":
        if test_s.labels.sum() == 0:
            return "no test positives"
    elif not any(any(a.values()) for a in test_s.adopter_labels):
        return "no test adopters"
    return None


def write_predictions(path, ids, labels, scores) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id\tlabel\tscore\n")
        for i, y, s in zip(ids, labels, scores):
            fh.write(f"{i}\t{metrics.format_value(y)}\t{metrics.format_value(s)}\n")


# -- orchestration -------------------------------------------------------------------
def _fit_one(cfg: ExperimentConfig, arch: str, train_s, test_s, year_dir: Path):
    start = time.perf_counter()
    model = build_model(cfg.model_config(arch), train_s.features.shape[1:])
    model, report = train(model, train_s if isinstance(train_s, SampleSet) else train_s.as_sample_set(),
                          hyper=cfg.train_config())
    scores = predict(model, test_s)
    out = year_dir / arch
    save_model(model, out)
    ids = test_s.node_ids if isinstance(test_s, SampleSet) else test_s.cascade_ids
    labels = test_s.labels if isinstance(test_s, SampleSet) else test_s.targets
    write_predictions(out / "predictions.tsv", ids, labels, scores)
    log.info("%s %s trained in %.1fs", year_dir.name, arch, time.perf_counter() - start)
    return scores, report


@dataclass
class RunResult:
    out_dir: Path
    report_path: Path
    manifest_path: Path
    rows: list
    folds: list


def _write_manifest(out: Path, cfg: ExperimentConfig, pipe_info: dict, folds: list,
                    status: str, error: dict | None = None) -> Path:
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out).as_posix()] = sha256_file(p)
    gen_seed = None
    if cfg.source != "files":
        gen_seed = cfg.generator_config().rng_seed
    manifest = {
        "code_version": __version__,
        "config_hash": cfg.digest(),
        "config": cfg.canonical().splitlines(),
        "seeds": {"model": cfg.seed, "train": cfg.train_config().seed, "generator": gen_seed},
        "task": cfg.task,
        **pipe_info,
        "status": status,
        "folds": folds,
        "files": files,
    }
    if error:
        manifest["error"] = error
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_experiment(cfg: ExperimentConfig, out_dir=None, graph: HeteroGraph | None = None) -> RunResult:
    """Sweep the prediction years, training a fresh model per year and arch.

    Any failure writes a manifest with the failing stage before re-raising as
    :class:`StageError`.
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    folds: list = []
    info: dict = {"topic": cfg.topic}
    stage = "graph"
    try:
        pipe = Pipeline.prepare(cfg, graph)
        info = {"topic": pipe.topic, "years": list(pipe.years), "origin": pipe.origin,
                "metapaths": [s.name for s in pipe.specs]}
        rows = []
        jobs = []
        for t in range(pipe.years[0], pipe.years[1] + 1):
            stage = "featurize"
            train_s, test_s = pipe.fold_samples(t)
            reason = skip_reason(train_s, test_s, cfg.task)
            if reason:
                log.warning("skipping %d: %s", t, reason)
                folds.append({"year": t, "status": "skipped", "reason": reason})
                continue
            folds.append({"year": t, "status": "ok", "n_train": len(train_s), "n_test": len(test_s)})
            jobs.append((t, train_s, test_s))
        stage = "train"
        tasks = [(t, arch, tr, te) for t, tr, te in jobs for arch in cfg.models]
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            futures = [pool.submit(_fit_one, cfg, arch, tr, te, out / "folds" / str(t))
                       for t, arch, tr, te in tasks]
            results = [f.result() for f in futures]
        stage = "evaluate"
        by_key = {(t, arch): res for (t, arch, _, _), res in zip(tasks, results)}
        for fold_info, (t, train_s, test_s) in zip([f for f in folds if f["status"] == "ok"], jobs):
            for metric, value in baseline_rows(test_s, cfg.task):
                rows.append((t, "random", metric, value))
            for arch in cfg.models:
                scores, report = by_key[(t, arch)]
                for metric, value in evaluate_scores(scores, test_s, cfg.task):
                    rows.append((t, arch, metric, value))
                fold_info.setdefault("epochs", {})[arch] = len(report.epoch_loss)
                fold_info.setdefault("best_epoch", {})[arch] = report.best_epoch
        stage = "report"
        report_path = out / "report.tsv"
        metrics.write_report(rows, report_path)
    except ConfigError:
        raise
    except Exception as exc:
        _write_manifest(out, cfg, info, folds, "failed",
                        {"stage": stage, "message": f"{type(exc).__name__}: {exc}"})
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    manifest = _write_manifest(out, cfg, info, folds, "ok")
    return RunResult(out, report_path, manifest, rows, folds)


# -- plot data ----------------------------------------------------------------------
MERGED_HEADER = ["task", "topic", "model", "year", "metric", "value"]


def _report_context(path: Path) -> tuple[str, str]:
    m = path.parent / "manifest.json"
    if m.exists():
        data = json.loads(m.read_text(encoding="utf-8"))
        return str(data.get("task", "-")), str(data.get("topic", "-"))
    return "-", "-"


def emit_plot_data(report_paths, out_path, summary_path=None) -> tuple[list, list]:
    """Merge reports into one long table sorted by (task, topic, model, year, metric).

    Task and topic come from the manifest beside each report ("-" without one).
    Identical duplicate rows collapse; conflicting ones are an error. The
    summary holds per (task, topic, model, metric) means over years.
    """
    merged: dict = {}
    for p in map(Path, report_paths):
        task, topic = _report_context(p)
        for year, model, metric, value in metrics.read_report(p):
            key = (task, topic, model, year, metric)
            if key in merged and metrics.format_value(merged[key]) != metrics.format_value(value):
                raise metrics.MetricError(f"conflicting values for {key}: {merged[key]} vs {value}")
            merged[key] = value
    rows = sorted(merged.items())
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(MERGED_HEADER) + "\n")
        for (task, topic, model, year, metric), value in rows:
            fh.write(f"{task}\t{topic}\t{model}\t{year}\t{metric}\t{metrics.format_value(value)}\n")
    groups: dict = {}
    for (task, topic, model, _year, metric), value in rows:
        groups.setdefault((task, topic, model, metric), []).append(value)
    summary = [(k, float(np.mean(v)), len(v)) for k, v in sorted(groups.items())]
    summary_path = Path(summary_path) if summary_path else out_path.with_name(out_path.stem + ".summary.tsv")
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("task\ttopic\tmodel\tmetric\tmean\tn_years\n")
        for (task, topic, model, metric), mean, n in summary:
            fh.write(f"{task}\t{topic}\t{model}\t{metric}\t{metrics.format_value(mean)}\t{n}\n")
    return rows, summary
