"""Command line front end and stage orchestration.

Stages communicate only through files under the output directory:

    synth        -> corpus/ (trace files, manifest.json, metrics.json)
    build-graphs -> graphs/ (graph_<id>.json, registry.json)
    train        -> checkpoint.json(+.bin), trainlog.jsonl
    embed        -> embeddings.jsonl
    cluster      -> plan.json, silhouette.json
    evaluate     -> report.json, report.csv, figures/*.png

Each artifact carries the config hash, seed, and stage version; a
stage whose artifact already matches is skipped (rerun with --force),
and evaluate refuses upstream artifacts with a mismatched hash unless
forced.  Errors exit 2 (config), 3 (data), or 4 (numeric) with the
failing stage named on standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import clustering, evaluation, report as report_mod
from .config import STAGE_VERSION, PipelineConfig, load_config
from .encoder import (
    load_checkpoint,
    read_embeddings,
    save_checkpoint,
    write_embeddings,
)
from .encoder import encode_kernel
from .errors import (
    ArtifactMismatch,
    ConfigError,
    DataError,
    GclsError,
    MissingFile,
    NumericError,
)
from .features import base_view, featurize_graph
from .graph import TraceGraph, build_kernel_graph
from .synth import generate_corpus
from .tokens import TokenRegistry
from .trace import load_corpus, load_manifest
from .training import KernelSample, TrainLog, train as run_training

log = logging.getLogger("gcls")

STAGES = ("synth", "build-graphs", "train", "embed", "cluster", "evaluate")


class Paths:
    """All artifact locations derived from the output directory."""

    def __init__(self, config: PipelineConfig):
        self.out = config.out_dir
        self.corpus = config.corpus_dir or os.path.join(self.out, "corpus")
        self.manifest = os.path.join(self.corpus, "manifest.json")
        self.graphs = os.path.join(self.out, "graphs")
        self.registry = os.path.join(self.graphs, "registry.json")
        self.checkpoint = os.path.join(self.out, "checkpoint.json")
        self.trainlog = os.path.join(self.out, "trainlog.jsonl")
        self.embeddings = os.path.join(self.out, "embeddings.jsonl")
        self.plan = os.path.join(self.out, "plan.json")
        self.sweep = os.path.join(self.out, "silhouette.json")
        self.report = os.path.join(self.out, "report.json")
        self.report_csv = os.path.join(self.out, "report.csv")
        self.figures = os.path.join(self.out, "figures")

    def meta(self, stage: str) -> str:
        return os.path.join(self.out, f"{stage}.meta.json")


def _write_meta(path: str, config: PipelineConfig, stage: str) -> None:
    payload = {
        "stage": stage,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "stage_version": STAGE_VERSION,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_meta(path: str) -> dict | None:
    if not os.path.isfile(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _stage_current(paths: Paths, stage: str, config: PipelineConfig, outputs: list[str]) -> bool:
    meta = _read_meta(paths.meta(stage))
    if meta is None:
        return False
    if meta.get("config_hash") != config.config_hash() or meta.get("seed") != config.seed:
        return False
    if meta.get("stage_version") != STAGE_VERSION:
        return False
    return all(os.path.exists(p) for p in outputs)


def _require_meta_match(paths: Paths, stage: str, config: PipelineConfig, force: bool) -> None:
    meta = _read_meta(paths.meta(stage))
    if meta is None:
        raise MissingFile(f"stage '{stage}' has not produced its artifacts yet")
    ok = (
        meta.get("config_hash") == config.config_hash()
        and meta.get("seed") == config.seed
        and meta.get("stage_version") == STAGE_VERSION
    )
    if not ok and not force:
        raise ArtifactMismatch(
            f"artifacts from stage '{stage}' were produced under a different "
            f"config or seed (rerun the stage or pass --force)"
        )


# ---------------------------------------------------------------------------
# stages


def stage_synth(config: PipelineConfig, paths: Paths, force: bool) -> None:
    if not force and _stage_current(paths, "synth", config, [paths.manifest]):
        log.info("synth: up to date, skipping")
        return
    os.makedirs(paths.corpus, exist_ok=True)
    specs = config.synth.class_specs()
    generate_corpus(
        specs,
        config.synth.kernels_per_class,
        config.seed,
        paths.corpus,
        coeffs=config.synth.coeffs,
    )
    _write_meta(paths.meta("synth"), config, "synth")
    log.info(
        "synth: wrote %d kernels (%d classes) to %s",
        len(specs) * config.synth.kernels_per_class,
        len(specs),
        paths.corpus,
    )


def _graph_path(paths: Paths, launch_id: int) -> str:
    return os.path.join(paths.graphs, f"graph_{launch_id}.json")


def stage_build_graphs(config: PipelineConfig, paths: Paths, force: bool) -> None:
    manifest = load_manifest(paths.manifest)
    outputs = [paths.registry] + [_graph_path(paths, e.launch_id) for e in manifest.kernels]
    if not force and _stage_current(paths, "build-graphs", config, outputs):
        log.info("build-graphs: up to date, skipping")
        return
    kernels = load_corpus(manifest)
    registry = TokenRegistry.from_corpus(kernels)
    os.makedirs(paths.graphs, exist_ok=True)
    registry.save(paths.registry)
    total_nodes = 0
    for kernel in kernels:
        graph = build_kernel_graph(kernel, registry)
        graph.save(_graph_path(paths, kernel.launch_id))
        total_nodes += graph.n_nodes
    _write_meta(paths.meta("build-graphs"), config, "build-graphs")
    log.info("build-graphs: %d graphs, %d nodes total", len(kernels), total_nodes)


def _load_samples(config: PipelineConfig, paths: Paths) -> list[KernelSample]:
    manifest = load_manifest(paths.manifest)
    registry = TokenRegistry.load(paths.registry)
    samples = []
    for entry in manifest.kernels:
        graph = TraceGraph.load(_graph_path(paths, entry.launch_id))
        feats = featurize_graph(graph, registry, config.seed)
        samples.append(KernelSample(launch_id=entry.launch_id, graph=graph, features=feats))
    return samples


def stage_train(config: PipelineConfig, paths: Paths, force: bool) -> None:
    outputs = [paths.checkpoint, paths.checkpoint + ".bin", paths.trainlog]
    if not force and _stage_current(paths, "train", config, outputs):
        log.info("train: up to date, skipping")
        return
    _require_meta_match(paths, "build-graphs", config, force)
    samples = _load_samples(config, paths)
    params, train_log = run_training(samples, config.train, config.encoder)
    save_checkpoint(paths.checkpoint, params, config.seed, config.config_hash())
    train_log.save_jsonl(paths.trainlog)
    _write_meta(paths.meta("train"), config, "train")
    best = train_log.best_epoch
    log.info(
        "train: %d epochs, best validation %.4f at epoch %d",
        len(train_log.entries),
        train_log.entries[best].val_loss if 0 <= best < len(train_log.entries) else float("nan"),
        best,
    )


def stage_embed(config: PipelineConfig, paths: Paths, force: bool) -> None:
    if not force and _stage_current(paths, "embed", config, [paths.embeddings]):
        log.info("embed: up to date, skipping")
        return
    _require_meta_match(paths, "train", config, force)
    params, _ = load_checkpoint(paths.checkpoint)
    samples = _load_samples(config, paths)
    ids = []
    rows = []
    for s in samples:
        view = base_view(s.graph, s.features)
        z = encode_kernel(view, params, train=False)
        ids.append(s.launch_id)
        rows.append(z.data)
    write_embeddings(paths.embeddings, ids, np.vstack(rows))
    _write_meta(paths.meta("embed"), config, "embed")
    log.info("embed: %d kernel embeddings written", len(ids))


def stage_cluster(config: PipelineConfig, paths: Paths, force: bool) -> None:
    if not force and _stage_current(paths, "cluster", config, [paths.plan, paths.sweep]):
        log.info("cluster: up to date, skipping")
        return
    _require_meta_match(paths, "embed", config, force)
    ids, z = read_embeddings(paths.embeddings)
    if config.cluster.normalize:
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        z = z / np.where(norms == 0.0, 1.0, norms)
    cs = config.cluster
    n = z.shape[0]
    k_max = cs.k_max if cs.k_max is not None else min(20, n - 1)
    chosen_k = clustering.select_k(
        z,
        k_min=cs.k_min,
        k_max=cs.k_max,
        tie_band=cs.tie_band,
        identity_eps=cs.identity_eps,
        seed=config.seed,
    )
    sweep: dict[int, float] = {}
    if chosen_k != 1 and k_max >= cs.k_min:
        sweep = clustering.sweep_silhouette(z, cs.k_min, min(k_max, n), config.seed)
    plan = clustering.make_plan(z, ids, chosen_k, config.seed)
    raw = plan.to_json()
    raw["provenance"] = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "stage_version": STAGE_VERSION,
    }
    with open(paths.plan, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths.sweep, "w", encoding="utf-8") as fh:
        json.dump({str(k): v for k, v in sorted(sweep.items())}, fh, indent=2)
        fh.write("\n")
    _write_meta(paths.meta("cluster"), config, "cluster")
    log.info("cluster: K=%d, silhouette %.4f", plan.k, plan.silhouette)


def stage_evaluate(config: PipelineConfig, paths: Paths, force: bool) -> None:
    if not force and _stage_current(paths, "evaluate", config, [paths.report, paths.report_csv]):
        log.info("evaluate: up to date, skipping")
        return
    _require_meta_match(paths, "cluster", config, force)
    _require_meta_match(paths, "embed", config, force)
    plan = clustering.ClusterPlan.load(paths.plan)
    manifest = load_manifest(paths.manifest)
    if not manifest.labels:
        raise DataError("manifest lists no metric table (labels)")
    table = evaluation.MetricTable.load(manifest.labels_path())
    report = evaluation.compile_report(
        plan,
        table,
        ratio_weighting=config.evaluate.ratio_weighting,
        plan_ref=os.path.basename(paths.plan),
    )
    raw = report.to_json()
    raw["provenance"] = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "stage_version": STAGE_VERSION,
    }
    with open(paths.report, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, indent=2, sort_keys=True)
        fh.write("\n")
    report_mod.write_report_csv(paths.report_csv, report)
    if config.evaluate.figures:
        ids, z = read_embeddings(paths.embeddings)
        sweep_raw = {}
        if os.path.isfile(paths.sweep):
            with open(paths.sweep, "r", encoding="utf-8") as fh:
                sweep_raw = {int(k): float(v) for k, v in json.load(fh).items()}
        train_log = TrainLog.load_jsonl(paths.trainlog) if os.path.isfile(paths.trainlog) else None
        report_mod.render_figures(
            paths.figures,
            report,
            plan,
            launch_ids=ids,
            embeddings=z,
            sweep=sweep_raw,
            train_log=train_log,
        )
    _write_meta(paths.meta("evaluate"), config, "evaluate")
    log.info(
        "evaluate: cycles error %.3f%%, speedup %.1fx",
        report.metrics["cycles"].error_pct,
        report.speedup,
    )


_STAGE_FUNCS = {
    "synth": stage_synth,
    "build-graphs": stage_build_graphs,
    "train": stage_train,
    "embed": stage_embed,
    "cluster": stage_cluster,
    "evaluate": stage_evaluate,
}


def run_pipeline(config: PipelineConfig, force: bool = False, stages=STAGES) -> None:
    os.makedirs(config.out_dir, exist_ok=True)
    for stage in stages:
        try:
            _STAGE_FUNCS[stage](config, Paths(config), force)
        except GclsError as err:
            # Re-raise under the nearest broad category; subclasses may have
            # positional constructors that do not accept a bare message.
            for base in (ConfigError, DataError, NumericError):
                if isinstance(err, base):
                    raise base(f"stage '{stage}': {err}") from err
            raise


# ---------------------------------------------------------------------------
# argument handling


def _setup_logging() -> None:
    level_name = os.environ.get("GCLS_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ConfigError(f"GCLS_LOG must be one of {sorted(levels)}, got {level_name!r}")
    logging.basicConfig(
        level=levels[level_name],
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        datefmt="%H:%M:%S",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcls",
        description="Trace-to-sample pipeline: graphs, contrastive embeddings, "
        "representative kernel selection, and sampling evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "pipeline"):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "pipeline" else "run all stages")
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--workers", type=int, default=1, help="worker hint (stages run deterministically regardless)")
        p.add_argument("--force", action="store_true", help="recompute even if artifacts are current")
    return parser


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
        config.train.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    config.validate()
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        config = _resolve_config(args)
        stages = STAGES if args.command == "pipeline" else (args.command,)
        run_pipeline(config, force=args.force, stages=stages)
    except ConfigError as err:
        print(f"gcls: config error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"gcls: data error: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"gcls: numeric error: {err}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
