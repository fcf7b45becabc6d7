"""Pipeline stages over the file interfaces.

Each stage reads only its declared inputs from disk and writes its outputs
into one work directory, so any stage can be rerun alone.
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path

from . import adoption, clusters, networks, predictors, store
from .choice import SCHEMA_VERSION, crossvalidate, dumps_report, fit
from .config import PipelineConfig
from .survival import read_issues

log = logging.getLogger(__name__)

OUTPUTS = {
    "ingest": ["store_report.json"],
    "extract": ["events.csv"],
    "dedup": ["clusters.csv", "cluster_members.csv", "dedup_report.json"],
    "networks": ["weights.csv", "network_report.json"],
    "predictors": ["dataset.csv", "dataset_report.json"],
    "fit": ["fit_report.json"],
    "crossval": ["cv_report.json"],
}
STAGES = list(OUTPUTS)


class InputError(ValueError):
    """Missing or malformed stage input."""


def _need(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"missing input file: {p}")
    return p


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_report(doc))


def _read_report(path) -> dict:
    doc = json.loads(_need(path).read_text("utf-8"))
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"{path}: schema_version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
    return doc


def load_store(cfg: PipelineConfig) -> store.ObjectStore:
    return store.load_store(_need(cfg.commits), _need(cfg.blobs))


def load_rules(cfg: PipelineConfig):
    return adoption.load_rules(cfg.rules and _need(cfg.rules),
                               include_require_namespace=cfg.include_require_namespace)


def focal_packages(cfg: PipelineConfig) -> list[str]:
    return [f.package for f in cfg.focal.values()]


def focal_projects(cfg: PipelineConfig) -> set[str]:
    return {p for f in cfg.focal.values() for p in f.projects}


def ingest(cfg: PipelineConfig, out: Path) -> dict:
    st = load_store(cfg)
    maps = store.build_maps(st, cfg.r_suffixes)
    doc = {"commits": len(st.commits), "blobs": len(st.blobs), "projects": len(st.projects),
           "maps": maps.cardinalities()}
    _write_json(out / "store_report.json", doc)
    return doc


def extract(cfg: PipelineConfig, out: Path) -> list[adoption.AdoptionEvent]:
    maps = store.build_maps(load_store(cfg), cfg.r_suffixes)
    events = adoption.find_adoptions(maps, load_rules(cfg))
    adoption.write_events(out / "events.csv", events)
    return events


def dedup(cfg: PipelineConfig, out: Path) -> list[clusters.ProjectCluster]:
    st = load_store(cfg)
    events = adoption.read_events(_need(out / "events.csv"))
    every = clusters.cluster_projects(st.project_commits())
    kept = clusters.assign_end_points(every, adoption.events_by_project(events), focal_packages(cfg),
                                      focal_projects(cfg))
    clusters.write_clusters(out / "clusters.csv", kept, out / "cluster_members.csv")
    _write_json(out / "dedup_report.json", {
        "projects": len(st.projects), "clusters": len(every), "adopting_clusters": len(kept),
        "ties": sum(1 for c in kept if c.end_point.tie)})
    return kept


def networks_stage(cfg: PipelineConfig, out: Path) -> dict:
    graph = networks.read_registry(_need(cfg.registry))
    layers = {alt: networks.downstream_layers(graph, f.roots, cfg.max_depth) for alt, f in cfg.focal.items()}
    weights = networks.package_weights(layers["datatable"], layers["tidy"])
    networks.write_weights(out / "weights.csv", weights)
    doc = {"max_depth": cfg.max_depth, "overlap": networks.overlap(layers["datatable"], layers["tidy"])}
    _write_json(out / "network_report.json", doc)
    return doc


def pipeline_inputs(cfg: PipelineConfig, out: Path) -> predictors.PipelineInputs:
    st = load_store(cfg)
    cl = clusters.read_clusters(_need(out / "clusters.csv"), _need(out / "cluster_members.csv"))
    weights = networks.read_weights(_need(out / "weights.csv"))
    patterns = (json.loads(_need(cfg.rules).read_text("utf-8"))["patterns"] if cfg.rules
                else adoption.default_patterns())
    rules = adoption.rules_for_packages(weights, patterns)
    return predictors.PipelineInputs(st, cl, weights, read_issues(_need(cfg.issues)),
                                     predictors.read_posts(_need(cfg.posts)), cfg, rules)


def predictors_stage(cfg: PipelineConfig, out: Path, workers: int | None = None) -> predictors.ChoiceDataset:
    inp = pipeline_inputs(cfg, out)
    obs = predictors.compute_observations(inp, workers or cfg.workers)
    ds = predictors.assemble(obs, cfg)
    ds.write(out / "dataset.csv", out / "dataset_report.json")
    return ds


def load_dataset(path, report=None) -> predictors.ChoiceDataset:
    report = Path(report) if report else Path(path).with_name("dataset_report.json")
    if report.is_file():
        _read_report(report)
        return predictors.ChoiceDataset.read(_need(path), report)
    return predictors.ChoiceDataset.read(_need(path))


def fit_stage(cfg: PipelineConfig, out: Path, dataset=None, workers: int | None = None) -> dict:
    ds = load_dataset(dataset or out / "dataset.csv")
    data, spec = ds.to_choice_data(), ds.model_spec()
    res = fit(data, spec, null=cfg.null_model)
    cv = crossvalidate(data, spec, cfg.cv_folds, cfg.cv_cutoff, cfg.seed, workers or cfg.workers)
    doc = {**res.to_dict(), "dropped_observations": ds.dropped, "dropped_columns": ds.dropped_columns,
           "cross_validation": cv.to_dict()}
    _write_json(out / "fit_report.json", _clean(doc))
    return doc


def crossval_stage(cfg: PipelineConfig, out: Path, dataset=None, workers: int | None = None) -> dict:
    ds = load_dataset(dataset or out / "dataset.csv")
    cv = crossvalidate(ds.to_choice_data(), ds.model_spec(), cfg.cv_folds, cfg.cv_cutoff, cfg.seed,
                       workers or cfg.workers)
    doc = cv.to_dict()
    _write_json(out / "cv_report.json", _clean(doc))
    return doc


def _clean(x):
    """JSON has no NaN or infinity; report them as null."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def run_all(cfg: PipelineConfig, out, workers: int | None = None) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"ingest": ingest(cfg, out)}
    extract(cfg, out)
    dedup(cfg, out)
    summary["networks"] = networks_stage(cfg, out)
    ds = predictors_stage(cfg, out, workers)
    summary["dataset"] = {"n": len(ds), "dropped": len(ds.dropped), "dropped_columns": ds.dropped_columns}
    fit_stage(cfg, out, workers=workers)
    crossval_stage(cfg, out, workers=workers)
    return summary
