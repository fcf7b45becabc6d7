"""Per-observation predictors, all measured strictly before the observation's end point."""
from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .adoption import UsageRule, scan_blob
from .choice import ALTERNATIVES, ChoiceData, ModelSpec, SCHEMA_VERSION
from .clusters import ProjectCluster
from .config import PipelineConfig, parse_time
from .networks import (AuthorIndex, PackageWeight, author_clusters, author_exposures,
                       author_proximity, dependency_proximity)
from .store import ObjectStore, suffix_filter
from .survival import IssueRecord, rplgp_at

log = logging.getLogger(__name__)

CHOICE_VARIABLES = ("CumNum", "RplGp", "Unrslvd", "StckExch")
DECISION_VARIABLES = ("C", "Cmts", "Aths", "Prx2TD", "Prx2DT", "AthPrx2TD", "AthPrx2DT")
DATASET_COLUMNS = [
    "cluster_id", "chosen", "end_time", "Cmts", "Aths", "C", "Prx2DT", "Prx2TD",
    "AthPrx2DT", "AthPrx2TD", "CumNum.datatable", "CumNum.tidy", "RplGp.datatable",
    "RplGp.tidy", "Unrslvd.datatable", "Unrslvd.tidy", "StckExch.datatable", "StckExch.tidy",
]
PREDICTOR_COLUMNS = DATASET_COLUMNS[3:]
INT_COLUMNS = {"Cmts", "Aths", "C", "CumNum.datatable", "CumNum.tidy",
               "StckExch.datatable", "StckExch.tidy"}


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class PostRecord:
    post_id: str
    creation_date: int
    score: int
    title: str
    body: str
    is_question: bool

    def to_json(self) -> str:
        return json.dumps({"post_id": self.post_id, "creation_date": self.creation_date,
                           "score": self.score, "title": self.title, "body": self.body,
                           "is_question": self.is_question}, sort_keys=True, separators=(",", ":"))


def read_posts(path) -> list[PostRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out.append(PostRecord(str(r["post_id"]), parse_time(r["creation_date"]), int(r["score"]),
                                      r.get("title") or "", r.get("body") or "", bool(r["is_question"])))
    return out


def write_posts(path, posts) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in posts:
            fh.write(p.to_json() + "\n")


def compute_size(commits: Sequence, end_time: int) -> tuple[int, int]:
    """Commit count and distinct author count strictly before ``end_time``."""
    pre = [c for c in commits if c.author_time < end_time]
    return len(pre), len({c.author_id for c in pre})


def compute_c_flag(commits: Sequence, end_time: int, suffixes=(".c", ".C")) -> bool:
    accept = suffix_filter(suffixes)
    return any(accept(path) for c in commits if c.author_time < end_time for path, _ in c.files)


def compute_cumnum(end_times_by_package: Mapping[str, Sequence[int]], end_time: int, package: str) -> int:
    """Adopters of ``package`` whose end point is strictly earlier (input lists sorted)."""
    return bisect.bisect_left(end_times_by_package.get(package, ()), end_time)


def compute_unrslvd(issues: Iterable[IssueRecord], end_time: int) -> float | None:
    """Share of issues opened before ``end_time`` that were still open at it."""
    total = open_ = 0
    for i in issues:
        if i.created_at < end_time:
            total += 1
            if i.closed_at is None or i.closed_at >= end_time:
                open_ += 1
    return open_ / total if total else None


def post_mentions(post: PostRecord, terms: Iterable[str]) -> bool:
    text = (post.title + "\n" + post.body).lower()
    return any(t.lower() in text for t in terms)


def compute_stckexch(posts: Iterable[PostRecord], end_time: int, terms: Iterable[str],
                     threshold: int = 20) -> int:
    """High-scoring questions mentioning the package, created before ``end_time``."""
    terms = list(terms)
    return sum(1 for p in posts if p.is_question and p.score > threshold
               and p.creation_date < end_time and post_mentions(p, terms))


@dataclass
class Observation:
    cluster_id: str
    chosen: str
    end_time: int
    values: dict[str, float]
    tie: bool = False
    flags: list[str] = field(default_factory=list)

    def row(self) -> list:
        out = [self.cluster_id, self.chosen, self.end_time]
        for c in PREDICTOR_COLUMNS:
            v = self.values[c]
            out.append(int(v) if c in INT_COLUMNS else repr(float(v)))
        return out


@dataclass
class ChoiceDataset:
    observations: list[Observation]
    dropped: list[dict] = field(default_factory=list)
    dropped_columns: list[str] = field(default_factory=list)
    correlations: list[dict] = field(default_factory=list)
    cutoff_time: int | None = None

    # property type of each predictor
    roles = {"choice_related": CHOICE_VARIABLES, "decision_maker": DECISION_VARIABLES}

    def __len__(self):
        return len(self.observations)

    def model_spec(self) -> ModelSpec:
        full = ModelSpec(specific=("Cmts", "Aths", "C", "Prx2DT", "Prx2TD", "AthPrx2TD", "AthPrx2DT"))
        return full.without(self.dropped_columns)

    def to_choice_data(self) -> ChoiceData:
        cols = {c: np.array([o.values[c] for o in self.observations], dtype=float) for c in PREDICTOR_COLUMNS}
        return ChoiceData.from_labels(cols, [o.chosen for o in self.observations], ALTERNATIVES,
                                      [o.cluster_id for o in self.observations])

    def write(self, path, report_path=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DATASET_COLUMNS)
            for o in self.observations:
                w.writerow(o.row())
        if report_path is not None:
            with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(self.report(), indent=2, sort_keys=True) + "\n")

    def report(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "n": len(self.observations),
                "cutoff_time": self.cutoff_time, "dropped_observations": self.dropped,
                "dropped_columns": self.dropped_columns, "high_correlations": self.correlations}

    @classmethod
    def read(cls, path, report_path=None) -> "ChoiceDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != DATASET_COLUMNS:
                unknown = [h for h in header if h not in DATASET_COLUMNS]
                missing = [h for h in DATASET_COLUMNS if h not in header]
                raise SchemaError(f"dataset header mismatch: unknown={unknown} missing={missing}")
            obs = []
            for row in reader:
                values = {c: float(v) for c, v in zip(PREDICTOR_COLUMNS, row[3:])}
                obs.append(Observation(row[0], row[1], int(row[2]), values))
        ds = cls(obs)
        if report_path is not None:
            rep = json.loads(open(report_path, encoding="utf-8").read())
            if rep.get("schema_version") != SCHEMA_VERSION:
                raise SchemaError(f"dataset report schema {rep.get('schema_version')!r} != {SCHEMA_VERSION}")
            ds.dropped = rep["dropped_observations"]
            ds.dropped_columns = rep["dropped_columns"]
            ds.correlations = rep["high_correlations"]
            ds.cutoff_time = rep["cutoff_time"]
        return ds


def model_regressors(observations: Sequence[Observation]) -> dict[str, np.ndarray]:
    """Columns as they enter the utility difference: decision-maker variables
    as-is, choice-related variables as tidy minus datatable."""
    out = {}
    for v in DECISION_VARIABLES:
        out[v] = np.array([o.values[v] for o in observations], dtype=float)
    for v in CHOICE_VARIABLES:
        out[v] = np.array([o.values[f"{v}.tidy"] - o.values[f"{v}.datatable"] for o in observations])
    return out


def collinearity_screen(observations: Sequence[Observation], threshold: float = 0.9,
                        priority: Sequence[str] = ("Prx2DT",)) -> tuple[list[str], list[dict]]:
    """Drop one variable from every pair correlated above ``threshold`` in absolute value.

    Variables listed in ``priority`` go first; otherwise the later variable
    in column order is dropped.
    """
    cols = model_regressors(observations)
    order = [v for v in ("CumNum", "RplGp", "Unrslvd", "StckExch", "C", "Cmts", "Aths",
                         "Prx2TD", "Prx2DT", "AthPrx2TD", "AthPrx2DT")]
    pairs = []
    if len(observations) < 3:
        return [], pairs
    for i, a in enumerate(order):
        for b in order[i + 1:]:
            x, y = cols[a], cols[b]
            if x.std() == 0 or y.std() == 0:
                continue
            r = float(np.corrcoef(x, y)[0, 1])
            if abs(r) > threshold:
                pairs.append({"a": a, "b": b, "r": r})
    dropped: list[str] = []
    for p in sorted(pairs, key=lambda p: -abs(p["r"])):
        a, b = p["a"], p["b"]
        if a in dropped or b in dropped:
            continue
        if a in priority and (b not in priority or priority.index(a) <= priority.index(b)):
            dropped.append(a)
        elif b in priority:
            dropped.append(b)
        else:
            dropped.append(b)
    return dropped, pairs


@dataclass
class PipelineInputs:
    """Everything predictor computation reads, pre-indexed."""

    store: ObjectStore
    clusters: list[ProjectCluster]
    weights: Mapping[str, PackageWeight]
    issues: Sequence[IssueRecord]
    posts: Sequence[PostRecord]
    config: PipelineConfig
    package_rules: Sequence[UsageRule]

    def __post_init__(self):
        cfg = self.config
        self.prj2cmt = self.store.project_commits()
        self.index = AuthorIndex(self.store)
        self.r_filter = suffix_filter(cfg.r_suffixes)
        self.alt_of = {f.package: alt for alt, f in cfg.focal.items()}
        ends: dict[str, list[int]] = {}
        for c in self.clusters:
            ends.setdefault(c.chosen_package, []).append(c.end_time)
        self.end_times = {k: sorted(v) for k, v in ends.items()}
        self.issues_by_pkg: dict[str, list[IssueRecord]] = {}
        for i in self.issues:
            self.issues_by_pkg.setdefault(i.package, []).append(i)
        self._scan_cache: dict[str, frozenset] = {}

    def installed_packages(self, commits) -> set[str]:
        found: set[str] = set()
        for c in commits:
            for path, blob in c.files:
                if not self.r_filter(path):
                    continue
                hit = self._scan_cache.get(blob)
                if hit is None:
                    rec = self.store.blobs.get(blob)
                    hit = frozenset(scan_blob(rec.text, self.package_rules)) if rec else frozenset()
                    self._scan_cache[blob] = hit
                found |= hit
        return found


def observation_for(cluster: ProjectCluster, inp: PipelineInputs) -> Observation:
    cfg = inp.config
    T = cluster.end_time
    shas = set().union(*(inp.prj2cmt.get(m, set()) for m in cluster.members))
    commits = sorted((inp.store.commits[s] for s in shas), key=lambda c: (c.author_time, c.sha))
    pre = [c for c in commits if c.author_time < T]
    v: dict[str, float] = {}
    v["Cmts"], v["Aths"] = compute_size(pre, T)
    v["C"] = int(compute_c_flag(pre, T, cfg.c_suffixes))
    p_d, p_t = dependency_proximity(inp.installed_packages(pre), inp.weights)
    v["Prx2DT"], v["Prx2TD"] = float(p_d), float(p_t)
    authors = {c.author_id for c in pre}
    if authors:
        dd = author_clusters(inp.index, cfg.focal["datatable"].projects, T, authors)
        dt = author_clusters(inp.index, cfg.focal["tidy"].projects, T, authors)
        pa_d, pa_t = author_proximity(authors, len(authors), author_exposures(dd, dt))
    else:
        pa_d = pa_t = 0
    v["AthPrx2DT"], v["AthPrx2TD"] = float(pa_d), float(pa_t)
    flags = []
    for alt, focal in cfg.focal.items():
        v[f"CumNum.{alt}"] = compute_cumnum(inp.end_times, T, focal.package)
        gap = rplgp_at(inp.issues_by_pkg.get(focal.package, ()), T)
        v[f"RplGp.{alt}"] = math.nan if gap.days is None else gap.days
        if gap.flagged:
            flags.append(f"rplgp_{gap.reason}.{alt}")
        u = compute_unrslvd(inp.issues_by_pkg.get(focal.package, ()), T)
        v[f"Unrslvd.{alt}"] = math.nan if u is None else u
        if u is None:
            flags.append(f"unrslvd_undefined.{alt}")
        v[f"StckExch.{alt}"] = compute_stckexch(inp.posts, T, focal.post_terms, cfg.score_threshold)
    return Observation(cluster.cluster_id, inp.alt_of[cluster.chosen_package], T, v,
                       cluster.end_point.tie, flags)


def compute_observations(inp: PipelineInputs, workers: int = 1) -> list[Observation]:
    clusters = sorted(inp.clusters, key=lambda c: c.cluster_id)
    if workers > 1:
        for c in clusters:  # warm the blob-scan cache so workers only read it
            inp.installed_packages(inp.store.commits[s] for m in c.members for s in inp.prj2cmt.get(m, ()))
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda c: observation_for(c, inp), clusters))
    return [observation_for(c, inp) for c in clusters]


def drop_reason(o: Observation, cfg: PipelineConfig) -> str | None:
    if o.tie and cfg.exclude_ties:
        return "tied_first_adoption"
    if o.end_time < cfg.cutoff_time:
        return "before_cutoff"
    if o.values["Cmts"] < 1:
        return "no_commits_before_end"
    for f in o.flags:
        if f.startswith("rplgp_no_issues") or f.startswith("unrslvd_undefined"):
            return f
        if f.startswith("rplgp_median_not_reached") and cfg.exclude_flagged_rplgp:
            return f
    bad = [c for c in PREDICTOR_COLUMNS if not math.isfinite(o.values[c])]
    if bad:
        return "undefined_predictor:" + ",".join(bad)
    return None


def assemble(observations: Sequence[Observation], cfg: PipelineConfig) -> ChoiceDataset:
    kept, dropped = [], []
    for o in sorted(observations, key=lambda o: o.cluster_id):
        reason = drop_reason(o, cfg)
        if reason is None:
            kept.append(o)
        else:
            dropped.append({"cluster_id": o.cluster_id, "reason": reason})
            log.info("dropping %s: %s", o.cluster_id, reason)
    cols, pairs = collinearity_screen(kept, cfg.correlation_threshold, cfg.drop_priority)
    return ChoiceDataset(kept, dropped, cols, pairs, cfg.cutoff_time)
