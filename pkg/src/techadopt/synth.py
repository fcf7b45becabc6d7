"""Synthetic corpora and choice datasets with planted ground truth.

Two generators live here.  :func:`simulate_dataset` draws predictor columns
from marginals matched to published summary statistics and labels them from
the logit, for estimator round trips.  :func:`generate_corpus` plants a whole
mining corpus (commits, blobs, registry, issues, posts) and records every
fact the pipeline should recover in a ledger computed without the pipeline's
own code.
"""
from __future__ import annotations

import hashlib
import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .choice import (ALTERNATIVES, REFERENCE_COEFFICIENTS, REFERENCE_SUMMARY, SCHEMA_VERSION,
                     ChoiceData, ModelSpec)
from .config import parse_time
from .networks import DependencyGraph, write_registry
from .predictors import PostRecord, write_posts
from .store import BlobRecord, CommitRecord, write_blob_dump, write_commit_dump
from .survival import SECONDS_PER_DAY, IssueRecord, write_issues

DAY = 86400
DT, TIDY = "data.table", "tidy"
TIDY_ALIASES = ("readr", "tibble", "tidyr")
FOCAL_REPOS = {DT: ("Rdatatable/data.table",),
               TIDY: ("tidyverse/readr", "tidyverse/tibble", "tidyverse/tidyr")}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per named sub-stream of a master seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


# ---------------------------------------------------------------- datasets

def simulate_predictors(n: int, seed: int = 0, summary=None) -> dict[str, np.ndarray]:
    """Predictor columns with medians, means and spreads near ``summary``.

    Choice-related variables share one latent time factor, so both
    alternatives' counts move together as in a real adoption history.
    """
    s = summary or REFERENCE_SUMMARY
    rng = stream(seed, "predictors")
    u = rng.standard_normal(n)

    def coupled(rho):
        return rho * u + math.sqrt(1 - rho ** 2) * rng.standard_normal(n)

    def mean_sd(name):
        return s[name][1], s[name][2]

    cols: dict[str, np.ndarray] = {}
    m, sd = mean_sd("CumNum.datatable")
    cols["CumNum.datatable"] = np.clip(m + sd * coupled(0.9), 0, None).round()
    m, sd = mean_sd("CumNum.tidy")
    shape = (m / sd) ** 2
    cols["CumNum.tidy"] = stats.gamma.ppf(stats.norm.cdf(coupled(0.9)), shape, scale=m / shape).round()
    for v, rho in (("StckExch", 0.97), ("RplGp", 0.5), ("Unrslvd", 0.5)):
        for alt in ALTERNATIVES:
            m, sd = mean_sd(f"{v}.{alt}")
            x = m + sd * coupled(rho)
            if v == "StckExch":
                x = np.clip(x, 0, None).round()
            elif v == "Unrslvd":
                x = np.clip(x, 0, 1)
            else:
                x = np.clip(x, 0, None)
            cols[f"{v}.{alt}"] = x

    m_a = s["Aths"][1] - 1
    aths = 1 + rng.negative_binomial(0.02, 0.02 / (0.02 + m_a), n)
    cmts = np.maximum(np.round(np.exp(math.log(max(s["Cmts"][0], 1)) + 2.34 * rng.standard_normal(n))), 1)
    cols["Aths"] = aths.astype(float)
    cols["Cmts"] = np.maximum(cmts, aths).astype(float)
    cols["C"] = (rng.random(n) < s["C"][1]).astype(float)

    # relevant-package count, split between the two roots per observation
    total = s["Prx2DT"][1] + s["Prx2TD"][1]
    k = (rng.random(n) < 0.2) * rng.negative_binomial(0.5, 0.5 / (0.5 + total / 0.2), n)
    frac_t = s["Prx2TD"][1] / total
    share_t = rng.beta(100 * frac_t, 100 * (1 - frac_t), n)
    cols["Prx2TD"] = k * share_t
    cols["Prx2DT"] = k * (1 - share_t)
    # Beta(1, 1.3) has mean 1/2.3; the exposure probability scales it to the target mean
    for name, p in (("AthPrx2TD", s["AthPrx2TD"][1] / 0.435), ("AthPrx2DT", s["AthPrx2DT"][1] / 0.435)):
        cols[name] = (rng.random(n) < min(p, 1.0)) * rng.beta(1.0, 1.3, n)
    return cols


def choice_probabilities(columns, beta, spec: ModelSpec = ModelSpec()) -> np.ndarray:
    vec = np.array([beta.get(k, 0.0) for k in spec.param_names])
    V = spec.design(columns) @ vec
    return np.exp(V - logsumexp(V, axis=1, keepdims=True))


def simulate_choices(columns, beta=None, seed: int = 0, spec: ModelSpec = ModelSpec()) -> np.ndarray:
    """Chosen alternative index per row, drawn from the logit at ``beta``."""
    beta = REFERENCE_COEFFICIENTS if beta is None else beta
    P = choice_probabilities(columns, beta, spec)
    u = stream(seed, "choices").random(len(P))
    return (u[:, None] > np.cumsum(P, axis=1)).sum(axis=1)


def simulate_dataset(n: int, seed: int = 0, beta=None, spec: ModelSpec = ModelSpec(),
                     summary=None) -> ChoiceData:
    cols = simulate_predictors(n, seed, summary)
    return ChoiceData(cols, simulate_choices(cols, beta, seed, spec))


# ---------------------------------------------------------------- corpus

@dataclass
class ScenarioConfig:
    seed: int = 0
    n_bases: int = 400                 # observation units before fork duplication
    forks_per_base: int = 2            # 2 gives the 3:1 project-to-cluster shape
    pre_cutoff_share: float = 0.1
    tie_share: float = 0.01
    empty_history_share: float = 0.02  # key commit is the unit's first commit
    c_share: float = 0.1
    registry_user_share: float = 0.45
    n_authors: int = 600
    n_bridges: int = 12
    n_background: int = 10
    registry_scale: float = 0.1
    issues_per_year: tuple[float, float] = (40.0, 40.0)
    reply_median_days: tuple[float, float] = (1.41, 1.95)  # KM medians
    never_replied: float = 0.15
    open_share: tuple[float, float] = (0.24, 0.12)
    posts_base: tuple[int, int] = (110, 137)
    posts_growth: tuple[int, int] = (36, 45)
    start: str = "2012-01-01"
    cutoff: str = "2014-06-16"
    stop: str = "2019-12-31"
    score_threshold: int = 20
    beta: dict = field(default_factory=lambda: dict(REFERENCE_COEFFICIENTS))

    @classmethod
    def small(cls, seed: int = 0) -> "ScenarioConfig":
        return cls(seed=seed, n_bases=8, forks_per_base=2, pre_cutoff_share=0.0, tie_share=0.0,
                   empty_history_share=0.0, n_authors=30, n_bridges=2, n_background=2)

    @classmethod
    def fixture(cls, seed: int = 0) -> "ScenarioConfig":
        return cls(seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)


def commit_sha(project: str, index: int, seed: int) -> str:
    return hashlib.sha1(f"{project}:{index}:{seed}".encode()).hexdigest()


def blob_sha(content: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(content) + content).hexdigest()


def _allocate(n: int, weights) -> list[int]:
    """Split ``n`` over layers by largest remainder, filling shallow layers first."""
    w = np.asarray(weights, float) / np.sum(weights)
    raw = n * w
    out = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - out), kind="stable")[: n - out.sum()]:
        out[i] += 1
    for i in range(len(out) - 1):  # every layer up to the deepest used is non-empty
        if out[i] == 0 and out[i + 1:].sum() > 0:
            j = i + 1 + int(np.argmax(out[i + 1:]))
            out[i], out[j] = 1, out[j] - 1
    return out.tolist()


LAYER_WEIGHTS = (0.45, 0.3, 0.15, 0.07, 0.03)


def plant_registry(rng: np.random.Generator, n_dt: int, n_tidy: int, n_common: int,
                   n_unrelated: int = 20) -> tuple[DependencyGraph, dict[str, tuple[int | None, int | None]]]:
    """Registry with exactly planted downstream depths.

    Exclusive packages form per-root spines (depth k depends on depth k-1);
    common packages depend on one spine member of each side.  Returns the
    graph and the planted ``(D_ad, D_at)`` of every package within depth 5.
    """
    if n_common > min(n_dt, n_tidy):
        raise ValueError("common packages cannot outnumber either side")
    deps: dict[str, set[str]] = {DT: set(), "tibble": set(), "tidyr": {"tibble"}, "readr": {"tibble"}}
    depth: dict[str, tuple[int | None, int | None]] = {}
    spines = {}
    for side, n_only, prefix in (("d", n_dt - n_common, "dtx"), ("t", n_tidy - n_common, "tdx")):
        layers = _allocate(n_only, LAYER_WEIGHTS) if n_only else [0] * 5
        spine: list[list[str]] = [[DT] if side == "d" else list(TIDY_ALIASES)]
        i = 0
        for k, cnt in enumerate(layers, 1):
            names = []
            for _ in range(cnt):
                name = f"{prefix}{i}"
                i += 1
                parents = spine[k - 1]
                d = {parents[rng.integers(len(parents))]}
                if k > 1 and rng.random() < 0.3:  # second parent at the same distance
                    d.add(parents[rng.integers(len(parents))])
                deps[name] = d
                depth[name] = (k, None) if side == "d" else (None, k)
                names.append(name)
            spine.append(names)
        spines[side] = spine
    # common packages: any (dd, dt) whose parent layers exist
    ok_d = [k for k in range(1, 6) if spines["d"][k - 1]]
    ok_t = [k for k in range(1, 6) if spines["t"][k - 1]]
    pd = np.array(LAYER_WEIGHTS[: len(ok_d)]) / sum(LAYER_WEIGHTS[: len(ok_d)])
    pt = np.array(LAYER_WEIGHTS[: len(ok_t)]) / sum(LAYER_WEIGHTS[: len(ok_t)])
    for i in range(n_common):
        dd = ok_d[rng.choice(len(ok_d), p=pd)]
        dt = ok_t[rng.choice(len(ok_t), p=pt)]
        a, b = spines["d"][dd - 1], spines["t"][dt - 1]
        name = f"both.{i}"
        deps[name] = {a[rng.integers(len(a))], b[rng.integers(len(b))]}
        depth[name] = (dd, dt)
    # just past the depth limit: not downstream under max_depth = 5
    for side in ("d", "t"):
        if len(spines[side]) > 5 and spines[side][5]:
            deps[f"deep{side}"] = {spines[side][5][0]}
    for i in range(n_unrelated):
        d = {f"u{j}" for j in range(i) if rng.random() < 0.1}
        deps[f"u{i}"] = d
    # an unrelated package depending on nothing focal, but with a dotted name
    deps["data.table.extra"] = {"u0"} if n_unrelated else set()
    return DependencyGraph({k: set(v) for k, v in deps.items()}), depth


def planted_weights(depth: dict) -> dict[str, tuple[Fraction, Fraction]]:
    out = {}
    for pkg, (dd, dt) in depth.items():
        if dd is None:
            out[pkg] = (Fraction(0), Fraction(1))
        elif dt is None:
            out[pkg] = (Fraction(1), Fraction(0))
        else:
            out[pkg] = (Fraction(dt, dd + dt), Fraction(dd, dd + dt))
    return out


@dataclass
class _Commit:
    project: str
    index: int
    sha: str
    parent: str | None
    author: str
    time: int
    files: list[tuple[str, str]]        # (path, content); content may hold a choice marker
    packages: set[str] = field(default_factory=set)  # registry packages newly countable


@dataclass
class _Unit:
    base: str
    projects: list[str]
    end_time: int
    n_pre: int
    tie: bool
    pre_cutoff: bool
    alias: dict[str, str]               # alternative -> statement used at the key commit
    choice: str | None = None


KEY_MARKER = "@@KEY@@"
OTHER_MARKER = "@@OTHER@@"

DT_FORMS = ("library(data.table)", 'require("data.table")', 'install.packages("data.table")',
            "library('data.table')")
TIDY_FORMS = ("library(tidyr)", "library(tibble)", "library(readr)", 'install.packages("readr")',
              "require('tibble')", "library(tidyr, warn.conflicts = FALSE)")
DECOY_LINES = ("# library(tidyr)", 'requireNamespace("data.table", quietly = TRUE)', "library(tidyverse)",
               "library(data.table.extra)", "dt <- 'fast'  # install.packages(\"readr\")",
               "tidyr_like <- 1")


def _use_line(rng, pkg: str) -> str:
    form = rng.integers(4)
    return (f"library({pkg})", f'require("{pkg}")', f'install.packages("{pkg}")',
            f"library({pkg}, quietly = TRUE)")[form]


class _Corpus:
    """Mutable planning state; materialized into records at the end."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.commits: list[_Commit] = []
        self.by_project: dict[str, list[_Commit]] = {}
        self.start = parse_time(cfg.start)
        self.cutoff = parse_time(cfg.cutoff)
        self.stop = parse_time(cfg.stop)

    def add(self, project, author, time, files, packages=(), parent=None, index=None, sha=None):
        lst = self.by_project.setdefault(project, [])
        index = len(lst) if index is None else index
        if parent is None and lst:
            parent = lst[-1].sha
        c = _Commit(project, index, sha or commit_sha(project, index, self.cfg.seed), parent,
                    author, int(time), list(files), set(packages))
        lst.append(c)
        self.commits.append(c)
        return c

    def share(self, project, commit: _Commit):
        """Record an existing commit as also belonging to ``project`` (a fork)."""
        c = _Commit(project, commit.index, commit.sha, commit.parent, commit.author, commit.time,
                    commit.files, commit.packages)
        self.by_project.setdefault(project, []).append(c)
        self.commits.append(c)


def _uniform_time(rng, lo: int, hi: int) -> int:
    return int(rng.integers(lo, max(hi, lo + 1)))


def generate_corpus(cfg: ScenarioConfig) -> dict:
    """Plant a corpus; returns records plus the ground-truth ledger.

    Keys: ``commits`` (list of CommitRecord), ``blobs``, ``registry``
    (DependencyGraph), ``issues``, ``posts`` and ``ledger``.
    """
    corpus = _Corpus(cfg)
    r_reg = stream(cfg.seed, "registry")
    r_auth = stream(cfg.seed, "authors")
    r_com = stream(cfg.seed, "commits")
    r_iss = stream(cfg.seed, "issues")
    r_post = stream(cfg.seed, "posts")
    r_choice = stream(cfg.seed, "choices")

    s = cfg.registry_scale
    graph, depth = plant_registry(r_reg, int(813 * s), int(2203 * s), int(636 * s))
    members = sorted(depth)
    unrelated = sorted(p for p in graph.deps if p not in depth and p not in (DT,) + TIDY_ALIASES)

    # ---- people: core maintainers, bridges between them and everyone else
    pool = [f"u{i:04d}" for i in range(cfg.n_authors)]
    core = {DT: [f"dtcore{i}" for i in range(4)] + ["bothcore"],
            TIDY: [f"tdcore{i}" for i in range(6)] + ["bothcore"]}
    first_focal = {DT: parse_time("2011-01-01"), TIDY: parse_time("2014-01-01")}
    for pkg, repos in FOCAL_REPOS.items():
        for repo in repos:
            corpus.add(repo, core[pkg][0], first_focal[pkg] - 30 * DAY,
                       [("R/init.R", f"# {repo}\nlibrary({DT if pkg == DT else 'tibble'})\n")])
        for a in core[pkg]:
            t0 = _uniform_time(r_auth, first_focal[pkg], corpus.stop - 700 * DAY)
            for k in range(int(r_auth.integers(1, 4))):
                repo = repos[int(r_auth.integers(len(repos)))]
                t = t0 + k * int(r_auth.integers(DAY, 90 * DAY))
                corpus.add(repo, a, t, [(f"R/{a}.R", f"# {a} {k}\nx{k} <- {k}\n")])
    for repo_list in corpus.by_project.values():
        repo_list.sort(key=lambda c: c.time)
        for i, c in enumerate(repo_list):
            c.index = i
            c.sha = commit_sha(c.project, i, cfg.seed)
            c.parent = repo_list[i - 1].sha if i else None
    everyone_core = sorted(set(core[DT]) | set(core[TIDY]))
    bridged: list[str] = []
    for b in range(cfg.n_bridges):
        proj = f"lab{b}/shared"
        people = [everyone_core[int(r_auth.integers(len(everyone_core)))]]
        people += [pool[int(r_auth.integers(len(pool)))] for _ in range(int(r_auth.integers(3, 7)))]
        bridged += people[1:]
        events = sorted((_uniform_time(r_auth, corpus.start, corpus.stop), a)
                        for a in people for _ in range(int(r_auth.integers(1, 3))))
        for t, a in events:
            corpus.add(proj, a, t, [("analysis.py", f"# {proj} {a} {t}\n")])
    bridged = sorted(set(bridged))

    # ---- observation units
    n_pre_cut = int(round(cfg.pre_cutoff_share * cfg.n_bases))
    units: list[_Unit] = []
    for i in range(cfg.n_bases):
        base = f"org{i:04d}/proj{i}"
        pre_cutoff = i < n_pre_cut
        if pre_cutoff:
            T = _uniform_time(r_com, corpus.start + 60 * DAY, corpus.cutoff - DAY)
        else:
            T = _uniform_time(r_com, corpus.cutoff, corpus.stop - 30 * DAY)
        tie = (not pre_cutoff) and r_com.random() < cfg.tie_share
        if r_com.random() < cfg.empty_history_share:
            n_pre = 0
        else:
            n_pre = int(np.clip(round(math.exp(math.log(3) + 1.0 * r_com.standard_normal())), 1, 60))
        owner = pool[int(r_com.integers(len(pool)))]
        team = [owner]
        for _ in range(int(r_com.geometric(0.55)) - 1):
            x = r_com.random()
            if x < 0.03:
                team.append(everyone_core[int(r_com.integers(len(everyone_core)))])
            elif x < 0.35 and bridged:
                team.append(bridged[int(r_com.integers(len(bridged)))])
            else:
                team.append(pool[int(r_com.integers(len(pool)))])
        span = int(min(T - (corpus.start - 365 * DAY), math.exp(5 + r_com.standard_normal()) * DAY))
        times = sorted({T - 1 - int(r_com.integers(0, max(span, 2))) for _ in range(n_pre)})
        while len(times) < n_pre:  # vanishingly rare collisions
            times.insert(0, times[0] - 1)
        uses_registry = r_com.random() < cfg.registry_user_share
        planted = []
        if uses_registry and n_pre:
            k = 1 + int(r_com.negative_binomial(0.8, 0.8 / (0.8 + 3.0)))
            for _ in range(k):
                if r_com.random() < 0.85:
                    planted.append(members[int(r_com.integers(len(members)))])
                else:
                    planted.append(unrelated[int(r_com.integers(len(unrelated)))])
        c_commit = int(r_com.integers(n_pre)) if (n_pre and r_com.random() < cfg.c_share) else -1
        c_path = ("src/fast.c", "src/Fast.C")[int(r_com.integers(2))]
        cpp = r_com.random() < 0.1
        decoy = DECOY_LINES[int(r_com.integers(len(DECOY_LINES)))] if r_com.random() < 0.3 else None
        lines = [f"# {base}"]
        for j, t in enumerate(times):
            author = owner if j == 0 else team[int(r_com.integers(len(team)))]
            files = []
            new_pk: set[str] = set()
            if j == 0 or r_com.random() < 0.8:
                for pkg in planted[j::max(n_pre, 1)]:
                    lines.append(_use_line(r_com, pkg))
                    if pkg in depth:
                        new_pk.add(pkg)
                if j == 0 and decoy:
                    lines.append(decoy)
                lines.append(f"v{j} <- {j}")
                files.append(("R/analysis.R", "\n".join(lines) + "\n"))
            else:
                # packages drawn for a commit without an R change stay commented out
                for pkg in planted[j::max(n_pre, 1)]:
                    lines.append(f"# pending {pkg}")
                files.append(("README.md", f"{base} rev {j}\n"))
            if j == c_commit:
                files.append((c_path, f"int f{j}(void) {{ return {j}; }}\n"))
            if cpp and j == 0:
                files.append(("src/fast.cpp", "int g() { return 0; }\n"))
            if j == 0 and r_com.random() < 0.2:
                files.append(("notes.Rmd", "```{r}\nlibrary(tidyr)\n```\n"))
            corpus.add(base, author, t, files, new_pk)
        # key commit: statement per alternative fixed now, picked after the choice
        alias = {"datatable": DT_FORMS[int(r_com.integers(len(DT_FORMS)))],
                 "tidy": TIDY_FORMS[int(r_com.integers(len(TIDY_FORMS)))]}
        key_path = "R/analysis.R" if r_com.random() < 0.8 else "R/load.r"
        key_author = team[int(r_com.integers(len(team)))] if n_pre else owner
        base_lines = lines if key_path == "R/analysis.R" else [f"# {base} loader"]
        corpus.add(base, key_author, T, [(key_path, "\n".join(base_lines + [KEY_MARKER]) + "\n")])
        post_lines = list(base_lines) + [KEY_MARKER]
        t = T
        for j in range(int(r_com.integers(0, 4))):
            t += int(r_com.integers(3600, 200 * DAY))
            if r_com.random() < 0.4:
                post_lines.append(OTHER_MARKER)
            if r_com.random() < 0.5:
                post_lines.append(_use_line(r_com, members[int(r_com.integers(len(members)))]))
            author = pool[int(r_com.integers(len(pool)))] if r_com.random() < 0.5 else owner
            corpus.add(base, author, t, [(key_path, "\n".join(post_lines) + "\n")])
        base_commits = list(corpus.by_project[base])
        projects = [base]
        for f in range(cfg.forks_per_base):
            fork = f"fork{f}-{i:04d}/proj{i}"
            projects.append(fork)
            k = int(r_com.integers(1, len(base_commits) + 1))
            for c in base_commits[:k]:
                corpus.share(fork, c)
            fork_owner = pool[int(r_com.integers(len(pool)))]
            t = base_commits[k - 1].time
            for j in range(int(r_com.integers(0, 4))):
                t += int(r_com.integers(3600, 100 * DAY))
                new_pk = set()
                if t < T:
                    pkg = members[int(r_com.integers(len(members)))]
                    files = [("R/fork.R", f"# {fork} {j}\n{_use_line(r_com, pkg)}\n")]
                    new_pk.add(pkg)
                else:
                    files = [("R/fork.R", f"# {fork} {j}\n{OTHER_MARKER}\n")]
                corpus.add(fork, fork_owner, t, files, new_pk, index=k + j,
                           parent=corpus.by_project[fork][-1].sha)
        units.append(_Unit(base, projects, T, n_pre, tie, pre_cutoff, alias))

    for b in range(cfg.n_background):
        proj = f"misc{b}/tool"
        owner = pool[int(r_com.integers(len(pool)))]
        t = _uniform_time(r_com, corpus.start, corpus.stop - 400 * DAY)
        lines = [f"# {proj}"]
        for j in range(int(r_com.integers(1, 5))):
            t += int(r_com.integers(DAY, 90 * DAY))
            lines.append(_use_line(r_com, unrelated[int(r_com.integers(len(unrelated)))]))
            lines.append(DECOY_LINES[j % len(DECOY_LINES)])
            corpus.add(proj, owner, t, [("R/tool.R", "\n".join(lines) + "\n")])

    issues = _plant_issues(cfg, r_iss, corpus)
    posts, post_truth = _plant_posts(cfg, r_post, corpus)

    ledger = _ledger(cfg, corpus, units, depth, graph, issues, posts, post_truth, r_choice)
    commits, blobs = _materialize(corpus, units)
    return {"commits": commits, "blobs": blobs, "registry": graph, "issues": issues,
            "posts": posts, "ledger": ledger}


def _plant_issues(cfg, rng, corpus) -> list[IssueRecord]:
    out = []
    starts = {DT: corpus.start - 180 * DAY, TIDY: parse_time("2014-01-01")}
    for k, pkg in enumerate((DT, TIDY)):
        years = (corpus.stop - starts[pkg]) / (365.25 * DAY)
        n = int(rng.poisson(cfg.issues_per_year[k] * years))
        created = np.sort(rng.integers(starts[pkg], corpus.stop, n))
        # never-replied issues hold the curve up: S = 1 - (1 - q) F, so aim F at 0.5 / (1 - q)
        scale = cfg.reply_median_days[k] / -math.log(1 - 0.5 / (1 - cfg.never_replied)) * DAY
        for i, c in enumerate(created.tolist()):
            reply = None if rng.random() < cfg.never_replied else c + int(rng.exponential(scale))
            if rng.random() < cfg.open_share[k]:
                closed = None
            else:
                closed = max(reply or c, c) + int(rng.exponential(20 * DAY)) + 1
            out.append(IssueRecord(pkg, f"{'dt' if pkg == DT else 'td'}-{i}", c, reply, closed))
    return out


def _plant_posts(cfg, rng, corpus):
    """Questions and answers; returns posts and which alternatives each one counts for."""
    posts, truth = [], {}
    early = corpus.start - 3 * 365 * DAY
    schedules = [
        ("datatable", cfg.posts_base[0], early, corpus.start,
         ("Fast joins with data.table", "Data.Table rolling join", "grouping in DATA.TABLE")),
        ("datatable", cfg.posts_growth[0], corpus.start, corpus.stop,
         ("data.table keyed subset", "Why is data.table fast")),
        ("tidy", cfg.posts_base[1], early, corpus.cutoff,
         ("What is tidy data", "Tidy reshaping of wide tables")),
        ("tidy", cfg.posts_growth[1], corpus.cutoff, corpus.stop,
         ("tidyr gather vs spread", "TidyVerse pipes", "tidy evaluation in functions")),
    ]
    pid = 0
    for alt, count, lo, hi, titles in schedules:
        for _ in range(count):
            t = _uniform_time(rng, lo, hi)
            posts.append(PostRecord(f"q{pid}", t, int(rng.integers(cfg.score_threshold + 1, 400)),
                                    titles[pid % len(titles)], "How do I do this?", True))
            truth[f"q{pid}"] = {alt}
            pid += 1
    # noise: low scores, the exact threshold, answers, unrelated topics, alias names
    # without either search term, and posts counting for both
    for _ in range(150):
        t = _uniform_time(rng, early, corpus.stop)
        kind = int(rng.integers(6))
        body = "Compare data.table with tidyr" if kind == 4 else "see data.table and tidy docs"
        if kind == 0:
            p = PostRecord(f"q{pid}", t, int(rng.integers(0, cfg.score_threshold)), "data.table question", body, True)
        elif kind == 1:
            p = PostRecord(f"q{pid}", t, cfg.score_threshold, "tidyr question", body, True)
        elif kind == 2:
            p = PostRecord(f"a{pid}", t, 100, "", body, False)
        elif kind == 3:
            p = PostRecord(f"q{pid}", t, 100, "pandas merge", "pd.merge(left, right)", True)
        elif kind == 4:
            p = PostRecord(f"q{pid}", t, 50, "Choosing a data frame library", body, True)
        else:
            p = PostRecord(f"q{pid}", t, 90, ("tibble printing", "readr parse dates")[pid % 2],
                           "print the first rows", True)
        truth[p.post_id] = {"datatable", "tidy"} if kind == 4 else set()
        posts.append(p)
        pid += 1
    posts.sort(key=lambda p: (p.creation_date, p.post_id))
    return posts, truth


def _resolve(text: str, unit: _Unit) -> str:
    if unit.tie:
        key = unit.alias["datatable"] + "\n" + unit.alias["tidy"]
    else:
        key = unit.alias[unit.choice]
    other = unit.alias["tidy" if unit.choice == "datatable" else "datatable"]
    return text.replace(KEY_MARKER, key).replace(OTHER_MARKER, other)


def _materialize(corpus: _Corpus, units: list[_Unit]):
    unit_of = {p: u for u in units for p in u.projects}
    commits, blobs = [], {}
    for c in sorted(corpus.commits, key=lambda c: (c.project, c.index)):
        u = unit_of.get(c.project)
        files = []
        for path, text in c.files:
            data = (_resolve(text, u) if u else text).encode()
            sha = blob_sha(data)
            blobs[sha] = BlobRecord(sha, data)
            files.append((path, sha))
        commits.append(CommitRecord(c.sha, (c.parent,) if c.parent else (), c.author, c.time,
                                    c.project, tuple(files)))
    return commits, [blobs[k] for k in sorted(blobs)]


# ---------------------------------------------------------------- ledger

def _naive_km_median(durations):
    """Product-limit median by direct enumeration; ``(value, reached)``."""
    times = sorted({d for d, e in durations if e})
    s = Fraction(1)
    for t in times:
        n = sum(1 for d, _ in durations if d >= t)
        d = sum(1 for x, e in durations if e and x == t)
        s *= 1 - Fraction(d, n)
        if s <= 0.5:
            return t, True
    return max(d for d, _ in durations), False


def _ledger(cfg, corpus, units, depth, graph, issues, posts, post_truth, rng) -> dict:
    weights = planted_weights(depth)
    focal_repos = {r for rs in FOCAL_REPOS.values() for r in rs}
    # first contact of each author with each project, straight from the planted records
    contact: dict[tuple[str, str], int] = {}
    for c in corpus.commits:
        key = (c.author, c.project)
        contact[key] = min(contact.get(key, c.time), c.time)
    by_project: dict[str, list[tuple[str, int]]] = {}
    by_author: dict[str, list[tuple[str, int]]] = {}
    for (a, p), t in contact.items():
        by_project.setdefault(p, []).append((a, t))
        by_author.setdefault(a, []).append((p, t))

    def exposure(author, T, alt):
        repos = FOCAL_REPOS[DT if alt == "datatable" else TIDY]
        direct = {a for r in repos for a, t in by_project.get(r, ()) if t < T}
        if author in direct:
            return 1
        for p, t in by_author.get(author, ()):
            if t < T and any(a in direct and ta < T for a, ta in by_project[p]):
                return 2
        return None

    def split(dd, dt):
        if dd is None and dt is None:
            return Fraction(0), Fraction(0)
        if dt is None:
            return Fraction(1), Fraction(0)
        if dd is None:
            return Fraction(0), Fraction(1)
        return Fraction(dt, dd + dt), Fraction(dd, dd + dt)

    issues_by = {DT: [i for i in issues if i.package == DT], TIDY: [i for i in issues if i.package == TIDY]}

    def reply_gap(pkg, T):
        d = []
        for i in issues_by[pkg]:
            if i.created_at < T:
                if i.first_reply_at is not None and i.first_reply_at < T:
                    d.append(((i.first_reply_at - i.created_at) / SECONDS_PER_DAY, True))
                else:
                    d.append(((T - i.created_at) / SECONDS_PER_DAY, False))
        if not d:
            return None, "no_issues_before_end"
        m, reached = _naive_km_median(d)
        return m, "" if reached else "median_not_reached"

    def unresolved(pkg, T):
        before = [i for i in issues_by[pkg] if i.created_at < T]
        if not before:
            return None
        return sum(1 for i in before if i.closed_at is None or i.closed_at >= T) / len(before)

    def stack(alt, T):
        return sum(1 for p in posts if p.is_question and p.score > cfg.score_threshold
                   and p.creation_date < T and alt in post_truth[p.post_id])

    obs: dict[str, dict] = {}
    unit_rows = []
    for u in units:
        cid = min(u.projects)
        T = u.end_time
        pre = {}
        for p in u.projects:
            for c in corpus.by_project[p]:
                if c.time < T:
                    pre[c.sha] = c
        authors = {c.author for c in pre.values()}
        installed = set().union(*(c.packages for c in pre.values())) if pre else set()
        v: dict = {"Cmts": len(pre), "Aths": len(authors),
                   "C": int(any(path.rsplit("/", 1)[-1].endswith((".c", ".C"))
                                for c in pre.values() for path, _ in c.files))}
        p_d = sum((weights[k][0] for k in installed if k in weights), Fraction(0))
        p_t = sum((weights[k][1] for k in installed if k in weights), Fraction(0))
        v["Prx2DT"], v["Prx2TD"] = float(p_d), float(p_t)
        s_d = s_t = Fraction(0)
        for a in authors:
            w_d, w_t = split(exposure(a, T, "datatable"), exposure(a, T, "tidy"))
            s_d, s_t = s_d + w_d, s_t + w_t
        n_a = max(len(authors), 1)
        v["AthPrx2DT"], v["AthPrx2TD"] = float(s_d / n_a), float(s_t / n_a)
        flags = []
        for alt, pkg in (("datatable", DT), ("tidy", TIDY)):
            g, why = reply_gap(pkg, T)
            v[f"RplGp.{alt}"] = g
            if why:
                flags.append(f"rplgp_{why}.{alt}")
            un = unresolved(pkg, T)
            v[f"Unrslvd.{alt}"] = un
            if un is None:
                flags.append(f"unrslvd_undefined.{alt}")
            v[f"StckExch.{alt}"] = stack(alt, T)
        obs[cid] = v
        unit_rows.append((T, cid, u, flags))

    # choices in end-time order; CumNum counts strictly earlier adopters
    spec = ModelSpec()
    unit_rows.sort(key=lambda r: (r[0], r[1]))
    chosen_times: dict[str, list[int]] = {"datatable": [], "tidy": []}
    for T, cid, u, flags in unit_rows:
        v = obs[cid]
        for alt in ALTERNATIVES:
            v[f"CumNum.{alt}"] = sum(1 for t in chosen_times[alt] if t < T)
        draw = rng.random()
        if u.pre_cutoff or u.tie:
            u.choice = "datatable"
        else:
            vals = [v[c] for c in spec.columns()]
            if any(x is None for x in vals):
                p_tidy = 0.5
            else:
                cols = {c: np.array([float(v[c])]) for c in spec.columns()}
                p_tidy = float(choice_probabilities(cols, cfg.beta, spec)[0, 1])
            u.choice = "tidy" if draw < p_tidy else "datatable"
        chosen_times[u.choice].append(T)

    clusters, dataset_rows, dropped = {}, [], {}
    cutoff = corpus.cutoff
    for T, cid, u, flags in sorted(unit_rows, key=lambda r: r[1]):
        v = obs[cid]
        clusters[cid] = {"members": sorted(u.projects), "chosen_package": DT if u.choice == "datatable" else TIDY,
                         "end_time": T, "tie": u.tie, "chosen": u.choice}
        reason = None
        if u.tie:
            reason = "tied_first_adoption"
        elif T < cutoff:
            reason = "before_cutoff"
        elif v["Cmts"] < 1:
            reason = "no_commits_before_end"
        else:
            for f in flags:
                reason = f
                break
        if reason:
            dropped[cid] = reason
        else:
            dataset_rows.append(cid)

    adoption = {}
    for u in units:
        for p in u.projects:
            times = {}
            for c in corpus.by_project[p]:
                for _, text in c.files:
                    if KEY_MARKER in text:
                        times.setdefault(DT if u.choice == "datatable" else TIDY, c.time)
                        if u.tie:
                            times.setdefault(TIDY, c.time)
                    if OTHER_MARKER in text:
                        times.setdefault(TIDY if u.choice == "datatable" else DT, c.time)
            for pkg, t in times.items():
                adoption.setdefault(p, {})[pkg] = min(t, adoption.get(p, {}).get(pkg, t))
    for pkg, repos in FOCAL_REPOS.items():
        for r in repos:
            adoption[r] = {pkg: corpus.by_project[r][0].time}

    # partition of every project by shared commits (planted: units plus singletons)
    partition = {min(u.projects): sorted(u.projects) for u in units}
    for p in corpus.by_project:
        if not any(p in u.projects for u in units):
            partition[p] = [p]

    cm = _map_cardinalities(corpus, units)
    common = sum(1 for d in depth.values() if d[0] is not None and d[1] is not None)
    n_d = sum(1 for d in depth.values() if d[0] is not None)
    n_t = sum(1 for d in depth.values() if d[1] is not None)
    return {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "store": {"commits": len({c.sha for c in corpus.commits}), "projects": len(corpus.by_project),
                  "maps": cm},
        "adoption": {p: adoption[p] for p in sorted(adoption)},
        "partition": {k: partition[k] for k in sorted(partition)},
        "clusters": clusters,
        "registry": {"depths": {k: list(depth[k]) for k in sorted(depth)},
                     "downstream_datatable": n_d, "downstream_tidy": n_t, "common": common},
        "predictors": {cid: obs[cid] for cid in sorted(obs)},
        "dataset": {"kept": sorted(dataset_rows), "dropped": {k: dropped[k] for k in sorted(dropped)}},
    }


def _map_cardinalities(corpus, units) -> dict:
    unit_of = {p: u for u in units for p in u.projects}
    r_paths, r_blobs, r_commits, r_projects = set(), set(), set(), set()
    for c in corpus.commits:
        for path, text in c.files:
            if path.rsplit("/", 1)[-1].endswith((".r", ".R")):
                u = unit_of.get(c.project)
                r_blobs.add(blob_sha((_resolve(text, u) if u else text).encode()))
                r_paths.add(path)
                r_commits.add(c.sha)
                r_projects.add(c.project)
    return {"f2b": len(r_paths), "b2cnt": len(r_blobs), "b2cmt": len(r_blobs),
            "cmt2prj": len(r_commits), "prj2cmt": len(r_projects), "cmt2file": len(r_commits)}


def write_corpus(corpus: dict, outdir) -> dict[str, str]:
    """Write dumps and the ledger; returns the file paths by role."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: str(out / f) for k, f in (("commits", "commits.jsonl"), ("blobs", "blobs.jsonl"),
                                          ("registry", "registry.jsonl"), ("issues", "issues.jsonl"),
                                          ("posts", "posts.jsonl"), ("ledger", "ledger.json"))}
    write_commit_dump(paths["commits"], corpus["commits"])
    write_blob_dump(paths["blobs"], corpus["blobs"])
    write_registry(paths["registry"], corpus["registry"])
    write_issues(paths["issues"], corpus["issues"])
    write_posts(paths["posts"], corpus["posts"])
    with open(paths["ledger"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(corpus["ledger"], indent=1, sort_keys=True) + "\n")
    paths["config"] = str(out / "pipeline.json")
    with open(paths["config"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(pipeline_config_doc_from_ledger(corpus["ledger"]), indent=2, sort_keys=True) + "\n")
    return paths


def pipeline_config_doc_from_ledger(ledger: dict) -> dict:
    return pipeline_config_doc(ScenarioConfig(**ledger["config"]))


def pipeline_config_doc(cfg: ScenarioConfig) -> dict:
    """Pipeline settings matching a scenario; file paths are relative to the corpus."""
    return {"schema_version": SCHEMA_VERSION, "commits": "commits.jsonl", "blobs": "blobs.jsonl",
            "registry": "registry.jsonl", "issues": "issues.jsonl", "posts": "posts.jsonl",
            "cutoff_date": cfg.cutoff, "score_threshold": cfg.score_threshold, "seed": cfg.seed}


# ---------------------------------------------------------------- round trip

def _diff(name, expected, got, limit=20) -> dict:
    diffs = []
    for k in sorted(set(expected) | set(got), key=str):
        e, g = expected.get(k, "<missing>"), got.get(k, "<missing>")
        if e != g:
            diffs.append({"key": k, "expected": e, "got": g})
    return {"stage": name, "passed": not diffs, "mismatches": len(diffs), "diffs": diffs[:limit]}


def _nan_to_none(x):
    return None if isinstance(x, float) and math.isnan(x) else x


def roundtrip(cfg: ScenarioConfig | None = None, workdir=None, workers: int = 1,
              recovery_n: int = 0, fit_model: bool = True) -> dict:
    """Generate, run every pipeline stage, and compare each stage to the ledger.

    With ``recovery_n`` > 0 a simulated dataset of that size is also refitted
    and every coefficient must land within three standard errors of truth.
    """
    import tempfile

    from . import pipeline
    from .adoption import read_events
    from .choice import EstimationError, fit
    from .clusters import cluster_projects
    from .config import PipelineConfig
    from .networks import read_weights
    from .predictors import compute_observations
    from .store import build_maps

    cfg = cfg or ScenarioConfig.fixture()
    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory()
        workdir = tmp.name
    work = Path(workdir)
    corpus = generate_corpus(cfg)
    ledger = corpus["ledger"]
    write_corpus(corpus, work / "corpus")
    pcfg = PipelineConfig.load(work / "corpus" / "pipeline.json", workers=workers)
    out = work / "out"
    out.mkdir(parents=True, exist_ok=True)
    pipeline.ingest(pcfg, out)
    pipeline.extract(pcfg, out)
    pipeline.dedup(pcfg, out)
    pipeline.networks_stage(pcfg, out)
    pipeline.predictors_stage(pcfg, out, workers)
    stages = []

    st = pipeline.load_store(pcfg)
    got_store = {"commits": len(st.commits), "projects": len(st.projects),
                 "maps": build_maps(st, pcfg.r_suffixes).cardinalities()}
    stages.append(_diff("ingest", ledger["store"], got_store))

    got_adopt: dict = {}
    for e in read_events(out / "events.csv"):
        got_adopt.setdefault(e.project_id, {})[e.package_name] = e.adopted_at
    stages.append(_diff("extract", ledger["adoption"], got_adopt))

    part = {c.cluster_id: sorted(c.members) for c in cluster_projects(st.project_commits())}
    stages.append(_diff("dedup.partition", ledger["partition"], part))
    inp = pipeline.pipeline_inputs(pcfg, out)
    got_cl = {c.cluster_id: {"members": sorted(c.members), "chosen_package": c.chosen_package,
                             "end_time": c.end_time, "tie": c.end_point.tie} for c in inp.clusters}
    exp_cl = {k: {kk: v[kk] for kk in ("members", "chosen_package", "end_time", "tie")}
              for k, v in ledger["clusters"].items()}
    stages.append(_diff("dedup.end_points", exp_cl, got_cl))

    w = read_weights(out / "weights.csv")
    stages.append(_diff("networks", {k: list(v) for k, v in ledger["registry"]["depths"].items()},
                        {k: [p.d_ad, p.d_at] for k, p in w.items()}))

    obs = compute_observations(inp, workers)
    got_pred = {o.cluster_id: {k: _nan_to_none(float(v)) for k, v in o.values.items()} for o in obs}
    exp_pred = {k: {kk: None if vv is None else float(vv) for kk, vv in v.items()}
                for k, v in ledger["predictors"].items()}
    stages.append(_diff("predictors", exp_pred, got_pred))

    ds = pipeline.load_dataset(out / "dataset.csv")
    got_ds = {"kept": [o.cluster_id for o in ds.observations],
              "dropped": {d["cluster_id"]: d["reason"] for d in ds.dropped}}
    stages.append(_diff("assemble", ledger["dataset"], got_ds))
    rows = {o.cluster_id: {c: o.values[c] for c in o.values} for o in ds.observations}
    stages.append(_diff("dataset.rows", {k: exp_pred[k] for k in ledger["dataset"]["kept"]}, rows))

    if fit_model:
        try:
            fit_doc = pipeline.fit_stage(pcfg, out, workers=workers)
            stages.append({"stage": "fit", "passed": bool(fit_doc["converged"]), "mismatches": 0, "diffs": []})
        except EstimationError as exc:
            stages.append({"stage": "fit", "passed": False, "mismatches": 1,
                           "diffs": [{"key": type(exc).__name__, "expected": "converged", "got": str(exc)}]})

    if recovery_n:
        data = simulate_dataset(recovery_n, cfg.seed, cfg.beta)
        res = fit(data)
        diffs = []
        for name, b, se in zip(res.names, res.coef, res.std_err):
            truth = cfg.beta[name]
            if abs(b - truth) > 3 * se:
                diffs.append({"key": name, "expected": truth, "got": float(b), "std_error": float(se)})
        stages.append({"stage": "recovery", "passed": not diffs, "mismatches": len(diffs), "diffs": diffs})
    if tmp is not None:
        tmp.cleanup()
    return {"schema_version": SCHEMA_VERSION, "passed": all(s["passed"] for s in stages), "stages": stages}
