"""Dependency and authorship networks around the two focal packages.

Weights are kept as exact fractions so that a package's (or author's) two
weights always add up to exactly one; callers convert to float at the end.
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict, deque
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Mapping

ZERO = Fraction(0)
ONE = Fraction(1)


class GraphError(KeyError):
    pass


@dataclass
class DependencyGraph:
    """Package -> set of packages it depends on."""

    deps: dict[str, set[str]]

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "DependencyGraph":
        deps: dict[str, set[str]] = {}
        for r in records:
            pkg = r["package"]
            deps.setdefault(pkg, set()).update(d for d in r.get("deps", ()) if d != pkg)
        for targets in list(deps.values()):
            for t in targets:
                deps.setdefault(t, set())
        return cls(deps)

    @property
    def nodes(self) -> set[str]:
        return set(self.deps)

    def edges(self) -> set[tuple[str, str]]:
        return {(a, b) for a, ds in self.deps.items() for b in ds}

    def reverse(self) -> dict[str, set[str]]:
        rev: dict[str, set[str]] = defaultdict(set)
        for a, ds in self.deps.items():
            for b in ds:
                rev[b].add(a)
        return rev


def read_registry(path) -> DependencyGraph:
    with open(path, encoding="utf-8") as fh:
        return DependencyGraph.from_records(json.loads(l) for l in fh if l.strip())


def write_registry(path, graph: DependencyGraph) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pkg in sorted(graph.deps):
            fh.write(json.dumps({"package": pkg, "deps": sorted(graph.deps[pkg])}) + "\n")


@dataclass
class DownstreamLayers:
    root: tuple[str, ...]
    layer_of: dict[str, int]

    @property
    def max_depth(self) -> int:
        return max(self.layer_of.values(), default=0)

    @property
    def members(self) -> set[str]:
        return set(self.layer_of)


def downstream_layers(graph: DependencyGraph, root, max_depth: int = 5) -> DownstreamLayers:
    """Shortest reverse-dependency distance from ``root`` for every downstream package.

    ``root`` may be one package or several (an alias group); roots themselves
    are excluded.  Packages deeper than ``max_depth`` are left out.
    """
    roots = (root,) if isinstance(root, str) else tuple(sorted(root))
    for r in roots:
        if r not in graph.deps:
            raise GraphError(f"root package {r!r} not in registry")
    rev = graph.reverse()
    depth = {r: 0 for r in roots}
    queue = deque(roots)
    while queue:
        node = queue.popleft()
        d = depth[node]
        if d >= max_depth:
            continue
        for child in rev.get(node, ()):
            if child not in depth:
                depth[child] = d + 1
                queue.append(child)
    return DownstreamLayers(roots, {p: d for p, d in depth.items() if d > 0})


def split_weights(depth_d: int | None, depth_t: int | None) -> tuple[Fraction, Fraction]:
    """Two-root weight rule shared by packages and authors.

    Exclusive membership gets the full unit; dual membership splits it so the
    nearer root gets the larger share.
    """
    if depth_d is None and depth_t is None:
        return ZERO, ZERO
    if depth_t is None:
        return ONE, ZERO
    if depth_d is None:
        return ZERO, ONE
    total = depth_d + depth_t
    return Fraction(depth_t, total), Fraction(depth_d, total)


@dataclass(frozen=True)
class PackageWeight:
    package: str
    d_ad: int | None
    d_at: int | None
    w_ad: Fraction
    w_at: Fraction

    @property
    def membership(self) -> str:
        if self.d_ad is not None and self.d_at is not None:
            return "both"
        return "datatable" if self.d_ad is not None else "tidy"


def package_weights(layers_d: DownstreamLayers, layers_t: DownstreamLayers) -> dict[str, PackageWeight]:
    out = {}
    for pkg in sorted(layers_d.members | layers_t.members):
        dd, dt = layers_d.layer_of.get(pkg), layers_t.layer_of.get(pkg)
        out[pkg] = PackageWeight(pkg, dd, dt, *split_weights(dd, dt))
    return out


def dependency_proximity(installed: Iterable[str], weights: Mapping[str, PackageWeight]
                         ) -> tuple[Fraction, Fraction]:
    """Sum of weights over the distinct installed packages; unrelated packages add nothing."""
    p_d = p_t = ZERO
    for pkg in set(installed):
        w = weights.get(pkg)
        if w is not None:
            p_d += w.w_ad
            p_t += w.w_at
    return p_d, p_t


def overlap(layers_d: DownstreamLayers, layers_t: DownstreamLayers) -> dict:
    sd, st = layers_d.members, layers_t.members
    common = len(sd & st)
    return {
        "downstream_datatable": len(sd),
        "downstream_tidy": len(st),
        "layers_datatable": layers_d.max_depth,
        "layers_tidy": layers_t.max_depth,
        "common": common,
        "overlap_datatable": common / len(sd) if sd else float("nan"),
        "overlap_tidy": common / len(st) if st else float("nan"),
    }


def write_weights(path, weights: Mapping[str, PackageWeight]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["package", "D_ad", "D_at", "W_ad", "W_at"])
        for pkg in sorted(weights):
            pw = weights[pkg]
            w.writerow([pkg, "" if pw.d_ad is None else pw.d_ad, "" if pw.d_at is None else pw.d_at,
                        repr(float(pw.w_ad)), repr(float(pw.w_at))])


def read_weights(path) -> dict[str, PackageWeight]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            dd = int(r["D_ad"]) if r["D_ad"] else None
            dt = int(r["D_at"]) if r["D_at"] else None
            out[r["package"]] = PackageWeight(r["package"], dd, dt, *split_weights(dd, dt))
    return out


class AuthorIndex:
    """First-contact times between authors and projects.

    ``first[a][p]`` is the earliest commit time of author ``a`` in project
    ``p``; "active before t" means first contact strictly earlier than t.
    """

    def __init__(self, store):
        first: dict[str, dict[str, int]] = defaultdict(dict)
        for sha, c in store.commits.items():
            for p in store.cmt2prj[sha]:
                prev = first[c.author_id].get(p)
                if prev is None or c.author_time < prev:
                    first[c.author_id][p] = c.author_time
        self.first = dict(first)
        by_project: dict[str, dict[str, int]] = defaultdict(dict)
        for a, ps in self.first.items():
            for p, t in ps.items():
                by_project[p][a] = t
        self.by_project = dict(by_project)

    def authors_before(self, project: str, t: int) -> set[str]:
        return {a for a, ft in self.by_project.get(project, {}).items() if ft < t}

    def projects_before(self, author: str, t: int) -> set[str]:
        return {p for p, ft in self.first.get(author, {}).items() if ft < t}


def author_clusters(index: AuthorIndex, focal_projects: Iterable[str], end_time: int,
                    authors: Iterable[str] | None = None) -> dict[str, int]:
    """Exposure depth (1 direct, 2 indirect) toward one focal package as of ``end_time``.

    Depth 1: committed to one of the focal package's repositories.  Depth 2:
    shares a project with a depth-1 author.  When ``authors`` is given only
    those authors are classified.
    """
    direct: set[str] = set()
    for fp in focal_projects:
        direct |= index.authors_before(fp, end_time)
    depth: dict[str, int] = {}
    if authors is None:
        candidates: set[str] = set(direct)
        for a in direct:
            for q in index.projects_before(a, end_time):
                candidates |= index.authors_before(q, end_time)
    else:
        candidates = set(authors)
    for b in candidates:
        if b in direct:
            depth[b] = 1
            continue
        for q in index.projects_before(b, end_time):
            if any(a in direct for a in index.authors_before(q, end_time)):
                depth[b] = 2
                break
    return depth


@dataclass(frozen=True)
class AuthorExposure:
    author: str
    d_bd: int | None
    d_bt: int | None
    w_bd: Fraction
    w_bt: Fraction


def author_exposures(depth_d: Mapping[str, int], depth_t: Mapping[str, int]) -> dict[str, AuthorExposure]:
    out = {}
    for b in sorted(set(depth_d) | set(depth_t)):
        dd, dt = depth_d.get(b), depth_t.get(b)
        out[b] = AuthorExposure(b, dd, dt, *split_weights(dd, dt))
    return out


def author_proximity(authors: Iterable[str], n_authors: int, exposures: Mapping[str, AuthorExposure]
                     ) -> tuple[Fraction, Fraction]:
    """Exposed authors' weights summed and divided by the project's author count."""
    if n_authors < 1:
        raise ValueError("observation has no authors")
    s_d = s_t = ZERO
    for b in set(authors):
        e = exposures.get(b)
        if e is not None:
            s_d += e.w_bd
            s_t += e.w_bt
    return s_d / n_authors, s_t / n_authors


def author_links(store, until: int | None = None) -> tuple[set[frozenset], set[frozenset]]:
    """Weak links (shared project) and strong links (shared file in a shared project)."""
    proj_authors: dict[str, set[str]] = defaultdict(set)
    file_authors: dict[tuple[str, str], set[str]] = defaultdict(set)
    for sha, c in store.commits.items():
        if until is not None and c.author_time >= until:
            continue
        for p in store.cmt2prj[sha]:
            proj_authors[p].add(c.author_id)
            for path, _ in c.files:
                file_authors[(p, path)].add(c.author_id)
    weak = {frozenset(pair) for authors in proj_authors.values()
            for pair in combinations(sorted(authors), 2)}
    strong = {frozenset(pair) for authors in file_authors.values()
              for pair in combinations(sorted(authors), 2)}
    return weak, strong


def write_links(path, weak, strong) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["author_a", "author_b", "strength"])
        for pair in sorted(tuple(sorted(p)) for p in weak):
            w.writerow([pair[0], pair[1], "strong" if frozenset(pair) in strong else "weak"])

