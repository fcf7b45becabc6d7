"""Collapse forks: projects sharing any commit belong to the same cluster."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .adoption import AdoptionEvent, EndPoint, end_point


class UnionFind:
    """Disjoint sets over hashable items, path compression plus union by size."""

    def __init__(self, items: Iterable = ()):
        self.parent: dict = {}
        self.size: dict = {}
        for x in items:
            self.add(x)

    def add(self, x) -> None:
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra

    def groups(self) -> list[set]:
        out: dict = {}
        for x in self.parent:
            out.setdefault(self.find(x), set()).add(x)
        return list(out.values())


@dataclass
class ProjectCluster:
    cluster_id: str
    members: frozenset[str]
    end_point: EndPoint | None = None

    @property
    def chosen_package(self) -> str | None:
        return self.end_point.package if self.end_point else None

    @property
    def end_time(self) -> int | None:
        return self.end_point.time if self.end_point else None


def cluster_projects(prj2cmt: Mapping[str, Iterable[str]]) -> list[ProjectCluster]:
    """Connected components of the shared-commit relation, sorted by id."""
    uf = UnionFind(prj2cmt)
    first_owner: dict[str, str] = {}
    for project in sorted(prj2cmt):
        for sha in prj2cmt[project]:
            owner = first_owner.setdefault(sha, project)
            if owner != project:
                uf.union(owner, project)
    clusters = [ProjectCluster(min(g), frozenset(g)) for g in uf.groups()]
    clusters.sort(key=lambda c: c.cluster_id)
    return clusters


def cluster_end_point(cluster: ProjectCluster, events: Mapping[str, list[AdoptionEvent]],
                      focal_packages) -> EndPoint | None:
    """Earliest focal adoption over all members (same tie rule as a single project)."""
    pooled = [e for m in sorted(cluster.members) for e in events.get(m, ())]
    return end_point(pooled, focal_packages)


def assign_end_points(clusters: list[ProjectCluster], events, focal_packages,
                      exclude_projects: Iterable[str] = ()) -> list[ProjectCluster]:
    """Attach end points and keep only clusters that adopted a focal package.

    Clusters containing any of ``exclude_projects`` (the focal packages' own
    repositories) are dropped.
    """
    excluded = set(exclude_projects)
    kept = []
    for c in clusters:
        if c.members & excluded:
            continue
        ep = cluster_end_point(c, events, focal_packages)
        if ep is not None:
            kept.append(ProjectCluster(c.cluster_id, c.members, ep))
    return kept


CLUSTER_COLUMNS = ["cluster_id", "member_count", "chosen_package", "end_time", "key_commit", "tie"]


def write_clusters(path, clusters: Iterable[ProjectCluster], members_path=None) -> None:
    clusters = list(clusters)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLUSTER_COLUMNS)
        for c in clusters:
            ep = c.end_point
            w.writerow([c.cluster_id, len(c.members), ep.package, ep.time, ep.commit_sha, int(ep.tie)])
    if members_path is not None:
        with open(members_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cluster_id", "project_id"])
            for c in clusters:
                for m in sorted(c.members):
                    w.writerow([c.cluster_id, m])


def read_clusters(path, members_path) -> list[ProjectCluster]:
    members: dict[str, set[str]] = {}
    with open(members_path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            members.setdefault(r["cluster_id"], set()).add(r["project_id"])
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            cid = r["cluster_id"]
            if int(r["member_count"]) != len(members.get(cid, ())):
                raise ValueError(f"cluster {cid}: member_count disagrees with member list")
            ep = EndPoint(r["chosen_package"], int(r["end_time"]), r["key_commit"], bool(int(r["tie"])))
            out.append(ProjectCluster(cid, frozenset(members[cid]), ep))
    return out
