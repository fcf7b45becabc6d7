"""Detect package install/use statements in R sources and derive adoption events."""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .store import DerivedMaps

log = logging.getLogger(__name__)

PLACEHOLDER = "PACKAGE"
REQUIRE_NAMESPACE_PATTERN = r"requireNamespace\(.*[\"']*?PACKAGE[\"']*?.*\)"


def _bounded(name: str) -> str:
    # R package names are [A-Za-z0-9.]; keep "tidyr" from matching "tidyrx"
    return r"(?<![\w.])" + re.escape(name) + r"(?![\w.])"


@dataclass(frozen=True)
class UsageRule:
    """Patterns that flag a package as used.

    ``aliases`` are the literal names substituted into each pattern; every
    match is reported under ``package_name``.
    """

    package_name: str
    patterns: tuple[str, ...]
    comment_char: str = "#"
    aliases: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.comment_char:
            raise ValueError("comment_char must be non-empty")
        if not self.aliases:
            object.__setattr__(self, "aliases", (self.package_name,))
        for pat in self.patterns:
            if PLACEHOLDER not in pat:
                raise ValueError(f"pattern lacks {PLACEHOLDER} placeholder: {pat!r}")
        try:
            self.compiled()
        except re.error as exc:
            raise ValueError(f"rule for {self.package_name!r} does not compile: {exc}") from None

    def compiled(self) -> list[tuple[str, re.Pattern]]:
        out = []
        for alias in self.aliases:
            for pat in self.patterns:
                out.append((alias, _compile(pat, alias)))
        return out


_cache: dict[tuple[str, str], re.Pattern] = {}


def _compile(pattern: str, alias: str) -> re.Pattern:
    key = (pattern, alias)
    rx = _cache.get(key)
    if rx is None:
        rx = re.compile(pattern.replace(PLACEHOLDER, _bounded(alias)))
        _cache[key] = rx
    return rx


def load_rules(path=None, *, include_require_namespace: bool = False) -> list[UsageRule]:
    """Read a rules file; ``None`` loads the bundled data.table/tidy rules."""
    if path is None:
        text = resources.files("techadopt").joinpath("data/rules.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    doc = json.loads(text)
    patterns = list(doc["patterns"])
    if include_require_namespace:
        patterns.append(REQUIRE_NAMESPACE_PATTERN)
    comment = doc.get("comment_char", "#")
    return [
        UsageRule(p["package_name"], tuple(p.get("patterns", patterns)), p.get("comment_char", comment),
                  tuple(p.get("aliases", [p["package_name"]])))
        for p in doc["packages"]
    ]


def default_patterns() -> tuple[str, ...]:
    doc = json.loads(resources.files("techadopt").joinpath("data/rules.json").read_text("utf-8"))
    return tuple(doc["patterns"])


def rules_for_packages(names: Iterable[str], patterns: Sequence[str] | None = None,
                       comment_char: str = "#") -> list[UsageRule]:
    """One rule per package name, used to collect arbitrary registry packages."""
    patterns = tuple(patterns or default_patterns())
    return [UsageRule(n, patterns, comment_char) for n in sorted(set(names))]


_TOKEN = re.compile(r"[\w.]+")


@lru_cache(maxsize=32)
def _alias_index(rules: tuple[UsageRule, ...]):
    index: dict[str, list[tuple[UsageRule, list[re.Pattern]]]] = {}
    for rule in rules:
        for alias in rule.aliases:
            pats = [_compile(p, alias) for p in rule.patterns]
            index.setdefault(alias, []).append((rule, pats))
    return index, tuple(sorted({r.comment_char for r in rules}))


def scan_blob(content: str, rules: Sequence[UsageRule]) -> set[str]:
    """Package names whose patterns match on some line of ``content``.

    Each line is cut at the rule's comment character before matching, so a
    statement that starts after a comment marker never counts.
    """
    index, comment_chars = _alias_index(tuple(rules))
    found: set[str] = set()
    for line in content.splitlines():
        for cc in comment_chars:
            code = line.split(cc, 1)[0]
            # an alias can only match as a whole [\w.]+ token
            for tok in set(_TOKEN.findall(code)) & index.keys():
                for rule, pats in index[tok]:
                    if rule.comment_char != cc or rule.package_name in found:
                        continue
                    if any(rx.search(code) for rx in pats):
                        found.add(rule.package_name)
    return found


@dataclass(frozen=True, order=True)
class AdoptionEvent:
    project_id: str
    package_name: str
    adopted_at: int
    commit_sha: str
    blob_sha: str
    author_id: str


EVENT_COLUMNS = ["project_id", "package", "commit_sha", "blob_sha", "adopted_at", "author_id"]


def find_adoptions(maps: DerivedMaps, rules: Sequence[UsageRule]) -> list[AdoptionEvent]:
    """Earliest use of each package in each project.

    A blob's creation time is the time of the earliest commit (within the
    project) that produced it.  Ties on time go to the smaller commit sha,
    then the smaller blob sha.
    """
    best: dict[tuple[str, str], tuple] = {}
    missing = 0
    for blob in sorted(maps.b2cmt):
        text = maps.b2cnt.get(blob)
        if text is None:
            missing += 1
            continue
        packages = scan_blob(text, rules)
        if not packages:
            continue
        for sha in maps.b2cmt[blob]:
            t, author = maps.commit_info[sha]
            for project in maps.cmt2prj.get(sha, ()):
                for pkg in packages:
                    cand = (t, sha, blob, author)
                    key = (project, pkg)
                    if key not in best or cand < best[key]:
                        best[key] = cand
    if missing:
        log.warning("%d referenced blobs missing from the dump were skipped", missing)
    events = [AdoptionEvent(p, pkg, t, sha, blob, author)
              for (p, pkg), (t, sha, blob, author) in best.items()]
    events.sort(key=lambda e: (e.project_id, e.package_name, e.adopted_at))
    return events


@dataclass(frozen=True)
class EndPoint:
    package: str
    time: int
    commit_sha: str
    tie: bool = False
    tied_packages: tuple[str, ...] = field(default=())


def end_point(events: Iterable[AdoptionEvent], focal_packages) -> EndPoint | None:
    """First focal adoption among ``events``; ``None`` when there is none.

    Simultaneous first adoptions of different packages resolve to the
    lexicographically smaller name and set ``tie``.
    """
    focal = set(focal_packages)
    cands = [e for e in events if e.package_name in focal]
    if not cands:
        return None
    t0 = min(e.adopted_at for e in cands)
    first = sorted((e for e in cands if e.adopted_at == t0),
                   key=lambda e: (e.package_name, e.commit_sha, e.project_id))
    names = tuple(sorted({e.package_name for e in first}))
    win = first[0]
    return EndPoint(win.package_name, t0, win.commit_sha, len(names) > 1,
                    names if len(names) > 1 else ())


def write_events(path, events: Iterable[AdoptionEvent]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for e in events:
            w.writerow([e.project_id, e.package_name, e.commit_sha, e.blob_sha, e.adopted_at, e.author_id])


def read_events(path) -> list[AdoptionEvent]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [AdoptionEvent(r["project_id"], r["package"], int(r["adopted_at"]),
                          r["commit_sha"], r["blob_sha"], r["author_id"]) for r in rows]


def events_by_project(events: Iterable[AdoptionEvent]) -> Mapping[str, list[AdoptionEvent]]:
    out: dict[str, list[AdoptionEvent]] = {}
    for e in events:
        out.setdefault(e.project_id, []).append(e)
    return out
