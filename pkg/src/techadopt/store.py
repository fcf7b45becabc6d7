"""Version-control object store built from line-delimited dumps.

Trees are flattened at dump time, so a commit record carries its own list of
``(path, blob)`` pairs.  The store is a set of commits and blobs plus the
commit-to-project incidence; every derived map is rebuilt from it.
"""
from __future__ import annotations

import base64
import binascii
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

_SHA_RE = re.compile(r"^[0-9a-f]{40}$")

DEFAULT_R_SUFFIXES = (".r", ".R")


class DumpError(ValueError):
    """A dump record is malformed or conflicts with an earlier record."""


@dataclass(frozen=True)
class CommitRecord:
    sha: str
    parents: tuple[str, ...]
    author_id: str
    author_time: int
    project_id: str
    files: tuple[tuple[str, str], ...]

    def content_key(self):
        # everything except project_id; a shared commit shows up once per project
        return (self.parents, self.author_id, self.author_time, tuple(sorted(self.files)))

    def to_json(self) -> str:
        return json.dumps(
            {
                "sha": self.sha,
                "parents": list(self.parents),
                "author_id": self.author_id,
                "author_time": self.author_time,
                "project_id": self.project_id,
                "files": [{"path": p, "blob": b} for p, b in self.files],
            },
            sort_keys=True,
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class BlobRecord:
    sha: str
    content: bytes

    @property
    def text(self) -> str:
        return self.content.decode("utf-8", errors="replace")

    def to_json(self) -> str:
        return json.dumps(
            {"sha": self.sha, "content_b64": base64.b64encode(self.content).decode("ascii")},
            sort_keys=True,
            separators=(",", ":"),
        )


def _check_sha(value, what, where):
    if not isinstance(value, str) or not _SHA_RE.match(value):
        raise DumpError(f"{where}: {what} is not a 40-hex sha: {value!r}")
    return value


def parse_commit(line: str, where: str = "commit record") -> CommitRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DumpError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise DumpError(f"{where}: expected an object")
    expected = {"sha", "parents", "author_id", "author_time", "project_id", "files"}
    missing = expected - obj.keys()
    if missing:
        raise DumpError(f"{where}: missing fields {sorted(missing)}")
    extra = obj.keys() - expected
    if extra:
        raise DumpError(f"{where}: unexpected fields {sorted(extra)}")
    sha = _check_sha(obj["sha"], "sha", where)
    if not isinstance(obj["parents"], list):
        raise DumpError(f"{where}: parents must be an array")
    parents = tuple(_check_sha(p, "parent", where) for p in obj["parents"])
    t = obj["author_time"]
    if isinstance(t, bool) or not isinstance(t, int):
        raise DumpError(f"{where}: author_time must be an integer, got {t!r}")
    if t < 0:
        raise DumpError(f"{where}: author_time must be >= 0")
    for key in ("author_id", "project_id"):
        if not isinstance(obj[key], str) or not obj[key]:
            raise DumpError(f"{where}: {key} must be a non-empty string")
    if not isinstance(obj["files"], list):
        raise DumpError(f"{where}: files must be an array")
    files = []
    for f in obj["files"]:
        if not isinstance(f, dict) or set(f) != {"path", "blob"} or not isinstance(f["path"], str):
            raise DumpError(f"{where}: file entries must be {{path, blob}}")
        files.append((f["path"], _check_sha(f["blob"], "blob", where)))
    return CommitRecord(sha, parents, obj["author_id"], t, obj["project_id"], tuple(files))


def parse_blob(line: str, where: str = "blob record") -> BlobRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DumpError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict) or set(obj) != {"sha", "content_b64"}:
        raise DumpError(f"{where}: expected exactly {{sha, content_b64}}")
    sha = _check_sha(obj["sha"], "sha", where)
    try:
        content = base64.b64decode(obj["content_b64"], validate=True)
    except (binascii.Error, TypeError):
        raise DumpError(f"{where}: content_b64 is not valid base64") from None
    return BlobRecord(sha, content)


def _read_lines(path: Path, parse, label: str):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            yield parse(line, f"{label} {path.name}:{lineno}"), f"{path.name}:{lineno}"


def read_commit_dump(path) -> Iterator[tuple[CommitRecord, str]]:
    """Yield ``(record, location)`` pairs from a commit dump file."""
    return _read_lines(Path(path), parse_commit, "commit")


def read_blob_dump(path) -> Iterator[tuple[BlobRecord, str]]:
    return _read_lines(Path(path), parse_blob, "blob")


def write_commit_dump(path, commits: Iterable[CommitRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in commits:
            fh.write(c.to_json() + "\n")


def write_blob_dump(path, blobs: Iterable[BlobRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for b in blobs:
            fh.write(b.to_json() + "\n")


@dataclass
class ObjectStore:
    """Commits and blobs keyed by sha, plus commit-to-project incidence."""

    commits: dict[str, CommitRecord] = field(default_factory=dict)
    blobs: dict[str, BlobRecord] = field(default_factory=dict)
    cmt2prj: dict[str, set[str]] = field(default_factory=lambda: defaultdict(set))
    _origin: dict[str, str] = field(default_factory=dict, repr=False)

    def add_commit(self, rec: CommitRecord, where: str = "?") -> None:
        prev = self.commits.get(rec.sha)
        if prev is None:
            self.commits[rec.sha] = rec
            self._origin[rec.sha] = where
        elif prev.content_key() != rec.content_key():
            raise DumpError(
                f"conflicting commit {rec.sha}: {self._origin[rec.sha]} vs {where}"
            )
        self.cmt2prj[rec.sha].add(rec.project_id)

    def add_blob(self, rec: BlobRecord, where: str = "?") -> None:
        prev = self.blobs.get(rec.sha)
        if prev is None:
            self.blobs[rec.sha] = rec
            self._origin["blob:" + rec.sha] = where
        elif prev.content != rec.content:
            raise DumpError(
                f"conflicting blob {rec.sha}: {self._origin['blob:' + rec.sha]} vs {where}"
            )

    def project_commits(self) -> dict[str, set[str]]:
        prj2cmt: dict[str, set[str]] = defaultdict(set)
        for sha, projects in self.cmt2prj.items():
            for p in projects:
                prj2cmt[p].add(sha)
        return dict(prj2cmt)

    @property
    def projects(self) -> set[str]:
        return {p for ps in self.cmt2prj.values() for p in ps}

    def canonical(self) -> str:
        """Order-independent serialization, used to compare two stores."""
        commits = [
            {
                "sha": sha,
                "parents": list(c.parents),
                "author_id": c.author_id,
                "author_time": c.author_time,
                "projects": sorted(self.cmt2prj[sha]),
                "files": sorted(map(list, c.files)),
            }
            for sha, c in sorted(self.commits.items())
        ]
        blobs = [b.to_json() for _, b in sorted(self.blobs.items())]
        return json.dumps({"commits": commits, "blobs": blobs}, sort_keys=True)


def _located(stream):
    for i, item in enumerate(stream, 1):
        if isinstance(item, tuple):
            yield item
        else:
            yield item, f"record {i}"


def ingest_dump(commit_stream, blob_stream) -> ObjectStore:
    """Build a store from commit and blob records.

    Streams may yield bare records or ``(record, location)`` pairs as produced
    by :func:`read_commit_dump`; locations only feed error messages.
    """
    store = ObjectStore()
    for rec, where in _located(commit_stream):
        store.add_commit(rec, where)
    for rec, where in _located(blob_stream):
        store.add_blob(rec, where)
    return store


def load_store(commit_path, blob_path) -> ObjectStore:
    return ingest_dump(read_commit_dump(commit_path), read_blob_dump(blob_path))


def suffix_filter(suffixes: Iterable[str] = DEFAULT_R_SUFFIXES) -> Callable[[str], bool]:
    """Case-sensitive suffix test on the final path component."""
    suffixes = tuple(suffixes)

    def accept(path: str) -> bool:
        name = path.rsplit("/", 1)[-1]
        return name.endswith(suffixes)

    return accept


@dataclass
class DerivedMaps:
    f2b: dict[str, set[str]]
    b2cnt: dict[str, str]
    b2cmt: dict[str, set[str]]
    cmt2prj: dict[str, set[str]]
    prj2cmt: dict[str, set[str]]
    cmt2file: dict[str, set[tuple[str, str]]]
    # sha -> (author_time, author_id) for every commit in cmt2file
    commit_info: dict[str, tuple[int, str]] = field(default_factory=dict)

    def cardinalities(self) -> dict[str, int]:
        return {name: len(getattr(self, name)) for name in
                ("f2b", "b2cnt", "b2cmt", "cmt2prj", "prj2cmt", "cmt2file")}


def maps_from_cmt2file(cmt2file):
    f2b: dict[str, set[str]] = defaultdict(set)
    b2cmt: dict[str, set[str]] = defaultdict(set)
    for sha, files in cmt2file.items():
        for path, blob in files:
            f2b[path].add(blob)
            b2cmt[blob].add(sha)
    return dict(f2b), dict(b2cmt)


def build_maps(store: ObjectStore, filename_filter=None) -> DerivedMaps:
    """Restrict the store to files accepted by ``filename_filter``.

    Only commits that touch at least one accepted file appear in the commit
    and project maps.  ``b2cnt`` holds decoded text for the blobs that are
    present in the store; referenced-but-missing blobs are simply absent.
    """
    if filename_filter is None:
        filename_filter = suffix_filter()
    elif not callable(filename_filter):
        filename_filter = suffix_filter(filename_filter)

    cmt2file: dict[str, set[tuple[str, str]]] = {}
    for sha, c in store.commits.items():
        kept = {(p, b) for p, b in c.files if filename_filter(p)}
        if kept:
            cmt2file[sha] = kept
    f2b, b2cmt = maps_from_cmt2file(cmt2file)
    b2cnt = {b: store.blobs[b].text for b in b2cmt if b in store.blobs}
    cmt2prj = {sha: set(store.cmt2prj[sha]) for sha in cmt2file}
    prj2cmt: dict[str, set[str]] = defaultdict(set)
    for sha, projects in cmt2prj.items():
        for p in projects:
            prj2cmt[p].add(sha)
    info = {sha: (store.commits[sha].author_time, store.commits[sha].author_id) for sha in cmt2file}
    return DerivedMaps(f2b, b2cnt, b2cmt, cmt2prj, dict(prj2cmt), cmt2file, info)
