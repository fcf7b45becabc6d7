"""Pipeline settings; defaults reproduce the published protocol."""
from __future__ import annotations

import calendar
import json
from dataclasses import asdict, dataclass, field, fields
from datetime import date, datetime, timezone
from pathlib import Path


@dataclass
class FocalPackage:
    package: str                   # name adoption events carry
    roots: list[str]               # registry roots for the downstream network
    post_terms: list[str]          # case-insensitive substrings for Q&A posts
    projects: list[str]            # repositories of the package itself


def default_focal() -> dict[str, FocalPackage]:
    return {
        "datatable": FocalPackage("data.table", ["data.table"], ["data.table"], ["Rdatatable/data.table"]),
        "tidy": FocalPackage("tidy", ["readr", "tibble", "tidyr"], ["tidy"],
                             ["tidyverse/readr", "tidyverse/tibble", "tidyverse/tidyr"]),
    }


@dataclass
class PipelineConfig:
    commits: str = "commits.jsonl"
    blobs: str = "blobs.jsonl"
    registry: str = "registry.jsonl"
    issues: str = "issues.jsonl"
    posts: str = "posts.jsonl"
    rules: str | None = None
    include_require_namespace: bool = False
    r_suffixes: list[str] = field(default_factory=lambda: [".r", ".R"])
    c_suffixes: list[str] = field(default_factory=lambda: [".c", ".C"])
    focal: dict[str, FocalPackage] = field(default_factory=default_focal)
    max_depth: int = 5
    score_threshold: int = 20
    cutoff_date: str = "2014-06-16"
    correlation_threshold: float = 0.9
    drop_priority: list[str] = field(default_factory=lambda: ["Prx2DT"])
    exclude_ties: bool = True
    exclude_flagged_rplgp: bool = True
    cv_folds: int = 10
    cv_cutoff: float = 0.49
    seed: int = 0
    workers: int = 1
    null_model: str = "market_shares"

    @property
    def cutoff_time(self) -> int:
        return parse_time(self.cutoff_date)

    @classmethod
    def load(cls, path=None, **overrides) -> "PipelineConfig":
        doc = {}
        base = Path(".")
        if path is not None:
            doc = json.loads(Path(path).read_text("utf-8"))
            base = Path(path).parent
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known - {"schema_version"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc.pop("schema_version", None)
        doc.update({k: v for k, v in overrides.items() if v is not None})
        if "focal" in doc and doc["focal"] is not None:
            doc["focal"] = {k: v if isinstance(v, FocalPackage) else FocalPackage(**v)
                            for k, v in doc["focal"].items()}
        cfg = cls(**doc)
        for key in ("commits", "blobs", "registry", "issues", "posts", "rules"):
            val = getattr(cfg, key)
            if val is not None and not Path(val).is_absolute():
                setattr(cfg, key, str(base / val))
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


def parse_time(value) -> int:
    """Unix seconds from an int, an ISO date or an ISO datetime (naive = UTC)."""
    if isinstance(value, bool):
        raise ValueError(f"not a time: {value!r}")
    if isinstance(value, (int, float)):
        return int(value)
    s = str(value).strip()
    if s.lstrip("-").isdigit():
        return int(s)
    if len(s) == 10:
        return calendar.timegm(date.fromisoformat(s).timetuple())
    dt = datetime.fromisoformat(s.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())
