"""Time to first reply on package issues, with right censoring."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class IssueRecord:
    package: str
    issue_id: str
    created_at: int
    first_reply_at: int | None = None
    closed_at: int | None = None

    @property
    def closed(self) -> bool:
        return self.closed_at is not None

    def __post_init__(self):
        if self.first_reply_at is not None and self.first_reply_at < self.created_at:
            raise ValueError(f"issue {self.issue_id}: reply precedes creation")
        if self.closed_at is not None and self.closed_at < self.created_at:
            raise ValueError(f"issue {self.issue_id}: closed before creation")

    def to_json(self) -> str:
        return json.dumps({
            "package": self.package, "issue_id": self.issue_id, "created_at": self.created_at,
            "first_reply_at": self.first_reply_at, "closed": self.closed, "closed_at": self.closed_at,
        }, sort_keys=True, separators=(",", ":"))


def read_issues(path) -> list[IssueRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            r = json.loads(line)
            closed_at = r.get("closed_at")
            if r.get("closed") and closed_at is None:
                raise ValueError(f"{path}:{lineno}: closed issue without closed_at")
            out.append(IssueRecord(r["package"], str(r["issue_id"]), int(r["created_at"]),
                                   r.get("first_reply_at"), closed_at))
    return out


def write_issues(path, issues) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in issues:
            fh.write(i.to_json() + "\n")


@dataclass
class SurvivalCurve:
    times: np.ndarray      # distinct event times, days
    survival: np.ndarray   # S(t) just after each time
    at_risk: np.ndarray
    events: np.ndarray
    max_time: float        # largest observed time, event or censored

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        s = np.concatenate([[1.0], self.survival])
        return s[idx]


def km_fit(durations) -> SurvivalCurve:
    """Kaplan-Meier product-limit estimate from ``(time, event_observed)`` pairs.

    Censored records tied with an event time are counted at risk for it.
    """
    if len(durations) == 0:
        raise ValueError("km_fit needs at least one record")
    t = np.array([d[0] for d in durations], dtype=float)
    e = np.array([bool(d[1]) for d in durations])
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("durations must be finite and non-negative")
    uniq, d_i = np.unique(t[e], return_counts=True)
    n_i = (len(t) - np.searchsorted(np.sort(t), uniq, side="left")).astype(float)
    d_i = d_i.astype(float)
    s = np.cumprod(1.0 - d_i / n_i) if len(uniq) else np.array([])
    return SurvivalCurve(uniq, s, n_i, d_i, float(t.max()))


def median_survival(curve: SurvivalCurve) -> float | None:
    """Smallest event time with S(t) <= 0.5, or ``None`` if never reached."""
    # products like 0.8 * 0.75 * 5/6 land a hair above one half
    hit = np.nonzero(curve.survival <= 0.5 + 1e-12)[0]
    if len(hit) == 0:
        return None
    return float(curve.times[hit[0]])


def durations_at(issues, end_time: int) -> list[tuple[float, bool]]:
    """Reply durations of issues opened before ``end_time``; later replies are censored."""
    out = []
    for i in issues:
        if i.created_at >= end_time:
            continue
        if i.first_reply_at is not None and i.first_reply_at < end_time:
            out.append(((i.first_reply_at - i.created_at) / SECONDS_PER_DAY, True))
        else:
            out.append(((end_time - i.created_at) / SECONDS_PER_DAY, False))
    return out


@dataclass(frozen=True)
class ReplyGap:
    days: float | None
    flagged: bool = False
    reason: str = ""


def rplgp_at(issues, end_time: int) -> ReplyGap:
    """Median days to first reply as known at ``end_time``.

    No prior issues gives an undefined value.  A curve that never drops to
    one half falls back to the largest observed time and is flagged.
    """
    durations = durations_at(issues, end_time)
    if not durations:
        return ReplyGap(None, True, "no_issues_before_end")
    curve = km_fit(durations)
    m = median_survival(curve)
    if m is None:
        return ReplyGap(curve.max_time, True, "median_not_reached")
    return ReplyGap(m)
