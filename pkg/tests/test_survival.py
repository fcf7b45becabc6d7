import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from techadopt.survival import (SECONDS_PER_DAY, IssueRecord, durations_at, km_fit,
                                median_survival, read_issues, rplgp_at, write_issues)

D = int(SECONDS_PER_DAY)


def test_uncensored_curve():
    c = km_fit([(1, True), (2, True), (3, True)])
    np.testing.assert_allclose(c.survival, [2 / 3, 1 / 3, 0])
    assert median_survival(c) == 2


def test_censored_example():
    c = km_fit([(1, False), (2, True), (3, False)])
    assert c(2) == 0.5 and c(1.5) == 1.0
    assert median_survival(c) == 2


def test_all_censored():
    c = km_fit([(1, False), (4, False)])
    assert c(10) == 1.0 and median_survival(c) is None


def test_errors():
    with pytest.raises(ValueError):
        km_fit([])
    with pytest.raises(ValueError):
        km_fit([(-1, True)])
    with pytest.raises(ValueError):
        IssueRecord("x", "1", 10, first_reply_at=5)


def test_tie_between_event_and_censoring():
    # a censored record at an event time is still at risk for it
    c = km_fit([(2, True), (2, False)])
    assert c.at_risk[0] == 2 and c(2) == 0.5


durations = st.lists(st.tuples(st.integers(0, 30).map(float), st.booleans()), min_size=1, max_size=40)


@settings(max_examples=200)
@given(durations)
def test_curve_is_nonincreasing_step(ds):
    c = km_fit(ds)
    assert np.all(np.diff(c.survival) <= 1e-15)
    assert np.all((c.survival >= 0) & (c.survival <= 1))
    assert c(-1) == 1.0


@settings(max_examples=200)
@given(st.lists(st.integers(0, 50).map(float), min_size=1, max_size=40))
def test_uncensored_median_is_lower_sample_median(ts):
    ts = sorted(ts)
    assert median_survival(km_fit([(t, True) for t in ts])) == ts[(len(ts) - 1) // 2]


@settings(max_examples=200)
@given(durations, st.data())
def test_censoring_never_lowers_survival(ds, data):
    events = [i for i, (_, e) in enumerate(ds) if e]
    if not events:
        return
    i = data.draw(st.sampled_from(events))
    censored = list(ds)
    censored[i] = (ds[i][0], False)
    grid = np.arange(-1, 32)
    assert np.all(km_fit(censored)(grid) >= km_fit(ds)(grid) - 1e-12)


def test_rplgp_examples():
    T = 100 * D
    assert rplgp_at([IssueRecord("p", "1", T + 5)], T).days is None
    gap = rplgp_at([IssueRecord("p", "1", T - 10 * D, T - 8 * D)], T)
    assert gap.days == 2 and not gap.flagged


def test_reply_after_end_is_censored():
    T = 100 * D
    issues = [IssueRecord("p", "1", T - 10 * D, T + 5 * D)]
    assert durations_at(issues, T) == [(10.0, False)]
    gap = rplgp_at(issues, T)
    assert gap.flagged and gap.reason == "median_not_reached" and gap.days == 10.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 200), st.one_of(st.none(), st.integers(0, 50))), max_size=20),
       st.lists(st.tuples(st.integers(0, 100), st.one_of(st.none(), st.integers(0, 50))), max_size=10))
def test_rplgp_prefix_stable(before, after):
    T = 300 * D
    make = lambda rows, off: [IssueRecord("p", f"{off}{i}", off + c * D, None if r is None else off + (c + r) * D)
                              for i, (c, r) in enumerate(rows)]
    base = make(before, 0)
    assert rplgp_at(base, T) == rplgp_at(base + make(after, T), T)


def test_exponential_median_oracle():
    rng = np.random.default_rng(1)
    lam = 0.5
    t = rng.exponential(1 / lam, 10_000)
    c = rng.exponential(1 / (lam * 3 / 7), 10_000)  # hazard ratio gives 30% censoring
    obs = np.minimum(t, c)
    ev = t <= c
    assert abs((1 - ev.mean()) - 0.3) < 0.02
    m = median_survival(km_fit(list(zip(obs, ev))))
    assert abs(m - math.log(2) / lam) / (math.log(2) / lam) < 0.05


def test_issues_roundtrip(tmp_path):
    issues = [IssueRecord("data.table", "1", 5, 9, None), IssueRecord("tidy", "2", 5, None, 50)]
    write_issues(tmp_path / "i.jsonl", issues)
    assert read_issues(tmp_path / "i.jsonl") == issues
