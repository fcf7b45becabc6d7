import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from techadopt.adoption import (AdoptionEvent, UsageRule, end_point, find_adoptions, load_rules,
                                read_events, rules_for_packages, scan_blob, write_events)
from techadopt.store import BlobRecord, CommitRecord, build_maps, ingest_dump

RULES = load_rules()
FOCAL = {"data.table", "tidy"}


@pytest.mark.parametrize("text,expected", [
    ("library(data.table)", {"data.table"}),
    ('# install.packages("tidyr")', set()),
    ("x <- 1; require('tibble') # note", {"tidy"}),
    ('install.packages("readr", repos = "x")', {"tidy"}),
    ("library(tidyverse)", set()),
    ("library(data.table.extra)", set()),
    ('requireNamespace("data.table")', set()),
    ("suppressMessages(library(tidyr))", {"tidy"}),
    ("library(tidyr)\nlibrary(data.table)", {"tidy", "data.table"}),
    ("tidyr <- 3", set()),
    ("  library(dplyr); library(readr)  ", {"tidy"}),
])
def test_scan_blob(text, expected):
    assert scan_blob(text, RULES) == expected


def test_require_namespace_optional():
    rules = load_rules(include_require_namespace=True)
    assert scan_blob('requireNamespace("data.table")', rules) == {"data.table"}


def test_aliases_report_group_name():
    for alias in ("tidyr", "tibble", "readr"):
        assert scan_blob(f"library({alias})", RULES) == {"tidy"}


def test_rule_validation():
    with pytest.raises(ValueError):
        UsageRule("x", ("library\\(x\\)",))
    with pytest.raises(ValueError):
        UsageRule("x", ("library(PACKAGE",))
    with pytest.raises(ValueError):
        UsageRule("x", ("library\\(PACKAGE\\)",), comment_char="")


def test_custom_comment_char():
    rule = UsageRule("foo", ("use\\(PACKAGE\\)",), comment_char="%")
    assert scan_blob("% use(foo)", [rule]) == set()
    assert scan_blob("# use(foo)", [rule]) == {"foo"}


def test_rules_file(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps({"patterns": ["import PACKAGE"], "packages": [{"package_name": "np"}]}))
    assert scan_blob("import np", load_rules(path)) == {"np"}


line_bodies = st.sampled_from(["library(data.table)", "library(tidyr)", 'require("readr")',
                               'install.packages("tibble")', "x <- 1", "library(dplyr)"])


@settings(max_examples=100)
@given(st.lists(line_bodies, min_size=1, max_size=6), st.text(alphabet=" x;", max_size=3))
def test_comment_guard(lines, prefix):
    commented = "\n".join(prefix + "#" + line for line in lines)
    assert scan_blob(commented, RULES) == set()


@settings(max_examples=100)
@given(st.lists(line_bodies, min_size=1, max_size=6), st.text(alphabet="abc ", max_size=8))
def test_trailing_comment_never_suppresses(lines, note):
    plain = "\n".join(lines)
    assert scan_blob("\n".join(l + " # " + note for l in lines), RULES) == scan_blob(plain, RULES)


# ------------------------------------------------------------ events

def _sha(i):
    return f"{i:040x}"


def _store(entries, blobs):
    commits = [CommitRecord(_sha(100 + i), (), author, t, project, ((path, _sha(b)),))
               for i, (project, t, author, path, b) in enumerate(entries)]
    return ingest_dump(commits, [BlobRecord(_sha(b), text.encode()) for b, text in blobs.items()])


def test_two_packages_two_events():
    st_ = _store([("p", 10, "a", "x.R", 1), ("p", 20, "a", "y.R", 2)],
                 {1: "library(tidyr)", 2: "library(data.table)"})
    events = find_adoptions(build_maps(st_), RULES)
    assert [(e.package_name, e.adopted_at) for e in events] == [("data.table", 20), ("tidy", 10)]


def test_blob_time_is_earliest_commit():
    st_ = _store([("p", 30, "a", "x.R", 1), ("p", 10, "b", "z.R", 1)], {1: "library(tidyr)"})
    (e,) = find_adoptions(build_maps(st_), RULES)
    assert e.adopted_at == 10 and e.author_id == "b"


def test_adoption_is_per_project():
    st_ = _store([("p", 30, "a", "x.R", 1), ("q", 10, "b", "x.R", 1)], {1: "library(tidyr)"})
    times = {e.project_id: e.adopted_at for e in find_adoptions(build_maps(st_), RULES)}
    assert times == {"p": 30, "q": 10}


def test_missing_blob_skipped_with_warning(caplog):
    st_ = _store([("p", 10, "a", "x.R", 1), ("p", 20, "a", "y.R", 2)], {2: "library(readr)"})
    events = find_adoptions(build_maps(st_), RULES)
    assert [e.adopted_at for e in events] == [20]
    assert "missing" in caplog.text


def test_non_r_files_ignored():
    st_ = _store([("p", 10, "a", "x.py", 1)], {1: "library(tidyr)"})
    assert find_adoptions(build_maps(st_), RULES) == []


def _ev(pkg, t, project="p"):
    return AdoptionEvent(project, pkg, t, _sha(t), _sha(t + 1), "a")


def test_end_point_rules():
    assert end_point([_ev("tidy", 100), _ev("data.table", 200)], FOCAL).package == "tidy"
    ep = end_point([_ev("data.table", 50)], FOCAL)
    assert (ep.package, ep.time, ep.tie) == ("data.table", 50, False)
    ep = end_point([_ev("tidy", 100), _ev("data.table", 100)], FOCAL)
    assert (ep.package, ep.time, ep.tie, ep.tied_packages) == ("data.table", 100, True, ("data.table", "tidy"))
    assert end_point([_ev("dplyr", 1)], FOCAL) is None


@settings(max_examples=100)
@given(st.lists(st.tuples(st.sampled_from(["data.table", "tidy"]), st.integers(0, 100)), min_size=1),
       st.lists(st.tuples(st.sampled_from(["data.table", "tidy"]), st.integers(101, 200))))
def test_later_events_never_move_end_point(early, late):
    base = [_ev(p, t) for p, t in early]
    assert end_point(base, FOCAL) == end_point(base + [_ev(p, t) for p, t in late], FOCAL)


def test_events_csv_roundtrip(tmp_path):
    events = [_ev("tidy", 5, "p,q"), _ev("data.table", 7)]
    write_events(tmp_path / "e.csv", events)
    assert read_events(tmp_path / "e.csv") == events


def test_rules_for_packages():
    rules = rules_for_packages(["dtx1", "both.3"])
    assert scan_blob("library(both.3)\nrequire('dtx1')", rules) == {"both.3", "dtx1"}
    assert scan_blob("library(both.30)", rules) == set()


def test_fixture_events_match_ledger(fixture_ledger, fixture_run):
    _, out = fixture_run
    got = {}
    for e in read_events(out / "events.csv"):
        got.setdefault(e.project_id, {})[e.package_name] = e.adopted_at
    assert got == fixture_ledger["adoption"]
