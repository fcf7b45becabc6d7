import csv
import math

import numpy as np
import pytest

from techadopt.config import PipelineConfig
from techadopt.predictors import (CHOICE_VARIABLES, DATASET_COLUMNS, DECISION_VARIABLES, PREDICTOR_COLUMNS,
                                  ChoiceDataset, Observation, PostRecord, SchemaError, assemble,
                                  collinearity_screen, compute_c_flag, compute_cumnum, compute_size,
                                  compute_stckexch, compute_unrslvd, read_posts, write_posts)
from techadopt.store import CommitRecord
from techadopt.survival import IssueRecord

from conftest import GOLDEN


def _c(t, author="a", files=()):
    return CommitRecord(f"{t:040x}", (), author, t, "p", tuple((f, "0" * 40) for f in files))


def test_compute_size():
    commits = [_c(1, "a"), _c(2, "b"), _c(3, "a"), _c(4, "b"), _c(5, "a"), _c(9, "z")]
    assert compute_size(commits, 9) == (5, 2)
    assert compute_size([_c(9)], 9) == (0, 0)


@pytest.mark.parametrize("files,expected", [
    (["src/fast.c"], True), (["notes.md"], False), (["fast.cpp"], False), (["X.C"], True), (["a.c.txt"], False),
])
def test_c_flag(files, expected):
    assert compute_c_flag([_c(1, files=files)], 10) is expected


def test_c_flag_ignores_key_commit():
    assert not compute_c_flag([_c(10, files=["a.c"])], 10)


def test_cumnum():
    ends = {"data.table": [1, 2, 3, 10], "tidy": [2, 10]}
    assert compute_cumnum(ends, 1, "data.table") == 0 and compute_cumnum(ends, 1, "tidy") == 0
    assert (compute_cumnum(ends, 5, "data.table"), compute_cumnum(ends, 5, "tidy")) == (3, 1)
    assert compute_cumnum(ends, 10, "tidy") == 1  # strictly earlier


def test_unrslvd():
    issues = [IssueRecord("p", str(i), 1, None, 5) for i in range(3)] + [IssueRecord("p", "x", 2)]
    assert compute_unrslvd(issues, 10) == 0.25
    assert compute_unrslvd(issues[:3], 10) == 0
    assert compute_unrslvd(issues, 4) == 1.0  # closed only after end
    assert compute_unrslvd(issues, 1) is None


def _post(i, t, score, title="data.table join", question=True, body=""):
    return PostRecord(str(i), t, score, title, body, question)


def test_stckexch():
    posts = [_post(1, 5, 25), _post(2, 6, 25), _post(3, 50, 25), _post(4, 5, 5)]
    assert compute_stckexch(posts, 10, ["data.table"]) == 2
    assert compute_stckexch([], 10, ["data.table"]) == 0


def test_stckexch_rules():
    posts = [_post(1, 1, 20), _post(2, 1, 21, question=False), _post(3, 1, 21, "DATA.TABLE keys"),
             _post(4, 1, 21, "x", body="use data.table here"), _post(5, 1, 21, "Tidy data")]
    assert compute_stckexch(posts, 10, ["data.table"]) == 2
    assert compute_stckexch(posts, 10, ["tidy"]) == 1
    assert compute_stckexch(posts, 10, ["data.table"], threshold=19) == 3


def test_posts_roundtrip(tmp_path):
    posts = [_post(1, 5, 25), _post(2, 6, -1, "t", False, "b\nc")]
    write_posts(tmp_path / "p.jsonl", posts)
    assert read_posts(tmp_path / "p.jsonl") == posts


def _obs(cid, t, **over):
    values = {c: 1.0 for c in PREDICTOR_COLUMNS}
    values.update(over)
    return Observation(cid, "tidy", t, values)


def test_roles_partition():
    assert len(CHOICE_VARIABLES) == 4 and len(DECISION_VARIABLES) == 7
    cols = set(PREDICTOR_COLUMNS)
    expanded = {f"{v}.{a}" for v in CHOICE_VARIABLES for a in ("datatable", "tidy")} | set(DECISION_VARIABLES)
    assert expanded == cols and len(PREDICTOR_COLUMNS) == 15


def test_cutoff_and_drop_reasons():
    cfg = PipelineConfig()
    june1 = 1401580800  # 2014-06-01
    obs = [_obs("a", june1), _obs("b", cfg.cutoff_time), _obs("c", cfg.cutoff_time + 1, Cmts=0),
           _obs("d", cfg.cutoff_time + 2, **{"Unrslvd.tidy": math.nan})]
    obs[3].flags.append("unrslvd_undefined.tidy")
    ds = assemble(obs, cfg)
    assert [o.cluster_id for o in ds.observations] == ["b"]
    assert {d["cluster_id"]: d["reason"] for d in ds.dropped} == {
        "a": "before_cutoff", "c": "no_commits_before_end", "d": "unrslvd_undefined.tidy"}


def test_collinearity_screen_drops_prx2dt():
    rng = np.random.default_rng(0)
    n = 500
    z = rng.normal(size=n)
    obs = []
    for i in range(n):
        v = {c: rng.normal() for c in PREDICTOR_COLUMNS}
        v["Prx2TD"] = z[i]
        v["Prx2DT"] = 0.95 * z[i] + 0.3 * rng.normal()
        obs.append(Observation(str(i), "tidy", 0, v))
    dropped, pairs = collinearity_screen(obs)
    assert dropped == ["Prx2DT"]
    assert pairs[0]["a"] == "Prx2TD" and abs(pairs[0]["r"]) > 0.9
    ds = ChoiceDataset(obs, dropped_columns=dropped)
    assert "tidy:Prx2DT" not in ds.model_spec().param_names
    assert "tidy:Prx2TD" in ds.model_spec().param_names
    dropped, _ = collinearity_screen(obs, priority=())
    assert dropped == ["Prx2DT"]  # the later variable of the pair
    dropped, _ = collinearity_screen(obs, priority=("Prx2TD",))
    assert dropped == ["Prx2TD"]


def test_dataset_roundtrip(tmp_path):
    obs = [_obs("x", 5, Cmts=3, **{"RplGp.tidy": 0.1 + 0.2}), _obs("y", 6)]
    ds = ChoiceDataset(obs, [{"cluster_id": "z", "reason": "before_cutoff"}], [], [], 0)
    ds.write(tmp_path / "d.csv", tmp_path / "r.json")
    back = ChoiceDataset.read(tmp_path / "d.csv", tmp_path / "r.json")
    assert [o.values for o in back.observations] == [o.values for o in obs]
    assert back.dropped == ds.dropped


def test_dataset_unknown_column(tmp_path):
    path = tmp_path / "d.csv"
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerow(DATASET_COLUMNS + ["Stars"])
    with pytest.raises(SchemaError, match="Stars"):
        ChoiceDataset.read(path)


def test_fixture_rows_match_ledger(fixture_ledger, fixture_run):
    _, out = fixture_run
    ds = ChoiceDataset.read(out / "dataset.csv", out / "dataset_report.json")
    assert [o.cluster_id for o in ds.observations] == fixture_ledger["dataset"]["kept"]
    for o in ds.observations:
        expected = fixture_ledger["predictors"][o.cluster_id]
        assert o.values == {k: float(v) for k, v in expected.items()}
        assert o.chosen == fixture_ledger["clusters"][o.cluster_id]["chosen"]
    assert {d["cluster_id"]: d["reason"] for d in ds.dropped} == fixture_ledger["dataset"]["dropped"]


def test_fixture_invariants(fixture_run):
    _, out = fixture_run
    ds = ChoiceDataset.read(out / "dataset.csv")
    for o in ds.observations:
        assert o.values["Cmts"] >= 1 and o.values["Aths"] >= 1
        assert 0 <= o.values["Unrslvd.datatable"] <= 1 and 0 <= o.values["Unrslvd.tidy"] <= 1
        assert o.values["AthPrx2DT"] + o.values["AthPrx2TD"] <= 1 + 1e-12
    for alt in ("datatable", "tidy"):
        series = [o.values[f"CumNum.{alt}"] for o in sorted(ds.observations, key=lambda o: o.end_time)]
        assert series == sorted(series)


def test_fixture_matches_golden(fixture_run):
    _, out = fixture_run
    assert (out / "dataset.csv").read_bytes() == (GOLDEN / "dataset.csv").read_bytes()
