import json
from pathlib import Path

import pytest

from techadopt import pipeline, synth
from techadopt.config import PipelineConfig

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """The default scenario written to disk once per session."""
    corpus = synth.generate_corpus(synth.ScenarioConfig.fixture())
    root = tmp_path_factory.mktemp("fixture")
    paths = synth.write_corpus(corpus, root / "corpus")
    return corpus, paths


@pytest.fixture(scope="session")
def fixture_run(fixture_corpus, tmp_path_factory):
    """run-all over the fixture corpus; returns (config, output dir)."""
    _, paths = fixture_corpus
    cfg = PipelineConfig.load(paths["config"])
    out = tmp_path_factory.mktemp("fixture_out")
    pipeline.run_all(cfg, out, workers=1)
    return cfg, out


@pytest.fixture(scope="session")
def fixture_ledger(fixture_corpus):
    return fixture_corpus[0]["ledger"]


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    corpus = synth.generate_corpus(synth.ScenarioConfig.small())
    paths = synth.write_corpus(corpus, tmp_path_factory.mktemp("small") / "corpus")
    return corpus, paths


def read_json(path):
    return json.loads(Path(path).read_text("utf-8"))


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
