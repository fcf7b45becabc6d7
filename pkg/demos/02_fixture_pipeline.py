"""End-to-end run over a synthetic mining corpus.

Plants a corpus with known answers (forks, adoption times, registry depths,
issue histories, Q&A posts), runs every pipeline stage through the file
interfaces, and checks each stage against the planted ledger.

    python3 demos/02_fixture_pipeline.py [workdir]
"""
import json
import sys
import tempfile
from pathlib import Path

from techadopt import pipeline, synth
from techadopt.config import PipelineConfig

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="techadopt-"))
corpus = synth.generate_corpus(synth.ScenarioConfig.fixture())
paths = synth.write_corpus(corpus, work / "corpus")
ledger = corpus["ledger"]
print(f"corpus in {work / 'corpus'}: {ledger['store']['commits']} commits, {ledger['store']['projects']} projects")

cfg = PipelineConfig.load(paths["config"])
summary = pipeline.run_all(cfg, work / "out")
ov = summary["networks"]["overlap"]
print(f"downstream packages: {ov['downstream_datatable']} data.table, {ov['downstream_tidy']} tidy, "
      f"{ov['common']} shared (overlap {ov['overlap_datatable']:.2f} / {ov['overlap_tidy']:.2f})")
ds = summary["dataset"]
print(f"dataset: {ds['n']} observations kept, {ds['dropped']} dropped, columns dropped: {ds['dropped_columns']}")

fit = json.loads((work / "out" / "fit_report.json").read_text())
print(f"\nMcFadden R2 {fit['mcfadden_r2']:.3f}, cross-validated AUC {fit['cross_validation']['auc']:.3f}")
print(f"{'coefficient':<18}{'estimate':>12}{'std.err':>12}{'planted':>12}")
for row in fit["coefficients"]:
    planted = ledger["config"]["beta"].get(row["name"], float("nan"))
    print(f"{row['name']:<18}{row['estimate']:>12.4g}{row['std_error']:>12.3g}{planted:>12.4g}")

report = synth.roundtrip(workdir=work / "roundtrip")
print("\nledger comparison:")
for s in report["stages"]:
    print(f"  {s['stage']:<18} {'ok' if s['passed'] else 'MISMATCH'} ({s['mismatches']} differences)")
