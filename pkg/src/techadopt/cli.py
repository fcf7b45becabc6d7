"""Command line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 2 input error, 3 estimation error, 4 a verify-claims
check failed.  Failures print a JSON error document on stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, synth
from .choice import (REFERENCE_COEFFICIENTS, REFERENCE_MEDIANS, SCHEMA_VERSION, EstimationError,
                     ModelSpec, dumps_report, verify_claims, what_if)
from .config import PipelineConfig
from .predictors import SchemaError
from .store import DumpError

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATION, EXIT_CLAIMS = 0, 2, 3, 4


def _config(args) -> PipelineConfig:
    overrides = {k: getattr(args, k, None) for k in
                 ("commits", "blobs", "registry", "issues", "posts", "rules", "seed", "workers")}
    return PipelineConfig.load(args.config, **overrides)


def _emit(doc: dict, path=None) -> None:
    text = dumps_report(doc)
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(args):
    _emit({"stage": "ingest", **pipeline.ingest(_config(args), _out(args))})


def cmd_extract(args):
    events = pipeline.extract(_config(args), _out(args))
    _emit({"stage": "extract", "events": len(events)})


def cmd_dedup(args):
    kept = pipeline.dedup(_config(args), _out(args))
    _emit({"stage": "dedup", "adopting_clusters": len(kept)})


def cmd_networks(args):
    _emit({"stage": "networks", **pipeline.networks_stage(_config(args), _out(args))})


def cmd_predictors(args):
    ds = pipeline.predictors_stage(_config(args), _out(args))
    _emit({"stage": "predictors", "n": len(ds), "dropped": len(ds.dropped),
           "dropped_columns": ds.dropped_columns})


def cmd_fit(args):
    doc = pipeline.fit_stage(_config(args), _out(args), dataset=args.dataset)
    _emit({"stage": "fit", "n": doc["n"], "mcfadden_r2": doc["mcfadden_r2"],
           "auc": pipeline._clean(doc["cross_validation"]["auc"])})


def cmd_crossval(args):
    doc = pipeline.crossval_stage(_config(args), _out(args), dataset=args.dataset)
    _emit({"stage": "crossval", **pipeline._clean(doc)})


def cmd_what_if(args):
    if args.fit_report:
        doc = json.loads(Path(args.fit_report).read_text("utf-8"))
        beta = {row["name"]: row["estimate"] for row in doc["coefficients"]}
        spec = _spec_from_names(list(beta))
    else:
        beta, spec = dict(REFERENCE_COEFFICIENTS), ModelSpec()
    baseline = dict(REFERENCE_MEDIANS)
    if args.baseline:
        baseline.update(json.loads(Path(args.baseline).read_text("utf-8")))
    w = what_if(beta, baseline, args.variable, args.delta, spec)
    _emit({"variable": w.variable, "delta": w.delta, "before": w.before, "after": w.after}, args.output)


def _spec_from_names(names) -> ModelSpec:
    base = ModelSpec()
    specific = tuple(n.split(":", 1)[1] for n in names if ":" in n and not n.endswith(")"))
    generic = tuple(n for n in names if ":" not in n)
    return ModelSpec(base.alternatives, base.base, generic, specific)


def cmd_simulate(args):
    out = _out(args)
    if args.dataset:
        from .predictors import ChoiceDataset, Observation, collinearity_screen
        data = synth.simulate_dataset(args.dataset, args.seed)
        obs = [Observation(f"sim{i:06d}", ("datatable", "tidy")[c], 0,
                           {k: float(v[i]) for k, v in data.columns.items()})
               for i, c in enumerate(data.chosen)]
        dropped, pairs = collinearity_screen(obs)
        ChoiceDataset(obs, [], dropped, pairs).write(out / "dataset.csv", out / "dataset_report.json")
        _emit({"stage": "simulate", "dataset": str(out / "dataset.csv"), "n": args.dataset})
        return
    preset = {"small": synth.ScenarioConfig.small, "fixture": synth.ScenarioConfig.fixture}[args.preset]
    cfg = preset(args.seed)
    if args.n_bases is not None:
        cfg.n_bases = args.n_bases
    if args.forks is not None:
        cfg.forks_per_base = args.forks
    paths = synth.write_corpus(synth.generate_corpus(cfg), out)
    _emit({"stage": "simulate", "files": {k: Path(v).name for k, v in paths.items()}})


def cmd_verify_claims(args):
    results = verify_claims(tolerance=args.tolerance)
    ok = all(r["passed"] for r in results)
    _emit({"passed": ok, "claims": results}, args.output)
    return EXIT_OK if ok else EXIT_CLAIMS


def cmd_run_all(args):
    cfg = _config(args)
    _emit({"stage": "run-all", **pipeline.run_all(cfg, _out(args), args.workers)})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="techadopt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def stage(name, func, help_, dataset=False):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="pipeline config (JSON); flags override it")
        sp.add_argument("--out", default="out", help="work directory for stage outputs")
        for f in ("commits", "blobs", "registry", "issues", "posts", "rules"):
            sp.add_argument(f"--{f}")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        if dataset:
            sp.add_argument("--dataset", help="dataset CSV (default: OUT/dataset.csv)")
        sp.set_defaults(func=func)
        return sp

    stage("ingest", cmd_ingest, "validate dumps and report map sizes")
    stage("extract", cmd_extract, "find package adoption events")
    stage("dedup", cmd_dedup, "cluster forks and assign end points")
    stage("networks", cmd_networks, "downstream layers and package weights")
    stage("predictors", cmd_predictors, "assemble the choice dataset")
    stage("fit", cmd_fit, "fit the conditional logit", dataset=True)
    stage("crossval", cmd_crossval, "k-fold out-of-sample AUC", dataset=True)
    stage("run-all", cmd_run_all, "run every stage in order")

    sp = sub.add_parser("what-if", help="probabilities before and after shifting one variable")
    sp.add_argument("--variable", required=True)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--fit-report", help="use fitted coefficients instead of the published ones")
    sp.add_argument("--baseline", help="JSON of predictor values overriding the published medians")
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_what_if)

    sp = sub.add_parser("simulate", help="write a synthetic corpus or dataset")
    sp.add_argument("--preset", choices=["small", "fixture"], default="fixture")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-bases", type=int)
    sp.add_argument("--forks", type=int)
    sp.add_argument("--dataset", type=int, help="write a simulated choice dataset of this size instead")
    sp.add_argument("--out", default="corpus")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("verify-claims", help="recheck the published what-if probabilities")
    sp.add_argument("--tolerance", type=float, default=0.05)
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_verify_claims)
    return p


def _error(code: int, exc: Exception) -> int:
    doc = {"schema_version": SCHEMA_VERSION, "error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except EstimationError as exc:
        return _error(EXIT_ESTIMATION, exc)
    except (pipeline.InputError, DumpError, SchemaError, KeyError, ValueError, OSError) as exc:
        return _error(EXIT_INPUT, exc)
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
