"""Command-line pipeline: gen-pop, synth-world, train, simulate, evaluate, compare, report.

Exit codes: 0 success, 3 missing input, 4 schema mismatch, 5 validation
failure, 6 configuration error, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import SCHEMA_VERSION, __version__
from .errors import (
    AllocationError,
    ConfigurationError,
    DataError,
    DomainError,
    MissingInputError,
    SchemaError,
    TrainingError,
    UndefinedMetricError,
)

EXIT_MISSING = 3
EXIT_SCHEMA = 4
EXIT_VALIDATION = 5
EXIT_CONFIG = 6

_CATEGORIES = (
    (MissingInputError, EXIT_MISSING, "missing input"),
    (SchemaError, EXIT_SCHEMA, "schema mismatch"),
    (ConfigurationError, EXIT_CONFIG, "configuration error"),
    ((DataError, AllocationError, DomainError, TrainingError, UndefinedMetricError), EXIT_VALIDATION, "validation failure"),
)


def _config(args):
    from .io import read_config

    return read_config(args.config) if getattr(args, "config", None) else None


def _manifest(out_dir: Path, verb: str, seed, extra=None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    body = {"schema_version": SCHEMA_VERSION, "verb": verb, "seed": seed, **(extra or {})}
    (out_dir / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise MissingInputError(f"{p} not found")


# --------------------------------------------------------------------------
# verbs


def cmd_gen_pop(args) -> None:
    from .io import spec_from_config, write_population
    from .population import generate_population

    spec = spec_from_config(_config(args))
    started = time.perf_counter()
    profiles = generate_population(args.n, spec, args.seed)
    write_population(args.out, profiles, args.seed)
    print(f"wrote {len(profiles)} clinicians to {args.out} in {time.perf_counter() - started:.3f}s")


def cmd_synth_world(args) -> None:
    from .io import plan_from_config, read_population, world_from_config, write_cohort, write_plan_config, write_records
    from .synth import generate_group_cohorts, generate_oracle_records

    _require(args.population)
    cfg = _config(args)
    params = world_from_config(cfg)
    plan = plan_from_config(cfg, args.seed)
    clinicians = read_population(args.population)
    cohorts = generate_group_cohorts(params, plan.groups, args.seed)
    oracle = generate_oracle_records(clinicians, cohorts, plan, params, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_cohort(out / "cohort.csv", [c for g in plan.groups for c in cohorts[g]], args.seed)
    write_records(out / "records.csv", [o.record for o in oracle], args.seed, [o.latent for o in oracle])
    write_plan_config(out / "plan.ini", plan)
    _manifest(out, "synth-world", args.seed, {"world": params.provenance(), "n_records": len(oracle)})
    print(f"wrote {len(oracle)} oracle records and {sum(len(v) for v in cohorts.values())} cases to {out}")


def cmd_train(args) -> None:
    from .behavior import save_simulator, train_simulator
    from .io import read_cohort, read_population, read_records, simulator_config_from_config, write_rejections
    from .trial import validate_records

    _require(args.records, args.population, args.cohort)
    config = simulator_config_from_config(_config(args))
    clinicians = {c.id: c for c in read_population(args.population)}
    cases = {c.id: c for c in read_cohort(args.cohort)}
    result = validate_records(read_records(args.records), clinicians, tuple(args.time_bounds))
    if not result.valid:
        raise DataError("no valid records after filtering")
    sim = train_simulator(result.valid, clinicians, cases, args.variant, args.seed, config)
    out = Path(args.out)
    save_simulator(sim, out)
    write_rejections(out / "rejections.csv", result.rejected, args.seed)
    print(f"trained {args.variant} simulator on {len(result.valid)} records ({len(result.rejected)} rejected) -> {out}")


def cmd_simulate(args) -> None:
    from .behavior import load_simulator
    from .io import group_cases, plan_from_config, read_cohort, read_population, write_records
    from .trial import run_trial

    _require(args.bundle, args.population, args.cohort)
    sim = load_simulator(args.bundle)
    plan = plan_from_config(_config(args), args.seed)
    if args.step:
        plan = plan.restrict(args.step)
    clinicians = read_population(args.population)
    cohorts = group_cases(read_cohort(args.cohort))
    rs = run_trial(plan, sim, clinicians, cohorts, args.seed, n_jobs=args.jobs)
    write_records(args.out, rs.records, args.seed)
    summary = {k: v for k, v in rs.summary.items() if k != "wall_time_seconds"}
    Path(args.out).with_suffix(".summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"simulated {len(rs)} records in {rs.summary['wall_time_seconds']:.1f}s -> {args.out}")


def _load_eval_inputs(args):
    from .io import read_cohort, read_population

    _require(args.population, args.cohort)
    clinicians = {c.id: c for c in read_population(args.population)}
    cases = {c.id: c for c in read_cohort(args.cohort)}
    return clinicians, cases


def cmd_evaluate(args) -> None:
    from .io import read_records
    from .metrics import evaluate
    from .trial import validate_records

    _require(args.records)
    clinicians, cases = _load_eval_inputs(args)
    records = validate_records(read_records(args.records), clinicians).valid
    reference = None
    if args.reference:
        _require(args.reference)
        reference = validate_records(read_records(args.reference), clinicians).valid
    rep = evaluate(records, cases, clinicians, n_boot=args.n_boot, seed=args.seed, reference=reference)
    rep.write(args.out)
    _manifest(Path(args.out), "evaluate", args.seed, {"n_records": len(records)})
    print(f"metrics for {len(records)} records -> {args.out}")


def cmd_compare(args) -> None:
    from .io import read_records
    from .metrics import compare_record_sets, write_deviation_csv
    from .trial import validate_records

    _require(args.reference, args.candidate)
    clinicians, cases = _load_eval_inputs(args)
    ref = validate_records(read_records(args.reference), clinicians).valid
    cand = validate_records(read_records(args.candidate), clinicians).valid
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    means = {}
    for stage in ("preliminary", "final"):
        for quantity in ("accuracy", "time"):
            dev = compare_record_sets(ref, cand, cases, clinicians, stage=stage, quantity=quantity)
            write_deviation_csv(dev, out / f"deviation_{quantity}_{stage}.csv", args.seed)
            means[f"{quantity}/{stage}"] = dev.mean_deviation
    _manifest(out, "compare", args.seed, {"mean_deviation": means})
    for k, v in means.items():
        print(f"{k:24s} mean deviation {v:.3f}")


def cmd_report(args) -> None:
    path = Path(args.metrics) / "summary.json"
    _require(path)
    summary = json.loads(path.read_text())
    if summary.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{path}: schema version mismatch")
    lines = [f"schema_version {summary['schema_version']}  seed {summary['seed']}"]
    for stage, table in summary["accuracy"].items():
        lines.append(f"\n{stage} accuracy by arm")
        for arm, cell in table.get("AI", {}).items():
            lines.append(f"  {arm:22s} {100 * cell['value']:6.2f}%  (n={cell['n']:.0f})")
    for stage, ci in summary.get("auc", {}).items():
        lines.append(f"\n{stage} AUC {ci['point']:.3f} (95% CI {ci['lo']:.3f}-{ci['hi']:.3f})")
    for stage, table in summary.get("time_reduction_hours", {}).items():
        lines.append(f"\n{stage} time reduction (hours)")
        for arm, row in table.items():
            cells = "  ".join(f"{k}={row[k]['value']:+.3f}" for k in ("all", "YS", "EW", "NS") if k in row)
            lines.append(f"  {arm:22s} {cells}")
    text = "\n".join(lines) + "\n"
    (Path(args.metrics) / "report.txt").write_text(text)
    sys.stdout.write(text)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="silicotrial", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", help="INI run configuration")
        return sp

    sp = verb("gen-pop", cmd_gen_pop, "generate a virtual clinician population")
    sp.add_argument("--n", type=int, default=125)
    sp.add_argument("--out", default="population.csv")

    sp = verb("synth-world", cmd_synth_world, "synthetic cohort plus oracle diagnosis records")
    sp.add_argument("--population", required=True)
    sp.add_argument("--out", default="world")

    sp = verb("train", cmd_train, "train a behavior simulator bundle")
    sp.add_argument("--records", required=True)
    sp.add_argument("--population", required=True)
    sp.add_argument("--cohort", required=True)
    sp.add_argument("--variant", default="specialized", choices=("specialized", "generalized-0h", "generalized-3h"))
    sp.add_argument("--time-bounds", type=float, nargs=2, default=(0.1, 60.0), metavar=("LO", "HI"))
    sp.add_argument("--out", default="simulator")

    sp = verb("simulate", cmd_simulate, "run an in-silico trial")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--population", required=True)
    sp.add_argument("--cohort", required=True)
    sp.add_argument("--step", choices=("step1", "step2"), help="restrict the plan to one step")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", default="records.csv")

    sp = verb("evaluate", cmd_evaluate, "metrics report for a record set")
    sp.add_argument("--records", required=True)
    sp.add_argument("--population", required=True)
    sp.add_argument("--cohort", required=True)
    sp.add_argument("--reference", help="reference record set for deviation tables")
    sp.add_argument("--n-boot", type=int, default=500)
    sp.add_argument("--out", default="metrics")

    sp = verb("compare", cmd_compare, "deviation report between two record sets")
    sp.add_argument("--reference", required=True)
    sp.add_argument("--candidate", required=True)
    sp.add_argument("--population", required=True)
    sp.add_argument("--cohort", required=True)
    sp.add_argument("--out", default="comparison")

    sp = verb("report", cmd_report, "print a metrics summary")
    sp.add_argument("--metrics", required=True, help="directory written by evaluate")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # map to categorized exit codes
        for types, code, label in _CATEGORIES:
            if isinstance(exc, types):
                print(f"error [{label}]: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
