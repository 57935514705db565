import json

import numpy as np
import pytest

from silicotrial.cli import main
from silicotrial.errors import MissingInputError, SchemaError
from silicotrial.io import (
    EXAMPLE_CONFIG,
    plan_from_config,
    read_cohort,
    read_config,
    read_population,
    read_records,
    read_table,
    write_cohort,
    write_plan_config,
    write_population,
    write_records,
)


def test_population_round_trip(world, tmp_path):
    write_population(tmp_path / "pop.csv", world.clinicians, 7)
    assert read_population(tmp_path / "pop.csv") == world.clinicians


def test_cohort_round_trip(world, tmp_path):
    cases = world.cohorts["G2"][:15]
    write_cohort(tmp_path / "c.csv", cases, 1)
    back = read_cohort(tmp_path / "c.csv")
    for a, b in zip(cases, back):
        assert a.id == b.id and a.label == b.label and a.onset_time == b.onset_time
        assert np.array_equal(a.image_embedding, b.image_embedding)
        assert a.latent == b.latent


def test_records_round_trip(world, tmp_path):
    recs = world.records[:200]
    write_records(tmp_path / "r.csv", recs, 3)
    assert read_records(tmp_path / "r.csv") == recs


def test_read_errors(tmp_path):
    with pytest.raises(MissingInputError):
        read_table(tmp_path / "missing.csv")
    (tmp_path / "old.csv").write_text("#schema_version=0 seed=1\na,b\n1,2\n")
    with pytest.raises(SchemaError):
        read_table(tmp_path / "old.csv")


def test_plan_config_round_trip(world, tmp_path):
    write_plan_config(tmp_path / "plan.ini", world.plan)
    plan = plan_from_config(read_config(tmp_path / "plan.ini"))
    assert plan.settings == world.plan.settings
    assert set(plan.surrogates) == set(world.plan.surrogates)


def test_missing_bundle_exit_code(tmp_path, capsys):
    code = main(["simulate", "--bundle", str(tmp_path / "none"), "--population", "x", "--cohort", "y"])
    assert code == 3
    assert "missing input" in capsys.readouterr().err


def test_gen_pop(tmp_path):
    out = tmp_path / "pop.csv"
    assert main(["gen-pop", "--n", "125", "--seed", "7", "--out", str(out)]) == 0
    assert len(read_population(out)) == 125


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[world]\nseptic_fraction = 2.0\n")
    (tmp_path / "pop.csv").write_text("")
    main(["gen-pop", "--n", "10", "--out", str(tmp_path / "pop.csv")])
    code = main(["synth-world", "--population", str(tmp_path / "pop.csv"), "--config", str(cfg), "--out", str(tmp_path / "w")])
    assert code == 6


def test_full_chain(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text(EXAMPLE_CONFIG)
    d = str(tmp_path)

    def run(*argv):
        assert main(list(argv) + ["--config", str(cfg), "--seed", "7"]) == 0, argv

    run("gen-pop", "--n", "40", "--out", f"{d}/pop.csv")
    run("synth-world", "--population", f"{d}/pop.csv", "--out", f"{d}/world")
    common = ["--population", f"{d}/pop.csv", "--cohort", f"{d}/world/cohort.csv"]
    run("train", "--records", f"{d}/world/records.csv", *common, "--out", f"{d}/sim")
    run("simulate", "--bundle", f"{d}/sim", *common, "--out", f"{d}/sim.csv")
    run("evaluate", "--records", f"{d}/sim.csv", *common, "--reference", f"{d}/world/records.csv", "--n-boot", "50", "--out", f"{d}/m")
    run("compare", "--reference", f"{d}/world/records.csv", "--candidate", f"{d}/sim.csv", *common, "--out", f"{d}/cmp")
    run("report", "--metrics", f"{d}/m")
    assert len(read_records(f"{d}/sim.csv")) == 40 * 60
    summary = json.loads((tmp_path / "m" / "summary.json").read_text())
    assert summary["schema_version"] == "1"
    assert "accuracy by arm" in capsys.readouterr().out
