"""Shared fixtures: a small oracle world and simulators trained on it."""

import numpy as np
import pytest

from silicotrial.behavior import SimulatorConfig, train_simulator
from silicotrial.population import generate_population
from silicotrial.surrogates import default_surrogates
from silicotrial.synth import WorldParams, generate_group_cohorts, generate_oracle_records
from silicotrial.trial import build_default_plan

SMALL_PARAMS = {"max_depth": 3, "n_rounds": 40, "learning_rate": 0.2, "min_leaf": 20}


class SmallWorld:
    def __init__(self, n_clinicians=125, cohort_size=60, seed=7):
        self.params = WorldParams(cohort_size=cohort_size)
        self.plan = build_default_plan(default_surrogates(0))
        self.clinicians = generate_population(n_clinicians, seed=seed)
        self.cohorts = generate_group_cohorts(self.params, self.plan.groups, seed)
        self.oracle = generate_oracle_records(self.clinicians, self.cohorts, self.plan, self.params, seed)
        self.records = [o.record for o in self.oracle]
        self.clin_by_id = {c.id: c for c in self.clinicians}
        self.cases = {c.id: c for g in self.cohorts.values() for c in g}


@pytest.fixture(scope="session")
def world():
    return SmallWorld()


@pytest.fixture(scope="session")
def small_config():
    return SimulatorConfig(search_budget=0, base_params=dict(SMALL_PARAMS), sequence_max_records=3000)


@pytest.fixture(scope="session")
def specialized(world, small_config):
    return train_simulator(world.records, world.clin_by_id, world.cases, "specialized", 3, small_config)


@pytest.fixture(scope="session")
def generalized(world, small_config):
    return train_simulator(world.records, world.clin_by_id, world.cases, "generalized-0h", 3, small_config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    props = dict(report.user_properties)
    _CRITERIA[name] = (report.outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda s: int(s.split("_")[2])):
        outcome, detail = _CRITERIA[name]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        label = name[len("test_criterion_"):].replace("_", " ", 1).replace("_", "-")
        terminalreporter.write_line(f"criterion {label}: {verdict}  {detail}")
