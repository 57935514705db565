"""Train a simulator on an oracle world and see whether it recovers the planted effects.

Smaller than the acceptance run (500 training clinicians), so expect a
minute or so and somewhat looser agreement.

    python3 demos/planted_effects.py
"""

import time

from silicotrial.behavior import SimulatorConfig, train_simulator
from silicotrial.metrics import arm_accuracy, time_reduction
from silicotrial.population import generate_population
from silicotrial.surrogates import default_surrogates
from silicotrial.synth import WorldParams, generate_group_cohorts, generate_oracle_records, oracle_expected
from silicotrial.trial import build_default_plan, run_trial

params = WorldParams()
plan = build_default_plan(default_surrogates(0))

started = time.perf_counter()
clin = generate_population(500, seed=1)
cohorts = generate_group_cohorts(params, plan.groups, 2)
records = [o.record for o in generate_oracle_records(clin, cohorts, plan, params, 3)]
cases = {c.id: c for g in cohorts.values() for c in g}
config = SimulatorConfig(search_budget=0, base_params={"max_depth": 6, "n_rounds": 300, "learning_rate": 0.05, "min_leaf": 50})
sim = train_simulator(records, {c.id: c for c in clin}, cases, "specialized", 0, config)
print(f"trained on {len(records)} oracle records in {time.perf_counter() - started:.0f}s")
print("held-out final AUC", round(sim.report["test"]["final_auc"], 3))

new_clin = generate_population(300, seed=4)
new_cohorts = generate_group_cohorts(params, plan.groups, 5)
new_cases = {c.id: c for g in new_cohorts.values() for c in g}
rs = run_trial(plan, sim, new_clin, new_cohorts, 6)
truth = oracle_expected(rs.records, {c.id: c for c in new_clin}, new_cases, params)

sim_acc = arm_accuracy(rs.records, new_cases, "final", expected=True)
ora_acc = arm_accuracy(truth, new_cases, "final", expected=True)
sim_tr = time_reduction(rs.records, new_cases, "final", expected=True)
ora_tr = time_reduction(truth, new_cases, "final", expected=True)
print(f"\n{'arm':20s} {'sim acc':>8s} {'oracle':>8s} {'sim TR h':>9s} {'oracle':>8s}")
for arm in sim_acc:
    print(f"{arm:20s} {100 * sim_acc[arm]:8.2f} {100 * ora_acc[arm]:8.2f} {sim_tr.mean(arm):9.3f} {ora_tr.mean(arm):8.3f}")
