"""The central A/B experiment: cohort-scoped models versus one global model.

The heartrate scenario plants two clusters inside one population: the same
feature geometry shifted by five sigma with flipped labels, which makes the
pooled problem XOR-like - provably not linearly separable. Per-cohort models
fit each cluster easily; a single global model cannot fit both label maps.

Run artifacts land in ./out/heartrate-{cohort,global}; the second run fills
the cohort-vs-global comparison table in run_summary.json.
"""

from pathlib import Path

from communityfl.runner import run_simulation
from communityfl.scenarios import builtin_scenarios

out = Path("out")
spec = builtin_scenarios()["heartrate"]

results = {}
for mode in ("cohort", "global"):
    run = run_simulation(spec, mode=mode, out_dir=out / f"heartrate-{mode}")
    results[mode] = run
    print(f"mode={mode:6s} mean holdout accuracy = "
          f"{run.summary.mean_holdout_accuracy:.4f}")
    for cohort_id, info in sorted(run.summary.per_cohort.items()):
        print(f"    {cohort_id}: members={len(info['members'])} "
              f"accuracy={info['final_holdout_accuracy']:.3f}")

delta = (
    results["cohort"].summary.mean_holdout_accuracy
    - results["global"].summary.mean_holdout_accuracy
)
print(f"\ncohort advantage: {100 * delta:.1f} accuracy points")

# per-client view: the merged population's clients are the ones that suffer
print("\nper-client holdout accuracy (cohort vs global):")
for client_id in spec.clients:
    a = results["cohort"].summary.per_client_holdout_accuracy[client_id]
    b = results["global"].summary.per_client_holdout_accuracy[client_id]
    print(f"    {client_id:10s} {a:.3f}  vs  {b:.3f}")
