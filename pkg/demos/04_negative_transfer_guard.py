"""Negative-transfer guard demo: isolating a label-flipping client.

One of four clients trains on fully label-flipped data. Every update carries
a before/after metric pair measured on the client's own holdout:

    pre  = loss of the client's previous local model
    post = loss of the incoming aggregated model

When the shared model makes a client worse off by more than epsilon, the
guard flags the update and keeps it out of aggregation. The poisoned client
is the one the clean consensus keeps hurting - and the one whose updates
would hurt everyone else.
"""

import dataclasses

from communityfl.runner import run_simulation
from communityfl.scenarios import builtin_scenarios

spec = builtin_scenarios()["poison"]
print(f"scenario {spec.name}: {len(spec.clients)} clients, "
      f"{spec.poison[0].client_id} flips all labels, epsilon={spec.scheduler.guard_epsilon}")

guarded = run_simulation(spec, mode="cohort")

print("\nper-round guard verdicts:")
for report in guarded.reports:
    flags = sorted(t for t, v in report.guard_verdicts.items() if v != "accept")
    print(f"    round {report.sched_round:2d}: flagged={flags or '-'}")

unguarded_spec = dataclasses.replace(
    spec, scheduler=dataclasses.replace(spec.scheduler, guard_epsilon=None)
)
unguarded = run_simulation(unguarded_spec, mode="cohort")

clean = [c for c in spec.clients if c != "p-04"]
on = sum(guarded.summary.per_client_holdout_accuracy[c] for c in clean) / len(clean)
off = sum(unguarded.summary.per_client_holdout_accuracy[c] for c in clean) / len(clean)
print(f"\nclean-client accuracy with guard: {on:.4f}")
print(f"clean-client accuracy without:    {off:.4f}")
print(f"guard lift: {100 * (on - off):.1f} accuracy points")
