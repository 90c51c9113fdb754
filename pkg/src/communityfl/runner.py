"""Simulation driver and artifact writers.

A run produces four artifacts in the output directory:

* ``rounds.csv``    - one row per cohort per scheduler round
                      (cohort_id, round, n_updates, mean_local_acc,
                      global_holdout_acc, flag_rate);
* ``rounds.jsonl``  - the full round reports, one JSON record per line;
* ``cohorts.json``  - final community/population/cohort structure with
                      weight digests;
* ``run_summary.json`` - per-client final holdout accuracy, cohort-vs-global
                      comparison (filled in when the sibling mode has also
                      run into the same directory), and provenance.

``rounds.csv`` is byte-identical across runs with the same scenario and seed;
``run_summary.json`` additionally records wall time, which is not.

In simulation the runner is omniscient: it evaluates the fresh global model
on every member's holdout right after each round. The socket server cannot
see client holdouts, so there the same column is filled from the next round's
client-reported metrics and left empty for the final round.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import netproto
from .client import FlClient, ResourceProfile
from .errors import ConfigError
from .flcore import FlCohort, FlTask
from .hashing import digest_hex, weights_digest
from .orchestrator import Coordinator, RoundReport, SchedulerConfig
from .scenarios import ScenarioData, ScenarioSpec, apply_drift, generate
from .tinylearn import evaluate
from .transport import SimNetwork

logger = logging.getLogger(__name__)

MODE_COHORT = "cohort"
MODE_GLOBAL = "global"

CSV_COLUMNS = [
    "cohort_id",
    "round",
    "n_updates",
    "mean_local_acc",
    "global_holdout_acc",
    "flag_rate",
]


@dataclass
class RunSummary:
    scenario: str
    mode: str
    seed: int
    rounds_scheduled: int
    rounds_committed: int
    per_task_holdout_accuracy: dict[str, float]
    per_client_holdout_accuracy: dict[str, float]
    per_cohort: dict[str, dict]
    mean_holdout_accuracy: float
    comparison: dict
    recluster_events: list[dict]
    warnings: list[str]
    aborted_cohorts: list[str]
    wall_time_s: float

    def to_doc(self) -> dict:
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "seed": self.seed,
            "rounds_scheduled": self.rounds_scheduled,
            "rounds_committed": self.rounds_committed,
            "per_task_holdout_accuracy": dict(sorted(self.per_task_holdout_accuracy.items())),
            "per_client_holdout_accuracy": dict(
                sorted(self.per_client_holdout_accuracy.items())
            ),
            "per_cohort": dict(sorted(self.per_cohort.items())),
            "mean_holdout_accuracy": self.mean_holdout_accuracy,
            "comparison": self.comparison,
            "recluster_events": self.recluster_events,
            "warnings": self.warnings,
            "aborted_cohorts": self.aborted_cohorts,
            "wall_time_s": self.wall_time_s,
        }


def scheduler_for_mode(config: SchedulerConfig, mode: str, seed: int | None) -> SchedulerConfig:
    """Apply the CLI mode and optional seed override to a scenario's scheduler.

    Global mode is cohort_threshold = 0: one cohort per population.
    """
    if mode not in (MODE_COHORT, MODE_GLOBAL):
        raise ConfigError(f"mode must be '{MODE_COHORT}' or '{MODE_GLOBAL}', got {mode!r}")
    threshold = 0.0 if mode == MODE_GLOBAL else config.cohort_threshold
    return SchedulerConfig(
        clients_per_round=config.clients_per_round,
        rounds=config.rounds,
        cohort_threshold=threshold,
        min_updates_quorum=config.min_updates_quorum,
        guard_epsilon=config.guard_epsilon,
        seed=config.seed if seed is None else seed,
        weighted_aggregation=config.weighted_aggregation,
    )


@dataclass(eq=False)
class SimulationRun:
    """Everything a test or demo may want to poke at after a run."""

    spec: ScenarioSpec
    mode: str
    coordinator: Coordinator
    network: SimNetwork
    clients: dict[str, FlClient]
    data: ScenarioData
    rows: list[dict] = field(default_factory=list)
    reports: list[RoundReport] = field(default_factory=list)
    summary: RunSummary | None = None


def _holdout_of(client: FlClient, task: FlTask):
    return client.split(task.plan.eval_holdout_fraction)[1]


def _cohort_holdout_accuracy(
    cohort: FlCohort, coordinator: Coordinator, clients: dict[str, FlClient]
) -> float:
    """Sample-weighted mean accuracy of the cohort model on member holdouts."""
    total = 0
    acc = 0.0
    for task_id in sorted(cohort.member_task_ids):
        task = coordinator.registry.tasks[task_id]
        holdout = _holdout_of(clients[task.client_id], task)
        metrics = evaluate(cohort.global_weights, holdout)
        acc += metrics.accuracy * metrics.n_samples
        total += metrics.n_samples
    return acc / total if total else 0.0


def _mean_local_accuracy(report: RoundReport, arrivals_accuracy: dict[str, float]) -> float | None:
    values = [arrivals_accuracy[t] for t in report.guard_verdicts if t in arrivals_accuracy]
    return sum(values) / len(values) if values else None


def run_simulation(
    spec: ScenarioSpec,
    mode: str = MODE_COHORT,
    out_dir: str | Path | None = None,
    seed: int | None = None,
) -> SimulationRun:
    """Execute a scenario end to end on the deterministic in-process network."""
    started = time.perf_counter()
    config = scheduler_for_mode(spec.scheduler, mode, seed)
    data = generate(spec)
    coordinator = Coordinator(config, data.communities)
    network = SimNetwork(coordinator, spec.faults)
    run = SimulationRun(
        spec=spec, mode=mode, coordinator=coordinator, network=network, clients={}, data=data
    )

    for generated in data.clients:
        client = FlClient(
            client_id=generated.client_id,
            dataset=generated.dataset,
            metadata=generated.metadata,
            resource_profile=ResourceProfile(
                cpu_score=generated.resources.cpu_score, battery=generated.resources.battery
            ),
            neighbors=list(generated.resources.neighbors),
            trusted_neighbors=frozenset(generated.resources.trusted),
        )
        network.add_client(client)
        run.clients[client.client_id] = client

    channel = network.control_channel()
    for client_id in sorted(run.clients):
        run.clients[client_id].register(channel)
    for task in data.tasks:  # already sorted by task_id
        run.clients[task.client_id].submit_task(channel, task)
        network.bind_task(task.task_id, task.client_id)
    coordinator.ensure_cohorts()

    drift_by_round: dict[int, list] = {}
    for event in spec.drift_events:
        drift_by_round.setdefault(event.round, []).append(event)

    for sched_round in range(1, config.rounds + 1):
        for event in drift_by_round.get(sched_round, ()):
            dataset = apply_drift(data, event)
            run.clients[event.client_id].set_dataset(dataset)
            generated = data.client(event.client_id)
            # refresh the signature both locally and in the coordinator's
            # registry so a later recluster sees the drifted distribution
            for task in data.tasks:
                if task.client_id == event.client_id:
                    task.data_signature = generated.metadata.data_signature
            for task in coordinator.registry.tasks.values():
                if task.client_id == event.client_id:
                    task.data_signature = generated.metadata.data_signature
            logger.info("round %d: client %s drifted", sched_round, event.client_id)

        for cohort in coordinator.all_cohorts():
            report = coordinator.run_round(cohort, network, sched_round)
            logger.debug(
                "round %d cohort %s: %s (%d updates)",
                sched_round,
                cohort.cohort_id,
                report.status,
                report.received_updates,
            )
            run.reports.append(report)
            coordinator.ingest_metrics(report)
            pre_accuracy = {
                task_id: update.pre_metrics.accuracy
                for task_id, update in _updates_of(report, coordinator)
            }
            run.rows.append(
                {
                    "cohort_id": cohort.cohort_id,
                    "round": sched_round,
                    "n_updates": report.received_updates,
                    "mean_local_acc": _fmt(_mean_local_accuracy(report, pre_accuracy)),
                    "global_holdout_acc": _fmt(
                        _cohort_holdout_accuracy(cohort, coordinator, run.clients)
                    ),
                    "flag_rate": _fmt(report.flag_rate),
                }
            )
        coordinator.recluster_marked()

    run.summary = _summarize(run, started)
    if out_dir is not None:
        write_artifacts(
            Path(out_dir),
            run.rows,
            run.reports,
            run.coordinator,
            run.summary,
            run.spec.name,
            run.mode,
        )
    return run


def _updates_of(report: RoundReport, coordinator: Coordinator):
    for task_id in report.guard_verdicts:
        update = coordinator._received.get((task_id, report.cohort_id, report.round))
        if update is not None:
            yield task_id, update


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(round(float(value), 6))


def _summarize(run: SimulationRun, started: float) -> RunSummary:
    coordinator = run.coordinator
    per_task: dict[str, float] = {}
    per_cohort: dict[str, dict] = {}
    aborted = []
    for cohort in coordinator.all_cohorts():
        accuracy = _cohort_holdout_accuracy(cohort, coordinator, run.clients)
        per_cohort[cohort.cohort_id] = {
            "rounds": cohort.round,
            "members": sorted(cohort.member_task_ids),
            "final_holdout_accuracy": accuracy,
            "weights_digest": digest_hex(weights_digest(cohort.global_weights.values)),
        }
        if cohort.round == 0:
            aborted.append(cohort.cohort_id)
        for task_id in sorted(cohort.member_task_ids):
            task = coordinator.registry.tasks[task_id]
            holdout = _holdout_of(run.clients[task.client_id], task)
            per_task[task_id] = evaluate(cohort.global_weights, holdout).accuracy

    per_client: dict[str, list[float]] = {}
    for task_id, accuracy in per_task.items():
        client_id = coordinator.registry.tasks[task_id].client_id
        per_client.setdefault(client_id, []).append(accuracy)
    client_accuracy = {cid: sum(v) / len(v) for cid, v in per_client.items()}
    mean_accuracy = (
        sum(client_accuracy.values()) / len(client_accuracy) if client_accuracy else 0.0
    )

    return RunSummary(
        scenario=run.spec.name,
        mode=run.mode,
        seed=run.coordinator.config.seed,
        rounds_scheduled=run.coordinator.config.rounds,
        rounds_committed=sum(1 for r in run.reports if r.status == "committed"),
        per_task_holdout_accuracy=per_task,
        per_client_holdout_accuracy=client_accuracy,
        per_cohort=per_cohort,
        mean_holdout_accuracy=mean_accuracy,
        comparison={MODE_COHORT: None, MODE_GLOBAL: None, "delta_points": None},
        recluster_events=list(coordinator.migration_log),
        warnings=list(coordinator.warnings),
        aborted_cohorts=aborted,
        wall_time_s=round(time.perf_counter() - started, 3),
    )


# -- artifact writing ------------------------------------------------------------


def write_rounds_csv(path: Path, rows: list[dict]):
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_rounds_jsonl(path: Path, reports: list[RoundReport]):
    with path.open("w") as fh:
        for report in reports:
            fh.write(json.dumps(report.to_doc(), sort_keys=True) + "\n")


def build_cohorts_doc(
    coordinator: Coordinator, scenario: str, mode: str
) -> dict:
    populations = []
    ordered = sorted(
        coordinator.registry.populations.values(),
        key=lambda p: min(p.member_task_ids) if p.member_task_ids else p.population_id,
    )
    for display_index, population in enumerate(ordered, start=1):
        cohorts = []
        for cohort_index, cohort in enumerate(
            sorted(population.cohorts, key=lambda c: c.cohort_id), start=1
        ):
            members = []
            for task_id in sorted(cohort.member_task_ids):
                task = coordinator.registry.tasks[task_id]
                members.append(
                    {
                        "task_id": task_id,
                        "client_id": task.client_id,
                        "community_id": task.community_id,
                    }
                )
            cohorts.append(
                {
                    "cohort_id": cohort.cohort_id,
                    "display_name": f"FL cohort {cohort_index}",
                    "round": cohort.round,
                    "weights_digest": digest_hex(weights_digest(cohort.global_weights.values)),
                    "members": members,
                }
            )
        community_ids = sorted(
            {
                coordinator.registry.tasks[t].community_id
                for t in population.member_task_ids
            }
        )
        populations.append(
            {
                "population_id": population.population_id,
                "display_name": f"FL population {display_index}",
                "community_ids": community_ids,
                "config": netproto.config_to_doc(population.config),
                "cohorts": cohorts,
            }
        )
    return {
        "scenario": scenario,
        "mode": mode,
        "cohort_threshold": coordinator.config.cohort_threshold,
        "populations": populations,
    }


def write_artifacts(
    out_dir: Path,
    rows: list[dict],
    reports: list[RoundReport],
    coordinator: Coordinator,
    summary: RunSummary,
    scenario_name: str,
    mode: str,
):
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rounds_csv(out_dir / "rounds.csv", rows)
    write_rounds_jsonl(out_dir / "rounds.jsonl", reports)
    cohorts_doc = build_cohorts_doc(coordinator, scenario_name, mode)
    (out_dir / "cohorts.json").write_text(json.dumps(cohorts_doc, indent=2, sort_keys=True) + "\n")
    summary.comparison = _merge_comparison(out_dir, mode, summary.mean_holdout_accuracy)
    doc = summary.to_doc()
    (out_dir / f"run_summary.{mode}.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )
    (out_dir / "run_summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_socket_rounds(
    server,
    rounds: int,
    out_dir: Path | None,
    scenario_name: str = "socket",
    mode: str = MODE_COHORT,
    ready_timeout_s: float = 60.0,
) -> tuple[list[dict], list[RoundReport]]:
    """Drive rounds over live socket sessions and write the same artifacts.

    The server cannot evaluate client holdouts, so ``global_holdout_acc`` for
    round r is filled from round r+1's client-reported post metrics and the
    final row is left empty.
    """
    coordinator = server.coordinator
    if not server.wait_ready(ready_timeout_s):
        raise ConfigError("expected clients did not register and submit tasks in time")
    started = time.perf_counter()
    coordinator.ensure_cohorts()
    rows: list[dict] = []
    reports: list[RoundReport] = []
    last_row_of: dict[str, int] = {}
    try:
        for sched_round in range(1, rounds + 1):
            for cohort in coordinator.all_cohorts():
                report = coordinator.run_round(cohort, server.round_transport(), sched_round)
                reports.append(report)
                coordinator.ingest_metrics(report)
                updates = list(_updates_of(report, coordinator))
                if updates and cohort.cohort_id in last_row_of:
                    lagged = sum(u.post_metrics.accuracy for _, u in updates) / len(updates)
                    rows[last_row_of[cohort.cohort_id]]["global_holdout_acc"] = _fmt(lagged)
                pre_accuracy = {t: u.pre_metrics.accuracy for t, u in updates}
                rows.append(
                    {
                        "cohort_id": cohort.cohort_id,
                        "round": sched_round,
                        "n_updates": report.received_updates,
                        "mean_local_acc": _fmt(_mean_local_accuracy(report, pre_accuracy)),
                        "global_holdout_acc": "",
                        "flag_rate": _fmt(report.flag_rate),
                    }
                )
                last_row_of[cohort.cohort_id] = len(rows) - 1
            coordinator.recluster_marked()
    finally:
        # a signal-driven shutdown still flushes whatever completed
        _finish_socket_run(
            server, rounds, out_dir, scenario_name, mode, rows, reports, started
        )
    return rows, reports


def _finish_socket_run(server, rounds, out_dir, scenario_name, mode, rows, reports, started):
    coordinator = server.coordinator
    per_cohort = {}
    aborted = []
    latest_post: dict[str, float] = {}
    for report in reports:
        for task_id, update in _updates_of(report, coordinator):
            latest_post[task_id] = update.post_metrics.accuracy
    for cohort in coordinator.all_cohorts():
        per_cohort[cohort.cohort_id] = {
            "rounds": cohort.round,
            "members": sorted(cohort.member_task_ids),
            "final_holdout_accuracy": None,
            "weights_digest": digest_hex(weights_digest(cohort.global_weights.values)),
        }
        if cohort.round == 0:
            aborted.append(cohort.cohort_id)
    per_client: dict[str, list[float]] = {}
    for task_id, accuracy in latest_post.items():
        client_id = coordinator.registry.tasks[task_id].client_id
        per_client.setdefault(client_id, []).append(accuracy)
    client_accuracy = {cid: sum(v) / len(v) for cid, v in per_client.items()}
    summary = RunSummary(
        scenario=scenario_name,
        mode=mode,
        seed=coordinator.config.seed,
        rounds_scheduled=rounds,
        rounds_committed=sum(1 for r in reports if r.status == "committed"),
        per_task_holdout_accuracy=latest_post,
        per_client_holdout_accuracy=client_accuracy,
        per_cohort=per_cohort,
        mean_holdout_accuracy=(
            sum(client_accuracy.values()) / len(client_accuracy) if client_accuracy else 0.0
        ),
        comparison={MODE_COHORT: None, MODE_GLOBAL: None, "delta_points": None},
        recluster_events=list(coordinator.migration_log),
        warnings=list(coordinator.warnings),
        aborted_cohorts=aborted,
        wall_time_s=round(time.perf_counter() - started, 3),
    )
    if out_dir is not None:
        write_artifacts(Path(out_dir), rows, reports, coordinator, summary, scenario_name, mode)


def _merge_comparison(out_dir: Path, mode: str, mean_accuracy: float) -> dict:
    """Fill the cohort-vs-global table from this run plus any sibling run."""
    comparison = {MODE_COHORT: None, MODE_GLOBAL: None, "delta_points": None}
    comparison[mode] = mean_accuracy
    other = MODE_GLOBAL if mode == MODE_COHORT else MODE_COHORT
    sibling = out_dir / f"run_summary.{other}.json"
    if sibling.exists():
        try:
            doc = json.loads(sibling.read_text())
            comparison[other] = doc.get("mean_holdout_accuracy")
        except (OSError, ValueError):
            pass
    if comparison[MODE_COHORT] is not None and comparison[MODE_GLOBAL] is not None:
        comparison["delta_points"] = round(
            100.0 * (comparison[MODE_COHORT] - comparison[MODE_GLOBAL]), 3
        )
    return comparison
