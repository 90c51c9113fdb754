"""Participant metadata, admission filtering, data signatures, and cohorting.

A data signature is a compact statistical summary of local data (per-feature
moments plus a label histogram). Cohorts are formed by deterministic greedy
agglomeration on signature similarity: tasks are visited in ascending task id
and join the best-matching cohort above a threshold, otherwise open a new one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .flcore import FlCohort, FlPlan, FlPopulation
from .tinylearn import Dataset, ModelArch, WeightVector, init_weights


@dataclass(frozen=True)
class DeviceDescriptor:
    manufacturer: str
    model: str
    device_type: str
    firmware: str


@dataclass(frozen=True)
class CollaborationCriteria:
    """Hard admission filter a community applies to would-be participants."""

    required_tags: frozenset[str] = frozenset()
    forbidden_tags: frozenset[str] = frozenset()
    min_data_quality: float = 0.0
    min_samples: int = 0

    def __post_init__(self):
        object.__setattr__(self, "required_tags", frozenset(t.lower() for t in self.required_tags))
        object.__setattr__(
            self, "forbidden_tags", frozenset(t.lower() for t in self.forbidden_tags)
        )
        if self.required_tags & self.forbidden_tags:
            raise ConfigError("required and forbidden tag sets overlap")
        if not 0.0 <= self.min_data_quality <= 1.0:
            raise ConfigError(f"min_data_quality must be in [0,1], got {self.min_data_quality}")
        if self.min_samples < 0:
            raise ConfigError(f"min_samples must be >= 0, got {self.min_samples}")


@dataclass(eq=False)
class DataSignature:
    """Privacy-light summary of a local dataset used for similarity."""

    per_feature_mean: np.ndarray
    per_feature_std: np.ndarray
    label_histogram: np.ndarray
    n_samples: int
    quality_score: float

    def __post_init__(self):
        mean = np.array(self.per_feature_mean, dtype=np.float64)
        std = np.array(self.per_feature_std, dtype=np.float64)
        hist = np.array(self.label_histogram, dtype=np.float64)
        if mean.ndim != 1 or std.ndim != 1 or mean.shape != std.shape:
            raise ShapeError("per-feature mean/std must be 1-D vectors of equal length")
        if np.any(std < 0):
            raise ShapeError("per-feature std must be elementwise >= 0")
        if hist.ndim != 1 or hist.size < 1 or np.any(hist < 0):
            raise ShapeError("label histogram must be a non-negative 1-D vector")
        if abs(float(hist.sum()) - 1.0) > 1e-9:
            raise ShapeError(f"label histogram must sum to 1, got {hist.sum()!r}")
        if self.n_samples < 1:
            raise ShapeError(f"n_samples must be >= 1, got {self.n_samples}")
        if not 0.0 <= self.quality_score <= 1.0:
            raise ShapeError(f"quality_score must be in [0,1], got {self.quality_score}")
        for arr in (mean, std, hist):
            arr.setflags(write=False)
        object.__setattr__(self, "per_feature_mean", mean)
        object.__setattr__(self, "per_feature_std", std)
        object.__setattr__(self, "label_histogram", hist)


@dataclass(eq=False)
class ParticipantMetadata:
    """Self-description a participant shares with the coordinator."""

    participant_id: str
    device: DeviceDescriptor
    interests: frozenset[str]
    expertise: frozenset[str]
    data_signature: DataSignature
    criteria: CollaborationCriteria

    def __post_init__(self):
        if not self.participant_id:
            raise ConfigError("participant_id must be non-empty")
        self.interests = frozenset(t.lower() for t in self.interests)
        self.expertise = frozenset(t.lower() for t in self.expertise)

    @property
    def tags(self) -> frozenset[str]:
        return self.interests | self.expertise


@dataclass(eq=False)
class Community:
    """Stakeholder-created group supplying the base model, objective,
    admission criteria, and default plan for its tasks."""

    community_id: str
    creator_id: str
    purpose: str
    objective: str
    criteria: CollaborationCriteria
    base_model: ModelArch
    default_plan: FlPlan

    def __post_init__(self):
        if not self.community_id:
            raise ConfigError("community_id must be non-empty")


@dataclass(frozen=True)
class AdmitDecision:
    admitted: bool
    reason: str | None = None


def signature_from_dataset(data: Dataset, quality_score: float = 1.0) -> DataSignature:
    """Compute the signature of a local dataset (population std, ddof=0)."""
    hist = np.bincount(data.labels, minlength=data.n_classes).astype(np.float64)
    return DataSignature(
        per_feature_mean=data.features.mean(axis=0),
        per_feature_std=data.features.std(axis=0),
        label_histogram=hist / hist.sum(),
        n_samples=data.n_samples,
        quality_score=quality_score,
    )


def admit(meta: ParticipantMetadata, community: Community) -> AdmitDecision:
    """Apply the community's collaboration criteria; the first failed rule is
    reported as the rejection reason."""
    crit = community.criteria
    tags = meta.tags
    if not crit.required_tags <= tags:
        return AdmitDecision(False, "required_tags")
    if crit.forbidden_tags & tags:
        return AdmitDecision(False, "forbidden_tags")
    if meta.data_signature.quality_score < crit.min_data_quality:
        return AdmitDecision(False, "min_data_quality")
    if meta.data_signature.n_samples < crit.min_samples:
        return AdmitDecision(False, "min_samples")
    return AdmitDecision(True, None)


def _squash(x: np.ndarray) -> np.ndarray:
    # maps [0, inf) into [0, 1) without dataset-dependent normalization
    return x / (1.0 + x)


def similarity(a: DataSignature, b: DataSignature) -> float:
    """Similarity in [0, 1]: 1 minus the mean of a feature-moment distance and
    the total-variation distance between label histograms."""
    if a.per_feature_mean.shape != b.per_feature_mean.shape:
        raise ShapeError("signatures have different feature dimensions")
    if a.label_histogram.shape != b.label_histogram.shape:
        raise ShapeError("signatures have different label arities")
    gaps = np.concatenate(
        [
            _squash(np.abs(a.per_feature_mean - b.per_feature_mean)),
            _squash(np.abs(a.per_feature_std - b.per_feature_std)),
        ]
    )
    d_feat = float(gaps.mean())
    d_lab = 0.5 * float(np.abs(a.label_histogram - b.label_histogram).sum())
    return 1.0 - (0.5 * d_feat + 0.5 * d_lab)


def weighted_centroid(signatures: list[DataSignature]) -> DataSignature:
    weights = np.array([s.n_samples for s in signatures], dtype=np.float64)
    alphas = weights / weights.sum()
    mean = sum(a * s.per_feature_mean for a, s in zip(alphas, signatures))
    std = sum(a * s.per_feature_std for a, s in zip(alphas, signatures))
    hist = sum(a * s.label_histogram for a, s in zip(alphas, signatures))
    hist = np.maximum(hist, 0.0)
    hist = hist / hist.sum()
    quality = float(sum(a * s.quality_score for a, s in zip(alphas, signatures)))
    return DataSignature(
        per_feature_mean=mean,
        per_feature_std=std,
        label_histogram=hist,
        n_samples=int(weights.sum()),
        quality_score=min(1.0, quality),
    )


@dataclass
class _Block:
    members: list[str]
    signatures: list[DataSignature]
    centroid: DataSignature


def _greedy_blocks(
    signatures: dict[str, DataSignature], threshold: float
) -> list[_Block]:
    blocks: list[_Block] = []
    for task_id in sorted(signatures):
        sig = signatures[task_id]
        best_index = -1
        best_sim = -1.0
        # ties resolve to the earliest block, i.e. the lexicographically
        # smallest cohort id under zero-padded numbering
        for index, block in enumerate(blocks):
            sim = similarity(sig, block.centroid)
            if sim >= threshold and sim > best_sim:
                best_sim = sim
                best_index = index
        if best_index < 0:
            blocks.append(_Block(members=[task_id], signatures=[sig], centroid=sig))
        else:
            block = blocks[best_index]
            block.members.append(task_id)
            block.signatures.append(sig)
            block.centroid = weighted_centroid(block.signatures)
    return blocks


def _validate_threshold(threshold: float):
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"cohort threshold must be in (0,1), got {threshold}")


def form_cohorts(
    population: FlPopulation,
    signatures: dict[str, DataSignature],
    threshold: float,
    seed: int,
) -> list[FlCohort]:
    """Partition a population into cohorts of similar data signatures.

    Deterministic: tasks are processed in ascending task id, join the existing
    cohort whose centroid is most similar (if at least ``threshold``), and
    otherwise open a new cohort. Every cohort's first global model is
    ``init_weights(arch, seed)``, so all cohorts of one call start identically.
    """
    _validate_threshold(threshold)
    unknown = set(signatures) - population.member_task_ids
    if unknown:
        raise ConfigError(f"tasks not in population {population.population_id}: {sorted(unknown)}")
    blocks = _greedy_blocks(signatures, threshold)
    initial = init_weights(population.config.model_arch, seed)
    cohorts = []
    for index, block in enumerate(blocks):
        cohorts.append(
            FlCohort(
                cohort_id=f"{population.population_id}-c{index:03d}",
                population_id=population.population_id,
                member_task_ids=set(block.members),
                centroid=block.centroid,
                global_weights=_copy_weights(initial),
                round=0,
            )
        )
    return cohorts


def _copy_weights(w: WeightVector) -> WeightVector:
    # fresh copy so cohorts never alias one another's arrays
    return WeightVector(values=w.values.copy(), arch_id=w.arch_id)


@dataclass
class MigrationReport:
    """Outcome of reclustering: which tasks moved, plus cohort churn."""

    migrated: dict[str, tuple[str, str]] = field(default_factory=dict)
    new_cohort_ids: list[str] = field(default_factory=list)
    removed_cohort_ids: list[str] = field(default_factory=list)


def recluster(
    population: FlPopulation,
    new_signatures: dict[str, DataSignature],
    threshold: float,
    seed: int,
) -> tuple[list[FlCohort], MigrationReport]:
    """Re-run cohort formation on updated signatures, preserving cohort
    identity where membership overlaps.

    Each new block inherits the old cohort whose members contribute the most
    samples to it (ties: the lexicographically smallest old cohort id),
    keeping that cohort's id, global model, and round counter. Overlap is
    sample-weighted, not member-counted, because the old model fits whoever
    dominated its aggregation; giving it to a member-majority block of
    data-poor clients would hand them a model trained mostly on someone
    else's distribution. Blocks with no inherited cohort are brand-new and
    start from ``init_weights``. A task "migrated" when its cohort id changed.
    """
    _validate_threshold(threshold)
    blocks = _greedy_blocks(new_signatures, threshold)
    old_cohorts = {c.cohort_id: c for c in population.cohorts}
    old_of_task = {
        tid: cohort.cohort_id for cohort in population.cohorts for tid in cohort.member_task_ids
    }

    # candidate (overlap, old cohort) pairs per block, matched greedily so each
    # old cohort is inherited by at most one block
    candidates = []
    for b_index, block in enumerate(blocks):
        members = set(block.members)
        for old_id, old in old_cohorts.items():
            overlap = sum(
                new_signatures[tid].n_samples for tid in members & old.member_task_ids
            )
            if overlap > 0:
                candidates.append((-overlap, old_id, b_index))
    candidates.sort()
    assigned_old: dict[int, str] = {}
    used_old: set[str] = set()
    for neg_overlap, old_id, b_index in candidates:
        if old_id in used_old or b_index in assigned_old:
            continue
        assigned_old[b_index] = old_id
        used_old.add(old_id)

    next_index = 0
    for cohort_id in old_cohorts:
        suffix = cohort_id.rsplit("-c", 1)[-1]
        if suffix.isdigit():
            next_index = max(next_index, int(suffix) + 1)

    report = MigrationReport()
    initial = init_weights(population.config.model_arch, seed)
    new_cohorts: list[FlCohort] = []
    for b_index, block in enumerate(blocks):
        old_id = assigned_old.get(b_index)
        if old_id is not None:
            old = old_cohorts[old_id]
            cohort = FlCohort(
                cohort_id=old_id,
                population_id=population.population_id,
                member_task_ids=set(block.members),
                centroid=block.centroid,
                global_weights=old.global_weights,
                round=old.round,
            )
        else:
            cohort_id = f"{population.population_id}-c{next_index:03d}"
            next_index += 1
            cohort = FlCohort(
                cohort_id=cohort_id,
                population_id=population.population_id,
                member_task_ids=set(block.members),
                centroid=block.centroid,
                global_weights=_copy_weights(initial),
                round=0,
            )
            report.new_cohort_ids.append(cohort_id)
        new_cohorts.append(cohort)
        for tid in block.members:
            old_home = old_of_task.get(tid)
            if old_home is not None and old_home != cohort.cohort_id:
                report.migrated[tid] = (old_home, cohort.cohort_id)

    kept = {c.cohort_id for c in new_cohorts}
    report.removed_cohort_ids = sorted(set(old_cohorts) - kept)
    new_cohorts.sort(key=lambda c: c.cohort_id)
    return new_cohorts, report
