"""Cohort assembly: never-pregnant matching, patient-level splits, manifest.

Splits are performed per subgroup so class proportions carry into every
split, and all sampling is deterministic under the configured seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path

import numpy as np

from .records import PatientRecord, age_years

IDENTIFICATION_SPLITS = (("train", 0.50), ("val", 0.25), ("test", 0.25))
COMPLICATION_SPLITS = (("train", 0.60), ("val", 0.20), ("test", 0.20))


DEFAULT_SUBGROUP_PROPORTIONS = (
    ("uncomplicated", 0.226),
    ("complicated", 0.624),
    ("never_pregnant", 0.150),
)


@dataclass(frozen=True)
class CohortSpec:
    age_range: tuple[int, int] = (18, 48)
    subgroup_proportions: tuple[tuple[str, float], ...] = DEFAULT_SUBGROUP_PROPORTIONS
    split_fractions: tuple[tuple[str, float], ...] = IDENTIFICATION_SPLITS
    seed: int = 0

    def __post_init__(self):
        total = sum(f for _, f in self.split_fractions)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, expected 1")

    def never_pregnant_target(self, n_pregnant: int) -> int:
        """Matched never-pregnant count implied by the proportion targets."""
        props = dict(self.subgroup_proportions)
        never = props.get("never_pregnant", 0.0)
        pregnant = sum(v for k, v in props.items() if k != "never_pregnant")
        if pregnant <= 0:
            return 0
        return int(round(n_pregnant * never / pregnant))


@dataclass
class SamplingManifest:
    """Records the seed and any nearest-age fallbacks taken during matching."""

    seed: int
    requested: int
    sampled: int
    fallbacks: list[tuple[int, int]] = field(default_factory=list)  # (wanted_age, used_age)
    clamped_patients: list[str] = field(default_factory=list)


def history_midpoint_age(record: PatientRecord) -> int | None:
    """Age at the midpoint of the recorded history, floored to years."""
    if not record.events:
        return None
    first, last = record.first_event_date, record.last_event_date
    mid = first + timedelta(days=(last - first).days // 2)
    return age_years(record.birth_date, mid)


def build_never_pregnant_cohort(
    pool: list[PatientRecord],
    pregnant_ages: list[int],
    n: int,
    seed: int,
) -> tuple[list[PatientRecord], SamplingManifest]:
    """Sample n pool patients whose integer-age histogram matches the
    pregnant cohort's, by stratified sampling with nearest-age fallback.

    Pool patients must already be screened for anchor-free histories. Ages
    are taken at the history midpoint. Deterministic under seed.
    """
    if n <= 0:
        return [], SamplingManifest(seed=seed, requested=n, sampled=0)
    if not pregnant_ages:
        raise ValueError("pregnant age sample is empty")

    rng = np.random.default_rng(seed)
    by_age: dict[int, list[PatientRecord]] = {}
    for rec in pool:
        age = history_midpoint_age(rec)
        if age is None:
            continue
        by_age.setdefault(age, []).append(rec)
    for recs in by_age.values():
        recs.sort(key=lambda r: r.patient_id)

    # per-stratum targets by largest remainder, so counts total exactly n
    ages, counts = np.unique(np.asarray(pregnant_ages, dtype=int), return_counts=True)
    quota = counts / counts.sum() * n
    base = np.floor(quota).astype(int)
    remainder = quota - base
    short = n - int(base.sum())
    for idx in np.argsort(-remainder, kind="stable")[:short]:
        base[idx] += 1

    manifest = SamplingManifest(seed=seed, requested=n, sampled=0)
    chosen: list[PatientRecord] = []
    for age, want in zip(ages.tolist(), base.tolist()):
        for _ in range(want):
            use_age = _nearest_nonempty_age(by_age, age)
            if use_age is None:
                break  # pool exhausted entirely
            if use_age != age:
                manifest.fallbacks.append((age, use_age))
            bucket = by_age[use_age]
            pick = int(rng.integers(len(bucket)))
            chosen.append(bucket.pop(pick))
            if not bucket:
                del by_age[use_age]
    manifest.sampled = len(chosen)
    chosen.sort(key=lambda r: r.patient_id)
    return chosen, manifest


def _nearest_nonempty_age(by_age: dict[int, list[PatientRecord]], age: int) -> int | None:
    if age in by_age:
        return age
    if not by_age:
        return None
    # ties break toward the younger stratum for determinism
    return min(by_age, key=lambda a: (abs(a - age), a))


def split_by_patient(
    cohort: list[tuple[str, str]], spec: CohortSpec
) -> dict[str, str]:
    """Partition patient ids into named splits, stratified by subgroup.

    ``cohort`` is a list of (patient_id, subgroup). Each subgroup is
    shuffled and cut independently, so subgroup proportions are preserved
    within one patient of exact per split. Deterministic under spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    by_subgroup: dict[str, list[str]] = {}
    for pid, subgroup in cohort:
        by_subgroup.setdefault(subgroup, []).append(pid)

    assignment: dict[str, str] = {}
    for subgroup in sorted(by_subgroup):
        pids = sorted(by_subgroup[subgroup])
        order = rng.permutation(len(pids))
        shuffled = [pids[i] for i in order]
        n = len(shuffled)
        cum = 0.0
        start = 0
        for name, frac in spec.split_fractions:
            cum += frac
            end = int(round(n * cum))
            for pid in shuffled[start:end]:
                if pid in assignment:
                    raise ValueError(f"patient {pid!r} appears in two subgroups")
                assignment[pid] = name
            start = end
    return assignment


def write_split_membership(
    assignment: dict[str, str], subgroups: dict[str, str], path: str | Path
) -> None:
    """Write the ``patient_id,split,subgroup`` membership file."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "split", "subgroup"])
        for pid in sorted(assignment):
            writer.writerow([pid, assignment[pid], subgroups.get(pid, "")])


def read_split_membership(path: str | Path) -> dict[str, tuple[str, str]]:
    out: dict[str, tuple[str, str]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["patient_id"]] = (row["split"], row["subgroup"])
    return out
