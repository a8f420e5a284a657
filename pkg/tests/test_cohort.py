from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from claimsight.cohort import (
    CohortSpec,
    build_never_pregnant_cohort,
    history_midpoint_age,
    split_by_patient,
)

from .conftest import make_record


def pool_patient(pid: str, age: int, seed_day: int = 0):
    # two background events spanning ~2 years; age measured at the midpoint
    mid = date(2020, 1, 1) + timedelta(days=seed_day % 90)
    birth = mid - timedelta(days=int(age * 365.25) + 100)
    return make_record(
        pid,
        [(1001, mid - timedelta(days=360)), (1002, mid + timedelta(days=360))],
        birth=birth,
    )


def test_degenerate_stratification():
    pool = [pool_patient(f"p{i}", 30, i) for i in range(20)]
    chosen, manifest = build_never_pregnant_cohort(pool, [30] * 7, n=10, seed=5)
    assert len(chosen) == 10
    assert manifest.fallbacks == []
    assert all(history_midpoint_age(r) == 30 for r in chosen)


def test_determinism_under_seed():
    pool = [pool_patient(f"p{i}", 25 + i % 10, i) for i in range(60)]
    ages = [27, 28, 29, 30] * 5
    a, _ = build_never_pregnant_cohort(pool, ages, n=12, seed=9)
    b, _ = build_never_pregnant_cohort(pool, ages, n=12, seed=9)
    assert [r.patient_id for r in a] == [r.patient_id for r in b]
    c, _ = build_never_pregnant_cohort(pool, ages, n=12, seed=10)
    assert [r.patient_id for r in a] != [r.patient_id for r in c]


def test_exhausted_stratum_falls_back_to_nearest():
    pool = [pool_patient("p30", 30), pool_patient("p31a", 31), pool_patient("p31b", 31)]
    chosen, manifest = build_never_pregnant_cohort(pool, [30, 30, 30], n=3, seed=1)
    assert len(chosen) == 3
    assert manifest.fallbacks == [(30, 31), (30, 31)]


def test_age_distribution_reproduced_on_large_pool():
    # pregnant ages drawn at mean 31.8, sd 4.8; matched sample must land
    # within half a year on both moments
    rng = np.random.default_rng(42)
    ages = np.clip(np.round(rng.normal(31.8, 4.8, size=3000)), 18, 48).astype(int)
    pool = []
    for i in range(5000):
        age = int(np.clip(np.round(rng.normal(32.0, 6.5)), 18, 48))
        pool.append(pool_patient(f"q{i}", age, i))
    chosen, _ = build_never_pregnant_cohort(pool, ages.tolist(), n=2500, seed=7)
    got = np.asarray([history_midpoint_age(r) for r in chosen], dtype=float)
    assert abs(got.mean() - 31.8) < 0.5
    assert abs(got.std() - 4.8) < 0.5


def test_split_sizes_50_25_25():
    cohort = [(f"p{i}", "uncomplicated") for i in range(100)]
    assignment = split_by_patient(cohort, CohortSpec(seed=0))
    sizes = {s: sum(1 for v in assignment.values() if v == s) for s in ("train", "val", "test")}
    assert sizes == {"train": 50, "val": 25, "test": 25}


def test_split_is_partition():
    cohort = [(f"p{i}", "uncomplicated" if i % 3 else "complicated") for i in range(97)]
    assignment = split_by_patient(cohort, CohortSpec(seed=1))
    assert sorted(assignment) == sorted(pid for pid, _ in cohort)
    assert set(assignment.values()) <= {"train", "val", "test"}


def test_subgroup_proportions_preserved_within_one():
    cohort = (
        [(f"u{i}", "uncomplicated") for i in range(40)]
        + [(f"c{i}", "complicated") for i in range(123)]
        + [(f"n{i}", "never_pregnant") for i in range(37)]
    )
    assignment = split_by_patient(cohort, CohortSpec(seed=2))
    for subgroup, total in (("uncomplicated", 40), ("complicated", 123), ("never_pregnant", 37)):
        for split, frac in (("train", 0.5), ("val", 0.25), ("test", 0.25)):
            got = sum(
                1
                for pid, sub in cohort
                if sub == subgroup and assignment[pid] == split
            )
            assert abs(got - total * frac) <= 1, (subgroup, split)


def test_split_determinism():
    cohort = [(f"p{i}", "x") for i in range(50)]
    a = split_by_patient(cohort, CohortSpec(seed=11))
    b = split_by_patient(cohort, CohortSpec(seed=11))
    assert a == b


def test_split_fractions_validated():
    with pytest.raises(ValueError, match="sum"):
        CohortSpec(split_fractions=(("train", 0.5), ("test", 0.3)))


def test_never_pregnant_target_follows_proportions():
    spec = CohortSpec()
    # default mix is 22.6 / 62.4 / 15.0
    assert spec.never_pregnant_target(850) == round(850 * 15.0 / 85.0)
    custom = CohortSpec(
        subgroup_proportions=(("uncomplicated", 0.4), ("complicated", 0.4), ("never_pregnant", 0.2))
    )
    assert custom.never_pregnant_target(100) == 25
