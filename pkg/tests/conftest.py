from __future__ import annotations

from datetime import date
from pathlib import Path

import pytest

from claimsight.records import ClaimEvent, PatientRecord, Race, Sex
from claimsight.synth import DEFAULT_ROLE_CONFIG
from claimsight.vocab import load_code_roles


@pytest.fixture(scope="session")
def roles(tmp_path_factory):
    path = tmp_path_factory.mktemp("roles") / "roles.ini"
    path.write_text(DEFAULT_ROLE_CONFIG)
    return load_code_roles(path)


def make_record(
    patient_id: str,
    events: list[tuple[int, date]],
    birth: date = date(1988, 4, 2),
    sex: Sex = Sex.FEMALE,
    race: Race = Race.UNREPORTED,
) -> PatientRecord:
    evs = tuple(
        ClaimEvent(patient_id, concept, when)
        for concept, when in sorted(events, key=lambda cw: (cw[1], cw[0]))
    )
    return PatientRecord(patient_id, birth, sex, race, evs)


@pytest.fixture(scope="session")
def small_workdir(tmp_path_factory) -> Path:
    """A fully-built tiny pipeline workdir shared by integration tests."""
    from claimsight import pipeline
    from claimsight.synth import GeneratorConfig

    workdir = tmp_path_factory.mktemp("pipeline")
    config = GeneratorConfig(seed=17, n_uncomplicated=34, n_complicated=93, n_never=23)
    pipeline.stage_synth(workdir, config)
    pipeline.stage_cohort(workdir, seed=17)
    pipeline.stage_features(workdir, "id", seed=17)
    pipeline.stage_features(workdir, "risk", seed=17)
    pipeline.stage_train_id(workdir)
    pipeline.stage_train_risk(workdir)
    return workdir
