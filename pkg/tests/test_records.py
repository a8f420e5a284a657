from __future__ import annotations

from datetime import date

import pytest

from claimsight.records import (
    ClaimEvent,
    ClaimsFormatError,
    Demographics,
    PatientRecord,
    Race,
    Sex,
    load_claims,
    load_patients,
    write_claims,
)
from claimsight.vocab import ConceptCode, Domain, Vocabulary


@pytest.fixture
def vocab():
    return Vocabulary(
        [
            ConceptCode(101, Domain.CONDITION, "a"),
            ConceptCode(102, Domain.LAB, "b"),
            ConceptCode(103, Domain.DRUG, "c"),
        ]
    )


def write_csv(tmp_path, rows, name="claims.csv"):
    path = tmp_path / name
    path.write_text("patient_id,concept_id,domain,date\n" + "".join(r + "\n" for r in rows))
    return path


def test_three_rows_two_patients_sorted(tmp_path, vocab):
    path = write_csv(
        tmp_path,
        ["p2,102,lab,2020-05-01", "p1,101,condition,2020-03-02", "p1,102,lab,2020-01-15"],
    )
    records, rejected = load_claims(path, vocab)
    assert [r.patient_id for r in records] == ["p1", "p2"]
    assert rejected == []
    p1 = records[0]
    assert [e.date for e in p1.events] == [date(2020, 1, 15), date(2020, 3, 2)]


def test_unknown_concept_quarantined_not_dropped(tmp_path, vocab):
    path = write_csv(tmp_path, ["p1,999,condition,2020-01-01", "p1,101,condition,2020-02-01"])
    records, rejected = load_claims(path, vocab)
    assert len(records) == 1  # record kept
    assert len(records[0].events) == 1
    assert len(rejected) == 1
    assert rejected[0].reason == "unknown_concept"
    assert rejected[0].line_no == 2


def test_duplicate_rows_retained(tmp_path, vocab):
    path = write_csv(tmp_path, ["p1,101,condition,2020-01-01"] * 2)
    records, _ = load_claims(path, vocab)
    assert len(records[0].events) == 2


def test_rejection_plus_accepted_equals_row_count(tmp_path, vocab):
    rows = [
        "p1,101,condition,2020-01-01",
        "p1,999,condition,2020-01-02",
        "p2,102,lab,2020-01-03",
        "p2,888,lab,2020-01-04",
        "p2,103,drug,2020-01-05",
    ]
    records, rejected = load_claims(write_csv(tmp_path, rows), vocab)
    accepted = sum(len(r.events) for r in records)
    assert accepted + len(rejected) == len(rows)


def test_malformed_date_raises_with_line_number(tmp_path, vocab):
    path = write_csv(tmp_path, ["p1,101,condition,2020-01-01", "p1,101,condition,not-a-date"])
    with pytest.raises(ClaimsFormatError, match=":3"):
        load_claims(path, vocab)


def test_malformed_concept_raises(tmp_path, vocab):
    path = write_csv(tmp_path, ["p1,xyz,condition,2020-01-01"])
    with pytest.raises(ClaimsFormatError, match=":2"):
        load_claims(path, vocab)


def test_empty_file_gives_empty_list(tmp_path, vocab):
    path = write_csv(tmp_path, [])
    records, rejected = load_claims(path, vocab)
    assert records == [] and rejected == []


def test_date_outside_bounds_rejected(tmp_path, vocab):
    path = write_csv(tmp_path, ["p1,101,condition,1899-12-31"])
    with pytest.raises(ClaimsFormatError):
        load_claims(path, vocab)


def test_round_trip_canonical(tmp_path, vocab):
    rows = [
        "p2,102,lab,2020-05-01",
        "p1,103,drug,2020-03-02",
        "p1,101,condition,2020-01-15",
        "p1,101,condition,2020-01-15",
    ]
    path = write_csv(tmp_path, rows)
    records, _ = load_claims(path, vocab)
    out = tmp_path / "out.csv"
    write_claims(records, vocab, out)
    canonical = [
        "p1,101,condition,2020-01-15",
        "p1,101,condition,2020-01-15",
        "p1,103,drug,2020-03-02",
        "p2,102,lab,2020-05-01",
    ]
    body = out.read_text().strip().splitlines()
    assert body[0] == "patient_id,concept_id,domain,date"
    assert body[1:] == canonical
    # loading the canonical form again is a fixed point
    records2, _ = load_claims(out, vocab)
    out2 = tmp_path / "out2.csv"
    write_claims(records2, vocab, out2)
    assert out.read_bytes() == out2.read_bytes()


def test_demographics_join(tmp_path, vocab):
    ppath = tmp_path / "patients.csv"
    ppath.write_text("patient_id,birth_date,sex,race\np1,1990-02-03,female,black\n")
    patients = load_patients(ppath)
    assert patients["p1"] == Demographics(date(1990, 2, 3), Sex.FEMALE, Race.BLACK)
    cpath = write_csv(tmp_path, ["p1,101,condition,2020-01-01"])
    records, _ = load_claims(cpath, vocab, patients)
    assert records[0].race == Race.BLACK
    assert records[0].birth_date == date(1990, 2, 3)


def test_record_invariants():
    ev1 = ClaimEvent("p1", 101, date(2020, 2, 1))
    ev2 = ClaimEvent("p1", 101, date(2020, 1, 1))
    with pytest.raises(ValueError, match="not date-sorted"):
        PatientRecord("p1", date(1990, 1, 1), events=(ev1, ev2))
    with pytest.raises(ValueError, match="patient_id"):
        PatientRecord("p2", date(1990, 1, 1), events=(ev1,))
    rec = PatientRecord("p1", date(1990, 1, 1), events=(ev2, ev1))
    assert rec.first_event_date == date(2020, 1, 1)
    assert len(rec.events_on_or_before(date(2020, 1, 15))) == 1
