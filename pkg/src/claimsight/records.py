"""Claim events, patient records, and claims-file ingestion.

All types are immutable after construction and safe to share across threads.
Loading is single-threaded per file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path

from .vocab import Vocabulary

DATE_MIN = date(1900, 1, 1)
DATE_MAX = date(2100, 12, 31)


class ClaimsFormatError(ValueError):
    """Raised for malformed rows; message carries the file line number."""


class Sex(str, Enum):
    FEMALE = "female"
    MALE = "male"
    UNKNOWN = "unknown"


class Race(str, Enum):
    WHITE = "white"
    BLACK = "black"
    OTHER = "other"
    UNREPORTED = "unreported"


@dataclass(frozen=True, order=True)
class ClaimEvent:
    patient_id: str
    concept_id: int
    date: date

    def __post_init__(self):
        if not (DATE_MIN <= self.date <= DATE_MAX):
            raise ClaimsFormatError(
                f"event date {self.date} outside [{DATE_MIN}, {DATE_MAX}]"
            )


@dataclass(frozen=True)
class PatientRecord:
    """A patient's demographics plus their full date-ordered claim history."""

    patient_id: str
    birth_date: date
    sex: Sex = Sex.UNKNOWN
    race: Race = Race.UNREPORTED
    events: tuple[ClaimEvent, ...] = ()

    def __post_init__(self):
        prev = None
        for ev in self.events:
            if ev.patient_id != self.patient_id:
                raise ValueError(
                    f"event patient_id {ev.patient_id!r} != record {self.patient_id!r}"
                )
            if prev is not None and ev.date < prev:
                raise ValueError(f"events of {self.patient_id!r} are not date-sorted")
            prev = ev.date

    @property
    def first_event_date(self) -> date | None:
        return self.events[0].date if self.events else None

    @property
    def last_event_date(self) -> date | None:
        return self.events[-1].date if self.events else None

    def events_on_or_before(self, as_of: date) -> tuple[ClaimEvent, ...]:
        # events are sorted, so a linear scan from the back would also work;
        # slicing via bisect keeps it O(log n)
        import bisect

        idx = bisect.bisect_right([e.date for e in self.events], as_of)
        return self.events[:idx]

    def has_any_concept(self, concepts: frozenset[int]) -> bool:
        return any(e.concept_id in concepts for e in self.events)


@dataclass(frozen=True)
class RejectedRow:
    """One quarantined input row: kept out of records but never dropped silently."""

    line_no: int
    patient_id: str
    concept_id: int
    date: date
    reason: str


@dataclass(frozen=True)
class Demographics:
    birth_date: date
    sex: Sex
    race: Race


def load_patients(path: str | Path) -> dict[str, Demographics]:
    """Load the patients CSV (``patient_id,birth_date,sex,race``)."""
    out: dict[str, Demographics] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for line_no, row in enumerate(reader, start=2):
            try:
                birth = date.fromisoformat(row["birth_date"])
                sex = Sex(row["sex"])
                race = Race(row["race"]) if row.get("race") else Race.UNREPORTED
            except (KeyError, ValueError) as exc:
                raise ClaimsFormatError(f"{path}:{line_no}: {exc}") from exc
            out[row["patient_id"]] = Demographics(birth, sex, race)
    return out


_DEFAULT_DEMOGRAPHICS = Demographics(DATE_MIN, Sex.UNKNOWN, Race.UNREPORTED)


def load_claims(
    path: str | Path,
    vocabulary: Vocabulary,
    patients: dict[str, Demographics] | None = None,
) -> tuple[list[PatientRecord], list[RejectedRow]]:
    """Load a claims CSV into per-patient records.

    Unknown concept_ids are quarantined into the rejection report rather than
    silently dropped or treated as fatal; real claims feeds routinely contain
    codes outside any vocabulary snapshot. Malformed rows and unparsable
    dates raise :class:`ClaimsFormatError` with the line number. An empty
    file yields an empty list. Duplicate rows are retained (claims
    legitimately repeat).
    """
    patients = patients or {}
    events_by_patient: dict[str, list[ClaimEvent]] = {}
    rejected: list[RejectedRow] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return [], []
        for line_no, row in enumerate(reader, start=2):
            try:
                pid = row["patient_id"]
                concept_id = int(row["concept_id"])
                when = date.fromisoformat(row["date"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ClaimsFormatError(f"{path}:{line_no}: malformed row: {exc}") from exc
            if pid is None or pid == "":
                raise ClaimsFormatError(f"{path}:{line_no}: empty patient_id")
            if concept_id not in vocabulary:
                rejected.append(
                    RejectedRow(line_no, pid, concept_id, when, "unknown_concept")
                )
                events_by_patient.setdefault(pid, [])
                continue
            try:
                ev = ClaimEvent(pid, concept_id, when)
            except ClaimsFormatError as exc:
                raise ClaimsFormatError(f"{path}:{line_no}: {exc}") from exc
            events_by_patient.setdefault(pid, []).append(ev)

    records = []
    for pid in sorted(events_by_patient):
        demo = patients.get(pid, _DEFAULT_DEMOGRAPHICS)
        events = tuple(sorted(events_by_patient[pid], key=lambda e: (e.date, e.concept_id)))
        records.append(
            PatientRecord(
                patient_id=pid,
                birth_date=demo.birth_date,
                sex=demo.sex,
                race=demo.race,
                events=events,
            )
        )
    return records, rejected


def write_claims(records: list[PatientRecord], vocabulary: Vocabulary, path: str | Path) -> None:
    """Write records back to the canonical claims CSV form.

    Canonical form: patients sorted by id, events sorted by (date,
    concept_id), normalized column order, ISO dates.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "concept_id", "domain", "date"])
        for rec in sorted(records, key=lambda r: r.patient_id):
            for ev in rec.events:
                concept = vocabulary.get(ev.concept_id)
                domain = concept.domain.value if concept else ""
                writer.writerow([ev.patient_id, ev.concept_id, domain, ev.date.isoformat()])


def write_patients(records: list[PatientRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "birth_date", "sex", "race"])
        for rec in sorted(records, key=lambda r: r.patient_id):
            writer.writerow(
                [rec.patient_id, rec.birth_date.isoformat(), rec.sex.value, rec.race.value]
            )


def age_years(birth_date: date, on: date) -> int:
    """Age in whole years on a given day, floored."""
    return int((on - birth_date).days / 365.25)
