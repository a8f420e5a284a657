"""Concept vocabulary, outcome labels, and code-role configuration.

The code-role config is a sectioned key/value text file (INI syntax). Each
section except ``[settings]`` and ``[history_codes]`` defines one named code
set with a role, an optional outcome, optional gestation lookback bounds, and
a concept-id list.
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class ConfigError(ValueError):
    """Raised when a vocabulary or code-role config file is invalid."""


class Domain(str, Enum):
    CONDITION = "condition"
    DRUG = "drug"
    PROCEDURE = "procedure"
    SPECIALTY = "specialty"
    LAB = "lab"
    OBSERVATION = "observation"
    DEMOGRAPHIC = "demographic"


class RiskLabel(int, Enum):
    """Complication-risk class: no complication, gestational HT, gestational DB."""

    NONE = 0
    GHT = 1
    GDB = 2


class EpisodeOutcome(str, Enum):
    """Outcome attached to an inferred gestational episode."""

    LIVE_BIRTH = "live_birth"
    NICU = "NICU"
    HPPE = "HPPE"
    PRETERM = "preterm"
    GESTATIONAL_HT = "gestational_HT"
    GESTATIONAL_DB = "gestational_DB"


# Episode outcomes that map onto a risk class.
RISK_BY_OUTCOME = {
    EpisodeOutcome.GESTATIONAL_HT: RiskLabel.GHT,
    EpisodeOutcome.GESTATIONAL_DB: RiskLabel.GDB,
}


class CodeRole(str, Enum):
    PREGNANCY_START_ANCHOR = "pregnancy_start_anchor"
    PREGNANCY_OUTCOME_ANCHOR = "pregnancy_outcome_anchor"
    COMPLICATION_TARGET = "complication_target"


@dataclass(frozen=True)
class ConceptCode:
    concept_id: int
    domain: Domain
    description: str

    def __post_init__(self):
        if self.concept_id <= 0:
            raise ConfigError(f"concept_id must be positive, got {self.concept_id}")


class Vocabulary:
    """Immutable concept_id -> ConceptCode lookup."""

    def __init__(self, concepts: list[ConceptCode]):
        self._by_id: dict[int, ConceptCode] = {}
        for c in concepts:
            if c.concept_id in self._by_id:
                raise ConfigError(f"duplicate concept_id {c.concept_id} in vocabulary")
            self._by_id[c.concept_id] = c

    def __contains__(self, concept_id: int) -> bool:
        return concept_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def get(self, concept_id: int) -> ConceptCode | None:
        return self._by_id.get(concept_id)

    def __getitem__(self, concept_id: int) -> ConceptCode:
        return self._by_id[concept_id]

    def concept_ids(self) -> list[int]:
        return sorted(self._by_id)


def load_vocabulary(path: str | Path) -> Vocabulary:
    """Load a vocabulary CSV with header ``concept_id,domain,description``."""
    concepts = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for line_no, row in enumerate(reader, start=2):
            try:
                concept_id = int(row["concept_id"])
                domain = Domain(row["domain"])
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{path}:{line_no}: bad vocabulary row: {exc}") from exc
            concepts.append(ConceptCode(concept_id, domain, row.get("description", "")))
    return Vocabulary(concepts)


def write_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["concept_id", "domain", "description"])
        for cid in vocab.concept_ids():
            c = vocab[cid]
            writer.writerow([c.concept_id, c.domain.value, c.description])


@dataclass(frozen=True)
class CodeRoleSet:
    """A named concept set with a pipeline role.

    ``g_min_days``/``g_max_days`` bound the backward search for a pregnancy
    start code and are required for outcome anchors. ``second_pass`` marks
    complication targets that also update the episode outcome during cohort
    construction.
    """

    name: str
    role: CodeRole
    concept_ids: frozenset[int]
    outcome: EpisodeOutcome | None = None
    g_min_days: int | None = None
    g_max_days: int | None = None
    second_pass: bool = False

    def __post_init__(self):
        if not self.concept_ids:
            raise ConfigError(f"code set '{self.name}' has an empty concept list")
        if self.role == CodeRole.PREGNANCY_OUTCOME_ANCHOR:
            if self.g_min_days is None or self.g_max_days is None:
                raise ConfigError(
                    f"outcome anchor set '{self.name}' is missing gestation bounds "
                    "(g_min_days/g_max_days)"
                )
            if self.outcome is None:
                raise ConfigError(f"outcome anchor set '{self.name}' has no outcome")
        if self.g_min_days is not None and self.g_max_days is not None:
            if self.g_min_days < 0 or not self.g_min_days < self.g_max_days:
                raise ConfigError(
                    f"code set '{self.name}': requires 0 <= g_min_days < g_max_days, "
                    f"got {self.g_min_days}/{self.g_max_days}"
                )
        if self.role == CodeRole.COMPLICATION_TARGET and self.outcome is None:
            raise ConfigError(f"complication target set '{self.name}' has no outcome")


DEFAULT_SEVERITY_ORDER = (
    EpisodeOutcome.NICU,
    EpisodeOutcome.HPPE,
    EpisodeOutcome.PRETERM,
    EpisodeOutcome.GESTATIONAL_DB,
    EpisodeOutcome.GESTATIONAL_HT,
    EpisodeOutcome.LIVE_BIRTH,
)


@dataclass(frozen=True)
class CodeRoleConfig:
    """Parsed code-role configuration: all sets plus tie-break metadata."""

    sets: tuple[CodeRoleSet, ...]
    severity_order: tuple[EpisodeOutcome, ...] = DEFAULT_SEVERITY_ORDER
    db_history_codes: frozenset[int] = field(default_factory=frozenset)
    ht_history_codes: frozenset[int] = field(default_factory=frozenset)

    def by_role(self, role: CodeRole) -> list[CodeRoleSet]:
        return [s for s in self.sets if s.role == role]

    @property
    def start_anchor_concepts(self) -> frozenset[int]:
        ids: set[int] = set()
        for s in self.by_role(CodeRole.PREGNANCY_START_ANCHOR):
            ids |= s.concept_ids
        return frozenset(ids)

    @property
    def outcome_anchor_concepts(self) -> frozenset[int]:
        ids: set[int] = set()
        for s in self.by_role(CodeRole.PREGNANCY_OUTCOME_ANCHOR):
            ids |= s.concept_ids
        return frozenset(ids)

    @property
    def anchor_concepts(self) -> frozenset[int]:
        return self.start_anchor_concepts | self.outcome_anchor_concepts

    def second_pass_sets(self) -> list[CodeRoleSet]:
        return [
            s
            for s in self.by_role(CodeRole.COMPLICATION_TARGET)
            if s.second_pass
        ]

    def targets_for_outcome(self, outcome: EpisodeOutcome) -> frozenset[int]:
        ids: set[int] = set()
        for s in self.by_role(CodeRole.COMPLICATION_TARGET):
            if s.outcome == outcome:
                ids |= s.concept_ids
        return frozenset(ids)

    @property
    def complication_concepts(self) -> frozenset[int]:
        ids: set[int] = set()
        for s in self.by_role(CodeRole.COMPLICATION_TARGET):
            ids |= s.concept_ids
        return frozenset(ids)

    def severity_rank(self, outcome: EpisodeOutcome) -> int:
        try:
            return self.severity_order.index(outcome)
        except ValueError:
            return len(self.severity_order)


def _parse_concept_ids(raw: str, set_name: str) -> frozenset[int]:
    ids = set()
    for tok in raw.replace(",", " ").split():
        try:
            ids.add(int(tok))
        except ValueError as exc:
            raise ConfigError(f"code set '{set_name}': bad concept id '{tok}'") from exc
    return frozenset(ids)


def load_code_roles(path: str | Path) -> CodeRoleConfig:
    """Parse a code-role config file into a :class:`CodeRoleConfig`.

    Raises :class:`ConfigError` naming the offending set on any invariant
    violation (missing bounds, empty sets, bad enum values).
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read code-role config at {path}")

    severity = DEFAULT_SEVERITY_ORDER
    if parser.has_section("settings") and parser.has_option("settings", "severity_order"):
        names = parser.get("settings", "severity_order").replace(",", " ").split()
        try:
            severity = tuple(EpisodeOutcome(n) for n in names)
        except ValueError as exc:
            raise ConfigError(f"settings.severity_order: {exc}") from exc

    db_codes: frozenset[int] = frozenset()
    ht_codes: frozenset[int] = frozenset()
    if parser.has_section("history_codes"):
        if parser.has_option("history_codes", "db"):
            db_codes = _parse_concept_ids(parser.get("history_codes", "db"), "history_codes.db")
        if parser.has_option("history_codes", "ht"):
            ht_codes = _parse_concept_ids(parser.get("history_codes", "ht"), "history_codes.ht")

    sets = []
    for section in parser.sections():
        if section in ("settings", "history_codes"):
            continue
        opts = parser[section]
        try:
            role = CodeRole(opts.get("role", ""))
        except ValueError as exc:
            raise ConfigError(f"code set '{section}': unknown role '{opts.get('role')}'") from exc
        outcome = None
        if opts.get("outcome"):
            try:
                outcome = EpisodeOutcome(opts["outcome"])
            except ValueError as exc:
                raise ConfigError(f"code set '{section}': unknown outcome '{opts['outcome']}'") from exc

        def _int_or_none(key: str) -> int | None:
            raw = opts.get(key)
            return int(raw) if raw not in (None, "") else None

        sets.append(
            CodeRoleSet(
                name=section,
                role=role,
                concept_ids=_parse_concept_ids(opts.get("concept_ids", ""), section),
                outcome=outcome,
                g_min_days=_int_or_none("g_min_days"),
                g_max_days=_int_or_none("g_max_days"),
                second_pass=opts.getboolean("second_pass", fallback=False),
            )
        )
    if not sets:
        raise ConfigError(f"no code sets defined in {path}")
    return CodeRoleConfig(
        sets=tuple(sets),
        severity_order=severity,
        db_history_codes=db_codes,
        ht_history_codes=ht_codes,
    )
