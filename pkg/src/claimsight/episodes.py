"""Gestational-episode inference from anchor codes.

Two-pass inference over a patient's history: the latest outcome-anchor event
fixes the episode end and a provisional outcome, a backward search inside the
outcome's gestation bounds fixes the start, and a forward search against the
second-pass target sets may upgrade the outcome without moving either bound.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import date, timedelta
from enum import Enum

from .records import PatientRecord
from .vocab import (
    CodeRole,
    CodeRoleConfig,
    CodeRoleSet,
    EpisodeOutcome,
    RiskLabel,
)

FULL_TERM_DAYS = 280  # 40 weeks


class StartProvenance(str, Enum):
    BACKFILLED_40W = "backfilled_40w"
    FIRST_START_CODE = "first_start_code"


class EpisodeLabelError(ValueError):
    """Raised when an episode cannot be labeled under the requested rule."""


@dataclass(frozen=True)
class PregnancyEpisode:
    patient_id: str
    t_start: date
    t_end: date
    outcome: EpisodeOutcome
    start_provenance: StartProvenance
    second_pass_updated: bool = False

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(
                f"episode of {self.patient_id!r}: t_start {self.t_start} "
                f"must precede t_end {self.t_end}"
            )

    @property
    def gestation_days(self) -> int:
        return (self.t_end - self.t_start).days


def _latest_outcome_event(
    record: PatientRecord, roles: CodeRoleConfig
) -> tuple[date, CodeRoleSet] | None:
    anchor_sets = roles.by_role(CodeRole.PREGNANCY_OUTCOME_ANCHOR)
    best: tuple[date, int, CodeRoleSet] | None = None
    for ev in record.events:
        for s in anchor_sets:
            if ev.concept_id in s.concept_ids:
                rank = roles.severity_rank(s.outcome)
                # latest date wins; same-day ties break to highest severity
                if best is None or ev.date > best[0] or (ev.date == best[0] and rank < best[1]):
                    best = (ev.date, rank, s)
    if best is None:
        return None
    return best[0], best[2]


def infer_latest_episode(
    record: PatientRecord, roles: CodeRoleConfig
) -> PregnancyEpisode | None:
    """Infer the most recent pregnancy episode, or None when no episode is
    supported by the anchors.

    Returns None when either no outcome anchor exists or no start-anchor
    event falls inside the outcome's lookback window; a start-like code
    alone never indicates a pregnancy.
    """
    found = _latest_outcome_event(record, roles)
    if found is None:
        return None
    t_out, outcome_set = found

    lo = t_out - timedelta(days=outcome_set.g_max_days)
    hi = t_out - timedelta(days=outcome_set.g_min_days)
    start_concepts = roles.start_anchor_concepts
    t_start: date | None = None
    for ev in record.events:
        if ev.concept_id in start_concepts and lo <= ev.date <= hi:
            t_start = ev.date
            break  # events sorted: first hit is the earliest in-window code
    if t_start is None:
        return None

    # second pass: forward search inside the episode against target sets;
    # the latest-dated match wins, and only the outcome is relabeled
    outcome = outcome_set.outcome
    updated = False
    best_date: date | None = None
    for s in roles.second_pass_sets():
        for ev in record.events:
            if ev.concept_id in s.concept_ids and t_start <= ev.date <= t_out:
                if best_date is None or ev.date >= best_date:
                    best_date = ev.date
                    outcome = s.outcome
                    updated = True
    return PregnancyEpisode(
        patient_id=record.patient_id,
        t_start=t_start,
        t_end=t_out,
        outcome=outcome,
        start_provenance=StartProvenance.FIRST_START_CODE,
        second_pass_updated=updated,
    )


def label_episode_bounds(episode: PregnancyEpisode, complicated: bool) -> PregnancyEpisode:
    """Fix the episode start used for sampling and labeling.

    Uncomplicated episodes assume a full-term pregnancy and backfill the
    start to 40 weeks before the end date. Complicated episodes keep the
    first observed start-code date, which must already be present.
    """
    if not complicated:
        return replace(
            episode,
            t_start=episode.t_end - timedelta(days=FULL_TERM_DAYS),
            start_provenance=StartProvenance.BACKFILLED_40W,
        )
    if episode.start_provenance != StartProvenance.FIRST_START_CODE:
        raise EpisodeLabelError(
            f"episode of {episode.patient_id!r} is complicated but carries no "
            "start-code date"
        )
    return episode


def episode_is_complicated(record: PatientRecord, episode: PregnancyEpisode, roles: CodeRoleConfig) -> bool:
    """True when any complication-target code occurs inside the episode."""
    targets = roles.complication_concepts
    return any(
        ev.concept_id in targets and episode.t_start <= ev.date <= episode.t_end
        for ev in record.events
    )


def risk_label_for(
    record: PatientRecord, episode: PregnancyEpisode, roles: CodeRoleConfig
) -> RiskLabel | None:
    """Risk class of an episode, or None when it carries complications
    outside the two triage targets and must be excluded from the risk
    dataset.

    GDB takes precedence when both target-code families appear.
    """
    ght_codes = roles.targets_for_outcome(EpisodeOutcome.GESTATIONAL_HT)
    gdb_codes = roles.targets_for_outcome(EpisodeOutcome.GESTATIONAL_DB)
    has_ght = has_gdb = False
    other = False
    other_codes = roles.complication_concepts - ght_codes - gdb_codes
    for ev in record.events:
        if not (episode.t_start <= ev.date <= episode.t_end):
            continue
        if ev.concept_id in gdb_codes:
            has_gdb = True
        elif ev.concept_id in ght_codes:
            has_ght = True
        elif ev.concept_id in other_codes:
            other = True
    if has_gdb:
        return RiskLabel.GDB
    if has_ght:
        return RiskLabel.GHT
    if other:
        return None  # complicated, but not by a triage target
    return RiskLabel.NONE
